"""Independent answer-key checker for generated items.

Keys are re-derived in world coordinates (mm) from raw voxel indices and the
affine, without the annotation or frame-mapping code used by the generator.
"""

from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .generator import QuestionTemplates
from .logging import LogCategory, get_logger
from .models import CategoryTag, Medium, QAItem, QuestionType, SliceDirection, TargetType
from .volume import LabelMap, resample_mpr

logger = get_logger("validation")

_WORLD_UNIT = {
    "R": (1.0, 0.0, 0.0), "L": (-1.0, 0.0, 0.0),
    "A": (0.0, 1.0, 0.0), "P": (0.0, -1.0, 0.0),
    "S": (0.0, 0.0, 1.0), "I": (0.0, 0.0, -1.0),
}

# (axis, sign of A - B) -> term
_ANATOMICAL = {
    ("R", 1): "right", ("R", -1): "left",
    ("A", 1): "anterior", ("A", -1): "posterior",
    ("S", 1): "superior", ("S", -1): "inferior",
}
_SCREEN = {
    ("x", 1): "right-of", ("x", -1): "left-of",
    ("y", 1): "below", ("y", -1): "above",
    ("slice", 1): "behind", ("slice", -1): "in-front-of",
}
_NEGATION = {}
for _table in (_ANATOMICAL, _SCREEN):
    for (_axis, _sign), _term in _table.items():
        _NEGATION[_term] = _table[(_axis, -_sign)]

# layout code position of each screen axis: codes are (rows, columns, slices)
_SCREEN_CODE_INDEX = {"x": 1, "y": 0, "slice": 2}
_PLANE_OF_CODE = {
    "S": SliceDirection.AXIAL, "I": SliceDirection.AXIAL,
    "A": SliceDirection.CORONAL, "P": SliceDirection.CORONAL,
    "R": SliceDirection.SAGITTAL, "L": SliceDirection.SAGITTAL,
}


class ValidationResult:
    """Container for validation results with errors and warnings."""

    def __init__(self):
        self.is_valid: bool = True
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def add_error(self, message: str):
        self.errors.append(message)
        self.is_valid = False

    def add_warning(self, message: str):
        self.warnings.append(message)

    def merge(self, other: 'ValidationResult'):
        self.errors.extend(other.errors)
        self.warnings.extend(other.warnings)
        if not other.is_valid:
            self.is_valid = False

    def __str__(self) -> str:
        result = f"Valid: {self.is_valid}"
        if self.errors:
            result += f"\nErrors: {', '.join(self.errors)}"
        if self.warnings:
            result += f"\nWarnings: {', '.join(self.warnings)}"
        return result


class AnswerKeyChecker:
    """Re-derives answer keys from a label map and each item's parameters.

    ``labelmap`` is the map the items were generated from, before any
    reorientation; pass ``isotropic_spacing`` when generation resampled it.
    """

    def __init__(
        self,
        labelmap: LabelMap,
        templates: Optional[QuestionTemplates] = None,
        isotropic_spacing: Optional[float] = None
    ):
        if isotropic_spacing is not None:
            labelmap = resample_mpr(labelmap, SliceDirection.AXIAL, (isotropic_spacing,) * 3)
        self.labelmap = labelmap
        self.templates = templates or QuestionTemplates.load()
        self._points: Dict[int, np.ndarray] = {}

    def world_points(self, label_id: int) -> np.ndarray:
        """World coordinates (N, 3) of every voxel carrying ``label_id``."""
        if label_id not in self._points:
            index = np.argwhere(self.labelmap.labels == label_id).astype(np.float64)
            affine = self.labelmap.affine
            self._points[label_id] = index @ affine[:3, :3].T + affine[:3, 3]
        return self._points[label_id]

    def centroid(self, label_id: int, params: Dict) -> Optional[np.ndarray]:
        """World centroid, restricted to the shown slice for 2-D media."""
        points = self.world_points(label_id)
        if params.get("medium") == Medium.SLICE_2D.value:
            axis = "RAS".index(params["slice_axis"])
            half = params["slice_thickness_mm"] / 2.0
            points = points[np.abs(points[:, axis] - params["slice_position_mm"]) < half]
        if points.shape[0] == 0:
            return None
        return points.mean(axis=0)

    def relation_term(self, item: QAItem) -> Tuple[Optional[str], Optional[str]]:
        """(term, problem) for a relation item; ``term`` is None on a problem."""
        params = item.params
        a_id, b_id = params["structures"]
        a, b = self.centroid(a_id, params), self.centroid(b_id, params)
        if a is None or b is None:
            return None, f"structure missing from the shown media ({a_id}, {b_id})"
        delta = a - b
        axis = params["axis"]
        if item.target_type == TargetType.RELATION_ANATOMICAL:
            value = float(delta["RAS".index(axis)])
            table = _ANATOMICAL
        else:
            code = params["layout_codes"][_SCREEN_CODE_INDEX[axis]]
            value = float(np.dot(delta, _WORLD_UNIT[code]))
            table = _SCREEN
        if value == 0.0:
            return None, f"structures {a_id} and {b_id} coincide along {axis}"
        return table[(axis, 1 if value > 0 else -1)], None

    def expected_truth(self, item: QAItem) -> Tuple[Optional[str], Optional[str]]:
        """The correct open answer, or the asserted-claim reference for closed items."""
        params = item.params
        if item.target_type.is_relation:
            return self.relation_term(item)
        if item.target_type == TargetType.SLICE_DIRECTION:
            return _PLANE_OF_CODE[params["layout_codes"][2]].value, None

        target = params["structures"][0]
        if self.centroid(target, params) is None:
            return None, f"structure {target} missing from the shown media"
        if item.target_type == TargetType.STRUCTURE_NAME:
            return self.labelmap.name_of(target), None
        letters = [r.letter for r in item.prompt_records if r.label_id == target]
        if not letters and params.get("ablation") is None:
            return None, f"no prompt marks structure {target}"
        return (letters[0] if letters else None), None

    def check_item(self, item: QAItem) -> ValidationResult:
        result = ValidationResult()
        if not item.category_tags:
            result.add_error(f"{item.id}: no category tag")
        if (item.target_type.is_relation and item.params.get("ablation") is None
                and item.params.get("medium") == Medium.VOLUME_3D.value
                and CategoryTag.RQ1 not in item.category_tags):
            result.add_error(f"{item.id}: cross-slice relation item lacks RQ1")

        truth, problem = self.expected_truth(item)
        if problem is not None:
            result.add_error(f"{item.id}: {problem}")
            return result
        if truth is None:
            result.add_warning(f"{item.id}: answer not re-derivable without prompts")
            return result

        if item.question_type == QuestionType.OPEN:
            expected = self.templates.answers[truth] if item.target_type.is_relation else truth
        else:
            expected = str(item.params.get("asserted") == truth)
        if item.answer_key != expected:
            result.add_error(f"{item.id}: answer key {item.answer_key!r}, expected {expected!r}")
        if item.target_type.is_relation and item.params.get("relation") != truth:
            result.add_error(f"{item.id}: recorded relation {item.params.get('relation')!r}, derived {truth!r}")
        return result

    def check_negation_pairs(self, items: Sequence[QAItem]) -> ValidationResult:
        """closed_true / closed_inverted twins assert opposite claims with negated keys."""
        result = ValidationResult()
        groups: Dict[Tuple[str, Optional[str]], Dict[QuestionType, QAItem]] = defaultdict(dict)
        for item in items:
            if item.question_type != QuestionType.OPEN and "combo" in item.params:
                groups[(item.params["combo"], item.params.get("ablation"))][item.question_type] = item
        for (combo, _), pair in sorted(groups.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
            true_item = pair.get(QuestionType.CLOSED_TRUE)
            inverted = pair.get(QuestionType.CLOSED_INVERTED)
            if true_item is None or inverted is None:
                continue
            claim, counter = true_item.params.get("asserted"), inverted.params.get("asserted")
            if true_item.target_type.is_relation:
                paired = _NEGATION.get(claim) == counter
            else:
                paired = claim != counter
            if not paired or (true_item.answer_key, inverted.answer_key) != ("True", "False"):
                result.add_error(f"{combo}: closed twins {true_item.id}/{inverted.id} are not negations")
        return result

    def check_items(self, items: Sequence[QAItem]) -> ValidationResult:
        result = ValidationResult()
        for item in items:
            result.merge(self.check_item(item))
        result.merge(self.check_negation_pairs(items))
        logger.info("Checked answer keys", LogCategory.GENERATION,
                    {"items": len(items), "errors": len(result.errors), "warnings": len(result.warnings)})
        return result


def get_validation_summary(result: ValidationResult, items: int) -> Dict:
    return {
        "items": items,
        "valid": result.is_valid,
        "mismatches": len(result.errors),
        "warnings": len(result.warnings),
        "errors": list(result.errors),
    }
