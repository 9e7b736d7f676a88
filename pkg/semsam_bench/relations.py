"""Ground-truth spatial relations between annotated structures.

Anatomical terms use the patient frame (patient left/right); colloquial terms
use the screen (viewer left/right, y grows downwards, earlier/later slice).
"""

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from nibabel.orientations import aff2axcodes
from scipy import ndimage

from .errors import ArtifactIOError, ValidationError
from .logging import get_logger
from .models import OrientationMode, SliceDirection
from .volume import FrameLayout, LabelMap, isolate_slice, layout_codes

logger = get_logger("relations")

PATIENT_AXES = ("R", "A", "S")
IMAGE_AXES = ("x", "y", "slice")

DEFAULT_MARGIN = 3.0


class Vocabulary(Enum):
    ANATOMICAL = "anatomical"
    COLLOQUIAL = "colloquial"


class RelationTerm(Enum):
    SUPERIOR = "superior"
    INFERIOR = "inferior"
    ANTERIOR = "anterior"
    POSTERIOR = "posterior"
    LEFT = "left"
    RIGHT = "right"
    ABOVE = "above"
    BELOW = "below"
    LEFT_OF = "left-of"
    RIGHT_OF = "right-of"
    IN_FRONT_OF = "in-front-of"
    BEHIND = "behind"

    @property
    def vocabulary(self) -> Vocabulary:
        if self in _ANATOMICAL_AXIS:
            return Vocabulary.ANATOMICAL
        return Vocabulary.COLLOQUIAL

    @property
    def opposite(self) -> 'RelationTerm':
        return _OPPOSITES[self]


_OPPOSITES = {
    RelationTerm.SUPERIOR: RelationTerm.INFERIOR,
    RelationTerm.ANTERIOR: RelationTerm.POSTERIOR,
    RelationTerm.RIGHT: RelationTerm.LEFT,
    RelationTerm.ABOVE: RelationTerm.BELOW,
    RelationTerm.RIGHT_OF: RelationTerm.LEFT_OF,
    RelationTerm.IN_FRONT_OF: RelationTerm.BEHIND,
}
_OPPOSITES.update({v: k for k, v in list(_OPPOSITES.items())})

# anatomical term -> (patient axis, sign of the A-minus-B difference)
_ANATOMICAL_AXIS = {
    RelationTerm.RIGHT: ("R", 1), RelationTerm.LEFT: ("R", -1),
    RelationTerm.ANTERIOR: ("A", 1), RelationTerm.POSTERIOR: ("A", -1),
    RelationTerm.SUPERIOR: ("S", 1), RelationTerm.INFERIOR: ("S", -1),
}
_ANATOMICAL_TERM = {value: term for term, value in _ANATOMICAL_AXIS.items()}

# colloquial term -> (image axis, sign of the A-minus-B difference); y grows downwards
_COLLOQUIAL_AXIS = {
    RelationTerm.RIGHT_OF: ("x", 1), RelationTerm.LEFT_OF: ("x", -1),
    RelationTerm.BELOW: ("y", 1), RelationTerm.ABOVE: ("y", -1),
    RelationTerm.BEHIND: ("slice", 1), RelationTerm.IN_FRONT_OF: ("slice", -1),
}
_COLLOQUIAL_TERM = {value: term for term, value in _COLLOQUIAL_AXIS.items()}

_CODE_VECTORS = {
    "R": (0, 1), "L": (0, -1),
    "A": (1, 1), "P": (1, -1),
    "S": (2, 1), "I": (2, -1),
}


def term_axis(term: RelationTerm) -> Tuple[str, int]:
    """(axis, sign) a term compares along: a patient axis or an image axis."""
    if term.vocabulary == Vocabulary.ANATOMICAL:
        return _ANATOMICAL_AXIS[term]
    return _COLLOQUIAL_AXIS[term]


@dataclass(frozen=True)
class StructureAnnotation:
    """Tight bounding box and centroid of one labeled structure.

    ``bbox`` and ``centroid`` are in storage voxel indices; ``ras_centroid``
    is the centroid measured along +R, +A, +S in voxels.
    """
    label_id: int
    name: str
    bbox: Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]
    centroid: Tuple[float, float, float]
    ras_centroid: Tuple[float, float, float]
    source: str = "mask"
    voxel_count: int = 0

    def __post_init__(self):
        for axis, (low, high) in enumerate(self.bbox):
            if low > high:
                raise ValidationError(f"bbox min > max on axis {axis}", field_name="bbox")
            if not low - 1e-6 <= self.centroid[axis] <= high + 1e-6:
                raise ValidationError(f"centroid outside bbox on axis {axis}", field_name="centroid")
        if self.source not in ("mask", "bbox"):
            raise ValidationError(f"unknown annotation source {self.source!r}", field_name="source")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label_id": self.label_id,
            "name": self.name,
            "bbox": [list(b) for b in self.bbox],
            "centroid": list(self.centroid),
            "ras_centroid": list(self.ras_centroid),
            "source": self.source,
        }


def to_ras(point: np.ndarray, affine: np.ndarray, dims: Tuple[int, int, int]) -> Tuple[float, float, float]:
    """Voxel coordinates re-expressed along +R, +A, +S (signed axis permutation)."""
    codes = tuple(aff2axcodes(affine))
    ras = [0.0, 0.0, 0.0]
    for storage_axis, code in enumerate(codes):
        patient_axis, sign = _CODE_VECTORS[code]
        value = float(point[storage_axis])
        ras[patient_axis] = value if sign > 0 else dims[storage_axis] - 1 - value
    return tuple(ras)


def annotation_from_bbox(
    label_id: int,
    name: str,
    bbox: Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]],
    affine: np.ndarray,
    dims: Tuple[int, int, int]
) -> StructureAnnotation:
    """Annotation for a structure known only by its box; centroid = box center."""
    center = np.array([(low + high) / 2.0 for low, high in bbox])
    return StructureAnnotation(
        label_id=label_id, name=name, bbox=tuple(tuple(b) for b in bbox),
        centroid=tuple(float(c) for c in center), ras_centroid=to_ras(center, affine, dims),
        source="bbox",
    )


def annotate_structures(lm: LabelMap) -> List[StructureAnnotation]:
    """One annotation per nonzero label present, ordered by label id."""
    labels = lm.labels
    present = np.unique(labels)
    present = present[present > 0]
    if present.size == 0:
        return []

    boxes = ndimage.find_objects(labels, max_label=int(present[-1]))
    counts = ndimage.sum_labels(np.ones(labels.shape), labels, present)
    centroids = ndimage.center_of_mass(np.ones(labels.shape), labels, present)

    annotations = []
    for label_id, count, centroid in zip(present, counts, centroids):
        box = boxes[label_id - 1]
        annotations.append(StructureAnnotation(
            label_id=int(label_id),
            name=lm.name_of(int(label_id)),
            bbox=tuple((s.start, s.stop - 1) for s in box),
            centroid=tuple(float(c) for c in centroid),
            ras_centroid=to_ras(np.asarray(centroid), lm.affine, lm.dims),
            voxel_count=int(count),
        ))
    return annotations


def annotate_slice(lm: LabelMap, layout: FrameLayout, index: int) -> List[StructureAnnotation]:
    """Annotations of the structures cut by frame ``index`` of ``layout``.

    Centroids along the slice axis all equal the frame position, so only
    in-plane relations are determinate.
    """
    return annotate_structures(isolate_slice(lm, layout, index))


def anatomical_relation(
    a: StructureAnnotation,
    b: StructureAnnotation,
    axis: str,
    margin: float = DEFAULT_MARGIN
) -> Optional[RelationTerm]:
    """Where A lies relative to B along patient axis ``axis`` ('R', 'A' or 'S').

    ``None`` when the centroids are less than ``margin`` voxels apart.
    """
    index = PATIENT_AXES.index(axis)
    delta = a.ras_centroid[index] - b.ras_centroid[index]
    if delta == 0 or abs(delta) < margin:
        return None
    return _ANATOMICAL_TERM[(axis, 1 if delta > 0 else -1)]


@dataclass(frozen=True, eq=False)
class FrameMapping:
    """Signed permutation taking patient (R, A, S) differences to image
    (x right, y down, slice index) differences. Rows are image axes.
    """
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.int64)
        if m.shape != (3, 3) or not np.isin(m, (-1, 0, 1)).all():
            raise ValidationError("frame mapping must be a 3x3 matrix of -1/0/1", field_name="matrix")
        if not (np.count_nonzero(m, axis=0) == 1).all() or not (np.count_nonzero(m, axis=1) == 1).all():
            raise ValidationError("frame mapping needs one nonzero per row and column", field_name="matrix")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_codes(cls, codes: Tuple[str, str, str]) -> 'FrameMapping':
        """From layout codes (rows, columns, slice order)."""
        rows, cols, slices = codes
        matrix = np.zeros((3, 3), dtype=np.int64)
        for image_axis, code in enumerate((cols, rows, slices)):
            patient_axis, sign = _CODE_VECTORS[code]
            matrix[image_axis, patient_axis] = sign
        return cls(matrix)

    @classmethod
    def from_layout(cls, layout: FrameLayout) -> 'FrameMapping':
        return cls.from_codes(layout.codes)

    def apply(self, ras_delta: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(ras_delta, dtype=np.float64)

    def preimage(self, image_axis: str) -> Tuple[str, int]:
        """Patient axis (and sign) that the image axis measures."""
        row = self.matrix[IMAGE_AXES.index(image_axis)]
        patient = int(np.flatnonzero(row)[0])
        return PATIENT_AXES[patient], int(row[patient])

    def image_axis_of(self, patient_axis: str) -> Tuple[str, int]:
        column = self.matrix[:, PATIENT_AXES.index(patient_axis)]
        image = int(np.flatnonzero(column)[0])
        return IMAGE_AXES[image], int(column[image])

    def to_colloquial(self, term: RelationTerm) -> RelationTerm:
        """Screen term equivalent to an anatomical term under this mapping."""
        patient_axis, sign = _ANATOMICAL_AXIS[term]
        image_axis, flip = self.image_axis_of(patient_axis)
        return _COLLOQUIAL_TERM[(image_axis, sign * flip)]

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": list(IMAGE_AXES), "columns": list(PATIENT_AXES), "matrix": self.matrix.tolist()}


def frame_mapping(
    direction: SliceDirection,
    mode: OrientationMode,
    storage_codes: Tuple[str, str, str] = ("L", "P", "I")
) -> FrameMapping:
    return FrameMapping.from_codes(layout_codes(direction, mode, storage_codes))


def colloquial_relation(
    a: StructureAnnotation,
    b: StructureAnnotation,
    mapping: FrameMapping,
    image_axis: str,
    margin: float = DEFAULT_MARGIN
) -> Optional[RelationTerm]:
    """Where A appears relative to B on screen along ``image_axis``.

    Smaller y is higher on screen; a smaller slice index is earlier in the
    sequence. ``None`` when closer than ``margin`` voxels.
    """
    delta_ras = np.subtract(a.ras_centroid, b.ras_centroid)
    delta = float(mapping.apply(delta_ras)[IMAGE_AXES.index(image_axis)])
    if delta == 0 or abs(delta) < margin:
        return None
    return _COLLOQUIAL_TERM[(image_axis, 1 if delta > 0 else -1)]


def export_conventions(
    path: Union[str, Path],
    storage_codes: Tuple[str, str, str] = ("L", "P", "I"),
    phrases: Optional[Dict[str, str]] = None
) -> Dict[str, Any]:
    """Write the term tables and the frame mappings of every direction/mode."""
    mappings = {}
    for direction in SliceDirection:
        for mode in OrientationMode:
            codes = layout_codes(direction, mode, storage_codes)
            mappings[f"{direction.value}/{mode.value}"] = {
                "layout_codes": {"rows": codes[0], "columns": codes[1], "slices": codes[2]},
                **FrameMapping.from_codes(codes).to_dict(),
            }

    document = {
        "storage_codes": list(storage_codes),
        "terms": {
            vocabulary.value: {
                term.value: {
                    "opposite": term.opposite.value,
                    "axis": term_axis(term)[0],
                    "sign": term_axis(term)[1],
                }
                for term in RelationTerm if term.vocabulary == vocabulary
            }
            for vocabulary in Vocabulary
        },
        "colloquial_left_right": "viewer",
        "anatomical_left_right": "patient",
        "mappings": mappings,
        "phrases": phrases or {},
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)
    logger.log_artifact("Exported relation conventions", "conventions", str(path))
    return document
