"""Question-answer item generation over the benchmark parameter grid.

A parameter cell is (medium, slice direction, orientation mode, visual prompt
kind, text reference mode, target type). Each cell samples up to
``pairs_per_cell`` structure combinations without replacement and emits one
item per requested question type for every sampled combination, so closed
twins always share one relation. All randomness comes from a per-scan PCG64
generator.
"""

import hashlib
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .config import GenConfig
from .errors import ArtifactIOError, ConfigurationError, FormatError, ValidationError
from .logging import LogCategory, get_logger, performance_monitor
from .models import (
    Ablation, CategoryTag, Medium, OrientationMode, PromptRecord, QAItem, QuestionType, SliceDirection,
    TargetType, TextRefMode, VisualPromptKind
)
from .relations import (
    IMAGE_AXES, PATIENT_AXES, FrameMapping, RelationTerm, StructureAnnotation,
    anatomical_relation, annotate_slice, annotate_structures, colloquial_relation, term_axis
)
from .rendering import LETTERS, PALETTE, MediaManifest, color_name, media_file_names, overlay_for_label, render_media
from .volume import (
    FrameLayout, LabelMap, RenderFrame, Volume, axis_codes, extract_frames, frame_layout,
    label_frames, reorient_to_ras, resample_mpr, select_slice
)

logger = get_logger("generator")

DEFAULT_TEMPLATES = Path(__file__).parent / "data" / "templates.yaml"
DEFAULT_SCAN_ID = "scan"

_CODE_AXIS = {"R": (0, 1), "L": (0, -1), "A": (1, 1), "P": (1, -1), "S": (2, 1), "I": (2, -1)}


def derive_scan_seed(seed: int, scan_id: str) -> int:
    """``seed XOR u64(sha256(scan_id))`` so scans can run in any order."""
    digest = hashlib.sha256(scan_id.encode("utf-8")).digest()
    return seed ^ int.from_bytes(digest[:8], "little")


def _or_list(words: Sequence[str]) -> str:
    words = list(words)
    if len(words) == 1:
        return words[0]
    return ", ".join(words[:-1]) + " or " + words[-1]


@dataclass
class QuestionTemplates:
    """Question text, reference phrases and answer words, loaded from YAML."""
    instructions: Dict[str, str]
    media: Dict[str, str]
    references: Dict[str, str]
    answers: Dict[str, str]
    phrases: Dict[str, str]
    questions: Dict[str, Dict[str, str]]

    SECTIONS = ("instructions", "media", "references", "answers", "phrases", "questions")

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> 'QuestionTemplates':
        """Load and check a template file (the packaged one by default).

        Raises:
            ConfigurationError: unreadable file or a missing section/entry.
        """
        path = Path(path) if path else DEFAULT_TEMPLATES
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"cannot load templates {path}: {e}", config_key="templates_path", cause=e)
        if not isinstance(data, dict):
            raise ConfigurationError(f"templates {path} must be a mapping", config_key="templates_path")

        missing = [section for section in cls.SECTIONS if not isinstance(data.get(section), dict)]
        missing += [f"answers.{t.value}" for t in RelationTerm if t.value not in data.get("answers", {})]
        missing += [f"phrases.{t.value}" for t in RelationTerm if t.value not in data.get("phrases", {})]
        missing += [f"references.{r.value}" for r in TextRefMode if r.value not in data.get("references", {})]
        missing += [f"media.{m.value}" for m in Medium if m.value not in data.get("media", {})]
        for target in TargetType:
            for group in ("open", "closed"):
                if group not in (data.get("questions") or {}).get(target.value, {}):
                    missing.append(f"questions.{target.value}.{group}")
        if missing:
            raise ConfigurationError(f"templates {path} lack: {', '.join(missing)}", config_key="templates_path")
        return cls(**{section: data[section] for section in cls.SECTIONS})

    def question(self, target: TargetType, question_type: QuestionType, **fields: Any) -> str:
        group = "open" if question_type == QuestionType.OPEN else "closed"
        return f"{self.questions[target.value][group].format(**fields)} {self.instructions[group]}"


@dataclass(frozen=True)
class Marker:
    """Colour/letter pair assigned to one structure within an item."""
    label_id: int
    color_index: int

    @property
    def letter(self) -> str:
        return LETTERS[self.color_index]

    @property
    def color(self) -> str:
        return color_name(self.color_index)


@dataclass
class Scene:
    """What one (medium, direction, mode) shows: frames and visible structures."""
    medium: Medium
    layout: FrameLayout
    mapping: FrameMapping
    annotations: List[StructureAnnotation]
    frame_indices: List[int]
    frame_index: Optional[int] = None
    slice_params: Dict[str, Any] = field(default_factory=dict)

    @property
    def direction(self) -> SliceDirection:
        return self.layout.slice_direction

    def base_params(self) -> Dict[str, Any]:
        params = {
            "medium": self.medium.value,
            "slice_direction": self.layout.slice_direction.value,
            "orientation_mode": self.layout.orientation_mode.value,
            "layout_codes": list(self.layout.codes),
        }
        params.update(self.slice_params)
        return params


@dataclass
class CoverageReport:
    """Per-cell sampling outcome plus ablation skips and warnings."""
    scan_id: str
    seed: int
    cells: List[Dict[str, Any]] = field(default_factory=list)
    ablation_skips: List[Dict[str, Any]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    items: int = 0
    details: Dict[str, Any] = field(default_factory=dict)

    def record_cell(self, cell: Dict[str, Any], requested: int, available: int, emitted: int,
                    reason: Optional[str] = None) -> None:
        if reason is not None:
            status = "invalid"
        elif available == 0:
            status = "empty"
        elif emitted < requested:
            status = "short"
        else:
            status = "ok"
        entry = dict(cell, requested=requested, available=available, emitted=emitted, status=status)
        if reason is not None:
            entry["reason"] = reason
        self.cells.append(entry)

    def record_skip(self, item_id: str, ablation: Ablation, reason: str) -> None:
        self.ablation_skips.append({"item": item_id, "ablation": ablation.value, "reason": reason})

    @property
    def skipped_cells(self) -> int:
        return sum(1 for cell in self.cells if cell["status"] in ("invalid", "empty"))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scan_id": self.scan_id,
            "seed": self.seed,
            "items": self.items,
            "cells": self.cells,
            "ablation_skips": self.ablation_skips,
            "warnings": self.warnings,
            **self.details,
        }

    def save(self, path: Union[str, Path]) -> None:
        _write_json(path, self.to_dict())
        logger.log_artifact("Saved coverage report", "coverage", str(path), cells=len(self.cells))


def _write_json(path: Union[str, Path], document: Any) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)


def cell_invalid_reason(vp: VisualPromptKind, ref: TextRefMode, target: TargetType) -> Optional[str]:
    """Why a (prompt kind, reference mode, target) cell cannot be asked, if so."""
    if ref != TextRefMode.NAME and vp == VisualPromptKind.NONE:
        return "colour and letter references need visual prompts"
    if target == TargetType.STRUCTURE_NAME and ref == TextRefMode.NAME:
        return "a structure referenced by name cannot be asked for its name"
    if target == TargetType.LABEL and vp == VisualPromptKind.NONE:
        return "letter labels need visual prompts"
    if target == TargetType.LABEL and ref != TextRefMode.NAME:
        return "letter labels are asked for structures referenced by name"
    return None


def category_tags(medium: Medium, target: TargetType, vp: VisualPromptKind) -> List[CategoryTag]:
    tags = []
    if target == TargetType.SLICE_DIRECTION or (target.is_relation and medium == Medium.VOLUME_3D):
        tags.append(CategoryTag.RQ1)
    if target.is_relation:
        tags.append(CategoryTag.RQ2)
    if target.is_relation or vp != VisualPromptKind.NONE:
        tags.append(CategoryTag.RQ3)
    return tags


class QuestionGenerator:
    """Generates the items of one scan.

    The volume and label map are resampled (when ``isotropic_spacing`` is set)
    and reoriented once; scenes, frames and media are cached per instance.
    With ``media_dir`` unset, media references and prompt geometry are still
    produced but no PNG is written.
    """

    def __init__(
        self,
        volume: Volume,
        labelmap: LabelMap,
        cfg: GenConfig,
        templates: Optional[QuestionTemplates] = None,
        media_dir: Optional[Union[str, Path]] = None
    ):
        if not labelmap.matches(volume):
            raise ValidationError("label map grid does not match the volume", field_name="labelmap")
        if cfg.isotropic_spacing is not None:
            spacing = (cfg.isotropic_spacing,) * 3
            volume = resample_mpr(volume, SliceDirection.AXIAL, spacing)
            labelmap = resample_mpr(labelmap, SliceDirection.AXIAL, spacing)

        self.cfg = cfg
        self.volume = reorient_to_ras(volume, cfg.ras_most_origin)
        self.labelmap = reorient_to_ras(labelmap, cfg.ras_most_origin)
        self.templates = templates or QuestionTemplates.load(cfg.templates_path)
        self.media_dir = Path(media_dir) if media_dir is not None else None
        self.scan_id = cfg.scan_id or DEFAULT_SCAN_ID
        self.scan_seed = derive_scan_seed(cfg.seed, self.scan_id)
        self.storage_codes = axis_codes(self.volume)
        self.annotations = annotate_structures(self.labelmap)

        self._frames: Dict[Tuple[str, str], List[RenderFrame]] = {}
        self._label_stacks: Dict[Tuple[str, str], np.ndarray] = {}
        self._media_sources: Dict[str, Tuple[Scene, VisualPromptKind, List[Marker]]] = {}
        self._reset()

    def _reset(self) -> None:
        self.rng = np.random.Generator(np.random.PCG64(self.scan_seed))
        self.manifest = MediaManifest()
        self.coverage = CoverageReport(scan_id=self.scan_id, seed=self.scan_seed)
        self._counter = 0
        self._combo_counter = 0

    # scenes and media

    def _label_stack(self, layout: FrameLayout) -> np.ndarray:
        key = (layout.slice_direction.value, layout.orientation_mode.value)
        if key not in self._label_stacks:
            self._label_stacks[key] = label_frames(self.labelmap, layout)
        return self._label_stacks[key]

    def _render_frames(self, layout: FrameLayout) -> List[RenderFrame]:
        key = (layout.slice_direction.value, layout.orientation_mode.value)
        if key not in self._frames:
            self._frames[key] = extract_frames(self.volume, layout.orientation_mode,
                                               layout.slice_direction, self.cfg.window)
        return self._frames[key]

    def _slice_params(self, layout: FrameLayout, index: int) -> Dict[str, Any]:
        """World position (mm) and thickness of frame ``index`` along its slice axis."""
        slice_code = layout.codes[2]
        patient_axis, _ = _CODE_AXIS[slice_code]
        storage_axis = next(i for i, c in enumerate(self.storage_codes)
                            if _CODE_AXIS[c][0] == patient_axis)
        dims = self.labelmap.dims
        storage_index = index if self.storage_codes[storage_axis] == slice_code else dims[storage_axis] - 1 - index
        voxel = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
        voxel[storage_axis] = storage_index
        world = self.labelmap.affine[:3, :3] @ voxel + self.labelmap.affine[:3, 3]
        return {
            "frame_index": int(index),
            "slice_axis": PATIENT_AXES[patient_axis],
            "slice_position_mm": float(world[patient_axis]),
            "slice_thickness_mm": float(abs(self.labelmap.affine[patient_axis, storage_axis])),
        }

    def scene(self, medium: Medium, direction: SliceDirection, mode: OrientationMode) -> Scene:
        layout = frame_layout(self.volume, mode, direction)
        mapping = FrameMapping.from_layout(layout)
        stack = self._label_stack(layout)
        if medium == Medium.VOLUME_3D:
            return Scene(medium, layout, mapping, self.annotations, list(range(stack.shape[2])))
        index = select_slice(self.labelmap, layout)
        return Scene(medium, layout, mapping, annotate_slice(self.labelmap, layout, index), [index],
                     frame_index=index, slice_params=self._slice_params(layout, index))

    def _media(
        self,
        scene: Scene,
        vp: VisualPromptKind,
        markers: List[Marker],
        background: str = "image"
    ) -> Tuple[str, List[PromptRecord]]:
        """Media reference (rendered once per distinct content) and prompt records."""
        drawn = markers if vp != VisualPromptKind.NONE else []
        stack = self._label_stack(scene.layout)
        per_frame = []
        geometry: Dict[int, List[Dict[str, Any]]] = {m.label_id: [] for m in drawn}
        for i in scene.frame_indices:
            specs = []
            for marker in drawn:
                spec = overlay_for_label(stack[:, :, i], marker.label_id, vp.value, marker.color_index, marker.letter)
                if spec is not None:
                    specs.append(spec)
                    geometry[marker.label_id].append({"frame": int(i), **spec.geometry()})
            per_frame.append(specs)
        records = [PromptRecord(vp.value, m.label_id, m.color_index, m.letter, {"frames": geometry[m.label_id]})
                   for m in drawn]

        key = {
            "medium": scene.medium.value,
            "layout": list(scene.layout.codes),
            "direction": scene.direction.value,
            "frames": scene.frame_indices if scene.medium == Medium.SLICE_2D else "all",
            "background": background,
            "prompts": [[m.label_id, vp.value, m.color_index] for m in drawn],
        }
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode("utf-8")).hexdigest()[:12]
        media_ref = (f"{self.scan_id}_{scene.medium.value}_{scene.direction.value}_"
                     f"{scene.layout.orientation_mode.value}_{digest}")
        if media_ref not in self.manifest:
            if self.media_dir is not None:
                frames = self._render_frames(scene.layout)
                files = render_media([frames[i] for i in scene.frame_indices], per_frame, background,
                                     self.media_dir, media_ref, self.cfg.style)
            else:
                files = media_file_names(media_ref, len(scene.frame_indices))
            self.manifest.add(media_ref, files)
            self._media_sources[media_ref] = (scene, vp, drawn)
        return media_ref, records

    # sampling

    def _sample(self, combos: List[Any]) -> List[Any]:
        if not combos:
            return []
        count = min(self.cfg.pairs_per_cell, len(combos))
        picks = self.rng.choice(len(combos), size=count, replace=False)
        return [combos[int(i)] for i in picks]

    def _markers(self, structures: Sequence[StructureAnnotation]) -> List[Marker]:
        indices = self.rng.choice(len(PALETTE), size=len(structures), replace=False)
        return [Marker(s.label_id, int(i)) for s, i in zip(structures, indices)]

    def _swap(self, a: StructureAnnotation, b: StructureAnnotation):
        return (b, a) if self.rng.random() < 0.5 else (a, b)

    def _relation(self, scene: Scene, target: TargetType, a, b, axis: str) -> Optional[RelationTerm]:
        if target == TargetType.RELATION_ANATOMICAL:
            return anatomical_relation(a, b, axis, self.cfg.margin)
        return colloquial_relation(a, b, scene.mapping, axis, self.cfg.margin)

    def _reference(self, ref: TextRefMode, structure: StructureAnnotation, marker: Optional[Marker]) -> str:
        return self.templates.references[ref.value].format(
            name=structure.name,
            color=marker.color if marker else "",
            letter=marker.letter if marker else "",
        )

    # item construction

    def _next_combo(self) -> str:
        self._combo_counter += 1
        return f"{self.scan_id}-c{self._combo_counter:05d}"

    def _item(
        self,
        scene: Scene,
        vp: VisualPromptKind,
        ref: Optional[TextRefMode],
        target: TargetType,
        question_type: QuestionType,
        question: str,
        answer_key: str,
        media: Tuple[str, List[PromptRecord]],
        params: Dict[str, Any]
    ) -> QAItem:
        self._counter += 1
        media_ref, records = media
        full = scene.base_params()
        full.update({
            "scan_id": self.scan_id,
            "visual_prompt_kind": vp.value,
            "text_ref_mode": ref.value if ref else None,
            "target_type": target.value,
            "question_type": question_type.value,
            "ablation": None,
            "background": "image",
            "margin": self.cfg.margin,
        })
        full.update(params)
        return QAItem(
            id=f"{self.scan_id}-{self._counter:05d}",
            media_ref=media_ref,
            question=question,
            question_type=question_type,
            target_type=target,
            answer_key=answer_key,
            category_tags=category_tags(scene.medium, target, vp),
            params=full,
            prompt_records=records,
        )

    def _slice_direction_items(self, scene: Scene) -> List[QAItem]:
        directions = [d.value for d in SliceDirection]
        noun = self.templates.media[scene.medium.value]
        media = self._media(scene, VisualPromptKind.NONE, [])
        combo = self._next_combo()
        items = []
        for qt in self.cfg.question_types:
            if qt == QuestionType.OPEN:
                question = self.templates.question(TargetType.SLICE_DIRECTION, qt, media=noun,
                                                   choices=_or_list(directions))
                key, asserted, choices = scene.direction.value, None, directions
            else:
                asserted = scene.direction.value
                if qt == QuestionType.CLOSED_INVERTED:
                    asserted = directions[(directions.index(asserted) + 1) % len(directions)]
                question = self.templates.question(TargetType.SLICE_DIRECTION, qt, media=noun, direction=asserted)
                key, choices = str(qt == QuestionType.CLOSED_TRUE), ["True", "False"]
            items.append(self._item(scene, VisualPromptKind.NONE, None, TargetType.SLICE_DIRECTION, qt,
                                    question, key, media,
                                    {"combo": combo, "asserted": asserted, "choices": choices}))
        self.coverage.record_cell(self._cell(scene, VisualPromptKind.NONE, None, TargetType.SLICE_DIRECTION),
                                  1, 1, 1)
        return items

    def _cell(self, scene: Scene, vp: VisualPromptKind, ref: Optional[TextRefMode], target: TargetType) -> Dict:
        return {
            "medium": scene.medium.value,
            "slice_direction": scene.direction.value,
            "orientation_mode": scene.layout.orientation_mode.value,
            "visual_prompt_kind": vp.value,
            "text_ref_mode": ref.value if ref else None,
            "target_type": target.value,
        }

    def _relation_items(self, scene: Scene, vp: VisualPromptKind, ref: TextRefMode, target: TargetType) -> List[QAItem]:
        axes = PATIENT_AXES if target == TargetType.RELATION_ANATOMICAL else IMAGE_AXES
        combos = [(a, b, axis) for a, b in combinations(scene.annotations, 2) for axis in axes
                  if self._relation(scene, target, a, b, axis) is not None]
        picked = self._sample(combos)
        noun = self.templates.media[scene.medium.value]
        items = []
        for a, b, axis in picked:
            a, b = self._swap(a, b)
            term = self._relation(scene, target, a, b, axis)
            ordered = sorted((term, term.opposite), key=lambda t: -term_axis(t)[1])
            answer_words = [self.templates.answers[t.value] for t in ordered]
            markers = self._markers([a, b]) if vp != VisualPromptKind.NONE else []
            marker_a, marker_b = (markers + [None, None])[:2]
            media = self._media(scene, vp, markers)
            refs = {"a": self._reference(ref, a, marker_a), "b": self._reference(ref, b, marker_b), "media": noun}
            combo = self._next_combo()
            for qt in self.cfg.question_types:
                if qt == QuestionType.OPEN:
                    question = self.templates.question(target, qt, choices=_or_list(answer_words), **refs)
                    key, asserted, choices = self.templates.answers[term.value], None, answer_words
                else:
                    asserted = term if qt == QuestionType.CLOSED_TRUE else term.opposite
                    question = self.templates.question(target, qt, phrase=self.templates.phrases[asserted.value],
                                                       **refs)
                    key, asserted, choices = str(qt == QuestionType.CLOSED_TRUE), asserted.value, ["True", "False"]
                items.append(self._item(scene, vp, ref, target, qt, question, key, media, {
                    "combo": combo,
                    "structures": [a.label_id, b.label_id],
                    "structure_names": [a.name, b.name],
                    "axis": axis,
                    "relation": term.value,
                    "asserted": asserted,
                    "choices": choices,
                }))
        self.coverage.record_cell(self._cell(scene, vp, ref, target), self.cfg.pairs_per_cell,
                                  len(combos), len(picked))
        return items

    def _identification_items(self, scene: Scene, vp: VisualPromptKind, ref: TextRefMode,
                              target: TargetType) -> List[QAItem]:
        """structure_name and label items: two marked structures, one asked about."""
        combos = [(a, b) for a, b in combinations(scene.annotations, 2) if a.name != b.name]
        picked = self._sample(combos)
        noun = self.templates.media[scene.medium.value]
        names = sorted({s.name for s in scene.annotations})
        items = []
        for a, b in picked:
            a, b = self._swap(a, b)
            marker_a, marker_b = self._markers([a, b])
            media = self._media(scene, vp, [marker_a, marker_b])
            combo = self._next_combo()
            if target == TargetType.STRUCTURE_NAME:
                fields = {"ref": self._reference(ref, a, marker_a), "media": noun}
                truth, other, open_choices, asserted_field = a.name, b.name, names, "name"
            else:
                letters = sorted([marker_a.letter, marker_b.letter])
                fields = {"name": a.name, "media": noun, "choices": _or_list(letters)}
                truth, other, open_choices, asserted_field = marker_a.letter, marker_b.letter, letters, "letter"
            for qt in self.cfg.question_types:
                if qt == QuestionType.OPEN:
                    question = self.templates.question(target, qt, **fields)
                    key, asserted, choices = truth, None, open_choices
                else:
                    asserted = truth if qt == QuestionType.CLOSED_TRUE else other
                    question = self.templates.question(target, qt, **{**fields, asserted_field: asserted})
                    key, choices = str(qt == QuestionType.CLOSED_TRUE), ["True", "False"]
                items.append(self._item(scene, vp, ref, target, qt, question, key, media, {
                    "combo": combo,
                    "structures": [a.label_id, b.label_id],
                    "structure_names": [a.name, b.name],
                    "asserted": asserted,
                    "choices": choices,
                }))
        self.coverage.record_cell(self._cell(scene, vp, ref, target), self.cfg.pairs_per_cell,
                                  len(combos), len(picked))
        return items

    def _has_determinate_pair(self) -> bool:
        return any(anatomical_relation(a, b, axis, self.cfg.margin) is not None
                   for a, b in combinations(self.annotations, 2) for axis in PATIENT_AXES)

    @performance_monitor("generate", "generator")
    def generate(self) -> List[QAItem]:
        """Base items (no ablations) of every parameter cell, in grid order.

        Calling it again restarts the seeded generator, so the result repeats.
        """
        self._reset()
        if not self._has_determinate_pair():
            message = "no determinate structure pairs; nothing generated"
            self.coverage.warnings.append(message)
            logger.warning(message, LogCategory.GENERATION, {"structures": len(self.annotations)},
                           correlation_id=self.scan_id)
            return []

        items: List[QAItem] = []
        for medium in self.cfg.media:
            for direction in self.cfg.slice_directions:
                for mode in self.cfg.orientation_modes:
                    scene = self.scene(medium, direction, mode)
                    if TargetType.SLICE_DIRECTION in self.cfg.target_types:
                        items.extend(self._slice_direction_items(scene))
                    for vp in self.cfg.visual_prompt_kinds:
                        for ref in self.cfg.text_ref_modes:
                            for target in self.cfg.target_types:
                                if target == TargetType.SLICE_DIRECTION:
                                    continue
                                reason = cell_invalid_reason(vp, ref, target)
                                if reason is not None:
                                    self.coverage.record_cell(self._cell(scene, vp, ref, target),
                                                              self.cfg.pairs_per_cell, 0, 0, reason)
                                elif target.is_relation:
                                    items.extend(self._relation_items(scene, vp, ref, target))
                                else:
                                    items.extend(self._identification_items(scene, vp, ref, target))

        self.coverage.items = len(items)
        logger.log_generation("Generated base items", self.scan_id, len(items), self.coverage.skipped_cells)
        return items

    # ablations

    def _text_only_skip_reason(self, item: QAItem) -> Optional[str]:
        if item.target_type == TargetType.RELATION_COLLOQUIAL:
            return "screen relations need an image"
        if item.target_type != TargetType.RELATION_ANATOMICAL:
            return "only relation questions are asked without an image"
        if item.params.get("text_ref_mode") != TextRefMode.NAME.value:
            return "colour and letter references need an image"
        if item.params.get("medium") != Medium.VOLUME_3D.value:
            return "relations restricted to one slice need that slice"
        return None

    def make_ablation_items(self, items: List[QAItem]) -> List[QAItem]:
        """Text-only (AB1) and blank-background (AB2) twins of base items.

        Text-only twins with identical question text are emitted once.
        Skipped items are recorded in the coverage report.
        """
        base = [item for item in items if item.params.get("ablation") is None]
        out: List[QAItem] = []

        if Ablation.TEXT_ONLY in self.cfg.ablations:
            seen = set()
            for item in base:
                reason = self._text_only_skip_reason(item)
                if reason is not None:
                    self.coverage.record_skip(item.id, Ablation.TEXT_ONLY, reason)
                    continue
                if (item.question, item.question_type) in seen:
                    continue
                seen.add((item.question, item.question_type))
                params = dict(item.params, ablation=Ablation.TEXT_ONLY.value,
                              visual_prompt_kind=VisualPromptKind.NONE.value, background=None)
                out.append(QAItem(
                    id=f"{item.id}-ab1", media_ref=None, question=item.question,
                    question_type=item.question_type, target_type=item.target_type,
                    answer_key=item.answer_key, category_tags=[CategoryTag.AB1], params=params,
                ))

        if Ablation.BLANK_BACKGROUND in self.cfg.ablations:
            for item in base:
                if not item.prompt_records:
                    self.coverage.record_skip(item.id, Ablation.BLANK_BACKGROUND, "no visual prompt to keep")
                    continue
                scene, vp, markers = self._media_sources[item.media_ref]
                media_ref, records = self._media(scene, vp, markers, background="white")
                params = dict(item.params, ablation=Ablation.BLANK_BACKGROUND.value, background="white")
                out.append(QAItem(
                    id=f"{item.id}-ab2", media_ref=media_ref, question=item.question,
                    question_type=item.question_type, target_type=item.target_type,
                    answer_key=item.answer_key, category_tags=[CategoryTag.AB2], params=params,
                    prompt_records=records,
                ))

        self.coverage.items += len(out)
        logger.info("Built ablation items", LogCategory.GENERATION,
                    {"items": len(out), "skipped": len(self.coverage.ablation_skips)},
                    correlation_id=self.scan_id)
        return out

    def run(self) -> List[QAItem]:
        """Base items followed by their ablation twins."""
        items = self.generate()
        return items + self.make_ablation_items(items)


def generate(
    volume: Volume,
    labelmap: LabelMap,
    cfg: GenConfig,
    media_dir: Optional[Union[str, Path]] = None
) -> List[QAItem]:
    """All items of one scan, ablations included."""
    return QuestionGenerator(volume, labelmap, cfg, media_dir=media_dir).run()


def serialize(items: Sequence[QAItem], path: Union[str, Path]) -> None:
    """Write one canonical (sorted-key) JSON object per line."""
    path = Path(path)
    lines = [json.dumps(item.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for item in items]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(lines), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)
    logger.log_artifact("Wrote questions", "jsonl", str(path), items=len(lines))


def load_items(path: Union[str, Path]) -> List[QAItem]:
    """Read a questions JSON-lines file.

    Raises:
        FormatError: a line is not a valid item.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)
    items = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            items.append(QAItem.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise FormatError(f"{path}:{number}: invalid question item: {e}", path=str(path), cause=e)
    return items
