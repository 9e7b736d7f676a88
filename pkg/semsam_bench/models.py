"""Shared enums and record types for the benchmark pipeline."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional


class SliceDirection(Enum):
    """Anatomical plane a frame sequence is sliced along."""
    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"


class OrientationMode(Enum):
    """How slices are laid out on screen."""
    RAS_STORAGE = "ras_storage"
    STANDARD_VIEW = "standard_view"


class Medium(Enum):
    """Whether a question shows a frame sequence or a single slice."""
    VOLUME_3D = "volume_3d"
    SLICE_2D = "slice_2d"


class VisualPromptKind(Enum):
    NONE = "none"
    POINT = "point"
    BBOX = "bbox"
    MASK = "mask"


class TextRefMode(Enum):
    """How the question text refers to a structure."""
    NAME = "name"
    COLOR = "color"
    LETTER = "letter"


class TargetType(Enum):
    STRUCTURE_NAME = "structure_name"
    LABEL = "label"
    RELATION_ANATOMICAL = "relation_anatomical"
    RELATION_COLLOQUIAL = "relation_colloquial"
    SLICE_DIRECTION = "slice_direction"

    @property
    def is_relation(self) -> bool:
        return self in (TargetType.RELATION_ANATOMICAL, TargetType.RELATION_COLLOQUIAL)


class QuestionType(Enum):
    OPEN = "open"
    CLOSED_TRUE = "closed_true"
    CLOSED_INVERTED = "closed_inverted"


class Ablation(Enum):
    TEXT_ONLY = "text_only"
    BLANK_BACKGROUND = "blank_background"


class CategoryTag(Enum):
    """Research-question and ablation categories an item counts towards."""
    RQ1 = "RQ1"
    RQ2 = "RQ2"
    RQ3 = "RQ3"
    AB1 = "AB1"
    AB2 = "AB2"


@dataclass
class PromptRecord:
    """Descriptor of one visual prompt drawn for an item."""
    kind: str
    label_id: int
    color_index: int
    letter: str
    geometry: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'label_id': self.label_id,
            'color_index': self.color_index,
            'letter': self.letter,
            'geometry': self.geometry,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PromptRecord':
        return cls(
            kind=data['kind'],
            label_id=int(data['label_id']),
            color_index=int(data['color_index']),
            letter=data['letter'],
            geometry=dict(data.get('geometry', {})),
        )


@dataclass
class QAItem:
    """A generated question with its answer key, tags and parameter record."""
    id: str
    media_ref: Optional[str]
    question: str
    question_type: QuestionType
    target_type: TargetType
    answer_key: str
    category_tags: List[CategoryTag]
    params: Dict[str, Any]
    prompt_records: List[PromptRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.id:
            raise ValueError("QAItem id cannot be empty")
        if self.question_type == QuestionType.CLOSED_TRUE and self.answer_key != "True":
            raise ValueError("closed_true items must have answer key 'True'")
        if self.question_type == QuestionType.CLOSED_INVERTED and self.answer_key != "False":
            raise ValueError("closed_inverted items must have answer key 'False'")
        if self.params.get('ablation') == Ablation.TEXT_ONLY.value:
            if self.media_ref is not None or self.prompt_records:
                raise ValueError("text-only items carry neither media nor prompts")
        letters = [record.letter for record in self.prompt_records]
        if len(letters) != len(set(letters)):
            raise ValueError("prompt letters must not repeat within an item")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'media_ref': self.media_ref,
            'question': self.question,
            'question_type': self.question_type.value,
            'target_type': self.target_type.value,
            'answer_key': self.answer_key,
            'category_tags': [tag.value for tag in self.category_tags],
            'params': self.params,
            'prompt_records': [record.to_dict() for record in self.prompt_records],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'QAItem':
        return cls(
            id=data['id'],
            media_ref=data.get('media_ref'),
            question=data['question'],
            question_type=QuestionType(data['question_type']),
            target_type=TargetType(data['target_type']),
            answer_key=data['answer_key'],
            category_tags=[CategoryTag(tag) for tag in data.get('category_tags', [])],
            params=dict(data.get('params', {})),
            prompt_records=[PromptRecord.from_dict(r) for r in data.get('prompt_records', [])],
        )


@dataclass
class ResponseRecord:
    """A model's raw answer text for one question."""
    question_id: str
    raw_text: str

    def to_dict(self) -> Dict[str, Any]:
        return {'question_id': self.question_id, 'raw_text': self.raw_text}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ResponseRecord':
        return cls(question_id=str(data['question_id']), raw_text=str(data.get('raw_text', '')))
