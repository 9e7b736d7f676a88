"""Configuration dataclasses and the configuration manager.

Generator configs are human-edited TOML (YAML and JSON are accepted too);
machine artifacts are JSON.
"""

import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .errors import ConfigurationError
from .logging import get_logger
from .models import (
    Ablation, Medium, OrientationMode, QuestionType, SliceDirection,
    TargetType, TextRefMode, VisualPromptKind
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class NeighborBuildConfig:
    """Parameters of the exact cosine K-nearest-neighbor build."""
    k: int
    epsilon: float = 1e-8
    block_size: int = 128
    workers: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class WindowSpec:
    """Intensity window: percentile bounds or a HU level/width pair."""
    kind: str = "percentile"
    low: float = 0.5
    high: float = 99.5
    level: float = 40.0
    width: float = 400.0

    def __post_init__(self):
        if self.kind not in ("percentile", "hu_window"):
            raise ValueError("window kind must be 'percentile' or 'hu_window'")
        if self.kind == "percentile":
            if not 0.0 <= self.low < self.high <= 100.0:
                raise ValueError("percentile window needs 0 <= low < high <= 100")
        elif not self.width > 0:
            raise ValueError("HU window width must be positive")

    @classmethod
    def percentile(cls, low: float = 0.5, high: float = 99.5) -> 'WindowSpec':
        return cls(kind="percentile", low=low, high=high)

    @classmethod
    def hu_window(cls, level: float = 40.0, width: float = 400.0) -> 'WindowSpec':
        return cls(kind="hu_window", level=level, width=width)


@dataclass
class RenderStyle:
    """Overlay geometry: disc radius, box stroke, font scale and mask alpha."""
    radius: int = 4
    stroke: int = 2
    font_scale: int = 3
    alpha: float = 0.4

    def __post_init__(self):
        if self.radius < 0 or self.stroke < 1 or self.font_scale < 1:
            raise ValueError("radius must be >= 0, stroke and font_scale >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def _enum_list(enum_cls, values, key: str) -> list:
    try:
        members = [v if isinstance(v, enum_cls) else enum_cls(v) for v in values]
    except ValueError as e:
        raise ValueError(f"{key}: {e}")
    if not members:
        raise ValueError(f"{key} must not be empty")
    # keep first occurrence order, drop duplicates
    return list(dict.fromkeys(members))


@dataclass
class GenConfig:
    """Parameter grid and knobs of question generation."""
    visual_prompt_kinds: List[VisualPromptKind] = field(
        default_factory=lambda: list(VisualPromptKind))
    text_ref_modes: List[TextRefMode] = field(default_factory=lambda: list(TextRefMode))
    target_types: List[TargetType] = field(default_factory=lambda: list(TargetType))
    question_types: List[QuestionType] = field(default_factory=lambda: list(QuestionType))
    orientation_modes: List[OrientationMode] = field(default_factory=lambda: list(OrientationMode))
    slice_directions: List[SliceDirection] = field(default_factory=lambda: list(SliceDirection))
    media: List[Medium] = field(default_factory=lambda: list(Medium))
    ablations: List[Ablation] = field(default_factory=lambda: list(Ablation))
    pairs_per_cell: int = 2
    seed: int = 0
    scan_id: Optional[str] = None
    margin: float = 3.0
    window: WindowSpec = field(default_factory=WindowSpec)
    ras_most_origin: bool = True
    isotropic_spacing: Optional[float] = None
    style: RenderStyle = field(default_factory=RenderStyle)
    templates_path: Optional[str] = None

    def __post_init__(self):
        self.visual_prompt_kinds = _enum_list(VisualPromptKind, self.visual_prompt_kinds, "visual_prompt_kinds")
        self.text_ref_modes = _enum_list(TextRefMode, self.text_ref_modes, "text_ref_modes")
        self.target_types = _enum_list(TargetType, self.target_types, "target_types")
        self.question_types = _enum_list(QuestionType, self.question_types, "question_types")
        self.orientation_modes = _enum_list(OrientationMode, self.orientation_modes, "orientation_modes")
        self.slice_directions = _enum_list(SliceDirection, self.slice_directions, "slice_directions")
        self.media = _enum_list(Medium, self.media, "media")
        self.ablations = [a if isinstance(a, Ablation) else Ablation(a) for a in self.ablations]
        if isinstance(self.window, dict):
            self.window = WindowSpec(**self.window)
        if isinstance(self.style, dict):
            self.style = RenderStyle(**self.style)
        if self.pairs_per_cell < 1:
            raise ValueError("pairs_per_cell must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.isotropic_spacing is not None and not self.isotropic_spacing > 0:
            raise ValueError("isotropic_spacing must be positive")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, list):
                data[key] = [v.value if hasattr(v, "value") else v for v in value]
        return data


@dataclass
class EvalConfig:
    """Scoring strictness and credible-interval settings."""
    prior: str = "uniform"
    mass: float = 0.95
    scoring_mode: str = "synonym"
    synonyms_path: Optional[str] = None

    PRIORS = {"uniform": (1.0, 1.0), "jeffreys": (0.5, 0.5)}

    def __post_init__(self):
        if self.prior not in self.PRIORS:
            raise ValueError(f"prior must be one of {sorted(self.PRIORS)}")
        if not 0.0 < self.mass < 1.0:
            raise ValueError("mass must lie in (0, 1)")
        if self.scoring_mode not in ("exact", "synonym"):
            raise ValueError("scoring_mode must be 'exact' or 'synonym'")

    @property
    def prior_params(self) -> Tuple[float, float]:
        return self.PRIORS[self.prior]


@dataclass
class ServeConfig:
    """Transport selection for the decode server."""
    transport: str = "stdio"
    host: str = "127.0.0.1"
    port: int = 0

    def __post_init__(self):
        if self.transport not in ("stdio", "tcp", "http"):
            raise ValueError("transport must be stdio, tcp or http")
        if not 0 <= self.port < 65536:
            raise ValueError("port out of range")

    @classmethod
    def from_address(cls, transport: str, address: str) -> 'ServeConfig':
        host, sep, port = address.rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError(f"address must look like host:port, got {address!r}")
        return cls(transport=transport, host=host or "127.0.0.1", port=int(port))


class ConfigurationManager:
    """Loads and saves configuration files (TOML, YAML or JSON by suffix)."""

    def __init__(self):
        self.logger = get_logger("config")

    def read_document(self, path: Union[str, Path]) -> Dict[str, Any]:
        """Parse a configuration document into a dictionary."""
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Configuration file not found: {path}", config_key=str(path))

        suffix = path.suffix.lower()
        try:
            if suffix == ".toml":
                with open(path, "rb") as f:
                    data = tomllib.load(f)
            elif suffix in (".yaml", ".yml"):
                with open(path, "r", encoding="utf-8") as f:
                    data = yaml.safe_load(f) or {}
            else:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
        except (tomllib.TOMLDecodeError, yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"Invalid configuration file format: {e}", cause=e)
        except OSError as e:
            raise ConfigurationError(f"Failed to read configuration: {e}", cause=e)

        if not isinstance(data, dict):
            raise ConfigurationError(f"Configuration root must be a table: {path}")
        return data

    def load_gen_config(self, path: Union[str, Path], **overrides: Any) -> GenConfig:
        """Load a GenConfig; ``overrides`` (e.g. the CLI seed) win over the file."""
        data = self.read_document(path)
        data = dict(data.get("generator", data))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return self.gen_config_from_dict(data)

    def gen_config_from_dict(self, data: Dict[str, Any]) -> GenConfig:
        known = set(GenConfig.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            self.logger.log_configuration("Rejected generator configuration", "generator", False,
                                          [f"unknown key: {key}" for key in unknown])
            raise ConfigurationError(f"Unknown generator keys: {unknown}", config_key=unknown[0])
        try:
            cfg = GenConfig(**data)
        except (TypeError, ValueError) as e:
            self.logger.log_configuration("Rejected generator configuration", "generator", False, [str(e)])
            raise ConfigurationError(f"Invalid generator configuration: {e}", cause=e)
        self.logger.log_configuration("Generator configuration loaded", "generator")
        return cfg

    def load_eval_config(self, path: Optional[Union[str, Path]] = None, **overrides: Any) -> EvalConfig:
        data: Dict[str, Any] = {}
        if path:
            data = dict(self.read_document(path).get("evaluator", {}))
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            cfg = EvalConfig(**data)
        except (TypeError, ValueError) as e:
            self.logger.log_configuration("Rejected evaluator configuration", "evaluator", False, [str(e)])
            raise ConfigurationError(f"Invalid evaluator configuration: {e}", cause=e)
        self.logger.log_configuration("Evaluator configuration loaded", "evaluator")
        return cfg

    def create_default_gen_config(self, seed: int = 0) -> GenConfig:
        return GenConfig(seed=seed)

    def save_config(self, config: GenConfig, path: Union[str, Path]) -> None:
        """Save a GenConfig as JSON or YAML."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = {"generator": config.to_dict()}
        try:
            with open(path, "w", encoding="utf-8") as f:
                if path.suffix.lower() in (".yaml", ".yml"):
                    yaml.safe_dump(data, f, default_flow_style=False, indent=2)
                else:
                    json.dump(data, f, indent=2, sort_keys=True)
        except OSError as e:
            raise ConfigurationError(f"Failed to save configuration: {e}", cause=e)
