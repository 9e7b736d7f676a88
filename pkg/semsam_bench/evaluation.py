"""Response scoring and per-category accuracy with Bayesian credible intervals.

The final answer is the content of the last ``<answer>...</answer>`` span;
responses without one are omitted and never enter an accuracy denominator.
"""

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from scipy.special import betainc

from .config import EvalConfig
from .errors import ArtifactIOError, ConfigurationError, FormatError, ValidationError
from .logging import get_logger, performance_monitor
from .models import QAItem, QuestionType, ResponseRecord

logger = get_logger("evaluation")

DEFAULT_SYNONYMS = Path(__file__).parent / "data" / "synonyms.yaml"

ANSWER_SPAN = re.compile(r"<answer>(.*?)</answer>", re.DOTALL | re.IGNORECASE)
TERMINAL_PUNCTUATION = ".,;:!?\"'"
QUANTILE_TOLERANCE = 1e-8


def extract_answer(raw: str) -> Optional[str]:
    """Trimmed content of the last answer span; ``None`` when there is none."""
    spans = ANSWER_SPAN.findall(raw or "")
    if not spans:
        return None
    return spans[-1].strip()


def normalize(text: str) -> str:
    """Case-fold, trim, collapse whitespace and strip terminal punctuation."""
    text = " ".join(text.casefold().split())
    return text.rstrip(TERMINAL_PUNCTUATION + " ").lstrip()


class SynonymTable:
    """Maps accepted alternatives onto canonical answers."""

    def __init__(self, table: Dict[str, Sequence[str]]):
        self._canonical: Dict[str, str] = {}
        for canonical, alternatives in table.items():
            key = normalize(str(canonical))
            for alternative in [key, *(normalize(str(a)) for a in alternatives or [])]:
                owner = self._canonical.setdefault(alternative, key)
                if owner != key:
                    raise ConfigurationError(
                        f"synonym {alternative!r} belongs to both {owner!r} and {key!r}",
                        config_key="synonyms_path",
                    )

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> 'SynonymTable':
        path = Path(path) if path else DEFAULT_SYNONYMS
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"cannot load synonyms {path}: {e}", config_key="synonyms_path", cause=e)
        if not isinstance(data, dict):
            raise ConfigurationError(f"synonyms {path} must be a mapping", config_key="synonyms_path")
        return cls(data)

    def canonical(self, normalized: str) -> str:
        return self._canonical.get(normalized, normalized)


def score(
    item: QAItem,
    answer: str,
    mode: str = "synonym",
    synonyms: Optional[SynonymTable] = None
) -> bool:
    """Whether an extracted answer matches the item's key.

    ``exact`` compares normalized strings; ``synonym`` also accepts registered
    alternatives (``yes``/``no`` for closed items) and a leading article.
    """
    given, key = normalize(answer), normalize(item.answer_key)
    if given == key:
        return True
    if mode == "exact":
        return False
    synonyms = synonyms or SynonymTable.load()
    if item.question_type == QuestionType.OPEN and given.startswith("the "):
        given = given[4:]
    return synonyms.canonical(given) == synonyms.canonical(key)


def beta_quantile(q: float, a: float, b: float, tol: float = QUANTILE_TOLERANCE) -> float:
    """Quantile of Beta(a, b) by bisection on the regularized incomplete beta."""
    if q <= 0.0:
        return 0.0
    if q >= 1.0:
        return 1.0
    low, high = 0.0, 1.0
    while high - low > tol:
        mid = (low + high) / 2.0
        if betainc(a, b, mid) < q:
            low = mid
        else:
            high = mid
    return (low + high) / 2.0


def credible_interval(
    successes: int,
    failures: int,
    prior: Tuple[float, float] = (1.0, 1.0),
    mass: float = 0.95
) -> Tuple[float, float]:
    """Equal-tailed interval of the Beta(alpha0 + s, beta0 + f) posterior."""
    if not 0.0 < mass < 1.0:
        raise ValidationError(f"mass must lie in (0, 1), got {mass}", field_name="mass")
    if successes < 0 or failures < 0:
        raise ValidationError("counts must be non-negative", field_name="counts")
    a, b = prior[0] + successes, prior[1] + failures
    tail = (1.0 - mass) / 2.0
    return beta_quantile(tail, a, b), beta_quantile(1.0 - tail, a, b)


@dataclass
class GroupStats:
    n_scored: int = 0
    n_omitted: int = 0
    n_correct: int = 0

    def add(self, correct: Optional[bool]) -> None:
        if correct is None:
            self.n_omitted += 1
            return
        self.n_scored += 1
        self.n_correct += int(correct)

    @property
    def accuracy(self) -> Optional[float]:
        return self.n_correct / self.n_scored if self.n_scored else None

    def to_dict(self, prior: Tuple[float, float], mass: float) -> Dict[str, Any]:
        failures = self.n_scored - self.n_correct
        low, high = credible_interval(self.n_correct, failures, prior, mass)
        a, b = prior[0] + self.n_correct, prior[1] + failures
        return {
            "n_scored": self.n_scored,
            "n_omitted": self.n_omitted,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "posterior_mean": a / (a + b),
            "credible_interval": {"low": low, "high": high, "mass": mass},
        }


@dataclass
class EvalReport:
    """Per-group accuracies plus the scoring choices they depend on."""
    config: EvalConfig
    groups: Dict[str, Dict[str, GroupStats]] = field(default_factory=dict)
    unmatched: List[str] = field(default_factory=list)
    duplicates: Dict[str, int] = field(default_factory=dict)
    missing: int = 0

    def stats(self, group: str, key: str = "all") -> GroupStats:
        return self.groups.setdefault(group, {}).setdefault(key, GroupStats())

    @property
    def overall(self) -> GroupStats:
        return self.stats("overall")

    def to_dict(self) -> Dict[str, Any]:
        prior = self.config.prior_params
        return {
            "header": {
                "prior": self.config.prior,
                "prior_params": list(prior),
                "mass": self.config.mass,
                "scoring_mode": self.config.scoring_mode,
                "choices": ["prior", "mass", "scoring_mode"],
            },
            "groups": {
                group: {key: stats.to_dict(prior, self.config.mass) for key, stats in sorted(entries.items())}
                for group, entries in sorted(self.groups.items())
            },
            "unmatched": sorted(self.unmatched),
            "duplicates": dict(sorted(self.duplicates.items())),
            "missing": self.missing,
        }

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)
        logger.log_artifact("Saved evaluation report", "report", str(path))


def _group_keys(item: QAItem) -> List[Tuple[str, str]]:
    keys = [("overall", "all")]
    keys += [("tag", tag.value) for tag in item.category_tags]
    keys.append(("target_type", item.target_type.value))
    keys.append(("question_type", item.question_type.value))
    for name in ("orientation_mode", "medium", "visual_prompt_kind"):
        value = item.params.get(name)
        if value is not None:
            keys.append((name, str(value)))
    return keys


@performance_monitor("aggregate", "evaluation")
def aggregate(
    items: Sequence[QAItem],
    responses: Iterable[ResponseRecord],
    cfg: Optional[EvalConfig] = None,
    synonyms: Optional[SynonymTable] = None
) -> EvalReport:
    """Score every item against its response and fold into groups.

    A later response for the same id replaces an earlier one; responses for
    unknown ids are listed under ``unmatched``; items without a response or
    without an answer span count as omitted.
    """
    cfg = cfg or EvalConfig()
    if cfg.scoring_mode == "synonym" and synonyms is None:
        synonyms = SynonymTable.load(cfg.synonyms_path)
    known = {item.id for item in items}
    report = EvalReport(config=cfg)

    latest: Dict[str, ResponseRecord] = {}
    seen: Counter = Counter()
    for response in responses:
        if response.question_id not in known:
            report.unmatched.append(response.question_id)
            continue
        seen[response.question_id] += 1
        latest[response.question_id] = response
    report.duplicates = {qid: count - 1 for qid, count in seen.items() if count > 1}

    for item in items:
        response = latest.get(item.id)
        correct: Optional[bool] = None
        if response is None:
            report.missing += 1
        else:
            answer = extract_answer(response.raw_text)
            if answer is not None:
                correct = score(item, answer, cfg.scoring_mode, synonyms)
        for group, key in _group_keys(item):
            report.stats(group, key).add(correct)

    overall = report.overall
    logger.log_evaluation("Aggregated responses", overall.n_scored, overall.n_omitted, len(report.unmatched))
    return report


def stub_respond(items: Sequence[QAItem], error_rate: float, seed: int) -> List[ResponseRecord]:
    """Stand-in model: right with probability ``1 - error_rate``, otherwise a
    uniformly drawn wrong answer from the item's answer vocabulary.
    """
    if not 0.0 <= error_rate <= 1.0 or math.isnan(error_rate):
        raise ValidationError(f"error_rate must lie in [0, 1], got {error_rate}", field_name="error_rate")
    if isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ValidationError("seed must be an unsigned 64-bit integer", field_name="seed")

    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for item in items:
        answer = item.answer_key
        if rng.random() >= 1.0 - error_rate:
            answer = _wrong_answer(item, rng)
        records.append(ResponseRecord(item.id, f"Considering the question, my answer is {answer}. "
                                               f"<answer>{answer}</answer>"))
    return records


def _wrong_answer(item: QAItem, rng: np.random.Generator) -> str:
    if item.question_type != QuestionType.OPEN:
        return "False" if item.answer_key == "True" else "True"
    key = normalize(item.answer_key)
    wrong = [c for c in item.params.get("choices", []) if normalize(str(c)) != key]
    if not wrong:
        return "unknown"
    return str(wrong[int(rng.integers(len(wrong)))])


def save_responses(records: Sequence[ResponseRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n"
                                for r in records), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)
    logger.log_artifact("Wrote responses", "jsonl", str(path), records=len(records))


def load_responses(path: Union[str, Path]) -> List[ResponseRecord]:
    """Read ``{"question_id", "raw_text"}`` lines.

    Raises:
        FormatError: a line is not a response object.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)
    records = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            if not isinstance(data, dict):
                raise ValueError("not an object")
            records.append(ResponseRecord.from_dict(data))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise FormatError(f"{path}:{number}: invalid response: {e}", path=str(path), cause=e)
    return records
