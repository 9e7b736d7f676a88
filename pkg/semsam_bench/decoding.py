"""One decoding step with semantic-neighborhood rescoring.

A candidate ``c`` from the truncated set is scored by the probability mass of
its kept neighbors::

    Score(c) = sum_k max(0, S_val[c, k]) * p(S_tid[c, k])

with ``p`` the full-vocabulary distribution. Steps whose candidate set holds
any non-content token defer to the reference sampler instead.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ContractError, ValidationError
from .logging import LogCategory, get_logger
from .neighbors import NeighborTable
from .vocab import VocabPartition

logger = get_logger("decoding")

# first argpartition window for top-p; grows x4 until the mass is covered
TOP_P_WINDOW = 64


@dataclass(frozen=True)
class FilterSpec:
    """Truncation filter: ``top_m`` keeps M ids, ``top_p`` a cumulative-mass prefix."""
    kind: str
    m: Optional[int] = None
    p: Optional[float] = None

    def __post_init__(self):
        if self.kind == "top_m":
            if self.p is not None or self.m is None or isinstance(self.m, bool) or int(self.m) != self.m or self.m < 1:
                raise ValidationError("top_m filter needs an integer m >= 1 and no p", field_name="filter")
        elif self.kind == "top_p":
            if self.m is not None or self.p is None or not 0.0 < self.p <= 1.0:
                raise ValidationError("top_p filter needs p in (0, 1] and no m", field_name="filter")
        else:
            raise ValidationError(f"unknown filter type {self.kind!r}", field_name="filter")

    @classmethod
    def top_m(cls, m: int) -> 'FilterSpec':
        return cls(kind="top_m", m=m)

    @classmethod
    def top_p(cls, p: float) -> 'FilterSpec':
        return cls(kind="top_p", p=p)


@dataclass(frozen=True)
class KeepSpec:
    """Which neighbor slots count towards a score.

    ``top_k_prime`` keeps the first K' slots; ``threshold`` keeps the longest
    prefix with similarity >= ``sim_threshold``. Slot 0 is kept either way.
    """
    kind: str
    k_prime: Optional[int] = None
    sim_threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind == "top_k_prime":
            if (self.sim_threshold is not None or self.k_prime is None or isinstance(self.k_prime, bool)
                    or int(self.k_prime) != self.k_prime or self.k_prime < 1):
                raise ValidationError("k_prime keep needs an integer k_prime >= 1", field_name="keep")
        elif self.kind == "threshold":
            t = self.sim_threshold
            if self.k_prime is not None or t is None or not math.isfinite(t) or t <= -1.0:
                raise ValidationError("threshold keep needs a finite threshold > -1", field_name="keep")
        else:
            raise ValidationError(f"unknown keep type {self.kind!r}", field_name="keep")

    @classmethod
    def top_k_prime(cls, k_prime: int) -> 'KeepSpec':
        return cls(kind="top_k_prime", k_prime=k_prime)

    @classmethod
    def threshold(cls, sim_threshold: float) -> 'KeepSpec':
        return cls(kind="threshold", sim_threshold=sim_threshold)


@dataclass(frozen=True, eq=False)
class DecodeRequest:
    """Logits of one step plus the rescoring configuration.

    ``seed`` is required for ``select="sample"``. In argmax mode it is
    optional and only feeds the sampler of a deferred step; a deferral
    without one samples with seed 0.
    """
    logits: np.ndarray
    temperature: float
    filter: FilterSpec
    keep: KeepSpec
    select: str = "argmax"
    seed: Optional[int] = None
    score_temperature: float = 1.0
    request_id: Optional[str] = None

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float32)
        if logits.ndim != 1 or logits.size == 0:
            raise ValidationError("logits must be a non-empty vector", field_name="logits")
        if not np.isfinite(logits).all():
            raise ValidationError("logits contain non-finite values", field_name="logits")
        object.__setattr__(self, "logits", logits)
        if not math.isfinite(self.temperature) or self.temperature < 0:
            raise ValidationError(f"temperature must be finite and >= 0, got {self.temperature}",
                                  field_name="temperature")
        if not math.isfinite(self.score_temperature) or self.score_temperature <= 0:
            raise ValidationError("score_temperature must be positive", field_name="temperature")
        if self.select not in ("argmax", "sample"):
            raise ValidationError(f"select must be 'argmax' or 'sample', got {self.select!r}",
                                  field_name="select")
        if self.seed is None:
            if self.select == "sample":
                raise ValidationError("sample mode requires a seed", field_name="seed")
        elif isinstance(self.seed, bool) or not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must be an unsigned 64-bit integer", field_name="seed")

    @property
    def effective_seed(self) -> int:
        return 0 if self.seed is None else int(self.seed)


@dataclass(frozen=True)
class Candidate:
    token: int
    p: float
    score: float

    def to_dict(self) -> Dict[str, Any]:
        return {"token": self.token, "p": self.p, "score": self.score}


@dataclass(frozen=True)
class StepOutcome:
    """Chosen token, whether rescoring was skipped, and the scored candidates."""
    token: int
    deferred: bool
    candidates: List[Candidate] = field(default_factory=list)
    lookups: int = 0

    def to_dict(self, request_id: Optional[str] = None) -> Dict[str, Any]:
        return {
            "id": request_id,
            "token": self.token,
            "deferred": self.deferred,
            "candidates": [c.to_dict() for c in self.candidates],
        }


@dataclass
class LookupCounter:
    """Counts neighbor-table lookups made while scoring."""
    count: int = 0


def softmax_probs(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax in float64 with max subtraction."""
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}", field_name="temperature")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = np.exp(z - z.max())
    return z / z.sum()


def _order(ids: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Sort ids by descending probability, then ascending id."""
    return ids[np.lexsort((ids, -p[ids]))]


def _at_least(p: np.ndarray, count: int) -> np.ndarray:
    """All ids whose probability is >= the count-th largest, in ranked order."""
    if count >= p.size:
        return _order(np.arange(p.size), p)
    part = np.argpartition(-p, count - 1)[:count]
    kth = p[part].min()
    return _order(np.flatnonzero(p >= kth), p)


def apply_filter(p: np.ndarray, f: FilterSpec) -> np.ndarray:
    """Candidate ids ranked by descending probability, ties by ascending id."""
    p = np.asarray(p, dtype=np.float64)
    if f.kind == "top_m":
        ranked = _at_least(p, min(f.m, p.size))
        return ranked[:min(f.m, p.size)]

    if f.p >= 1.0:
        return _order(np.flatnonzero(p > 0), p)

    window = TOP_P_WINDOW
    while True:
        ranked = _at_least(p, min(window, p.size))
        mass = np.cumsum(p[ranked])
        cut = int(np.searchsorted(mass, f.p, side="left"))
        if cut < ranked.size:
            return ranked[:cut + 1]
        if ranked.size >= p.size:
            # rounding left the total just under p
            return ranked[p[ranked] > 0]
        window *= 4


def semantic_scores(
    candidates: np.ndarray,
    p: np.ndarray,
    table: NeighborTable,
    keep: KeepSpec,
    counter: Optional[LookupCounter] = None
) -> np.ndarray:
    """Neighborhood-aggregated score for every candidate.

    Neighbor probabilities come from the full distribution ``p``. Slot 0
    contributes with weight exactly 1, so ``Score(c) >= p(c)``.

    Raises:
        ContractError: a candidate is not a content token, or ``k_prime``
            exceeds the table's K.
    """
    rows = table.rows_of(candidates)
    if keep.kind == "top_k_prime":
        if keep.k_prime > table.k:
            raise ContractError(f"k_prime {keep.k_prime} > table K {table.k}")
        width = keep.k_prime
        sims = table.s_val[rows, :width].astype(np.float64)
        mask = np.ones(sims.shape, dtype=bool)
    else:
        sims = table.s_val[rows].astype(np.float64)
        mask = sims >= keep.sim_threshold
        mask[:, 0] = True
        mask = np.logical_and.accumulate(mask, axis=1)
        width = table.k

    tids = table.s_tid[rows, :width]
    weights = np.maximum(sims, 0.0)
    weights[:, 0] = 1.0
    mass = np.zeros(sims.shape, dtype=np.float64)
    mass[mask] = p[tids[mask]]

    if counter is not None:
        counter.count += int(mask.sum())
    return (weights * mass).sum(axis=1)


def reference_sample(weights: np.ndarray, ids: np.ndarray, seed: int) -> int:
    """Inverse-CDF draw over ``ids`` with a PCG64 generator seeded by ``seed``.

    One uniform number is consumed; ``ids`` are walked in the given order.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random()
    cdf = np.cumsum(np.asarray(weights, dtype=np.float64))
    index = int(np.searchsorted(cdf / cdf[-1], u, side="right"))
    return int(ids[min(index, len(ids) - 1)])


def decode_step(req: DecodeRequest, table: NeighborTable, partition: VocabPartition) -> StepOutcome:
    """Run one step.

    T=0 is greedy deferral. A candidate set touching U defers to the reference
    sampler over the renormalized filtered distribution. Otherwise the token is
    the best-scoring candidate (lowest id on ties) or a draw from
    ``softmax(Score / score_temperature)``.

    Raises:
        ValidationError: logits length differs from the partition's V_emb, or
            ``k_prime`` exceeds the table's K.
    """
    if req.logits.size != partition.v_emb:
        raise ValidationError(f"logits length {req.logits.size} != V_emb {partition.v_emb}",
                              field_name="logits_len")
    if req.keep.kind == "top_k_prime" and req.keep.k_prime > table.k:
        raise ValidationError(f"k_prime {req.keep.k_prime} > table K {table.k}", field_name="keep")

    if req.temperature == 0:
        token = int(np.argmax(req.logits))
        outcome = StepOutcome(token=token, deferred=True, candidates=[Candidate(token, 1.0, 1.0)])
        logger.log_decode("Greedy step", req.request_id, True, 1, 0)
        return outcome

    p = softmax_probs(req.logits, req.temperature)
    candidates = apply_filter(p, req.filter)
    cand_p = p[candidates]

    if not partition.content_mask[candidates].all():
        renorm = cand_p / cand_p.sum()
        if req.seed is None:
            logger.debug("Deferred step without a seed samples with seed 0", LogCategory.DECODE,
                         context={"select": req.select}, correlation_id=req.request_id)
        token = reference_sample(renorm, candidates, req.effective_seed)
        outcome = StepOutcome(
            token=token,
            deferred=True,
            candidates=[Candidate(int(c), float(q), float(r)) for c, q, r in zip(candidates, cand_p, renorm)],
        )
        logger.log_decode("Deferred step", req.request_id, True, len(candidates), 0)
        return outcome

    counter = LookupCounter()
    scores = semantic_scores(candidates, p, table, req.keep, counter)
    if req.select == "argmax":
        best = np.flatnonzero(scores == scores.max())
        token = int(candidates[best].min())
    else:
        token = reference_sample(softmax_probs(scores, req.score_temperature), candidates, req.effective_seed)

    outcome = StepOutcome(
        token=token,
        deferred=False,
        candidates=[Candidate(int(c), float(q), float(s)) for c, q, s in zip(candidates, cand_p, scores)],
        lookups=counter.count,
    )
    logger.log_decode("Rescored step", req.request_id, False, len(candidates), counter.count)
    return outcome
