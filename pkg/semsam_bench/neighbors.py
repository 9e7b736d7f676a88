"""Exact cosine K-nearest-neighbor tables over content-token embeddings.

SEMN layout, little-endian::

    magic "SEMN" | u32 version=1 | u64 n | u32 k
    n u32 content ids (sorted) | n*k u32 s_tid | n*k f32 s_val
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .config import NeighborBuildConfig
from .embeddings import EmbeddingMatrix
from .errors import ArtifactIOError, ContractError, FormatError, ValidationError
from .logging import get_logger, performance_monitor
from .vocab import VocabPartition

SEMN_MAGIC = b"SEMN"
SEMN_VERSION = 1
SEMN_HEADER = struct.Struct("<4sIQI")
SEMN_HEADER_SIZE = SEMN_HEADER.size  # 20

# extra columns pulled by argpartition so boundary ties are resolved exactly
TIE_MARGIN = 16

_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")

logger = get_logger("neighbors")


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """Per-content-token neighbor ids (``s_tid``) and cosines (``s_val``).

    Row ``i`` belongs to token ``content_ids[i]``; slot 0 is always the token
    itself and holds its self cosine. Slots 1.. hold the exact cosine except
    where rounding puts a neighbor above the self cosine (a near-duplicate
    embedding); those values are capped at slot 0 so every row is
    non-increasing. Values are not clamped to [0, 1] here.
    """
    content_ids: np.ndarray
    k: int
    s_tid: np.ndarray
    s_val: np.ndarray

    def __post_init__(self):
        content_ids = np.ascontiguousarray(self.content_ids, dtype=_U32)
        s_tid = np.ascontiguousarray(self.s_tid, dtype=_U32)
        s_val = np.ascontiguousarray(self.s_val, dtype=_F32)
        n = content_ids.size
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}", field_name="k")
        if s_tid.shape != (n, self.k) or s_val.shape != (n, self.k):
            raise ValidationError(
                f"table shapes {s_tid.shape}/{s_val.shape} do not match ({n}, {self.k})",
                field_name="s_tid")
        if n > 1 and not np.all(content_ids[1:] > content_ids[:-1]):
            raise ValidationError("content_ids must be strictly increasing", field_name="content_ids")
        if n and not np.array_equal(s_tid[:, 0], content_ids):
            raise ValidationError("slot 0 of every row must be the row's own id", field_name="s_tid")
        for array in (content_ids, s_tid, s_val):
            array.setflags(write=False)
        object.__setattr__(self, "content_ids", content_ids)
        object.__setattr__(self, "s_tid", s_tid)
        object.__setattr__(self, "s_val", s_val)

    @property
    def n(self) -> int:
        return int(self.content_ids.size)

    def rows_of(self, token_ids: Union[int, Sequence[int], np.ndarray]) -> np.ndarray:
        """Map token ids to table rows.

        Raises:
            ContractError: an id is not a content token of this table.
        """
        ids = np.atleast_1d(np.asarray(token_ids, dtype=np.int64))
        rows = np.searchsorted(self.content_ids, ids)
        valid = rows < self.n
        valid[valid] = self.content_ids[rows[valid]] == ids[valid]
        if not valid.all():
            bad = int(ids[~valid][0])
            raise ContractError(f"token {bad} has no neighbor row (not a content token)")
        return rows

    def same_domain(self, other: 'NeighborTable') -> bool:
        """True when both tables cover the same content ids with the same K.

        Tables rebuilt from another checkpoint of one tokenizer share their
        domain, so neighbor ids can be reused across them.
        """
        return self.k == other.k and np.array_equal(self.content_ids, other.content_ids)

    def built_for(self, partition: VocabPartition) -> bool:
        """True when the rows are exactly the partition's content tokens."""
        return np.array_equal(self.content_ids, partition.content_ids)

    def equals(self, other: 'NeighborTable') -> bool:
        """Bitwise equality of ids and values."""
        return (self.same_domain(other)
                and np.array_equal(self.s_tid, other.s_tid)
                and self.s_val.tobytes() == other.s_val.tobytes())


def normalize_rows(
    e: EmbeddingMatrix,
    c: Union[Sequence[int], np.ndarray],
    epsilon: float = 1e-8,
    dtype: str = "float64"
) -> np.ndarray:
    """Rows ``E[c[i]] / (||E[c[i]]|| + epsilon)``; zero rows stay zero."""
    rows = e.data[np.asarray(c, dtype=np.int64)].astype(dtype)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / (norms + epsilon)


def _rank_block(sims: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k largest values per row, ties by ascending column."""
    n_rows, n_cols = sims.shape
    window = min(n_cols, k + TIE_MARGIN)
    if window == n_cols:
        part = np.broadcast_to(np.arange(n_cols), (n_rows, n_cols))
    else:
        part = np.argpartition(-sims, window - 1, axis=1)[:, :window]
    part_vals = np.take_along_axis(sims, part, axis=1)
    order = np.lexsort((part, -part_vals), axis=-1)
    ranked = np.take_along_axis(part, order, axis=1)[:, :k]

    if window < n_cols:
        # a tie at the K-th value reaching the window edge may continue outside it
        sorted_vals = np.take_along_axis(part_vals, order, axis=1)
        spill = np.flatnonzero(sorted_vals[:, k - 1] == sorted_vals[:, -1])
        if spill.size:
            ranked = ranked.copy()
            columns = np.arange(n_cols)
            for r in spill:
                ranked[r] = np.lexsort((columns, -sims[r]))[:k]
    return ranked


def _fill_block(
    unit: np.ndarray,
    content_ids: np.ndarray,
    start: int,
    stop: int,
    k: int,
    s_tid: np.ndarray,
    s_val: np.ndarray
) -> None:
    sims = unit[start:stop] @ unit.T
    local = np.arange(stop - start)
    self_cols = start + local
    self_vals = sims[local, self_cols].copy()
    # self is pinned to slot 0 even when the row is all zeros
    sims[local, self_cols] = np.inf

    cols = _rank_block(sims, k)
    vals = np.take_along_axis(sims, cols, axis=1)
    vals[:, 0] = self_vals
    if k > 1:
        # rows stay non-increasing when a near-duplicate rounds above self
        vals[:, 1:] = np.minimum(vals[:, 1:], self_vals[:, None])

    s_tid[start:stop] = content_ids[cols]
    s_val[start:stop] = vals.astype(_F32)


@performance_monitor("build_neighbor_table", "neighbors")
def build_neighbor_table(
    e: EmbeddingMatrix,
    p: VocabPartition,
    cfg: NeighborBuildConfig
) -> NeighborTable:
    """Exact top-K cosine neighbors of every content token, within C.

    Ties are broken by ascending token id. The result does not depend on
    ``block_size`` or ``workers``.

    Raises:
        ValidationError: ``cfg.k`` exceeds |C| or the partition does not
            describe ``e``.
    """
    if p.v_emb != e.rows:
        raise ValidationError(f"partition covers {p.v_emb} rows, embeddings have {e.rows}",
                              field_name="v_emb")
    n = p.n_content
    if cfg.k > n:
        raise ValidationError(f"k {cfg.k} > |C| {n}", field_name="k")

    content_ids = p.content_ids
    unit = normalize_rows(e, content_ids, cfg.epsilon, cfg.dtype)
    s_tid = np.empty((n, cfg.k), dtype=_U32)
    s_val = np.empty((n, cfg.k), dtype=_F32)

    blocks = [(start, min(start + cfg.block_size, n)) for start in range(0, n, cfg.block_size)]
    logger.log_build("Building neighbor table", rows=n, k=cfg.k,
                     block_size=cfg.block_size, workers=cfg.workers)

    def run(bounds):
        _fill_block(unit, content_ids, bounds[0], bounds[1], cfg.k, s_tid, s_val)

    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(run, blocks))
    else:
        for bounds in blocks:
            run(bounds)

    return NeighborTable(content_ids=content_ids, k=cfg.k, s_tid=s_tid, s_val=s_val)


def encode_table(table: NeighborTable) -> bytes:
    header = SEMN_HEADER.pack(SEMN_MAGIC, SEMN_VERSION, table.n, table.k)
    return b"".join((
        header,
        table.content_ids.astype(_U32, copy=False).tobytes(),
        table.s_tid.astype(_U32, copy=False).tobytes(),
        table.s_val.astype(_F32, copy=False).tobytes(),
    ))


def save_table(table: NeighborTable, path: Union[str, Path]) -> None:
    """Write a SEMN file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_table(table))
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)
    logger.log_artifact("Saved neighbor table", "semn", str(path), n=table.n, k=table.k)


def load_table(path: Union[str, Path]) -> NeighborTable:
    """Read a SEMN file.

    Raises:
        FormatError: bad magic, unsupported version, or a payload length that
            disagrees with the header's n and k.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)

    if raw[:4] != SEMN_MAGIC:
        raise FormatError("bad magic at offset 0", path=str(path), offset=0)
    if len(raw) < SEMN_HEADER_SIZE:
        raise FormatError(f"truncated at offset {len(raw)}", path=str(path), offset=len(raw))
    _, version, n, k = SEMN_HEADER.unpack_from(raw, 0)
    if version != SEMN_VERSION:
        raise FormatError(f"unsupported version {version} at offset 4", path=str(path), offset=4)

    expected = SEMN_HEADER_SIZE + 4 * n + 8 * n * k
    if len(raw) != expected:
        offset = min(len(raw), expected)
        raise FormatError(
            f"payload size {len(raw)} does not match n={n}, k={k} (expected {expected}) at offset {offset}",
            path=str(path), offset=offset)

    pos = SEMN_HEADER_SIZE
    content_ids = np.frombuffer(raw, dtype=_U32, count=n, offset=pos)
    pos += 4 * n
    s_tid = np.frombuffer(raw, dtype=_U32, count=n * k, offset=pos).reshape(n, k)
    pos += 4 * n * k
    s_val = np.frombuffer(raw, dtype=_F32, count=n * k, offset=pos).reshape(n, k)

    try:
        table = NeighborTable(content_ids=content_ids, k=k, s_tid=s_tid, s_val=s_val)
    except ValidationError as e:
        raise FormatError(f"inconsistent table: {e.message}", path=str(path), cause=e)
    logger.log_artifact("Loaded neighbor table", "semn", str(path), n=n, k=k)
    return table
