"""Token-embedding matrices (SEMB files) and tokenizer metadata.

SEMB layout, little-endian::

    magic "SEMB" | u32 version=1 | u64 rows | u64 dim | u8 dtype=0 (f32)
    rows * dim f32, row-major

The header is exactly 25 bytes.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, Iterable, Union

import numpy as np

from .errors import ArtifactIOError, FormatError, ValidationError
from .logging import get_logger

SEMB_MAGIC = b"SEMB"
SEMB_VERSION = 1
SEMB_DTYPE_F32 = 0
SEMB_HEADER = struct.Struct("<4sIQQB")
SEMB_HEADER_SIZE = SEMB_HEADER.size  # 25

_F32 = np.dtype("<f4")

logger = get_logger("embeddings")


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Dense row-major token-embedding table of shape (rows, dim)."""
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=_F32)
        if data.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got {data.ndim}-D", field_name="data")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"embedding matrix must be non-empty, got shape {data.shape}",
                                  field_name="data")
        finite = np.isfinite(data)
        if not finite.all():
            row, col = np.argwhere(~finite)[0]
            raise ValidationError(f"non-finite value at row {row}, column {col}", field_name="data")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def equals(self, other: 'EmbeddingMatrix') -> bool:
        """Bitwise equality."""
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()


@dataclass(frozen=True)
class TokenizerMeta:
    """Tokenizer vocabulary size and the ids that are not ordinary text."""
    v_tok: int
    special_ids: FrozenSet[int] = field(default_factory=frozenset)
    added_ids: FrozenSet[int] = field(default_factory=frozenset)
    control_ids: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.v_tok < 1:
            raise ValidationError(f"v_tok must be >= 1, got {self.v_tok}", field_name="v_tok")
        for name in ("special_ids", "added_ids", "control_ids"):
            ids = frozenset(int(i) for i in getattr(self, name))
            object.__setattr__(self, name, ids)
            for token_id in sorted(ids):
                if token_id < 0:
                    raise ValidationError(f"id {token_id} is negative", field_name=name)
                if token_id >= self.v_tok:
                    raise ValidationError(f"id {token_id} ≥ v_tok {self.v_tok}", field_name=name)

    @property
    def reserved_ids(self) -> FrozenSet[int]:
        """Union of special, added and control ids."""
        return self.special_ids | self.added_ids | self.control_ids

    def to_dict(self) -> dict:
        return {
            "v_tok": self.v_tok,
            "special_ids": sorted(self.special_ids),
            "added_ids": sorted(self.added_ids),
            "control_ids": sorted(self.control_ids),
        }


def load_embeddings(path: Union[str, Path]) -> EmbeddingMatrix:
    """Load a SEMB file.

    Raises:
        FormatError: bad magic, unsupported version/dtype, truncated payload or
            a non-finite value; the message names the byte offset.
        ArtifactIOError: the file cannot be read.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)

    if raw[:4] != SEMB_MAGIC[:len(raw[:4])] or (len(raw) >= 4 and raw[:4] != SEMB_MAGIC):
        raise FormatError("bad magic at offset 0", path=str(path), offset=0)
    if len(raw) < SEMB_HEADER_SIZE:
        raise FormatError(f"truncated at offset {len(raw)}", path=str(path), offset=len(raw))

    _, version, rows, dim, dtype = SEMB_HEADER.unpack_from(raw, 0)
    if version != SEMB_VERSION:
        raise FormatError(f"unsupported version {version} at offset 4", path=str(path), offset=4)
    if dtype != SEMB_DTYPE_F32:
        raise FormatError(f"unsupported dtype {dtype} at offset 24", path=str(path), offset=24)
    if rows < 1 or dim < 1:
        raise FormatError(f"empty matrix {rows}x{dim} at offset 8", path=str(path), offset=8)

    expected = SEMB_HEADER_SIZE + rows * dim * 4
    if len(raw) < expected:
        raise FormatError(f"truncated at offset {len(raw)}", path=str(path), offset=len(raw))
    if len(raw) > expected:
        raise FormatError(f"trailing bytes at offset {expected}", path=str(path), offset=expected)

    values = np.frombuffer(raw, dtype=_F32, count=rows * dim, offset=SEMB_HEADER_SIZE)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        offset = SEMB_HEADER_SIZE + int(bad[0]) * 4
        raise FormatError(f"non-finite value at offset {offset}", path=str(path), offset=offset)

    matrix = EmbeddingMatrix(values.reshape(rows, dim))
    logger.log_artifact("Loaded embeddings", "semb", str(path), rows=rows, dim=dim)
    return matrix


def encode_embeddings(m: EmbeddingMatrix) -> bytes:
    """Serialize a matrix to SEMB bytes."""
    header = SEMB_HEADER.pack(SEMB_MAGIC, SEMB_VERSION, m.rows, m.dim, SEMB_DTYPE_F32)
    return header + m.data.astype(_F32, copy=False).tobytes(order="C")


def save_embeddings(m: EmbeddingMatrix, path: Union[str, Path]) -> None:
    """Write a SEMB file; equal matrices produce equal bytes."""
    if not isinstance(m, EmbeddingMatrix):
        m = EmbeddingMatrix(np.asarray(m))
    path = Path(path)
    payload = encode_embeddings(m)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)
    logger.log_artifact("Saved embeddings", "semb", str(path), rows=m.rows, dim=m.dim)


def _id_list(data: dict, key: str) -> Iterable[int]:
    values = data.get(key, [])
    if not isinstance(values, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        raise ValidationError(f"{key} must be a list of integers", field_name=key)
    return values


def parse_tokenizer_meta(data: dict) -> TokenizerMeta:
    """Build TokenizerMeta from an already-decoded JSON object."""
    if not isinstance(data, dict):
        raise ValidationError("tokenizer metadata must be a JSON object")
    v_tok = data.get("v_tok")
    if not isinstance(v_tok, int) or isinstance(v_tok, bool):
        raise ValidationError("v_tok must be an integer", field_name="v_tok")
    return TokenizerMeta(
        v_tok=v_tok,
        special_ids=frozenset(_id_list(data, "special_ids")),
        added_ids=frozenset(_id_list(data, "added_ids")),
        control_ids=frozenset(_id_list(data, "control_ids")),
    )


def load_tokenizer_meta(path: Union[str, Path]) -> TokenizerMeta:
    """Load tokenizer metadata JSON: ``{"v_tok", "special_ids", "added_ids"}``.

    Raises:
        FormatError: malformed JSON.
        ValidationError: an id is negative or not below v_tok.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"parse error: {e.msg} at offset {e.pos}", path=str(path), offset=e.pos, cause=e)

    meta = parse_tokenizer_meta(data)
    logger.log_artifact("Loaded tokenizer metadata", "tokenizer_meta", str(path),
                        v_tok=meta.v_tok, reserved=len(meta.reserved_ids))
    return meta
