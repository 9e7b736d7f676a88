"""Partition of embedding rows into content tokens C and non-content tokens U."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .embeddings import TokenizerMeta
from .errors import ArtifactIOError, FormatError, ValidationError


@dataclass(frozen=True, eq=False)
class VocabPartition:
    """C and U as sorted id arrays plus an O(1) membership bitmap.

    U holds the tokenizer's special, added and control ids, any extra
    exclusions, and every embedding row at or above ``v_tok``.
    """
    v_emb: int
    content_ids: np.ndarray
    non_content_ids: np.ndarray
    content_mask: np.ndarray

    @classmethod
    def from_non_content(cls, v_emb: int, non_content: Iterable[int]) -> 'VocabPartition':
        mask = np.ones(v_emb, dtype=bool)
        u = np.unique(np.fromiter(non_content, dtype=np.int64))
        if u.size and (u[0] < 0 or u[-1] >= v_emb):
            raise ValidationError(f"non-content id outside [0, {v_emb})", field_name="non_content_ids")
        mask[u] = False
        content = np.flatnonzero(mask).astype(np.int64)
        for array in (mask, content, u):
            array.setflags(write=False)
        return cls(v_emb=v_emb, content_ids=content, non_content_ids=u, content_mask=mask)

    @property
    def n_content(self) -> int:
        return int(self.content_ids.size)

    def is_content(self, token_id: int) -> bool:
        """True iff ``token_id`` is a content token."""
        if not 0 <= token_id < self.v_emb:
            raise ValidationError(f"id {token_id} out of range [0, {self.v_emb})", field_name="id")
        return bool(self.content_mask[token_id])

    def to_json(self) -> str:
        return json.dumps({
            "v_emb": self.v_emb,
            "content_ids": self.content_ids.tolist(),
            "non_content_ids": self.non_content_ids.tolist(),
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> 'VocabPartition':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"parse error: {e.msg}", offset=e.pos, cause=e)
        partition = cls.from_non_content(int(data["v_emb"]), data["non_content_ids"])
        if partition.content_ids.tolist() != list(data["content_ids"]):
            raise ValidationError("content_ids is not the complement of non_content_ids")
        return partition

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_json(), encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)


def build_partition(
    meta: TokenizerMeta,
    v_emb: int,
    extra_exclusions: Iterable[int] = ()
) -> VocabPartition:
    """U = special ∪ added ∪ control ∪ extra ∪ [v_tok, v_emb); C = complement."""
    if v_emb < meta.v_tok:
        raise ValidationError(f"v_emb {v_emb} < v_tok {meta.v_tok}", field_name="v_emb")
    non_content = set(meta.reserved_ids)
    non_content.update(int(i) for i in extra_exclusions)
    non_content.update(range(meta.v_tok, v_emb))
    return VocabPartition.from_non_content(v_emb, non_content)
