"""Unit tests for SEMB embedding files, tokenizer metadata and the vocabulary partition."""

import json
import struct

import numpy as np
import pytest

from semsam_bench.embeddings import (
    SEMB_HEADER_SIZE, EmbeddingMatrix, TokenizerMeta, encode_embeddings,
    load_embeddings, load_tokenizer_meta, parse_tokenizer_meta, save_embeddings
)
from semsam_bench.errors import FormatError, ValidationError
from semsam_bench.vocab import VocabPartition, build_partition


class TestEmbeddingMatrix:
    """Test the in-memory embedding matrix."""

    def test_shape_properties(self):
        """Test rows and dim reflect the array shape."""
        m = EmbeddingMatrix(np.zeros((5, 3)))
        assert m.rows == 5
        assert m.dim == 3
        assert m.data.dtype == np.float32

    def test_rejects_non_finite(self):
        """Test NaN entries are rejected with their position."""
        data = np.ones((3, 2), dtype=np.float32)
        data[1, 1] = np.nan
        with pytest.raises(ValidationError, match="row 1, column 1"):
            EmbeddingMatrix(data)

    def test_rejects_wrong_rank(self):
        """Test 1-D input is rejected."""
        with pytest.raises(ValidationError, match="2-D"):
            EmbeddingMatrix(np.ones(4))

    def test_data_is_read_only(self):
        """Test the stored array cannot be mutated."""
        m = EmbeddingMatrix(np.ones((2, 2)))
        with pytest.raises(ValueError):
            m.data[0, 0] = 5.0


class TestSembFiles:
    """Test reading and writing SEMB files."""

    def test_header_layout(self):
        """Test the 25-byte little-endian header."""
        payload = encode_embeddings(EmbeddingMatrix(np.arange(6, dtype=np.float32).reshape(2, 3)))
        assert SEMB_HEADER_SIZE == 25
        assert payload[:4] == b"SEMB"
        assert struct.unpack_from("<IQQB", payload, 4) == (1, 2, 3, 0)
        assert len(payload) == 25 + 6 * 4

    def test_save_and_load(self, tmp_path):
        """Test a saved matrix loads back bitwise equal."""
        rng = np.random.default_rng(0)
        m = EmbeddingMatrix(rng.standard_normal((7, 4)).astype(np.float32))
        path = tmp_path / "emb.semb"
        save_embeddings(m, path)
        assert load_embeddings(path).equals(m)

    def test_equal_matrices_give_equal_bytes(self, tmp_path):
        """Test serialization is deterministic."""
        data = np.linspace(-1, 1, 12, dtype=np.float32).reshape(4, 3)
        save_embeddings(EmbeddingMatrix(data), tmp_path / "a.semb")
        save_embeddings(EmbeddingMatrix(data.copy()), tmp_path / "b.semb")
        assert (tmp_path / "a.semb").read_bytes() == (tmp_path / "b.semb").read_bytes()

    def test_bad_magic(self, tmp_path):
        """Test a wrong magic is reported at offset 0."""
        path = tmp_path / "bad.semb"
        path.write_bytes(b"XXXX" + bytes(21))
        with pytest.raises(FormatError) as exc_info:
            load_embeddings(path)
        assert exc_info.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        """Test a short payload is reported at the end of the file."""
        payload = encode_embeddings(EmbeddingMatrix(np.ones((3, 2))))
        path = tmp_path / "short.semb"
        path.write_bytes(payload[:-4])
        with pytest.raises(FormatError, match="truncated") as exc_info:
            load_embeddings(path)
        assert exc_info.value.offset == len(payload) - 4

    def test_header_only(self, tmp_path):
        """Test a file ending right after the header names the first missing payload byte."""
        payload = encode_embeddings(EmbeddingMatrix(np.eye(3, 4)))
        path = tmp_path / "header.semb"
        path.write_bytes(payload[:SEMB_HEADER_SIZE])
        with pytest.raises(FormatError, match=f"truncated at offset {SEMB_HEADER_SIZE}") as exc_info:
            load_embeddings(path)
        assert exc_info.value.offset == SEMB_HEADER_SIZE == 25

    def test_trailing_bytes(self, tmp_path):
        """Test extra bytes after the payload are rejected."""
        payload = encode_embeddings(EmbeddingMatrix(np.ones((1, 1))))
        path = tmp_path / "long.semb"
        path.write_bytes(payload + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_embeddings(path)

    def test_unsupported_version(self, tmp_path):
        """Test a version other than 1 is rejected at offset 4."""
        payload = bytearray(encode_embeddings(EmbeddingMatrix(np.ones((1, 1)))))
        struct.pack_into("<I", payload, 4, 2)
        path = tmp_path / "v2.semb"
        path.write_bytes(bytes(payload))
        with pytest.raises(FormatError) as exc_info:
            load_embeddings(path)
        assert exc_info.value.offset == 4

    def test_non_finite_value_offset(self, tmp_path):
        """Test a NaN in the payload is reported at its byte offset."""
        payload = bytearray(encode_embeddings(EmbeddingMatrix(np.zeros((2, 2)))))
        struct.pack_into("<f", payload, SEMB_HEADER_SIZE + 8, float("nan"))
        path = tmp_path / "nan.semb"
        path.write_bytes(bytes(payload))
        with pytest.raises(FormatError) as exc_info:
            load_embeddings(path)
        assert exc_info.value.offset == SEMB_HEADER_SIZE + 8


class TestTokenizerMeta:
    """Test tokenizer metadata parsing."""

    def test_parse(self):
        """Test a well-formed object parses into frozen id sets."""
        meta = parse_tokenizer_meta({"v_tok": 10, "special_ids": [0, 1], "added_ids": [9]})
        assert meta.v_tok == 10
        assert meta.reserved_ids == frozenset({0, 1, 9})
        assert meta.control_ids == frozenset()

    def test_id_out_of_range(self):
        """Test ids at or above v_tok are rejected."""
        with pytest.raises(ValidationError, match="v_tok"):
            TokenizerMeta(v_tok=4, special_ids=frozenset({4}))

    def test_ids_must_be_integers(self):
        """Test non-integer id lists are rejected."""
        with pytest.raises(ValidationError, match="special_ids"):
            parse_tokenizer_meta({"v_tok": 4, "special_ids": ["a"]})

    def test_load_malformed_json(self, tmp_path):
        """Test malformed JSON raises FormatError."""
        path = tmp_path / "meta.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(FormatError):
            load_tokenizer_meta(path)

    def test_load(self, tmp_path):
        """Test loading from a file."""
        path = tmp_path / "meta.json"
        path.write_text(json.dumps({"v_tok": 6, "control_ids": [5]}), encoding="utf-8")
        assert load_tokenizer_meta(path).control_ids == frozenset({5})


class TestVocabPartition:
    """Test splitting embedding rows into content and non-content tokens."""

    def test_padding_rows_are_non_content(self):
        """Test rows at or above v_tok land in U."""
        meta = TokenizerMeta(v_tok=6, special_ids=frozenset({0}), added_ids=frozenset({5}))
        partition = build_partition(meta, v_emb=8)
        assert partition.content_ids.tolist() == [1, 2, 3, 4]
        assert partition.non_content_ids.tolist() == [0, 5, 6, 7]
        assert partition.n_content == 4

    def test_extra_exclusions(self):
        """Test caller exclusions are added to U."""
        partition = build_partition(TokenizerMeta(v_tok=4), 4, extra_exclusions=[2])
        assert partition.content_ids.tolist() == [0, 1, 3]

    def test_is_content(self):
        """Test membership queries and range checks."""
        partition = build_partition(TokenizerMeta(v_tok=3, special_ids=frozenset({1})), 3)
        assert partition.is_content(0)
        assert not partition.is_content(1)
        with pytest.raises(ValidationError):
            partition.is_content(3)

    def test_v_emb_smaller_than_v_tok(self):
        """Test an embedding table smaller than the tokenizer is rejected."""
        with pytest.raises(ValidationError, match="v_emb"):
            build_partition(TokenizerMeta(v_tok=10), 8)

    def test_partitions_are_disjoint_and_complete(self):
        """Test C and U cover every row exactly once."""
        meta = TokenizerMeta(v_tok=20, special_ids=frozenset({0, 3}), control_ids=frozenset({19}))
        partition = build_partition(meta, 24)
        c, u = set(partition.content_ids.tolist()), set(partition.non_content_ids.tolist())
        assert c.isdisjoint(u)
        assert c | u == set(range(24))

    def test_json_round_trip(self, tmp_path):
        """Test a saved partition reloads identically."""
        partition = build_partition(TokenizerMeta(v_tok=5, special_ids=frozenset({2})), 7)
        path = tmp_path / "partition.json"
        partition.save(path)
        restored = VocabPartition.from_json(path.read_text(encoding="utf-8"))
        assert restored.content_ids.tolist() == partition.content_ids.tolist()
        assert restored.v_emb == 7

    def test_inconsistent_json(self):
        """Test content_ids that are not the complement of U are rejected."""
        text = json.dumps({"v_emb": 3, "content_ids": [0], "non_content_ids": [2]})
        with pytest.raises(ValidationError, match="complement"):
            VocabPartition.from_json(text)
