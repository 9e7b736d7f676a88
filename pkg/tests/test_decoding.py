"""Unit tests for one decoding step with semantic-neighborhood rescoring."""

import json
import logging
import time

import numpy as np
import pytest

from semsam_bench.config import NeighborBuildConfig
from semsam_bench.decoding import (
    DecodeRequest, FilterSpec, KeepSpec, LookupCounter, apply_filter, decode_step,
    reference_sample, semantic_scores, softmax_probs
)
from semsam_bench.embeddings import EmbeddingMatrix, TokenizerMeta
from semsam_bench.errors import ContractError, ValidationError
from semsam_bench.logging import LogLevel, SemsamLogger, initialize_logging
from semsam_bench.neighbors import NeighborTable, build_neighbor_table
from semsam_bench.vocab import build_partition


def random_table(rng, v, k, special=()):
    data = rng.standard_normal((v, 8)).astype(np.float32)
    partition = build_partition(TokenizerMeta(v_tok=v, special_ids=frozenset(special)), v)
    table = build_neighbor_table(EmbeddingMatrix(data), partition, NeighborBuildConfig(k=k))
    return data, table, partition


def toy_table():
    """Three content tokens: a={a, c(0.9)}, b={b, a(0.1)}, c={c, a(0.9)}."""
    table = NeighborTable(
        content_ids=np.array([0, 1, 2]), k=2,
        s_tid=np.array([[0, 2], [1, 0], [2, 0]]),
        s_val=np.array([[1.0, 0.9], [1.0, 0.1], [1.0, 0.9]]),
    )
    return table, build_partition(TokenizerMeta(v_tok=3), 3)


def request(logits, temperature=1.0, f=None, keep=None, select="argmax", seed=None):
    return DecodeRequest(
        logits=np.asarray(logits, dtype=np.float32),
        temperature=temperature,
        filter=f or FilterSpec.top_m(50),
        keep=keep or KeepSpec.top_k_prime(1),
        select=select,
        seed=seed,
    )


class TestSpecs:
    """Test filter, keep and request validation."""

    def test_filter_needs_exactly_one_parameter(self):
        """Test top_m with p set is rejected."""
        with pytest.raises(ValidationError):
            FilterSpec(kind="top_m", m=3, p=0.5)

    def test_filter_ranges(self):
        """Test out-of-range m and p are rejected."""
        with pytest.raises(ValidationError):
            FilterSpec.top_m(0)
        with pytest.raises(ValidationError):
            FilterSpec.top_p(0.0)
        with pytest.raises(ValidationError):
            FilterSpec.top_p(1.5)

    def test_keep_ranges(self):
        """Test k_prime below 1 and thresholds at -1 are rejected."""
        with pytest.raises(ValidationError):
            KeepSpec.top_k_prime(0)
        with pytest.raises(ValidationError):
            KeepSpec.threshold(-1.0)
        assert KeepSpec.threshold(1.5).sim_threshold == 1.5

    def test_sample_requires_seed(self):
        """Test sample mode without a seed is rejected."""
        with pytest.raises(ValidationError, match="seed") as exc_info:
            request([0.0, 1.0], select="sample")
        assert exc_info.value.field_name == "seed"

    def test_non_finite_logits(self):
        """Test NaN logits are rejected."""
        with pytest.raises(ValidationError) as exc_info:
            request([0.0, float("nan")])
        assert exc_info.value.field_name == "logits"

    def test_negative_temperature(self):
        """Test a negative temperature is rejected."""
        with pytest.raises(ValidationError):
            request([0.0, 1.0], temperature=-0.5)


class TestSoftmaxAndFilter:
    """Test temperature softmax and truncation filters."""

    def test_softmax_values(self):
        """Test a hand-computed distribution."""
        p = softmax_probs(np.array([2.0, 1.0, 0.0]), 1.0)
        np.testing.assert_allclose(p, [0.66524, 0.24473, 0.09003], atol=1e-4)
        assert abs(p.sum() - 1.0) < 1e-6

    def test_softmax_uniform(self):
        """Test equal logits give a uniform distribution at any temperature."""
        np.testing.assert_allclose(softmax_probs(np.full(8, 3.0), 0.3), np.full(8, 1 / 8))

    def test_softmax_stable(self):
        """Test large gaps do not overflow."""
        p = softmax_probs(np.array([1000.0, 0.0, -1000.0]), 1.0)
        assert np.isfinite(p).all()
        assert p[0] == pytest.approx(1.0)

    def test_softmax_rejects_zero_temperature(self):
        """Test T=0 is left to the step operation."""
        with pytest.raises(ValidationError):
            softmax_probs(np.zeros(3), 0.0)

    def test_top_p(self):
        """Test the smallest prefix reaching the mass."""
        p = softmax_probs(np.array([2.0, 1.0, 0.0]), 1.0)
        assert apply_filter(p, FilterSpec.top_p(0.9)).tolist() == [0, 1]

    def test_top_p_one_keeps_all_positive(self):
        """Test p=1 keeps every id with non-zero probability."""
        p = np.array([0.5, 0.0, 0.25, 0.25])
        assert sorted(apply_filter(p, FilterSpec.top_p(1.0)).tolist()) == [0, 2, 3]

    def test_top_m_one_is_argmax(self):
        """Test m=1 keeps the most probable id."""
        p = softmax_probs(np.array([0.1, 3.0, 0.2]), 1.0)
        assert apply_filter(p, FilterSpec.top_m(1)).tolist() == [1]

    def test_ties_by_ascending_id(self):
        """Test equal probabilities rank lower ids first."""
        p = np.array([0.1, 0.3, 0.3, 0.3])
        assert apply_filter(p, FilterSpec.top_m(2)).tolist() == [1, 2]

    def test_top_p_large_vocabulary(self):
        """Test top-p beyond the first window grows until the mass is covered."""
        p = np.full(1000, 1 / 1000)
        assert apply_filter(p, FilterSpec.top_p(0.5005)).size == 501


class TestSemanticScores:
    """Test neighborhood-aggregated scores."""

    def test_self_only_equals_probability(self):
        """Test keeping only slot 0 returns p."""
        table, _ = toy_table()
        p = np.array([0.3, 0.4, 0.3])
        scores = semantic_scores(np.array([0, 1, 2]), p, table, KeepSpec.top_k_prime(1))
        np.testing.assert_allclose(scores, p)

    def test_hand_evaluated_score(self):
        """Test 0.3 + 0.8 * 0.4."""
        table = NeighborTable(content_ids=np.array([0, 1]), k=2,
                              s_tid=np.array([[0, 1], [1, 0]]), s_val=np.array([[1.0, 0.8], [1.0, 0.8]]))
        score = semantic_scores(np.array([0]), np.array([0.3, 0.4]), table, KeepSpec.top_k_prime(2))
        assert score[0] == pytest.approx(0.62, abs=1e-6)

    def test_negative_similarity_clamped(self):
        """Test negative neighbors contribute nothing."""
        table = NeighborTable(content_ids=np.array([0, 1]), k=2,
                              s_tid=np.array([[0, 1], [1, 0]]), s_val=np.array([[1.0, -0.5], [1.0, -0.5]]))
        score = semantic_scores(np.array([0]), np.array([0.3, 0.7]), table, KeepSpec.top_k_prime(2))
        assert score[0] == pytest.approx(0.3)

    def test_threshold_prefix_keeps_self(self):
        """Test a threshold above 1 still keeps slot 0."""
        table, _ = toy_table()
        p = np.array([0.3, 0.4, 0.3])
        scores = semantic_scores(np.array([0, 1, 2]), p, table, KeepSpec.threshold(1.5))
        np.testing.assert_allclose(scores, p)

    def test_threshold_stops_at_first_miss(self):
        """Test the kept set is a prefix of the row."""
        table = NeighborTable(content_ids=np.array([0, 1, 2]), k=3,
                              s_tid=np.array([[0, 1, 2], [1, 0, 2], [2, 0, 1]]),
                              s_val=np.array([[1.0, 0.2, 0.9], [1.0, 0.2, 0.1], [1.0, 0.9, 0.2]]))
        p = np.array([0.2, 0.5, 0.3])
        score = semantic_scores(np.array([0]), p, table, KeepSpec.threshold(0.5))
        assert score[0] == pytest.approx(0.2)

    def test_non_content_candidate(self):
        """Test scoring a token without a neighbor row is a contract violation."""
        table, _ = toy_table()
        with pytest.raises(ContractError):
            semantic_scores(np.array([3]), np.full(4, 0.25), table, KeepSpec.top_k_prime(1))

    def test_lookup_count(self):
        """Test top-K' scoring makes exactly |I| * K' lookups."""
        rng = np.random.default_rng(0)
        _, table, _ = random_table(rng, 40, 6)
        counter = LookupCounter()
        semantic_scores(np.arange(10), np.full(40, 1 / 40), table, KeepSpec.top_k_prime(4), counter)
        assert counter.count == 40

    def test_threshold_lookup_bound(self):
        """Test threshold scoring never exceeds |I| * K lookups."""
        rng = np.random.default_rng(1)
        _, table, _ = random_table(rng, 40, 6)
        counter = LookupCounter()
        semantic_scores(np.arange(12), np.full(40, 1 / 40), table, KeepSpec.threshold(0.2), counter)
        assert 12 <= counter.count <= 12 * 6

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        """Test scores against a full cosine matrix for a small vocabulary."""
        rng = np.random.default_rng(seed)
        data, table, partition = random_table(rng, 48, 8)
        p = softmax_probs(rng.standard_normal(48) * 2, 1.0)
        candidates = apply_filter(p, FilterSpec.top_m(10))
        scores = semantic_scores(candidates, p, table, KeepSpec.top_k_prime(5))

        data = data.astype(np.float64)
        unit = data / (np.linalg.norm(data, axis=1, keepdims=True) + 1e-8)
        sims = unit @ unit.T
        for c, got in zip(candidates, scores):
            others = sorted((j for j in range(48) if j != c), key=lambda j: (-sims[c, j], j))[:4]
            expected = p[c] + sum(max(0.0, sims[c, j]) * p[j] for j in others)
            assert got == pytest.approx(expected, abs=1e-6)


class TestDecodeStep:
    """Test full decoding steps."""

    def test_greedy_at_zero_temperature(self):
        """Test T=0 defers to argmax."""
        table, partition = toy_table()
        outcome = decode_step(request([0.1, 0.9, 0.5], temperature=0.0), table, partition)
        assert outcome.deferred
        assert outcome.token == 1

    def test_toy_scores_and_tie(self):
        """Test scores [0.57, 0.40, 0.57] pick the lower id."""
        table, partition = toy_table()
        req = request(np.log([0.3, 0.4, 0.3]), f=FilterSpec.top_m(3), keep=KeepSpec.threshold(0.5))
        outcome = decode_step(req, table, partition)
        assert not outcome.deferred
        scores = {c.token: c.score for c in outcome.candidates}
        assert scores[0] == pytest.approx(0.57, abs=1e-5)
        assert scores[1] == pytest.approx(0.40, abs=1e-5)
        assert scores[2] == pytest.approx(0.57, abs=1e-5)
        assert outcome.token == 0

    def test_defers_on_special_argmax(self):
        """Test a special token in the candidate set skips rescoring."""
        rng = np.random.default_rng(2)
        _, table, partition = random_table(rng, 16, 4, special=[3])
        logits = np.zeros(16)
        logits[3] = 10.0
        outcome = decode_step(request(logits, f=FilterSpec.top_m(1)), table, partition)
        assert outcome.deferred
        assert outcome.token == 3

    def test_reduction_to_filtered_greedy(self):
        """Test self-only scoring reproduces plain greedy over 1000 random steps."""
        rng = np.random.default_rng(42)
        _, table, partition = random_table(rng, 512, 4)
        for i in range(1000):
            logits = (rng.standard_normal(512) * 3).astype(np.float32)
            f = FilterSpec.top_m(int(rng.integers(1, 60))) if i % 2 else FilterSpec.top_p(float(rng.uniform(0.05, 1.0)))
            req = request(logits, temperature=float(rng.uniform(0.3, 2.0)), f=f, keep=KeepSpec.top_k_prime(1))
            outcome = decode_step(req, table, partition)
            assert not outcome.deferred
            assert outcome.token == int(np.argmax(softmax_probs(req.logits, req.temperature)))

    def test_score_lower_bound(self):
        """Test Score(c) >= p(c) for every candidate over 10,000 random steps."""
        rng = np.random.default_rng(5)
        violations = 0
        for _ in range(10):
            _, table, partition = random_table(rng, 64, 8)
            for _ in range(1000):
                logits = rng.standard_normal(64) * 2
                keep = KeepSpec.top_k_prime(int(rng.integers(1, 9))) if rng.random() < 0.5 \
                    else KeepSpec.threshold(float(rng.uniform(-0.9, 1.2)))
                outcome = decode_step(request(logits, f=FilterSpec.top_m(12), keep=keep), table, partition)
                violations += sum(c.score < c.p for c in outcome.candidates)
        assert violations == 0

    def test_deferral_matches_reference_sampler(self):
        """Test deferred steps draw the reference sampler's token for the same seed."""
        rng = np.random.default_rng(9)
        special = [0, 5, 17]
        _, table, partition = random_table(rng, 32, 4, special=special)
        for case in range(500):
            logits = rng.standard_normal(32).astype(np.float32)
            logits[special[case % 3]] += 6.0
            seed = int(rng.integers(0, 2 ** 63))
            req = request(logits, f=FilterSpec.top_m(5), keep=KeepSpec.top_k_prime(2), seed=seed)
            outcome = decode_step(req, table, partition)
            assert outcome.deferred

            p = softmax_probs(req.logits, 1.0)
            candidates = apply_filter(p, FilterSpec.top_m(5))
            expected = reference_sample(p[candidates] / p[candidates].sum(), candidates, seed)
            assert outcome.token == expected


    def test_seedless_deferral_is_logged(self, tmp_path):
        """Test an argmax deferral without a seed samples with seed 0 and says so at debug level."""
        log_file = tmp_path / "semsam.log"
        SemsamLogger.reset()
        initialize_logging(LogLevel.DEBUG, str(log_file))
        try:
            rng = np.random.default_rng(12)
            _, table, partition = random_table(rng, 16, 4, special=[3])
            logits = rng.standard_normal(16).astype(np.float32)
            logits[3] += 6.0
            outcome = decode_step(request(logits, f=FilterSpec.top_m(4)), table, partition)
            for handler in logging.getLogger("semsam_bench").handlers:
                handler.flush()
            lines = [json.loads(line) for line in log_file.read_text().splitlines()]
        finally:
            SemsamLogger.reset()

        assert outcome.deferred
        p = softmax_probs(np.asarray(logits), 1.0)
        candidates = apply_filter(p, FilterSpec.top_m(4))
        assert outcome.token == reference_sample(p[candidates] / p[candidates].sum(), candidates, 0)
        (entry,) = [e for e in lines if e["message"] == "Deferred step without a seed samples with seed 0"]
        assert entry["level"] == "DEBUG"
        assert entry["context"] == {"select": "argmax"}
    def test_not_deferred_implies_content_candidates(self):
        """Test rescored steps only hold content tokens."""
        rng = np.random.default_rng(4)
        _, table, partition = random_table(rng, 32, 4, special=[1, 2])
        for _ in range(200):
            outcome = decode_step(request(rng.standard_normal(32), f=FilterSpec.top_p(0.7),
                                          keep=KeepSpec.top_k_prime(3)), table, partition)
            if not outcome.deferred:
                assert all(partition.is_content(c.token) for c in outcome.candidates)
                assert outcome.token in {c.token for c in outcome.candidates}

    def test_seeded_sampling_is_reproducible(self):
        """Test identical sample-mode requests give identical tokens."""
        rng = np.random.default_rng(6)
        _, table, partition = random_table(rng, 64, 8)
        logits = rng.standard_normal(64)
        tokens = {decode_step(request(logits, f=FilterSpec.top_m(20), keep=KeepSpec.top_k_prime(4),
                                      select="sample", seed=123), table, partition).token
                  for _ in range(5)}
        assert len(tokens) == 1

    def test_score_temperature(self):
        """Test score_temperature reshapes sampling while argmax output stays fixed."""
        table, partition = toy_table()
        logits = np.log([0.3, 0.4, 0.3]).astype(np.float32)

        def step(select, tau, seed=0):
            req = DecodeRequest(logits=logits, temperature=1.0, filter=FilterSpec.top_m(3),
                                keep=KeepSpec.threshold(0.5), select=select, seed=seed,
                                score_temperature=tau)
            return decode_step(req, table, partition)

        assert {step("argmax", tau).token for tau in (0.01, 1.0, 100.0)} == {0}

        outcome = step("sample", 0.25, seed=77)
        ids = np.array([c.token for c in outcome.candidates])
        scores = np.array([c.score for c in outcome.candidates])
        assert outcome.token == reference_sample(softmax_probs(scores, 0.25), ids, 77)

        sharp = [step("sample", 0.01, seed).token for seed in range(300)]
        flat = [step("sample", 100.0, seed).token for seed in range(300)]
        # token 1 scores 0.40 against 0.57 for tokens 0 and 2
        assert sharp.count(1) == 0
        assert 70 <= flat.count(1) <= 130
        assert set(sharp) == {0, 2}

    def test_logits_length_mismatch(self):
        """Test logits that do not cover V_emb are rejected."""
        table, partition = toy_table()
        with pytest.raises(ValidationError) as exc_info:
            decode_step(request([0.0, 1.0]), table, partition)
        assert exc_info.value.field_name == "logits_len"

    def test_k_prime_above_table_k(self):
        """Test K' above the table's K is rejected."""
        table, partition = toy_table()
        with pytest.raises(ValidationError) as exc_info:
            decode_step(request([0.0, 1.0, 2.0], keep=KeepSpec.top_k_prime(3)), table, partition)
        assert exc_info.value.field_name == "keep"

    def test_lookups_bounded(self):
        """Test the step reports |I| * K' lookups."""
        rng = np.random.default_rng(8)
        _, table, partition = random_table(rng, 64, 8)
        outcome = decode_step(request(rng.standard_normal(64), f=FilterSpec.top_m(7),
                                      keep=KeepSpec.top_k_prime(5)), table, partition)
        assert outcome.lookups == 7 * 5


@pytest.mark.performance
class TestDecodePerformance:
    """Test the hot path on a full-size vocabulary."""

    V_EMB, K = 151_936, 32

    @pytest.fixture(scope="class")
    def full_size(self):
        v, k = self.V_EMB, self.K
        rng = np.random.default_rng(0)
        ids = np.arange(v)
        s_tid = rng.integers(0, v, size=(v, k)).astype(np.uint32)
        s_tid[:, 0] = ids
        s_val = np.sort(rng.uniform(-0.2, 0.9, size=(v, k)).astype(np.float32), axis=1)[:, ::-1].copy()
        s_val[:, 0] = 1.0
        table = NeighborTable(content_ids=ids, k=k, s_tid=s_tid, s_val=s_val)
        return table, build_partition(TokenizerMeta(v_tok=v), v)

    def test_large_vocabulary_step(self, full_size):
        """Test median step time with V_emb=151,936, K'=32, top-M=50."""
        table, partition = full_size
        v = self.V_EMB
        rng = np.random.default_rng(1)

        durations = []
        for _ in range(30):
            req = request(rng.standard_normal(v), f=FilterSpec.top_m(50), keep=KeepSpec.top_k_prime(32))
            start = time.perf_counter()
            outcome = decode_step(req, table, partition)
            durations.append(time.perf_counter() - start)
            assert outcome.lookups == 50 * 32
        assert float(np.median(durations)) < 0.02

    def test_rescoring_without_softmax(self, full_size):
        """Test filter, neighborhood scores and selection stay under 5 ms median given p."""
        table, partition = full_size
        rng = np.random.default_rng(2)
        keep = KeepSpec.top_k_prime(self.K)
        durations = []
        for _ in range(30):
            p = softmax_probs(rng.standard_normal(self.V_EMB).astype(np.float32), 1.0)
            counter = LookupCounter()
            start = time.perf_counter()
            candidates = apply_filter(p, FilterSpec.top_m(50))
            assert partition.content_mask[candidates].all()
            scores = semantic_scores(candidates, p, table, keep, counter)
            token = int(candidates[np.flatnonzero(scores == scores.max())].min())
            durations.append(time.perf_counter() - start)
            assert counter.count == 50 * self.K
            assert token in candidates
        assert float(np.median(durations)) < 0.005
