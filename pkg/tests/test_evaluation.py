"""Tests for answer extraction, scoring and credible-interval aggregation."""

import json

import numpy as np
import pytest
from scipy.stats import beta as beta_dist

from semsam_bench.config import EvalConfig
from semsam_bench.errors import ConfigurationError, FormatError, ValidationError
from semsam_bench.evaluation import (
    GroupStats, SynonymTable, aggregate, beta_quantile, credible_interval, extract_answer,
    load_responses, normalize, save_responses, score, stub_respond
)
from semsam_bench.models import CategoryTag, QAItem, QuestionType, ResponseRecord, TargetType


def make_item(item_id, key="superior", question_type=QuestionType.OPEN,
              target=TargetType.RELATION_ANATOMICAL, tags=(CategoryTag.RQ2,), **params):
    if question_type != QuestionType.OPEN:
        key = "True" if question_type == QuestionType.CLOSED_TRUE else "False"
    params.setdefault("choices", ["superior", "inferior"] if question_type == QuestionType.OPEN
                      else ["True", "False"])
    return QAItem(id=item_id, media_ref=None, question="q", question_type=question_type,
                  target_type=target, answer_key=key, category_tags=list(tags), params=params)


def answer(item_id, text):
    return ResponseRecord(item_id, f"reasoning... <answer>{text}</answer>")


class TestExtraction:
    """Test answer span extraction and normalization."""

    def test_last_span_wins(self):
        """Test the last answer span is the final answer."""
        assert extract_answer("<answer>left</answer> no wait <answer> right </answer>") == "right"

    def test_case_insensitive_tags(self):
        """Test tag case does not matter and spans may span lines."""
        assert extract_answer("<ANSWER>\nTrue\n</Answer>") == "True"

    def test_no_span(self):
        """Test a response without a span has no answer."""
        assert extract_answer("I think it is superior.") is None
        assert extract_answer("") is None

    def test_normalize(self):
        """Test case folding, whitespace collapsing and terminal punctuation."""
        assert normalize("  Superior. ") == "superior"
        assert normalize("Left   Side!") == "left side"


class TestScoring:
    """Test exact and synonym scoring."""

    def test_exact(self):
        """Test exact mode accepts only the normalized key."""
        item = make_item("a")
        assert score(item, "SUPERIOR.", mode="exact")
        assert not score(item, "cranial", mode="exact")

    def test_synonym(self):
        """Test synonym mode accepts registered alternatives."""
        assert score(make_item("a"), "cranial", mode="synonym")
        assert not score(make_item("a"), "caudal", mode="synonym")

    def test_yes_for_true(self):
        """Test yes/no count as True/False for closed items."""
        assert score(make_item("a", question_type=QuestionType.CLOSED_TRUE), "Yes")
        assert score(make_item("b", question_type=QuestionType.CLOSED_INVERTED), "no")
        assert not score(make_item("c", question_type=QuestionType.CLOSED_TRUE), "yes", mode="exact")

    def test_leading_article(self):
        """Test a leading article is ignored for open answers."""
        item = make_item("a", key="liver", target=TargetType.STRUCTURE_NAME)
        assert score(item, "The liver")

    def test_conflicting_synonyms(self):
        """Test an alternative claimed by two answers is a configuration error."""
        with pytest.raises(ConfigurationError):
            SynonymTable({"left": ["side"], "right": ["side"]})


class TestCredibleIntervals:
    """Test Beta posterior summaries."""

    def test_posterior_mean(self):
        """Test 7 of 10 under a uniform prior gives Beta(8, 4) with mean 2/3."""
        stats = GroupStats()
        for correct in [True] * 7 + [False] * 3:
            stats.add(correct)
        summary = stats.to_dict((1.0, 1.0), 0.95)
        assert summary["accuracy"] == pytest.approx(0.7)
        assert summary["posterior_mean"] == pytest.approx(2.0 / 3.0)

    def test_uniform_prior_no_data(self):
        """Test no data under a uniform prior gives the 2.5% and 97.5% points."""
        low, high = credible_interval(0, 0)
        assert low == pytest.approx(0.025, abs=1e-6)
        assert high == pytest.approx(0.975, abs=1e-6)

    @pytest.mark.parametrize("q,a,b", [(0.025, 8, 4), (0.975, 8, 4), (0.5, 0.5, 30.5), (0.1, 120, 3)])
    def test_quantile_matches_reference(self, q, a, b):
        """Test bisection agrees with the reference quantile function."""
        assert beta_quantile(q, a, b) == pytest.approx(beta_dist.ppf(q, a, b), abs=1e-6)

    def test_interval_contains_mean(self):
        """Test the interval brackets the posterior mean."""
        low, high = credible_interval(30, 10)
        assert low < 31 / 42 < high

    def test_bad_mass(self):
        """Test masses outside (0, 1) are rejected."""
        with pytest.raises(ValidationError):
            credible_interval(1, 1, mass=1.0)

    def test_frequentist_coverage(self):
        """Test 95% intervals contain the true accuracy about 95% of the time."""
        rng = np.random.default_rng(2024)
        hits = 0
        for _ in range(1000):
            successes = int(rng.binomial(50, 0.7))
            low, high = credible_interval(successes, 50 - successes)
            hits += low <= 0.7 <= high
        assert abs(hits / 1000 - 0.95) <= 0.03


class TestAggregate:
    """Test folding responses into groups."""

    def test_omitted_not_scored(self):
        """Test responses without a span count as omitted, not wrong."""
        items = [make_item("a"), make_item("b")]
        report = aggregate(items, [answer("a", "superior"), ResponseRecord("b", "no idea")])
        overall = report.overall
        assert (overall.n_scored, overall.n_correct, overall.n_omitted) == (1, 1, 1)
        assert overall.accuracy == 1.0

    def test_missing_response(self):
        """Test items without any response are omitted and counted as missing."""
        report = aggregate([make_item("a"), make_item("b")], [answer("a", "inferior")])
        assert report.missing == 1
        assert report.overall.n_omitted == 1
        assert report.overall.accuracy == 0.0

    def test_duplicates_latest_wins(self):
        """Test a later response replaces an earlier one and is reported."""
        report = aggregate([make_item("a")], [answer("a", "inferior"), answer("a", "superior")])
        assert report.overall.n_correct == 1
        assert report.duplicates == {"a": 1}

    def test_unmatched(self):
        """Test responses for unknown ids are listed and ignored."""
        report = aggregate([make_item("a")], [answer("zz", "superior"), answer("a", "superior")])
        assert report.unmatched == ["zz"]
        assert report.overall.n_scored == 1

    def test_groups(self):
        """Test items fold into tag, target, question type and parameter groups."""
        items = [
            make_item("a", tags=(CategoryTag.RQ1, CategoryTag.RQ2), medium="volume_3d"),
            make_item("b", question_type=QuestionType.CLOSED_TRUE, tags=(CategoryTag.AB1,), medium="slice_2d"),
        ]
        report = aggregate(items, [answer("a", "inferior"), answer("b", "True")]).to_dict()
        groups = report["groups"]
        assert groups["tag"]["RQ1"]["n_correct"] == 0
        assert groups["tag"]["AB1"]["accuracy"] == 1.0
        assert groups["medium"]["slice_2d"]["n_scored"] == 1
        assert groups["question_type"]["closed_true"]["n_correct"] == 1
        assert groups["overall"]["all"]["n_scored"] == 2

    def test_header_records_choices(self):
        """Test the report header names prior, mass and scoring mode."""
        cfg = EvalConfig(prior="jeffreys", mass=0.9, scoring_mode="exact")
        header = aggregate([make_item("a")], [], cfg).to_dict()["header"]
        assert header["prior_params"] == [0.5, 0.5]
        assert header["mass"] == 0.9
        assert header["scoring_mode"] == "exact"

    def test_save(self, tmp_path):
        """Test the saved report is JSON with the group table."""
        path = tmp_path / "report.json"
        aggregate([make_item("a")], [answer("a", "superior")]).save(path)
        assert json.loads(path.read_text())["groups"]["overall"]["all"]["accuracy"] == 1.0


class TestStubResponder:
    """Test the stand-in model."""

    @pytest.fixture
    def items(self):
        kinds = [QuestionType.OPEN, QuestionType.CLOSED_TRUE, QuestionType.CLOSED_INVERTED]
        return [make_item(f"q{i}", question_type=kinds[i % 3]) for i in range(2000)]

    def test_perfect(self, items):
        """Test error rate 0 answers everything correctly."""
        report = aggregate(items, stub_respond(items, 0.0, seed=1))
        assert report.overall.accuracy == 1.0

    def test_always_wrong(self, items):
        """Test error rate 1 answers everything wrongly."""
        report = aggregate(items, stub_respond(items, 1.0, seed=1))
        assert report.overall.n_correct == 0

    def test_error_rate_band(self, items):
        """Test error rate 0.2 lands near 80% accuracy."""
        report = aggregate(items, stub_respond(items, 0.2, seed=7))
        assert 0.77 <= report.overall.accuracy <= 0.83

    def test_deterministic(self, items):
        """Test one seed reproduces the same responses."""
        first = [r.raw_text for r in stub_respond(items[:50], 0.5, seed=3)]
        assert first == [r.raw_text for r in stub_respond(items[:50], 0.5, seed=3)]

    @pytest.mark.parametrize("rate", [-0.1, 1.5, float("nan")])
    def test_bad_rate(self, items, rate):
        """Test error rates outside [0, 1] are rejected."""
        with pytest.raises(ValidationError):
            stub_respond(items, rate, seed=0)


class TestResponseFiles:
    """Test the responses JSON-lines file."""

    def test_round_trip(self, tmp_path):
        """Test saved responses reload equal."""
        records = [ResponseRecord("a", "<answer>x</answer>"), ResponseRecord("b", "")]
        save_responses(records, tmp_path / "r.jsonl")
        assert load_responses(tmp_path / "r.jsonl") == records

    def test_bad_line(self, tmp_path):
        """Test a non-object line is a format error."""
        path = tmp_path / "r.jsonl"
        path.write_text("[1, 2]\n")
        with pytest.raises(FormatError):
            load_responses(path)
