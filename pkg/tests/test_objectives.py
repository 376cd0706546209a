import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epgen.corpus import ExamPaper, ExamSpec, QuestionBank, course_skill_weights
from epgen.errors import DomainError
from epgen.objectives import (
    NormalSpec,
    PaperScorer,
    RewardWeights,
    combined_reward,
    cosine,
    coverage_reward,
    difficulty_indicator,
    difficulty_reward,
    discrimination,
    normal_quantile_sample,
    rationality_indicator,
    rationality_reward,
    skill_proportions,
    validity_indicator,
    wasserstein_1d,
)
from epgen.predictor import ScoreVector, group_scores
from epgen.tracer import ProficiencyMatrix

from conftest import random_bank
from oracles import brute_force_w1

def test_difficulty_reward_examples():
    assert difficulty_reward(0.7, 0.7) == 1.0
    assert abs(difficulty_reward(0.5, 0.7) - 0.8) < 1e-15


def test_difficulty_reward_on_group_mean():
    rng = np.random.default_rng(0)
    bank = random_bank(rng, 60, 6)
    prof = ProficiencyMatrix(rng.random((50, 6)))
    paper = ExamPaper(tuple(range(20)), ExamSpec.uniform(20))
    sv = group_scores(prof, paper, bank)
    total = 0.0
    for row in prof.values:
        for j in paper.questions:
            total += math.prod(row[i] for i in bank[j].skill_indices)
    mean = total / 50 / 20
    assert abs(difficulty_reward(sv.normalized.mean(), 0.7) - (1 - abs(0.7 - mean))) < 1e-12


def test_wasserstein_examples():
    assert wasserstein_1d([0.3, 0.1, 0.9], [0.9, 0.3, 0.1]) == 0.0
    assert wasserstein_1d([0.0], [1.0]) == 1.0
    assert wasserstein_1d([0.0, 1.0], [0.5, 0.5]) == 0.5
    assert brute_force_w1([0.0, 1.0], [0.5, 0.5]) == 0.5
    with pytest.raises(DomainError):
        wasserstein_1d([0.0, 1.0], [0.5])
    with pytest.raises(DomainError):
        wasserstein_1d([], [])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=n, max_size=n),
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=n, max_size=n))))
def test_wasserstein_matches_brute_force_transport(pair):
    a, b = pair
    assert abs(wasserstein_1d(a, b) - brute_force_w1(a, b)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8).flatmap(lambda n: st.lists(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=n, max_size=n), min_size=3, max_size=3)))
def test_wasserstein_is_a_metric(triple):
    a, b, c = triple
    ab, ba = wasserstein_1d(a, b), wasserstein_1d(b, a)
    assert ab == ba and ab >= 0
    assert (ab == 0) == (sorted(a) == sorted(b))
    assert wasserstein_1d(a, c) <= ab + wasserstein_1d(b, c) + 1e-12


def test_quantile_sample_probabilities():
    q = normal_quantile_sample(4, NormalSpec(0.7, 0.15))
    from scipy.stats import norm
    assert np.allclose(norm.cdf(q, 0.7, 0.15), [0.125, 0.375, 0.625, 0.875])
    with pytest.raises(DomainError):
        NormalSpec(0.7, 0.0)


def test_rationality_reward_examples():
    spec = NormalSpec(0.7, 0.15)
    target = normal_quantile_sample(50, spec)
    narrow = NormalSpec(0.5, 0.1)
    exact = normal_quantile_sample(50, narrow) * 20.0
    assert rationality_reward(ScoreVector(exact, 20.0), narrow) == pytest.approx(1.0, abs=1e-12)
    zeros = rationality_reward(ScoreVector(np.zeros(50), 20.0), spec)
    mean = sum(float(t) for t in target) / 50  # every quantile is positive
    assert zeros == pytest.approx(1 - mean, abs=1e-12)
    assert abs(zeros - 0.3) < 0.01


def test_rationality_reward_range():
    rng = np.random.default_rng(1)
    spec = NormalSpec(0.2, 0.5)
    for _ in range(1000):
        m = int(rng.integers(1, 60))
        r2 = rationality_reward(ScoreVector(rng.random(m) * 10, 10.0), spec)
        assert 0.0 <= r2 <= 1.0


def test_coverage_examples():
    bank = QuestionBank.from_skill_lists([
        ("q0", ["a", "b"], 1.0), ("q1", ["b"], 1.0), ("q2", ["c"], 1.0), ("q3", ["d"], 1.0)])
    paper = ExamPaper((0, 1, 2), ExamSpec.uniform(3))
    # hand count: a once, b twice, c once, d never -> 4 incidences
    v = skill_proportions(paper.incidence(bank))
    assert v.tolist() == [0.25, 0.5, 0.25, 0.0]
    c = np.array([0.1, 0.2, 0.3, 0.4])
    dot = 0.25 * 0.1 + 0.5 * 0.2 + 0.25 * 0.3
    expected = dot / (math.sqrt(0.25**2 + 0.5**2 + 0.25**2) * math.sqrt(0.01 + 0.04 + 0.09 + 0.16))
    assert abs(coverage_reward(paper, bank, c) - expected) < 1e-12
    assert coverage_reward(paper, bank, v) == pytest.approx(1.0, abs=1e-15)
    assert coverage_reward(paper, bank, [0, 0, 0, 1.0]) == 0.0
    for alpha in (1e-3, 2.0, 1e4):
        assert coverage_reward(paper, bank, alpha * c) == pytest.approx(coverage_reward(paper, bank, c), abs=1e-14)
    with pytest.raises(DomainError):
        cosine([0, 0], [1, 0])


def test_validity_one_hot_vs_uniform():
    bank = QuestionBank.from_skill_lists([
        ("q0", ["a"], 1.0), ("q1", ["b"], 1.0), ("q2", ["c"], 1.0), ("q3", ["d"], 1.0), ("q4", ["a"], 1.0)])
    paper = ExamPaper((0, 4), ExamSpec.uniform(2))
    assert validity_indicator(paper, bank, np.full(4, 0.25)) == pytest.approx(1 / math.sqrt(4), abs=1e-15)
    assert validity_indicator(paper, bank, [1, 0, 0, 0]) == pytest.approx(1.0)


def test_combined_reward():
    assert combined_reward(1, 1, 1, RewardWeights()) == pytest.approx(1.0, abs=1e-15)
    assert combined_reward(0.3, 0.9, 0.1, RewardWeights(1, 0, 0)) == 0.3
    rng = np.random.default_rng(2)
    for _ in range(100):
        w = rng.random(3)
        r = rng.random(3)
        got = combined_reward(*r, RewardWeights(*w))
        assert got == pytest.approx(w[0] * r[0] + w[1] * r[1] + w[2] * r[2], abs=1e-15)
    with pytest.raises(DomainError):
        RewardWeights(1.5, 0, 0)


def test_indicator_examples():
    assert difficulty_indicator([70.0] * 5) == 1.0
    assert difficulty_indicator([40.0, 50.0]) == pytest.approx(0.75)
    q = normal_quantile_sample(30, NormalSpec(0.7, 0.15))
    assert rationality_indicator(100 * q) == pytest.approx(1.0, abs=1e-12)
    flat = rationality_indicator(np.full(30, 70.0))
    assert flat == pytest.approx(1 - sum(abs(0.7 - float(t)) for t in q) / 30, abs=1e-12)
    rng = np.random.default_rng(3)
    for _ in range(200):
        assert rationality_indicator(rng.random(20) * 100) <= 1.0


def test_discrimination_examples():
    a = list(range(100))
    assert discrimination([range(0, 5), range(5, 10), range(10, 15)]) == 1.0
    assert discrimination([a, a]) == 0.5
    assert discrimination([a, list(range(90, 190))]) == pytest.approx(0.95)
    with pytest.raises(DomainError):
        discrimination([a])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sets(st.integers(0, 30), min_size=1, max_size=10), min_size=2, max_size=5), st.randoms())
def test_discrimination_permutation_invariant(papers, rnd):
    shuffled = list(papers)
    rnd.shuffle(shuffled)
    assert discrimination(papers) == discrimination(shuffled)


def test_scorer_matches_direct_calls():
    rng = np.random.default_rng(4)
    bank = random_bank(rng, 80, 7)
    prof = ProficiencyMatrix(rng.random((25, 7)))
    pts = tuple(rng.uniform(1, 3, 10))
    spec = ExamSpec(10, pts, float(sum(pts)), 0.6)
    weights = RewardWeights(0.2, 0.5, 0.3)
    scorer = PaperScorer(bank, prof, spec, weights)
    paper = ExamPaper(tuple(rng.choice(len(bank), 10, replace=False)), spec)
    sv = group_scores(prof, paper, bank)
    normal = NormalSpec(mu=0.6, sigma=0.15)
    c = course_skill_weights(bank)
    r = (difficulty_reward(sv.normalized.mean(), 0.6), rationality_reward(sv, normal), coverage_reward(paper, bank, c))
    assert np.allclose(scorer.components(paper.questions), r, atol=1e-12)
    assert scorer.reward(paper.questions) == pytest.approx(combined_reward(*r, weights), abs=1e-12)
    batch = np.array([paper.questions, tuple(reversed(paper.questions))])
    assert np.allclose(scorer.rewards(batch)[0], combined_reward(*r, weights), atol=1e-12)
    assert scorer.evaluations == 3
    ind = scorer.indicators(paper)
    assert ind["difficulty"] == pytest.approx(difficulty_indicator(sv.percent), abs=1e-12)
    assert ind["rationality"] == pytest.approx(rationality_indicator(sv.percent), abs=1e-12)
    assert ind["validity"] == pytest.approx(validity_indicator(paper, bank, c), abs=1e-12)


def test_swap_components_match_full_evaluation():
    rng = np.random.default_rng(5)
    bank = random_bank(rng, 50, 5)
    prof = ProficiencyMatrix(rng.random((12, 5)))
    spec = ExamSpec.uniform(8)
    scorer = PaperScorer(bank, prof, spec)
    q = rng.choice(len(bank), 8, replace=False)
    cand = int(np.setdiff1d(np.arange(len(bank)), q)[0])
    rows = scorer.swap_components(q, spec.points, scorer.scores(q), scorer.skill_counts(q), cand)
    for h in range(8):
        q2 = q.copy()
        q2[h] = cand
        assert np.allclose(rows[h], scorer.components(q2), atol=1e-12)
