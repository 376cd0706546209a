"""Reward components, the combined reward, and evaluation indicators.

Rewards work on scores normalized by the paper's total points (``[0, 1]``);
indicators work on the 0-100 scale.  The target score distribution is
represented by ``m`` mid-probability quantiles of a normal distribution,
so every distance here is a deterministic 1-D Wasserstein distance between
equal-size samples.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .corpus import ExamPaper, ExamSpec, QuestionBank, course_skill_weights
from .errors import DomainError
from .predictor import ScoreVector, answer_probability_matrix

INDICATOR_MEAN = 70.0
INDICATOR_SD = 15.0


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 1 / 3
    w2: float = 1 / 3
    w3: float = 1 / 3

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3])


@dataclass(frozen=True)
class NormalSpec:
    mu: float = 0.7
    sigma: float = 0.15

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")


@lru_cache(maxsize=64)
def _quantiles(m: int, mu: float, sigma: float) -> np.ndarray:
    q = norm.ppf((np.arange(1, m + 1) - 0.5) / m, loc=mu, scale=sigma)
    q.setflags(write=False)
    return q


def normal_quantile_sample(m: int, spec: NormalSpec) -> np.ndarray:
    """``m`` points of ``N(mu, sigma^2)`` at probabilities ``(k - 0.5) / m``."""
    if m < 1:
        raise DomainError("quantile sample needs at least one point")
    return _quantiles(int(m), float(spec.mu), float(spec.sigma))


def wasserstein_1d(a, b) -> float:
    """W1 between two equal-size empirical samples (sorted pairing)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.shape != b.shape:
        raise DomainError(f"sample sizes differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise DomainError("samples must be non-empty")
    return float(np.mean(np.abs(a - b)))


def difficulty_reward(mean_normalized_score: float, d: float) -> float:
    return 1.0 - abs(d - mean_normalized_score)


def rationality_reward(scores: ScoreVector, spec: NormalSpec) -> float:
    if len(scores) == 0:
        raise DomainError("no scores")
    target = normal_quantile_sample(len(scores), spec)
    return float(np.clip(1.0 - wasserstein_1d(scores.normalized, target), 0.0, 1.0))


def skill_proportions(incidence: np.ndarray) -> np.ndarray:
    """Share of the paper's skill incidences falling on each skill."""
    counts = np.asarray(incidence, dtype=float).sum(axis=0)
    return counts / counts.sum()


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    denom = np.linalg.norm(u) * np.linalg.norm(v)
    if denom == 0:
        raise DomainError("cosine of a zero vector")
    return float(u @ v / denom)


def coverage_reward(paper: ExamPaper, bank: QuestionBank, course_weights) -> float:
    return cosine(skill_proportions(paper.incidence(bank)), course_weights)


def combined_reward(r1: float, r2: float, r3: float, weights: RewardWeights) -> float:
    return weights.w1 * r1 + weights.w2 * r2 + weights.w3 * r3


def difficulty_indicator(scores_100) -> float:
    scores_100 = np.asarray(scores_100, dtype=float)
    return 1.0 - abs(float(np.mean(scores_100)) - INDICATOR_MEAN) / 100.0


def rationality_indicator(scores_100) -> float:
    s = np.asarray(scores_100, dtype=float) / 100.0
    target = normal_quantile_sample(len(s), NormalSpec(INDICATOR_MEAN / 100, INDICATOR_SD / 100))
    return 1.0 - wasserstein_1d(s, target)


def validity_indicator(paper: ExamPaper, bank: QuestionBank, course_weights) -> float:
    return coverage_reward(paper, bank, course_weights)


def discrimination(papers: Sequence[Iterable]) -> float:
    """One minus the question overlap among parallel papers.

    Overlap counts shared questions once per unordered pair of papers,
    normalized by the total number of questions across all papers.
    """
    sets = [set(p.questions if isinstance(p, ExamPaper) else p) for p in papers]
    if len(sets) < 2:
        raise DomainError("discrimination needs at least two papers")
    total = sum(len(s) for s in sets)
    shared = sum(len(a & b) for a, b in itertools.combinations(sets, 2))
    return 1.0 - shared / total


# ------------------------------------------------------- vectorized scoring


class PaperScorer:
    """Combined reward and indicators for papers over a fixed bank and group.

    Answer probabilities for every (examinee, bank question) pair are
    computed once.  ``evaluations`` counts combined-reward evaluations so
    different search methods can be compared at equal budget.
    """

    def __init__(self, bank: QuestionBank, proficiency, spec: ExamSpec,
                 weights: RewardWeights = RewardWeights(), normal: NormalSpec | None = None,
                 course_weights=None):
        self.bank = bank
        self.spec = spec
        self.weights = weights
        self.normal = normal if normal is not None else NormalSpec(mu=spec.d)
        self.course_weights = np.asarray(
            course_weights if course_weights is not None else course_skill_weights(bank), dtype=float)
        self.answer_probs = answer_probability_matrix(proficiency, bank.incidence)  # |E| x |Q|
        self.examinee_ids = tuple(getattr(proficiency, "examinee_ids", ()))
        self.n_examinees = self.answer_probs.shape[0]
        if self.n_examinees == 0:
            raise DomainError("proficiency has no examinees")
        self.incidence = bank.incidence.astype(float)
        self.points = spec.points
        self.target = normal_quantile_sample(self.n_examinees, self.normal)
        self._c_unit = self.course_weights / np.linalg.norm(self.course_weights)
        self.evaluations = 0

    # state helpers -----------------------------------------------------
    def scores(self, questions, points=None) -> np.ndarray:
        q = np.asarray(questions, dtype=np.int64)
        pts = self.points if points is None else np.asarray(points, dtype=float)
        return self.answer_probs[:, q] @ pts

    def skill_counts(self, questions) -> np.ndarray:
        return self.incidence[np.asarray(questions, dtype=np.int64)].sum(axis=0)

    # reward components on normalized scores ----------------------------
    def _components_from(self, scores: np.ndarray, counts: np.ndarray) -> np.ndarray:
        """``(m, 3)`` reward components for ``m`` score vectors / skill counts."""
        norm_scores = scores / self.spec.o
        r1 = 1.0 - np.abs(self.spec.d - norm_scores.mean(axis=1))
        w1 = np.abs(np.sort(norm_scores, axis=1) - self.target).mean(axis=1)
        r2 = np.clip(1.0 - w1, 0.0, 1.0)
        r3 = (counts @ self._c_unit) / np.linalg.norm(counts, axis=1)
        return np.stack([r1, r2, r3], axis=1)

    def components(self, questions, points=None) -> np.ndarray:
        s = self.scores(questions, points)[None, :]
        c = self.skill_counts(questions)[None, :]
        return self._components_from(s, c)[0]

    def reward(self, questions, points=None) -> float:
        self.evaluations += 1
        return float(self.components(questions, points) @ self.weights.as_array())

    def rewards(self, papers: np.ndarray) -> np.ndarray:
        """Combined reward of each row of an ``(m, n)`` question-index array."""
        papers = np.asarray(papers, dtype=np.int64)
        self.evaluations += papers.shape[0]
        out = np.empty(papers.shape[0])
        for start in range(0, papers.shape[0], 256):
            chunk = papers[start:start + 256]
            scores = np.einsum("emn,n->me", self.answer_probs[:, chunk], self.points)
            counts = self.incidence[chunk].sum(axis=1)
            out[start:start + 256] = self._components_from(scores, counts) @ self.weights.as_array()
        return out

    def swap_components(self, questions, points, scores, counts, candidate: int) -> np.ndarray:
        """Components for every placement of ``candidate`` (row h = replace slot h)."""
        q = np.asarray(questions, dtype=np.int64)
        pts = np.asarray(points, dtype=float)
        delta = self.answer_probs[:, [candidate]] - self.answer_probs[:, q]  # E x n
        new_scores = scores[None, :] + (pts[None, :] * delta).T  # n x E
        new_counts = counts[None, :] + self.incidence[candidate][None, :] - self.incidence[q]
        self.evaluations += len(q)
        return self._components_from(new_scores, new_counts)

    # indicators ------------------------------------------------------
    def indicators(self, paper: ExamPaper) -> dict[str, float]:
        s = self.scores(paper.questions, paper.spec.points)
        pct = 100.0 * s / paper.spec.o
        return {
            "difficulty": difficulty_indicator(pct),
            "rationality": rationality_indicator(pct),
            "validity": validity_indicator(paper, self.bank, self.course_weights),
        }
