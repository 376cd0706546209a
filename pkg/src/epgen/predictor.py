"""Predicted exam scores from a proficiency matrix.

An examinee answers a question correctly with probability equal to the
product of their mastery over the question's skills; the exam score is the
points-weighted sum of those probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ExamPaper, Question, QuestionBank
from .errors import DomainError
from .tracer import ProficiencyMatrix


@dataclass(frozen=True, eq=False)
class ScoreVector:
    scores: np.ndarray
    total_points: float

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        tol = 1e-9 * max(1.0, self.total_points)
        if np.any(s < -tol) or np.any(s > self.total_points + tol):
            raise DomainError("scores must lie in [0, total_points]")
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.scores)

    @property
    def normalized(self) -> np.ndarray:
        return self.scores / self.total_points

    @property
    def percent(self) -> np.ndarray:
        return 100.0 * self.scores / self.total_points


def answer_probability(prof_row, question: Question) -> float:
    row = np.asarray(prof_row, dtype=float)
    return float(np.prod(row[question.skill_indices]))


def answer_probability_matrix(prof: ProficiencyMatrix | np.ndarray, incidence: np.ndarray) -> np.ndarray:
    """``|E| x m`` matrix of answer probabilities for ``m`` incidence rows."""
    P = prof.values if isinstance(prof, ProficiencyMatrix) else np.asarray(prof, dtype=float)
    inc = np.asarray(incidence, dtype=bool)
    out = np.empty((P.shape[0], inc.shape[0]))
    for j, row in enumerate(inc):
        out[:, j] = np.prod(P[:, row], axis=1)
    return out


def exam_score(prof_row, paper: ExamPaper, bank: QuestionBank) -> float:
    r = answer_probability_matrix(np.asarray(prof_row, dtype=float)[None, :], paper.incidence(bank))[0]
    return float(r @ paper.spec.points)


def group_scores(prof: ProficiencyMatrix, paper: ExamPaper, bank: QuestionBank) -> ScoreVector:
    R = answer_probability_matrix(prof, paper.incidence(bank))
    return ScoreVector(R @ paper.spec.points, paper.spec.o)


@dataclass(eq=False)
class AnswerProbabilityCache:
    """Answer probabilities ``r_{e,j}`` for the questions currently on a paper."""

    matrix: np.ndarray  # |E| x n
    points: np.ndarray  # n

    @classmethod
    def build(cls, prof: ProficiencyMatrix, paper: ExamPaper, bank: QuestionBank) -> "AnswerProbabilityCache":
        return cls(answer_probability_matrix(prof, paper.incidence(bank)), paper.spec.points.copy())


def rescore_after_swap(cache: AnswerProbabilityCache, scores: ScoreVector, h: int,
                       new_column: np.ndarray) -> tuple[AnswerProbabilityCache, ScoreVector]:
    """Scores after replacing the question at position ``h``.

    ``new_column`` holds the incoming question's answer probability for
    every examinee (see ``answer_probability_matrix``).
    """
    n = cache.matrix.shape[1]
    if not 0 <= h < n:
        raise DomainError(f"position {h} outside [0, {n})")
    new_column = np.asarray(new_column, dtype=float)
    updated = scores.scores + cache.points[h] * (new_column - cache.matrix[:, h])
    matrix = cache.matrix.copy()
    matrix[:, h] = new_column
    # clip only rounding noise at the bounds
    updated = np.clip(updated, 0.0, scores.total_points)
    return AnswerProbabilityCache(matrix, cache.points), ScoreVector(updated, scores.total_points)
