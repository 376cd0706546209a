"""Skills, questions, examinees and interaction logs.

Everything here is immutable once built.  CSV is the interchange format:

* ``bank.csv``: ``question_id,skill_ids,score`` with ``;``-separated skills
* ``interactions.csv``: ``examinee_id,question_id,correct``

Skill indices follow first-appearance order in the bank file.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import expit, logit

from .errors import (
    ConfigError,
    DomainError,
    ParseError,
    UndefinedLabelError,
    UnknownReferenceError,
)

BANK_COLUMNS = ("question_id", "skill_ids", "score")
INTERACTION_COLUMNS = ("examinee_id", "question_id", "correct")


@dataclass(frozen=True)
class Skill:
    id: str
    index: int


@dataclass(frozen=True, eq=False)
class Question:
    id: str
    skills: np.ndarray  # 0/1 incidence row of length |K|
    score: float = 1.0

    def __post_init__(self):
        skills = np.asarray(self.skills, dtype=np.uint8)
        if skills.ndim != 1 or not np.all((skills == 0) | (skills == 1)):
            raise DomainError(f"question {self.id}: incidence must be a 0/1 vector")
        if not skills.any():
            raise DomainError(f"question {self.id}: covers no skill")
        if not self.score > 0:
            raise DomainError(f"question {self.id}: score must be positive")
        skills.setflags(write=False)
        object.__setattr__(self, "skills", skills)

    @property
    def skill_indices(self) -> np.ndarray:
        return np.flatnonzero(self.skills)


class QuestionBank:
    """Indexed question collection plus its skill catalog."""

    def __init__(self, questions: Sequence[Question], skills: Sequence[Skill]):
        self.questions = tuple(questions)
        self.skills = tuple(skills)
        if [s.index for s in self.skills] != list(range(len(self.skills))):
            raise DomainError("skill indices must be 0..|K|-1 in order")
        if len({s.id for s in self.skills}) != len(self.skills):
            raise DomainError("duplicate skill id in catalog")
        self._index = {}
        for j, q in enumerate(self.questions):
            if q.id in self._index:
                raise UnknownReferenceError(f"duplicate question id {q.id!r}")
            if q.skills.shape != (len(self.skills),):
                raise DomainError(f"question {q.id}: incidence length != |K|")
            self._index[q.id] = j
        if self.questions:
            inc = np.stack([q.skills for q in self.questions])
        else:
            inc = np.zeros((0, len(self.skills)), dtype=np.uint8)
        inc.setflags(write=False)
        self.incidence = inc
        scores = np.array([q.score for q in self.questions], dtype=float)
        scores.setflags(write=False)
        self.scores = scores

    def __len__(self):
        return len(self.questions)

    def __getitem__(self, j) -> Question:
        return self.questions[j]

    @property
    def n_skills(self) -> int:
        return len(self.skills)

    @property
    def ids(self) -> list[str]:
        return [q.id for q in self.questions]

    def index_of(self, question_id: str) -> int:
        try:
            return self._index[question_id]
        except KeyError:
            raise UnknownReferenceError(f"unknown question id {question_id!r}") from None

    @classmethod
    def from_skill_lists(cls, rows: Iterable[tuple[str, Sequence[str], float]]) -> "QuestionBank":
        """Build a bank from ``(question_id, [skill ids], score)`` rows.

        Skill indices are assigned in first-appearance order.
        """
        rows = list(rows)
        skill_index: dict[str, int] = {}
        for _, skill_ids, _ in rows:
            for s in skill_ids:
                skill_index.setdefault(s, len(skill_index))
        skills = [Skill(s, i) for s, i in skill_index.items()]
        questions = []
        for qid, skill_ids, score in rows:
            vec = np.zeros(len(skills), dtype=np.uint8)
            for s in skill_ids:
                vec[skill_index[s]] = 1
            questions.append(Question(qid, vec, score))
        return cls(questions, skills)


@dataclass(frozen=True)
class InteractionRecord:
    question_index: int
    correct: int


@dataclass(frozen=True, eq=False)
class ExamineeSequence:
    examinee_id: str
    questions: np.ndarray  # int question indices, chronological
    correct: np.ndarray  # 0/1, same length

    def __post_init__(self):
        q = np.asarray(self.questions, dtype=np.int64)
        y = np.asarray(self.correct, dtype=np.uint8)
        if q.ndim != 1 or q.shape != y.shape:
            raise DomainError(f"examinee {self.examinee_id}: ragged sequence")
        if len(q) == 0:
            raise DomainError(f"examinee {self.examinee_id}: empty sequence")
        if not np.all(y <= 1):
            raise DomainError(f"examinee {self.examinee_id}: correct must be 0 or 1")
        q.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "questions", q)
        object.__setattr__(self, "correct", y)

    def __len__(self):
        return len(self.questions)

    def records(self) -> Iterator[InteractionRecord]:
        for q, y in zip(self.questions, self.correct):
            yield InteractionRecord(int(q), int(y))


class InteractionLog:
    def __init__(self, sequences: Sequence[ExamineeSequence]):
        self.sequences = tuple(sequences)
        ids = [s.examinee_id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate examinee id in log")

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, e) -> ExamineeSequence:
        return self.sequences[e]

    @property
    def examinee_ids(self) -> list[str]:
        return [s.examinee_id for s in self.sequences]

    @property
    def n_records(self) -> int:
        return sum(len(s) for s in self.sequences)

    def subset(self, indices: Iterable[int]) -> "InteractionLog":
        return InteractionLog([self.sequences[i] for i in indices])


@dataclass(frozen=True)
class ExamSpec:
    """Paper specification: question count, per-slot points, total, target difficulty."""

    n: int
    b: tuple[float, ...]
    o: float
    d: float

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if self.n < 1:
            raise DomainError("exam needs at least one question")
        if len(self.b) != self.n:
            raise DomainError(f"points vector has {len(self.b)} entries, expected {self.n}")
        if any(x <= 0 for x in self.b):
            raise DomainError("question points must be positive")
        if abs(sum(self.b) - self.o) > 1e-9 * max(1.0, abs(self.o)):
            raise DomainError(f"points sum {sum(self.b)} != total {self.o}")
        if not 0.0 <= self.d <= 1.0:
            raise DomainError("target difficulty must lie in [0, 1]")

    @classmethod
    def uniform(cls, n: int = 100, points: float = 1.0, d: float = 0.7) -> "ExamSpec":
        return cls(n, (points,) * n, points * n, d)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.b, dtype=float)


@dataclass(frozen=True, eq=False)
class ExamPaper:
    questions: tuple[int, ...]
    spec: ExamSpec

    def __post_init__(self):
        qs = tuple(int(q) for q in self.questions)
        object.__setattr__(self, "questions", qs)
        if len(qs) != self.spec.n:
            raise DomainError(f"paper has {len(qs)} questions, spec requires {self.spec.n}")
        if len(set(qs)) != len(qs):
            raise DomainError("paper contains a duplicate question")

    def __len__(self):
        return len(self.questions)

    def __eq__(self, other):
        if not isinstance(other, ExamPaper):
            return NotImplemented
        return self.questions == other.questions and self.spec == other.spec

    def __hash__(self):
        return hash((self.questions, self.spec))

    @property
    def index_array(self) -> np.ndarray:
        return np.asarray(self.questions, dtype=np.int64)

    def incidence(self, bank: QuestionBank) -> np.ndarray:
        """The n x |K| 0/1 matrix of skills covered by each paper question."""
        return bank.incidence[self.index_array]

    def with_swap(self, h: int, question: int) -> "ExamPaper":
        qs = list(self.questions)
        qs[h] = int(question)
        return ExamPaper(tuple(qs), self.spec)


# --------------------------------------------------------------------- CSV io


def _format_number(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def _read_rows(path, columns):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected header", line=1) from None
        header = [h.strip() for h in header]
        if header != list(columns):
            raise ParseError(f"expected header {','.join(columns)}, got {','.join(header)}", line=1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise ParseError(f"expected {len(columns)} fields, got {len(row)}", line=reader.line_num)
            yield reader.line_num, [c.strip() for c in row]


def load_question_bank(path) -> QuestionBank:
    rows = []
    seen = set()
    for line, (qid, skill_field, score_field) in _read_rows(path, BANK_COLUMNS):
        if not qid:
            raise ParseError("empty question id", line=line)
        if qid in seen:
            raise UnknownReferenceError(f"line {line}: duplicate question id {qid!r}")
        seen.add(qid)
        skill_ids = [s.strip() for s in skill_field.split(";") if s.strip()]
        if not skill_ids:
            raise DomainError(f"line {line}: question {qid!r} lists no skills")
        if len(set(skill_ids)) != len(skill_ids):
            raise DomainError(f"line {line}: question {qid!r} repeats a skill")
        try:
            score = float(score_field)
        except ValueError:
            raise ParseError(f"score {score_field!r} is not a number", line=line) from None
        if not score > 0:
            raise DomainError(f"line {line}: score must be positive")
        rows.append((qid, skill_ids, score))
    return QuestionBank.from_skill_lists(rows)


def write_question_bank(bank: QuestionBank, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(bank_to_csv_text(bank))


def load_interactions(path, bank: QuestionBank, min_records: int = 1) -> InteractionLog:
    """Group rows by examinee, keeping file order within each examinee.

    Examinees with fewer than ``min_records`` rows are dropped.
    """
    grouped: dict[str, tuple[list[int], list[int]]] = {}
    for line, (eid, qid, correct_field) in _read_rows(path, INTERACTION_COLUMNS):
        if not eid:
            raise ParseError("empty examinee id", line=line)
        try:
            j = bank.index_of(qid)
        except UnknownReferenceError:
            raise UnknownReferenceError(f"line {line}: unknown question id {qid!r}") from None
        if correct_field not in ("0", "1"):
            raise DomainError(f"line {line}: correct must be 0 or 1, got {correct_field!r}")
        qs, ys = grouped.setdefault(eid, ([], []))
        qs.append(j)
        ys.append(int(correct_field))
    sequences = [
        ExamineeSequence(eid, qs, ys) for eid, (qs, ys) in grouped.items() if len(qs) >= min_records
    ]
    return InteractionLog(sequences)


def write_interactions(log: InteractionLog, bank: QuestionBank, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERACTION_COLUMNS)
        for seq in log:
            for q, y in zip(seq.questions, seq.correct):
                w.writerow([seq.examinee_id, bank[int(q)].id, int(y)])


# ------------------------------------------------------------ derived values


def question_difficulty_label(log: InteractionLog, q: int) -> float:
    """Right rate of question ``q`` over the whole log."""
    attempts = correct = 0
    for seq in log:
        hit = seq.questions == q
        attempts += int(hit.sum())
        correct += int(seq.correct[hit].sum())
    if attempts == 0:
        raise UndefinedLabelError(f"question {q} was never attempted")
    return correct / attempts


def difficulty_labels(log: InteractionLog, n_questions: int, fallback: float | None = None) -> np.ndarray:
    """Right rate for every bank question.

    Unattempted questions get ``fallback``; with no fallback they raise.
    """
    attempts = np.zeros(n_questions)
    correct = np.zeros(n_questions)
    for seq in log:
        np.add.at(attempts, seq.questions, 1)
        np.add.at(correct, seq.questions, seq.correct)
    missing = attempts == 0
    if missing.any() and fallback is None:
        raise UndefinedLabelError(f"{int(missing.sum())} questions were never attempted")
    labels = np.where(missing, fallback if fallback is not None else 0.0, correct / np.maximum(attempts, 1))
    return labels


def course_skill_weights(bank: QuestionBank) -> np.ndarray:
    """Share of all skill incidences in the bank that belong to each skill."""
    if len(bank) == 0:
        raise DomainError("empty question bank")
    counts = bank.incidence.sum(axis=0, dtype=np.int64).astype(float)
    return counts / counts.sum()


# ----------------------------------------------------------------- synthesis


@dataclass
class SynthesisConfig:
    n_skills: int = 50
    n_questions: int = 2000
    n_examinees: int = 50
    records_min: int = 100
    records_max: int = 150
    seed_bank_size: int = 300
    max_skills_per_question: int = 3
    skill_family_size: int = 5
    family_affinity: float = 0.8
    popularity_exponent: float = 0.8
    ability_sd: float = 1.2
    difficulty_sd: float = 0.8
    skill_noise_sd: float = 0.3
    mean_logit: float = 1.8
    learning_drift: float = 0.02
    min_records: int = 3
    question_score: float = 1.0

    def __post_init__(self):
        if self.n_skills < 1:
            raise ConfigError("n_skills must be >= 1")
        if self.n_questions < 1:
            raise ConfigError("n_questions must be >= 1")
        if self.n_examinees < 1:
            raise ConfigError("n_examinees must be >= 1")
        if not 1 <= self.records_min <= self.records_max:
            raise ConfigError("need 1 <= records_min <= records_max")
        if self.seed_bank_size < self.n_skills:
            raise ConfigError("seed_bank_size must be >= n_skills so every skill appears")
        if not 1 <= self.max_skills_per_question <= self.n_skills:
            raise ConfigError("max_skills_per_question must be in [1, n_skills]")
        if self.skill_family_size < 1:
            raise ConfigError("skill_family_size must be >= 1")
        if not 0.0 <= self.family_affinity <= 1.0:
            raise ConfigError("family_affinity must be in [0, 1]")
        if not self.question_score > 0:
            raise ConfigError("question_score must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthesisConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthesis keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SynthesisConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class GroundTruthMastery:
    """Per-examinee per-skill success probabilities used to simulate responses.

    Synthesis-only; never passed to the tracer.
    """

    initial: np.ndarray
    final: np.ndarray
    examinee_ids: tuple[str, ...] = field(default=())

    def to_csv(self, path, skill_ids: Sequence[str]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["examinee_id", *skill_ids])
            for eid, row in zip(self.examinee_ids, self.final):
                w.writerow([eid, *(repr(float(x)) for x in row)])


def _sample_skill_set(rng, cfg: SynthesisConfig, popularity: np.ndarray, first: int | None = None):
    k = cfg.n_skills
    m_probs = 0.5 ** np.arange(cfg.max_skills_per_question)
    m = 1 + int(rng.choice(cfg.max_skills_per_question, p=m_probs / m_probs.sum()))
    primary = int(rng.choice(k, p=popularity)) if first is None else first
    chosen = [primary]
    family = primary // cfg.skill_family_size
    family_members = [
        s for s in range(family * cfg.skill_family_size, min(k, (family + 1) * cfg.skill_family_size))
    ]
    while len(chosen) < m:
        pool = family_members if rng.random() < cfg.family_affinity else range(k)
        pool = [s for s in pool if s not in chosen]
        if not pool:
            pool = [s for s in range(k) if s not in chosen]
        chosen.append(int(rng.choice(pool)))
    return sorted(chosen)


def sample_question_bank(cfg: SynthesisConfig, rng: np.random.Generator) -> tuple[QuestionBank, QuestionBank]:
    """Return ``(bank, seed_bank)``.

    The seed bank guarantees every skill appears.  The remaining
    questions copy skill sets drawn uniformly from the seed bank's rows,
    so the bank inherits the seed bank's empirical skill-set distribution.
    """
    k = cfg.n_skills
    ranks = np.arange(1, k + 1, dtype=float)
    popularity = ranks ** -cfg.popularity_exponent
    popularity = rng.permutation(popularity / popularity.sum())
    seed_sets = []
    for j in range(cfg.seed_bank_size):
        seed_sets.append(_sample_skill_set(rng, cfg, popularity, first=j if j < k else None))
    order = rng.permutation(cfg.seed_bank_size)
    seed_sets = [seed_sets[i] for i in order]

    n_new = max(0, cfg.n_questions - cfg.seed_bank_size)
    picks = rng.integers(0, cfg.seed_bank_size, size=n_new)
    all_sets = seed_sets[: cfg.n_questions] + [seed_sets[i] for i in picks]

    # relabel skills by first appearance so a CSV round trip keeps the same indices
    relabel: dict[int, int] = {}
    for ss in all_sets + seed_sets:
        for i in ss:
            relabel.setdefault(i, len(relabel))
    for i in range(k):
        relabel.setdefault(i, len(relabel))
    all_sets = [sorted(relabel[i] for i in ss) for ss in all_sets]
    seed_sets = [sorted(relabel[i] for i in ss) for ss in seed_sets]

    skill_ids = [f"s{i:03d}" for i in range(k)]
    skills = [Skill(s, i) for i, s in enumerate(skill_ids)]

    def build(sets):
        qs = []
        for j, ss in enumerate(sets):
            vec = np.zeros(k, dtype=np.uint8)
            vec[ss] = 1
            qs.append(Question(f"q{j:05d}", vec, cfg.question_score))
        return QuestionBank(qs, skills)

    return build(all_sets), build(seed_sets)


def sample_mastery(cfg: SynthesisConfig, rng: np.random.Generator) -> np.ndarray:
    ability = rng.normal(0.0, cfg.ability_sd, size=(cfg.n_examinees, 1))
    difficulty = rng.normal(0.0, cfg.difficulty_sd, size=(1, cfg.n_skills))
    noise = rng.normal(0.0, cfg.skill_noise_sd, size=(cfg.n_examinees, cfg.n_skills))
    return expit(cfg.mean_logit + ability - difficulty + noise)


def simulate_interactions(
    bank: QuestionBank,
    mastery: np.ndarray,
    lengths: Sequence[int],
    rng: np.random.Generator,
    learning_drift: float = 0.0,
    examinee_ids: Sequence[str] | None = None,
) -> tuple[InteractionLog, np.ndarray]:
    """Draw response sequences from per-skill success probabilities.

    Each attempt picks a bank question uniformly; it is answered correctly
    with probability equal to the product of the examinee's current success
    probabilities over the question's skills.  After the attempt, the
    logit of every attempted skill moves by ``learning_drift``.
    Returns the log and the final mastery matrix.
    """
    mastery = np.array(mastery, dtype=float)
    n_examinees = mastery.shape[0]
    if examinee_ids is None:
        examinee_ids = [f"e{e:05d}" for e in range(n_examinees)]
    inc = bank.incidence.astype(bool)
    sequences = []
    for e in range(n_examinees):
        length = int(lengths[e])
        qs = rng.integers(0, len(bank), size=length)
        draws = rng.random(length)
        ys = np.empty(length, dtype=np.uint8)
        row = mastery[e]
        for t in range(length):
            skills = inc[qs[t]]
            ys[t] = draws[t] < np.prod(row[skills])
            if learning_drift:
                row[skills] = expit(logit(row[skills]) + learning_drift)
        sequences.append(ExamineeSequence(examinee_ids[e], qs, ys))
    return InteractionLog(sequences), mastery


def synthesize_corpus(cfg: SynthesisConfig, seed: int) -> tuple[QuestionBank, InteractionLog, GroundTruthMastery]:
    rng = np.random.default_rng(seed)
    bank, _ = sample_question_bank(cfg, rng)
    initial = sample_mastery(cfg, rng)
    lengths = rng.integers(cfg.records_min, cfg.records_max + 1, size=cfg.n_examinees)
    log, final = simulate_interactions(bank, initial, lengths, rng, cfg.learning_drift)
    keep = [e for e, seq in enumerate(log) if len(seq) >= cfg.min_records]
    log = log.subset(keep)
    truth = GroundTruthMastery(initial[keep], final[keep], tuple(log.examinee_ids))
    return bank, log, truth


def seed_bank_for(cfg: SynthesisConfig, seed: int) -> QuestionBank:
    """The seed bank that ``synthesize_corpus(cfg, seed)`` resampled from."""
    return sample_question_bank(cfg, np.random.default_rng(seed))[1]


def bank_to_csv_text(bank: QuestionBank) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BANK_COLUMNS)
    for q in bank.questions:
        w.writerow([q.id, ";".join(bank.skills[i].id for i in q.skill_indices), _format_number(q.score)])
    return buf.getvalue()
