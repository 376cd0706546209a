"""Question embeddings and K-means partitioning of the bank into subspaces.

A question's embedding is the sum of its skills' embeddings.  Clustering
runs Lloyd's algorithm with k-means++ seeding over the *distinct*
embeddings, each weighted by its multiplicity, so questions with the same
skill set always share a cluster.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .corpus import Question, QuestionBank
from .errors import ConfigError, DomainError, InvariantViolation, ParseError
from .tracer import DktModel, skill_embedding

MAX_ITER = 300
PARTITION_FORMAT = "epgen.partition"


def skill_embeddings(model: DktModel) -> np.ndarray:
    """``|K| x d_q`` table of skill embeddings (the correct-response rows)."""
    return model.params["emb"][1::2].copy()


def question_embedding(model: DktModel, question: Question) -> np.ndarray:
    return sum((skill_embedding(model, int(i)) for i in question.skill_indices), np.zeros(model.d_q))


def question_embeddings(model: DktModel, bank: QuestionBank) -> np.ndarray:
    if model.n_skills != bank.n_skills:
        raise DomainError(f"model has {model.n_skills} skills, bank has {bank.n_skills}")
    return bank.incidence.astype(float) @ skill_embeddings(model)


@dataclass(frozen=True, eq=False)
class Partition:
    assignment: np.ndarray  # cluster id per question
    centroids: np.ndarray  # f x d_q
    sse_history: tuple[float, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        f = self.centroids.shape[0]
        if a.ndim != 1 or np.any(a < 0) or np.any(a >= f):
            raise DomainError("assignment ids must lie in [0, f)")
        if np.any(np.bincount(a, minlength=f) == 0):
            raise DomainError("partition has an empty cluster")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        members = tuple(np.flatnonzero(a == k) for k in range(f))
        object.__setattr__(self, "_members", members)

    @property
    def f(self) -> int:
        return self.centroids.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.f)

    def members(self, k: int) -> np.ndarray:
        return self._members[k]

    @classmethod
    def single(cls, n_questions: int, dim: int = 1) -> "Partition":
        """Trivial one-subspace partition covering the whole bank."""
        return cls(np.zeros(n_questions, dtype=np.int64), np.zeros((1, dim)))


def _sq_dists(x, centroids):
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(x, w, f, rng):
    n = x.shape[0]
    first = int(rng.choice(n, p=w / w.sum()))
    chosen = [first]
    d2 = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(1, f):
        mass = w * d2
        total = mass.sum()
        if total <= 0:
            # all remaining points coincide with chosen centers
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        else:
            nxt = int(rng.choice(n, p=mass / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _weighted_sse(x, w, labels, centroids):
    return float((w * ((x - centroids[labels]) ** 2).sum(axis=1)).sum())


def _lloyd(x, w, f, rng, max_iter=MAX_ITER):
    centroids = _kmeanspp(x, w, f, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        new_labels = np.argmin(_sq_dists(x, centroids), axis=1)
        # repair empty clusters by stealing the farthest point of the largest one
        while True:
            counts = np.bincount(new_labels, weights=w, minlength=f)
            empty = np.flatnonzero(counts == 0)
            if len(empty) == 0:
                break
            big = int(np.argmax(counts))
            in_big = np.flatnonzero(new_labels == big)
            far = in_big[np.argmax(((x[in_big] - centroids[big]) ** 2).sum(axis=1))]
            new_labels[far] = empty[0]
            centroids[empty[0]] = x[far]
        for k in range(f):
            sel = new_labels == k
            centroids[k] = np.average(x[sel], axis=0, weights=w[sel])
        sse = _weighted_sse(x, w, new_labels, centroids)
        if history and sse > history[-1] * (1 + 1e-12) + 1e-12:
            raise InvariantViolation(f"Lloyd iteration increased SSE: {history[-1]} -> {sse}")
        history.append(sse)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    return new_labels, centroids, history


def kmeans_partition(embeddings: np.ndarray, f: int, seed: int) -> Partition:
    emb = np.asarray(embeddings, dtype=float)
    if f < 2:
        raise ConfigError("need at least two clusters")
    if f > emb.shape[0]:
        raise ConfigError(f"cannot split {emb.shape[0]} questions into {f} clusters")
    uniq, inverse, counts = np.unique(emb, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if uniq.shape[0] < f:
        raise ConfigError(f"only {uniq.shape[0]} distinct question embeddings for {f} clusters")
    rng = np.random.default_rng(seed)
    labels, centroids, history = _lloyd(uniq, counts.astype(float), f, rng)
    return Partition(labels[inverse], centroids, tuple(history))


def within_cluster_sse(embeddings: np.ndarray, partition: Partition) -> float:
    emb = np.asarray(embeddings, dtype=float)
    return float(((emb - partition.centroids[partition.assignment]) ** 2).sum())


# --------------------------------------------------------------------- io


def save_partition(partition: Partition, bank: QuestionBank, path, seed: int | None = None) -> None:
    doc = {
        "format": PARTITION_FORMAT,
        "f": partition.f,
        "seed": seed,
        "assignment": {q.id: int(k) for q, k in zip(bank.questions, partition.assignment)},
        "centroids": [[float(v) for v in row] for row in partition.centroids],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_partition(path, bank: QuestionBank) -> Partition:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format") != PARTITION_FORMAT:
        raise ParseError(f"{path}: not a partition file")
    mapping = doc["assignment"]
    if set(mapping) != set(bank.ids):
        raise DomainError(f"{path}: partition does not cover exactly the bank's questions")
    assignment = np.array([mapping[qid] for qid in bank.ids], dtype=np.int64)
    return Partition(assignment, np.asarray(doc["centroids"], dtype=float))


def export_embeddings(model: DktModel, bank: QuestionBank, path, partition: Partition | None = None) -> None:
    """CSV ``id,kind,cluster_id,v_0..v_{d-1}``; skills first, then questions."""
    skills = skill_embeddings(model)
    questions = question_embeddings(model, bank)
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "kind", "cluster_id", *(f"v_{i}" for i in range(model.d_q))])
        for s, vec in zip(bank.skills, skills):
            w.writerow([s.id, "skill", "", *(repr(float(v)) for v in vec)])
        for j, (q, vec) in enumerate(zip(bank.questions, questions)):
            cid = "" if partition is None else int(partition.assignment[j])
            w.writerow([q.id, "question", cid, *(repr(float(v)) for v in vec)])


def read_embeddings(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        vcols = [c for c in reader.fieldnames if c.startswith("v_")]
        for row in reader:
            rows.append({
                "id": row["id"],
                "kind": row["kind"],
                "cluster_id": int(row["cluster_id"]) if row["cluster_id"] else None,
                "vector": np.array([float(row[c]) for c in vcols]),
            })
    return rows
