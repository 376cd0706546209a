import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epgen.errors import ConfigError, DomainError, ParseError
from epgen.partition import (
    Partition,
    export_embeddings,
    kmeans_partition,
    load_partition,
    question_embedding,
    question_embeddings,
    read_embeddings,
    save_partition,
    skill_embeddings,
    within_cluster_sse,
)
from epgen.tracer import DktModel, skill_embedding

from conftest import random_bank
from oracles import exhaustive_two_means


@pytest.fixture
def model(toy_bank):
    return DktModel.init(toy_bank.n_skills, 5, 4, np.random.default_rng(0), init_scale=1.0)


def test_question_embedding_sums_skills(toy_bank, model):
    a, b = skill_embedding(model, 0), skill_embedding(model, 1)
    assert np.array_equal(question_embedding(model, toy_bank[3]), a)  # q3 covers a only
    assert np.allclose(question_embedding(model, toy_bank[0]), a + b, atol=0)


def test_bank_embeddings_match_loop(toy_bank, model):
    emb = question_embeddings(model, toy_bank)
    for j, q in enumerate(toy_bank.questions):
        acc = np.zeros(model.d_q)
        for i in q.skill_indices:
            acc = acc + model.params["emb"][2 * int(i) + 1]
        assert np.allclose(emb[j], acc, rtol=0, atol=1e-15)
    assert np.array_equal(skill_embeddings(model), np.stack([skill_embedding(model, i) for i in range(3)]))


def test_exact_cover_and_identical_skill_sets():
    rng = np.random.default_rng(1)
    bank = random_bank(rng, 300, 8)
    m = DktModel.init(8, 6, 4, rng, init_scale=1.0)
    emb = question_embeddings(m, bank)
    part = kmeans_partition(emb, 10, seed=3)
    assert part.f == 10 and part.sizes.sum() == len(bank)
    assert np.all(part.sizes > 0)
    assert sorted(np.concatenate([part.members(k) for k in range(10)]).tolist()) == list(range(len(bank)))
    groups = {}
    for j, q in enumerate(bank.questions):
        groups.setdefault(tuple(q.skill_indices), set()).add(int(part.assignment[j]))
    assert all(len(ids) == 1 for ids in groups.values())
    assert np.all(np.diff(part.sse_history) <= 1e-12 * part.sse_history[0])
    again = kmeans_partition(emb, 10, seed=3)
    assert np.array_equal(part.assignment, again.assignment)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_sse_history_monotone(seed, f):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 3))
    part = kmeans_partition(x, f, seed)
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(part.sse_history, part.sse_history[1:]))
    assert within_cluster_sse(x, part) == pytest.approx(part.sse_history[-1], rel=1e-9)


def test_near_exhaustive_optimum_on_eight_points():
    for case in range(5):
        pts = np.random.default_rng(100 + case).normal(size=(8, 2))
        best = min(within_cluster_sse(pts, kmeans_partition(pts, 2, s)) for s in range(5))
        assert best <= 1.10 * exhaustive_two_means(pts) + 1e-12


def test_config_errors():
    x = np.arange(6, dtype=float).reshape(3, 2)
    with pytest.raises(ConfigError):
        kmeans_partition(x, 4, 0)
    with pytest.raises(ConfigError):
        kmeans_partition(x, 1, 0)
    with pytest.raises(ConfigError):
        kmeans_partition(np.zeros((5, 2)), 2, 0)
    with pytest.raises(DomainError):
        Partition(np.array([0, 0]), np.zeros((2, 1)))


def test_export_round_trip(tmp_path, toy_bank, model):
    part = kmeans_partition(question_embeddings(model, toy_bank), 2, 0)
    path = tmp_path / "emb.csv"
    export_embeddings(model, toy_bank, path, part)
    rows = read_embeddings(path)
    assert len(rows) == toy_bank.n_skills + len(toy_bank)
    skills = [r for r in rows if r["kind"] == "skill"]
    questions = [r for r in rows if r["kind"] == "question"]
    assert all(r["cluster_id"] is None for r in skills)
    assert [r["cluster_id"] for r in questions] == part.assignment.tolist()
    assert np.allclose(np.stack([r["vector"] for r in skills]), skill_embeddings(model), atol=1e-9)
    assert np.allclose(np.stack([r["vector"] for r in questions]), question_embeddings(model, toy_bank), atol=1e-9)
    with pytest.raises(OSError):
        export_embeddings(model, toy_bank, tmp_path / "missing" / "emb.csv")


def test_save_load_partition(tmp_path, toy_bank, model):
    part = kmeans_partition(question_embeddings(model, toy_bank), 3, 1)
    path = tmp_path / "p.json"
    save_partition(part, toy_bank, path, seed=1)
    back = load_partition(path, toy_bank)
    assert np.array_equal(back.assignment, part.assignment)
    assert np.array_equal(back.centroids, part.centroids)
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ParseError):
        load_partition(tmp_path / "bad.json", toy_bank)
