import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from epgen.cli import final_window_mean, main, parse_seeds, read_paper
from epgen.corpus import load_interactions, load_question_bank
from epgen.errors import ConfigError
from epgen.objectives import NormalSpec, PaperScorer, RewardWeights
from epgen.tracer import load_checkpoint, proficiency

TINY = {
    "synthesis": {"n_skills": 6, "n_questions": 60, "n_examinees": 16, "records_min": 12, "records_max": 18,
                  "seed_bank_size": 30},
    "tracer": {"d_q": 4, "d_h": 8, "max_epochs": 4},
    "agent": {"episodes": 3, "steps_per_episode": 6, "batch_size": 4, "memory_size": 20, "hidden": 8},
    "baseline": {"population": 6},
    "exam": {"n": 5},
    "f": 3,
}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY))
    out = root / "run"
    base = ["--config", str(cfg), "--out", str(out)]
    assert main(["synthesize", *base]) == 0
    assert main(["train-dkt", *base]) == 0
    assert main(["partition", *base, "--embeddings"]) == 0
    assert main(["generate", *base, "--seeds", "0-3"]) == 0
    return root


def args(run_dir, out=None):
    return ["--config", str(run_dir / "config.json"), "--out", str(out or run_dir / "run")]


def test_pipeline_outputs(run_dir):
    out = run_dir / "run"
    for name in ("bank.csv", "interactions.csv", "mastery.csv", "synthesis.json", "dkt.json",
                 "training_curve.csv", "partition.json", "embeddings.csv", "summary.csv"):
        assert (out / name).exists(), name
    assert sorted(p.name for p in (out / "papers").iterdir()) == [f"moepg_{s:03d}.json" for s in range(4)]
    trace = read_rows(out / "traces" / "moepg_000.csv")
    assert len(trace) == TINY["agent"]["episodes"]
    curve = read_rows(out / "training_curve.csv")
    assert 1 <= len(curve) <= 100
    model = load_checkpoint(out / "dkt.json")
    heldout = [float(r["heldout_loss"]) for r in curve]
    assert heldout[model.best_epoch - 1] == min(heldout)


def test_summary_matches_evaluate(run_dir, tmp_path):
    out = run_dir / "run"
    assert main(["evaluate", *args(run_dir, tmp_path), "--bank", str(out / "bank.csv"),
                 "--interactions", str(out / "interactions.csv"), "--checkpoint", str(out / "dkt.json"),
                 str(out / "papers"), "--scatter", "--scores"]) == 0
    summary = {r["paper_id"]: r for r in read_rows(out / "summary.csv")}
    evaluated = read_rows(tmp_path / "indicators.csv")
    assert len(evaluated) == 4
    for row in evaluated:
        for key in ("difficulty", "rationality", "validity"):
            assert float(row[key]) == float(summary[row["paper_id"]][key])
    assert len(read_rows(tmp_path / "scores.csv")) == 4 * TINY["synthesis"]["n_examinees"]
    assert len(read_rows(tmp_path / "scatter.csv")) == 4

    # and the same numbers straight from the objectives module
    bank = load_question_bank(out / "bank.csv")
    prof = proficiency(load_checkpoint(out / "dkt.json"), load_interactions(out / "interactions.csv", bank), bank)
    pid, paper = read_paper(out / "papers" / "moepg_002.json", bank)
    scorer = PaperScorer(bank, prof, paper.spec, RewardWeights(), NormalSpec(0.7, 0.15))
    direct = scorer.indicators(paper)
    row = next(r for r in evaluated if r["paper_id"] == pid)
    assert all(abs(float(row[k]) - v) < 1e-12 for k, v in direct.items())


def test_evaluate_empty_list(run_dir, tmp_path):
    assert main(["evaluate", *args(run_dir, tmp_path)]) == 0
    assert (tmp_path / "indicators.csv").read_text() == "paper_id,difficulty,rationality,validity\n"


def test_generate_is_byte_identical(run_dir, tmp_path):
    out = run_dir / "run"
    for name in ("bank.csv", "interactions.csv", "dkt.json", "partition.json"):
        shutil.copy(out / name, tmp_path / name)
    assert main(["generate", *args(run_dir, tmp_path), "--seeds", "0-3"]) == 0
    for f in ("summary.csv", "papers/moepg_001.json", "traces/moepg_003.csv"):
        assert (tmp_path / f).read_bytes() == (out / f).read_bytes()


def test_baseline_budget(run_dir, tmp_path):
    out = run_dir / "run"
    for name in ("bank.csv", "interactions.csv", "dkt.json"):
        shutil.copy(out / name, tmp_path / name)
    for method in ("rsf", "ga", "sa"):
        d = tmp_path / method
        assert main(["baseline", *args(run_dir, d), "--bank", str(tmp_path / "bank.csv"),
                     "--interactions", str(tmp_path / "interactions.csv"),
                     "--checkpoint", str(tmp_path / "dkt.json"),
                     "--method", method, "--seeds", "0,1", "--budget", "40"]) == 0
        rows = read_rows(d / "summary.csv")
        assert [r["paper_id"] for r in rows] == [f"{method}_000", f"{method}_001"]
        assert all(int(r["evaluations"]) <= 40 for r in rows)


def test_ablation_outputs(run_dir, tmp_path):
    out = run_dir / "run"
    assert main(["ablation", *args(run_dir, tmp_path), "--bank", str(out / "bank.csv"),
                 "--interactions", str(out / "interactions.csv"), "--checkpoint", str(out / "dkt.json"),
                 "--partition", str(out / "partition.json"), "--seeds", "0,1"]) == 0
    rows = read_rows(tmp_path / "ablation.csv")
    assert [(r["arm"], r["partition_disabled"]) for r in rows] == [
        ("full", "false"), ("full", "false"), ("global", "true"), ("global", "true")]
    assert json.loads((tmp_path / "global" / "config.json").read_text())["agent"]["partition_disabled"] is True
    traces = read_rows(tmp_path / "ablation_traces.csv")
    assert len(traces) == 2 * TINY["agent"]["episodes"]


def test_kepg_report(run_dir, tmp_path):
    out = run_dir / "run"
    assert main(["kepg", *args(run_dir, tmp_path), "--bank", str(out / "bank.csv"), str(out / "papers")]) == 0
    rows = read_rows(tmp_path / "discrimination.csv")
    assert len(rows) == 11 and rows[-1]["run"] == "summary"
    values = [float(r["discrimination"]) for r in rows[:-1]]
    assert float(rows[-1]["discrimination"]) == pytest.approx(np.mean(values), abs=1e-15)
    assert all(len(r["paper_ids"].split(";")) == 3 for r in rows[:-1])
    assert main(["kepg", *args(run_dir, tmp_path), "--bank", str(out / "bank.csv"), "--k", "5",
                 str(out / "papers")]) == 1


def test_missing_prerequisites_name_the_step(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path)]) == 1
    assert "epgen synthesize" in capsys.readouterr().err
    (tmp_path / "bank.csv").write_text("x")
    (tmp_path / "interactions.csv").write_text("x")
    assert main(["partition", "--out", str(tmp_path)]) == 1
    assert "epgen train-dkt" in capsys.readouterr().err


def test_malformed_paper_and_config(run_dir, tmp_path, capsys):
    out = run_dir / "run"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["kepg", *args(run_dir, tmp_path), "--bank", str(out / "bank.csv"), str(bad)]) == 1
    assert "invalid JSON" in capsys.readouterr().err
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"agent": {"warp": 9}}))
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "unknown agent keys" in capsys.readouterr().err


def test_helpers():
    assert parse_seeds("0-3,7") == [0, 1, 2, 3, 7]
    with pytest.raises(ConfigError):
        parse_seeds("3-1")
    assert final_window_mean(list(range(20))) == 18.5
    assert final_window_mean([4.0]) == 4.0
