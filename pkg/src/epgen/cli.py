"""Command-line harness: synthesis, tracer training, partitioning, generation,
baselines, evaluation, ablation and parallel-paper (K-paper) reports.

Every subcommand reads an optional JSON config (``--config``); explicit flags
override it.  Input paths default to files inside ``--out`` so a pipeline can
run as::

    epgen synthesize --out run
    epgen train-dkt --out run
    epgen partition --out run
    epgen generate --out run --seeds 0-19

Outputs carry no timestamps, so the same config and seed reproduce them
byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agent import AgentConfig, generate_exam
from .baselines import METHODS, BaselineConfig, run_baseline
from .corpus import (
    ExamPaper,
    ExamSpec,
    QuestionBank,
    SynthesisConfig,
    load_interactions,
    load_question_bank,
    synthesize_corpus,
    write_interactions,
    write_question_bank,
)
from .errors import ConfigError, EpgenError, InvariantViolation, ParseError, UnknownReferenceError
from .objectives import NormalSpec, PaperScorer, RewardWeights, discrimination
from .partition import export_embeddings, kmeans_partition, load_partition, question_embeddings, save_partition
from .tracer import TracerConfig, load_checkpoint, proficiency, save_checkpoint, train

log = logging.getLogger("epgen")

PAPER_FORMAT = "epgen.paper"
DEFAULT_FILES = {
    "bank": "bank.csv",
    "interactions": "interactions.csv",
    "checkpoint": "dkt.json",
    "partition": "partition.json",
}
PREREQUISITE = {
    "bank": "synthesize",
    "interactions": "synthesize",
    "checkpoint": "train-dkt",
    "partition": "partition",
}


# ------------------------------------------------------------------ config


def _section(cls, data: dict | None, name: str):
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from None


@dataclass
class RunConfig:
    out: str = "."
    bank: str | None = None
    interactions: str | None = None
    checkpoint: str | None = None
    partition: str | None = None
    seed: int = 0
    seeds: list[int] | None = None
    exam: dict = field(default_factory=lambda: {"n": 100, "points": 1.0, "d": 0.7})
    sigma: float = 0.15
    f: int = 10
    weights: RewardWeights = field(default_factory=RewardWeights)
    tracer: TracerConfig = field(default_factory=TracerConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    kepg: dict = field(default_factory=lambda: {"k": 3, "runs": 10})

    SECTIONS = {
        "weights": RewardWeights,
        "tracer": TracerConfig,
        "agent": AgentConfig,
        "baseline": BaselineConfig,
        "synthesis": SynthesisConfig,
    }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for name, section_cls in cls.SECTIONS.items():
            if name in data:
                data[name] = _section(section_cls, data[name], name)
        if "exam" in data:
            exam = {"n": 100, "points": 1.0, "d": 0.7}
            bad = set(data["exam"]) - set(exam)
            if bad:
                raise ConfigError(f"unknown exam keys: {sorted(bad)}")
            exam.update(data["exam"])
            data["exam"] = exam
        if "kepg" in data:
            kepg = {"k": 3, "runs": 10}
            kepg.update(data["kepg"])
            data["kepg"] = kepg
        cfg = cls(**data)
        if cfg.seeds is not None and len(cfg.seeds) == 0:
            raise ConfigError("seeds must be non-empty")
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        return out

    # derived objects ---------------------------------------------------
    def exam_spec(self) -> ExamSpec:
        n = int(self.exam["n"])
        points = self.exam["points"]
        b = tuple(float(p) for p in points) if isinstance(points, (list, tuple)) else (float(points),) * n
        return ExamSpec(n, b, sum(b), float(self.exam["d"]))

    def normal(self) -> NormalSpec:
        return NormalSpec(mu=float(self.exam["d"]), sigma=self.sigma)

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds is not None else [self.seed]

    def path(self, name: str, must_exist: bool = True) -> Path:
        given = getattr(self, name)
        p = Path(given) if given is not None else Path(self.out) / DEFAULT_FILES[name]
        if must_exist and not p.exists():
            raise ConfigError(f"{name} file not found: {p} (run `epgen {PREREQUISITE[name]}` first "
                              f"or pass --{name})")
        return p


def parse_seeds(text: str) -> list[int]:
    """``"0-19"``, ``"1,4,7"`` or a mix such as ``"0-2,10"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)(?:-(\d+))?", part)
        if m is None:
            raise ConfigError(f"bad seed list {text!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) is not None else lo
        if hi < lo:
            raise ConfigError(f"empty seed range {part!r}")
        seeds.extend(range(lo, hi + 1))
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _apply_set(data: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(f"--set expects section.key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p} is not a section")
    node[parts[-1]] = value


def load_run_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.config}: invalid JSON ({exc.msg})", line=exc.lineno) from None
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: top level must be an object")

    def put(section, key, value):
        if value is not None:
            (data.setdefault(section, {}) if section else data)[key] = value

    for name in ("out", "bank", "interactions", "checkpoint", "partition", "seed"):
        put(None, name, getattr(args, name, None))
    if getattr(args, "seeds", None) is not None:
        data["seeds"] = parse_seeds(args.seeds)
    put(None, "f", getattr(args, "f", None))
    put("exam", "n", getattr(args, "n", None))
    put("exam", "points", getattr(args, "points", None))
    put("exam", "d", getattr(args, "d", None))
    for w in ("w1", "w2", "w3"):
        put("weights", w, getattr(args, w, None))
    put("tracer", "max_epochs", getattr(args, "epochs", None))
    put("agent", "episodes", getattr(args, "episodes", None))
    put("agent", "steps_per_episode", getattr(args, "steps", None))
    put("agent", "ts", getattr(args, "ts", None))
    put("kepg", "k", getattr(args, "k", None))
    put("kepg", "runs", getattr(args, "runs", None))
    for assignment in getattr(args, "set", None) or []:
        _apply_set(data, assignment)
    return RunConfig.from_dict(data)


# --------------------------------------------------------------- file io


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_paper(path: Path, paper: ExamPaper, bank: QuestionBank, **meta) -> None:
    doc = {
        "format": PAPER_FORMAT,
        "question_ids": [bank.questions[q].id for q in paper.questions],
        "points": list(paper.spec.b),
        "total": paper.spec.o,
        "d": paper.spec.d,
        **meta,
    }
    _write_json(path, doc)


def read_paper(path, bank: QuestionBank) -> tuple[str, ExamPaper]:
    """Returns ``(paper_id, paper)``; the id is the file stem."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != PAPER_FORMAT:
        raise ParseError(f"{path}: not a paper file")
    try:
        ids = list(doc["question_ids"])
        points = tuple(float(p) for p in doc["points"])
        d = float(doc["d"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed paper ({exc})") from None
    try:
        idx = tuple(bank.index_of(q) for q in ids)
    except UnknownReferenceError as exc:
        raise UnknownReferenceError(f"{path}: {exc}") from None
    spec = ExamSpec(len(idx), points, float(doc.get("total", sum(points))), d)
    return path.stem, ExamPaper(idx, spec)


def _paper_files(paths) -> list[Path]:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"paper file not found: {p}")
    return files


# ------------------------------------------------------------ shared setup


@dataclass
class Workspace:
    bank: QuestionBank
    scorer: PaperScorer
    question_emb: np.ndarray | None = None
    partition: object = None


def _bank(cfg: RunConfig) -> QuestionBank:
    return load_question_bank(cfg.path("bank"))


def _require(cfg: RunConfig, *names) -> list[Path]:
    """Resolve every input path up front so a missing one is reported before any parsing."""
    return [cfg.path(n) for n in names]


def _workspace(cfg: RunConfig, need_partition: bool) -> Workspace:
    names = ("bank", "interactions", "checkpoint") + (("partition",) if need_partition else ())
    _require(cfg, *names)
    bank = _bank(cfg)
    interactions = load_interactions(cfg.path("interactions"), bank)
    model = load_checkpoint(cfg.path("checkpoint"))
    prof = proficiency(model, interactions, bank)
    spec = cfg.exam_spec()
    scorer = PaperScorer(bank, prof, spec, cfg.weights, cfg.normal())
    ws = Workspace(bank, scorer, question_embeddings(model, bank))
    if need_partition:
        ws.partition = load_partition(cfg.path("partition"), bank)
    return ws


def _indicator_row(scorer: PaperScorer, paper: ExamPaper) -> list[str]:
    ind = scorer.indicators(paper)
    return [_fmt(ind["difficulty"]), _fmt(ind["rationality"]), _fmt(ind["validity"])]


# -------------------------------------------------------------- commands


def cmd_synthesize(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bank, interactions, truth = synthesize_corpus(cfg.synthesis, cfg.seed)
    write_question_bank(bank, out / "bank.csv")
    write_interactions(interactions, bank, out / "interactions.csv")
    truth.to_csv(out / "mastery.csv", [s.id for s in bank.skills])
    _write_json(out / "synthesis.json", {"seed": cfg.seed, **dataclasses.asdict(cfg.synthesis)})
    log.info("wrote %d questions, %d examinees to %s", len(bank), len(interactions), out)


def cmd_train_dkt(cfg: RunConfig, args) -> None:
    _require(cfg, "bank", "interactions")
    bank = _bank(cfg)
    interactions = load_interactions(cfg.path("interactions"), bank)
    tcfg = dataclasses.replace(cfg.tracer, seed=cfg.seed)

    def progress(stats):
        log.info("epoch %d train %.4f heldout %.4f", stats.epoch, stats.train_loss, stats.heldout_loss)

    model = train(interactions, bank, tcfg, progress)
    ckpt = cfg.path("checkpoint", must_exist=False)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt)
    _write_csv(Path(cfg.out) / "training_curve.csv", ["epoch", "train_loss", "heldout_loss"],
               ([s.epoch, _fmt(s.train_loss), _fmt(s.heldout_loss)] for s in model.history))
    log.info("best epoch %s; checkpoint %s", model.best_epoch, ckpt)


def cmd_partition(cfg: RunConfig, args) -> None:
    _require(cfg, "bank", "checkpoint")
    bank = _bank(cfg)
    model = load_checkpoint(cfg.path("checkpoint"))
    part = kmeans_partition(question_embeddings(model, bank), cfg.f, cfg.seed)
    target = cfg.path("partition", must_exist=False)
    target.parent.mkdir(parents=True, exist_ok=True)
    save_partition(part, bank, target, seed=cfg.seed)
    if args.embeddings:
        export_embeddings(model, bank, Path(cfg.out) / "embeddings.csv", part)
    log.info("cluster sizes %s", part.sizes.tolist())


def _run_agent(ws: Workspace, cfg: RunConfig, agent_cfg: AgentConfig, seed: int):
    return generate_exam(ws.bank, ws.question_emb, ws.partition, None, cfg.exam_spec(), cfg.weights,
                         agent_cfg.replace(seed=seed), cfg.normal(), scorer=ws.scorer)


SUMMARY_HEADER = ["paper_id", "seed", "reward", "evaluations", "difficulty", "rationality", "validity"]


def cmd_generate(cfg: RunConfig, args) -> None:
    ws = _workspace(cfg, need_partition=not cfg.agent.partition_disabled)
    out = Path(cfg.out)
    rows = []
    for seed in cfg.seed_list():
        paper, trace = _run_agent(ws, cfg, cfg.agent, seed)
        pid = f"moepg_{seed:03d}"
        write_paper(out / "papers" / f"{pid}.json", paper, ws.bank, method="moepg", seed=seed,
                    reward=trace.best_reward)
        _write_csv(out / "traces" / f"{pid}.csv", ["episode", "cumulative_reward"],
                   ([e + 1, _fmt(r)] for e, r in enumerate(trace.episode_rewards)))
        rows.append([pid, seed, _fmt(trace.best_reward), trace.evaluations, *_indicator_row(ws.scorer, paper)])
        log.info("%s reward %.4f", pid, trace.best_reward)
    _write_csv(out / "summary.csv", SUMMARY_HEADER, rows)
    _write_json(out / "generate_config.json", cfg.to_dict())


def _budgeted(bcfg: BaselineConfig, method: str, budget: int | None) -> BaselineConfig:
    """Spend roughly ``budget`` reward evaluations."""
    if budget is None:
        return bcfg
    if budget < 1:
        raise ConfigError("budget must be positive")
    if method == "rsf":
        return bcfg.replace(trials=budget)
    if method == "sa":
        return bcfg.replace(sa_iterations=max(1, budget - 1))
    return bcfg.replace(generations=max(0, (budget - bcfg.population) // max(1, bcfg.population - 1)))


def cmd_baseline(cfg: RunConfig, args) -> None:
    _require(cfg, "bank", "interactions", "checkpoint")
    bank = _bank(cfg)
    interactions = load_interactions(cfg.path("interactions"), bank)
    model = load_checkpoint(cfg.path("checkpoint"))
    scorer = PaperScorer(bank, proficiency(model, interactions, bank), cfg.exam_spec(), cfg.weights, cfg.normal())
    out = Path(cfg.out)
    rows = []
    for seed in cfg.seed_list():
        bcfg = _budgeted(cfg.baseline, args.method, args.budget).replace(seed=seed)
        paper, res = run_baseline(args.method, bank, None, cfg.exam_spec(), cfg.weights, bcfg,
                                  cfg.normal(), scorer=scorer)
        pid = f"{args.method}_{seed:03d}"
        write_paper(out / "papers" / f"{pid}.json", paper, bank, method=args.method, seed=seed,
                    reward=res.best_reward)
        _write_csv(out / "traces" / f"{pid}.csv", ["iteration", "best_reward"],
                   ([i + 1, _fmt(r)] for i, r in enumerate(res.history)))
        rows.append([pid, seed, _fmt(res.best_reward), res.evaluations, *_indicator_row(scorer, paper)])
    _write_csv(out / "summary.csv", SUMMARY_HEADER, rows)


def cmd_evaluate(cfg: RunConfig, args) -> None:
    files = _paper_files(args.papers)
    out = Path(cfg.out)
    rows, scatter, scores = [], [], []
    if files:
        ws = _workspace(cfg, need_partition=False)
        for f in files:
            pid, paper = read_paper(f, ws.bank)
            ind = ws.scorer.indicators(paper)
            rows.append([pid, _fmt(ind["difficulty"]), _fmt(ind["rationality"]), _fmt(ind["validity"])])
            scatter.append([pid, _fmt(ind["difficulty"]), _fmt(ind["validity"])])
            pct = 100.0 * ws.scorer.scores(paper.questions, paper.spec.points) / paper.spec.o
            eids = ws.scorer.examinee_ids or tuple(str(i) for i in range(len(pct)))
            scores.extend([pid, e, _fmt(s)] for e, s in zip(eids, pct))
    _write_csv(out / "indicators.csv", ["paper_id", "difficulty", "rationality", "validity"], rows)
    if args.scatter:
        _write_csv(out / "scatter.csv", ["paper_id", "difficulty", "validity"], scatter)
    if args.scores:
        _write_csv(out / "scores.csv", ["paper_id", "examinee_id", "score"], scores)


def final_window_mean(episode_rewards, fraction: float = 0.1) -> float:
    """Mean cumulative reward over the final ``fraction`` of episodes (at least one)."""
    k = max(1, int(round(len(episode_rewards) * fraction)))
    return float(np.mean(episode_rewards[-k:]))


def cmd_ablation(cfg: RunConfig, args) -> None:
    ws = _workspace(cfg, need_partition=True)
    out = Path(cfg.out)
    arms = {
        "full": cfg.agent.replace(partition_disabled=False),
        "global": cfg.agent.replace(partition_disabled=True),
    }
    seeds = cfg.seed_list()
    rows, traces = [], {}
    for arm, acfg in arms.items():
        _write_json(out / arm / "config.json", {**cfg.to_dict(), "agent": dataclasses.asdict(acfg),
                                                 "arm": arm, "seeds": seeds})
        for seed in seeds:
            paper, trace = _run_agent(ws, cfg, acfg, seed)
            pid = f"{arm}_{seed:03d}"
            write_paper(out / arm / "papers" / f"{pid}.json", paper, ws.bank, method=arm, seed=seed,
                        reward=trace.best_reward, partition_disabled=acfg.partition_disabled)
            traces[arm, seed] = trace.episode_rewards
            rows.append([arm, str(acfg.partition_disabled).lower(), seed,
                         _fmt(final_window_mean(trace.episode_rewards)), _fmt(trace.best_reward),
                         *_indicator_row(ws.scorer, paper)])
            log.info("%s reward %.4f", pid, trace.best_reward)
    _write_csv(out / "ablation.csv",
               ["arm", "partition_disabled", "seed", "final_window_reward", "best_reward",
                "difficulty", "rationality", "validity"], rows)
    trace_rows = []
    for seed in seeds:
        for e, (a, b) in enumerate(zip(traces["full", seed], traces["global", seed])):
            trace_rows.append([seed, e + 1, _fmt(a), _fmt(b)])
    _write_csv(out / "ablation_traces.csv", ["seed", "episode", "full", "global"], trace_rows)


def cmd_kepg(cfg: RunConfig, args) -> None:
    bank = _bank(cfg)
    src = args.papers or [str(Path(cfg.out) / "papers")]
    files = _paper_files(src)
    papers = [read_paper(f, bank) for f in files]
    k, runs = int(cfg.kepg["k"]), int(cfg.kepg["runs"])
    if k < 2:
        raise ConfigError("K must be at least 2")
    if len(papers) < k:
        raise ConfigError(f"need at least {k} papers for K={k}, found {len(papers)} "
                          f"(run `epgen generate` with more seeds)")
    rng = np.random.default_rng(cfg.seed)
    rows, values = [], []
    for run in range(1, runs + 1):
        pick = np.sort(rng.choice(len(papers), size=k, replace=False))
        value = discrimination([papers[i][1] for i in pick])
        values.append(value)
        rows.append([run, ";".join(papers[i][0] for i in pick), _fmt(value), ""])
    mean, std = float(np.mean(values)), float(np.std(values))
    rows.append(["summary", "", _fmt(mean), _fmt(std)])
    out = Path(cfg.out)
    _write_csv(out / "discrimination.csv", ["run", "paper_ids", "discrimination", "std"], rows)
    _write_json(out / "discrimination.json", {"k": k, "runs": runs, "seed": cfg.seed, "mean": mean,
                                              "std": std, "values": values})


COMMANDS = {
    "synthesize": cmd_synthesize,
    "train-dkt": cmd_train_dkt,
    "partition": cmd_partition,
    "generate": cmd_generate,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "ablation": cmd_ablation,
    "kepg": cmd_kepg,
}


# ----------------------------------------------------------------- parser


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config value, e.g. --set agent.gamma=0.8")
    p.add_argument("-v", "--verbose", action="store_true")


def _inputs(p, *names):
    for name in names:
        p.add_argument(f"--{name}", help=f"{name} file (default: <out>/{DEFAULT_FILES[name]})")


def _exam_flags(p):
    p.add_argument("--n", type=int, help="questions per paper")
    p.add_argument("--points", type=float, help="points per question")
    p.add_argument("--d", type=float, help="target difficulty in [0, 1]")
    for w in ("w1", "w2", "w3"):
        p.add_argument(f"--{w}", type=float)


def _agent_flags(p):
    p.add_argument("--seeds", help="seed list, e.g. 0-19 or 1,5,9 (default: --seed)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--steps", type=int, help="steps per episode")
    p.add_argument("--ts", type=float, help="coverage threshold for leaving a subspace")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epgen", description="Exam-paper generation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="write a synthetic bank, interaction log and ground truth")
    _shared(p)

    p = sub.add_parser("train-dkt", help="train the knowledge tracer")
    _shared(p)
    _inputs(p, "bank", "interactions", "checkpoint")
    p.add_argument("--epochs", type=int, help="maximum epochs (<= 100)")

    p = sub.add_parser("partition", help="cluster question embeddings into subspaces")
    _shared(p)
    _inputs(p, "bank", "checkpoint", "partition")
    p.add_argument("--f", type=int, help="number of subspaces")
    p.add_argument("--embeddings", action="store_true", help="also write embeddings.csv")

    p = sub.add_parser("generate", help="generate papers with the DDQN agent")
    _shared(p)
    _inputs(p, "bank", "interactions", "checkpoint", "partition")
    _exam_flags(p)
    _agent_flags(p)

    p = sub.add_parser("baseline", help="generate papers with RSF, GA or SA")
    _shared(p)
    _inputs(p, "bank", "interactions", "checkpoint")
    _exam_flags(p)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--seeds", help="seed list (default: --seed)")
    p.add_argument("--budget", type=int, help="reward evaluations to spend (overrides method sizes)")

    p = sub.add_parser("evaluate", help="indicators for saved papers")
    _shared(p)
    _inputs(p, "bank", "interactions", "checkpoint")
    _exam_flags(p)
    p.add_argument("papers", nargs="*", help="paper files or directories of them")
    p.add_argument("--scatter", action="store_true", help="also write scatter.csv")
    p.add_argument("--scores", action="store_true", help="also write per-examinee scores.csv")

    p = sub.add_parser("ablation", help="full agent vs. whole-bank sampling, matched seeds")
    _shared(p)
    _inputs(p, "bank", "interactions", "checkpoint", "partition")
    _exam_flags(p)
    _agent_flags(p)

    p = sub.add_parser("kepg", help="discrimination of K papers drawn from a batch")
    _shared(p)
    _inputs(p, "bank")
    p.add_argument("papers", nargs="*", help="paper files or directories (default: <out>/papers)")
    p.add_argument("--k", type=int, help="papers per draw (default 3)")
    p.add_argument("--runs", type=int, help="number of draws (default 10)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_run_config(args)
        COMMANDS[args.command](cfg, args)
    except InvariantViolation as exc:
        print(f"epgen: internal invariant violated: {exc}", file=sys.stderr)
        return 2
    except (EpgenError, OSError) as exc:
        print(f"epgen {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
