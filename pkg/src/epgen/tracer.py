"""Deep knowledge tracing: single-layer LSTM trained with hand-written BPTT.

Each interaction is encoded by summing rows of a learned ``2|K| x d_q``
embedding table, one row ``(skill, correctness)`` per skill the attempted
question covers.  Gate order in the packed weight matrices is
``input, forget, output, cell``.  The read-out takes the output gate:

    p_t = sigmoid(W_s o_t + b_s)

``p_t`` predicts the response at step ``t + 1``; the first record of each
sequence is input only.  For a multi-skill question the predicted
probability is the mean of ``p_{t-1}`` over the question's skills.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .corpus import InteractionLog, InteractionRecord, QuestionBank
from .errors import ConfigError, DomainError, ParseError, TrainingDivergedError
from .optim import Adam, clip_by_global_norm

PROB_EPS = 1e-7
CHECKPOINT_FORMAT = "epgen.dkt"
CHECKPOINT_VERSION = 1
GATES = ("i", "f", "o", "c")


@dataclass
class TracerConfig:
    d_q: int = 30
    d_h: int = 200
    learning_rate: float = 1e-3
    max_epochs: int = 100
    batch_size: int = 8
    grad_clip: float = 5.0
    heldout_fraction: float = 0.1
    patience: int | None = None
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.max_epochs <= 100:
            raise ConfigError("max_epochs must be in [1, 100]")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.d_q < 1 or self.d_h < 1 or self.batch_size < 1:
            raise ConfigError("d_q, d_h and batch_size must be positive")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ConfigError("heldout_fraction must be in [0, 1)")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    heldout_loss: float


@dataclass(eq=False)
class DktModel:
    params: dict[str, np.ndarray]
    n_skills: int
    d_q: int
    d_h: int
    skill_ids: tuple[str, ...] = ()
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None

    def __post_init__(self):
        k, dq, dh = self.n_skills, self.d_q, self.d_h
        shapes = {
            "emb": (2 * k, dq),
            "W_x": (dq, 4 * dh),
            "W_h": (dh, 4 * dh),
            "b": (4 * dh,),
            "W_s": (dh, k),
            "b_s": (k,),
        }
        if set(self.params) != set(shapes):
            raise DomainError(f"model parameters must be exactly {sorted(shapes)}")
        for name, shape in shapes.items():
            arr = self.params[name]
            if arr.shape != shape:
                raise DomainError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"parameter {name} is not finite")

    @classmethod
    def init(cls, n_skills: int, d_q: int, d_h: int, rng: np.random.Generator, init_scale: float = 0.1,
             skill_ids: Sequence[str] = ()) -> "DktModel":
        bound = 1.0 / np.sqrt(d_h)
        params = {
            "emb": rng.normal(0.0, init_scale, size=(2 * n_skills, d_q)),
            "W_x": rng.uniform(-bound, bound, size=(d_q, 4 * d_h)),
            "W_h": rng.uniform(-bound, bound, size=(d_h, 4 * d_h)),
            "b": np.zeros(4 * d_h),
            "W_s": rng.uniform(-bound, bound, size=(d_h, n_skills)),
            "b_s": np.zeros(n_skills),
        }
        return cls(params, n_skills, d_q, d_h, tuple(skill_ids))

    def copy(self) -> "DktModel":
        return DktModel({k: v.copy() for k, v in self.params.items()}, self.n_skills, self.d_q, self.d_h,
                        self.skill_ids, list(self.history), self.best_epoch)


# ------------------------------------------------------------------ encoding


def input_rows(record: InteractionRecord, bank: QuestionBank) -> np.ndarray:
    """Embedding-table rows ``2 * skill + correct`` summed for one record."""
    skills = bank[record.question_index].skill_indices
    return 2 * skills + int(record.correct)


def encode_input(record: InteractionRecord, model: DktModel, bank: QuestionBank) -> np.ndarray:
    return model.params["emb"][input_rows(record, bank)].sum(axis=0)


def skill_embedding(model: DktModel, skill: int) -> np.ndarray:
    if not 0 <= skill < model.n_skills:
        raise DomainError(f"skill index {skill} outside [0, {model.n_skills})")
    return model.params["emb"][2 * skill + 1].copy()


@dataclass
class _Batch:
    inputs: np.ndarray  # (T, B, 2K) multi-hot over embedding rows
    target_w: np.ndarray  # (T, B, K) skill weights of the question answered at t
    y: np.ndarray  # (T, B)
    target_mask: np.ndarray  # (T, B): 1 where step t >= 1 is a real record
    lengths: np.ndarray


def _make_batch(sequences, bank: QuestionBank) -> _Batch:
    k = bank.n_skills
    lengths = np.array([len(s) for s in sequences])
    T, B = int(lengths.max()), len(sequences)
    inc = bank.incidence.astype(float)
    inputs = np.zeros((T, B, 2 * k))
    target_w = np.zeros((T, B, k))
    y = np.zeros((T, B))
    mask = np.zeros((T, B))
    for b, seq in enumerate(sequences):
        n = len(seq)
        rows = inc[seq.questions]  # (n, K)
        yy = seq.correct.astype(float)
        inputs[:n, b, 0::2] = rows * (1 - yy)[:, None]
        inputs[:n, b, 1::2] = rows * yy[:, None]
        target_w[:n, b] = rows / rows.sum(axis=1, keepdims=True)
        y[:n, b] = yy
        mask[1:n, b] = 1.0
    return _Batch(inputs, target_w, y, mask, lengths)


# ---------------------------------------------------------- forward/backward


def _forward(params, inputs):
    W_x, W_h, b = params["W_x"], params["W_h"], params["b"]
    H = W_h.shape[0]
    T, B, _ = inputs.shape
    X = inputs @ params["emb"]  # (T, B, d_q)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = {k: np.empty((T, B, H)) for k in ("h_prev", "c_prev", "i", "f", "o", "g", "tc")}
    p = np.empty((T, B, params["b_s"].shape[0]))
    Zx = X @ W_x + b
    for t in range(T):
        z = Zx[t] + h @ W_h
        i = expit(z[:, :H])
        f = expit(z[:, H:2 * H])
        o = expit(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        cache["h_prev"][t] = h
        cache["c_prev"][t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        for name, val in (("i", i), ("f", f), ("o", o), ("g", g), ("tc", tc)):
            cache[name][t] = val
        p[t] = expit(o @ params["W_s"] + params["b_s"])
    cache["X"] = X
    return p, cache


def _target_probs(p, batch: _Batch):
    """Predicted probability for each step's answer, read from the previous step."""
    phat = np.zeros_like(batch.y)
    phat[1:] = np.einsum("tbk,tbk->tb", p[:-1], batch.target_w[1:])
    return phat


def _bce_terms(phat, batch: _Batch):
    pc = np.clip(phat, PROB_EPS, 1 - PROB_EPS)
    y = batch.y
    terms = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    return terms * batch.target_mask


def _backward(params, batch: _Batch, p, cache, scale: float):
    """Gradients of ``scale * sum(BCE terms)`` w.r.t. every parameter."""
    W_x, W_h, W_s = params["W_x"], params["W_h"], params["W_s"]
    H = W_h.shape[0]
    T, B, _ = batch.inputs.shape
    phat = _target_probs(p, batch)
    inside = ((phat > PROB_EPS) & (phat < 1 - PROB_EPS)).astype(float)
    pc = np.clip(phat, PROB_EPS, 1 - PROB_EPS)
    y = batch.y
    dphat = scale * batch.target_mask * inside * (-(y / pc) + (1 - y) / (1 - pc))

    dp = np.zeros_like(p)
    dp[:-1] = dphat[1:, :, None] * batch.target_w[1:]
    da = dp * p * (1 - p)  # (T, B, K)
    o_all = cache["o"]
    grads = {
        "W_s": np.einsum("tbh,tbk->hk", o_all, da),
        "b_s": da.sum(axis=(0, 1)),
    }
    do_head = da @ W_s.T  # (T, B, H)

    dZ = np.empty((T, B, 4 * H))
    dh = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i, f, o, g, tc = (cache[k][t] for k in ("i", "f", "o", "g", "tc"))
        do = do_head[t] + dh * tc
        dc = dc_next + dh * o * (1 - tc * tc)
        dZ[t, :, :H] = dc * g * i * (1 - i)
        dZ[t, :, H:2 * H] = dc * cache["c_prev"][t] * f * (1 - f)
        dZ[t, :, 2 * H:3 * H] = do * o * (1 - o)
        dZ[t, :, 3 * H:] = dc * i * (1 - g * g)
        dh = dZ[t] @ W_h.T
        dc_next = dc * f
    grads["W_x"] = np.einsum("tbd,tbz->dz", cache["X"], dZ)
    grads["W_h"] = np.einsum("tbh,tbz->hz", cache["h_prev"], dZ)
    grads["b"] = dZ.sum(axis=(0, 1))
    dX = dZ @ W_x.T  # (T, B, d_q)
    grads["emb"] = np.einsum("tbr,tbd->rd", batch.inputs, dX)
    return grads


def loss_and_grads(model: DktModel, sequences, bank: QuestionBank, mean: bool = False):
    """Summed (or per-target mean) BCE over ``sequences`` and its gradients."""
    batch = _make_batch(sequences, bank)
    p, cache = _forward(model.params, batch.inputs)
    terms = _bce_terms(_target_probs(p, batch), batch)
    n_targets = batch.target_mask.sum()
    scale = 1.0 / max(n_targets, 1.0) if mean else 1.0
    grads = _backward(model.params, batch, p, cache, scale)
    return float(terms.sum() * scale), grads


# ------------------------------------------------------------ public surface


def forward(model: DktModel, bank: QuestionBank, sequence: Sequence[InteractionRecord]) -> list[np.ndarray]:
    """Per-step skill-mastery vectors ``p_t`` for one sequence, from zero initial state."""
    records = list(sequence)
    if not records:
        raise DomainError("sequence must be non-empty")
    inputs = np.zeros((len(records), 1, 2 * model.n_skills))
    for t, rec in enumerate(records):
        inputs[t, 0, input_rows(rec, bank)] = 1.0
    p, _ = _forward(model.params, inputs)
    return [p[t, 0].copy() for t in range(len(records))]


def _batched(log_sequences, size):
    for start in range(0, len(log_sequences), size):
        yield log_sequences[start:start + size]


def loss(model: DktModel, log: InteractionLog, bank: QuestionBank, batch_size: int = 64) -> float:
    """Summed binary cross-entropy of next-response predictions over the log."""
    total = 0.0
    for chunk in _batched(list(log), batch_size):
        batch = _make_batch(chunk, bank)
        p, _ = _forward(model.params, batch.inputs)
        total += float(_bce_terms(_target_probs(p, batch), batch).sum())
    return total


def n_targets(log: InteractionLog) -> int:
    return sum(len(s) - 1 for s in log)


def next_response_predictions(model: DktModel, log: InteractionLog, bank: QuestionBank,
                              batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Predicted probability and observed label for every target step."""
    preds, labels = [], []
    for chunk in _batched(list(log), batch_size):
        batch = _make_batch(chunk, bank)
        p, _ = _forward(model.params, batch.inputs)
        phat = _target_probs(p, batch)
        sel = batch.target_mask.T.astype(bool)  # (B, T) keeps per-examinee order
        preds.append(phat.T[sel])
        labels.append(batch.y.T[sel])
    return np.concatenate(preds), np.concatenate(labels)


def auc(scores, labels) -> float:
    """Area under the ROC curve from the Mann-Whitney rank statistic."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def heldout_split(n_examinees: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic ``(train, heldout)`` examinee index split."""
    rng = np.random.default_rng([seed, 1])
    n_hold = int(round(fraction * n_examinees)) if n_examinees >= 2 else 0
    if fraction > 0 and n_examinees >= 2:
        n_hold = max(1, n_hold)
    perm = rng.permutation(n_examinees)
    hold = sorted(int(i) for i in perm[:n_hold])
    train = sorted(int(i) for i in perm[n_hold:])
    return train, hold


def _mean_loss(model, sequences, bank):
    sequences = [s for s in sequences if len(s) >= 2]
    if not sequences:
        return float("nan")
    sub = InteractionLog(sequences)
    return loss(model, sub, bank) / n_targets(sub)


def train(log: InteractionLog, bank: QuestionBank, cfg: TracerConfig, progress=None) -> DktModel:
    """Minibatch BPTT with Adam; keeps the parameters with the lowest held-out loss.

    Losses recorded in ``model.history`` are per-target means.
    """
    if len(log) == 0:
        raise DomainError("interaction log is empty")
    train_idx, hold_idx = heldout_split(len(log), cfg.heldout_fraction, cfg.seed)
    train_seqs = [log[i] for i in train_idx if len(log[i]) >= 2]
    hold_seqs = [log[i] for i in hold_idx]
    if not train_seqs:
        raise DomainError("no training examinee has two or more records")

    rng = np.random.default_rng([cfg.seed, 2])
    model = DktModel.init(bank.n_skills, cfg.d_q, cfg.d_h, rng, cfg.init_scale,
                          skill_ids=[s.id for s in bank.skills])
    opt = Adam(model.params, lr=cfg.learning_rate)
    best = None
    best_score = np.inf
    since_best = 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_seqs))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_seqs[i] for i in order[start:start + cfg.batch_size]]
            value, grads = loss_and_grads(model, chunk, bank, mean=True)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch)
            clip_by_global_norm(grads, cfg.grad_clip)
            opt.step(model.params, grads)
        train_loss = _mean_loss(model, train_seqs, bank)
        hold_loss = _mean_loss(model, hold_seqs, bank)
        if not np.isfinite(train_loss) or not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise TrainingDivergedError(epoch)
        history.append(EpochStats(epoch, train_loss, hold_loss))
        if progress is not None:
            progress(history[-1])
        score = hold_loss if np.isfinite(hold_loss) else train_loss
        if score < best_score:
            best_score = score
            best = ({k: v.copy() for k, v in model.params.items()}, epoch)
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    params, best_epoch = best
    return DktModel(params, model.n_skills, model.d_q, model.d_h, model.skill_ids, history, best_epoch)


@dataclass(frozen=True, eq=False)
class ProficiencyMatrix:
    """``|E| x |K|`` predicted mastery probabilities, one row per examinee."""

    values: np.ndarray
    examinee_ids: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DomainError("proficiency must be a matrix")
        if not np.all((v >= 0) & (v <= 1)):
            raise DomainError("proficiency entries must lie in [0, 1]")
        if self.examinee_ids and len(self.examinee_ids) != v.shape[0]:
            raise DomainError("one examinee id per proficiency row required")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "examinee_ids", tuple(self.examinee_ids))

    @property
    def shape(self):
        return self.values.shape


def proficiency(model: DktModel, log: InteractionLog, bank: QuestionBank, batch_size: int = 64) -> ProficiencyMatrix:
    """Final-step prediction vector for each examinee's full sequence."""
    rows = []
    for chunk in _batched(list(log), batch_size):
        batch = _make_batch(chunk, bank)
        p, _ = _forward(model.params, batch.inputs)
        rows.append(p[batch.lengths - 1, np.arange(len(chunk))])
    values = np.concatenate(rows) if rows else np.zeros((0, model.n_skills))
    return ProficiencyMatrix(values, tuple(log.examinee_ids))


# ---------------------------------------------------------------- checkpoint


def _split_gates(name, arr, axis_len):
    return {f"{name}{g}": arr[..., k * axis_len:(k + 1) * axis_len] for k, g in enumerate(GATES)}


def checkpoint_tensors(model: DktModel) -> dict[str, np.ndarray]:
    """Named tensors as stored on disk: per-gate ``W_x*``, ``W_h*``, ``b_*``."""
    H = model.d_h
    p = model.params
    out = {"emb": p["emb"]}
    out.update(_split_gates("W_x", p["W_x"], H))
    out.update(_split_gates("W_h", p["W_h"], H))
    out.update({f"b_{g}": p["b"][k * H:(k + 1) * H] for k, g in enumerate(GATES)})
    out["W_s"] = p["W_s"]
    out["b_s"] = p["b_s"]
    return out


def save_checkpoint(model: DktModel, path) -> None:
    tensors = {
        name: {"shape": list(arr.shape), "data": [float(x) for x in np.ravel(arr)]}
        for name, arr in checkpoint_tensors(model).items()
    }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_skills": model.n_skills,
        "d_q": model.d_q,
        "d_h": model.d_h,
        "skill_ids": list(model.skill_ids),
        "best_epoch": model.best_epoch,
        "tensors": tensors,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> DktModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not a JSON checkpoint ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint format")
    t = {}
    for name, entry in doc["tensors"].items():
        t[name] = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
    params = {
        "emb": t["emb"],
        "W_x": np.concatenate([t[f"W_x{g}"] for g in GATES], axis=1),
        "W_h": np.concatenate([t[f"W_h{g}"] for g in GATES], axis=1),
        "b": np.concatenate([t[f"b_{g}"] for g in GATES]),
        "W_s": t["W_s"],
        "b_s": t["b_s"],
    }
    return DktModel(params, doc["n_skills"], doc["d_q"], doc["d_h"], tuple(doc["skill_ids"]),
                    best_epoch=doc.get("best_epoch"))
