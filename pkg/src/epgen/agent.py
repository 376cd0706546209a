"""Exam-paper MDP and the double-Q-learning agent that searches it.

The state is the concatenation of the paper's question embeddings.  An
action picks a candidate question from the active subspace (a K-means
cluster of the bank); the environment tries the candidate in every slot,
commits the slot with the highest combined reward, and moves the candidate
to the front of the paper.  The Q-network scores ``state ⊕ candidate``
pairs, so any subset of the bank can serve as the action set.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .corpus import ExamPaper, ExamSpec, QuestionBank
from .errors import ConfigError, DomainError, EmptyActionError
from .objectives import NormalSpec, PaperScorer, RewardWeights
from .optim import Adam, clip_by_global_norm
from .partition import Partition, question_embeddings
from .tracer import DktModel, ProficiencyMatrix


@dataclass
class AgentConfig:
    gamma: float = 0.9
    eps_start: float = 0.99
    eps_end: float = 0.1
    batch_size: int = 128
    memory_size: int = 2000
    sync_interval: int = 100
    episodes: int = 5000
    steps_per_episode: int = 50
    ts: float = 0.91
    hidden: int = 200
    learning_rate: float = 1e-3
    grad_clip: float | None = 10.0
    dtype: str = "float32"
    restart_best_prob: float = 0.5
    partition_disabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        for name in ("batch_size", "memory_size", "sync_interval", "episodes", "steps_per_episode", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.batch_size > self.memory_size:
            raise ConfigError("batch_size cannot exceed memory_size")
        if not 0.0 <= self.restart_best_prob <= 1.0:
            raise ConfigError("restart_best_prob must lie in [0, 1]")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.steps_per_episode

    @property
    def total_training_steps(self) -> int:
        return max(1, self.total_steps - self.batch_size + 1)

    def replace(self, **kw) -> "AgentConfig":
        return dataclasses.replace(self, **kw)


def epsilon_at(t: int, cfg: AgentConfig) -> float:
    """Exploration rate after ``t`` training steps; reaches ``eps_end`` after the last one."""
    decay = (cfg.eps_start - cfg.eps_end) / cfg.total_training_steps
    return max(cfg.eps_end, cfg.eps_start - t * decay)


def encode_state(paper: ExamPaper | np.ndarray, question_emb: np.ndarray) -> np.ndarray:
    idx = paper.index_array if isinstance(paper, ExamPaper) else np.asarray(paper, dtype=np.int64)
    return question_emb[idx].reshape(-1)


# ------------------------------------------------------------------ network


class QNetwork:
    """One hidden ReLU layer scoring a (state, candidate embedding) pair."""

    def __init__(self, params: dict[str, np.ndarray], state_dim: int, emb_dim: int):
        self.params = params
        self.state_dim = state_dim
        self.emb_dim = emb_dim

    @classmethod
    def init(cls, state_dim: int, emb_dim: int, hidden: int, rng: np.random.Generator,
             dtype=np.float64) -> "QNetwork":
        fan_in = state_dim + emb_dim
        b1 = 1.0 / np.sqrt(fan_in)
        b2 = 1.0 / np.sqrt(hidden)
        params = {
            "W1": rng.uniform(-b1, b1, size=(fan_in, hidden)),
            "b1": rng.uniform(-b1, b1, size=hidden),
            "w2": rng.uniform(-b2, b2, size=hidden),
            "b2": np.zeros(1),
        }
        return cls({k: v.astype(dtype) for k, v in params.items()}, state_dim, emb_dim)

    def copy(self) -> "QNetwork":
        return QNetwork({k: v.copy() for k, v in self.params.items()}, self.state_dim, self.emb_dim)

    def load_from(self, other: "QNetwork") -> None:
        for k, v in other.params.items():
            self.params[k][...] = v

    @property
    def W_state(self):
        return self.params["W1"][: self.state_dim]

    @property
    def W_emb(self):
        return self.params["W1"][self.state_dim:]

    def state_pre(self, states: np.ndarray) -> np.ndarray:
        """Hidden pre-activation contributed by the state (bias included)."""
        return states @ self.W_state + self.params["b1"]

    def q_from_pre(self, pre: np.ndarray) -> np.ndarray:
        return np.maximum(pre, 0.0) @ self.params["w2"] + self.params["b2"][0]

    def q_values(self, states: np.ndarray, embs: np.ndarray) -> np.ndarray:
        """Q for a batch of matching (state, candidate) rows."""
        return self.q_from_pre(self.state_pre(states) + embs @ self.W_emb)

    def q_candidates(self, state: np.ndarray, cand_embs: np.ndarray) -> np.ndarray:
        """Q for one state against many candidates."""
        return self.q_from_pre(self.state_pre(state[None, :]) + cand_embs @ self.W_emb)

    def loss_and_grads(self, states, embs, targets):
        """Mean squared TD error and its gradients."""
        x = np.concatenate([states, embs], axis=1)
        pre = x @ self.params["W1"] + self.params["b1"]
        h = np.maximum(pre, 0.0)
        q = h @ self.params["w2"] + self.params["b2"][0]
        err = q - targets
        n = len(targets)
        dq = 2.0 * err / n
        dh = np.outer(dq, self.params["w2"]) * (pre > 0)
        grads = {
            "W1": x.T @ dh,
            "b1": dh.sum(axis=0),
            "w2": h.T @ dq,
            "b2": np.array([dq.sum()]),
        }
        return float(np.mean(err * err)), grads


# ------------------------------------------------------------------- replay


@dataclass(frozen=True, eq=False)
class Transition:
    state: np.ndarray  # question indices of the paper before the step
    action: int
    reward: float
    next_state: np.ndarray
    next_subspace: int

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise DomainError("transition reward must be finite")


class ReplayMemory:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = capacity
        self._buf: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def push(self, transition: Transition) -> None:
        self._buf.append(transition)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.choice(len(self._buf), size=n, replace=False)
        return [self._buf[i] for i in idx]


# --------------------------------------------------------------- the agent


def eligible_questions(members: np.ndarray, in_paper: np.ndarray) -> np.ndarray:
    return members[~in_paper[members]]


def select_action(qnet: QNetwork, state: np.ndarray, eligible: np.ndarray, eps: float,
                  rng: np.random.Generator, question_emb: np.ndarray) -> int:
    """Epsilon-greedy choice among ``eligible`` (sorted) question indices."""
    if len(eligible) == 0:
        raise EmptyActionError("no eligible question in the active subspace")
    if rng.random() < eps:
        return int(eligible[rng.integers(len(eligible))])
    q = qnet.q_candidates(state, question_emb[eligible])
    return int(eligible[int(np.argmax(q))])


def next_subspace(partition: Partition, current: int, coverage: float, ts: float,
                  rng: np.random.Generator) -> int:
    """Stay in the current cluster while coverage holds at ``ts``, else jump elsewhere."""
    if coverage >= ts or partition.f < 2:
        return current
    k = int(rng.integers(partition.f - 1))
    return k if k < current else k + 1


def _segment_argmax(values: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    """Position (into ``values``) of the first maximum within each contiguous segment."""
    starts = np.flatnonzero(np.r_[True, segments[1:] != segments[:-1]])
    seg_max = np.maximum.reduceat(values, starts)
    hits = np.flatnonzero(values == seg_max[segments])
    _, first = np.unique(segments[hits], return_index=True)
    if len(first) != n_segments:
        raise DomainError("empty candidate segment")
    return hits[first]


def ddqn_targets(batch: list[Transition], qnet: QNetwork, target: QNetwork, gamma: float,
                 question_emb: np.ndarray, partition: Partition, chunk: int = 16384) -> np.ndarray:
    """``r + gamma * Q_target(s', argmax_a Q_online(s', a))`` over each stored next subspace."""
    rewards = np.array([t.reward for t in batch])
    if gamma == 0.0:
        return rewards
    next_states = question_emb[np.stack([t.next_state for t in batch])].reshape(len(batch), -1)
    pre_online = qnet.state_pre(next_states)
    pre_target = target.state_pre(next_states)
    emb_online = question_emb @ qnet.W_emb
    emb_target = question_emb @ target.W_emb
    in_paper = np.zeros(len(question_emb), dtype=bool)
    all_questions = np.arange(len(question_emb))
    cand_lists = []
    for t in batch:
        in_paper[t.next_state] = True
        cands = eligible_questions(partition.members(t.next_subspace), in_paper)
        if len(cands) == 0:
            cands = eligible_questions(all_questions, in_paper)
        in_paper[t.next_state] = False
        cand_lists.append(cands)

    a_star = np.empty(len(batch), dtype=np.int64)
    start = 0
    while start < len(batch):
        stop, size = start, 0
        while stop < len(batch) and (stop == start or size + len(cand_lists[stop]) <= chunk):
            size += len(cand_lists[stop])
            stop += 1
        cands = np.concatenate(cand_lists[start:stop])
        seg = np.repeat(np.arange(stop - start), [len(c) for c in cand_lists[start:stop]])
        q = qnet.q_from_pre(pre_online[start:stop][seg] + emb_online[cands])
        a_star[start:stop] = cands[_segment_argmax(q, seg, stop - start)]
        start = stop
    bootstrap = target.q_from_pre(pre_target + emb_target[a_star])
    return rewards + gamma * bootstrap


class DdqnLearner:
    """Online and target networks, replay memory and optimizer state."""

    def __init__(self, question_emb: np.ndarray, n: int, cfg: AgentConfig, rng: np.random.Generator):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        self.question_emb = question_emb.astype(dtype)
        d_q = question_emb.shape[1]
        self.qnet = QNetwork.init(n * d_q, d_q, cfg.hidden, rng, dtype)
        self.target = self.qnet.copy()
        self.memory = ReplayMemory(cfg.memory_size)
        self.optimizer = Adam(self.qnet.params, lr=cfg.learning_rate)
        self.train_steps = 0

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.train_steps, self.cfg)

    def sync(self) -> None:
        self.target.load_from(self.qnet)

    def train_step(self, partition: Partition, rng: np.random.Generator) -> float:
        batch = self.memory.sample(self.cfg.batch_size, rng)
        y = ddqn_targets(batch, self.qnet, self.target, self.cfg.gamma, self.question_emb, partition)
        states = self.question_emb[np.stack([t.state for t in batch])].reshape(len(batch), -1)
        embs = self.question_emb[[t.action for t in batch]]
        loss, grads = self.qnet.loss_and_grads(states, embs, y.astype(self.question_emb.dtype))
        clip_by_global_norm(grads, self.cfg.grad_clip)
        self.optimizer.step(self.qnet.params, grads)
        self.train_steps += 1
        if self.train_steps % self.cfg.sync_interval == 0:
            self.sync()
        return loss


# -------------------------------------------------------------- environment


class ExamEnvironment:
    """Current paper plus incrementally maintained scores and skill counts."""

    def __init__(self, scorer: PaperScorer, questions, points=None):
        self.scorer = scorer
        self.reset(questions, points)

    def reset(self, questions, points=None) -> None:
        self.questions = np.array(questions, dtype=np.int64)
        self.points = np.array(self.scorer.spec.points if points is None else points, dtype=float)
        self.scores = self.scorer.scores(self.questions, self.points)
        self.counts = self.scorer.skill_counts(self.questions)
        self.reward = float(self.scorer._components_from(self.scores[None], self.counts[None])[0]
                            @ self.scorer.weights.as_array())
        self.scorer.evaluations += 1

    @property
    def paper(self) -> ExamPaper:
        spec = self.scorer.spec
        return ExamPaper(tuple(self.questions), ExamSpec(spec.n, tuple(self.points), spec.o, spec.d))

    def coverage(self) -> float:
        return float(self.counts @ self.scorer._c_unit / np.linalg.norm(self.counts))

    def placement_rewards(self, candidate: int) -> np.ndarray:
        comps = self.scorer.swap_components(self.questions, self.points, self.scores, self.counts, candidate)
        return comps @ self.scorer.weights.as_array()

    def apply(self, candidate: int) -> tuple[float, int]:
        """Swap ``candidate`` into its best slot; returns ``(reward, slot)``."""
        candidate = int(candidate)
        if np.any(self.questions == candidate):
            raise DomainError(f"question {candidate} is already on the paper")
        rewards = self.placement_rewards(candidate)
        h = int(np.argmax(rewards))
        R = self.scorer.answer_probs
        old = self.questions[h]
        self.scores = self.scores + self.points[h] * (R[:, candidate] - R[:, old])
        self.counts = self.counts + self.scorer.incidence[candidate] - self.scorer.incidence[old]
        self.questions = np.concatenate([[candidate], np.delete(self.questions, h)])
        self.points = np.concatenate([[self.points[h]], np.delete(self.points, h)])
        self.reward = float(rewards[h])
        return self.reward, h


def apply_transition(scorer: PaperScorer, paper: ExamPaper, candidate: int) -> tuple[ExamPaper, float, int]:
    env = ExamEnvironment(scorer, paper.questions, paper.spec.points)
    reward, h = env.apply(candidate)
    return env.paper, reward, h


# ------------------------------------------------------------ generation


@dataclass
class EpisodeTrace:
    episode_rewards: list[float] = field(default_factory=list)
    episode_losses: list[float] = field(default_factory=list)
    initial_reward: float = float("nan")
    best_reward: float = float("-inf")
    evaluations: int = 0
    train_steps: int = 0
    final_epsilon: float = float("nan")
    subspace_switches: int = 0


def _random_paper(rng, n_bank, n):
    return np.sort(rng.choice(n_bank, size=n, replace=False))


def generate_exam(bank: QuestionBank, model: DktModel | np.ndarray, partition: Partition | None,
                  proficiency: ProficiencyMatrix, spec: ExamSpec, weights: RewardWeights,
                  cfg: AgentConfig, normal: NormalSpec | None = None,
                  scorer: PaperScorer | None = None) -> tuple[ExamPaper, EpisodeTrace]:
    """Run DDQN search and return the best paper visited plus the reward trace.

    ``model`` may be a trained tracer or a precomputed ``|Q| x d_q``
    question-embedding matrix.
    """
    if len(bank) <= spec.n:
        raise ConfigError(f"bank has {len(bank)} questions; a paper of {spec.n} leaves no candidate to swap in")
    question_emb = model if isinstance(model, np.ndarray) else question_embeddings(model, bank)
    if cfg.partition_disabled or partition is None:
        partition = Partition.single(len(bank), question_emb.shape[1])
    if len(partition.assignment) != len(bank):
        raise DomainError("partition does not match the bank")
    if scorer is None:
        scorer = PaperScorer(bank, proficiency, spec, weights, normal)
    scorer.evaluations = 0

    rng = np.random.default_rng(cfg.seed)
    # restarts draw from their own stream so ablation arms see the same restart sequence
    restart_rng = np.random.default_rng([cfg.seed, 3])
    learner = DdqnLearner(question_emb, spec.n, cfg, np.random.default_rng([cfg.seed, 7]))
    question_emb = learner.question_emb
    in_paper = np.zeros(len(bank), dtype=bool)
    trace = EpisodeTrace()

    env = ExamEnvironment(scorer, _random_paper(restart_rng, len(bank), spec.n))
    trace.initial_reward = env.reward
    best_questions, best_points, best_reward = env.questions.copy(), env.points.copy(), env.reward

    for episode in range(cfg.episodes):
        if episode > 0:
            fresh = _random_paper(restart_rng, len(bank), spec.n)
            if restart_rng.random() < cfg.restart_best_prob:
                env.reset(best_questions, best_points)
            else:
                env.reset(fresh)
                if env.reward > best_reward:
                    best_questions, best_points, best_reward = env.questions.copy(), env.points.copy(), env.reward
        subspace = int(rng.integers(partition.f))
        total = 0.0
        losses = []
        for _ in range(cfg.steps_per_episode):
            in_paper[env.questions] = True
            eligible = eligible_questions(partition.members(subspace), in_paper)
            while len(eligible) == 0:
                subspace = next_subspace(partition, subspace, -np.inf, np.inf, rng)
                eligible = eligible_questions(partition.members(subspace), in_paper)
            state_idx = env.questions.copy()
            state = encode_state(state_idx, question_emb)
            in_paper[env.questions] = False
            action = select_action(learner.qnet, state, eligible, learner.epsilon, rng, question_emb)
            reward, _ = env.apply(action)
            total += reward
            if reward > best_reward:
                best_questions, best_points, best_reward = env.questions.copy(), env.points.copy(), reward
            nxt = next_subspace(partition, subspace, env.coverage(), cfg.ts, rng)
            trace.subspace_switches += int(nxt != subspace)
            learner.memory.push(Transition(state_idx, action, reward, env.questions.copy(), nxt))
            if len(learner.memory) >= cfg.batch_size:
                losses.append(learner.train_step(partition, rng))
            subspace = nxt
        trace.episode_rewards.append(total)
        trace.episode_losses.append(float(np.mean(losses)) if losses else float("nan"))

    trace.best_reward = best_reward
    trace.evaluations = scorer.evaluations
    trace.train_steps = learner.train_steps
    trace.final_epsilon = learner.epsilon
    best_spec = ExamSpec(spec.n, tuple(best_points), spec.o, spec.d)
    return ExamPaper(tuple(int(q) for q in best_questions), best_spec), trace
