"""Tabular Q-learning over the fraud MDP and greedy path extraction."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Protocol

import numpy as np

from .env import Event, FraudEnv

QTABLE_FORMAT = "astfraud-qtable"
QTABLE_VERSION = 1


class TabularEnv(Protocol):
    n_actions: int

    def initial_state(self, rng: np.random.Generator): ...

    def state_key(self, state) -> Hashable: ...

    def step(self, state, action: int, rng: np.random.Generator | None = None): ...


class QTable:
    """Action-value rows keyed by hashable state labels; unseen rows read as ``init``."""

    def __init__(self, n_actions: int, init: float = 0.0, keys: Iterable[Hashable] = ()):
        self.n_actions = int(n_actions)
        self.init = float(init)
        self.rows: dict[Hashable, np.ndarray] = {}
        for k in keys:
            self.row(k)

    def row(self, key: Hashable) -> np.ndarray:
        r = self.rows.get(key)
        if r is None:
            r = self.rows[key] = np.full(self.n_actions, self.init)
        return r

    def peek(self, key: Hashable) -> np.ndarray:
        r = self.rows.get(key)
        return r if r is not None else np.full(self.n_actions, self.init)

    def __getitem__(self, key) -> np.ndarray:
        return self.peek(key)

    def __len__(self) -> int:
        return len(self.rows)

    def copy(self) -> "QTable":
        q = QTable(self.n_actions, self.init)
        q.rows = {k: v.copy() for k, v in self.rows.items()}
        return q

    def as_array(self, keys: Iterable[Hashable]) -> np.ndarray:
        return np.stack([self.peek(k) for k in keys])

    def __eq__(self, other) -> bool:
        if not isinstance(other, QTable) or other.n_actions != self.n_actions:
            return NotImplemented
        keys = set(self.rows) | set(other.rows)
        return all(np.array_equal(self.peek(k), other.peek(k)) for k in keys)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 200_000
    alpha: float = 0.1
    epsilon: float = 1.0
    objective: str = "max"
    alpha_schedule: str = "constant"
    checkpoint_stride: int = 1_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.objective not in ("max", "min"):
            raise ValueError(f"objective must be 'max' or 'min', got {self.objective!r}")
        if self.alpha_schedule not in ("constant", "visit"):
            raise ValueError(f"alpha_schedule must be 'constant' or 'visit', got {self.alpha_schedule!r}")
        if self.episodes < 0 or self.checkpoint_stride < 1:
            raise ValueError("episodes must be >= 0 and checkpoint_stride >= 1")


@dataclass
class ConvergenceSeries:
    stride: int
    episodes: list[int] = field(default_factory=list)
    norms: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.norms)

    def last_decile_ratio(self) -> float:
        """Mean of the final tenth of the series over its peak."""
        if not self.norms:
            return math.nan
        tail = self.norms[-max(1, len(self.norms) // 10):]
        peak = max(self.norms)
        return float(np.mean(tail) / peak) if peak > 0 else 0.0

    def to_text(self, delimiter: str = ",") -> str:
        lines = [f"episode{delimiter}frobenius_delta"]
        lines += [f"{e}{delimiter}{n!r}" for e, n in zip(self.episodes, self.norms)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, stride: int, delimiter: str = ",") -> "ConvergenceSeries":
        out = cls(stride)
        for line in text.strip().splitlines()[1:]:
            e, n = line.split(delimiter)
            out.episodes.append(int(e))
            out.norms.append(float(n))
        return out


def greedy_index(row: np.ndarray, objective: str = "max") -> int:
    # argmax / argmin return the first extremum, so ties go to the lowest index
    return int(np.argmax(row) if objective == "max" else np.argmin(row))


def select_action(
    q: QTable, key: Hashable, epsilon: float, rng: np.random.Generator, objective: str = "max"
) -> int:
    """Epsilon-greedy action index for the state labelled ``key``."""
    if epsilon >= 1.0 or (epsilon > 0.0 and rng.random() < epsilon):
        return int(rng.integers(q.n_actions))
    return greedy_index(q.peek(key), objective)


def q_update(
    q: QTable,
    s: Hashable,
    a: int,
    r: float,
    s_next: Hashable | None,
    alpha: float,
    gamma: float,
    objective: str = "max",
) -> float:
    """One temporal-difference step in place; ``s_next=None`` marks a terminal transition.

    Returns the updated ``Q(s, a)``.
    """
    if s_next is None:
        target = r
    else:
        nxt = q.peek(s_next)
        target = r + gamma * (nxt.max() if objective == "max" else nxt.min())
    row = q.row(s)
    row[a] += alpha * (target - row[a])
    return float(row[a])


def frobenius_delta(q1: QTable, q2: QTable) -> float:
    """sqrt of the summed squared entry differences; rows missing on one side read as its init."""
    if q1.n_actions != q2.n_actions:
        raise ValueError(f"shape mismatch: {q1.n_actions} vs {q2.n_actions} actions")
    total = 0.0
    for k in set(q1.rows) | set(q2.rows):
        d = q1.peek(k) - q2.peek(k)
        total += float(d @ d)
    return math.sqrt(total)


def train(
    env_factory: Callable[[], TabularEnv],
    cfg: TrainConfig,
    q: QTable | None = None,
    progress: Callable[[int], None] | None = None,
) -> tuple[QTable, ConvergenceSeries]:
    """Run ``cfg.episodes`` epsilon-greedy Q-learning episodes.

    The series holds the Frobenius norm of the table change over each block of
    ``cfg.checkpoint_stride`` episodes. Bit-for-bit reproducible for a fixed seed.
    """
    env = env_factory()
    q = q if q is not None else QTable(env.n_actions)
    rng = np.random.default_rng(cfg.seed)
    series = ConvergenceSeries(cfg.checkpoint_stride)
    visits: dict[Hashable, np.ndarray] | None = {} if cfg.alpha_schedule == "visit" else None
    n_actions = env.n_actions
    eps, objective = cfg.epsilon, cfg.objective
    snapshot = q.copy()

    for ep in range(1, cfg.episodes + 1):
        state = env.initial_state(rng)
        while True:
            s = env.state_key(state)
            if eps >= 1.0 or (eps > 0.0 and rng.random() < eps):
                a = int(rng.integers(n_actions))
            else:
                a = greedy_index(q.peek(s), objective)
            tr = env.step(state, a, rng)
            if visits is not None:
                counts = visits.get(s)
                if counts is None:
                    counts = visits[s] = np.zeros(n_actions, dtype=np.int64)
                counts[a] += 1
                alpha = 1.0 / counts[a]
            else:
                alpha = cfg.alpha
            s_next = None if tr.done else env.state_key(tr.next_state)
            q_update(q, s, a, tr.reward, s_next, alpha, tr.gamma, objective)
            if tr.done:
                break
            state = tr.next_state
        if ep % cfg.checkpoint_stride == 0:
            series.episodes.append(ep)
            series.norms.append(frobenius_delta(q, snapshot))
            snapshot = q.copy()
            if progress is not None:
                progress(ep)
    return q, series


@dataclass(frozen=True)
class PathStep:
    step: int
    category: str
    amount: float
    interval: float
    outcome: str
    reward: float


@dataclass(frozen=True)
class FraudPath:
    card_age_bucket: int
    card_age: int
    steps: tuple[PathStep, ...]
    terminal_event: str
    total_reward: float

    @property
    def amounts(self) -> list[float]:
        return [s.amount for s in self.steps]

    @property
    def categories(self) -> list[str]:
        return [s.category for s in self.steps]

    def as_dict(self) -> dict:
        return {
            "card_age_bucket": self.card_age_bucket,
            "card_age": self.card_age,
            "terminal_event": self.terminal_event,
            "total_reward": self.total_reward,
            "steps": [dict(s.__dict__) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FraudPath":
        return cls(
            d["card_age_bucket"],
            d["card_age"],
            tuple(PathStep(**s) for s in d["steps"]),
            d["terminal_event"],
            d["total_reward"],
        )


def extract_path(
    q: QTable, env: FraudEnv, card_age_bucket: int, objective: str = "max", max_steps: int = 100
) -> FraudPath:
    """Greedy rollout from a fresh card: the most likely fraud path under ``q``."""
    state = env.reset(card_age_bucket)
    steps: list[PathStep] = []
    total = 0.0
    event = Event.CONTINUE
    for k in range(1, max_steps + 1):
        a = greedy_index(q.peek(env.state_key(state)), objective)
        act = env.grid.action(card_age_bucket, a)
        tr = env.step(state, a)
        total += tr.reward
        steps.append(
            PathStep(k, act.category.label, float(act.amount), float(act.interval),
                     tr.decision.outcome.value, float(tr.reward))
        )
        event = tr.event
        if tr.done:
            break
        state = tr.next_state
    return FraudPath(card_age_bucket, env.grid.card_ages[card_age_bucket], tuple(steps), event.value, total)


def _key_to_text(key: Hashable) -> str:
    parts = key if isinstance(key, tuple) else (key,)
    return ",".join(repr(p) for p in parts)


def _key_from_text(text: str) -> Hashable:
    parts = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in ("True", "False"):
            parts.append(tok == "True")
        else:
            try:
                parts.append(int(tok))
            except ValueError:
                parts.append(float(tok))
    return tuple(parts)


def save_qtable(q: QTable, path: str | os.PathLike) -> None:
    """Plain text: header lines, then one ``state: v0 v1 ...`` line per visited state, sorted."""
    lines = [
        f"format = {QTABLE_FORMAT}",
        f"version = {QTABLE_VERSION}",
        f"n_actions = {q.n_actions}",
        f"init = {q.init!r}",
    ]
    for key in sorted(q.rows, key=_key_to_text):
        lines.append(f"{_key_to_text(key)}: " + " ".join(repr(float(x)) for x in q.rows[key]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_qtable(path: str | os.PathLike) -> QTable:
    header: dict[str, str] = {}
    body: list[tuple[str, str]] = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if ":" in line:
                label, _, vals = line.partition(":")
                body.append((label, vals))
            else:
                k, _, v = line.partition("=")
                header[k.strip()] = v.strip()
    if header.get("format") != QTABLE_FORMAT or header.get("version") != str(QTABLE_VERSION):
        raise ValueError(f"{path}: not a version-{QTABLE_VERSION} {QTABLE_FORMAT} document")
    q = QTable(int(header["n_actions"]), float(header["init"]))
    for label, vals in body:
        row = np.array([float(x) for x in vals.split()])
        if row.size != q.n_actions:
            raise ValueError(f"{path}: row {label!r} has {row.size} values, expected {q.n_actions}")
        q.rows[_key_from_text(label)] = row
    return q
