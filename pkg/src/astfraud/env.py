"""The fraudster's MDP: action grid, action likelihood, reward and step function."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    CATEGORY_STATS,
    IntervalStats,
    MerchantCategory,
    Transaction,
    portions,
)
from .detection import Decision, Outcome, RuleSet, Scorer, SystemState, authorize

DAILY_GAMMA = 0.2


def discount_factor(interval: float, daily_gamma: float = DAILY_GAMMA) -> float:
    """Per-step discount for a gap of ``interval`` minutes under a per-day factor."""
    if interval < 0:
        raise ValueError(f"interval must be >= 0, got {interval}")
    return daily_gamma ** (interval / 1440.0)


@dataclass(frozen=True)
class ActionGrid:
    card_ages: tuple[int, ...] = (10, 500)
    categories: tuple[MerchantCategory, ...] = (
        MerchantCategory.ENTERTAINMENT,
        MerchantCategory.SHOPPING_ONLINE,
        MerchantCategory.SHOPPING_IN_PERSON,
    )
    amounts: tuple[float, ...] = (10.0, 100.0, 1000.0)
    intervals: tuple[float, ...] = (1.0, 50.0, 150.0)

    @property
    def n_step_actions(self) -> int:
        return len(self.categories) * len(self.amounts) * len(self.intervals)

    @property
    def size(self) -> int:
        return len(self.card_ages) * self.n_step_actions

    def decode(self, index: int) -> tuple[int, int, int]:
        """Per-step action index -> (category, amount, interval) axis positions."""
        n_a, n_i = len(self.amounts), len(self.intervals)
        return index // (n_a * n_i), (index // n_i) % n_a, index % n_i

    def encode(self, ci: int, ai: int, ii: int) -> int:
        return (ci * len(self.amounts) + ai) * len(self.intervals) + ii

    def action(self, card_age_bucket: int, index: int) -> "AstAction":
        ci, ai, ii = self.decode(index)
        return AstAction(card_age_bucket, self.categories[ci], self.amounts[ai], self.intervals[ii])

    def index_of(self, action: "AstAction") -> int:
        try:
            ci = self.categories.index(action.category)
            ai = self.amounts.index(action.amount)
            ii = self.intervals.index(action.interval)
        except ValueError:
            raise ValueError(f"action {action} is not on the grid") from None
        if not 0 <= action.card_age_bucket < len(self.card_ages):
            raise ValueError(f"card_age_bucket {action.card_age_bucket} is not on the grid")
        return self.encode(ci, ai, ii)


@dataclass(frozen=True)
class AstAction:
    card_age_bucket: int
    category: MerchantCategory
    amount: float
    interval: float


def _axis_pmf(log_density: np.ndarray) -> np.ndarray:
    w = np.exp(log_density - log_density.max())
    return w / w.sum()


def _normal_logpdf(x, mu, sd):
    x = np.asarray(x, dtype=float)
    return -0.5 * ((x - mu) / sd) ** 2 - math.log(sd * math.sqrt(2 * math.pi))


@dataclass(frozen=True)
class LikelihoodModel:
    """Independent-factor action likelihood, each factor normalized over its grid axis.

    ``amount_population`` picks which amount columns of the category table
    supply the per-category Gaussians ('overall' or 'fraud').
    """

    grid: ActionGrid = field(default_factory=ActionGrid)
    card_rate: float = 1.0 / 390.0
    amount_population: str = "overall"
    intervals: IntervalStats = field(default_factory=IntervalStats)
    interval_population: str = "fraud"

    def card_age_pmf(self) -> np.ndarray:
        ages = np.asarray(self.grid.card_ages, dtype=float)
        return _axis_pmf(math.log(self.card_rate) - self.card_rate * ages)

    def category_pmf(self) -> np.ndarray:
        p = portions("fraud")[[int(c) for c in self.grid.categories]]
        return p / p.sum()

    def amount_pmf(self, category: MerchantCategory) -> np.ndarray:
        s = CATEGORY_STATS[category]
        mu = getattr(s, f"{self.amount_population}_mean")
        sd = getattr(s, f"{self.amount_population}_std")
        return _axis_pmf(_normal_logpdf(self.grid.amounts, mu, sd))

    def interval_pmf(self, category: MerchantCategory) -> np.ndarray:
        mu, sd = self.intervals.params(category, self.interval_population)
        return _axis_pmf(_normal_logpdf(self.grid.intervals, mu, sd))

    def log_prob_table(self) -> np.ndarray:
        """log p(a) indexed by (card_age_bucket, per-step action index)."""
        g = self.grid
        out = np.empty((len(g.card_ages), g.n_step_actions))
        lc = np.log(self.card_age_pmf())
        lm = np.log(self.category_pmf())
        for ci, cat in enumerate(g.categories):
            la = np.log(self.amount_pmf(cat))
            li = np.log(self.interval_pmf(cat))
            for ai in range(len(g.amounts)):
                for ii in range(len(g.intervals)):
                    out[:, g.encode(ci, ai, ii)] = lc + lm[ci] + la[ai] + li[ii]
        return out


def action_log_prob(lm: LikelihoodModel, action: AstAction) -> float:
    g = lm.grid
    ci, ai, ii = g.decode(g.index_of(action))
    cat = g.categories[ci]
    return float(
        math.log(lm.card_age_pmf()[action.card_age_bucket])
        + math.log(lm.category_pmf()[ci])
        + math.log(lm.amount_pmf(cat)[ai])
        + math.log(lm.interval_pmf(cat)[ii])
    )


class Event(enum.Enum):
    IN_E = "InE"
    CAUGHT = "Caught"
    CONTINUE = "Continue"


@dataclass(frozen=True)
class AstState:
    card_age_bucket: int
    system: SystemState
    accumulated_fraud_value: float = 0.0
    done: bool = False

    @property
    def cumulative_approved(self) -> int:
        return self.system.cumulative_approved

    @property
    def daily_count(self) -> int:
        return self.system.daily_count

    @property
    def fraud_detected(self) -> bool:
        return self.system.fraud_detected

    @property
    def clock(self) -> float:
        return 0.0 if self.system.clock is None else self.system.clock


@dataclass(frozen=True)
class Transition:
    next_state: AstState
    reward: float
    done: bool
    event: Event
    decision: Decision
    action_index: int
    gamma: float = 1.0


STATE_SPACES = ("compact", "markov")


@dataclass(frozen=True)
class EnvConfig:
    """``state_space`` picks the Q-table state label.

    'compact' is (card age bucket, daily count, fraud flag). 'markov' adds the
    accumulated fraud value and, when the repetition rule is on, the trailing
    run of equal amounts, so the label determines every future reward.
    """

    daily_gamma: float = DAILY_GAMMA
    caught_penalty: float = 10_000.0
    state_space: str = "compact"

    def __post_init__(self):
        if self.state_space not in STATE_SPACES:
            raise ValueError(f"state_space must be one of {STATE_SPACES}, got {self.state_space!r}")
        if self.caught_penalty < 0:
            raise ValueError("caught_penalty is a magnitude and must be >= 0")


def reward(
    prev: AstState,
    action: AstAction,
    decision: Decision,
    nxt: AstState,
    cfg: EnvConfig,
    lm: LikelihoodModel,
    daily_limit: int = 10,
) -> float:
    """Failure reward first, path likelihood second.

    Capture costs ``caught_penalty``; an episode closed without capture pays
    the accumulated fraud value; every other step pays ``log p(a)``.
    """
    if decision.outcome.suspended:
        return -cfg.caught_penalty
    if nxt.daily_count >= daily_limit:
        return nxt.accumulated_fraud_value
    return action_log_prob(lm, action)


class FraudEnv:
    """One card under attack; the detection system decides each transaction."""

    def __init__(
        self,
        model: Scorer,
        rules: RuleSet | None = None,
        likelihood: LikelihoodModel | None = None,
        cfg: EnvConfig | None = None,
    ):
        self.model = model
        self.rules = rules or RuleSet()
        self.likelihood = likelihood or LikelihoodModel()
        self.cfg = cfg or EnvConfig()
        self.grid = self.likelihood.grid
        self._log_prob = self.likelihood.log_prob_table()
        self._gamma = np.array(
            [discount_factor(self.grid.intervals[self.grid.decode(a)[2]], self.cfg.daily_gamma)
             for a in range(self.grid.n_step_actions)]
        )
        self._proba_cache: dict[tuple, float] = {}
        self._scorer = _Cached(self)

    @property
    def n_actions(self) -> int:
        return self.grid.n_step_actions

    def log_prob(self, card_age_bucket: int, index: int) -> float:
        return float(self._log_prob[card_age_bucket, index])

    def gamma(self, index: int) -> float:
        return float(self._gamma[index])

    def reset(self, card_age_bucket: int) -> AstState:
        start = self.grid.card_ages[card_age_bucket]
        return AstState(card_age_bucket, SystemState(cumulative_approved=start))

    def initial_state(self, rng: np.random.Generator) -> AstState:
        """Fresh episode on a card whose age bucket is drawn uniformly."""
        return self.reset(int(rng.integers(len(self.grid.card_ages))))

    def state_key(self, state: AstState) -> tuple:
        key = (state.card_age_bucket, state.daily_count, int(state.fraud_detected))
        if self.cfg.state_space == "compact":
            return key
        key += (round(state.accumulated_fraud_value, 6),)
        if self.rules.repetition_rule_enabled:
            key += trailing_run(state.system.recent_amounts, self.rules.repetition_tolerance)
        return key

    def transaction(self, state: AstState, action: AstAction) -> Transaction:
        return Transaction(
            account_id=f"ast-card-{action.card_age_bucket}",
            timestamp=state.clock + action.interval,
            category=action.category,
            amount=float(action.amount),
            interval_since_prev=float(action.interval),
            card_txn_count=state.cumulative_approved,
            is_fraud=True,
        )

    def step(self, state: AstState, action: AstAction | int, rng: np.random.Generator | None = None) -> Transition:
        """Submit the action's transaction to the detection system.

        Deterministic: amount and interval come straight from the action, so
        ``rng`` is accepted for interface compatibility and ignored.
        """
        if state.done:
            raise RuntimeError("cannot step a terminal state")
        if isinstance(action, (int, np.integer)):
            index = int(action)
            action = self.grid.action(state.card_age_bucket, index)
        else:
            index = self.grid.index_of(action)
        if action.card_age_bucket != state.card_age_bucket:
            raise ValueError("card age is fixed for the whole episode")

        txn = self.transaction(state, action)
        decision, system = authorize(state.system, txn, self._scorer, self.rules)
        g = float(self._gamma[index])
        if decision.outcome.suspended:
            nxt = replace(state, system=system, done=True)
            return Transition(nxt, -self.cfg.caught_penalty, True, Event.CAUGHT, decision, index, g)

        value = state.accumulated_fraud_value + txn.amount
        if system.daily_count >= self.rules.daily_limit:
            nxt = AstState(state.card_age_bucket, system, value, True)
            return Transition(nxt, value, True, Event.IN_E, decision, index, g)
        nxt = AstState(state.card_age_bucket, system, value, False)
        r = self.log_prob(state.card_age_bucket, index)
        return Transition(nxt, r, False, Event.CONTINUE, decision, index, g)


def trailing_run(amounts: tuple[float, ...], tolerance: float = 0.0) -> tuple[float, int]:
    """(last amount, length of the trailing run within ``tolerance`` of it); (0.0, 0) if empty."""
    if not amounts:
        return 0.0, 0
    last = amounts[-1]
    lo = hi = last
    n = 0
    for x in reversed(amounts):
        lo, hi = min(lo, x), max(hi, x)
        if hi - lo > tolerance:
            break
        n += 1
    return float(last), n


class _Cached:
    """Memoizes classifier scores on the finite set of transactions the grid can produce."""

    def __init__(self, env: FraudEnv):
        self._env = env
        self.threshold = env.model.threshold

    def proba(self, txn: Transaction) -> float:
        key = (txn.category, txn.amount, txn.interval_since_prev, txn.card_txn_count)
        cache = self._env._proba_cache
        p = cache.get(key)
        if p is None:
            p = cache[key] = float(self._env.model.proba(txn))
        return p
