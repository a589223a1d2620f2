"""Card-issuer authorization: classifier gate plus business rules."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Protocol

from .data import Transaction

DAY_MINUTES = 1440.0


class Outcome(enum.Enum):
    APPROVED = "Approved"
    SUSPENDED_FRAUD = "SuspendedFraud"
    SUSPENDED_DAILY_LIMIT = "SuspendedDailyLimit"
    SUSPENDED_REPETITION = "SuspendedRepetition"

    @property
    def suspended(self) -> bool:
        return self is not Outcome.APPROVED


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    classifier_probability: float


@dataclass(frozen=True)
class RuleSet:
    daily_limit: int = 10
    repetition_rule_enabled: bool = False
    repetition_window: int = 5
    repetition_tolerance: float = 0.0

    def __post_init__(self):
        if self.daily_limit < 1:
            raise ValueError(f"daily_limit must be >= 1, got {self.daily_limit}")
        if self.repetition_window < 2:
            raise ValueError(f"repetition_window must be >= 2, got {self.repetition_window}")
        if self.repetition_tolerance < 0:
            raise ValueError("repetition_tolerance must be >= 0")


@dataclass(frozen=True)
class SystemState:
    """Per-card issuer state within one episode.

    ``clock`` is None until the first transaction, which opens the episode at
    minute 0; later transactions advance it by their interval.
    """

    cumulative_approved: int = 0
    daily_count: int = 0
    fraud_detected: bool = False
    suspended: bool = False
    clock: float | None = None
    recent_amounts: tuple[float, ...] = ()


class Scorer(Protocol):
    threshold: float

    def proba(self, txn: Transaction) -> float: ...


def repetition_triggered(recent: tuple[float, ...], amount: float, rules: RuleSet) -> bool:
    """True when ``amount`` would complete a run of W amounts all within tolerance of each other."""
    need = rules.repetition_window - 1
    if len(recent) < need:
        return False
    window = recent[len(recent) - need:] + (amount,)
    return max(window) - min(window) <= rules.repetition_tolerance


def authorize(
    state: SystemState, txn: Transaction, model: Scorer, rules: RuleSet
) -> tuple[Decision, SystemState]:
    """Decide one authorization request and return the card's next state.

    Checks run in order: classifier, repetition rule, daily limit. Any
    suspension is final for the episode.
    """
    if state.suspended:
        raise RuntimeError("card is suspended; no further authorizations in this episode")
    p = float(model.proba(txn))

    if p >= model.threshold:
        nxt = replace(state, fraud_detected=True, suspended=True)
        return Decision(Outcome.SUSPENDED_FRAUD, p), nxt

    if rules.repetition_rule_enabled and repetition_triggered(state.recent_amounts, txn.amount, rules):
        return Decision(Outcome.SUSPENDED_REPETITION, p), replace(state, suspended=True)

    clock = 0.0 if state.clock is None else state.clock + txn.interval_since_prev
    daily = state.daily_count
    if state.clock is not None and int(clock // DAY_MINUTES) > int(state.clock // DAY_MINUTES):
        daily = 0
    if daily + 1 > rules.daily_limit:
        return Decision(Outcome.SUSPENDED_DAILY_LIMIT, p), replace(state, suspended=True, clock=clock)

    keep = max(rules.repetition_window - 1, 1)
    nxt = SystemState(
        cumulative_approved=state.cumulative_approved + 1,
        daily_count=daily + 1,
        fraud_detected=False,
        suspended=False,
        clock=clock,
        recent_amounts=(state.recent_amounts + (txn.amount,))[-keep:],
    )
    return Decision(Outcome.APPROVED, p), nxt
