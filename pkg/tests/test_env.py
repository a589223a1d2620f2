import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from astfraud.data import MerchantCategory
from astfraud.detection import Decision, Outcome, RuleSet
from astfraud.env import (
    ActionGrid,
    AstAction,
    EnvConfig,
    Event,
    FraudEnv,
    LikelihoodModel,
    action_log_prob,
    discount_factor,
    reward,
    trailing_run,
)

ENT, SO, SIP = MerchantCategory.ENTERTAINMENT, MerchantCategory.SHOPPING_ONLINE, MerchantCategory.SHOPPING_IN_PERSON


class Fixed:
    def __init__(self, p, threshold=0.5):
        self.p, self.threshold = p, threshold

    def proba(self, txn):
        return self.p


class FlagAbove:
    """Flags any amount above ``limit``."""

    threshold = 0.5

    def __init__(self, limit):
        self.limit = limit

    def proba(self, txn):
        return 0.9 if txn.amount > self.limit else 0.1


NEVER, ALWAYS = Fixed(0.0), Fixed(1.0)
GRID = ActionGrid()
LM = LikelihoodModel()


def all_actions(grid=GRID):
    return [grid.action(b, i) for b in range(len(grid.card_ages)) for i in range(grid.n_step_actions)]


# --- grid ------------------------------------------------------------------------


def test_grid_sizes():
    assert GRID.n_step_actions == 27
    assert GRID.size == 54
    assert len(set(all_actions())) == 54


def test_encode_decode_round_trip():
    for i in range(27):
        assert GRID.encode(*GRID.decode(i)) == i
        assert GRID.index_of(GRID.action(1, i)) == i


def test_off_grid_action_rejected():
    with pytest.raises(ValueError):
        GRID.index_of(AstAction(0, SO, 55.0, 50.0))
    with pytest.raises(ValueError):
        action_log_prob(LM, AstAction(0, MerchantCategory.TRAVEL, 100.0, 50.0))
    with pytest.raises(ValueError):
        GRID.index_of(AstAction(2, SO, 100.0, 50.0))


# --- likelihood ------------------------------------------------------------------


def test_card_age_factor_matches_direct_evaluation():
    d_new, d_mid = math.exp(-10 / 390), math.exp(-500 / 390)
    p = LM.card_age_pmf()
    assert abs(p[0] - d_new / (d_new + d_mid)) <= 1e-12
    # direct evaluation gives 0.77841 / 0.22159; the quoted 0.7783 / 0.2217 agree to 2e-4
    assert round(p[0], 5) == 0.77841 and round(p[1], 5) == 0.22159
    assert abs(p[0] - 0.7783) <= 2e-4 and abs(p[1] - 0.2217) <= 2e-4


def test_category_factor_uses_fraud_portions():
    p = LM.category_pmf()
    assert np.allclose(p, np.array([0.03, 0.24, 0.10]) / 0.37, rtol=0, atol=1e-12)
    assert p.argmax() == 1


@pytest.mark.parametrize("pop", ["overall", "fraud"])
def test_every_axis_pmf_sums_to_one(pop):
    lm = LikelihoodModel(amount_population=pop)
    assert abs(lm.card_age_pmf().sum() - 1) <= 1e-9
    assert abs(lm.category_pmf().sum() - 1) <= 1e-9
    for c in GRID.categories:
        assert abs(lm.amount_pmf(c).sum() - 1) <= 1e-9
        assert abs(lm.interval_pmf(c).sum() - 1) <= 1e-9


@pytest.mark.parametrize("pop", ["overall", "fraud"])
def test_joint_likelihood_sums_to_one_over_grid(pop):
    lm = LikelihoodModel(amount_population=pop)
    total = math.fsum(math.exp(action_log_prob(lm, a)) for a in all_actions())
    assert abs(total - 1) <= 1e-9


def test_amount_factor_against_gaussian_oracle():
    for pop in ("overall", "fraud"):
        lm = LikelihoodModel(amount_population=pop)
        from astfraud.data import CATEGORY_STATS

        for c in GRID.categories:
            s = CATEGORY_STATS[c]
            mu, sd = getattr(s, f"{pop}_mean"), getattr(s, f"{pop}_std")
            # scipy-free oracle: unnormalized densities, compared in log space to dodge underflow
            logd = np.array([-0.5 * ((a - mu) / sd) ** 2 for a in GRID.amounts])
            ref = np.exp(logd - np.logaddexp.reduce(logd))
            assert np.allclose(lm.amount_pmf(c), ref, rtol=1e-12, atol=1e-300)


def test_log_prob_table_matches_per_action():
    table = LM.log_prob_table()
    for a in all_actions():
        assert table[a.card_age_bucket, GRID.index_of(a)] == pytest.approx(action_log_prob(LM, a), abs=1e-12)


def test_card_factor_shifts_both_cards_equally():
    t = LM.log_prob_table()
    diff = t[0] - t[1]
    assert np.allclose(diff, diff[0], atol=1e-12)
    assert t[0].argmax() == t[1].argmax()


# --- discount --------------------------------------------------------------------


def test_discount_factor_examples():
    assert discount_factor(1440) == pytest.approx(0.2, abs=1e-15)
    assert discount_factor(0) == 1.0
    # independent route: exp(t * ln 0.2) = 0.845650 (the quoted 0.8459 is 2.5e-4 high)
    assert discount_factor(150) == pytest.approx(math.exp(150 / 1440 * math.log(0.2)), rel=1e-14)
    assert abs(discount_factor(150) - 0.84565) <= 1e-5
    with pytest.raises(ValueError):
        discount_factor(-1)


# --- reward ----------------------------------------------------------------------


def scripted(env, actions):
    s = env.reset(actions[0].card_age_bucket)
    out = []
    for a in actions:
        tr = env.step(s, a)
        out.append((s, a, tr))
        if tr.done:
            break
        s = tr.next_state
    return out


def test_ten_hundred_dollar_approvals_pay_one_thousand():
    env = FraudEnv(NEVER)
    trace = scripted(env, [AstAction(0, SO, 100.0, 50.0)] * 10)
    assert len(trace) == 10
    *_, (_, _, last) = trace
    assert last.done and last.event is Event.IN_E
    assert last.reward == 1000.0


def test_flagged_transaction_costs_penalty():
    env = FraudEnv(ALWAYS)
    (_, _, tr), = scripted(env, [AstAction(1, ENT, 10.0, 1.0)])
    assert tr.done and tr.event is Event.CAUGHT and tr.reward == -10_000.0
    assert tr.decision.outcome is Outcome.SUSPENDED_FRAUD
    assert tr.next_state.fraud_detected


def test_mid_episode_reward_is_exact_log_prob():
    env = FraudEnv(NEVER)
    a = AstAction(1, SIP, 1000.0, 150.0)
    (_, _, tr), = scripted(env, [a])
    assert tr.event is Event.CONTINUE and not tr.done
    assert tr.reward == action_log_prob(LM, a)


def test_reward_function_three_cases():
    env = FraudEnv(NEVER)
    cfg = EnvConfig()
    trace = scripted(env, [AstAction(0, SO, 10.0, 1.0)] * 10)
    for prev, a, tr in trace:
        r = reward(prev, a, tr.decision, tr.next_state, cfg, LM)
        assert r == tr.reward
    caught = Decision(Outcome.SUSPENDED_REPETITION, 0.1)
    prev, a, tr = trace[3]
    assert reward(prev, a, caught, tr.next_state, EnvConfig(caught_penalty=7.0), LM) == -7.0


def test_repetition_suspension_ends_episode_as_caught():
    env = FraudEnv(NEVER, RuleSet(repetition_rule_enabled=True))
    trace = scripted(env, [AstAction(0, SO, 100.0, 50.0)] * 10)
    assert len(trace) == 5
    assert trace[-1][2].event is Event.CAUGHT
    assert trace[-1][2].decision.outcome is Outcome.SUSPENDED_REPETITION


# --- step ------------------------------------------------------------------------


def test_fresh_state_approval_updates_counters():
    env = FraudEnv(NEVER)
    s = env.reset(0)
    assert s.cumulative_approved == 10 and s.daily_count == 0
    tr = env.step(s, AstAction(0, SO, 100.0, 50.0))
    assert tr.next_state.daily_count == 1
    assert tr.next_state.accumulated_fraud_value == 100.0
    assert tr.next_state.cumulative_approved == 11
    assert tr.event is Event.CONTINUE


def test_step_accepts_indices_and_reports_gamma():
    env = FraudEnv(NEVER)
    i = GRID.index_of(AstAction(0, ENT, 10.0, 150.0))
    tr = env.step(env.reset(0), i)
    assert tr.action_index == i
    assert tr.gamma == pytest.approx(discount_factor(150.0))


def test_terminal_state_cannot_step():
    env = FraudEnv(ALWAYS)
    tr = env.step(env.reset(0), 0)
    with pytest.raises(RuntimeError):
        env.step(tr.next_state, 0)


def test_card_age_frozen_within_episode():
    env = FraudEnv(NEVER)
    with pytest.raises(ValueError):
        env.step(env.reset(0), AstAction(1, SO, 10.0, 1.0))


def test_classifier_sees_state_card_count():
    seen = []

    class Spy:
        threshold = 0.5

        def proba(self, txn):
            seen.append((txn.card_txn_count, txn.amount, txn.interval_since_prev, txn.category))
            return 0.0

    env = FraudEnv(Spy())
    scripted(env, [AstAction(1, SIP, 10.0, 150.0)] * 3)
    assert seen == [(500, 10.0, 150.0, SIP), (501, 10.0, 150.0, SIP), (502, 10.0, 150.0, SIP)]


def test_state_keys():
    compact = FraudEnv(NEVER)
    s = compact.step(compact.reset(1), AstAction(1, SO, 100.0, 1.0)).next_state
    assert compact.state_key(s) == (1, 1, 0)
    markov = FraudEnv(NEVER, cfg=EnvConfig(state_space="markov"))
    assert markov.state_key(s) == (1, 1, 0, 100.0)
    rep = FraudEnv(NEVER, RuleSet(repetition_rule_enabled=True), cfg=EnvConfig(state_space="markov"))
    s = rep.step(rep.reset(1), AstAction(1, SO, 100.0, 1.0)).next_state
    assert rep.state_key(s) == (1, 1, 0, 100.0, 100.0, 1)
    with pytest.raises(ValueError):
        EnvConfig(state_space="full")


def test_trailing_run():
    assert trailing_run(()) == (0.0, 0)
    assert trailing_run((10.0, 100.0, 100.0)) == (100.0, 2)
    assert trailing_run((100.0, 100.0, 100.0, 100.0)) == (100.0, 4)
    assert trailing_run((90.0, 100.0, 95.0), tolerance=10.0) == (95.0, 3)


# --- properties ------------------------------------------------------------------

models = st.sampled_from([NEVER, ALWAYS, FlagAbove(10.0), FlagAbove(100.0), Fixed(0.3)])


@settings(max_examples=150, deadline=None)
@given(model=models, bucket=st.integers(0, 1), rep=st.booleans(),
       idx=st.lists(st.integers(0, 26), min_size=12, max_size=12))
def test_trajectory_properties(model, bucket, rep, idx):
    env = FraudEnv(model, RuleSet(repetition_rule_enabled=rep))
    s = env.reset(bucket)
    approved_sum, steps = 0.0, 0
    for i in idx:
        tr = env.step(s, i)
        steps += 1
        assert tr.done == (tr.event is not Event.CONTINUE)
        if tr.decision.outcome is Outcome.APPROVED:
            approved_sum += GRID.action(bucket, i).amount
        assert tr.next_state.accumulated_fraud_value == approved_sum
        if tr.event is Event.CONTINUE:
            assert tr.reward < 0
        elif tr.event is Event.IN_E:
            assert tr.reward > 0 and tr.reward == approved_sum
        else:
            assert tr.reward == -10_000.0
        if tr.done:
            break
        s = tr.next_state
    assert steps <= 11
    assert tr.done


@settings(max_examples=50, deadline=None)
@given(bucket=st.integers(0, 1), idx=st.lists(st.integers(0, 26), min_size=10, max_size=10))
def test_never_flag_always_ends_in_event_space(bucket, idx):
    env = FraudEnv(NEVER)
    s = env.reset(bucket)
    for k, i in enumerate(idx):
        tr = env.step(s, i)
        if k < 9:
            assert not tr.done
        s = tr.next_state
    assert tr.event is Event.IN_E
    assert tr.reward == sum(GRID.action(bucket, i).amount for i in idx)


def test_step_ignores_rng():
    env = FraudEnv(FlagAbove(100.0))
    a = env.step(env.reset(0), 5, np.random.default_rng(1))
    b = env.step(env.reset(0), 5, np.random.default_rng(2))
    assert a == b
