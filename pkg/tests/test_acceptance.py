"""Acceptance criteria, one test per criterion, each at its stated tolerance.

The experiment criteria (4, 5, 6a, 9, 10) share one session fixture that drives the
``astfraud`` CLI on the shipped configs: experiment 1 twice into the same directory,
experiment 2 once. Expect roughly two and a half minutes on one core.

Criterion 6b needs the real public card-transaction dataset. Point ``ASTFRAUD_INGEST_CONFIG``
at an experiment config whose ``data.source`` is ``"ingest"``; without it the test is skipped.

A summary line per criterion is printed at the end of the pytest run.
"""

from __future__ import annotations

import contextlib
import dataclasses
import io
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from astfraud import cli
from astfraud import classifier as clf
from astfraud.data import MerchantCategory
from astfraud.env import AstAction, Event, FraudEnv, action_log_prob
from astfraud.experiment import load_config, load_data, train_classifier
from astfraud.qlearn import TrainConfig, train

from mdp import deterministic_three_state, value_iteration

SO, ENT = MerchantCategory.SHOPPING_ONLINE, MerchantCategory.ENTERTAINMENT
ARTIFACTS = ("report.json", "convergence.csv", "qtable.txt", "model.txt", "config.json")


def detail(record_property, text: str) -> None:
    record_property("detail", text)
    print(text)


def cli_run(argv: list[str]) -> tuple[int, str, float]:
    out, err = io.StringIO(), io.StringIO()
    t0 = time.perf_counter()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main(argv)
    return code, out.getvalue(), time.perf_counter() - t0


@pytest.fixture(scope="session")
def experiments(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    runs = {}
    for key, name in (("exp1_a", "experiment1"), ("exp1_b", "experiment1"), ("exp2", "experiment2")):
        out = root / name
        code, stdout, elapsed = cli_run(["run", "--config", name, "--out", str(out), "--format", "machine"])
        assert code == 0, f"{name} exited {code}"
        runs[key] = {
            "stdout": stdout,
            "elapsed": elapsed,
            "files": {f: (out / f).read_bytes() for f in ARTIFACTS},
            "report": json.loads((out / "report.json").read_text()),
        }
    return runs


def longest_equal_run(amounts: list[float]) -> int:
    best = cur = 0
    prev = None
    for a in amounts:
        cur = cur + 1 if a == prev else 1
        best, prev = max(best, cur), a
    return best


# --- 1 ---------------------------------------------------------------------------


@pytest.mark.criterion("1")
def test_criterion_01_qlearning_matches_value_iteration(record_property):
    mdp = deterministic_three_state()
    oracle = value_iteration(mdp)
    t0 = time.perf_counter()
    q, _ = train(lambda: mdp, TrainConfig(episodes=30_000, epsilon=1.0, alpha_schedule="visit", seed=0))
    elapsed = time.perf_counter() - t0
    err = float(np.abs(q.as_array(range(mdp.n_states)) - oracle).max())
    detail(record_property, f"max |Q - Q*| = {err:.2e} (tol 1e-3), {elapsed:.2f} s (limit 5 s)")
    assert err <= 1e-3
    assert elapsed < 5.0


# --- 2 ---------------------------------------------------------------------------


@pytest.mark.criterion("2")
def test_criterion_02_likelihood_normalizes(record_property):
    worst = 0.0
    for pop in ("overall", "fraud"):
        lm = dataclasses.replace(load_config("paper-defaults").likelihood_model(), amount_population=pop)
        table = lm.log_prob_table()
        assert table.size == 54
        sums = [math.fsum(np.exp(table).ravel()), lm.card_age_pmf().sum(), lm.category_pmf().sum()]
        for c in lm.grid.categories:
            sums += [lm.amount_pmf(c).sum(), lm.interval_pmf(c).sum()]
        worst = max(worst, max(abs(s - 1.0) for s in sums))
    detail(record_property, f"max |sum - 1| = {worst:.1e} over joint and per-axis pmfs (tol 1e-9)")
    assert worst <= 1e-9


# --- 3 ---------------------------------------------------------------------------


class FlagAbove:
    threshold = 0.5

    def __init__(self, limit):
        self.limit = limit

    def proba(self, txn):
        return 0.9 if txn.amount > self.limit else 0.1


@pytest.mark.criterion("3")
def test_criterion_03_reward_cases_exact(record_property):
    cfg = load_config("paper-defaults")
    lm = cfg.likelihood_model()
    env = FraudEnv(FlagAbove(500.0), cfg.rule_set(), lm, cfg.env_config())

    # ten approvals of mixed size, then the episode lands in E
    plan = [AstAction(0, SO, 100.0, 50.0), AstAction(0, ENT, 10.0, 1.0)] * 5
    s = env.reset(0)
    rewards, events = [], []
    for a in plan:
        tr = env.step(s, a)
        rewards.append(tr.reward)
        events.append(tr.event)
        s = tr.next_state
    assert events == [Event.CONTINUE] * 9 + [Event.IN_E]
    assert rewards[-1] == sum(a.amount for a in plan)
    assert all(r == action_log_prob(lm, a) for a, r in zip(plan[:-1], rewards[:-1]))

    # a flagged $1,000 transaction after two approvals
    s = env.reset(1)
    for a in (AstAction(1, SO, 100.0, 50.0), AstAction(1, SO, 10.0, 150.0)):
        s = env.step(s, a).next_state
    tr = env.step(s, AstAction(1, SO, 1000.0, 1.0))
    assert tr.event is Event.CAUGHT and tr.done
    assert tr.reward == -cfg.env.caught_penalty
    detail(record_property, f"InE {rewards[-1]:.0f} == sum v_k, Caught {tr.reward:.0f}, "
                            f"{len(rewards) - 1} continue steps == log p(a), exact")


# --- 4, 5: experiment paths ------------------------------------------------------


def describe(path: dict) -> str:
    steps = path["steps"]
    return (f"card {path['card_age']}: {len(steps)} steps, amounts {sorted({s['amount'] for s in steps})}, "
            f"{sum(s['category'] == SO.label for s in steps)} shopping-online, {path['terminal_event']}")


@pytest.mark.slow
@pytest.mark.criterion("4")
def test_criterion_04_experiment1_reverts_to_100(experiments, record_property):
    run = experiments["exp1_a"]
    paths = run["report"]["paths"]
    detail(record_property, "; ".join(describe(p) for p in paths) + f"; {run['elapsed']:.0f} s")
    assert run["report"]["config"]["train"]["episodes"] >= 200_000
    assert run["elapsed"] < 600.0
    assert len(paths) == 2
    for p in paths:
        steps = p["steps"]
        assert len(steps) == 10
        assert all(s["amount"] == 100.0 for s in steps)
        assert sum(s["category"] == SO.label for s in steps) >= 6


@pytest.mark.slow
@pytest.mark.criterion("5")
def test_criterion_05_experiment2_varies_amounts(experiments, record_property):
    paths = experiments["exp2"]["report"]["paths"]
    runs = [longest_equal_run([s["amount"] for s in p["steps"]]) for p in paths]
    mixes = [{100.0, 1000.0} <= {s["amount"] for s in p["steps"]} for p in paths]
    detail(record_property, f"longest equal-amount runs {runs} (need < 5); "
                            f"paths mixing $100 and $1,000: {sum(mixes)} (need >= 1); "
                            + "; ".join(describe(p) for p in paths))
    assert all(r < 5 for r in runs)
    assert any(mixes)


# --- 6 ---------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion("6a")
def test_criterion_06a_synthetic_accuracy(experiments, record_property):
    m = experiments["exp1_a"]["report"]["metrics"]
    detail(record_property, f"accuracy {m['accuracy']:.4f} (need >= 0.90), decline {m['decline_rate']:.4f}, "
                            f"uncaught fraction {m['uncaught_fraction_of_fraud']:.3f}, n {m['n']}")
    assert m["accuracy"] >= 0.90


@pytest.mark.criterion("6b")
def test_criterion_06b_real_dataset_bands(record_property):
    path = os.environ.get("ASTFRAUD_INGEST_CONFIG")
    if not path:
        pytest.skip("ASTFRAUD_INGEST_CONFIG not set; real dataset absent")
    cfg = load_config(Path(path))
    assert cfg.data.source == "ingest"
    _, m = train_classifier(cfg)
    detail(record_property, f"accuracy {m.accuracy:.4f} [0.94, 0.99], decline {m.decline_rate:.4f} [0.02, 0.06], "
                            f"uncaught fraction {m.uncaught_fraction_of_fraud:.3f} [0.16, 0.36]")
    assert 0.94 <= m.accuracy <= 0.99
    assert 0.02 <= m.decline_rate <= 0.06
    assert 0.16 <= m.uncaught_fraction_of_fraud <= 0.36


# --- 7, 8: classifier internals on the synthetic training set ----------------------


@pytest.fixture(scope="module")
def synthetic_train():
    train_set, _ = load_data(load_config("paper-defaults"))
    return train_set


@pytest.mark.criterion("7")
def test_criterion_07_smote_contract(synthetic_train, record_property):
    smote = load_config("paper-defaults").classifier.smote
    out, lineage = clf.smote_rebalance(np.random.default_rng(0), synthetic_train, smote.duplicate_to,
                                       smote.synthesize_to, smote.k, return_lineage=True)
    n, fraud = len(out), int(out.labels.sum())
    worst = 0.0
    for rec in lineage:
        a, b, s = synthetic_train[rec.parent_a], synthetic_train[rec.parent_b], out[rec.index]
        assert a.is_fraud and b.is_fraud and s.is_fraud and 0.0 <= rec.t <= 1.0
        for f in ("amount", "interval_since_prev", "card_txn_count"):
            va, vb = getattr(a, f), getattr(b, f)
            worst = max(worst, abs(getattr(s, f) - (va + rec.t * (vb - va))))
    detail(record_property, f"{fraud} fraud of {n} rows, |fraud - n/3| = {abs(fraud - n / 3):.2f} (tol 1); "
                            f"{len(lineage)} synthetic rows, max reconstruction error {worst:.1e} (tol 1e-9)")
    assert abs(fraud - n / 3) <= 1
    assert lineage and worst <= 1e-9


@pytest.mark.criterion("8")
def test_criterion_08_gradient_check(synthetic_train, record_property):
    rng = np.random.default_rng(8)
    rows = [synthetic_train[int(i)] for i in rng.choice(len(synthetic_train), 400, replace=False)]
    X = clf.feature_matrix(rows, clf.Standardization.fit(synthetic_train))
    y = np.array([t.is_fraud for t in rows], dtype=float)
    l2, h, worst = 1e-4, 1e-5, 0.0
    d = X.shape[1]
    for _ in range(20):
        w, b = rng.normal(size=d), float(rng.normal())
        gw, gb = clf.logistic_grad(w, b, X, y, l2)
        num = np.empty(d + 1)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            num[i] = (clf.logistic_loss(w + e, b, X, y, l2) - clf.logistic_loss(w - e, b, X, y, l2)) / (2 * h)
        num[d] = (clf.logistic_loss(w, b + h, X, y, l2) - clf.logistic_loss(w, b - h, X, y, l2)) / (2 * h)
        ana = np.append(gw, gb)
        rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        worst = max(worst, float(rel.max()))
    detail(record_property, f"max relative error {worst:.1e} over 20 points (tol 1e-5)")
    assert worst <= 1e-5


# --- 9, 10 -----------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion("9")
def test_criterion_09_convergence_decays(experiments, record_property):
    conv = experiments["exp1_a"]["report"]["convergence"]
    norms = np.asarray(conv["norms"])
    tail = norms[-max(len(norms) // 10, 1):]
    ratio = float(tail.mean() / norms.max())
    detail(record_property, f"last-decile mean / peak = {ratio:.2e} (need < 0.1), {len(norms)} checkpoints")
    assert ratio == pytest.approx(conv["last_decile_ratio"], rel=1e-12, abs=1e-300)
    assert ratio < 0.1


@pytest.mark.slow
@pytest.mark.criterion("10")
def test_criterion_10_cli_runs_are_byte_identical(experiments, tmp_path, record_property):
    a, b = experiments["exp1_a"], experiments["exp1_b"]
    assert a["stdout"] == b["stdout"]
    for f in ARTIFACTS:
        assert a["files"][f] == b["files"][f], f

    # the stepwise verbs on a small config, each invoked twice into the same directory
    d = json.loads((Path(cli.__file__).parent / "configs" / "paper-defaults.json").read_text())
    d["data"]["synthetic"].update(n_accounts=60, txns_per_account=50, fraud_rate=0.03)
    d["train"].update(episodes=3000, checkpoint_stride=300)
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(d))
    base = ["--config", str(cfg), "--out", str(tmp_path / "run"), "--seed", "5", "--format", "machine"]
    verbs = ("train-classifier", "run-ast", "extract-path", "report")
    for verb in verbs:
        first = cli_run([verb, *base])
        second = cli_run([verb, *base])
        assert first[0] == second[0] == 0, verb
        assert first[1] == second[1], verb
    detail(record_property, f"run x2: stdout and {len(ARTIFACTS)} artifacts identical; "
                            f"{', '.join(verbs)} x2: stdout identical")
