"""Logistic-regression fraud classifier with two-stage SMOTE rebalancing."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import MerchantCategory, N_CATEGORIES, Transaction, TransactionSet

NUMERIC_FIELDS = ("amount", "interval", "card_txn_count")
N_FEATURES = N_CATEGORIES + len(NUMERIC_FIELDS)
FEATURE_NAMES = tuple(c.label for c in MerchantCategory) + NUMERIC_FIELDS
MODEL_FORMAT = "astfraud-logistic"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Standardization:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if any(not s > 0 for s in self.std):
            raise ValueError(f"standardization stds must be positive, got {self.std}")

    @classmethod
    def fit(cls, ts: TransactionSet) -> "Standardization":
        raw = numeric_matrix(ts)
        sd = raw.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(tuple(raw.mean(axis=0).tolist()), tuple(sd.tolist()))


def numeric_matrix(ts: TransactionSet | Sequence[Transaction]) -> np.ndarray:
    return np.array(
        [(t.amount, t.interval_since_prev, t.card_txn_count) for t in ts], dtype=float
    ).reshape(-1, 3)


def extract_features(txn: Transaction, standardization: Standardization) -> np.ndarray:
    """17-component vector: category one-hot, then standardized amount, interval, card count."""
    x = np.zeros(N_FEATURES)
    x[int(txn.category)] = 1.0
    raw = (txn.amount, txn.interval_since_prev, txn.card_txn_count)
    for j, (v, m, s) in enumerate(zip(raw, standardization.mean, standardization.std)):
        x[N_CATEGORIES + j] = (v - m) / s
    return x


def feature_matrix(ts: TransactionSet | Sequence[Transaction], standardization: Standardization) -> np.ndarray:
    txns = list(ts)
    X = np.zeros((len(txns), N_FEATURES))
    if not txns:
        return X
    X[np.arange(len(txns)), [int(t.category) for t in txns]] = 1.0
    X[:, N_CATEGORIES:] = (numeric_matrix(txns) - np.array(standardization.mean)) / np.array(
        standardization.std
    )
    return X


def sigmoid(z):
    # split by sign so neither branch overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LogisticModel:
    weights: tuple[float, ...]
    bias: float
    standardization: Standardization
    threshold: float = 0.5
    loss_history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if len(self.weights) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} weights, got {len(self.weights)}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")

    def logit(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features) @ np.asarray(self.weights) + self.bias

    def proba(self, txn: Transaction) -> float:
        return predict_proba(self, extract_features(txn, self.standardization))

    def predict(self, ts: TransactionSet | Sequence[Transaction]) -> np.ndarray:
        X = feature_matrix(ts, self.standardization)
        return predict_proba(self, X) >= self.threshold


def predict_proba(model: LogisticModel, features: np.ndarray):
    """Sigmoid of the affine score; accepts one feature vector or a 2-D batch."""
    return sigmoid(model.logit(features))


def logistic_loss(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = X @ w + b
    # log(1 + e^z) - y z, written stably
    per_row = np.logaddexp(0.0, z) - y * z
    return float(per_row.mean() + 0.5 * l2 * (w @ w))


def logistic_grad(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[np.ndarray, float]:
    r = sigmoid(X @ w + b) - y
    n = X.shape[0]
    return X.T @ r / n + l2 * w, float(r.sum() / n)


def fit_logistic(
    X: np.ndarray, y: np.ndarray, lr: float, epochs: int, l2: float
) -> tuple[np.ndarray, float, list[float]]:
    """Full-batch gradient descent from zero weights. Returns weights, bias and per-epoch loss."""
    w = np.zeros(X.shape[1])
    b = 0.0
    losses = [logistic_loss(w, b, X, y, l2)]
    for _ in range(epochs):
        gw, gb = logistic_grad(w, b, X, y, l2)
        w -= lr * gw
        b -= lr * gb
        losses.append(logistic_loss(w, b, X, y, l2))
    return w, b, losses


def train(
    ts: TransactionSet,
    lr: float = 0.1,
    epochs: int = 500,
    l2: float = 1e-4,
    threshold: float = 0.5,
) -> LogisticModel:
    if len(ts) == 0:
        raise ValueError("cannot train on an empty set")
    y = ts.labels.astype(float)
    if y.min() == y.max():
        raise ValueError("training set must contain both fraud and non-fraud rows")
    std = Standardization.fit(ts)
    X = feature_matrix(ts, std)
    w, b, losses = fit_logistic(X, y, lr, epochs, l2)
    return LogisticModel(tuple(w.tolist()), float(b), std, threshold, tuple(losses))


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    decline_rate: float
    uncaught_fraud_rate: float
    # None when the set has no fraud rows
    uncaught_fraction_of_fraud: float | None
    n: int = 0

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "decline_rate": self.decline_rate,
            "uncaught_fraud_rate": self.uncaught_fraud_rate,
            "uncaught_fraction_of_fraud": self.uncaught_fraction_of_fraud,
            "n": self.n,
        }


def confusion_metrics(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    n = y_true.size
    if n == 0:
        raise ValueError("cannot evaluate an empty set")
    tp = int(np.sum(y_true & y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    return Metrics(
        accuracy=(tp + tn) / n,
        decline_rate=fp / n,
        uncaught_fraud_rate=fn / n,
        uncaught_fraction_of_fraud=fn / (tp + fn) if tp + fn else None,
        n=n,
    )


def evaluate(model: LogisticModel, ts: TransactionSet) -> Metrics:
    return confusion_metrics(ts.labels, model.predict(ts))


@dataclass(frozen=True)
class SyntheticLineage:
    """Where synthetic row ``index`` came from: ``parent_a + t * (parent_b - parent_a)``."""

    index: int
    parent_a: int
    parent_b: int
    t: float


def smote_rebalance(
    rng: np.random.Generator,
    ts: TransactionSet,
    duplicate_to: float = 0.10,
    synthesize_to: float = 1.0 / 3.0,
    k: int = 5,
    return_lineage: bool = False,
):
    """Two-stage minority oversampling.

    Stage 1 duplicates random fraud rows until they make up ``duplicate_to`` of the
    set. Stage 2 adds SMOTE rows, each a convex combination of a fraud row and one of
    its ``k`` nearest fraud neighbours (Euclidean over standardized amount, interval
    and card count), until fraud makes up ``synthesize_to``. Input rows come first and
    are untouched; duplicates follow, then synthetic rows.

    With ``return_lineage`` the result is ``(set, lineage)`` where ``lineage`` holds
    one :class:`SyntheticLineage` per synthetic row, with parent indices into ``ts``.
    """
    if not 0.0 < duplicate_to < synthesize_to < 1.0:
        raise ValueError(
            f"need 0 < duplicate_to < synthesize_to < 1, got {duplicate_to}, {synthesize_to}"
        )
    rows = list(ts.transactions)
    n = len(rows)
    fraud_idx = np.flatnonzero(ts.labels)
    m = fraud_idx.size
    lineage: list[SyntheticLineage] = []

    def done(out_rows):
        out = TransactionSet(out_rows, ts.provenance)
        return (out, lineage) if return_lineage else out

    if n == 0 or m / n >= synthesize_to:
        return done(rows)
    if m == 0:
        raise ValueError("no fraud rows to oversample")

    # stage 1: duplication
    n_dup = 0
    if m / n < duplicate_to:
        n_dup = math.ceil((duplicate_to * n - m) / (1.0 - duplicate_to))
        picks = rng.choice(fraud_idx, size=n_dup, replace=True)
        rows.extend(rows[i] for i in picks)
    n1, m1 = n + n_dup, m + n_dup

    # stage 2: interpolation; (m1 + s) / (n1 + s) = synthesize_to
    n_syn = int(round((synthesize_to * n1 - m1) / (1.0 - synthesize_to)))
    if n_syn <= 0:
        return done(rows)
    if m < k + 1:
        raise ValueError(f"SMOTE with k={k} needs at least {k + 1} fraud rows, got {m}")

    raw = numeric_matrix([ts[i] for i in fraud_idx])
    sd = raw.std(axis=0)
    sd[sd == 0] = 1.0
    z = (raw - raw.mean(axis=0)) / sd
    neighbours = _knn(z, k)

    seeds = rng.integers(0, m, size=n_syn)
    which = rng.integers(0, k, size=n_syn)
    ts_ = rng.random(n_syn)
    for j in range(n_syn):
        a_local = seeds[j]
        b_local = neighbours[a_local, which[j]]
        a, b = int(fraud_idx[a_local]), int(fraud_idx[b_local])
        t = float(ts_[j])
        ra, rb = ts[a], ts[b]
        rows.append(
            Transaction(
                account_id=f"smote{j:07d}",
                timestamp=ra.timestamp,
                category=ra.category,
                amount=ra.amount + t * (rb.amount - ra.amount),
                interval_since_prev=ra.interval_since_prev
                + t * (rb.interval_since_prev - ra.interval_since_prev),
                card_txn_count=ra.card_txn_count + t * (rb.card_txn_count - ra.card_txn_count),
                is_fraud=True,
            )
        )
        lineage.append(SyntheticLineage(len(rows) - 1, a, b, t))
    return done(rows)


def _knn(z: np.ndarray, k: int, block: int = 2048) -> np.ndarray:
    """Indices of the k nearest other rows, ties broken by index."""
    out = np.empty((z.shape[0], k), dtype=int)
    sq = (z * z).sum(axis=1)
    for lo in range(0, z.shape[0], block):
        hi = min(lo + block, z.shape[0])
        d = sq[lo:hi, None] + sq[None, :] - 2.0 * z[lo:hi] @ z.T
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def save_model(model: LogisticModel, path: str | os.PathLike) -> None:
    lines = [f"format = {MODEL_FORMAT}", f"version = {MODEL_VERSION}"]
    lines.append(f"threshold = {model.threshold!r}")
    lines.append(f"bias = {model.bias!r}")
    for name, w in zip(FEATURE_NAMES, model.weights):
        lines.append(f"weight.{name} = {w!r}")
    for name, m, s in zip(NUMERIC_FIELDS, model.standardization.mean, model.standardization.std):
        lines.append(f"mean.{name} = {m!r}")
        lines.append(f"std.{name} = {s!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str | os.PathLike) -> LogisticModel:
    kv: dict[str, str] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: malformed line {raw!r}")
            kv[key.strip()] = value.strip()
    if kv.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} document")
    if int(kv.get("version", -1)) != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported version {kv.get('version')}")
    try:
        weights = tuple(float(kv[f"weight.{n}"]) for n in FEATURE_NAMES)
        std = Standardization(
            tuple(float(kv[f"mean.{n}"]) for n in NUMERIC_FIELDS),
            tuple(float(kv[f"std.{n}"]) for n in NUMERIC_FIELDS),
        )
        return LogisticModel(weights, float(kv["bias"]), std, float(kv["threshold"]))
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc.args[0]}") from None
