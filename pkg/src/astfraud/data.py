"""Merchant categories, transaction records, synthetic generation and CSV ingestion."""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

AMOUNT_FLOOR = 1.0
MAX_RESAMPLE = 100


class MerchantCategory(enum.IntEnum):
    ENTERTAINMENT = 0
    FOOD_DINING = 1
    GAS_TRANSPORT = 2
    GROCERY_ONLINE = 3
    GROCERY_IN_PERSON = 4
    HEALTH_FITNESS = 5
    HOME = 6
    KIDS_PETS = 7
    MISC_ONLINE = 8
    MISC_IN_PERSON = 9
    PERSONAL_CARE = 10
    SHOPPING_ONLINE = 11
    SHOPPING_IN_PERSON = 12
    TRAVEL = 13

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_label(cls, label: str) -> "MerchantCategory":
        return cls[label.strip().upper().replace("-", "_").replace("/", "_")]


N_CATEGORIES = len(MerchantCategory)


@dataclass(frozen=True)
class CategoryStats:
    overall_portion: float
    overall_mean: float
    overall_std: float
    fraud_portion: float
    fraud_mean: float
    fraud_std: float


# Overall / fraud amount statistics per merchant category, USD.
_TABLE = {
    MerchantCategory.ENTERTAINMENT: (0.07, 64, 64, 0.03, 510, 74),
    MerchantCategory.FOOD_DINING: (0.07, 51, 48, 0.03, 122, 14),
    MerchantCategory.GAS_TRANSPORT: (0.10, 64, 16, 0.07, 12, 5),
    MerchantCategory.GROCERY_ONLINE: (0.03, 54, 23, 0.02, 12, 3),
    MerchantCategory.GROCERY_IN_PERSON: (0.09, 116, 52, 0.23, 313, 27),
    MerchantCategory.HEALTH_FITNESS: (0.07, 54, 48, 0.02, 20, 2),
    MerchantCategory.HOME: (0.09, 58, 48, 0.03, 258, 47),
    MerchantCategory.KIDS_PETS: (0.09, 58, 49, 0.03, 20, 3),
    MerchantCategory.MISC_ONLINE: (0.05, 79, 164, 0.13, 804, 87),
    MerchantCategory.MISC_IN_PERSON: (0.06, 62, 134, 0.03, 193, 316),
    MerchantCategory.PERSONAL_CARE: (0.07, 48, 49, 0.03, 26, 12),
    MerchantCategory.SHOPPING_ONLINE: (0.08, 83, 237, 0.24, 994, 95),
    MerchantCategory.SHOPPING_IN_PERSON: (0.09, 77, 232, 0.10, 887, 131),
    MerchantCategory.TRAVEL: (0.03, 112, 596, 0.00, 9, 2),
}
CATEGORY_STATS = {c: CategoryStats(*map(float, row)) for c, row in _TABLE.items()}


def category_stats(category: MerchantCategory) -> CategoryStats:
    return CATEGORY_STATS[MerchantCategory(category)]


def portions(population: str = "fraud") -> np.ndarray:
    """Renormalized category pmf for ``population`` ('overall' or 'fraud'), indexed by category."""
    attr = _population_attr(population, "portion")
    raw = np.array([getattr(CATEGORY_STATS[c], attr) for c in MerchantCategory])
    return raw / raw.sum()


def _population_attr(population: str, what: str) -> str:
    if population not in ("overall", "fraud"):
        raise ValueError(f"population must be 'overall' or 'fraud', got {population!r}")
    return f"{population}_{what}"


@dataclass(frozen=True)
class IntervalStats:
    """Gaussian parameters (minutes) for the gap between consecutive transactions.

    Per-category overrides map a category label to ``(mean, std)``.
    """

    overall_mean: float = 240.0
    overall_std: float = 120.0
    fraud_mean: float = 30.0
    fraud_std: float = 20.0
    overall_overrides: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    fraud_overrides: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def params(self, category: MerchantCategory, population: str) -> tuple[float, float]:
        overrides = self.overall_overrides if population == "overall" else self.fraud_overrides
        label = MerchantCategory(category).label
        if label in overrides:
            mu, sd = overrides[label]
            return float(mu), float(sd)
        mu = getattr(self, _population_attr(population, "mean"))
        sd = getattr(self, _population_attr(population, "std"))
        return mu, sd


@dataclass(frozen=True)
class Transaction:
    account_id: str
    timestamp: float
    category: MerchantCategory
    amount: float
    interval_since_prev: float
    card_txn_count: int
    is_fraud: bool


@dataclass
class TransactionSet:
    transactions: list[Transaction]
    provenance: str = "synthetic"

    def __len__(self) -> int:
        return len(self.transactions)

    def __iter__(self):
        return iter(self.transactions)

    def __getitem__(self, i):
        return self.transactions[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.is_fraud for t in self.transactions], dtype=bool)

    @property
    def fraud_fraction(self) -> float:
        return float(self.labels.mean()) if self.transactions else 0.0


def _truncated_normal(rng: np.random.Generator, mu: float, sd: float, floor: float) -> float:
    for _ in range(MAX_RESAMPLE):
        x = rng.normal(mu, sd)
        if x >= floor:
            return float(x)
    return float(floor)


def sample_transaction(
    rng: np.random.Generator,
    category: MerchantCategory,
    population: str,
    intervals: IntervalStats | None = None,
    account_id: str = "0",
    timestamp: float = 0.0,
    card_txn_count: int = 0,
) -> Transaction:
    """Draw one transaction of ``category`` from the overall or fraud population.

    Amounts below :data:`AMOUNT_FLOOR` are redrawn up to ``MAX_RESAMPLE`` times
    and then clamped; intervals are floored at zero the same way.
    """
    intervals = intervals or IntervalStats()
    stats = category_stats(category)
    mu = getattr(stats, _population_attr(population, "mean"))
    sd = getattr(stats, _population_attr(population, "std"))
    amount = _truncated_normal(rng, mu, sd, AMOUNT_FLOOR)
    imu, isd = intervals.params(category, population)
    interval = _truncated_normal(rng, imu, isd, 0.0)
    return Transaction(
        account_id=account_id,
        timestamp=timestamp,
        category=MerchantCategory(category),
        amount=amount,
        interval_since_prev=interval,
        card_txn_count=card_txn_count,
        is_fraud=population == "fraud",
    )


def _truncated_normal_array(
    rng: np.random.Generator, mu: np.ndarray, sd: np.ndarray, floor: float
) -> np.ndarray:
    x = rng.normal(mu, sd)
    for _ in range(MAX_RESAMPLE - 1):
        bad = x < floor
        if not bad.any():
            break
        x[bad] = rng.normal(mu[bad], sd[bad])
    return np.maximum(x, floor)


def generate_dataset(
    rng: np.random.Generator,
    n_accounts: int,
    txns_per_account: int,
    fraud_rate: float,
    intervals: IntervalStats | None = None,
    card_age_mean: float = 390.0,
) -> TransactionSet:
    """Synthetic transaction history calibrated to the category table.

    Every account starts with a prior card count drawn from an exponential with
    mean ``card_age_mean``; the same distribution is used for both classes so the
    count carries no label information by itself.
    """
    if not 0.0 <= fraud_rate < 1.0:
        raise ValueError(f"fraud_rate must lie in [0, 1), got {fraud_rate}")
    if n_accounts <= 0 or txns_per_account <= 0:
        raise ValueError("n_accounts and txns_per_account must be positive")
    intervals = intervals or IntervalStats()
    n = n_accounts * txns_per_account
    fraud = rng.random(n) < fraud_rate
    cats = np.where(
        fraud,
        rng.choice(N_CATEGORIES, size=n, p=portions("fraud")),
        rng.choice(N_CATEGORIES, size=n, p=portions("overall")),
    )
    pop = np.where(fraud, 1, 0)
    amt_mu = np.empty((2, N_CATEGORIES))
    amt_sd = np.empty((2, N_CATEGORIES))
    int_mu = np.empty((2, N_CATEGORIES))
    int_sd = np.empty((2, N_CATEGORIES))
    for c in MerchantCategory:
        s = CATEGORY_STATS[c]
        amt_mu[:, c] = s.overall_mean, s.fraud_mean
        amt_sd[:, c] = s.overall_std, s.fraud_std
        int_mu[0, c], int_sd[0, c] = intervals.params(c, "overall")
        int_mu[1, c], int_sd[1, c] = intervals.params(c, "fraud")
    amounts = _truncated_normal_array(rng, amt_mu[pop, cats], amt_sd[pop, cats], AMOUNT_FLOOR)
    gaps = _truncated_normal_array(rng, int_mu[pop, cats], int_sd[pop, cats], 0.0)
    start_counts = rng.exponential(card_age_mean, size=n_accounts).astype(int)
    start_clock = rng.uniform(0.0, 1440.0, size=n_accounts)

    gaps = gaps.reshape(n_accounts, txns_per_account)
    clocks = start_clock[:, None] + np.cumsum(gaps, axis=1)
    counts = start_counts[:, None] + np.arange(txns_per_account)[None, :]
    members = list(MerchantCategory)
    txns = [
        Transaction(
            account_id=f"acct{i // txns_per_account:06d}",
            timestamp=round(float(clocks.flat[i]), 6),
            category=members[cats[i]],
            amount=float(amounts[i]),
            interval_since_prev=float(gaps.flat[i]),
            card_txn_count=int(counts.flat[i]),
            is_fraud=bool(fraud[i]),
        )
        for i in range(n)
    ]
    return TransactionSet(txns, provenance="synthetic")


# Raw spellings seen in public card-fraud dumps, mapped onto the enumeration.
DEFAULT_ALIASES: dict[str, str] = {
    **{c.label: c.label for c in MerchantCategory},
    **{c.name.lower(): c.label for c in MerchantCategory},
    "food_dining": "food-dining",
    "food/dining": "food-dining",
    "gas_transport": "gas-transport",
    "gas/transport": "gas-transport",
    "grocery_net": "grocery-online",
    "grocery_pos": "grocery-in-person",
    "health_fitness": "health-fitness",
    "kids_pets": "kids-pets",
    "misc_net": "misc-online",
    "misc_pos": "misc-in-person",
    "personal_care": "personal-care",
    "shopping_net": "shopping-online",
    "shopping_pos": "shopping-in-person",
}

REQUIRED_COLUMNS = ("timestamp", "account", "category", "amount", "label")


class IngestionError(ValueError):
    pass


def _parse_timestamp(raw: str) -> float:
    """Minutes since the Unix epoch; accepts numbers (already minutes) or ISO datetimes."""
    try:
        return float(raw)
    except ValueError:
        pass
    from datetime import datetime, timezone

    dt = datetime.fromisoformat(raw.strip())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp() / 60.0


def _parse_label(raw: str) -> bool:
    s = raw.strip().lower()
    if s in ("1", "true", "yes", "fraud", "1.0"):
        return True
    if s in ("0", "false", "no", "legit", "0.0", ""):
        return False
    raise ValueError(f"cannot interpret label {raw!r}")


def load_dataset(
    path: str | os.PathLike,
    column_map: Mapping[str, str],
    aliases: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> TransactionSet:
    """Read a delimited file with a header row into a :class:`TransactionSet`.

    ``column_map`` maps each of the logical fields ``timestamp, account,
    category, amount, label`` to a header name in the file. Intervals and card
    counts are recomputed per account in time order.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset not found: {path}")
    missing = [k for k in REQUIRED_COLUMNS if k not in column_map]
    if missing:
        raise IngestionError(f"column_map lacks logical field(s): {', '.join(missing)}")
    table = {k.lower(): v for k, v in (aliases if aliases is not None else DEFAULT_ALIASES).items()}

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        absent = [column_map[k] for k in REQUIRED_COLUMNS if column_map[k] not in header]
        if absent:
            raise IngestionError(f"missing column(s) in {path}: {', '.join(absent)}")
        # row numbers are 1-based data rows (header excluded)
        for rowno, rec in enumerate(reader, start=1):
            raw_cat = rec[column_map["category"]]
            label = table.get(raw_cat.strip().lower())
            if label is None:
                raise IngestionError(f"row {rowno}: unmappable category value {raw_cat!r}")
            try:
                cat = MerchantCategory.from_label(label)
                ts = _parse_timestamp(rec[column_map["timestamp"]])
                amount = float(rec[column_map["amount"]])
                fraud = _parse_label(rec[column_map["label"]])
            except (KeyError, ValueError) as exc:
                raise IngestionError(f"row {rowno}: {exc}") from exc
            rows.append((rec[column_map["account"]], ts, rowno, cat, amount, fraud))

    # stable per-account time order; ties keep file order
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    txns: list[Transaction] = []
    prev_account, prev_ts, count = None, 0.0, 0
    for account, ts, _, cat, amount, fraud in rows:
        if account != prev_account:
            prev_account, prev_ts, count = account, ts, 0
        txns.append(
            Transaction(account, ts, cat, max(amount, AMOUNT_FLOOR), ts - prev_ts, count, fraud)
        )
        prev_ts = ts
        count += 1
    return TransactionSet(txns, provenance="ingested")


EXPORT_HEADER = (
    "account",
    "timestamp",
    "category",
    "amount",
    "interval_since_prev",
    "card_txn_count",
    "label",
)


def export_dataset(ts: TransactionSet, path: str | os.PathLike, delimiter: str = ",") -> None:
    """Write ``ts`` in the ingestion format (``column_map`` = identity on EXPORT_HEADER names)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(EXPORT_HEADER)
        for t in ts:
            w.writerow(
                [
                    t.account_id,
                    repr(float(t.timestamp)),
                    t.category.label,
                    repr(float(t.amount)),
                    repr(float(t.interval_since_prev)),
                    t.card_txn_count,
                    int(t.is_fraud),
                ]
            )


def split_by_account(
    ts: TransactionSet, test_fraction: float, rng: np.random.Generator
) -> tuple[TransactionSet, TransactionSet]:
    accounts = sorted({t.account_id for t in ts})
    n_test = max(1, int(round(test_fraction * len(accounts))))
    test_accounts = set(rng.choice(accounts, size=n_test, replace=False).tolist())
    train = [t for t in ts if t.account_id not in test_accounts]
    test = [t for t in ts if t.account_id in test_accounts]
    return TransactionSet(train, ts.provenance), TransactionSet(test, ts.provenance)


def concat(sets: Iterable[TransactionSet]) -> TransactionSet:
    sets = list(sets)
    out: list[Transaction] = []
    for s in sets:
        out.extend(s.transactions)
    return TransactionSet(out, sets[0].provenance if sets else "synthetic")


def fraud_portion_sum() -> float:
    return math.fsum(s.fraud_portion for s in CATEGORY_STATS.values())


__all__: Sequence[str] = [
    "AMOUNT_FLOOR",
    "CATEGORY_STATS",
    "CategoryStats",
    "DEFAULT_ALIASES",
    "IngestionError",
    "IntervalStats",
    "MerchantCategory",
    "N_CATEGORIES",
    "Transaction",
    "TransactionSet",
    "category_stats",
    "export_dataset",
    "generate_dataset",
    "load_dataset",
    "portions",
    "sample_transaction",
    "split_by_account",
]
