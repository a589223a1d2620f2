"""Generate a synthetic card-transaction set and look at how fraud differs from normal use."""

import numpy as np

from astfraud.data import IntervalStats, MerchantCategory, generate_dataset, split_by_account

rng = np.random.default_rng(0)
ts = generate_dataset(rng, n_accounts=300, txns_per_account=100, fraud_rate=0.004,
                      intervals=IntervalStats())
train, test = split_by_account(ts, 0.3, np.random.default_rng(1))
print(f"{len(ts)} transactions, fraud fraction {ts.fraud_fraction:.4f}")
print(f"train {len(train)} / test {len(test)} (split by account)\n")

labels = ts.labels
amounts = np.array([t.amount for t in ts])
intervals = np.array([t.interval_since_prev for t in ts])
cats = np.array([int(t.category) for t in ts])
for name, mask in (("normal", labels == 0), ("fraud", labels == 1)):
    print(f"{name:>6}: mean amount {amounts[mask].mean():8.2f}  mean interval {intervals[mask].mean():7.1f} min")

print("\nmost common fraud categories:")
counts = np.bincount(cats[labels == 1], minlength=len(MerchantCategory))
for c in np.argsort(counts)[::-1][:4]:
    print(f"  {MerchantCategory(c).label:<20} {counts[c]}")
