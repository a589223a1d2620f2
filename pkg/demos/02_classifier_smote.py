"""Rebalance with SMOTE, train the logistic classifier, and score held-out cards."""

import numpy as np

from astfraud import classifier as clf
from astfraud.data import IntervalStats, generate_dataset, split_by_account

full = generate_dataset(np.random.default_rng(0), 400, 100, 0.004, IntervalStats())
train, test = split_by_account(full, 0.3, np.random.default_rng(1))

balanced, lineage = clf.smote_rebalance(np.random.default_rng(2), train, return_lineage=True)
print(f"fraud fraction {train.fraud_fraction:.4f} -> {balanced.fraud_fraction:.4f} "
      f"({len(lineage)} interpolated rows)")

rec = lineage[0]
a, b, s = train[rec.parent_a], train[rec.parent_b], balanced[rec.index]
print(f"example: {a.amount:.2f} + {rec.t:.3f} * ({b.amount:.2f} - {a.amount:.2f}) = {s.amount:.2f}")

model = clf.train(balanced, lr=0.1, epochs=500)
m = clf.evaluate(model, test)
print(f"\naccuracy {m.accuracy:.4f}  decline rate {m.decline_rate:.4f}  "
      f"uncaught rate {m.uncaught_fraud_rate:.4f}  uncaught fraction of fraud {m.uncaught_fraction_of_fraud:.3f}")
