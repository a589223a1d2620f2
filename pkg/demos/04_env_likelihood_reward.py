"""Action likelihoods over the 54-action grid and the three reward cases of one episode."""

import numpy as np

from astfraud.data import MerchantCategory
from astfraud.env import AstAction, FraudEnv, LikelihoodModel, discount_factor

lm = LikelihoodModel()
table = lm.log_prob_table()
print(f"grid {table.shape}, total probability {np.exp(table).sum():.12f}")
print(f"card age pmf {lm.card_age_pmf().round(5)}  (ages {lm.grid.card_ages})")
best = np.unravel_index(table.argmax(), table.shape)
print(f"most likely action: {lm.grid.action(int(best[0]), int(best[1]))}\n")

for minutes in (1, 50, 150, 1440):
    print(f"discount after {minutes:>4} min: {discount_factor(minutes):.6f}")


class Never:
    threshold = 0.5

    def proba(self, txn):
        return 0.0


env = FraudEnv(Never())
state = env.reset(0)
print("\nten shopping-online $100 purchases on a new card")
for _ in range(10):
    tr = env.step(state, AstAction(0, MerchantCategory.SHOPPING_ONLINE, 100.0, 50.0))
    print(f"  {tr.event.name:<8} reward {tr.reward:10.4f}")
    state = tr.next_state
