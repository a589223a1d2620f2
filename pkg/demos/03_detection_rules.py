"""The issuer's authorize loop: classifier first, then the repetition and daily-limit rules."""

from astfraud.data import MerchantCategory, Transaction
from astfraud.detection import RuleSet, SystemState, authorize


class Threshold:
    """Stand-in classifier that flags anything over $500."""

    threshold = 0.5

    def proba(self, txn):
        return 0.9 if txn.amount > 500 else 0.1


def attempt(amounts, rules):
    state = SystemState()
    for i, amount in enumerate(amounts, 1):
        txn = Transaction("card", 0.0, MerchantCategory.SHOPPING_ONLINE, amount, 50.0, 10, True)
        decision, state = authorize(state, txn, Threshold(), rules)
        print(f"  {i:>2}  ${amount:>7,.0f}  {decision.outcome.name}")
        if decision.outcome.suspended:
            break


print("twelve $100 purchases, baseline rules")
attempt([100.0] * 12, RuleSet())
print("\nsame, with the repetition rule (window 5)")
attempt([100.0] * 12, RuleSet(repetition_rule_enabled=True))
print("\na $1,000 purchase")
attempt([100.0, 1000.0], RuleSet())
