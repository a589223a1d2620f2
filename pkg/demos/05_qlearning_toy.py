"""Tabular Q-learning against value iteration on a three-state MDP."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from mdp import deterministic_three_state, value_iteration  # noqa: E402

from astfraud.qlearn import TrainConfig, train  # noqa: E402

mdp = deterministic_three_state()
oracle = value_iteration(mdp)
q, series = train(lambda: mdp, TrainConfig(episodes=30_000, epsilon=1.0, alpha_schedule="visit",
                                           seed=0, checkpoint_stride=3000))
np.set_printoptions(suppress=True)
learned = q.as_array(range(mdp.n_states))
print("value iteration\n", oracle.round(4))
print("q-learning\n", learned.round(4))
print(f"max error {np.abs(learned - oracle).max():.2e}\n")
for ep, norm in zip(series.episodes, series.norms):
    print(f"  episode {ep:>6}  |dQ| {norm:.5f}")
