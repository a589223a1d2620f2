"""Adaptive stress testing of a payment-card fraud detection system.

A fraud classifier trained on transaction data is wrapped with business rules,
and a tabular Q-learning adversary searches for the most likely way to defraud it.
"""

from .data import MerchantCategory, Transaction, TransactionSet, category_stats, generate_dataset, load_dataset
from .classifier import LogisticModel, Metrics, evaluate, predict_proba, smote_rebalance, train
from .detection import Decision, Outcome, RuleSet, SystemState, authorize
from .env import ActionGrid, AstAction, AstState, EnvConfig, Event, FraudEnv, LikelihoodModel, action_log_prob, discount_factor
from .qlearn import ConvergenceSeries, FraudPath, QTable, TrainConfig, extract_path, frobenius_delta, q_update, select_action
from .experiment import ExperimentConfig, RunReport, load_config, run_experiment

__version__ = "0.1.0"
