"""Config-driven pipeline: classifier, AST training, path extraction and reports."""

from __future__ import annotations

import dataclasses
import json
import os
import time
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import classifier as clf
from .data import (
    IntervalStats,
    MerchantCategory,
    TransactionSet,
    generate_dataset,
    load_dataset,
    split_by_account,
)
from .detection import RuleSet
from .env import ActionGrid, EnvConfig, FraudEnv, LikelihoodModel
from .qlearn import (
    ConvergenceSeries,
    FraudPath,
    QTable,
    TrainConfig,
    extract_path,
    load_qtable,
    save_qtable,
    train,
)

REPORT_FORMAT = "astfraud-report"
REPORT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


class DataSourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticSource:
    n_accounts: int = 1000
    txns_per_account: int = 100
    fraud_rate: float = 0.004
    card_age_mean: float = 390.0
    test_fraction: float = 0.3


@dataclass(frozen=True)
class IngestSource:
    train_path: str = ""
    test_path: str = ""
    delimiter: str = ","
    column_map: dict = field(default_factory=lambda: {
        "timestamp": "timestamp", "account": "account", "category": "category",
        "amount": "amount", "label": "label",
    })
    aliases: dict = field(default_factory=dict)


@dataclass(frozen=True)
class IntervalConfig:
    overall_mean: float = 240.0
    overall_std: float = 120.0
    fraud_mean: float = 30.0
    fraud_std: float = 20.0
    overall_overrides: dict = field(default_factory=dict)
    fraud_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    synthetic: SyntheticSource = field(default_factory=SyntheticSource)
    ingest: IngestSource = field(default_factory=IngestSource)
    intervals: IntervalConfig = field(default_factory=IntervalConfig)


@dataclass(frozen=True)
class SmoteConfig:
    duplicate_to: float = 0.10
    synthesize_to: float = 1.0 / 3.0
    k: int = 5


@dataclass(frozen=True)
class ClassifierConfig:
    lr: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    threshold: float = 0.5
    smote: SmoteConfig = field(default_factory=SmoteConfig)


@dataclass(frozen=True)
class RulesConfig:
    daily_limit: int = 10
    repetition_rule_enabled: bool = False
    repetition_window: int = 5
    repetition_tolerance: float = 0.0


@dataclass(frozen=True)
class LikelihoodConfig:
    card_rate: float = 1.0 / 390.0
    amount_population: str = "overall"
    interval_population: str = "fraud"


@dataclass(frozen=True)
class GridConfig:
    card_ages: tuple = (10, 500)
    categories: tuple = ("entertainment", "shopping-online", "shopping-in-person")
    amounts: tuple = (10.0, 100.0, 1000.0)
    intervals: tuple = (1.0, 50.0, 150.0)


@dataclass(frozen=True)
class EnvSection:
    daily_gamma: float = 0.2
    caught_penalty: float = 10_000.0
    state_space: str = "markov"


@dataclass(frozen=True)
class TrainSection:
    episodes: int = 200_000
    alpha: float = 1.0
    epsilon: float = 0.5
    objective: str = "max"
    alpha_schedule: str = "constant"
    checkpoint_stride: int = 1_000
    q_init: float = 10_000.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    output_dir: str = "runs/experiment"
    data: DataConfig = field(default_factory=DataConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    rules: RulesConfig = field(default_factory=RulesConfig)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    env: EnvSection = field(default_factory=EnvSection)
    train: TrainSection = field(default_factory=TrainSection)

    # builders for the library objects

    def interval_stats(self) -> IntervalStats:
        iv = self.data.intervals
        return IntervalStats(
            iv.overall_mean, iv.overall_std, iv.fraud_mean, iv.fraud_std,
            {k: tuple(v) for k, v in iv.overall_overrides.items()},
            {k: tuple(v) for k, v in iv.fraud_overrides.items()},
        )

    def rule_set(self) -> RuleSet:
        return RuleSet(**dataclasses.asdict(self.rules))

    def action_grid(self) -> ActionGrid:
        g = self.grid
        return ActionGrid(
            tuple(int(x) for x in g.card_ages),
            tuple(MerchantCategory.from_label(c) for c in g.categories),
            tuple(float(x) for x in g.amounts),
            tuple(float(x) for x in g.intervals),
        )

    def likelihood_model(self) -> LikelihoodModel:
        lk = self.likelihood
        return LikelihoodModel(
            self.action_grid(), lk.card_rate, lk.amount_population,
            self.interval_stats(), lk.interval_population,
        )

    def env_config(self) -> EnvConfig:
        return EnvConfig(**dataclasses.asdict(self.env))

    def train_config(self) -> TrainConfig:
        fields = dataclasses.asdict(self.train)
        fields.pop("q_init")
        return TrainConfig(seed=self.seed, **fields)

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if output_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(output_dir))
        return cfg


# --- parsing -----------------------------------------------------------------


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(where, f"expected an object, got {type(value).__name__}")
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {value!r}")
        return value
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(where, f"expected a list, got {value!r}")
        return tuple(value)
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(where, f"expected an object, got {value!r}")
        return dict(value)
    return value


def _build(cls, raw: dict, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in raw:
            path = f"{where}.{f.name}" if where else f.name
            kwargs[f.name] = _convert(hints[f.name], raw[f.name], path)
    return cls(**kwargs)


def _check(cond: bool, where: str, reason: str) -> None:
    if not cond:
        raise ConfigError(where, reason)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Semantic checks; raises :class:`ConfigError` naming the offending field."""
    d = cfg.data
    _check(d.source in ("synthetic", "ingest"), "data.source", "must be 'synthetic' or 'ingest'")
    s = d.synthetic
    _check(s.n_accounts > 0, "data.synthetic.n_accounts", "must be positive")
    _check(s.txns_per_account > 0, "data.synthetic.txns_per_account", "must be positive")
    _check(0.0 < s.fraud_rate < 1.0, "data.synthetic.fraud_rate", "must lie in (0, 1)")
    _check(0.0 < s.test_fraction < 1.0, "data.synthetic.test_fraction", "must lie in (0, 1)")
    if d.source == "ingest":
        _check(bool(d.ingest.train_path), "data.ingest.train_path", "required when data.source is 'ingest'")
        for key in ("timestamp", "account", "category", "amount", "label"):
            _check(key in d.ingest.column_map, f"data.ingest.column_map.{key}", "missing logical field")
    for name in ("overall_std", "fraud_std"):
        _check(getattr(d.intervals, name) > 0, f"data.intervals.{name}", "must be positive")
    c = cfg.classifier
    _check(c.lr > 0, "classifier.lr", "must be positive")
    _check(c.epochs >= 1, "classifier.epochs", "must be >= 1")
    _check(c.l2 >= 0, "classifier.l2", "must be >= 0")
    _check(0.0 < c.threshold < 1.0, "classifier.threshold", "must lie in (0, 1)")
    _check(0.0 < c.smote.duplicate_to < c.smote.synthesize_to < 1.0, "classifier.smote",
           "need 0 < duplicate_to < synthesize_to < 1")
    _check(c.smote.k >= 1, "classifier.smote.k", "must be >= 1")
    r = cfg.rules
    _check(r.daily_limit >= 1, "rules.daily_limit", "must be >= 1")
    _check(r.repetition_window >= 2, "rules.repetition_window", "must be >= 2")
    _check(r.repetition_tolerance >= 0, "rules.repetition_tolerance", "must be >= 0")
    lk = cfg.likelihood
    _check(lk.card_rate > 0, "likelihood.card_rate", "must be positive")
    _check(lk.amount_population in ("overall", "fraud"), "likelihood.amount_population",
           "must be 'overall' or 'fraud'")
    _check(lk.interval_population in ("overall", "fraud"), "likelihood.interval_population",
           "must be 'overall' or 'fraud'")
    g = cfg.grid
    for name in ("card_ages", "categories", "amounts", "intervals"):
        vals = getattr(g, name)
        _check(len(vals) > 0, f"grid.{name}", "must be non-empty")
        _check(len(set(vals)) == len(vals), f"grid.{name}", "duplicate entries")
    for c_ in g.categories:
        try:
            MerchantCategory.from_label(c_)
        except KeyError:
            raise ConfigError("grid.categories", f"unknown category {c_!r}") from None
    _check(all(a > 0 for a in g.amounts), "grid.amounts", "must be positive")
    _check(all(i >= 0 for i in g.intervals), "grid.intervals", "must be >= 0")
    _check(all(isinstance(a, int) and a >= 0 for a in g.card_ages), "grid.card_ages",
           "must be non-negative integers")
    e = cfg.env
    _check(0.0 < e.daily_gamma <= 1.0, "env.daily_gamma", "must lie in (0, 1]")
    _check(e.caught_penalty >= 0, "env.caught_penalty", "is a magnitude; must be >= 0")
    _check(e.state_space in ("compact", "markov"), "env.state_space", "must be 'compact' or 'markov'")
    _check(np.isfinite(cfg.train.q_init), "train.q_init", "must be finite")
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<document>", "top level must be an object")
    return validate(_build(ExperimentConfig, raw, ""))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    return plain(dataclasses.asdict(cfg))


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


SHIPPED_CONFIGS = ("paper-defaults", "experiment1", "experiment2")


def load_config(name_or_path: str | os.PathLike) -> ExperimentConfig:
    """Read a config file, or one of the shipped names (``experiment1`` ...)."""
    p = Path(name_or_path)
    if not p.exists() and str(name_or_path) in SHIPPED_CONFIGS:
        text = resources.files("astfraud").joinpath("configs", f"{name_or_path}.json").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {name_or_path}: {exc.strerror}") from None
    return parse_config(text)


# --- pipeline ----------------------------------------------------------------


def _rng(cfg: ExperimentConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


def load_data(cfg: ExperimentConfig) -> tuple[TransactionSet, TransactionSet]:
    """(train, test) sets from the configured source."""
    d = cfg.data
    if d.source == "synthetic":
        s = d.synthetic
        full = generate_dataset(_rng(cfg, 0), s.n_accounts, s.txns_per_account, s.fraud_rate,
                                cfg.interval_stats(), s.card_age_mean)
        return split_by_account(full, s.test_fraction, _rng(cfg, 1))
    ing = d.ingest
    aliases = None
    if ing.aliases:
        from .data import DEFAULT_ALIASES

        aliases = {**DEFAULT_ALIASES, **ing.aliases}
    try:
        train_set = load_dataset(ing.train_path, ing.column_map, aliases, ing.delimiter)
        if ing.test_path:
            test_set = load_dataset(ing.test_path, ing.column_map, aliases, ing.delimiter)
        else:
            train_set, test_set = split_by_account(train_set, d.synthetic.test_fraction, _rng(cfg, 1))
    except (OSError, ValueError) as exc:
        raise DataSourceError(str(exc)) from exc
    return train_set, test_set


def train_classifier(cfg: ExperimentConfig) -> tuple[clf.LogisticModel, clf.Metrics]:
    train_set, test_set = load_data(cfg)
    c = cfg.classifier
    balanced = clf.smote_rebalance(_rng(cfg, 2), train_set, c.smote.duplicate_to,
                                   c.smote.synthesize_to, c.smote.k)
    model = clf.train(balanced, c.lr, c.epochs, c.l2, c.threshold)
    return model, clf.evaluate(model, test_set)


def make_env(cfg: ExperimentConfig, model) -> FraudEnv:
    return FraudEnv(model, cfg.rule_set(), cfg.likelihood_model(), cfg.env_config())


def run_ast(cfg: ExperimentConfig, model, progress=None) -> tuple[QTable, ConvergenceSeries]:
    env_factory = lambda: make_env(cfg, model)  # noqa: E731
    q = QTable(env_factory().n_actions, cfg.train.q_init)
    return train(env_factory, cfg.train_config(), q=q, progress=progress)


def extract_paths(cfg: ExperimentConfig, model, q: QTable) -> list[FraudPath]:
    env = make_env(cfg, model)
    return [extract_path(q, env, b, cfg.train.objective) for b in range(len(env.grid.card_ages))]


@dataclass
class RunReport:
    name: str
    seed: int
    metrics: clf.Metrics | None
    paths: list[FraudPath]
    convergence: ConvergenceSeries | None
    convergence_file: str
    config: dict
    timing: dict = field(default_factory=dict)

    def to_machine(self) -> dict:
        """Structured document; excludes timing so fixed-seed runs compare byte for byte."""
        conv = None
        if self.convergence is not None:
            c = self.convergence
            conv = {
                "file": self.convergence_file,
                "stride": c.stride,
                "episodes": list(c.episodes),
                "norms": list(c.norms),
                "peak": max(c.norms) if c.norms else None,
                "last_decile_ratio": c.last_decile_ratio() if c.norms else None,
            }
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "name": self.name,
            "seed": self.seed,
            "metrics": self.metrics.as_dict() if self.metrics else None,
            "paths": [p.as_dict() for p in self.paths],
            "convergence": conv,
            "config": self.config,
        }

    @classmethod
    def from_machine(cls, doc: dict) -> "RunReport":
        if doc.get("format") != REPORT_FORMAT or doc.get("version") != REPORT_VERSION:
            raise ValueError("not a version-1 astfraud report")
        m = doc["metrics"]
        metrics = clf.Metrics(m["accuracy"], m["decline_rate"], m["uncaught_fraud_rate"],
                              m["uncaught_fraction_of_fraud"], m["n"]) if m else None
        conv, conv_file = None, ""
        if doc["convergence"]:
            c = doc["convergence"]
            conv = ConvergenceSeries(c["stride"], list(c["episodes"]), list(c["norms"]))
            conv_file = c["file"]
        return cls(doc["name"], doc["seed"], metrics,
                   [FraudPath.from_dict(p) for p in doc["paths"]], conv, conv_file, doc["config"])


def run_experiment(cfg: ExperimentConfig, write: bool = True, progress=None) -> RunReport:
    """Classifier, Q-learning and path extraction for one config; optionally writes artifacts."""
    validate(cfg)
    t0 = time.perf_counter()
    model, metrics = train_classifier(cfg)
    t1 = time.perf_counter()
    q, series = run_ast(cfg, model, progress)
    t2 = time.perf_counter()
    paths = extract_paths(cfg, model, q)
    report = RunReport(
        cfg.name, cfg.seed, metrics, paths, series, "convergence.csv", config_to_dict(cfg),
        {"classifier_s": t1 - t0, "qlearning_s": t2 - t1, "total_s": time.perf_counter() - t0},
    )
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        clf.save_model(model, out / "model.txt")
        save_qtable(q, out / "qtable.txt")
        (out / "config.json").write_text(serialize_config(cfg))
        emit_report(report, out, "machine")
        emit_report(report, out, "human")
    return report


# --- reports -----------------------------------------------------------------


def _money(x: float) -> str:
    return f"{x:,.0f}" if float(x).is_integer() else f"{x:,.2f}"


def render_table(paths: list[FraudPath]) -> str:
    """Side-by-side path table: one block of (category, amount, interval) columns per card."""
    headers = ["Daily tran"]
    for p in paths:
        tag = f"card age {p.card_age}"
        headers += [f"{tag} category", "$ amount", "int. (min)", "outcome"]
    n = max((len(p.steps) for p in paths), default=0)
    rows = []
    for i in range(n):
        row = [str(i + 1)]
        for p in paths:
            if i < len(p.steps):
                s = p.steps[i]
                row += [s.category, _money(s.amount), f"{s.interval:g}", s.outcome]
            else:
                row += ["", "", "", ""]
        rows.append(row)
    end = ["terminal"]
    for p in paths:
        end += [p.terminal_event, _money(p.total_reward), "", ""]
    rows.append(end)
    widths = [max(len(r[j]) for r in [headers] + rows) for j in range(len(headers))]
    fmt = lambda r: " | ".join(c.rjust(w) if j and r[j][:1].isdigit() else c.ljust(w)
                               for j, (c, w) in enumerate(zip(r, widths)))
    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(headers), rule] + [fmt(r) for r in rows]) + "\n"


def render_human(report: RunReport) -> str:
    lines = [f"experiment: {report.name}  seed: {report.seed}", ""]
    if report.metrics:
        m = report.metrics
        frac = "n/a" if m.uncaught_fraction_of_fraud is None else f"{m.uncaught_fraction_of_fraud:.2%}"
        lines += [
            "classifier (held-out)",
            f"  accuracy             {m.accuracy:.2%}",
            f"  decline rate         {m.decline_rate:.2%}",
            f"  uncaught fraud rate  {m.uncaught_fraud_rate:.3%}",
            f"  uncaught / fraud     {frac}",
            "",
        ]
    if report.convergence is not None and report.convergence.norms:
        c = report.convergence
        lines += [
            f"Q convergence: {len(c.norms)} checkpoints every {c.stride} episodes, "
            f"peak {max(c.norms):.1f}, last-decile/peak {c.last_decile_ratio():.4f} "
            f"({report.convergence_file})",
            "",
        ]
    if report.timing:
        lines += ["timing: " + ", ".join(f"{k} {v:.1f}" for k, v in sorted(report.timing.items())), ""]
    lines.append("most likely fraud path")
    return "\n".join(lines) + "\n" + render_table(report.paths)


def machine_text(report: RunReport) -> str:
    return json.dumps(report.to_machine(), indent=2, sort_keys=True) + "\n"


def emit_report(report: RunReport, out_dir: str | os.PathLike, fmt: str = "human") -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt == "machine":
            (out / "report.json").write_text(machine_text(report))
            written.append(out / "report.json")
            if report.convergence is not None:
                (out / report.convergence_file).write_text(report.convergence.to_text())
                written.append(out / report.convergence_file)
            if report.timing:
                (out / "timing.json").write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n")
                written.append(out / "timing.json")
        elif fmt == "human":
            (out / "report.txt").write_text(render_human(report))
            written.append(out / "report.txt")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc.strerror or exc}") from exc
    return written


def read_report(path: str | os.PathLike) -> RunReport:
    return RunReport.from_machine(json.loads(Path(path).read_text()))


def load_artifacts(out_dir: str | os.PathLike) -> tuple[clf.LogisticModel, QTable | None]:
    out = Path(out_dir)
    model = clf.load_model(out / "model.txt")
    q = load_qtable(out / "qtable.txt") if (out / "qtable.txt").exists() else None
    return model, q

