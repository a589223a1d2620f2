"""Command line entry point: ``astfraud <verb> --config ... --seed ... --out ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import classifier as clf
from .experiment import (
    ConfigError,
    DataSourceError,
    RunReport,
    emit_report,
    extract_paths,
    load_artifacts,
    load_config,
    machine_text,
    read_report,
    render_human,
    run_ast,
    run_experiment,
    serialize_config,
    train_classifier,
)
from .qlearn import save_qtable

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IO = 4


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def _progress(episodes: int):
    def report(ep: int) -> None:
        if ep % max(episodes // 10, 1) == 0:
            print(f"  q-learning: {ep}/{episodes} episodes", file=sys.stderr)
    return report


def cmd_train_classifier(args) -> int:
    cfg = _config(args)
    model, metrics = train_classifier(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    clf.save_model(model, out / "model.txt")
    (out / "metrics.json").write_text(json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(serialize_config(cfg))
    print(json.dumps(metrics.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run_ast(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    model_path = out / "model.txt"
    if model_path.exists():
        model = clf.load_model(model_path)
    else:
        model, metrics = train_classifier(cfg)
        out.mkdir(parents=True, exist_ok=True)
        clf.save_model(model, model_path)
        (out / "metrics.json").write_text(json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n")
    q, series = run_ast(cfg, model, _progress(cfg.train.episodes))
    out.mkdir(parents=True, exist_ok=True)
    save_qtable(q, out / "qtable.txt")
    (out / "convergence.csv").write_text(series.to_text())
    (out / "config.json").write_text(serialize_config(cfg))
    print(f"wrote {out / 'qtable.txt'} and {out / 'convergence.csv'} "
          f"(last-decile/peak {series.last_decile_ratio():.4f})")
    return EXIT_OK


def cmd_extract_path(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    model, q = load_artifacts(out)
    if q is None:
        raise FileNotFoundError(f"{out / 'qtable.txt'} not found; run `run-ast` first")
    paths = extract_paths(cfg, model, q)
    doc = [p.as_dict() for p in paths]
    (out / "paths.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(render_human(RunReport(cfg.name, cfg.seed, None, paths, None, "", {})), end="")
    return EXIT_OK


def _assemble(out: Path, cfg) -> RunReport:
    from .qlearn import ConvergenceSeries, FraudPath

    metrics = None
    if (out / "metrics.json").exists():
        m = json.loads((out / "metrics.json").read_text())
        metrics = clf.Metrics(m["accuracy"], m["decline_rate"], m["uncaught_fraud_rate"],
                              m["uncaught_fraction_of_fraud"], m["n"])
    paths = []
    if (out / "paths.json").exists():
        paths = [FraudPath.from_dict(d) for d in json.loads((out / "paths.json").read_text())]
    conv = None
    if (out / "convergence.csv").exists():
        conv = ConvergenceSeries.from_text((out / "convergence.csv").read_text(), cfg.train.checkpoint_stride)
    from .experiment import config_to_dict

    return RunReport(cfg.name, cfg.seed, metrics, paths, conv, "convergence.csv", config_to_dict(cfg))


def cmd_report(args) -> int:
    out = Path(args.out) if args.out else None
    if args.config is None and out is not None and (out / "report.json").exists():
        report = read_report(out / "report.json")
    else:
        if args.config is None:
            raise ConfigError("--config", "required unless --out holds a report.json")
        cfg = _config(args)
        out = Path(cfg.output_dir)
        report = _assemble(out, cfg)
    if args.format == "machine":
        emit_report(report, out, "machine")
        print(machine_text(report), end="")
    else:
        emit_report(report, out, "human")
        print(render_human(report), end="")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_experiment(cfg, write=True, progress=_progress(cfg.train.episodes))
    if args.format == "machine":
        print(machine_text(report), end="")
    else:
        print(render_human(report), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="astfraud", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="config file, or a shipped name: paper-defaults, experiment1, experiment2")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the config output directory")
        sp.add_argument("--format", choices=("human", "machine"), default="human")

    for name, fn, helptext in (
        ("train-classifier", cmd_train_classifier, "train and evaluate the fraud classifier"),
        ("run-ast", cmd_run_ast, "run AST Q-learning (trains the classifier if none is saved)"),
        ("extract-path", cmd_extract_path, "greedy most-likely fraud path per card age"),
        ("run", cmd_run, "full pipeline: classifier, Q-learning, paths, reports"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("report", help="render the report of a run directory")
    common(sp, config_required=False)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataSourceError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
