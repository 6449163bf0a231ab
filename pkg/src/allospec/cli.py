"""Command-line entry point.

Exit codes: 0 on success, 1 on configuration or validation errors, 2 on
numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import __version__
from .bounds import Constants, bound_report
from .experiments import (
    CLUSTER_COLUMNS,
    DAVIS_KAHAN_COLUMNS,
    OPNORM_COLUMNS,
    SUBGAUSSIAN_COLUMNS,
    TAIL_COLUMNS,
    ConfigError,
    ExperimentConfig,
    _spectrum,
    apply_overrides,
    calibrate,
    config_from_dict,
    load_config,
    rows_to_csv,
    run_davis_kahan_check,
    run_misclassification,
    run_opnorm,
    run_recovery,
    run_subgaussian_check,
    write_results,
)
from .fileio import atomic_write
from .model import TOL_FILE, AllometricModel, ModelSpec, build_model, model_from_dict, model_to_json
from .model import validate_model
from .numerics import NumericalError

__all__ = ["main"]

_EXPERIMENTS = {
    "simulate": (run_misclassification, CLUSTER_COLUMNS, "misclassification"),
    "sweep-recovery": (run_recovery, CLUSTER_COLUMNS, "recovery"),
    "opnorm": (run_opnorm, OPNORM_COLUMNS, "opnorm"),
    "subgaussian": (run_subgaussian_check, SUBGAUSSIAN_COLUMNS, "subgaussian"),
    "davis-kahan": (run_davis_kahan_check, DAVIS_KAHAN_COLUMNS, "davis_kahan"),
}


def _read_json(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno,
                          source=path) from None


def _load_model(path: str) -> tuple[AllometricModel, bool]:
    """Model from either a matrix JSON file or a spectral spec (explicit lists
    or ``{"lead", "tail"}`` profiles); the flag is True for matrix files
    (validated at the looser file tolerance)."""
    d = _read_json(path)
    if not isinstance(d, dict):
        raise ConfigError("expected a JSON object", source=path)
    if "sigma1" in d:
        return model_from_dict(d), True
    return build_model(_spec_from_dict(d)), False


def _spec_from_dict(d: dict) -> ModelSpec:
    if isinstance(d.get("n"), int):
        # spectrum profiles expand against the stated dimension
        d = dict(d)
        for key in ("eigvals1", "eigvals2"):
            if isinstance(d.get(key), dict):
                d[key] = _spectrum(d[key], d["n"], key)
    return ModelSpec.from_dict(d)


def _emit(text: str, output: str | None) -> None:
    if output:
        atomic_write(output, text)
    else:
        sys.stdout.write(text)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="allospec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, metavar="PATH")
        sp.add_argument("--output", metavar="PATH", help="output file (default: stdout)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (dotted keys, JSON values); repeatable")

    sp = sub.add_parser("build-model", help="build a model from a spectral spec")
    common(sp, config_required=True)

    sp = sub.add_parser("validate-model", help="check the model invariants")
    common(sp, config_required=True)

    sp = sub.add_parser("bounds", help="evaluate every bound for a model")
    common(sp, config_required=True)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--n", type=_positive_int, default=None, help="dimension (default: model n)")
    sp.add_argument("--m", type=_positive_int, default=1000, help="sample size")
    sp.add_argument("--u", type=float, default=None, help="concentration parameter (default: n)")

    for name, help_text in (
        ("simulate", "misclassification experiment"),
        ("sweep-recovery", "exact-recovery sweep"),
        ("opnorm", "operator-norm concentration quantiles"),
        ("subgaussian", "sub-gaussian constant check"),
        ("davis-kahan", "per-replication eigenvector perturbation check"),
        ("calibrate", "empirical values of the absolute constants"),
    ):
        sp = sub.add_parser(name, help=help_text)
        common(sp)
        sp.add_argument("--seed", type=_u64, default=None)
        sp.add_argument("--workers", type=_positive_int, default=None,
                        help="worker processes (fallback: ALLOSPEC_WORKERS, then config)")
    return p


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config, args.set)
    else:
        cfg = config_from_dict(apply_overrides({}, args.set), source="--set")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    workers = args.workers
    if workers is None and os.environ.get("ALLOSPEC_WORKERS"):
        raw = os.environ["ALLOSPEC_WORKERS"]
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"ALLOSPEC_WORKERS must be an integer, got {raw!r}") from None
        if workers < 1:
            raise ConfigError("ALLOSPEC_WORKERS must be >= 1")
    if workers is not None:
        cfg = replace(cfg, workers=workers)
    return cfg


def _constants_from_set(items) -> Constants:
    d = apply_overrides({}, items)
    unknown = set(d) - {"constants"}
    if unknown:
        raise ConfigError(f"only constants.* can be set here, got {', '.join(sorted(unknown))}",
                          source="--set")
    return Constants.from_dict(d.get("constants", {}))


def _run(args) -> int:
    cmd = args.command
    if cmd == "build-model":
        d = _read_json(args.config)
        if args.set:
            d = apply_overrides(d, args.set)
        model = build_model(_spec_from_dict(d))
        _emit(model_to_json(model) + "\n", args.output)
        return 0
    if cmd == "validate-model":
        model, from_file = _load_model(args.config)
        report = validate_model(model, TOL_FILE) if from_file else validate_model(model)
        _emit(json.dumps(report.to_dict(), indent=2) + "\n", args.output)
        if not report.passed:
            for c in report.failures():
                print(f"error: {c.name}: {c.message} (slack {c.slack:.3e})", file=sys.stderr)
            return 1
        return 0
    if cmd == "bounds":
        model, _ = _load_model(args.config)
        k = _constants_from_set(args.set)
        n = model.n if args.n is None else args.n
        rep = bound_report(args.m, n, model, alpha=args.alpha, epsilon=args.epsilon, u=args.u, k=k)
        _emit(json.dumps(rep.to_dict(), indent=2) + "\n", args.output)
        return 0

    cfg = _experiment_config(args)
    if cmd == "calibrate":
        res = calibrate(cfg)
        text = json.dumps(res.constants.to_dict(), indent=2) + "\n"
        if args.output:
            write_results(res.opnorm_rows, OPNORM_COLUMNS, args.output, cfg, "calibrate",
                          extra={"calibrated_constants": res.constants.to_dict(),
                                 "norm_tail_csv": rows_to_csv(res.tail_rows, TAIL_COLUMNS)})
        sys.stdout.write(text)
        return 0
    fn, columns, kind = _EXPERIMENTS[cmd]
    rows = fn(cfg)
    if args.output:
        write_results(rows, columns, args.output, cfg, kind)
    else:
        sys.stdout.write(rows_to_csv(rows, columns))
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
