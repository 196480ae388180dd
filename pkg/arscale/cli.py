# arscale/cli.py
# Command-line surface. Every subcommand maps onto library calls; nothing is
# computed here that the services do not expose.
#
# Exit codes: 0 success, 1 usage error or bad input, 2 failing property suite.

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from arscale.core.config import settings
from arscale.core.errors import ArscaleError, InsufficientDataError, ModelValidationError, UsageError
from arscale.core.models import (
    ARModel,
    EstimatorConfig,
    EstimatorKind,
    GroundTruthSpec,
    InitMode,
    NoiseFamily,
    NoiseSpec,
    RangeMode,
    SweepSpec,
)
from arscale.services.estimators import attach_certificates, fit, ols
from arscale.services.ground_truth import generate_ground_truth
from arscale.services.harness import run_sweep
from arscale.services.operators import diagnose
from arscale.services.plotting import export_plot
from arscale.services.presets import get_preset
from arscale.services.property_suite import format_table, run_property_suite
from arscale.services.scaling import fit_slope
from arscale.services.simulator import simulate
from arscale.storage.files import (
    export_csv,
    export_dataset_csv,
    import_dataset_csv,
    load_dataset,
    load_model,
    read_csv,
    save_blocks,
    save_dataset,
    save_model,
    write_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2

# Built-in defaults; a --config JSON file overrides these, flags override both
DEFAULTS: Dict[str, Any] = {
    "p": 2,
    "d": 2,
    "alpha": settings.GROUND_TRUTH_ALPHA,
    "rank": None,
    "truth_seed": 0,
    "N": 1,
    "T": 100,
    "seed": 0,
    "noise_family": NoiseFamily.GAUSSIAN.value,
    "sigma": 1.0,
    "p_prime": None,
    "estimator": EstimatorKind.OLS.value,
    "D": settings.DEFAULT_D,
    "r": None,
    "lam": 0.0,
    "step": None,
    "iters": settings.FIT_MAX_ITERS,
    "tol": settings.FIT_TOL,
    "range_mode": RangeMode.FULL.value,
    "init": InitMode.ZEROS.value,
    "init_seed": 0,
    "project_ball": False,
    "workers": settings.SWEEP_WORKERS,
    "x": "beta/gamma",
    "series": "pdN",
    "title": None,
}


class ArscaleParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so the caller owns the exit code."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _emit(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    sys.stdout.flush()


def _resolve(args: argparse.Namespace, config: Dict[str, Any], name: str) -> Any:
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return DEFAULTS.get(name)


def _load_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    # Accept the SweepSpec / EstimatorConfig spelling too
    if "lambda" in data and "lam" not in data:
        data["lam"] = data.pop("lambda")
    return data


def _model_from_args(args: argparse.Namespace, config: Dict[str, Any]) -> ARModel:
    model_path = _resolve(args, config, "model")
    if model_path:
        return load_model(model_path)
    spec = GroundTruthSpec(
        p=_resolve(args, config, "p"),
        d=_resolve(args, config, "d"),
        alpha=_resolve(args, config, "alpha"),
        rank=_resolve(args, config, "rank"),
        seed=_resolve(args, config, "truth_seed"),
        sigma=_resolve(args, config, "sigma"),
    )
    if getattr(args, "zero", False):
        return ARModel.zeros(spec.p, spec.d, sigma=spec.sigma)
    return generate_ground_truth(spec)


# ==================== SUBCOMMANDS ====================

def cmd_simulate(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    model = _model_from_args(args, config)
    noise = NoiseSpec(family=_resolve(args, config, "noise_family"), sigma=_resolve(args, config, "sigma"))
    N, T, seed = _resolve(args, config, "N"), _resolve(args, config, "T"), _resolve(args, config, "seed")
    dataset, _ = simulate(model, noise, N, T, seed)

    out = _resolve(args, config, "out")
    if not out:
        raise UsageError("simulate requires --out STEM")
    stem = save_dataset(dataset, out)
    payload: Dict[str, Any] = {"dataset": f"{stem}.npy", "metadata": f"{stem}.json",
                               "N": N, "T": T, "d": model.d, "p": model.p, "seed": seed}
    csv_path = _resolve(args, config, "csv")
    if csv_path:
        payload["csv"] = str(export_dataset_csv(dataset, csv_path))
    model_out = _resolve(args, config, "model_out")
    if model_out:
        payload["model"] = str(save_model(model, model_out))
    _emit(payload)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    model = _model_from_args(args, config)
    diagnostics = diagnose(model, _resolve(args, config, "T"), _resolve(args, config, "p_prime"))
    _emit(diagnostics.public_dict())
    return EXIT_OK


def cmd_fit(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    data = _resolve(args, config, "data")
    if not data:
        raise UsageError("fit requires --data STEM")
    # Long-format CSV exports are accepted as well as .npy containers
    dataset = import_dataset_csv(data) if Path(data).suffix == ".csv" else load_dataset(data)
    p_prime = _resolve(args, config, "p_prime") or 1
    cfg = EstimatorConfig(
        kind=_resolve(args, config, "estimator"),
        p_student=p_prime,
        D=_resolve(args, config, "D"),
        r=_resolve(args, config, "r"),
        lam=_resolve(args, config, "lam"),
        step_size=_resolve(args, config, "step"),
        max_iters=_resolve(args, config, "iters"),
        tol=_resolve(args, config, "tol"),
        loss_range=_resolve(args, config, "range_mode"),
        init=_resolve(args, config, "init"),
        init_seed=_resolve(args, config, "init_seed"),
        project_ball=bool(_resolve(args, config, "project_ball")),
    )
    report = fit(dataset, cfg)

    truth_path = _resolve(args, config, "truth")
    truth = load_model(truth_path) if truth_path else None
    reference = ols(dataset, p_prime, cfg.loss_range) if cfg.kind != EstimatorKind.OLS else None
    report = attach_certificates(report, dataset, truth=truth, reference=reference, range_mode=cfg.loss_range)

    summary = report.summary()
    blocks_out = _resolve(args, config, "blocks_out")
    if blocks_out:
        summary["blocks_file"] = str(save_blocks(report.blocks, blocks_out))
    report_out = _resolve(args, config, "report")
    if report_out:
        write_json(report_out, summary)
    _emit(summary)
    return EXIT_OK


def _sweep_spec(args: argparse.Namespace, config: Dict[str, Any]) -> SweepSpec:
    preset = _resolve(args, config, "preset")
    spec_path = _resolve(args, config, "spec")
    if preset and spec_path:
        raise UsageError("use either --preset or --spec, not both")
    if preset:
        try:
            return get_preset(preset)
        except ValueError as e:
            raise UsageError(str(e))
    if spec_path:
        return SweepSpec.model_validate_json(Path(spec_path).read_text())
    if "sweep" in config:
        return SweepSpec.model_validate(config["sweep"])
    raise UsageError("sweep requires --preset NAME or --spec FILE")


def cmd_sweep(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    spec = _sweep_spec(args, config)
    out = _resolve(args, config, "out")
    if not out:
        raise UsageError("sweep requires --out CSV")
    workers = _resolve(args, config, "workers")
    if workers < 1:
        raise UsageError(f"--workers must be >= 1, got {workers}")
    if _resolve(args, config, "record_runtime"):
        # Workers are separate processes and read their settings from the environment
        os.environ["ARSCALE_RECORD_RUNTIME"] = "true"
        settings.RECORD_RUNTIME = True

    table = run_sweep(spec, workers=workers)
    payload: Dict[str, Any] = {"csv": str(export_csv(table, out)),
                               "raw_records": len(table.raw), "averaged_records": len(table.averaged)}
    x = _resolve(args, config, "x")
    try:
        payload["slope"] = fit_slope(table, x=x).model_dump()
    except InsufficientDataError as e:
        logger.info(f"No slope reported: {e}")
    plot_path = _resolve(args, config, "plot")
    if plot_path:
        payload["plot"] = str(export_plot(table, plot_path, x=x, series=_resolve(args, config, "series"),
                                          title=_resolve(args, config, "title")))
    _emit(payload)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    report = run_property_suite(quick=not args.full)
    print(format_table(report))
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_plot(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    source, out = _resolve(args, config, "csv"), _resolve(args, config, "out")
    if not source or not out:
        raise UsageError("plot requires --csv FILE and --out SVG")
    table = read_csv(source)
    target = export_plot(table, out, x=_resolve(args, config, "x"), series=_resolve(args, config, "series"),
                         title=_resolve(args, config, "title"))
    _emit({"plot": str(target), "records": len(table)})
    return EXIT_OK


# ==================== PARSER ====================

def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model (a JSON model file, or generated ground truth)")
    group.add_argument("--model", help="JSON model file {p, d, sigma, blocks}")
    group.add_argument("--zero", action="store_true", help="use the zero model of size --p, --d")
    group.add_argument("--p", type=int, help="lag order of the generated truth (default 2)")
    group.add_argument("--d", type=int, help="state dimension of the generated truth (default 2)")
    group.add_argument("--alpha", type=float, help="sum of block operator norms (default 0.5)")
    group.add_argument("--rank", type=int, help="per-block rank of the generated truth (< d)")
    group.add_argument("--truth-seed", type=int, help="seed of the generated truth (default 0)")
    group.add_argument("--sigma", type=float, help="noise scale (default 1)")


def build_parser() -> ArscaleParser:
    parser = ArscaleParser(prog="arscale", description="Autoregressive learning-rate experiments.")
    parser.add_argument("--config", help="JSON file of flag defaults (flags take precedence)")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="logging level (default from ARSCALE_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    simulate = sub.add_parser("simulate", help="simulate trajectories into a dataset container")
    _add_model_flags(simulate)
    simulate.add_argument("--N", type=int, help="number of trajectories (default 1)")
    simulate.add_argument("--T", type=int, help="trajectory length (default 100)")
    simulate.add_argument("--seed", type=int, help="noise seed (default 0)")
    simulate.add_argument("--noise-family", choices=[f.value for f in NoiseFamily])
    simulate.add_argument("--out", help="output stem; writes STEM.npy and STEM.json")
    simulate.add_argument("--csv", help="also write the long-format CSV export")
    simulate.add_argument("--model-out", help="also write the model as JSON")
    simulate.set_defaults(handler=cmd_simulate)

    analyze = sub.add_parser("analyze", help="diagnostics of a model as JSON")
    _add_model_flags(analyze)
    analyze.add_argument("--T", type=int, help="horizon (default 100)")
    analyze.add_argument("--p-prime", type=int, help="truncation order for eta and D'")
    analyze.set_defaults(handler=cmd_analyze)

    fit = sub.add_parser("fit", help="fit an estimator to a dataset")
    fit.add_argument("--data", help="dataset stem written by `simulate`, or its long-format .csv export")
    fit.add_argument("--estimator", choices=[k.value for k in EstimatorKind])
    fit.add_argument("--p-prime", type=int, help="number of fitted lags (default 1)")
    fit.add_argument("--D", type=float, help="operator-norm budget (default 2)")
    fit.add_argument("--r", type=int, help="target rank for iht_low_rank")
    fit.add_argument("--lambda", dest="lam", type=float, help="group-nuclear weight")
    fit.add_argument("--step", type=float, help="step size (default 0.9 / Lipschitz estimate)")
    fit.add_argument("--iters", type=int, help="iteration cap")
    fit.add_argument("--tol", type=float, help="relative objective tolerance")
    fit.add_argument("--range-mode", choices=[m.value for m in RangeMode])
    fit.add_argument("--init", choices=[m.value for m in InitMode])
    fit.add_argument("--init-seed", type=int)
    fit.add_argument("--project-ball", action="store_true", default=None,
                     help="also project group-nuclear iterates onto the D-ball")
    fit.add_argument("--truth", help="JSON model file; adds the certificate against the truth")
    fit.add_argument("--blocks-out", help="write fitted blocks (.npy)")
    fit.add_argument("--report", help="also write the report JSON to this file")
    fit.set_defaults(handler=cmd_fit)

    sweep = sub.add_parser("sweep", help="run a parameter sweep into a CSV")
    sweep.add_argument("--preset", help="named sweep configuration")
    sweep.add_argument("--spec", help="SweepSpec JSON file")
    sweep.add_argument("--out", help="CSV output path")
    sweep.add_argument("--plot", help="also write an SVG plot")
    sweep.add_argument("--workers", type=int, help="parallel workers (default ARSCALE_SWEEP_WORKERS)")
    sweep.add_argument("--record-runtime", action="store_true", default=None,
                       help="record wall-clock fit time in runtime_ms (outputs then differ between runs)")
    sweep.add_argument("--x", choices=["beta/gamma", "beta_tilde/gamma"])
    sweep.add_argument("--series", choices=["pdN", "p_student", "lambda"])
    sweep.add_argument("--title")
    sweep.set_defaults(handler=cmd_sweep)

    validate = sub.add_parser("validate", help="run the numerical property suite")
    mode = validate.add_mutually_exclusive_group()
    mode.add_argument("--quick", action="store_true", help="reduced instance counts (default)")
    mode.add_argument("--full", action="store_true", help="full instance counts")
    validate.set_defaults(handler=cmd_validate)

    plot = sub.add_parser("plot", help="render a results CSV as SVG")
    plot.add_argument("--csv", help="results CSV written by `sweep`")
    plot.add_argument("--out", help="SVG output path")
    plot.add_argument("--x", choices=["beta/gamma", "beta_tilde/gamma"])
    plot.add_argument("--series", choices=["pdN", "p_student", "lambda"])
    plot.add_argument("--title")
    plot.set_defaults(handler=cmd_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = getattr(logging, str(args.log_level).upper(), logging.INFO)
        logging.basicConfig(format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        logging.getLogger().setLevel(level)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required (simulate, analyze, fit, sweep, validate, plot)")
        config = _load_config(args.config)
        return args.handler(args, config)
    except UsageError as e:
        sys.stderr.write(f"{e}\n\n{parser.format_usage()}")
        return EXIT_USAGE
    except ValidationError as e:
        sys.stderr.write(f"invalid configuration:\n{e}\n")
        return EXIT_USAGE
    except ModelValidationError as e:
        logger.error(f"❌ Invalid model: {e}")
        return EXIT_USAGE
    except (ArscaleError, ValueError, OSError) as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE
