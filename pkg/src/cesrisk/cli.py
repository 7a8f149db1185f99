"""Command-line entry point: ``cesrisk <command> [flags]``.

Exit codes: 0 success, 2 input or configuration error, 3 numerical
non-convergence (the report is still written), 4 internal error.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .data import describe, load_dataset, save_dataset
from .diagnostics import bp_style_test, emit_plot_data, white_style_test
from .errors import CesDomainError, ConfigError, DataError, EstimationError, RankDeficientError, StageError
from .justpope import FitOptions, fit_threshold_mean, run_three_stage, stage1_fit
from .report import (
    RunReport,
    dataset_block,
    describe_block,
    file_hash,
    fit_block,
    mc_block,
    ols_block,
    render_text,
    to_json,
)
from .synth import generate, load_spec, monte_carlo

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_INTERNAL = 4

SE_NOTE = "standard errors are sigma2 * (J'J)^-1 and assume homoscedastic errors in the fitting space"
LOG_FORM_NOTE = (
    "mean stages fit ln(yield) on the log CES mean; the additive mean-plus-noise model has no exact "
    "log form, so the log specification is treated as its own estimable model"
)


class InputError(Exception):
    """Raised for user-facing input problems (exit code 2)."""


def _load(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"data file not found: {p}")
    return load_dataset(p)


def _fit_options(args):
    return FitOptions(space=getattr(args, "space", "log"), stage2_space=getattr(args, "stage2_space", "log"))


def _mean_title(stage, space, weighted=False):
    target = "ln(yield)" if space == "log" else "yield"
    kind = "weighted NLS" if weighted else "NLS"
    return f"Stage {stage}: {kind} of {target} on the CES mean ({space} space)"


# -- commands ----------------------------------------------------------------


def cmd_describe(args, report):
    d = _load(args.data)
    report["invocation"]["config_hash"] = file_hash(args.data)
    report["dataset"] = dataset_block(d)
    report["summary"] = describe_block(describe(d))
    return EXIT_OK


def cmd_fit(args, report):
    d = _load(args.data)
    report["invocation"]["config_hash"] = file_hash(args.data)
    report["dataset"] = dataset_block(d)
    opts = _fit_options(args)
    if args.form == "ces":
        fit = stage1_fit(d, opts)
        title = _mean_title(1, opts.space)
    else:
        fit = fit_threshold_mean(d, opts)
        title = "NLS of ln(yield) on the threshold CES mean (log space)"
    report["tables"].append(fit_block(args.form, title, fit))
    report["notes"].append(SE_NOTE)
    if not d.dummy_years:
        report["warnings"].append("single year in data: dummy coefficients omitted")
    if not fit.converged:
        report["warnings"].append(f"fit did not converge: {fit.message}")
        return EXIT_NONCONVERGED
    return EXIT_OK


def _jp_report(res, report):
    report["tables"].append(fit_block("stage1", _mean_title(1, res.space), res.stage1))
    if res.stage2 is not None:
        target = "ln(u^2) on ln h" if res.stage2_space == "log" else "u^2 on h"
        title = f"Stage 2: NLS of {target} (CES variance, {res.stage2_space} space)"
        if res.stage2_space != "log":
            title += " [non-default]"
        report["tables"].append(
            fit_block("stage2", title, res.stage2, {"clipped": res.clipped, "space": res.stage2_space})
        )
    if res.stage3 is not None:
        report["tables"].append(fit_block("stage3", _mean_title(3, res.space, weighted=True), res.stage3))
    report["warnings"].extend(res.warnings)


def cmd_fit_jp(args, report):
    d = _load(args.data)
    report["invocation"]["config_hash"] = file_hash(args.data)
    report["dataset"] = dataset_block(d)
    try:
        res = run_three_stage(d, _fit_options(args))
    except StageError as exc:
        for label in ("stage1", "stage2"):
            if label in exc.partial:
                report["tables"].append(fit_block(label, f"{label} (completed before failure)", exc.partial[label]))
        raise
    _jp_report(res, report)
    report["notes"].extend([SE_NOTE, LOG_FORM_NOTE])
    fits = [f for f in (res.stage1, res.stage2, res.stage3) if f is not None]
    return EXIT_OK if all(f.converged for f in fits) else EXIT_NONCONVERGED


def cmd_diagnose(args, report):
    d = _load(args.data)
    report["invocation"]["config_hash"] = file_hash(args.data)
    report["dataset"] = dataset_block(d)
    opts = _fit_options(args)
    if args.residuals == "stage1":
        fit = stage1_fit(d, opts)
        resid, fitted = fit.residuals, fit.fitted
        report["tables"].append(fit_block("stage1", _mean_title(1, opts.space), fit))
        converged = fit.converged
    else:
        res = run_three_stage(d, opts)
        if res.stage3 is None:
            raise InputError("stage-3 residuals unavailable: variance unidentified")
        _jp_report(res, report)
        resid, fitted = res.stage3.residuals, res.stage3.fitted
        converged = all(f.converged for f in (res.stage1, res.stage2, res.stage3))
    bp = bp_style_test(d, resid)
    wg = white_style_test(d, resid, fitted)
    report["diagnostics"].append(ols_block("inputs", f"Regression of squared {args.residuals} residuals on inputs", bp))
    report["diagnostics"].append(
        ols_block("fitted", f"Regression of squared {args.residuals} residuals on fitted values and their squares", wg)
    )
    if args.out:
        paths = emit_plot_data(d, resid, fitted, Path(args.out) / "points")
        report["artifacts"].extend(str(p) for p in paths.values())
    else:
        report["warnings"].append("no --out given: plot point files not written")
    return EXIT_OK if converged else EXIT_NONCONVERGED


def cmd_simulate(args, report):
    p = Path(args.spec)
    if not p.is_file():
        raise InputError(f"spec file not found: {p}")
    spec = load_spec(p, seed=args.seed)
    report["invocation"]["config_hash"] = file_hash(p)
    report["invocation"]["seed"] = spec.seed
    if args.mc:
        opts = FitOptions(space=args.space)
        summary = monte_carlo(spec, args.estimator, args.mc, opts)
        report["simulation"] = mc_block(summary)
        if summary.failures:
            report["warnings"].append(f"{summary.failures} of {summary.replications} replications failed")
        if summary.redraws:
            report["warnings"].append(f"{summary.redraws} rows redrawn for non-positive output")
        return EXIT_OK
    d = generate(spec)
    report["dataset"] = dataset_block(d)
    report["simulation"] = {"n": d.n, "seed": spec.seed, "redraws": d.meta["redraws"]}
    report["summary"] = describe_block(describe(d))
    if d.meta["redraws"]:
        report["warnings"].append(f"{d.meta['redraws']} rows redrawn for non-positive output")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = save_dataset(d, out / "synthetic.csv")
        report["artifacts"].extend([str(path), str(path) + ".meta"])
    else:
        report["warnings"].append("no --out given: dataset not written")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="cesrisk", description="CES mean/variance estimation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("text", "json"), default="text")
        p.add_argument("--out", help="directory for the report file and artifacts")

    def space(p):
        p.add_argument("--space", choices=("log", "level"), default="log", help="fitting space of the mean stages")

    p = sub.add_parser("describe", help="summary statistics of a data file")
    p.add_argument("--data", required=True)
    common(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("fit", help="single NLS fit of a CES mean form")
    p.add_argument("--data", required=True)
    p.add_argument("--form", choices=("ces", "ces-threshold"), default="ces")
    space(p)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-jp", help="three-stage mean/variance estimation")
    p.add_argument("--data", required=True)
    p.add_argument("--stage2-space", choices=("log", "level"), default="log", dest="stage2_space")
    space(p)
    common(p)
    p.set_defaults(func=cmd_fit_jp)

    p = sub.add_parser("diagnose", help="auxiliary heteroscedasticity regressions and plot data")
    p.add_argument("--data", required=True)
    p.add_argument("--residuals", choices=("stage1", "stage3"), default="stage1")
    space(p)
    common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", help="generate synthetic data or run a Monte Carlo study")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, help="overrides the seed in the spec file")
    p.add_argument("--mc", type=int, default=0, metavar="REPS", help="Monte Carlo replications (0: one dataset)")
    p.add_argument("--estimator", choices=("stage1", "three-stage", "both"), default="both")
    p.add_argument("--space", choices=("log", "level"), default="level", help="fitting space in Monte Carlo fits")
    common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


_INPUT_ERRORS = (InputError, DataError, ConfigError, CesDomainError, FileNotFoundError)


def _classify(exc):
    if isinstance(exc, StageError):
        return _classify(exc.cause) if isinstance(exc.cause, Exception) else EXIT_NONCONVERGED
    if isinstance(exc, _INPUT_ERRORS):
        return EXIT_INPUT
    if isinstance(exc, (EstimationError, RankDeficientError)):
        return EXIT_NONCONVERGED
    if isinstance(exc, ValueError) and "insufficient observations" in str(exc):
        return EXIT_INPUT
    return EXIT_INTERNAL


def _emit(report, args, stdout):
    text = to_json(report) if args.format == "json" else render_text(report)
    stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"report.{'json' if args.format == 'json' else 'txt'}").write_text(text, encoding="utf-8")


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    report = RunReport(args.command, {"command": args.command, "argv": argv, "config_hash": None, "seed": None})
    try:
        code = args.func(args, report)
    except Exception as exc:  # mapped to the exit-code contract below
        code = _classify(exc)
        report["warnings"].append(f"error: {exc}")
        stderr.write(f"cesrisk {args.command}: {exc}\n")
        if code == EXIT_INPUT:
            return code
        try:
            _emit(report, args, stdout)
        except OSError:
            pass
        return code
    try:
        _emit(report, args, stdout)
    except OSError as exc:
        stderr.write(f"cesrisk {args.command}: cannot write report: {exc}\n")
        return EXIT_INPUT
    return code


if __name__ == "__main__":
    sys.exit(main())
