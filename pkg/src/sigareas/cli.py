"""Command-line surface: fit-and-test on CSV data plus simulation studies.

Subcommands
-----------
test         directional test on a two-group CSV (header ``group,t,y``)
equivalence  equivalence declaration on the same input shape
simulate     replicate study of the proposed procedure on a synthetic design
compare      proposed procedure vs directional BH/BY baselines, matched seeds

Exit codes: 0 success, 2 parse/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .decision import (
    Area,
    DecisionSet,
    EquivalenceDecisionSet,
    EquivalenceEstimates,
    ErrorEstimates,
    decide_equivalence,
    decide_fdr_I,
    decide_fdr_I_III,
)
from .gpr import FitConfig, FitError, FunctionalSample, HyperParams, fit_hyperparameters
from .kernels import KernelSpec
from .linalg import ConditioningError
from .posterior import (
    PredictionGrid,
    posterior_difference,
    posterior_mean_mu,
    sample_posterior,
    state_probs_closed_form,
    state_probs_monte_carlo,
)
from .simulation import (
    StudyError,
    example1_scenario,
    example2_scenario,
    run_study,
    write_study_csv,
)

__all__ = [
    "ParseError",
    "RunConfig",
    "load_csv",
    "run_test",
    "run_compare",
    "emit_plot_data",
    "decision_set_from_json",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CSV_HEADER = ["group", "t", "y"]
PLOT_COLUMNS = ["t", "mean1_hat", "mean2_hat", "mu_d_hat", "s0", "s1", "s2", "decision"]


class ParseError(ValueError):
    """Input CSV or configuration problem, reported with a line number."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a ``test``/``equivalence`` run needs."""

    command: str
    input_path: str
    delta: float
    alpha: float = 0.10
    control: str = "fdr1"  # "fdr1" or "fdr13"
    n_grid: int = 500
    mc_draws: int = 0  # 0 = closed-form state probabilities
    mu_linear: bool = True
    diff_linear: bool = False
    restarts: int = 5
    max_iters: int = 500
    seed: int = 0
    out_dir: str = "."

    def __post_init__(self):
        if self.command not in ("test", "equivalence"):
            raise ParseError(f"unknown command {self.command!r}")
        if self.delta < 0:
            raise ParseError("delta must be >= 0")
        if not (0 < self.alpha < 1):
            raise ParseError("alpha must lie in (0, 1)")
        if self.n_grid < 2:
            raise ParseError("n_grid must be >= 2")
        if self.control not in ("fdr1", "fdr13"):
            raise ParseError(f"control must be 'fdr1' or 'fdr13', got {self.control!r}")


def load_csv(path) -> tuple[FunctionalSample, FunctionalSample]:
    """Read a two-group CSV with header ``group,t,y``.

    Raises ParseError (with the offending line number) on a bad header,
    non-numeric fields, unknown group labels, or an empty group.  Row order
    within each group is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"input file not found: {path}")
    rows = {1: [], 2: []}
    with open(path, newline="", encoding="utf-8-sig") as handle:
        reader = csv.reader(handle)
        header = None
        for line_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if header is None:
                header = [cell.strip().lower() for cell in row]
                if header != CSV_HEADER:
                    raise ParseError(
                        f"line {line_no}: header must be 'group,t,y', got {','.join(header)!r}"
                    )
                continue
            if len(row) != 3:
                raise ParseError(f"line {line_no}: expected 3 fields, got {len(row)}")
            group_str, t_str, y_str = (cell.strip() for cell in row)
            if group_str not in ("1", "2"):
                raise ParseError(f"line {line_no}: group must be 1 or 2, got {group_str!r}")
            try:
                t = float(t_str)
                y = float(y_str)
            except ValueError as exc:
                raise ParseError(f"line {line_no}: non-numeric field ({exc})") from exc
            if not (np.isfinite(t) and np.isfinite(y)):
                raise ParseError(f"line {line_no}: values must be finite")
            rows[int(group_str)].append((t, y))
    if header is None:
        raise ParseError("line 1: file is empty, header 'group,t,y' required")
    for g in (1, 2):
        if not rows[g]:
            raise ParseError(f"group {g} empty")
    return (
        FunctionalSample.from_points(1, rows[1]),
        FunctionalSample.from_points(2, rows[2]),
    )


def _round_sig(value: float, digits: int = 12):
    if value is None or not np.isfinite(value):
        return None
    return float(f"{value:.{digits}g}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return _round_sig(float(obj))
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _kernel_dict(spec: KernelSpec) -> dict:
    return {"xi": spec.xi, "omega": spec.omega, "zeta": spec.zeta}


def run_test(config: RunConfig) -> dict:
    """Full pipeline on user data; returns the result bundle that was written.

    Responses are centered by the pooled mean of both groups before fitting
    (the offset is restored in the reported mean curves), the grid spans the
    pooled observed time range, and the state probabilities use the closed
    form unless ``mc_draws > 0``.
    """
    sample1, sample2 = load_csv(config.input_path)
    pooled = float(np.mean(np.concatenate([sample1.y, sample2.y])))
    s1c = FunctionalSample(group=1, t=sample1.t, y=sample1.y - pooled)
    s2c = FunctionalSample(group=2, t=sample2.t, y=sample2.y - pooled)

    t_all = np.concatenate([s1c.t, s2c.t])
    grid = PredictionGrid.regular(float(t_all.min()), float(t_all.max()), config.n_grid)

    fit_config = FitConfig(
        restarts=config.restarts,
        max_iters=config.max_iters,
        seed=config.seed,
        fit_eta_linear=config.mu_linear,
        fit_theta_linear=config.diff_linear,
    )
    fit = fit_hyperparameters(s1c, s2c, fit_config)
    theta_hat = fit.params

    post = posterior_difference(theta_hat, s1c, s2c, grid)
    if config.mc_draws > 0:
        draws = sample_posterior(post, config.mc_draws, seed=config.seed + 1)
        probs = state_probs_monte_carlo(draws, config.delta, grid)
    else:
        probs = state_probs_closed_form(post, config.delta)

    if config.command == "equivalence":
        decision = decide_equivalence(probs, config.alpha)
        lambda_star = None
        estimates = asdict(decision.estimates)
    else:
        decide = decide_fdr_I if config.control == "fdr1" else decide_fdr_I_III
        decision = decide(probs, config.alpha)
        lambda_star = decision.lambda_star
        estimates = asdict(decision.estimates)

    mu_hat = posterior_mean_mu(theta_hat, s1c, s2c, grid) + pooled
    bundle = {
        "config": {
            "command": config.command,
            "input": str(config.input_path),
            "delta": config.delta,
            "alpha": config.alpha,
            "control": config.control if config.command == "test" else None,
            "n_grid": config.n_grid,
            "mc_draws": config.mc_draws,
            "mu_linear": config.mu_linear,
            "diff_linear": config.diff_linear,
            "restarts": config.restarts,
            "max_iters": config.max_iters,
        },
        "seed": config.seed,
        "theta_hat": {
            "eta": _kernel_dict(theta_hat.eta),
            "theta": _kernel_dict(theta_hat.theta),
            "sigma2": theta_hat.sigma2,
            "log_likelihood": fit.log_likelihood,
        },
        "grid": {"t_lo": grid.t_lo, "t_hi": grid.t_hi, "n_cells": grid.n_cells},
        "lambda_star": lambda_star,
        "decisions": decision.labels.tolist(),
        "areas": [{"lo": a.lo, "hi": a.hi, "label": a.label} for a in decision.areas],
        "estimates": estimates,
        "centering_offset": pooled,
        "plot_data": {
            "t": grid.points,
            "mean1_hat": mu_hat + post.mean,
            "mean2_hat": mu_hat,
            "mu_d_hat": post.mean,
            "s0": probs.s0,
            "s1": probs.s1,
            "s2": probs.s2,
            "decision": decision.labels,
        },
    }

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plot_path = out_dir / f"{config.command}_plot_data.csv"
    emit_plot_data(bundle, plot_path)
    json_path = out_dir / f"{config.command}_results.json"
    serializable = {k: v for k, v in bundle.items() if k != "plot_data"}
    with open(json_path, "w", encoding="utf-8") as handle:
        json.dump(_jsonable(serializable), handle, indent=2, sort_keys=True)
        handle.write("\n")
    bundle["json_path"] = str(json_path)
    bundle["plot_path"] = str(plot_path)
    return bundle


def emit_plot_data(bundle: dict, path) -> None:
    """Write the per-grid-point plot table (one row per test point)."""
    data = bundle["plot_data"]
    n = len(data["t"])
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(PLOT_COLUMNS)
        for i in range(n):
            row = []
            for col in PLOT_COLUMNS:
                value = data[col][i]
                row.append(int(value) if col == "decision" else f"{value:.12g}")
            writer.writerow(row)


def decision_set_from_json(payload: dict):
    """Rebuild the decision set recorded by :func:`run_test`."""
    grid = PredictionGrid.regular(
        payload["grid"]["t_lo"], payload["grid"]["t_hi"], payload["grid"]["n_cells"]
    )
    labels = np.asarray(payload["decisions"], dtype=int)
    areas = tuple(
        Area(lo=a["lo"], hi=a["hi"], label=a["label"]) for a in payload["areas"]
    )
    if payload["config"]["command"] == "equivalence":
        return EquivalenceDecisionSet(
            grid=grid,
            labels=labels,
            alpha=payload["config"]["alpha"],
            estimates=EquivalenceEstimates(**payload["estimates"]),
            areas=areas,
        )
    return DecisionSet(
        grid=grid,
        labels=labels,
        lambda_star=payload["lambda_star"],
        alpha=payload["config"]["alpha"],
        estimates=ErrorEstimates(**payload["estimates"]),
        areas=areas,
    )


def _scenario_from_args(args) -> tuple:
    maker = example1_scenario if args.scenario == "example1" else example2_scenario
    scenarios = [maker(omega=omega, delta=args.delta) for omega in args.omega]
    return scenarios


def _run_simulate(args) -> int:
    scenarios = _scenario_from_args(args)
    procedures = (args.control,)
    return _run_studies(args, scenarios, procedures, "simulate_study.csv")


def _run_compare(args) -> int:
    if args.scenario != "example1":
        print(
            "compare needs the paired example1 design for the BH/BY baselines",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    scenarios = _scenario_from_args(args)
    procedures = (args.control, "bh", "by")
    return _run_studies(args, scenarios, procedures, "compare_study.csv")


def _run_studies(args, scenarios, procedures, csv_name) -> int:
    fit_config = FitConfig(
        restarts=args.restarts,
        max_iters=args.max_iters,
        seed=args.seed,
        fit_eta_linear=args.scenario == "example2",
    )
    results = []
    for scenario in scenarios:
        results.append(
            run_study(
                scenario,
                reps=args.reps,
                alpha=args.alpha,
                procedures=procedures,
                seed=args.seed,
                use_true_theta=args.use_true_theta,
                fit_config=fit_config,
                n_jobs=args.jobs,
            )
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / csv_name
    write_study_csv(results, path)
    for result in results:
        for proc, summary in result.summaries.items():
            print(
                f"omega={result.scenario.gamma_spec.omega:g} proc={proc}: "
                f"FDP_I={summary.fdp_i_mean:.4f} FDP_I+III={summary.fdp_i_iii_mean:.4f} "
                f"FNDP={summary.fndp_mean:.4f} MP={summary.mp:.4f} "
                f"failures={summary.failures}"
            )
    print(f"study table written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigareas",
        description=(
            "Detect sub-intervals where two functional samples have different "
            "mean curves, with directional false discovery rate control."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_run_flags(p):
        p.add_argument("--input", required=True, help="CSV file with header group,t,y")
        p.add_argument("--alpha", type=float, default=0.10, help="nominal level")
        p.add_argument("--grid", type=int, default=500, dest="n_grid", help="test grid size")
        p.add_argument(
            "--mc",
            type=int,
            default=0,
            dest="mc_draws",
            help="Monte Carlo draws for state probabilities (0 = closed form)",
        )
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--restarts", type=int, default=5)
        p.add_argument("--max-iters", type=int, default=500)
        p.add_argument(
            "--mu-linear",
            action=argparse.BooleanOptionalAction,
            default=True,
            help="include the linear kernel term for the shared curve",
        )
        p.add_argument(
            "--diff-linear",
            action=argparse.BooleanOptionalAction,
            default=False,
            help="include the linear kernel term for the difference curve",
        )

    p_test = sub.add_parser("test", help="directional two-sided test")
    add_common_run_flags(p_test)
    p_test.add_argument("--delta", type=float, required=True, help="difference margin")
    p_test.add_argument("--control", choices=["fdr1", "fdr13"], default="fdr1")

    p_eq = sub.add_parser("equivalence", help="equivalence declaration")
    add_common_run_flags(p_eq)
    p_eq.add_argument(
        "--delta-e", type=float, required=True, dest="delta_e", help="equivalence margin"
    )

    def add_study_flags(p):
        p.add_argument("--scenario", choices=["example1", "example2"], default="example1")
        p.add_argument("--omega", type=float, nargs="+", default=[80.0])
        p.add_argument("--delta", type=float, default=0.80)
        p.add_argument("--alpha", type=float, default=0.10)
        p.add_argument("--reps", type=int, default=200)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".")
        p.add_argument("--control", choices=["fdr1", "fdr13"], default="fdr1")
        p.add_argument("--use-true-theta", action="store_true")
        p.add_argument("--restarts", type=int, default=5)
        p.add_argument("--max-iters", type=int, default=500)
        p.add_argument("--jobs", type=int, default=1)

    p_sim = sub.add_parser("simulate", help="replication study of the proposed procedure")
    add_study_flags(p_sim)

    p_cmp = sub.add_parser("compare", help="proposed vs directional BH/BY baselines")
    add_study_flags(p_cmp)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("test", "equivalence"):
            config = RunConfig(
                command=args.command,
                input_path=args.input,
                delta=args.delta if args.command == "test" else args.delta_e,
                alpha=args.alpha,
                control=getattr(args, "control", "fdr1"),
                n_grid=args.n_grid,
                mc_draws=args.mc_draws,
                mu_linear=args.mu_linear,
                diff_linear=args.diff_linear,
                restarts=args.restarts,
                max_iters=args.max_iters,
                seed=args.seed,
                out_dir=args.out,
            )
            bundle = run_test(config)
            print(f"results written to {bundle['json_path']}")
            return EXIT_OK
        if args.command == "simulate":
            return _run_simulate(args)
        if args.command == "compare":
            return _run_compare(args)
        raise ParseError(f"unknown command {args.command!r}")
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConditioningError, FitError, StudyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
