"""Command-line front end: run convergence studies from a flat config
file, list the built-in problems, and emit gnuplot-ready rate data.

Config files are flat key/value YAML; see StudyConfig for the schema.
Outputs (rates.csv, diagnostics.csv, report.txt) are written with
shortest round-trip float formatting, so reruns of the same config are
byte-identical.

Exit codes: 0 all enabled checks pass, 1 a rate or diagnostic check
failed, 2 config parse error (no files written), 3 solver failure.
"""

import argparse
import csv
import os
import sys
from dataclasses import dataclass

import numpy as np
import yaml

from .analysis import DIAGNOSTIC_NAMES, StudyOptions, convergence_study, estimate_rate
from .energy import PROBLEM_NAMES, build_problem, classify
from .solver import NewtonOptions

__all__ = ["StudyConfig", "ConfigError", "load_config", "run", "list_problems",
           "plot_data", "main"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass(frozen=True)
class StudyConfig:
    problem: str
    dim: int
    order: int
    levels: int
    coarse_cells: int = 8
    diagnostics: tuple = ()
    seed: int = 0
    newton_tol: float = 1e-12
    linear_tol: float = 1e-12
    output_dir: str = "."


_REQUIRED = ("problem", "dim", "order", "levels")
_OPTIONAL = ("coarse_cells", "diagnostics", "seed", "newton_tol", "linear_tol",
             "output_dir")


def load_config(path):
    """Parse and validate a flat key/value config file."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"config is not valid key/value text: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat mapping of keys to values")

    unknown = set(data) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in _REQUIRED if k not in data]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")

    def as_int(key, value):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value

    problem = data["problem"]
    if problem not in PROBLEM_NAMES:
        raise ConfigError(f"problem must be one of {PROBLEM_NAMES}, got {problem!r}")
    dim = as_int("dim", data["dim"])
    if dim not in (1, 2):
        raise ConfigError(f"dim must be 1 or 2, got {dim}")
    order = as_int("order", data["order"])
    if not 1 <= order <= 3:
        raise ConfigError(f"order must be in 1..3, got {order}")
    levels = as_int("levels", data["levels"])
    if levels < 3:
        raise ConfigError(f"levels must be >= 3, got {levels}")
    coarse_cells = as_int("coarse_cells", data.get("coarse_cells", 8))
    if coarse_cells < 1:
        raise ConfigError("coarse_cells must be >= 1")
    seed = as_int("seed", data.get("seed", 0))

    diagnostics = data.get("diagnostics", ())
    if isinstance(diagnostics, str):
        diagnostics = [s.strip() for s in diagnostics.split(",") if s.strip()]
    if not isinstance(diagnostics, (list, tuple)):
        raise ConfigError("diagnostics must be a list or comma-separated names")
    bad = set(diagnostics) - set(DIAGNOSTIC_NAMES)
    if bad:
        raise ConfigError(f"unknown diagnostics {sorted(bad)}; "
                          f"available: {DIAGNOSTIC_NAMES}")
    if "pq" in diagnostics and order < 2:
        raise ConfigError("the pq diagnostic needs order >= 2")

    tols = {}
    for key in ("newton_tol", "linear_tol"):
        value = data.get(key, 1e-12)
        if isinstance(value, str):
            # yaml reads exponent forms like 1e-12 as strings
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{key} must be a positive number") from None
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
            raise ConfigError(f"{key} must be a positive number")
        tols[key] = float(value)

    output_dir = data.get("output_dir", ".")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string path")

    return StudyConfig(problem, dim, order, levels, coarse_cells,
                       tuple(diagnostics), seed, tols["newton_tol"],
                       tols["linear_tol"], output_dir)


def _threads_hint():
    """Optional worker-count hint; the implementation is vectorized and
    single-process, so the value is validated and recorded only."""
    raw = os.environ.get("NITSCHE_THREADS")
    if raw is None:
        return None
    try:
        value = int(raw)
        if value < 1:
            raise ValueError
    except ValueError:
        print(f"warning: ignoring invalid NITSCHE_THREADS={raw!r}", file=sys.stderr)
        return None
    return value


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(float(value))


def _running_slopes(levels):
    slopes = [(None, None)]
    for prev, cur in zip(levels, levels[1:]):
        dh = np.log(prev.h / cur.h)
        slopes.append((np.log(prev.err_l2 / cur.err_l2) / dh,
                       np.log(prev.err_h1 / cur.err_h1) / dh))
    return slopes


def _write_rates_csv(path, report):
    slopes = _running_slopes(report.levels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["level", "h", "dofs", "err_l2", "err_h1",
                         "slope_l2_running", "slope_h1_running", "newton_iters"])
        for lr, (s2, s1) in zip(report.levels, slopes):
            writer.writerow([lr.level, _fmt(lr.h), lr.dofs, _fmt(lr.err_l2),
                             _fmt(lr.err_h1), _fmt(s2), _fmt(s1), lr.newton_iters])


_DIAG_ROW_NAMES = {
    "galerkin": ("galerkin_defect",),
    "adjoint": ("adjoint_identity", "h2_ratio"),
    "pq": ("pq_ratio",),
    "ellipticity": ("lambda_min", "lambda_max"),
    "inverse_estimate": ("inverse_ratio",),
}


def _write_diagnostics_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["level", "name", "value"])
        for diag in sorted(report.diagnostics):
            names = _DIAG_ROW_NAMES[diag]
            for entry in report.diagnostics[diag]:
                level, values = entry[0], entry[1:]
                for name, value in zip(names, values):
                    writer.writerow([level, name, _fmt(value)])


def _evaluate_checks(cfg, report):
    """(name, passed, detail) for every enabled check."""
    checks = []
    m = cfg.order
    if report.rate_h1 is not None:
        lo, hi = m - 0.15, m + 0.25
        ok = lo <= report.rate_h1.slope <= hi and report.rate_h1.r_squared >= 0.995
        checks.append(("h1_rate", ok,
                       f"slope {_fmt(report.rate_h1.slope)} in [{lo}, {hi}], "
                       f"r2 {_fmt(report.rate_h1.r_squared)} >= 0.995"))
        lo2, hi2 = m + 0.75, m + 1.3
        ok2 = lo2 <= report.rate_l2.slope <= hi2 and report.rate_l2.r_squared >= 0.99
        checks.append(("l2_rate", ok2,
                       f"slope {_fmt(report.rate_l2.slope)} in [{lo2}, {hi2}], "
                       f"r2 {_fmt(report.rate_l2.r_squared)} >= 0.99"))
    else:
        checks.append(("rates", False, "fewer than 3 completed levels"))

    threshold = 100.0 * (cfg.newton_tol + cfg.linear_tol)
    for diag in sorted(report.diagnostics):
        entries = report.diagnostics[diag]
        if diag == "galerkin":
            worst = max((e[1] for e in entries), default=0.0)
            checks.append(("galerkin", worst <= threshold,
                           f"max defect {_fmt(worst)} <= {_fmt(threshold)}"))
        elif diag == "adjoint":
            worst = max((e[1] for e in entries), default=0.0)
            checks.append(("adjoint", worst < 0.05,
                           f"max identity residual {_fmt(worst)} < 0.05"))
        elif diag == "ellipticity":
            worst = min((e[1] for e in entries), default=1.0)
            checks.append(("ellipticity", worst > 0,
                           f"min lambda_min {_fmt(worst)} > 0"))
        elif diag == "pq":
            ratios = [e[1] for e in entries]
            growth = max(ratios) / ratios[0] if ratios and ratios[0] > 0 else 0.0
            checks.append(("pq", growth < 2.0,
                           f"growth factor {_fmt(growth)} < 2"))
        elif diag == "inverse_estimate":
            ratios = [e[1] for e in entries]
            spread = max(ratios) / min(ratios) - 1.0 if ratios else 0.0
            checks.append(("inverse_estimate", spread < 0.10,
                           f"level spread {_fmt(spread)} < 0.1"))
    return checks


def _write_report_txt(path, cfg, report, checks):
    lines = [
        f"problem: {cfg.problem} (dim {cfg.dim}, order {cfg.order})",
        f"levels: {cfg.levels} from {cfg.coarse_cells} cells per side",
        f"tolerances: newton {_fmt(cfg.newton_tol)}, linear {_fmt(cfg.linear_tol)}",
        f"seed: {cfg.seed}",
        "",
        "level        h       dofs       err_l2       err_h1  iters   |u_h|_W14",
    ]
    for lr in report.levels:
        lines.append(f"{lr.level:5d} {lr.h:8.5f} {lr.dofs:10d} {lr.err_l2:12.5e} "
                     f"{lr.err_h1:12.5e} {lr.newton_iters:6d} {lr.stability_w1q:11.5e}")
    lines.append("")
    if report.rate_h1 is not None:
        lines.append(f"fitted H1 slope: {report.rate_h1.slope:.4f} "
                     f"(expected {cfg.order}), r2 {report.rate_h1.r_squared:.6f}")
        lines.append(f"fitted L2 slope: {report.rate_l2.slope:.4f} "
                     f"(expected {cfg.order + 1}), r2 {report.rate_l2.r_squared:.6f}")
    if report.aborted:
        lines.append(f"aborted: {report.aborted}")
    lines.append("")
    for name, ok, detail in checks:
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    overall = all(ok for _, ok, _ in checks) and not report.aborted
    lines.append("")
    lines.append(f"overall: {'PASS' if overall else 'FAIL'}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run(config_path):
    """Run the configured study; write rates.csv, diagnostics.csv, report.txt."""
    try:
        cfg = load_config(config_path)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    _threads_hint()
    problem = build_problem(cfg.problem, cfg.dim)
    newton = NewtonOptions(residual_tol=cfg.newton_tol, linear_tol=cfg.linear_tol)
    opts = StudyOptions(coarse_cells=cfg.coarse_cells, newton=newton,
                        diagnostics=cfg.diagnostics, seed=cfg.seed)
    report = convergence_study(problem, cfg.order, cfg.levels, opts)

    os.makedirs(cfg.output_dir, exist_ok=True)
    checks = _evaluate_checks(cfg, report)
    _write_rates_csv(os.path.join(cfg.output_dir, "rates.csv"), report)
    _write_diagnostics_csv(os.path.join(cfg.output_dir, "diagnostics.csv"), report)
    _write_report_txt(os.path.join(cfg.output_dir, "report.txt"), cfg, report, checks)

    if report.abort_kind == "solver":
        print(f"solver failure: {report.aborted}", file=sys.stderr)
        return EXIT_SOLVER
    if report.aborted or not all(ok for _, ok, _ in checks):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def list_problems(stream=None):
    """One line per built-in problem: name, energy, classification."""
    stream = stream or sys.stdout
    for name in PROBLEM_NAMES:
        problem = build_problem(name, 2)
        kind = classify(problem.model)
        stream.write(f"{name:16s} J(u) = int {problem.model.formula} dx  [{kind}]\n")
    return EXIT_OK


def plot_data(rates_csv_path, output_dir=None):
    """Write l2.dat / h1.dat plus a gnuplot script with reference slopes.

    The reference exponents are the fitted H1 slope rounded to the nearest
    integer (the csv schema does not carry the order) and that value plus
    one; both reference lines are anchored at the coarsest data point.
    """
    try:
        with open(rates_csv_path) as fh:
            rows = list(csv.DictReader(fh))
    except OSError as err:
        print(f"cannot read rates csv: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if len(rows) < 3:
        print("rates csv has fewer than 3 rows", file=sys.stderr)
        return EXIT_CONFIG
    try:
        hs = [float(r["h"]) for r in rows]
        l2 = [float(r["err_l2"]) for r in rows]
        h1 = [float(r["err_h1"]) for r in rows]
    except (KeyError, ValueError) as err:
        print(f"malformed rates csv: {err}", file=sys.stderr)
        return EXIT_CONFIG

    out = output_dir or os.path.dirname(os.path.abspath(rates_csv_path))
    os.makedirs(out, exist_ok=True)
    for fname, errs in (("l2.dat", l2), ("h1.dat", h1)):
        with open(os.path.join(out, fname), "w") as fh:
            for h, e in zip(hs, errs):
                fh.write(f"{_fmt(h)} {_fmt(e)}\n")

    m_fit = estimate_rate(list(zip(hs, h1))).slope
    m = max(1, int(round(m_fit)))
    h0, e1_0, e2_0 = hs[0], h1[0], l2[0]
    script = "\n".join([
        "set logscale xy",
        "set xlabel 'h'",
        "set ylabel 'error'",
        f"ref_h1(x) = {_fmt(e1_0)} * (x/{_fmt(h0)})**{m}",
        f"ref_l2(x) = {_fmt(e2_0)} * (x/{_fmt(h0)})**{m + 1}",
        "plot 'h1.dat' with linespoints title 'H1 error', \\",
        "     'l2.dat' with linespoints title 'L2 error', \\",
        f"     ref_h1(x) with lines dashtype 2 title 'h^{m}', \\",
        f"     ref_l2(x) with lines dashtype 2 title 'h^{m + 1}'",
    ]) + "\n"
    with open(os.path.join(out, "rates.gp"), "w") as fh:
        fh.write(script)
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="nitschelab",
        description="convergence-rate laboratory for energy minimization by "
                    "Lagrange finite elements")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a study from a config file")
    p_run.add_argument("config")
    sub.add_parser("list-problems", help="list built-in problems")
    p_plot = sub.add_parser("plot", help="emit gnuplot data from rates.csv")
    p_plot.add_argument("rates_csv")
    p_plot.add_argument("--output-dir", default=None)

    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    if args.command == "list-problems":
        return list_problems()
    return plot_data(args.rates_csv, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
