"""Command-line front end: ``dqdquapi {run,figures,sweep,selftest} --config FILE``."""

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .analysis import (NotCrossedError, bloch_times, bloch_times_from_response,
                       decoherence_time, quality_factor, summary_lines)
from .bath import BathSpec, Family, response_function
from .config import ConfigError, RunConfig, load_config
from .influence import ConsistencyError, build_eta_table
from .propagator import (CSV_COLUMNS, MAX_DKMAX, CapacityError, DensityMatrix2,
                         IntegrityError, SystemSpec, brute_force_evolve, fmt,
                         itm_evolve, step_size_warnings, truncated_dephasing_exact)
from .quadrature import ConvergenceError

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4
EXIT_CAPACITY = 5
EXIT_NOT_CROSSED = 6


class CapError(RuntimeError):
    """Sweep larger than the configured cell cap."""


@dataclass
class RunResult:
    trajectory: object
    summary: dict
    crossed: bool


def _header(cfg: RunConfig, **extra) -> dict:
    return {"dqdquapi_version": __version__, **extra, **cfg.echo()}


def simulate(cfg: RunConfig) -> RunResult:
    """Evolve one configuration and collect its summary values."""
    bath = cfg.bath()
    num = cfg["numerics"]
    t_c = cfg.t_c()
    table = build_eta_table(bath, num["delta_t"], num["n_steps"],
                            min(num["dkmax"], num["n_steps"]), verify=num["verify_eta"])
    if cfg["outputs"].get("eta_table"):
        table.write_csv(cfg["outputs"]["eta_table"])
    traj = itm_evolve(SystemSpec(t_c), table, num["n_steps"])
    summary = {"family": bath.model.family.value, "g": bath.model.g,
               "omega_d": bath.model.omega_d, "omega_l": bath.model.omega_l,
               "beta_ps": bath.beta, "t_c": t_c, "delta_t_ps": num["delta_t"],
               "n_steps": num["n_steps"], "dkmax": table.dkmax}
    crossed = True
    try:
        res = decoherence_time(traj, cfg["analysis"]["threshold"])
        summary.update(status="ok", tau2_ps=res.tau2, crossing_index=res.crossing_index)
    except NotCrossedError as exc:
        crossed = False
        summary.update(status="not-crossed", final_ratio=exc.final_ratio)
    if cfg["outputs"]["bloch"] and t_c > 0:
        bt = bloch_times(bath, t_c)
        summary.update(bloch_tau1_ps=bt.tau1, bloch_tau2_ps=bt.tau2)
    delta_omega = cfg["analysis"]["delta_omega"]
    if delta_omega is not None and crossed and t_c > 0:
        qf = quality_factor(2 * t_c, delta_omega, tau2=summary["tau2_ps"])
        summary.update(omega_prime=qf.omega_prime, quality_factor=qf.q)
    for key, value in traj.invariant_report().items():
        summary[f"invariant_{key}"] = value
    for i, message in enumerate(step_size_warnings(bath, t_c, num["delta_t"]), start=1):
        summary[f"warning_{i}"] = message
    return RunResult(traj, summary, crossed)


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _out_path(out_dir, name):
    return name if os.path.isabs(name) else os.path.join(out_dir, name)


def cmd_run(cfg: RunConfig, out_dir: str) -> int:
    result = simulate(cfg)
    header = _header(cfg)
    _write(_out_path(out_dir, cfg["outputs"]["trajectory"]),
           result.trajectory.to_csv(header))
    summary = summary_lines(result.summary)
    _write(_out_path(out_dir, cfg["outputs"]["summary"]), summary)
    sys.stdout.write(summary)
    if not result.crossed:
        print(f"no decoherence detected: |rho01| ratio ended at "
              f"{result.summary['final_ratio']:.6f}", file=sys.stderr)
        return EXIT_NOT_CROSSED
    return EXIT_OK


def _alpha_csv(bath: BathSpec, t_max: float, points: int, header: dict) -> str:
    # alpha(-t) = conj(alpha(t)), so only t >= 0 is computed
    t = np.linspace(-t_max, t_max, points)
    values = np.empty(points, dtype=complex)
    nonneg = t >= 0
    values[nonneg] = response_function(bath, t[nonneg])
    values[~nonneg] = np.conj(response_function(bath, -t[~nonneg]))
    buf = io.StringIO()
    for key, value in header.items():
        buf.write(f"# {key} = {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t_ps", "re_alpha", "im_alpha"))
    for ti, a in zip(t, values):
        w.writerow((fmt(ti), fmt(a.real), fmt(a.imag)))
    return buf.getvalue()


def _family_config(cfg: RunConfig, family: Family, omega_l: float) -> RunConfig:
    fig = cfg["figures"]
    model, temperature, q = cfg.models()
    sections = {k: dict(v) for k, v in cfg.sections.items()}
    sections.pop("material", None)
    sections["bath"] = {"family": family.value, "g": fig[f"g_{family.value}"],
                        "omega_d": model.omega_d, "omega_l": omega_l, "exponent": 1.0,
                        "temperature_mK": temperature, "omega_max": q.omega_max,
                        "abs_tol": q.abs_tol, "max_subdivisions": q.max_subdivisions}
    num = sections["numerics"]
    if fig[f"delta_t_{family.value}"] is not None:
        num["delta_t"] = fig[f"delta_t_{family.value}"]
    if fig[f"n_steps_{family.value}"] is not None:
        num["n_steps"] = fig[f"n_steps_{family.value}"]
    sections["outputs"] = dict(sections["outputs"], eta_table=None)
    return RunConfig(sections)


def cmd_figures(cfg: RunConfig, out_dir: str) -> int:
    fig = cfg["figures"]
    model = cfg.models()[0]
    families = (Family.PIEZOELECTRIC, Family.DEFORMATION)
    for number, family in enumerate(families, start=1):
        fcfg = _family_config(cfg, family, model.omega_l)
        _write(os.path.join(out_dir, f"fig{number}.csv"),
               _alpha_csv(fcfg.bath(), fig["alpha_t_max"], fig["alpha_points"],
                          _header(fcfg, figure=f"fig{number}")))
    for number, family in enumerate(families, start=3):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header_written = False
        for omega_l in fig["omega_l_values"]:
            fcfg = _family_config(cfg, family, omega_l)
            traj = simulate(fcfg).trajectory
            if not header_written:
                for key, value in _header(fcfg, figure=f"fig{number}").items():
                    if key != "bath.omega_l":
                        buf.write(f"# {key} = {value}\n")
                buf.write(f"# figures.omega_l_values = "
                          f"{', '.join(repr(v) for v in fig['omega_l_values'])}\n")
                w.writerow(("omega_l",) + CSV_COLUMNS)
                header_written = True
            for t, rho in zip(traj.times, traj.states):
                w.writerow((fmt(omega_l), fmt(t), fmt(rho[0, 0].real), fmt(rho[1, 1].real),
                            fmt(rho[0, 1].real), fmt(rho[0, 1].imag), fmt(abs(rho[0, 1]))))
        _write(os.path.join(out_dir, f"fig{number}.csv"), buf.getvalue())
    return EXIT_OK


SWEEP_RESULT_COLUMNS = ("tau2_itm_ps", "tau2_bloch_ps", "converged",
                        "max_abs_rho01_deviation", "status")


def sweep_cell(cfg: RunConfig) -> tuple:
    """One sweep row (without axis values); errors become the status."""
    bloch = ""
    try:
        t_c = cfg.t_c()
        if t_c > 0:
            bloch = fmt(bloch_times(cfg.bath(), t_c).tau2)
        result = simulate(cfg)
    except (ConvergenceError, ConsistencyError, IntegrityError, CapacityError,
            ValueError) as exc:
        return ("", bloch, "", "", f"error: {type(exc).__name__}: {exc}")
    tau = fmt(result.summary["tau2_ps"]) if result.crossed else ""
    status = "ok" if result.crossed else \
        f"not-crossed (final ratio {result.summary['final_ratio']:.6f})"
    converged, deviation = "", ""
    num = cfg["numerics"]
    m_next = num["dkmax"] + 1
    if cfg["sweep"]["convergence_check"] and m_next <= min(MAX_DKMAX, num["n_steps"]):
        try:
            nxt = simulate(cfg.with_value("numerics", "dkmax", m_next)).trajectory
            dev = float(np.max(np.abs(np.abs(nxt.rho01) - np.abs(result.trajectory.rho01))))
            converged, deviation = str(int(dev < 1e-3)), fmt(dev)
        except (ConvergenceError, ConsistencyError, IntegrityError, CapacityError) as exc:
            status += f"; convergence check failed: {exc}"
    return (tau, bloch, converged, deviation, status)


def run_sweep(cfg: RunConfig, workers: int = 1) -> str:
    n = cfg.cell_count()
    cap = cfg["sweep"]["cap"]
    if n > cap:
        raise CapError(f"sweep has {n} cells, cap is {cap}")
    cells = cfg.cells()
    configs = [c for _, c in cells]
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(sweep_cell, configs))  # map keeps input order
    else:
        rows = [sweep_cell(c) for c in configs]
    buf = io.StringIO()
    for key, value in _header(cfg, cells=n).items():
        buf.write(f"# {key} = {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(tuple(f"{s}.{k}" for s, k, _ in cfg.axes) + SWEEP_RESULT_COLUMNS)
    for (combo, _), row in zip(cells, rows):
        w.writerow(tuple(fmt(v) if isinstance(v, float) else str(v) for v in combo) + row)
    return buf.getvalue()


def cmd_sweep(cfg: RunConfig, out_dir: str, workers: int = 1) -> int:
    text = run_sweep(cfg, workers)
    _write(os.path.join(out_dir, "sweep.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def selftest(cfg: RunConfig) -> list:
    """Quick oracle checks on the configured bath; returns (name, ok, detail)."""
    bath = cfg.bath()
    dt = cfg["numerics"]["delta_t"]
    t_c = cfg.t_c() or 0.05
    checks = []

    table = build_eta_table(bath, dt, 6, 3, verify=False)
    itm = itm_evolve(SystemSpec(t_c), table, 6)
    brute = brute_force_evolve(SystemSpec(t_c), table, 6)
    err = float(np.max(np.abs(itm.states - brute.states)))
    checks.append(("itm_equals_brute_force", err <= 1e-10, f"max error {err:.3e}"))

    try:
        build_eta_table(bath, dt, 6, 3, verify=True)
        checks.append(("eta_routes_agree", True, "within 1e-8"))
    except ConsistencyError as exc:
        checks.append(("eta_routes_agree", False, str(exc)))

    n = 20
    table = build_eta_table(bath, dt, n, 4, verify=False)
    itm = itm_evolve(SystemSpec(0.0), table, n)
    ref = truncated_dephasing_exact(table, DensityMatrix2.plus_state(), n)
    err = float(np.max(np.abs(itm.states - ref.states)))
    checks.append(("pure_dephasing_contraction", err <= 1e-10, f"max error {err:.3e}"))

    report = itm.invariant_report()
    ok = report["trace"] <= 1e-10 and report["hermiticity"] <= 1e-12 \
        and report["min_eigenvalue"] >= -1e-8
    checks.append(("density_matrix_invariants", ok, str(report)))

    if not bath.is_null and t_c > 0:
        direct = bloch_times(bath, t_c).tau2
        indirect = bloch_times_from_response(bath, t_c).tau2
        rel = abs(indirect / direct - 1)
        checks.append(("bloch_from_response", rel <= 1e-6, f"relative {rel:.3e}"))
    return checks


def cmd_selftest(cfg: RunConfig) -> int:
    checks = selftest(cfg)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dqdquapi", description=__doc__)
    p.add_argument("verb", choices=("run", "figures", "sweep", "selftest"))
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--workers", type=int, default=1, help="sweep worker processes")
    p.add_argument("--tolerance-override", type=float, default=None,
                   help="absolute tolerance for every frequency quadrature")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.tolerance_override is not None:
            cfg = cfg.with_tolerance(args.tolerance_override)
        if args.workers < 1:
            raise ConfigError("validation", "--workers must be >= 1")
        os.makedirs(args.out, exist_ok=True)
        if not os.access(args.out, os.W_OK):
            raise ConfigError("validation", f"output directory {args.out} is not writable")
        if args.verb == "run":
            return cmd_run(cfg, args.out)
        if args.verb == "figures":
            return cmd_figures(cfg, args.out)
        if args.verb == "sweep":
            return cmd_sweep(cfg, args.out, args.workers)
        return cmd_selftest(cfg)
    except ConfigError as exc:
        print(f"{exc.kind} error: {exc}", file=sys.stderr)
        return EXIT_PARSE if exc.kind == "parse" else EXIT_VALIDATION
    except OSError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, ConsistencyError, IntegrityError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CapacityError, CapError) as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
