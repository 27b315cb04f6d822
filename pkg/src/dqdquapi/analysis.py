"""Decoherence times, Markovian reference rates and quality factors."""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .bath import BathSpec, coth_half, response_function, spectral_density
from .influence import build_eta_table
from .propagator import Trajectory, fmt, itm_evolve

INV_E = math.exp(-1.0)
CONVERGENCE_TOLERANCE = 1e-3

# bath-induced frequency shifts in units of the mode cutoff omega_c
DELTA_OMEGA_FACTORS = {"piezoelectric": 1.75, "deformation": 1.65}


class NotCrossedError(RuntimeError):
    """The coherence never fell below the threshold within the trajectory."""

    def __init__(self, final_ratio: float, threshold: float):
        super().__init__(
            f"|rho01| did not reach {threshold:.4f} of its initial value; "
            f"final ratio {final_ratio:.6f}")
        self.final_ratio = final_ratio
        self.threshold = threshold


@dataclass(frozen=True)
class DecoherenceResult:
    tau2: float
    crossing_index: int
    interpolated: bool
    threshold: float
    method: str


@dataclass(frozen=True)
class BlochTimes:
    tau1: float
    tau2: float
    omega0: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.tau2)


@dataclass(frozen=True)
class QualityFactor:
    q: float
    omega_prime: float
    delta_omega: float
    tau2: float


def decoherence_time(traj: Trajectory, threshold: float = INV_E) -> DecoherenceResult:
    """First time |rho01| drops to ``threshold`` times its initial modulus,
    linearly interpolated between the bracketing samples."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    mod = np.abs(traj.rho01)
    if mod[0] == 0:
        raise ValueError("initial state carries no coherence")
    ratio = mod / mod[0]
    below = np.nonzero(ratio <= threshold)[0]
    if below.size == 0:
        raise NotCrossedError(float(ratio[-1]), threshold)
    i = int(below[0])
    if ratio[i] == threshold or i == 0:
        return DecoherenceResult(float(traj.times[i]), i, False, threshold, traj.method)
    t0, t1 = traj.times[i - 1], traj.times[i]
    r0, r1 = ratio[i - 1], ratio[i]
    tau = t0 + (r0 - threshold) / (r0 - r1) * (t1 - t0)
    return DecoherenceResult(float(tau), i, True, threshold, traj.method)


def bloch_times(bath: BathSpec, t_c: float) -> BlochTimes:
    """Markovian T1 = T2 from 1/tau = J(w0) coth(beta w0 / 2) / 2, w0 = 2 T_c.

    A vanishing J(w0) yields infinite times rather than an error.
    """
    if t_c <= 0:
        raise ValueError("t_c must be positive")
    omega0 = 2.0 * t_c
    rate = 0.5 * spectral_density(bath.model, omega0) * float(coth_half(bath.beta, omega0))
    tau = math.inf if rate == 0 else 1.0 / rate
    return BlochTimes(tau, tau, omega0)


def spectral_density_from_response(bath: BathSpec, omega: float,
                                   abs_tol: float = 1e-13) -> float:
    """Recover J(omega) from the time-domain response function.

    Im alpha(t) = -(1/pi) int J(w) sin(w t) dw, so the Fourier sine
    transform of Im alpha over t > 0 returns -J(omega) / 2.  The transform
    is done with QUADPACK's Fourier-integral routine, independently of the
    frequency-domain evaluation of J.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if bath.is_null:
        return 0.0
    value, _ = quad(lambda t: float(response_function(bath, t, abs_tol).imag),
                    0.0, np.inf, weight="sin", wvar=omega, limlst=100)
    return -2.0 * value


def bloch_times_from_response(bath: BathSpec, t_c: float) -> BlochTimes:
    """Bloch times with J(2 T_c) taken from ``spectral_density_from_response``."""
    if t_c <= 0:
        raise ValueError("t_c must be positive")
    omega0 = 2.0 * t_c
    j = spectral_density_from_response(bath, omega0)
    rate = 0.5 * j * float(coth_half(bath.beta, omega0))
    tau = math.inf if rate == 0 else 1.0 / rate
    return BlochTimes(tau, tau, omega0)


def quality_factor(omega0: float, delta_omega: float, tau2: float | None = None,
                   q: float | None = None) -> QualityFactor:
    """Q = tau2 * w' / pi with w' = omega0 + delta_omega.

    Give exactly one of ``tau2`` or ``q``; the other is derived.
    """
    if (tau2 is None) == (q is None):
        raise ValueError("give exactly one of tau2 or q")
    omega_prime = omega0 + delta_omega
    if omega0 <= 0 or delta_omega < 0 or omega_prime <= 0:
        raise ValueError("frequencies must be positive")
    if tau2 is not None:
        if tau2 <= 0:
            raise ValueError("tau2 must be positive")
        q = tau2 * omega_prime / math.pi
    else:
        if q <= 0:
            raise ValueError("q must be positive")
        tau2 = q * math.pi / omega_prime
    return QualityFactor(q, omega_prime, delta_omega, tau2)


def delta_omega_preset(family: str, omega_c: float = 5.0) -> float:
    return DELTA_OMEGA_FACTORS[family] * omega_c


@dataclass
class ConvergenceCell:
    delta_t: float
    dkmax: int
    tau2: float | None
    status: str
    delta_tau2: float | None = None
    max_deviation: float | None = None
    converged: bool = False
    trajectory: Trajectory | None = None


def convergence_report(system, bath: BathSpec, delta_ts, dkmaxes, t_max: float,
                       threshold: float = INV_E, verify_eta: bool = False):
    """Decoherence times over a (delta_t, dkmax) grid.

    ``max_deviation`` compares |rho01| with the previous memory length at the
    same step; a cell is flagged converged when the next memory length in the
    grid changes |rho01| by less than ``CONVERGENCE_TOLERANCE`` everywhere.
    Failing cells carry their error in ``status`` instead of aborting.
    """
    if not delta_ts or not dkmaxes:
        raise ValueError("need at least one delta_t and one dkmax")
    cells = []
    for dt in delta_ts:
        n_steps = int(math.ceil(t_max / dt - 1e-9))
        row = []
        for m in sorted(dkmaxes):
            try:
                table = build_eta_table(bath, dt, n_steps, min(m, n_steps),
                                        verify=verify_eta)
                traj = itm_evolve(system, table, n_steps)
            except Exception as exc:  # reported per cell
                row.append(ConvergenceCell(dt, m, None, f"error: {exc}"))
                continue
            try:
                tau = decoherence_time(traj, threshold).tau2
                status = "ok"
            except NotCrossedError as exc:
                tau, status = None, f"not-crossed (final ratio {exc.final_ratio:.6f})"
            row.append(ConvergenceCell(dt, m, tau, status, trajectory=traj))
        for prev, cell in zip(row, row[1:]):
            if prev.trajectory is None or cell.trajectory is None:
                continue
            dev = float(np.max(np.abs(np.abs(cell.trajectory.rho01)
                                      - np.abs(prev.trajectory.rho01))))
            cell.max_deviation = dev
            if cell.tau2 is not None and prev.tau2 is not None:
                cell.delta_tau2 = cell.tau2 - prev.tau2
            if dev < CONVERGENCE_TOLERANCE:
                prev.converged = True
        cells.extend(row)
    return cells


REPORT_COLUMNS = ("delta_t_ps", "dkmax", "tau2_ps", "delta_tau2_ps",
                  "max_abs_rho01_deviation", "converged", "status")


def _opt(x):
    return "" if x is None else fmt(x)


def write_convergence_csv(cells, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for c in cells:
        w.writerow([fmt(c.delta_t), c.dkmax, _opt(c.tau2), _opt(c.delta_tau2),
                    _opt(c.max_deviation), int(c.converged), c.status])


def summary_lines(values: dict) -> str:
    """key=value lines, floats in the fixed CSV format."""
    out = []
    for key, value in values.items():
        if isinstance(value, float):
            value = fmt(value) if math.isfinite(value) else str(value)
        out.append(f"{key}={value}")
    return "\n".join(out) + "\n"
