"""Reduced density matrix propagation.

Basis index 0 is the sigma_z = +1 state |0>, index 1 is |1>.  A forward /
backward spin pair is packed as ``a = 2 * i_plus + i_minus`` so that the
flattened density matrix ``rho.reshape(4)[a] = rho[i_plus, i_minus]``.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .bath import BathSpec, memory_time
from .influence import (EtaTable, PAIR_SPINS, diagonal_eta_frequency,
                        diagonal_vector, factor_matrix)

MAX_DKMAX = 12
BRUTE_FORCE_MAX_STEPS = 10
TRACE_DRIFT_LIMIT = 1e-6

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
CSV_COLUMNS = ("t_ps", "re_rho00", "re_rho11", "re_rho01", "im_rho01",
               "abs_rho01")


class CapacityError(RuntimeError):
    """Requested tensor or enumeration size exceeds the configured cap."""


class IntegrityError(RuntimeError):
    """A propagated state violated a density-matrix invariant."""


class DensityMatrix2:
    """A 2x2 reduced density matrix."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError("density matrix must be 2x2")
        self.matrix = m

    @classmethod
    def plus_state(cls) -> "DensityMatrix2":
        """(|0> + |1>)(<0| + <1|) / 2."""
        return cls(0.5 * np.ones((2, 2)))

    def __getitem__(self, idx):
        return self.matrix[idx]

    def __repr__(self):
        return f"DensityMatrix2({self.matrix.tolist()!r})"

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def violations(self, trace_tol=1e-10, herm_tol=1e-12, eig_tol=1e-8):
        """List of human-readable invariant violations (empty when valid)."""
        m = self.matrix
        problems = []
        if abs(self.trace - 1) > trace_tol:
            problems.append(f"trace {self.trace:.3e} differs from 1")
        herm = float(np.max(np.abs(m - m.conj().T)))
        if herm > herm_tol:
            problems.append(f"hermiticity defect {herm:.3e}")
        lam = float(np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))))
        if lam < -eig_tol:
            problems.append(f"negative eigenvalue {lam:.3e}")
        return problems

    def validate(self, **tolerances) -> "DensityMatrix2":
        problems = self.violations(**tolerances)
        if problems:
            raise ValueError("; ".join(problems))
        return self


@dataclass(frozen=True)
class SystemSpec:
    t_c: float
    initial_state: DensityMatrix2 = field(default_factory=DensityMatrix2.plus_state)

    def __post_init__(self):
        if self.t_c < 0:
            raise ValueError("t_c must be nonnegative")
        self.initial_state.validate()


@dataclass
class Trajectory:
    delta_t: float
    times: np.ndarray
    states: np.ndarray  # shape (n, 2, 2)
    method: str
    dkmax: int | None = None
    bath: str = ""

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i) -> DensityMatrix2:
        return DensityMatrix2(self.states[i])

    @property
    def rho01(self) -> np.ndarray:
        return self.states[:, 0, 1]

    def invariant_report(self):
        """Worst trace, hermiticity and eigenvalue deviations over all states."""
        s = self.states
        trace = np.max(np.abs(s[:, 0, 0] + s[:, 1, 1] - 1))
        herm = np.max(np.abs(s - np.conj(np.swapaxes(s, 1, 2))))
        sym = 0.5 * (s + np.conj(np.swapaxes(s, 1, 2)))
        eig = np.min(np.linalg.eigvalsh(sym))
        return {"trace": float(trace), "hermiticity": float(herm),
                "min_eigenvalue": float(eig)}

    def write_csv(self, fh, header=None):
        """Write the fixed-column CSV; ``header`` lines are emitted as
        ``# key = value`` comments first."""
        for key, value in (header or {}).items():
            fh.write(f"# {key} = {value}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t, rho in zip(self.times, self.states):
            w.writerow([fmt(t), fmt(rho[0, 0].real), fmt(rho[1, 1].real),
                        fmt(rho[0, 1].real), fmt(rho[0, 1].imag),
                        fmt(abs(rho[0, 1]))])

    def to_csv(self, header=None) -> str:
        buf = io.StringIO()
        self.write_csv(buf, header)
        return buf.getvalue()


def fmt(x: float) -> str:
    """Fixed scientific notation with 12 significant digits."""
    x = float(x)
    if x == 0.0:
        x = 0.0  # drop the sign of negative zero
    return f"{x:.11e}"


def short_time_propagator(t_c: float, delta_t: float) -> np.ndarray:
    """exp(-i T_c sigma_x dt)."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    phi = t_c * delta_t
    return math.cos(phi) * np.eye(2, dtype=complex) - 1j * math.sin(phi) * SIGMA_X


def pair_propagator(t_c: float, delta_t: float) -> np.ndarray:
    """K[b, a]: amplitude from pair ``a`` at step k to pair ``b`` at k + 1."""
    u = short_time_propagator(t_c, delta_t)
    return np.kron(u, u.conj())


def itm_evolve(system: SystemSpec, table: EtaTable, n_steps: int,
               max_dkmax: int = MAX_DKMAX) -> Trajectory:
    """Iterative tensor propagation with memory ``table.dkmax``.

    The stored tensor spans the ``dkmax`` most recent points and carries
    every factor whose later point is already behind the newest step.
    Factors reaching into the newest point are applied per step, in their
    terminal-window form for the emitted state and in interior form for
    the tensor that continues.
    """
    m = table.dkmax
    if m > max_dkmax:
        raise CapacityError(
            f"dkmax = {m} needs 4^{m} = {4 ** m} tensor entries; cap is dkmax <= {max_dkmax}")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    K = pair_propagator(system.t_c, table.delta_t)
    rho0 = system.initial_state.matrix.reshape(4)

    d_int = diagonal_vector(table.diag_interior)
    d_term = diagonal_vector(table.diag_terminal)
    F = {(dk, c): factor_matrix(table.get(dk, c))
         for dk in range(1, m + 1) for c in ("ii", "ti", "it", "tt")}

    def vectors(b, n, r, later):
        """Per-axis factors linking held points (oldest first) to pair ``b``."""
        vs = []
        for axis in range(r):
            dk = r - axis
            early = "t" if n - dk == 0 else "i"
            v = F[dk, later + early][:, b]
            if axis == r - 1:
                v = v * K[b]
            vs.append(v)
        return vs

    def outer(vs):
        w = np.ones(())
        for v in vs:
            w = np.multiply.outer(w, v)
        return w.ravel()

    # once point 0 has left the memory the weights no longer depend on n
    steady = {}
    states = [system.initial_state.matrix.copy()]
    tensor = (rho0 * d_term).ravel()  # point 0 owns the half window [0, dt/2]
    r = 1
    for n in range(1, n_steps + 1):
        emitted = np.zeros(4, dtype=complex)
        slices = []
        for b in range(4):
            x = tensor
            for v in vectors(b, n, r, "t"):
                x = v @ x.reshape(4, -1)
            emitted[b] = x[0] * d_term[b]
            if n > m and b in steady:
                v_old, w_rest = steady[b]
            else:
                vs = vectors(b, n, r, "i")
                if r == m:
                    v_old, w_rest = vs[0], outer(vs[1:]) * d_int[b]
                    if n > m:
                        steady[b] = (v_old, w_rest)
                else:
                    v_old, w_rest = None, outer(vs) * d_int[b]
            if v_old is None:
                slices.append(tensor * w_rest)
            else:
                slices.append((v_old @ tensor.reshape(4, -1)) * w_rest)
        tensor = np.stack(slices, axis=-1).ravel()
        r = min(r + 1, m)
        rho = emitted.reshape(2, 2)
        drift = abs(np.trace(rho) - 1)
        if not np.isfinite(drift) or drift > TRACE_DRIFT_LIMIT:
            raise IntegrityError(f"trace drift {drift:.3e} at step {n}")
        states.append(rho)
    return _trajectory(table, states, "ITM", m)


def step_size_warnings(bath: BathSpec, t_c: float, delta_t: float) -> list:
    """Advisory checks on the time step; never fatal.

    The step should not be shorter than the bath memory time (otherwise a
    short memory window misses correlations) and not longer than the qubit
    period scale 1/T_c.  The two can be incompatible, so only messages are
    returned.
    """
    out = []
    tau_mem = memory_time(bath)
    if delta_t < tau_mem:
        out.append(f"delta_t = {delta_t:g} ps is shorter than the bath memory time "
                   f"{tau_mem:.3g} ps")
    if t_c > 0 and delta_t > 1.0 / t_c:
        out.append(f"delta_t = {delta_t:g} ps exceeds 1/T_c = {1.0 / t_c:.3g} ps")
    return out


def _trajectory(table, states, method, dkmax):
    n = len(states)
    bath = table.bath
    desc = "" if bath is None else f"{bath.model.family.value} g={bath.model.g}"
    return Trajectory(table.delta_t, table.delta_t * np.arange(n),
                      np.array(states), method, dkmax, desc)


def _path_state(system, table, K, n):
    """Literal path sum for a path ending at point ``n``."""
    if n == 0:
        return system.initial_state.matrix.copy()
    npts = n + 1
    idx = np.arange(4 ** npts)
    # digit k of idx (most significant first) is the pair at point k
    paths = (idx[:, None] // (4 ** np.arange(npts - 1, -1, -1))[None, :]) % 4
    rho0 = system.initial_state.matrix.reshape(4)
    amp = rho0[paths[:, 0]].copy()
    for k in range(n):
        amp *= K[paths[:, k + 1], paths[:, k]]
    sp = PAIR_SPINS[paths, 0]
    sm = PAIR_SPINS[paths, 1]
    expo = np.zeros(paths.shape[0], dtype=complex)
    for k in range(npts):
        for kp in range(max(0, k - table.dkmax), k + 1):
            eta = table.eta(k, kp, n)
            expo += (sp[:, k] - sm[:, k]) * (eta * sp[:, kp] - np.conj(eta) * sm[:, kp])
    amp *= np.exp(-expo)
    out = np.bincount(paths[:, n], amp.real, 4) + 1j * np.bincount(paths[:, n], amp.imag, 4)
    return out.reshape(2, 2)


def brute_force_evolve(system: SystemSpec, table: EtaTable, n_steps: int) -> Trajectory:
    """Direct sum over all forward/backward paths.

    Pairs further apart than ``table.dkmax`` are dropped, so a table with
    ``dkmax >= n_steps`` gives the untruncated influence functional.
    """
    if n_steps > BRUTE_FORCE_MAX_STEPS:
        raise CapacityError(
            f"brute force limited to {BRUTE_FORCE_MAX_STEPS} steps, got {n_steps}")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    K = pair_propagator(system.t_c, table.delta_t)
    states = [_path_state(system, table, K, n) for n in range(n_steps + 1)]
    return _trajectory(table, states, "BruteForce", table.dkmax)


def dephasing_exponent(bath: BathSpec, times) -> np.ndarray:
    """G(t) = int_0^t dt' int_0^t' dt'' alpha(t' - t'') (complex)."""
    times = np.asarray(times, dtype=float)
    out = np.zeros(times.shape, dtype=complex)
    positive = times > 0
    if bath.is_null or not positive.any():
        return out
    out[positive] = diagonal_eta_frequency(bath, times[positive])
    return out


def pure_dephasing_exact(bath: BathSpec, initial: DensityMatrix2, times) -> Trajectory:
    """Closed-form evolution for T_c = 0 (independent-boson limit).

    Populations stay fixed; the coherence picks up
    exp(-(s+ - s-)(s+ G - s- conj G)), which for sigma_z coupling is
    exp(-4 Re G(t)) with no phase.
    """
    times = np.asarray(times, dtype=float)
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("times must be increasing")
    G = dephasing_exponent(bath, times)
    states = np.repeat(initial.matrix[None], times.size, axis=0)
    for a in range(4):
        sp, sm = PAIR_SPINS[a]
        if sp == sm:
            continue
        i, j = a // 2, a % 2
        states[:, i, j] *= np.exp(-(sp - sm) * (sp * G - sm * np.conj(G)))
    dt = float(times[1] - times[0]) if times.size > 1 else 0.0
    desc = f"{bath.model.family.value} g={bath.model.g}"
    return Trajectory(dt, times, states, "PureDephasing", None, desc)


def truncated_dephasing_exact(table: EtaTable, initial: DensityMatrix2,
                              n_steps: int) -> Trajectory:
    """T_c = 0 evolution under the discretized influence functional.

    With no tunnelling every path keeps its initial pair, so the coherence
    at point n is multiplied by exp(-4 Re sum eta_kk') over all point pairs
    no more than ``table.dkmax`` apart.  This is what the tensor propagation
    must reproduce up to rounding, whatever the memory truncation.
    """
    states = [initial.matrix.copy()]
    for n in range(1, n_steps + 1):
        total = 0.0
        for k in range(n + 1):
            for kp in range(max(0, k - table.dkmax), k + 1):
                total += table.eta(k, kp, n).real
        rho = initial.matrix.copy()
        rho[0, 1] *= math.exp(-4.0 * total)
        rho[1, 0] *= math.exp(-4.0 * total)
        states.append(rho)
    return _trajectory(table, states, "TruncatedDephasing", table.dkmax)
