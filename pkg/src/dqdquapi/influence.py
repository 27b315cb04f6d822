"""Discretized influence functional.

Each path point ``k`` owns a time window: ``[t_k - dt/2, t_k + dt/2]`` in the
interior, ``[0, dt/2]`` for the first point and ``[t_n - dt/2, t_n]`` for the
newest point of a path ending at ``t_n``.  The coefficient coupling a later
point ``k`` to an earlier point ``k'`` is

    eta_{k k'} = int_{W_k} dt int_{W_k'} dt' alpha(t - t'),

with ``t' < t`` inside the window when ``k == k'``.  The influence functional
of a path is ``exp(-sum_{k >= k'} (s+_k - s-_k)(eta s+_k' - conj(eta) s-_k'))``.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .bath import BathSpec, response_function

CLASSES = ("ii", "ti", "it", "tt")  # (later, earlier): interior / terminal
SPINS = np.array([1.0, -1.0])  # sigma_z eigenvalue for basis index 0, 1

# pair index a = 2 * i_plus + i_minus
PAIR_SPINS = np.array([[SPINS[a // 2], SPINS[a % 2]] for a in range(4)])

ROUTE_TOLERANCE = 1e-8


class ConsistencyError(RuntimeError):
    """The two independent eta routes disagree."""


@dataclass(frozen=True)
class SpinPair:
    s_plus: int
    s_minus: int

    def __post_init__(self):
        if self.s_plus not in (1, -1) or self.s_minus not in (1, -1):
            raise ValueError("spin values must be +1 or -1")

    @property
    def index(self) -> int:
        return 2 * (self.s_plus == -1) + (self.s_minus == -1)

    @classmethod
    def from_index(cls, a: int) -> "SpinPair":
        return cls(int(PAIR_SPINS[a, 0]), int(PAIR_SPINS[a, 1]))


def window_geometry(delta_t: float, dk: int, cls: str):
    """Return (separation of window centres, later length, earlier length)."""
    later = delta_t / 2 if cls[0] == "t" else delta_t
    earlier = delta_t / 2 if cls[1] == "t" else delta_t
    gap = dk * delta_t
    if cls[0] == "t":
        gap -= delta_t / 4
    if cls[1] == "t":
        gap -= delta_t / 4
    return gap, later, earlier


@dataclass(frozen=True)
class EtaTable:
    delta_t: float
    n_steps: int
    dkmax: int
    diag_interior: complex
    diag_terminal: complex
    # offdiag[dk, c] for dk in 1..dkmax and c indexing CLASSES; row 0 unused
    offdiag: np.ndarray = field(repr=False)
    bath: BathSpec | None = field(default=None, repr=False, compare=False)

    def diag(self, terminal: bool) -> complex:
        return self.diag_terminal if terminal else self.diag_interior

    def get(self, dk: int, cls: str) -> complex:
        if not 1 <= dk <= self.dkmax:
            raise IndexError(f"lag {dk} outside 1..{self.dkmax}")
        return complex(self.offdiag[dk, CLASSES.index(cls)])

    def eta(self, k: int, kp: int, n: int) -> complex:
        """Coefficient between points ``k >= kp`` on a path ending at ``n``."""
        if k == kp:
            return self.diag(k == 0 or k == n)
        cls = ("t" if k == n else "i") + ("t" if kp == 0 else "i")
        return self.get(k - kp, cls)

    def entries(self):
        """Yield (dk, class label, eta) rows; dk = 0 for the diagonal."""
        yield 0, "interior", self.diag_interior
        yield 0, "terminal", self.diag_terminal
        for dk in range(1, self.dkmax + 1):
            for c, label in enumerate(CLASSES):
                yield dk, label, complex(self.offdiag[dk, c])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dk", "class", "re_eta", "im_eta"])
            for dk, label, value in self.entries():
                w.writerow([dk, label, f"{value.real:.11e}", f"{value.imag:.11e}"])


def _q(x):
    """(x - sin x) / x^2 with its small-x series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    x2 = x * x
    series = x / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (x - np.sin(x)) / x2
    return np.where(small, series, direct)


def _sinc(x):
    return np.sinc(np.asarray(x) / math.pi)


def diagonal_eta_frequency(bath: BathSpec, lengths, abs_tol=None):
    """Self-interaction of windows of the given lengths, via one frequency
    integral with the analytically pre-integrated window factor."""
    L = np.atleast_1d(np.asarray(lengths, dtype=float))

    def f(w):
        wl = np.outer(w, L)
        cos_part = 0.5 * (L * L)[None, :] * _sinc(0.5 * wl) ** 2
        sin_part = (L * L)[None, :] * _q(wl)
        return (bath.j_coth(w)[:, None] * cos_part
                - 1j * bath.model(w)[:, None] * sin_part)

    return bath.integrate(f, float(L.max()), abs_tol) / math.pi


def offdiag_eta_frequency(bath: BathSpec, gaps, later, earlier, abs_tol=None):
    """Coupling of two disjoint windows (centre separation ``gaps``)."""
    D = np.atleast_1d(np.asarray(gaps, dtype=float))
    L1 = np.broadcast_to(np.asarray(later, dtype=float), D.shape)
    L2 = np.broadcast_to(np.asarray(earlier, dtype=float), D.shape)

    def f(w):
        shape = (L1 * L2)[None, :] * _sinc(0.5 * np.outer(w, L1)) \
            * _sinc(0.5 * np.outer(w, L2))
        wd = np.outer(w, D)
        return shape * (bath.j_coth(w)[:, None] * np.cos(wd)
                        - 1j * bath.model(w)[:, None] * np.sin(wd))

    span = float(np.max(D + 0.5 * (L1 + L2)))
    return bath.integrate(f, span, abs_tol) / math.pi


def _eta_specs(delta_t: float, dkmax: int):
    """(gap, later, earlier) for every stored off-diagonal entry."""
    return [window_geometry(delta_t, dk, c)
            for dk in range(1, dkmax + 1) for c in CLASSES]


def _time_pieces(gap, later, earlier):
    """Piecewise-linear weight of tau = t - t' for two boxes; list of
    (tau_a, tau_b, w_a, w_b)."""
    lo = gap - 0.5 * (later + earlier)
    hi = gap + 0.5 * (later + earlier)
    top = min(later, earlier)
    flat_lo = gap - 0.5 * abs(later - earlier)
    flat_hi = gap + 0.5 * abs(later - earlier)
    pieces = [(lo, flat_lo, 0.0, top)]
    if flat_hi > flat_lo:
        pieces.append((flat_lo, flat_hi, top, top))
    pieces.append((flat_hi, hi, top, 0.0))
    return pieces


def eta_time_domain(bath: BathSpec, delta_t: float, dkmax: int,
                    abs_tol: float = 1e-11, panel: float = 1.0):
    """Independent construction of all eta entries by quadrature of alpha(tau)
    over the time windows.

    The double window integral is reduced exactly to one integral over the
    lag ``tau`` with the overlap weight of the two windows.  Returns
    ``(diag_interior, diag_terminal, offdiag)`` in the table layout.
    """
    # every integral: (tau_a, tau_b, w_a, w_b) linear weight pieces
    jobs = []
    for L in (delta_t, delta_t / 2):
        jobs.append([(0.0, L, L, 0.0)])
    for gap, l1, l2 in _eta_specs(delta_t, dkmax):
        jobs.append(_time_pieces(gap, l1, l2))
    pieces = [(j, p) for j, job in enumerate(jobs) for p in job]
    alpha_tol = abs_tol / (4.0 * delta_t * delta_t)

    def evaluate(n_per_unit):
        nodes, weights, owner = [], [], []
        for j, (a, b, wa, wb) in pieces:
            n = max(1, int(math.ceil((b - a) / panel * n_per_unit)))
            edges = np.linspace(a, b, n + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            x = (mid[:, None] + half[:, None] * quadrature._NODES).ravel()
            w = (half[:, None] * quadrature._WEIGHTS).ravel()
            lin = wa + (wb - wa) * (x - a) / (b - a)
            nodes.append(x)
            weights.append(w * lin)
            owner.append(np.full(x.size, j))
        x = np.concatenate(nodes)
        order = np.argsort(np.abs(x))
        alpha = np.empty(x.size, dtype=complex)
        alpha[order] = response_function(bath, x[order], abs_tol=alpha_tol)
        contrib = np.concatenate(weights) * alpha
        return np.bincount(np.concatenate(owner), contrib.real, len(jobs)) \
            + 1j * np.bincount(np.concatenate(owner), contrib.imag, len(jobs))

    coarse = evaluate(1)
    level = 1
    for _ in range(bath.quadrature.max_subdivisions):
        level *= 2
        fine = evaluate(level)
        residual = float(np.max(np.abs(fine - coarse)))
        if residual <= abs_tol:
            break
        coarse = fine
    else:
        raise quadrature.ConvergenceError("time-domain eta did not converge",
                                          residual)
    offdiag = np.zeros((dkmax + 1, len(CLASSES)), dtype=complex)
    offdiag[1:] = fine[2:].reshape(dkmax, len(CLASSES))
    return complex(fine[0]), complex(fine[1]), offdiag


def build_eta_table(bath: BathSpec, delta_t: float, n_steps: int, dkmax: int,
                    verify: bool = True) -> EtaTable:
    """Tabulate the influence coefficients for step ``delta_t``.

    Entries come from the frequency-domain window formulas.  With ``verify``
    every entry is recomputed in the time domain and a ``ConsistencyError``
    is raised if the two disagree by more than ``ROUTE_TOLERANCE``.
    """
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if not 1 <= dkmax <= n_steps:
        raise ValueError("need 1 <= dkmax <= n_steps")
    offdiag = np.zeros((dkmax + 1, len(CLASSES)), dtype=complex)
    if bath.is_null:
        return EtaTable(delta_t, n_steps, dkmax, 0j, 0j, offdiag, bath)
    diag = diagonal_eta_frequency(bath, [delta_t, delta_t / 2])
    gaps, l1, l2 = map(np.array, zip(*_eta_specs(delta_t, dkmax)))
    offdiag[1:] = offdiag_eta_frequency(bath, gaps, l1, l2).reshape(
        dkmax, len(CLASSES))
    table = EtaTable(delta_t, n_steps, dkmax, complex(diag[0]),
                     complex(diag[1]), offdiag, bath)
    if verify:
        deviation = route_deviation(table)
        if deviation > ROUTE_TOLERANCE:
            raise ConsistencyError(
                f"eta routes disagree by {deviation:.3e} (> {ROUTE_TOLERANCE:.0e})")
    return table


def route_deviation(table: EtaTable) -> float:
    """Largest absolute difference between the stored and time-domain eta."""
    d_int, d_term, off = eta_time_domain(table.bath, table.delta_t, table.dkmax)
    return float(max(abs(d_int - table.diag_interior),
                     abs(d_term - table.diag_terminal),
                     np.max(np.abs(off - table.offdiag))))


def _exponent(later: SpinPair, earlier: SpinPair, eta: complex) -> complex:
    return (later.s_plus - later.s_minus) * (
        eta * earlier.s_plus - eta.conjugate() * earlier.s_minus)


def influence_factor_I0(pair: SpinPair, table: EtaTable,
                        endpoint_class: str = "interior") -> complex:
    """Single-point factor; ``endpoint_class`` is 'interior' or 'terminal'."""
    if endpoint_class not in ("interior", "terminal"):
        raise ValueError(f"unknown endpoint class {endpoint_class!r}")
    eta = table.diag(endpoint_class == "terminal")
    return complex(np.exp(-_exponent(pair, pair, eta)))


def influence_factor_Idk(pair_i: SpinPair, pair_j: SpinPair, dk: int,
                         table: EtaTable, endpoint_classes: str = "ii") -> complex:
    """Factor between earlier point ``pair_i`` and the point ``dk`` later,
    ``pair_j``.  ``endpoint_classes`` is (later, earlier), e.g. 'ti'."""
    if endpoint_classes not in CLASSES:
        raise ValueError(f"unknown endpoint classes {endpoint_classes!r}")
    eta = table.get(dk, endpoint_classes)
    return complex(np.exp(-_exponent(pair_j, pair_i, eta)))


def factor_matrix(eta: complex) -> np.ndarray:
    """F[a, b] = factor between earlier pair ``a`` and later pair ``b``."""
    dl = PAIR_SPINS[:, 0] - PAIR_SPINS[:, 1]
    inner = eta * PAIR_SPINS[:, 0] - np.conj(eta) * PAIR_SPINS[:, 1]
    return np.exp(-np.outer(inner, dl))


def diagonal_vector(eta: complex) -> np.ndarray:
    sp, sm = PAIR_SPINS[:, 0], PAIR_SPINS[:, 1]
    return np.exp(-(sp - sm) * (eta * sp - np.conj(eta) * sm))
