"""Phonon spectral densities and the bath response kernel.

Units throughout: hbar = k_B = 1, frequencies in ps^-1, times in ps.
The two physical families are

    J_pz(w) = g w   (1 - (wd/w) sin(w/wd)) exp(-w^2 / 2 wl^2)
    J_df(w) = g w^3 (1 - (wd/w) sin(w/wd)) exp(-w^2 / 2 wl^2)

and the response function is

    alpha(t) = (1/pi) int_0^inf dw J(w) [coth(beta w / 2) cos(w t) - i sin(w t)].
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .quadrature import QuadraturePolicy, integrate

# k_B / hbar in ps^-1 per kelvin
KB_OVER_HBAR = constants.k / constants.hbar * 1e-12

OMEGA_CUTOFF = 5.0  # ps^-1, bath-mode cutoff used as the default omega_max floor
_SINC_SERIES_THRESHOLD = 1e-2
_COTH_SERIES_THRESHOLD = 1e-4


class Family(enum.Enum):
    PIEZOELECTRIC = "piezoelectric"
    DEFORMATION = "deformation"
    POWER_LAW_GAUSSIAN = "power_law_gaussian"

    @classmethod
    def parse(cls, name: str) -> "Family":
        aliases = {"pz": cls.PIEZOELECTRIC, "pcpb": cls.PIEZOELECTRIC,
                   "df": cls.DEFORMATION, "dcpb": cls.DEFORMATION,
                   "plg": cls.POWER_LAW_GAUSSIAN}
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


def sinc_defect_ratio(x):
    """(1 - sin(x)/x) / x^2, tending to 1/6 at x = 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SINC_SERIES_THRESHOLD
    x2 = x * x
    series = (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0)) / 6.0
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (1.0 - np.sin(x) / x) / x2
    return np.where(small, series, direct)


def coth_half(beta: float, omega):
    """coth(beta * omega / 2); Laurent expansion near zero. Diverges at 0."""
    x = 0.5 * beta * np.asarray(omega, dtype=float)
    small = np.abs(x) < _COTH_SERIES_THRESHOLD
    with np.errstate(divide="ignore", invalid="ignore"):
        series = 1.0 / x + x / 3.0
        direct = 1.0 / np.tanh(x)
    return np.where(small, series, direct)


@dataclass(frozen=True)
class SpectralDensityModel:
    """Parametric spectral density J(omega) in ps^-1.

    ``exponent`` is only consulted for the power-law-Gaussian test family;
    the physical families fix it to 1 (piezoelectric) and 3 (deformation).
    """

    family: Family
    g: float
    omega_d: float = 0.02
    omega_l: float = 0.5
    exponent: float = 1.0

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("coupling g must be nonnegative")
        if self.omega_d <= 0 or self.omega_l <= 0:
            raise ValueError("omega_d and omega_l must be positive")
        if self.family is Family.POWER_LAW_GAUSSIAN and self.exponent < 1:
            raise ValueError("power-law exponent must be >= 1")

    @property
    def power(self) -> float:
        if self.family is Family.PIEZOELECTRIC:
            return 1.0
        if self.family is Family.DEFORMATION:
            return 3.0
        return self.exponent

    @property
    def has_geometric_factor(self) -> bool:
        return self.family is not Family.POWER_LAW_GAUSSIAN

    def over_power(self, omega, k: int):
        """J(omega) / omega**k, using the exact small-omega power counting."""
        omega = np.asarray(omega, dtype=float)
        gauss = np.exp(-0.5 * (omega / self.omega_l) ** 2)
        q = self.power - k
        scale = self.g
        if self.has_geometric_factor:
            # 1 - sinc(x) = x^2 h(x) supplies two more powers of omega
            q += 2
            scale = self.g / self.omega_d ** 2
            scale = scale * sinc_defect_ratio(omega / self.omega_d)
        if q < 0:
            with np.errstate(divide="ignore"):
                pw = omega ** q
        elif q == 0:
            pw = np.ones_like(omega)
        else:
            pw = omega ** q
        return scale * pw * gauss

    def __call__(self, omega):
        return self.over_power(omega, 0)


def spectral_density(model: SpectralDensityModel, omega):
    """Evaluate J(omega); raises ``ValueError`` for negative frequencies."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0 only")
    value = model(omega)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class MaterialParams:
    """Crystal and dot geometry constants.

    ``M`` is the piezoelectric coupling expressed as (e h14)^2 / hbar in
    J m^-2 s^-1, ``Xi`` the deformation potential in eV, ``rho`` in kg/m^3,
    ``s`` the longitudinal sound velocity in m/s, ``x`` the ratio of
    transverse to longitudinal sound velocity; ``d`` and ``l`` in nm.
    """

    M: float
    Xi: float
    rho: float
    s: float
    x: float
    d: float
    l: float

    def __post_init__(self):
        for name in ("M", "Xi", "rho", "s", "x", "d", "l"):
            if getattr(self, name) <= 0:
                raise ValueError(f"material parameter {name} must be positive")
        if self.x > 1:
            raise ValueError("velocity ratio x must lie in (0, 1]")


# Commonly quoted GaAs constants: e14 = 0.16 C/m^2, eps_r = 12.9,
# rho = 5.3e3 kg/m^3, s_t / s_l = 3.0e3 / 5.1e3, Xi = 7 eV.
_E14_GAAS = 0.16
_H14_GAAS = _E14_GAAS / (12.9 * constants.epsilon_0)
GAAS = MaterialParams(
    M=(constants.e * _H14_GAAS) ** 2 / constants.hbar,
    Xi=7.0,
    rho=5.3e3,
    s=5.0e3,
    x=3.0 / 5.1,
    d=250.0,
    l=10.0,
)


def derive_geometry(material: MaterialParams):
    """Return the (piezoelectric, deformation) models implied by ``material``."""
    m = material
    omega_d = m.s / (m.d * 1e-9) * 1e-12
    omega_l = m.s / (m.l * 1e-9) * 1e-12
    g_pz = m.M / (math.pi ** 2 * m.rho * m.s ** 3) * (6.0 / 35.0 + 8.0 / (35.0 * m.x))
    xi_joule = m.Xi * constants.e
    # the s^2 result is converted to ps^2
    g_df = xi_joule ** 2 / (8.0 * math.pi ** 2 * constants.hbar * m.rho * m.s ** 5) * 1e24
    return (SpectralDensityModel(Family.PIEZOELECTRIC, g_pz, omega_d, omega_l),
            SpectralDensityModel(Family.DEFORMATION, g_df, omega_d, omega_l))


def thermal_beta(temperature_mK: float) -> float:
    """Inverse temperature hbar / (k_B T) in ps."""
    if not temperature_mK > 0:
        raise ValueError("temperature must be positive")
    return 1.0 / (KB_OVER_HBAR * temperature_mK * 1e-3)


@dataclass(frozen=True)
class BathSpec:
    model: SpectralDensityModel
    beta: float
    quadrature: QuadraturePolicy = field(default_factory=QuadraturePolicy)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.quadrature.omega_max is not None \
                and self.quadrature.omega_max < 8 * self.model.omega_l:
            raise ValueError("omega_max must be at least 8 * omega_l")

    @classmethod
    def from_temperature(cls, model, temperature_mK, quadrature=None):
        return cls(model, thermal_beta(temperature_mK),
                   quadrature or QuadraturePolicy())

    @property
    def omega_max(self) -> float:
        if self.quadrature.omega_max is not None:
            return self.quadrature.omega_max
        return max(OMEGA_CUTOFF, 8.0 * self.model.omega_l)

    @property
    def is_null(self) -> bool:
        return self.model.g == 0.0

    def with_coupling(self, g: float) -> "BathSpec":
        m = self.model
        return BathSpec(SpectralDensityModel(m.family, g, m.omega_d, m.omega_l,
                                             m.exponent),
                        self.beta, self.quadrature)

    def with_tolerance(self, abs_tol: float) -> "BathSpec":
        q = self.quadrature
        return BathSpec(self.model, self.beta,
                        QuadraturePolicy(q.omega_max, abs_tol, q.max_subdivisions))

    def segments(self, t_phase: float):
        """Quadrature segments ``(a, b, max_width)`` covering [0, omega_max].

        Widths resolve the phase ``omega * t_phase`` to pi/4 per panel, the
        sin(omega/omega_d) geometric factor, the Gaussian cutoff and, on a
        short initial segment, the poles of coth at 2 pi i n / beta.
        """
        tau = abs(t_phase)
        if self.model.has_geometric_factor:
            tau = max(tau, 1.0 / self.model.omega_d)
        width = self.model.omega_l / 4.0
        if tau > 0:
            width = min(width, math.pi / (4.0 * tau))
        top = self.omega_max
        thermal = min(16.0 * math.pi / self.beta, top)
        fine = min(width, math.pi / (2.0 * self.beta))
        segs = [(0.0, thermal, fine)]
        if thermal < top:
            segs.append((thermal, top, width))
        return segs

    def j_coth(self, omega, k: int = 0):
        """J(omega) coth(beta omega / 2) / omega**k, finite at omega -> 0."""
        omega = np.asarray(omega, dtype=float)
        x = 0.5 * self.beta * omega
        # coth(x) = (1/x) * x coth(x); x coth(x) -> 1 at 0
        with np.errstate(divide="ignore", invalid="ignore"):
            xcoth = np.where(np.abs(x) < _COTH_SERIES_THRESHOLD,
                             1.0 + x * x / 3.0, x / np.tanh(x))
        return self.model.over_power(omega, k + 1) * (2.0 / self.beta) * xcoth

    def integrate(self, f, t_phase: float, abs_tol: float | None = None):
        """Integrate ``f(omega)`` over [0, omega_max] under this bath's policy."""
        q = self.quadrature
        return integrate(f, self.segments(t_phase),
                         q.abs_tol if abs_tol is None else abs_tol,
                         q.max_subdivisions)


_T_CHUNK = 64


def response_function(bath: BathSpec, t, abs_tol: float | None = None):
    """Bath response alpha(t) in ps^-2; scalar or array ``t``."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("response_function needs finite times")
    out = np.zeros(t_arr.shape, dtype=complex)
    if not bath.is_null:
        flat = t_arr.ravel()
        res = np.empty(flat.shape, dtype=complex)
        for start in range(0, flat.size, _T_CHUNK):
            tc = flat[start:start + _T_CHUNK]

            def f(w, tc=tc):
                wt = np.outer(w, tc)
                return (bath.j_coth(w)[:, None] * np.cos(wt)
                        - 1j * bath.model(w)[:, None] * np.sin(wt))

            res[start:start + _T_CHUNK] = bath.integrate(
                f, float(np.max(np.abs(tc))), abs_tol) / math.pi
        out = res.reshape(t_arr.shape)
    if np.ndim(t) == 0:
        return complex(out.ravel()[0])
    return out


MEMORY_GRID_POINTS = 512
MEMORY_GRID_SPAN = 50.0  # in units of 1/omega_l


def memory_time(bath: BathSpec, fraction: float = 0.01) -> float:
    """Time after which max(|Re alpha|, |Im alpha|) stays below ``fraction``
    of its peak on the default uniform grid."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    if bath.is_null:
        return 0.0
    grid = np.linspace(0.0, MEMORY_GRID_SPAN / bath.model.omega_l,
                       MEMORY_GRID_POINTS)
    alpha = response_function(bath, grid)
    envelope = np.maximum(np.abs(alpha.real), np.abs(alpha.imag))
    above = np.nonzero(envelope >= fraction * envelope.max())[0]
    last = above[-1]
    if last == grid.size - 1:
        raise RuntimeError("response does not settle within the memory grid")
    return float(grid[last + 1])
