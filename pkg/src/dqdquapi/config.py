"""INI-style run configuration.

Every section and key is declared in ``SCHEMA``; anything else is rejected
with the offending line number.  Parsed values are typed and defaults are
filled in, so ``RunConfig.echo()`` lists the complete resolved input and a
run can be rebuilt from that echo alone.
"""

import configparser
import itertools
import math
import re
from dataclasses import dataclass, field

from .analysis import INV_E
from .bath import (GAAS, BathSpec, Family, MaterialParams, SpectralDensityModel,
                   derive_geometry)
from .quadrature import QuadraturePolicy

REQUIRED = object()
DEFAULT_SWEEP_CAP = 10_000


class ConfigError(ValueError):
    """``kind`` is ``"parse"`` or ``"validation"``."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"not a finite number: {text!r}")
    return v


def _int(text: str) -> int:
    return int(text.strip())


def _floats(text: str) -> tuple:
    return tuple(_float(x) for x in text.split(",") if x.strip())


_QUADRATURE_KEYS = {"omega_max": (_float, None), "abs_tol": (_float, 1e-10),
                    "max_subdivisions": (_int, 8)}

SCHEMA = {
    "bath": {"family": (str, REQUIRED), "g": (_float, REQUIRED),
             "omega_d": (_float, 0.02), "omega_l": (_float, 0.5),
             "exponent": (_float, 1.0), "temperature_mK": (_float, REQUIRED),
             **_QUADRATURE_KEYS},
    "material": {"family": (str, REQUIRED), "preset": (str, "gaas"),
                 "M": (_float, None), "Xi": (_float, None), "rho": (_float, None),
                 "s": (_float, None), "x": (_float, None), "d_nm": (_float, None),
                 "l_nm": (_float, None), "temperature_mK": (_float, REQUIRED),
                 **_QUADRATURE_KEYS},
    "system": {"t_c": (_float, None), "t_c_ratio": (_float, None)},
    "numerics": {"delta_t": (_float, REQUIRED), "n_steps": (_int, REQUIRED),
                 "dkmax": (_int, 1), "verify_eta": (_bool, True)},
    "analysis": {"threshold": (_float, INV_E), "delta_omega": (_float, None)},
    "outputs": {"trajectory": (str, "trajectory.csv"), "summary": (str, "summary.txt"),
                "bloch": (_bool, True), "eta_table": (str, None)},
    "sweep": {"cap": (_int, DEFAULT_SWEEP_CAP), "convergence_check": (_bool, True)},
    "figures": {"g_piezoelectric": (_float, 0.035), "g_deformation": (_float, 0.029),
                "omega_l_values": (_floats, (0.5, 0.7)),
                "alpha_t_max": (_float, 10.0), "alpha_points": (_int, 201),
                "delta_t_piezoelectric": (_float, None),
                "delta_t_deformation": (_float, None),
                "n_steps_piezoelectric": (_int, None),
                "n_steps_deformation": (_int, None)},
}

_MATERIAL_FIELDS = {"M": "M", "Xi": "Xi", "rho": "rho", "s": "s", "x": "x",
                    "d_nm": "d", "l_nm": "l"}
_PRESETS = {"gaas": GAAS}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict:
    """(section, key) -> first line number, for diagnostics."""
    index, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), n)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            index.setdefault((section, m.group(1)), n)
    return index


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class RunConfig:
    sections: dict
    axes: tuple = field(default=())  # ((section, key, values), ...) for sweeps

    def __getitem__(self, section):
        return self.sections.get(section, {})

    @property
    def source(self) -> str:
        return "bath" if "bath" in self.sections else "material"

    def models(self):
        """(model, temperature_mK, quadrature) for the configured source."""
        q = self._quadrature()
        if self.source == "bath":
            b = self["bath"]
            model = SpectralDensityModel(Family.parse(b["family"]), b["g"],
                                         b["omega_d"], b["omega_l"], b["exponent"])
            return model, b["temperature_mK"], q
        m = self["material"]
        base = _PRESETS[m["preset"].lower()]
        overrides = {attr: m[key] for key, attr in _MATERIAL_FIELDS.items()
                     if m[key] is not None}
        material = MaterialParams(**{**base.__dict__, **overrides})
        pz, df = derive_geometry(material)
        family = Family.parse(m["family"])
        if family is Family.PIEZOELECTRIC:
            return pz, m["temperature_mK"], q
        if family is Family.DEFORMATION:
            return df, m["temperature_mK"], q
        raise ConfigError("validation", "material section supports piezoelectric "
                          "or deformation families only")

    def _quadrature(self) -> QuadraturePolicy:
        s = self[self.source]
        return QuadraturePolicy(s["omega_max"], s["abs_tol"], s["max_subdivisions"])

    def bath(self) -> BathSpec:
        model, temperature, q = self.models()
        return BathSpec.from_temperature(model, temperature, q)

    def t_c(self) -> float:
        s = self["system"]
        if s["t_c"] is not None:
            return s["t_c"]
        return s["t_c_ratio"] * self.models()[0].omega_l

    def with_value(self, section: str, key: str, value) -> "RunConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        sections[section][key] = value
        if section == "system":
            other = "t_c_ratio" if key == "t_c" else "t_c"
            sections["system"][other] = None
        return validate(RunConfig(sections, self.axes))

    def with_tolerance(self, abs_tol: float) -> "RunConfig":
        return self.with_value(self.source, "abs_tol", abs_tol)

    def cells(self):
        """Cartesian product of the sweep axes, first axis slowest."""
        if not self.axes:
            return [((), self)]
        out = []
        for combo in itertools.product(*(values for _, _, values in self.axes)):
            cfg = self
            for (section, key, _), value in zip(self.axes, combo):
                cfg = cfg.with_value(section, key, value)
            out.append((combo, cfg))
        return out

    def cell_count(self) -> int:
        n = 1
        for _, _, values in self.axes:
            n *= len(values)
        return n

    def echo(self) -> dict:
        """Flat ``section.key -> text`` map of the resolved configuration."""
        out = {}
        for section in SCHEMA:
            if section not in self.sections:
                continue
            for key, value in self.sections[section].items():
                if value is not None:
                    out[f"{section}.{key}"] = _render(value)
        for section, key, values in self.axes:
            out[f"sweep.{section}.{key}"] = _render(tuple(values))
        return out


def _convert(section, key, raw, conv, lines):
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        line = lines.get((section, key), "?")
        raise ConfigError("parse", f"line {line}: invalid value for "
                          f"[{section}] {key}: {exc}") from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text."""
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("parse", f"malformed configuration: {exc}") from None
    sections, axes = {}, []
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError("parse", f"line {lines.get((section, None), '?')}: "
                              f"unknown section [{section}]")
        schema = SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if section == "sweep" and "." in key:
                target, _, name = key.partition(".")
                if target not in SCHEMA or name not in SCHEMA[target] \
                        or SCHEMA[target][name][0] not in (_float, _int):
                    raise ConfigError("parse", f"line {lines.get((section, key), '?')}: "
                                      f"sweep axis {key} is not a numeric field")
                conv = SCHEMA[target][name][0]
                vals = _convert(section, key, raw,
                                lambda r: tuple(conv(x) for x in r.split(",") if x.strip()),
                                lines)
                if not vals:
                    raise ConfigError("parse", f"line {lines.get((section, key), '?')}: "
                                      f"sweep axis {key} has no values")
                axes.append((target, name, vals))
                continue
            if key not in schema:
                raise ConfigError("parse", f"line {lines.get((section, key), '?')}: "
                                  f"unknown key {key!r} in [{section}]")
            values[key] = _convert(section, key, raw, schema[key][0], lines)
        for key, (_, default) in schema.items():
            if key not in values:
                if default is REQUIRED:
                    raise ConfigError("parse", f"[{section}] is missing required key {key!r}")
                values[key] = default
        sections[section] = values
    for section, _, _ in axes:
        if section not in sections:
            raise ConfigError("validation", f"sweep axis refers to absent section [{section}]")
    for section in ("system", "numerics", "analysis", "outputs", "sweep", "figures"):
        if section not in sections:
            sections[section] = {k: (None if d is REQUIRED else d)
                                 for k, (_, d) in SCHEMA[section].items()}
    return validate(RunConfig(sections, tuple(axes)))


def validate(cfg: RunConfig) -> RunConfig:
    s = cfg.sections
    if ("bath" in s) == ("material" in s):
        raise ConfigError("validation", "exactly one of [bath] or [material] is required")
    if s["numerics"]["delta_t"] is None or s["numerics"]["n_steps"] is None:
        raise ConfigError("validation", "[numerics] needs delta_t and n_steps")
    system = s["system"]
    if (system["t_c"] is None) == (system["t_c_ratio"] is None):
        raise ConfigError("validation", "give exactly one of t_c or t_c_ratio in [system]")
    if "material" in s and s["material"]["preset"].lower() not in _PRESETS:
        raise ConfigError("validation", f"unknown material preset {s['material']['preset']!r}")
    num = s["numerics"]
    if num["delta_t"] <= 0:
        raise ConfigError("validation", "delta_t must be positive")
    if num["n_steps"] < 1:
        raise ConfigError("validation", "n_steps must be >= 1")
    if num["dkmax"] < 1:
        raise ConfigError("validation", "dkmax must be >= 1")
    try:
        cfg.bath()
        if cfg.t_c() < 0:
            raise ValueError("t_c must be non-negative")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("validation", str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_from_echo(echo: dict) -> RunConfig:
    """Rebuild a configuration from ``RunConfig.echo()`` output."""
    by_section = {}
    for dotted, text in echo.items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA:
            continue
        by_section.setdefault(section, []).append(f"{key} = {text}")
    return parse_config("\n".join(f"[{sec}]\n" + "\n".join(body)
                                  for sec, body in by_section.items()) + "\n")


def parse_header(text: str) -> dict:
    """Read back the ``# key = value`` comment block written ahead of a CSV."""
    out = {}
    for line in text.splitlines():
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition(" = ")
        out[key] = value
    return out
