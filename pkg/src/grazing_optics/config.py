"""Scenario files: a sectioned ``key = value`` text format with typed values.

Grammar (one construct per line; ``#`` and ``;`` start comments)::

    [section]
    key = value

Values are typed by a fixed schema: ``int``, ``float``, ``str``, ``bool``,
``floats`` (comma-separated list) and ``matrix`` (rows separated by ``;``,
entries by commas).  Unknown sections or keys, malformed values and missing
required keys raise :class:`ConfigError` carrying the line and column.
:func:`dump_scenario` writes the canonical form, and parsing that text gives
back an equal :class:`Scenario`.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GrazingError
from .obstacle import GraphObstacle, QUARTIC_VARIANTS

# section -> key -> (type, default); default None means required
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "scenario": {"name": ("str", "scenario"), "seed": ("int", 0), "output": ("str", "out")},
    "obstacle": {"family": ("str", None), "dim": ("int", 2), "r": ("float", 1.0),
                 "coefficients": ("floats", (1.0,)), "k": ("int", 2), "variant": ("str", "F1"),
                 "remainder": ("float", 0.0), "h": ("floats", (1.0,)), "lambda": ("matrix", ((1.0,),)),
                 "expression": ("str", "")},
    "incidence": {"theta": ("floats", (1.0,))},
    "chart": {"s0": ("float", 0.5), "patch": ("float", 0.8), "n_s": ("int", 41), "n_params": ("int", 41),
              "samples": ("int", 10000)},
    "asymptotics": {"T": ("float", 0.5), "eps": ("floats", (0.1, 0.05, 0.025)), "mu": ("floats", (0.1,)),
                    "rho": ("floats", (1e-3,)), "N": ("int", 4), "M": ("int", 3)},
    "data": {"center": ("floats", (0.825, -1.1)), "width": ("floats", (0.225, 0.15)),
             "amplitude": ("float", 0.5), "mean_amplitude": ("float", 0.0),
             "mean_center": ("floats", (1.1, -0.6)), "mean_width": ("float", 0.3)},
    "source": {"kind": ("str", "zero"), "kappa": ("float", 0.0)},
    "grids": {"n_incoming": ("floats", (21, 21, 41)), "n_reflected": ("floats", (41, 31, 41)),
              "fd_h": ("float", 0.03), "ppw": ("float", 12.0), "max_nodes": ("float", 4e8)},
    "tolerances": {"flow": ("float", 1e-10), "jacobian": ("float", 1e-6), "matrix": ("float", 1e-12),
                   "transport": ("float", 1e-6), "picard": ("float", 1e-10), "oscillatory": ("float", 0.02)},
}

REQUIRED_SECTIONS = ("obstacle",)
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^(\s*)([^=:#;\s][^=:]*?)\s*[=:]\s*(.*)$")


@dataclass
class Scenario:
    """Typed scenario: ``values[section][key]`` for every schema entry."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, Scenario) and self.values == other.values

    @property
    def seed(self) -> int:
        return int(self.values["scenario"]["seed"])

    @property
    def theta(self) -> np.ndarray:
        th = np.asarray(self.values["incidence"]["theta"], float)
        return th / np.linalg.norm(th)

    @property
    def eps(self) -> tuple[float, ...]:
        return tuple(self.values["asymptotics"]["eps"])

    def obstacle(self) -> GraphObstacle:
        o = self.values["obstacle"]
        fam, dim, r = o["family"], o["dim"], o["r"]
        if fam == "Poly2D":
            params: tuple = (tuple(o["coefficients"]),)
            dim = 2
        elif fam in ("IsoPower", "AxisPower"):
            params = (o["k"],)
        elif fam == "ExpFlat":
            params = ()
        elif fam == "Quartic3D":
            params = (o["variant"], o["remainder"])
            dim = 3
        elif fam == "Radial":
            params = (tuple(o["h"]), tuple(tuple(row) for row in o["lambda"]))
            dim = len(o["lambda"]) + 1
        else:
            params = (o["expression"],)
        return GraphObstacle(fam, params, r, dim)

    def digest(self) -> str:
        return hashlib.sha256(dump_scenario(self).encode()).hexdigest()


def _format(kind: str, v) -> str:
    if kind == "floats":
        return ", ".join(repr(float(x)) for x in v)
    if kind == "matrix":
        return "; ".join(", ".join(repr(float(x)) for x in row) for row in v)
    if kind == "float":
        return repr(float(v))
    if kind == "bool":
        return "true" if v else "false"
    return str(v)


def _convert(kind: str, text: str):
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "floats":
        if not text:
            raise ValueError("empty list")
        return tuple(float(x) for x in text.split(","))
    if kind == "matrix":
        rows = tuple(tuple(float(x) for x in row.split(",")) for row in text.split(";"))
        if len({len(r) for r in rows}) != 1:
            raise ValueError("matrix rows have different lengths")
        return rows
    return text


def _positions(text: str) -> tuple[dict, dict]:
    """Line numbers of section headers and (line, value column) of keys."""
    sections, keys = {}, {}
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(raw)
        if m:
            current = m.group(1).strip()
            sections.setdefault(current, i)
            continue
        m = _KEY_RE.match(raw)
        if m and current is not None and not raw.lstrip().startswith(("#", ";")):
            key = m.group(2).strip()
            col = m.start(3) + 1
            keys.setdefault((current, key), (i, col, m.start(2) + 1))
    return sections, keys


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text; every error carries a line and column."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   strict=True, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key '{exc.option}' in [{exc.section}]", exc.lineno, 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, 1) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, 1) from None
    sections, keys = _positions(text)
    values: dict[str, dict] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", sections.get(sec), 1)
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                line, _, kcol = keys.get((sec, key), (sections.get(sec), 1, 1))
                raise ConfigError(f"unknown key '{key}' in [{sec}]", line, kcol)
    for sec, spec in SCHEMA.items():
        values[sec] = {}
        for key, (kind, default) in spec.items():
            if cp.has_section(sec) and key in cp[sec]:
                line, col, _ = keys.get((sec, key), (None, None, None))
                try:
                    values[sec][key] = _convert(kind, cp[sec][key])
                except ValueError as exc:
                    raise ConfigError(f"bad {kind} value for '{key}' in [{sec}]: {exc}", line, col) from None
            elif default is None:
                where = sections.get(sec)
                if where is None:
                    raise ConfigError(f"missing section [{sec}] (required key '{key}')", 1, 1)
                raise ConfigError(f"missing required key '{key}' in [{sec}]", where, 1)
            else:
                values[sec][key] = default
    sc = Scenario(values)
    _validate(sc, sections, keys)
    return sc


def _validate(sc: Scenario, sections: dict, keys: dict):
    def fail(msg, sec, key):
        line, col, _ = keys.get((sec, key), (sections.get(sec, 1), 1, 1))
        raise ConfigError(msg, line, col)

    o = sc["obstacle"]
    from .obstacle import FAMILIES
    if o["family"] not in FAMILIES:
        fail(f"unknown obstacle family '{o['family']}'", "obstacle", "family")
    if o["family"] == "Quartic3D" and o["variant"] not in QUARTIC_VARIANTS:
        fail(f"unknown Quartic3D variant '{o['variant']}'", "obstacle", "variant")
    if o["family"] == "Custom" and not o["expression"]:
        fail("Custom obstacles need an expression", "obstacle", "family")
    if not o["r"] > 0:
        fail("r must be positive", "obstacle", "r")
    try:
        ob = sc.obstacle()
    except (ValueError, TypeError, GrazingError) as exc:
        fail(f"invalid obstacle: {exc}", "obstacle", "family")
    th = np.asarray(sc["incidence"]["theta"], float)
    if len(th) != ob.m:
        fail(f"theta needs {ob.m} components for a {ob.dim}-dimensional obstacle", "incidence", "theta")
    if not np.linalg.norm(th) > 0:
        fail("theta must be nonzero", "incidence", "theta")
    eps = sc["asymptotics"]["eps"]
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        fail("eps schedule must be positive and strictly decreasing", "asymptotics", "eps")
    for key, v in sc["tolerances"].items():
        if not v > 0:
            fail(f"tolerance '{key}' must be positive", "tolerances", key)
    from .transport import SourceSpec
    if sc["source"]["kind"] not in SourceSpec.KINDS:
        fail(f"unknown source kind '{sc['source']['kind']}'", "source", "kind")
    for key in ("mu", "rho"):
        if any(v <= 0 for v in sc["asymptotics"][key]):
            fail(f"{key} values must be positive", "asymptotics", key)


def dump_scenario(sc: Scenario) -> str:
    """Canonical text: every schema key in schema order."""
    out = []
    for sec, spec in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, (kind, _) in spec.items():
            out.append(f"{key} = {_format(kind, sc.values[sec][key])}")
        out.append("")
    return "\n".join(out)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


PARABOLA_SCENARIO = """\
[scenario]
name = parabola
seed = 0

[obstacle]
family = Poly2D
coefficients = 1.0
r = 2.0

[incidence]
theta = 1.0

[asymptotics]
T = 0.5
eps = 0.1, 0.05, 0.025
mu = 0.1
N = 4
M = 3
"""
