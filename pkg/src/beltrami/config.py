"""Run configuration: INI text with one ``[run.NAME]`` section per run.

Keys shared by all runs may go in ``[DEFAULT]``.  Recognized keys::

    mode        classify | sde | fpe | catalog-report          (required)
    field       catalog name, e.g. b1-classical                (classify, sde, fpe)
    H0          zero | cos-x | arithmetic expression in x, y, z (and t)
    D, gamma, kappa                 non-negative numbers
    preset      h-theorem (sets kappa = D / (2 gamma); an explicit kappa must agree)
    dt, steps, seed, scheme         time step, step count, 64-bit seed, heun | ito-euler
    bounds      six numbers: x_lo x_hi y_lo y_hi z_lo z_hi (``pi`` and ``2pi`` allowed)
    boundary    three kinds: periodic | reflecting | zero-flux
    grid        three cell counts (fpe, histograms)
    N           ensemble size (sde)
    initial     uniform | bump  (with bump_center = x y z and bump_width)
    stride      snapshot stride (sde); log stride (fpe)
    tol, max_steps                  steady-state tolerance and step cap (fpe)
    samples, class_tol              classification sample count and tolerance
    format      auto | csv | binary  (sde snapshot format)
    assert.METRIC = OP VALUE         e.g. ``assert.linf_error = <= 0.02``

Numbers may be written as ``pi``, ``2pi`` or simple products like ``2*pi``.
"""

from __future__ import annotations

import configparser
import math
import operator
import re
from dataclasses import asdict, dataclass, field as dc_field
from typing import Optional

from . import catalog
from .errors import ConfigError
from .expr import ExpressionError, resolve_h0

MODES = ("classify", "sde", "fpe", "catalog-report")
SCHEMES = ("heun", "ito-euler")
KINDS = ("periodic", "reflecting", "zero-flux")
OPERATORS = {"<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt, "==": operator.eq,
             "!=": operator.ne}
KNOWN_KEYS = {
    "mode", "field", "h0", "d", "gamma", "kappa", "preset", "dt", "steps", "seed", "scheme", "bounds",
    "boundary", "grid", "n", "initial", "bump_center", "bump_width", "stride", "tol", "max_steps", "samples",
    "class_tol", "format",
}
DEFAULTS = {
    "sde": {"dt": 1e-3, "steps": 1000, "N": 1000},
    "fpe": {"tol": 1e-9, "max_steps": 1_000_000},
}


@dataclass
class Assertion:
    metric: str
    op: str
    value: object

    def check(self, actual) -> bool:
        if actual is None:
            return False
        try:
            return bool(OPERATORS[self.op](actual, self.value))
        except TypeError:
            return False

    def __str__(self) -> str:
        return f"{self.metric} {self.op} {self.value}"


@dataclass
class RunConfig:
    name: str
    mode: str
    field: Optional[str] = None
    H0: str = "zero"
    D: float = 1.0
    gamma: float = 0.0
    kappa: float = 0.0
    preset: Optional[str] = None
    dt: Optional[float] = None
    steps: int = 0
    seed: int = 0
    scheme: str = "heun"
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None
    boundary: Optional[tuple] = None
    grid: tuple = (32, 32, 32)
    N: int = 1000
    initial: str = "uniform"
    bump_center: Optional[tuple] = None
    bump_width: float = 0.3
    stride: int = 0
    tol: float = 1e-9
    max_steps: int = 1_000_000
    samples: int = 1000
    class_tol: Optional[float] = None
    format: str = "auto"
    assertions: list = dc_field(default_factory=list)
    raw: dict = dc_field(default_factory=dict)

    @property
    def beta(self) -> float:
        return 0.0 if self.gamma == 0 else 2.0 * self.gamma / self.D

    def to_dict(self) -> dict:
        d = asdict(self)
        d["assertions"] = [str(a) for a in self.assertions]
        return d


_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi)?\s*$")


def parse_number(text: str) -> float:
    """Float with optional ``pi`` factor: ``1.5``, ``pi``, ``2pi``, ``-2*pi``."""
    m = _NUMBER.match(text)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ValueError(f"not a number: {text!r}")
    coef = float(m.group(1)) if m.group(1) not in (None, "+", "-") else 1.0
    return coef * (math.pi if m.group(2) else 1.0)


def _parse_value(text: str):
    t = text.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    try:
        return parse_number(t)
    except ValueError:
        return t


class _Collector:
    def __init__(self, run: str):
        self.run, self.errors = run, []

    def add(self, key: str, message: str) -> None:
        self.errors.append(f"[{self.run}] {key}: {message}")

    def number(self, sec, key, cast=float, minimum=None, strict=False):
        if key.lower() not in sec:
            return None
        raw = sec[key.lower()]
        try:
            v = parse_number(raw)
            if cast is int:
                if v != int(v):
                    raise ValueError
                v = int(v)
        except (ValueError, OverflowError):
            self.add(key, f"expected {'an integer' if cast is int else 'a number'}, got {raw!r}")
            return None
        if minimum is not None and (v < minimum or (strict and v == minimum)):
            self.add(key, f"must be {'>' if strict else '>='} {minimum}, got {raw}")
            return None
        return v

    def numbers(self, sec, key, count, cast=float):
        if key.lower() not in sec:
            return None
        parts = sec[key.lower()].replace(",", " ").split()
        if len(parts) != count:
            self.add(key, f"expected {count} values, got {len(parts)}")
            return None
        try:
            vals = [parse_number(p) for p in parts]
            if cast is int:
                if any(v != int(v) for v in vals):
                    raise ValueError
                vals = [int(v) for v in vals]
        except ValueError:
            self.add(key, f"could not parse {sec[key.lower()]!r}")
            return None
        return tuple(vals)


def _parse_run(name: str, sec) -> tuple:
    c = _Collector(name)
    cfg = RunConfig(name=name, mode="", raw={k: sec[k] for k in sec})

    for key in sec:
        if key.startswith("assert."):
            metric = key[len("assert."):]
            m = re.match(r"^\s*(<=|>=|==|!=|<|>)\s*(.+?)\s*$", sec[key])
            if not metric or not m:
                c.add(key, f"expected '<op> <value>' with op in {list(OPERATORS)}, got {sec[key]!r}")
            else:
                cfg.assertions.append(Assertion(metric, m.group(1), _parse_value(m.group(2))))
        elif key not in KNOWN_KEYS:
            c.add(key, "unknown key")

    mode = sec.get("mode")
    if mode is None:
        c.add("mode", "missing required key")
    elif mode not in MODES:
        c.add("mode", f"must be one of {MODES}, got {mode!r}")
    else:
        cfg.mode = mode

    entry = None
    if "field" in sec:
        try:
            entry = catalog.get_entry(sec["field"])
            cfg.field = sec["field"]
        except KeyError as exc:
            c.add("field", exc.args[0])
    elif cfg.mode in ("classify", "sde", "fpe"):
        c.add("field", f"missing required key for mode {cfg.mode}")

    if "h0" in sec:
        try:
            resolve_h0(sec["h0"])
            cfg.H0 = sec["h0"]
        except ExpressionError as exc:
            c.add("H0", str(exc))

    for key, attr, kw in (("D", "D", dict(minimum=0.0)), ("gamma", "gamma", dict(minimum=0.0)),
                          ("kappa", "kappa", dict(minimum=0.0)), ("dt", "dt", dict(minimum=0.0, strict=True)),
                          ("tol", "tol", dict(minimum=0.0, strict=True)), ("bump_width", "bump_width",
                                                                           dict(minimum=0.0, strict=True))):
        v = c.number(sec, key, **kw)
        if v is not None:
            setattr(cfg, attr, v)
    if cfg.gamma > 0 and cfg.D == 0:
        c.add("D", "must be > 0 when gamma > 0, since beta = 2 gamma / D")
    for key, attr, minimum in (("steps", "steps", 0), ("N", "N", 1), ("stride", "stride", 0),
                               ("max_steps", "max_steps", 0), ("samples", "samples", 1)):
        v = c.number(sec, key, int, minimum)
        if v is not None:
            setattr(cfg, attr, v)
    seed = c.number(sec, "seed", int, 0)
    if seed is not None:
        if seed >= 2**64:
            c.add("seed", "must fit in 64 bits")
        else:
            cfg.seed = seed
    tol = c.number(sec, "class_tol", minimum=0.0, strict=True)
    if tol is not None:
        cfg.class_tol = tol

    if "scheme" in sec:
        if sec["scheme"] not in SCHEMES:
            c.add("scheme", f"must be one of {SCHEMES}")
        else:
            cfg.scheme = sec["scheme"]
    if "format" in sec:
        if sec["format"] not in ("auto", "csv", "binary"):
            c.add("format", "must be auto, csv or binary")
        else:
            cfg.format = sec["format"]
    if "initial" in sec:
        if sec["initial"] not in ("uniform", "bump"):
            c.add("initial", "must be uniform or bump")
        else:
            cfg.initial = sec["initial"]

    if "preset" in sec:
        if sec["preset"] != "h-theorem":
            c.add("preset", f"unknown preset {sec['preset']!r} (only 'h-theorem')")
        elif cfg.gamma <= 0 or cfg.D <= 0:
            c.add("preset", "h-theorem needs D > 0 and gamma > 0")
        else:
            want = cfg.D / (2.0 * cfg.gamma)
            if "kappa" in sec and not math.isclose(cfg.kappa, want, rel_tol=1e-12, abs_tol=0.0):
                c.add("kappa", f"inconsistent with preset h-theorem: kappa = {cfg.kappa} but D/(2 gamma) = {want}")
            cfg.preset, cfg.kappa = "h-theorem", want

    bounds = c.numbers(sec, "bounds", 6)
    if bounds is not None:
        lo, hi = bounds[0::2], bounds[1::2]
        if any(a >= b for a, b in zip(lo, hi)):
            c.add("bounds", "each lower bound must be below its upper bound")
        else:
            cfg.lower, cfg.upper = tuple(lo), tuple(hi)
    elif entry is not None:
        cfg.lower, cfg.upper = tuple(entry.box[0]), tuple(entry.box[1])
    if "boundary" in sec:
        kinds = tuple(sec["boundary"].replace(",", " ").split())
        if len(kinds) != 3 or any(k not in KINDS for k in kinds):
            c.add("boundary", f"expected three of {KINDS}, got {sec['boundary']!r}")
        else:
            cfg.boundary = kinds
    elif entry is not None:
        cfg.boundary = tuple("periodic" if p else "reflecting" for p in entry.periodic)

    grid = c.numbers(sec, "grid", 3, int)
    if grid is not None:
        if min(grid) < 8:
            c.add("grid", "at least 8 cells per axis required")
        else:
            cfg.grid = grid
    center = c.numbers(sec, "bump_center", 3)
    if center is not None:
        cfg.bump_center = center

    if cfg.mode in DEFAULTS:
        for key, value in DEFAULTS[cfg.mode].items():
            if key.lower() not in sec:
                setattr(cfg, key, value)
    if cfg.mode == "sde" and cfg.dt is None:
        cfg.dt = DEFAULTS["sde"]["dt"]
    return cfg, c.errors


def parse_config(text: str) -> list:
    """Parse INI text into a list of RunConfig; raises ConfigError listing every problem."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    sections = [s for s in parser.sections() if s == "run" or s.startswith("run.")]
    errors = [f"[{s}] unknown section (expected [run] or [run.NAME])" for s in parser.sections()
              if s not in sections]
    if not sections:
        errors.append("no [run] or [run.NAME] section found")
    runs = []
    for s in sections:
        name = s[4:] if s.startswith("run.") else "run"
        cfg, errs = _parse_run(name, parser[s])
        errors.extend(errs)
        runs.append(cfg)
    names = [r.name for r in runs]
    errors.extend(f"[run.{n}] duplicate run name" for n in sorted({n for n in names if names.count(n) > 1}))
    if errors:
        raise ConfigError(errors)
    return runs


def parse_config_file(path) -> list:
    with open(path) as fh:
        return parse_config(fh.read())
