"""Command configuration: INI files and command-line flags.

A config file has a [run] section with the command and its options, an
[ensemble] section (family, U, R, m, n_max, overrides) and an optional
[thresholds] section for the verdict cutoffs.  Every key may also be given
as a flag of the same name; flags win over the file.

    [run]
    command = verdict
    n = 200,500,1000
    B = power:0.4
    format = json

    [ensemble]
    family = multiset
    U = all
    R = unbounded
    m = 1

    [thresholds]
    sigma_lambda_M = 0.05
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Optional

from .ensemble import EnsembleSpec, build_ensemble
from .errors import ParseError, TiltCombError
from .sampling import MAX_SEED, STATISTICS
from .tv import CONDITIONS

COMMANDS = ("count", "approx", "tilt", "budget", "tv", "verdict", "sample", "stats", "report")
FORMATS = ("csv", "json")
ENSEMBLE_KEYS = ("family", "U", "R", "m", "n_max", "overrides")
RUN_KEYS = ("command", "n", "B", "x", "seed", "out", "format", "samples", "statistic", "mode", "jobs",
            "C2", "C3", "lambda", "exact", "samples_out")
SECTIONS = {"run": RUN_KEYS, "ensemble": ENSEMBLE_KEYS, "thresholds": CONDITIONS}


@dataclass(frozen=True)
class BRule:
    """Index subset B as a function of n."""

    text: str = "all"

    def __post_init__(self):
        self.resolve(10)  # validates

    def resolve(self, n: int):
        """Sorted list of indices in [1, n], or None for all of [n]."""
        t = self.text.strip()
        kind, _, arg = t.partition(":")
        kind = kind.strip().lower()
        try:
            if kind == "all":
                return None
            if kind == "none":
                return []
            if kind == "odd":
                return list(range(1, n + 1, 2))
            if kind == "even":
                return list(range(2, n + 1, 2))
            if kind == "prefix":
                k = int(arg)
                if k < 0:
                    raise ValueError
                return list(range(1, min(k, n) + 1))
            if kind == "power":
                a = float(arg)
                if not 0 < a <= 1:
                    raise ValueError
                return list(range(1, min(int(math.floor(n ** a + 1e-12)), n) + 1))
            if kind == "list":
                vals = sorted({int(v) for v in arg.split(",") if v.strip()})
                if any(v < 1 for v in vals):
                    raise ValueError
                return [v for v in vals if v <= n]
        except ValueError:
            raise ParseError(f"bad B rule {t!r}", field="B") from None
        raise ParseError(f"unknown B rule {t!r}; expected all, none, odd, even, prefix:k, power:a or "
                         "list:i,j,...", field="B")


@dataclass(frozen=True)
class CommandConfig:
    command: str
    ensemble: dict
    n: tuple = ()
    B: str = "all"
    x: Optional[float] = None
    seed: int = 0
    out: Optional[str] = None
    format: str = "json"
    samples: int = 1000
    statistic: str = "smallest_gap"
    mode: str = "conditional"
    jobs: int = 1
    C2: float = 10.0
    C3: float = 0.1
    lam: float = math.exp(-1.0)
    exact: Optional[bool] = None
    samples_out: Optional[str] = None
    thresholds: dict = field(default_factory=dict)

    def ensemble_spec(self) -> EnsembleSpec:
        top = max(self.n) if self.n else 0
        cfg = dict(self.ensemble)
        cfg["n_max"] = max(int(cfg.get("n_max", 0) or 0), top, 1)
        return build_ensemble(cfg)

    def b_rule(self) -> BRule:
        return BRule(self.B)

    def echo(self) -> dict:
        """Config as plain JSON-able data (output paths excluded)."""
        out = asdict(self)
        out.pop("out")
        out.pop("samples_out")
        out["jobs"] = None  # never affects results
        out["n"] = list(self.n)
        out["seed"] = str(self.seed)
        return out


def _int_grid(text: str, key: str) -> tuple:
    try:
        vals = tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise ParseError(f"{key} must be a comma-separated list of integers, got {text!r}", field=key) from None
    if not vals:
        raise ParseError(f"{key} is empty", field=key)
    if any(v < 1 for v in vals):
        raise ParseError(f"{key} values must be positive", field=key)
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ParseError(f"{key} grid must be strictly increasing, got {text!r}", field=key)
    return vals


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


_CONVERT = {
    "x": float, "seed": int, "samples": int, "jobs": int, "C2": float, "C3": float, "lambda": float,
    "exact": _bool,
}


def _key_lines(text: str) -> dict:
    """(section, key) -> line number, for diagnostics."""
    where = {}
    section = None
    for ln, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = ln
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            where[(section, m.group(1).strip())] = ln
    return where


def read_config_file(path) -> dict:
    """Flat {section: {key: value}} from an INI file; unknown keys rejected."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (U, R, C2, ...)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as err:
        raise ParseError(f"malformed config: {err}", line=getattr(err, "lineno", None)) from None
    lines = _key_lines(text)
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ParseError(f"unknown section [{section}]", line=lines.get((section, None)), field=section)
        for key, value in cp.items(section):
            if key not in SECTIONS[section]:
                raise ParseError(f"unknown key {key!r} in [{section}]", line=lines.get((section, key)),
                                 field=key)
            out.setdefault(section, {})[key] = (value, lines.get((section, key)))
    return out


def build_config(values: dict) -> CommandConfig:
    """CommandConfig from {section: {key: (value, line)}}; values may come from flags (line None)."""
    run = values.get("run", {})
    ens = {k: v for k, (v, _) in values.get("ensemble", {}).items()}
    kw = {}
    if "command" not in run:
        raise ParseError("no command given", field="command")
    command = str(run["command"][0]).strip()
    if command not in COMMANDS:
        raise ParseError(f"unknown command {command!r}; expected one of {COMMANDS}", line=run["command"][1],
                         field="command")
    for key, (value, line) in run.items():
        if key == "command":
            continue
        try:
            if key == "n":
                kw["n"] = _int_grid(value, "n")
            elif key in _CONVERT:
                kw["lam" if key == "lambda" else key] = _CONVERT[key](value)
            else:
                kw[key] = str(value)
        except ParseError as err:
            raise ParseError(err.message, line=line, field=key) from None
        except ValueError:
            raise ParseError(f"bad value {value!r} for {key}", line=line, field=key) from None
    thr = {}
    for key, (value, line) in values.get("thresholds", {}).items():
        try:
            thr[key] = float(value)
        except ValueError:
            raise ParseError(f"bad threshold {value!r} for {key}", line=line, field=key) from None
    cfg = CommandConfig(command, ens, thresholds=thr, **kw)
    _validate(cfg, run)
    return cfg


def _validate(cfg: CommandConfig, run: dict):
    def fail(msg, key):
        raise ParseError(msg, line=run.get(key, (None, None))[1], field=key)

    if cfg.format not in FORMATS:
        fail(f"format must be one of {FORMATS}, got {cfg.format!r}", "format")
    if not 0 <= cfg.seed <= MAX_SEED:
        fail(f"seed must be an unsigned 64-bit integer, got {cfg.seed}", "seed")
    if cfg.jobs < 1:
        fail("jobs must be >= 1", "jobs")
    if cfg.samples < 1:
        fail("samples must be >= 1", "samples")
    if cfg.statistic not in STATISTICS:
        fail(f"statistic must be one of {STATISTICS}", "statistic")
    if cfg.mode not in ("free", "conditional"):
        fail("mode must be free or conditional", "mode")
    if cfg.x is not None and not cfg.x > 0:
        fail("x must be positive", "x")
    if cfg.command not in ("report", "sample") and not cfg.n:
        fail(f"command {cfg.command} needs n", "n")
    if cfg.command == "sample" and not cfg.n and cfg.x is None:
        fail("sample needs n (exact size) or x (free process)", "n")
    try:
        BRule(cfg.B)
    except ParseError as err:
        fail(err.message, "B")
    if cfg.command != "report":
        try:
            cfg.ensemble_spec()
        except TiltCombError as err:
            raise ParseError(f"invalid ensemble: {err}", field=getattr(err, "field", None)) from None
