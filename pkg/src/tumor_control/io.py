"""Run configuration, snapshot files, and CSV writers.

Configuration is INI-style text::

    [domain]
    dim = 1
    lengths = 1.0
    cells = 64
    # comments start with '#'

Profiles for initial data and targets are written as a preset name followed
by ``key=value`` parameters, e.g. ``phi0 = cosine a=0.5 b=0``.
"""
from __future__ import annotations

import configparser
import csv
import io
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cost import CostSpec
from .grid import Domain, GridError, build_domain
from .optimizer import ControlBox, OptimizerConfig
from .potentials import PotentialSpec
from .presets import PRESETS, profile
from .problem import ControlProblem
from .state import Controls, ModelParams, SolverOptions, StateSnapshot, TimeGrid


class ConfigError(ValueError):
    def __init__(self, kind: str, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{kind}{where}: {message}")
        self.kind = kind
        self.line = line


class SnapshotFormatError(ValueError):
    pass


# section -> key -> (default text, parser)
def _floats(s):
    return tuple(float(x) for x in re.split(r"[,\s]+", s.strip()) if x)


def _ints(s):
    return tuple(int(x) for x in re.split(r"[,\s]+", s.strip()) if x)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _step(s):
    s = s.strip()
    return None if s.lower() == "auto" else float(s)


def _preset(s):
    parts = s.split()
    if not parts or parts[0] not in PRESETS:
        raise ValueError(f"expected a preset name from {PRESETS}, got {s!r}")
    params = {}
    for item in parts[1:]:
        key, sep, val = item.partition("=")
        if not sep or key not in ("a", "b", "width"):
            raise ValueError(f"bad preset parameter {item!r}; use a=, b=, width=")
        params[key] = float(val)
    return (parts[0], params)


SCHEMA = {
    "run": {"seed": ("0", int)},
    "domain": {"dim": ("1", int), "lengths": ("1.0", _floats), "cells": ("64", _ints)},
    "time": {"T": ("1.0", float), "steps": ("50", int)},
    "model": {
        "alpha": ("1.0", float), "beta": ("1.0", float), "chi": ("1.0", float),
        "P": ("1.0", float), "A": ("0.5", float), "B": ("1.0", float), "D": ("1.0", float),
        "sigma_s": ("1.0", float),
    },
    "potential": {"variant": ("logarithmic", str), "k": ("2.0", float), "eps": ("0.01", float)},
    "h": {"variant": ("quintic_smoothstep", str)},
    "init": {
        "mu0": ("constant a=0", _preset),
        "phi0": ("cosine a=0.5 b=0", _preset),
        "sigma0": ("constant a=1", _preset),
    },
    "cost": {
        "gamma1": ("0", float), "gamma2": ("1", float), "gamma3": ("0", float),
        "gamma4": ("1", float), "gamma5": ("0.01", float), "gamma6": ("0.01", float),
        "phi_Q": ("cosine a=-0.5 b=-0.2", _preset), "sigma_Q": ("constant a=0.5", _preset),
        "phi_Omega": ("constant a=-1", _preset), "sigma_Omega": ("constant a=0", _preset),
    },
    "box": {"u_lo": ("0", float), "u_hi": ("1", float), "w_lo": ("-1", float), "w_hi": ("1", float)},
    "controls": {"u": ("midpoint", str), "w": ("midpoint", str)},
    "solver": {"newton_tol": ("1e-12", float), "max_iter": ("25", int),
               "keep_factorizations": ("true", _bool)},
    "optimizer": {
        "max_iters": ("200", int), "tol": ("1e-6", float), "step_rule": ("fixed", str),
        "armijo_c1": ("1e-4", float), "backtrack_factor": ("0.5", float), "initial_step": ("auto", _step),
    },
    "verify": {"probes": ("5", int), "fd_step": ("1e-5", float), "duality_tol": ("1e-10", float),
               "gradient_tol": ("1e-6", float), "mass_tol": ("1e-10", float)},
    "output": {"directory": ("out", str), "cadence": ("10", int)},
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if cur == section and key is not None and "=" in line and line.split("=", 1)[0].strip() == key:
            return i
    return None


@dataclass
class RunConfig:
    values: dict
    text: str = ""

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    # -- builders --
    @property
    def domain(self) -> Domain:
        d = self.values["domain"]
        return build_domain(d["dim"], d["lengths"], d["cells"])

    @property
    def timegrid(self) -> TimeGrid:
        return TimeGrid(self.values["time"]["T"], self.values["time"]["steps"])

    @property
    def params(self) -> ModelParams:
        return ModelParams(**self.values["model"])

    @property
    def potential(self) -> PotentialSpec:
        p = self.values["potential"]
        return PotentialSpec(p["variant"], p["k"], p["eps"])

    @property
    def solver_options(self) -> SolverOptions:
        s = self.values["solver"]
        return SolverOptions(newton_tol=s["newton_tol"], max_iter=s["max_iter"],
                             keep_factorizations=s["keep_factorizations"])

    @property
    def box(self) -> ControlBox:
        return ControlBox(**self.values["box"])

    @property
    def optimizer(self) -> OptimizerConfig:
        o = self.values["optimizer"]
        return OptimizerConfig(max_iters=o["max_iters"], armijo_c1=o["armijo_c1"],
                               backtrack_factor=o["backtrack_factor"], initial_step=o["initial_step"],
                               stationarity_tol=o["tol"], step_rule=o["step_rule"])

    def _profile(self, spec, domain):
        name, kw = spec
        if name == "constant":
            return profile(domain, name, kw.get("a", 0.0))
        return profile(domain, name, **kw)

    def initial(self, domain: Domain | None = None) -> StateSnapshot:
        domain = domain or self.domain
        i = self.values["init"]
        return StateSnapshot(*(self._profile(i[k], domain) for k in ("mu0", "phi0", "sigma0")))

    def cost(self, domain: Domain | None = None) -> CostSpec:
        domain = domain or self.domain
        c = self.values["cost"]
        return CostSpec(*(c[f"gamma{i}"] for i in range(1, 7)),
                        phi_Q=self._profile(c["phi_Q"], domain), sigma_Q=self._profile(c["sigma_Q"], domain),
                        phi_Omega=self._profile(c["phi_Omega"], domain),
                        sigma_Omega=self._profile(c["sigma_Omega"], domain))

    def problem(self) -> ControlProblem:
        d = self.domain
        return ControlProblem(d, self.params, self.potential, self.timegrid, self.initial(d),
                              self.cost(d), self.solver_options)

    def controls(self, problem: ControlProblem | None = None) -> Controls:
        problem = problem or self.problem()
        box = self.box
        mid = box.midpoint(problem.control_shape)
        out = []
        for key, default in (("u", mid.u), ("w", mid.w)):
            v = self.values["controls"][key]
            out.append(default if v == "midpoint" else np.full(problem.control_shape, float(v)))
        return Controls(*out)

    def to_text(self) -> str:
        """Effective configuration, every key included, in parseable form."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_format(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)


def _format(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple) and len(v) == 2 and isinstance(v[1], dict):
        return " ".join([v[0]] + [f"{k}={repr(float(x))}" for k, x in v[1].items()])
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def apply_override(text_values: dict, override: str):
    key, sep, value = override.partition("=")
    if not sep or "." not in key:
        raise ConfigError("parse-error", f"override must look like section.key=value, got {override!r}")
    section, name = key.strip().split(".", 1)
    text_values.setdefault(section, {})[name] = value.strip()


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse, apply overrides (which beat file values, which beat defaults), validate."""
    cp = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
                                   interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("parse-error", str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for o in overrides:
        apply_override(raw, o)
    values = {}
    for section, entries in raw.items():
        if section not in SCHEMA:
            raise ConfigError("parse-error", f"unknown section [{section}]", _line_of(text, section, None))
        for key in entries:
            if key not in SCHEMA[section]:
                raise ConfigError("parse-error", f"unknown key {section}.{key}", _line_of(text, section, key))
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (default, conv) in keys.items():
            src = raw.get(section, {}).get(key, default)
            try:
                values[section][key] = conv(src)
            except ValueError as exc:
                raise ConfigError("parse-error", f"{section}.{key}: {exc}", _line_of(text, section, key)) from None
    cfg = RunConfig(values, text)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    """Build every object once so each owning module re-checks its invariants."""
    v = cfg.values
    try:
        domain = cfg.domain
        cfg.timegrid
        cfg.params
        cfg.potential
        cfg.box
        cfg.optimizer
        cost = cfg.cost(domain)
        if cost.trivial:
            raise ValueError("cost: weights gamma1..gamma6 must not all vanish (A5)")
        initial = cfg.initial(domain)
    except (ValueError, GridError) as exc:
        raise ConfigError("validation-error", str(exc)) from None
    if v["h"]["variant"] != "quintic_smoothstep":
        raise ConfigError("validation-error", "h: only variant quintic_smoothstep is available (A3)")
    if cfg.potential.singular and np.any(np.abs(initial.phi) >= 1):
        raise ConfigError("validation-error", "init: phi0 must lie strictly inside (-1, 1) for the logarithmic potential (A2)")
    if not v["solver"]["newton_tol"] > 0 or v["solver"]["max_iter"] < 1:
        raise ConfigError("validation-error", "solver: newton_tol must be > 0 and max_iter >= 1")
    if v["output"]["cadence"] < 1:
        raise ConfigError("validation-error", "output: cadence must be >= 1")
    for key in ("u", "w"):
        val = v["controls"][key]
        if val != "midpoint":
            try:
                float(val)
            except ValueError:
                raise ConfigError("validation-error", f"controls: {key} must be 'midpoint' or a number") from None


def load_config(path, overrides=()) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("io-error", str(exc)) from None
    return parse_config(text, overrides)


# -- snapshots ---------------------------------------------------------------

MAGIC = b"TGF1"
VERSION = 1


def write_snapshot(path, cells, fields: dict):
    """Write named per-cell fields in the TGF1 binary layout (little-endian)."""
    cells = tuple(int(n) for n in cells)
    total = int(np.prod(cells))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HH", VERSION, len(cells)))
    buf.write(struct.pack(f"<{len(cells)}Q", *cells))
    buf.write(struct.pack("<H", len(fields)))
    payload = []
    for name, values in fields.items():
        raw = name.encode("ascii")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        arr = np.asarray(values, dtype="<f8").reshape(-1)
        if arr.size != total:
            raise SnapshotFormatError(f"field {name!r} has {arr.size} values, expected {total}")
        payload.append(arr.tobytes())
    buf.write(b"".join(payload))
    Path(path).write_bytes(buf.getvalue())


def read_snapshot(path):
    """Returns (cells, {name: values})."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise SnapshotFormatError(f"truncated snapshot: needed {n} bytes at offset {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    magic = bytes(take(4))
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}, expected 'TGF1'")
    version, dim = struct.unpack("<HH", take(4))
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    cells = struct.unpack(f"<{dim}Q", take(8 * dim))
    (count,) = struct.unpack("<H", take(2))
    names = []
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        names.append(bytes(take(ln)).decode("ascii"))
    total = int(np.prod(cells))
    fields = {}
    for name in names:
        fields[name] = np.frombuffer(bytes(take(8 * total)), dtype="<f8").astype(float)
    if pos != len(data):
        raise SnapshotFormatError(f"trailing bytes in snapshot: {len(data) - pos}")
    return tuple(int(n) for n in cells), fields


# -- CSV ---------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
