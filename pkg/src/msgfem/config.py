"""Flat-text run configuration: one `section.key = value` per line, `#` comments.

The parsed RunConfig carries everything the study commands need and builds the
mesh / problem / cover objects on demand. Unknown keys are rejected so that typos
surface as configuration errors (exit code 2).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import mesh as fm
from .cover import build_cover
from .errors import ConfigError
from .mesh import Checkerboard, Constant, ProblemDef, RandomContrast, build_unit_square_mesh


def _parse_int(s):
    return int(s)


def _parse_float(s):
    return float(s)


def _parse_str(s):
    return s


def _parse_floats(s):
    return tuple(float(tok) for tok in s.split())


def _parse_ints(s):
    return tuple(int(tok) for tok in s.split())


# key -> (parser, default); None default means "unset"
SCHEMA = {
    "mesh.n": (_parse_int, None),
    "problem.kind": (_parse_str, fm.DIFFUSION),
    "problem.coefficient": (_parse_str, "constant 1.0"),
    "problem.seed": (_parse_int, 0),
    "problem.f": (_parse_float, 0.0),
    "problem.g": (_parse_float, 0.0),
    "problem.bx": (_parse_float, 0.0),
    "problem.by": (_parse_float, 0.0),
    "problem.k": (_parse_float, 0.0),
    "problem.v": (_parse_float, 1.0),
    "problem.beta": (_parse_float, 1.0),
    "cover.mx": (_parse_int, 4),
    "cover.my": (_parse_int, 4),
    "cover.overlap": (_parse_int, 1),
    "cover.oversampling": (_parse_int, 1),
    "spectral.n_per_subdomain": (_parse_int, None),
    "spectral.tau": (_parse_float, None),
    "spectral.n_ev": (_parse_int, 30),
    "solver.route": (_parse_str, "reduced"),
    "study.subdomains": (_parse_ints, None),
    "study.n_min": (_parse_int, 5),
    "study.n_max": (_parse_int, 30),
    "study.oversampling_sweep": (_parse_ints, None),
    "study.dims_sweep": (_parse_ints, tuple(range(4, 21, 2))),
    "caccioppoli.box_inner": (_parse_floats, (0.375, 0.625, 0.375, 0.625)),
    "caccioppoli.box_outer": (_parse_floats, (0.25, 0.75, 0.25, 0.75)),
    "caccioppoli.samples": (_parse_int, 100),
    "caccioppoli.modes": (_parse_int, 8),
    "green.box1": (_parse_floats, (0.6875, 1.0, 0.6875, 1.0)),
    "green.box2": (_parse_floats, (0.0, 0.3125, 0.0, 0.3125)),
    "green.tolerances": (_parse_floats, (1e-2, 1e-4, 1e-8)),
    "oracle.n_ev": (_parse_int, 10),
    "oracle.tol": (_parse_float, 1e-6),
    "oracle.floor": (_parse_float, 1e-9),
    "output.path": (_parse_str, None),
}

_COEFF_NAMES = ("constant", "checkerboard", "random_contrast")


def parse_config_text(text):
    """Parse the flat key = value format into a raw string dict."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        raw[key] = value
    return raw


def parse_coefficient(text):
    toks = text.split()
    name = toks[0].lower() if toks else ""
    try:
        if name == "constant" and len(toks) == 2:
            return Constant(float(toks[1]))
        if name == "checkerboard" and len(toks) == 4:
            return Checkerboard(int(toks[1]), float(toks[2]), float(toks[3]))
        if name == "random_contrast" and len(toks) == 3:
            return RandomContrast(float(toks[1]), float(toks[2]))
    except ValueError as exc:
        raise ConfigError(f"malformed coefficient spec {text!r}: {exc}") from exc
    raise ConfigError(
        f"coefficient spec {text!r} not understood; expected one of "
        f"'constant C', 'checkerboard P LO HI', 'random_contrast LO HI'")


@dataclass
class RunConfig:
    values: dict
    raw: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def config_hash(self):
        canon = "\n".join(f"{k} = {self.raw[k]}" for k in sorted(self.raw))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def build_mesh(self):
        return build_unit_square_mesh(self["mesh.n"])

    def build_problem(self, mesh):
        kind = self["problem.kind"]
        if kind not in fm.KINDS:
            raise ConfigError(f"problem.kind must be one of {fm.KINDS}, got {kind!r}")
        spec = parse_coefficient(self["problem.coefficient"])
        a = fm.make_coefficient(spec, mesh, self["problem.seed"])
        f = np.full(mesh.n_nodes, self["problem.f"])
        kw = dict(kind=kind, a=a, f=f)
        if kind == fm.CONVECTION_DIFFUSION:
            kw["b"] = np.tile([self["problem.bx"], self["problem.by"]], (mesh.n_elems, 1))
        if kind == fm.HELMHOLTZ:
            kw["k"] = self["problem.k"]
            kw["V"] = np.full(mesh.n_elems, self["problem.v"])
            kw["beta"] = np.full(4 * mesh.n, self["problem.beta"])
            kw["g"] = np.full(4 * mesh.n, self["problem.g"])
        return ProblemDef(**kw)

    def build_cover(self, mesh, oversampling=None):
        return build_cover(mesh, self["cover.mx"], self["cover.my"],
                           self["cover.overlap"],
                           self["cover.oversampling"] if oversampling is None else oversampling)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return make_config(text)


def make_config(text):
    raw = parse_config_text(text)
    values = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from exc
        else:
            values[key] = default
    if values["mesh.n"] is None:
        raise ConfigError("mesh.n is required")
    n_per = values["spectral.n_per_subdomain"]
    tau = values["spectral.tau"]
    if (n_per is None) == (tau is None):
        raise ConfigError("exactly one of spectral.n_per_subdomain / spectral.tau must be set")
    if tau is not None and tau <= 0:
        raise ConfigError("spectral.tau must be positive")
    if values["solver.route"] not in ("mixed", "reduced", "oracle"):
        raise ConfigError(f"solver.route must be mixed|reduced|oracle, got {values['solver.route']!r}")
    for key in ("cover.overlap", "cover.oversampling"):
        if values[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    tols = values["green.tolerances"]
    if any(not (0.0 < t < 1.0) for t in tols) or any(
            b >= a for a, b in zip(tols, tols[1:])):
        raise ConfigError("green.tolerances must be strictly descending values in (0, 1)")
    return RunConfig(values, raw)
