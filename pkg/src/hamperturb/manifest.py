"""TOML case manifests: schema, validation and construction of the objects.

Schema (version 1)::

    schema_version = 1
    name = "waterwave"                  # optional, defaults to the file stem
    variables = ["r", "v"]              # state variables, in order
    eta = [[0, 1], [1, 0]]              # constant metric; ints or rational strings
    h0 = "-(1/2)*r*v^2 - (1/2)*r^2"
    h1 = "..."                          # optional, jet degree 1
    h2 = "(1/6)*r^3*v_x^2"              # optional, jet degree 2
    assumptions = ["r > 0"]
    seed = 0                            # optional, default 0
    sample_box = ["1/2", "3"]           # optional

    [chart]                             # optional; n = 2 charts are built if absent
    variables = ["R1", "R2"]
    forward = ["v/2 + sqrt(r)", "v/2 - sqrt(r)"]
    inverse = ["(R1 - R2)^2/4", "R1 + R2"]
    lambdas = ["-(3/2)*R1 - (1/2)*R2", "-(1/2)*R1 - (3/2)*R2"]
    assumptions = ["R1 > R2"]

    [canonical]                         # optional, replaces h2
    C = ["R1", "0"]
    phi = ["0", "R1*R2"]

    [bases]                             # named expression lists
    claws = ["r", "v", "r*v"]
    k0 = ["r^2", "v^2"]

    [expected]                          # free-form, read by the case book

Every expression is text in the kernel grammar.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import sympy as sp

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import HamPerturbError, ManifestError, ParseError
from .hydro import HydroSystem, RiemannChart, solve_chart_n2
from .jets import LocalFunctional, Metric
from .kernel import Workspace
from .parsing import parse_expr
from .perturbation import Perturbation, build_h2_canonical

__all__ = ["SCHEMA_VERSION", "Manifest", "ChartSpec", "Setup", "load_manifest", "loads_manifest",
           "parse_manifest"]

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "name", "variables", "eta", "h0", "h1", "h2", "assumptions",
             "seed", "sample_box", "chart", "canonical", "bases", "expected"}
_CHART_KEYS = {"variables", "forward", "inverse", "lambdas", "assumptions"}


@dataclass(frozen=True)
class ChartSpec:
    variables: tuple
    forward: tuple
    inverse: tuple
    lambdas: tuple
    assumptions: tuple = ()


@dataclass(frozen=True)
class Manifest:
    name: str
    variables: tuple
    eta: tuple  # rows of Fractions
    h0: str
    h1: str | None = None
    h2: str | None = None
    assumptions: tuple = ()
    seed: int = 0
    sample_box: tuple | None = None
    chart: ChartSpec | None = None
    canonical: dict | None = None  # {"C": [...], "phi": [...]}
    bases: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.variables)

    def build(self) -> "Setup":
        return Setup.from_manifest(self)


def _strings(value, what: str, length: int | None = None) -> tuple:
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise ManifestError(f"{what} must be a list of strings")
    if length is not None and len(value) != length:
        raise ManifestError(f"{what} must have {length} entries, got {len(value)}")
    return tuple(value)


def _rational(x, what: str) -> Fraction:
    if isinstance(x, bool):
        raise ManifestError(f"{what}: expected a rational number, got {x!r}")
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ManifestError(f"{what}: expected a rational number, got {x!r}")
        return Fraction(str(x))
    try:
        return Fraction(x) if isinstance(x, (int, str)) else Fraction(str(x))
    except (ValueError, ZeroDivisionError) as exc:
        raise ManifestError(f"{what}: expected a rational number, got {x!r}") from exc


def parse_manifest(data: dict[str, Any], default_name: str = "manifest") -> Manifest:
    """Validate a decoded TOML document (shape only; expressions are parsed by ``build``)."""
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ManifestError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for key in ("variables", "eta", "h0"):
        if key not in data:
            raise ManifestError(f"missing required key {key!r}")
    variables = _strings(data["variables"], "variables")
    n = len(variables)
    if n == 0:
        raise ManifestError("variables must not be empty")
    eta = data["eta"]
    if not isinstance(eta, list) or len(eta) != n or not all(
            isinstance(row, list) and len(row) == n for row in eta):
        raise ManifestError(f"eta must be a {n}x{n} matrix")
    eta = tuple(tuple(_rational(x, f"eta[{i}][{j}]") for j, x in enumerate(row))
                for i, row in enumerate(eta))
    for i in range(n):
        for j in range(i):
            if eta[i][j] != eta[j][i]:
                raise ManifestError(f"eta is not symmetric: entries ({i + 1},{j + 1}) and "
                                    f"({j + 1},{i + 1}) differ")
    if sp.Matrix(n, n, lambda i, j: sp.Rational(eta[i][j])).det() == 0:
        raise ManifestError("eta is singular")
    for key in ("h0", "h1", "h2", "name"):
        if key in data and not isinstance(data[key], str):
            raise ManifestError(f"{key} must be a string")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ManifestError("seed must be an integer")
    box = data.get("sample_box")
    if box is not None:
        if not isinstance(box, list) or len(box) != 2:
            raise ManifestError("sample_box must be [lo, hi]")
        box = tuple(_rational(x, "sample_box") for x in box)
        if not box[0] < box[1]:
            raise ManifestError("sample_box must satisfy lo < hi")
    chart = None
    if "chart" in data:
        c = data["chart"]
        if not isinstance(c, dict):
            raise ManifestError("[chart] must be a table")
        bad = set(c) - _CHART_KEYS
        if bad:
            raise ManifestError(f"unknown [chart] keys: {sorted(bad)}")
        missing = {"variables", "forward", "inverse", "lambdas"} - set(c)
        if missing:
            raise ManifestError(f"[chart] is missing {sorted(missing)}")
        chart = ChartSpec(_strings(c["variables"], "chart.variables", n),
                          _strings(c["forward"], "chart.forward", n),
                          _strings(c["inverse"], "chart.inverse", n),
                          _strings(c["lambdas"], "chart.lambdas", n),
                          _strings(c.get("assumptions", []), "chart.assumptions"))
    canonical = None
    if "canonical" in data:
        c = data["canonical"]
        if not isinstance(c, dict) or set(c) - {"C", "phi"}:
            raise ManifestError("[canonical] must be a table with keys C and phi")
        if "h2" in data:
            raise ManifestError("give either h2 or [canonical], not both")
        canonical = {"C": _strings(c.get("C", ["0"] * n), "canonical.C", n),
                     "phi": _strings(c.get("phi", ["0"] * n), "canonical.phi", n)}
    bases = data.get("bases", {})
    if not isinstance(bases, dict):
        raise ManifestError("[bases] must be a table")
    bases = {k: _strings(v, f"bases.{k}") for k, v in sorted(bases.items())}
    expected = data.get("expected", {})
    if not isinstance(expected, dict):
        raise ManifestError("[expected] must be a table")
    return Manifest(name=data.get("name", default_name), variables=variables, eta=eta,
                    h0=data["h0"], h1=data.get("h1"), h2=data.get("h2"),
                    assumptions=_strings(data.get("assumptions", []), "assumptions"),
                    seed=seed, sample_box=box, chart=chart, canonical=canonical,
                    bases=bases, expected=expected)


def loads_manifest(text: str, name: str = "manifest", overrides: dict | None = None) -> Manifest:
    """Parse manifest text; ``overrides`` replace top-level keys before validation."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"{name}: invalid TOML: {exc}") from exc
    data.update(overrides or {})
    return parse_manifest(data, name)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {str(path)!r}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{path.name}: invalid TOML: {exc}") from exc
    return parse_manifest(data, path.stem)


class Setup:
    """Workspaces, system, chart and perturbation built from a manifest."""

    def __init__(self, manifest: Manifest, ws: Workspace, system: HydroSystem,
                 chart: RiemannChart | None, chart_solved: bool, H1, H2):
        self.manifest = manifest
        self.ws = ws
        self.system = system
        self.chart = chart
        self.chart_solved = chart_solved
        self.H1 = H1
        self.H2 = H2

    @property
    def rws(self):
        return self.chart.rws if self.chart is not None else None

    @functools.cached_property
    def perturbation(self) -> Perturbation:
        return Perturbation(self.system, self.chart, self.H1, self.H2)

    def basis(self, name: str) -> list:
        if name not in self.manifest.bases:
            raise ManifestError(f"no basis named {name!r} in the manifest")
        return [_parse(t, self.ws, f"bases.{name}") for t in self.manifest.bases[name]]

    @classmethod
    def from_manifest(cls, m: Manifest) -> "Setup":
        try:
            ws = Workspace(m.variables, m.assumptions, m.sample_box)
        except ParseError:
            raise
        except HamPerturbError as exc:
            raise ManifestError(str(exc)) from exc
        metric = Metric([[sp.Rational(x) for x in row] for row in m.eta])
        h0 = _parse(m.h0, ws, "h0")
        try:
            system = HydroSystem(ws, metric, h0)
        except HamPerturbError as exc:
            raise ManifestError(str(exc)) from exc
        chart, solved = None, False
        if m.chart is not None:
            try:
                rws = Workspace(m.chart.variables, m.chart.assumptions, m.sample_box)
                chart = RiemannChart(system, rws,
                                     [_parse(t, ws, "chart.forward") for t in m.chart.forward],
                                     [_parse(t, rws, "chart.inverse") for t in m.chart.inverse],
                                     [_parse(t, rws, "chart.lambdas") for t in m.chart.lambdas])
            except ParseError:
                raise
            except HamPerturbError as exc:
                raise ManifestError(str(exc)) from exc
        elif m.n == 2:
            chart = solve_chart_n2(system, seed=m.seed)
            solved = True
        H1 = H2 = None
        try:
            if m.h1 is not None:
                H1 = LocalFunctional(_parse(m.h1, ws, "h1"), system.space)
            if m.h2 is not None:
                H2 = LocalFunctional(_parse(m.h2, ws, "h2"), system.space)
            if m.canonical is not None:
                if chart is None:
                    raise ManifestError("[canonical] needs a chart")
                C = [_parse(t, chart.rws, "canonical.C") for t in m.canonical["C"]]
                phi = [_parse(t, chart.rws, "canonical.phi") for t in m.canonical["phi"]]
                H2 = build_h2_canonical(chart, C, phi)
            Perturbation(system, chart, H1, H2)
        except (ParseError, ManifestError):
            raise
        except HamPerturbError as exc:
            raise ManifestError(str(exc)) from exc
        return cls(m, ws, system, chart, solved, H1, H2)


def _parse(text: str, ws: Workspace, where: str):
    try:
        return parse_expr(text, ws)
    except ParseError as exc:
        raise ManifestError(f"{where}: {exc}") from exc
