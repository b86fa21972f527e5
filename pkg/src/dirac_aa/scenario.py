"""Scenario files: a TOML document describing a chart, a Dirac structure, an
integrable system and the torus data needed by the pipeline.

Layout (``format = 1``)::

    [chart]      coords, periodic, box
    [structure]  kind = presymplectic | poisson | dirac | canonical | induced
    [system]     X, F, optional H and region
    [torus]      seed, t_max, transversal, casimir, hypothesis, levels, grid
    [actions]    mineur (1-form terms), coaffine_trials
    [average]    tensors
    [expect]     reference values checked by the CLI
    [tolerances] overrides of named thresholds

Form and bivector terms are keyed by space-separated coordinate names, e.g.
``omega = { "x y" = "1" }`` for dx∧dy.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dirac import (DiracField, Section, canonical_dirac, from_frame, from_poisson,
                    from_presymplectic, induced_dirac_on_level)
from .expr import Chart, ExpressionError, parse
from .fields import BivectorField, KForm, VectorField
from .system import IntegrableSystem

FORMAT = 1
STRUCTURE_KINDS = ("presymplectic", "poisson", "dirac", "canonical", "induced")


class ScenarioError(ValueError):
    """The scenario file does not parse or does not validate."""


@dataclass(frozen=True)
class TorusSpec:
    seed: tuple[float, ...]
    t_max: float = 50.0
    transversal: tuple[str, ...] = ()
    casimir: tuple[str, ...] = ()
    hypothesis: str = "ii"
    levels: dict[str, tuple[float, float]] = field(default_factory=dict)
    grid: int = 5

    def level_axes(self, grid: int | None = None) -> list[np.ndarray | None]:
        """Grid values along each transversal coordinate (None where no range is given)."""
        g = self.grid if grid is None else grid
        if g < 2:
            raise ScenarioError("level grid needs at least 2 points")
        axes = []
        for name in self.transversal:
            lo, hi = self.levels.get(name, (None, None))
            if lo is None:
                axes.append(None)
            else:
                axes.append(np.linspace(lo, hi, g))
        return axes


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    chart: Chart
    dirac: DiracField
    structure_kind: str
    tensor: KForm | BivectorField | None
    system: IntegrableSystem | None
    hamiltonians: tuple[str, ...] | None
    region: tuple[tuple[float, float], ...] | None
    torus: TorusSpec | None
    mineur: KForm | None
    coaffine_trials: int
    average_tensors: tuple[Any, ...]
    expect: dict
    tolerances: dict
    source: str

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))

    def level_points(self, grid: int | None = None) -> np.ndarray:
        """Transversal values of the torus family: the level grid (with the seed
        value on axes that have no range)."""
        t = self.torus
        seed = np.array(t.seed, dtype=float)
        axes = t.level_axes(grid)
        cols = []
        for name, ax in zip(t.transversal, axes):
            cols.append(ax if ax is not None else np.array([seed[self.chart.index(name)]]))
        mesh = np.meshgrid(*cols, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"missing key {key!r} in [{where}]")
    return d[key]


def _names(key: str) -> tuple[str, ...]:
    return tuple(key.split())


def _form(chart: Chart, degree: int, terms: dict, where: str) -> KForm:
    out = {}
    for k, v in terms.items():
        names = _names(k)
        if len(names) != degree:
            raise ScenarioError(f"[{where}] term {k!r} does not have degree {degree}")
        out[names] = str(v)
    return KForm.parse(chart, degree, out)


def _vector(chart: Chart, spec, where: str) -> VectorField:
    if isinstance(spec, dict):
        comps = ["0"] * chart.dim
        for k, v in spec.items():
            comps[chart.index(k)] = str(v)
        return VectorField.parse(chart, comps)
    if len(spec) != chart.dim:
        raise ScenarioError(f"[{where}] vector field needs {chart.dim} components")
    return VectorField.parse(chart, [str(c) for c in spec])


def _tensor_from_spec(chart: Chart, spec: dict, where: str):
    kind = _require(spec, "kind", where)
    terms = _require(spec, "terms", where)
    if kind == "form":
        return _form(chart, int(_require(spec, "degree", where)), terms, where)
    if kind == "bivector":
        return BivectorField.parse(chart, {_names(k): str(v) for k, v in terms.items()})
    if kind == "vector":
        return _vector(chart, terms, where)
    raise ScenarioError(f"[{where}] unknown tensor kind {kind!r}")


def _chart(d: dict) -> Chart:
    coords = tuple(_require(d, "coords", "chart"))
    periodic = set(d.get("periodic", ()))
    unknown = periodic - set(coords)
    if unknown:
        raise ScenarioError(f"[chart] periodic names unknown coordinates {sorted(unknown)}")
    box_d = d.get("box", {})
    for k in box_d:
        if k not in coords:
            raise ScenarioError(f"[chart] box names unknown coordinate {k!r}")
    box = tuple(tuple(box_d.get(c, (0.0, 1.0) if c in periodic else (-1.0, 1.0))) for c in coords)
    return Chart(coords, tuple(c in periodic for c in coords), box)


def _structure(d: dict, chart: Chart | None, where: str = "structure"):
    kind = _require(d, "kind", where)
    if kind not in STRUCTURE_KINDS:
        raise ScenarioError(f"[{where}] kind must be one of {', '.join(STRUCTURE_KINDS)}")
    if kind == "canonical":
        D = canonical_dirac(int(d.get("p", 0)), int(d.get("r", 0)), int(d.get("s", 0)))
        if chart is not None and chart.coord_names != D.chart.coord_names:
            raise ScenarioError(f"[{where}] canonical chart is {D.chart.coord_names}")
        return D, None
    if chart is None:
        raise ScenarioError("a [chart] block is required")
    if kind == "presymplectic":
        omega = _form(chart, 2, _require(d, "omega", where), where)
        return from_presymplectic(omega, check=False), omega
    if kind == "poisson":
        pi = BivectorField.parse(chart, {_names(k): str(v) for k, v in _require(d, "pi", where).items()})
        return from_poisson(pi), pi
    if kind == "dirac":
        secs = []
        for i, s in enumerate(_require(d, "sections", where)):
            X = _vector(chart, s.get("X", {}), f"{where}.sections[{i}]")
            a = _form(chart, 1, s.get("a", {}), f"{where}.sections[{i}]")
            secs.append(Section(X, a))
        return from_frame(chart, secs), None
    # induced
    parent, _ = _structure(_require(d, "from", where), chart, f"{where}.from")
    cons = {k: float(v) for k, v in _require(d, "constraints", where).items()}
    for k in cons:
        if k not in chart.coord_names:
            raise ScenarioError(f"[{where}] constraint on unknown coordinate {k!r}")
    return induced_dirac_on_level(parent, cons), None


def parse_scenario(doc: dict, source: str = "<string>") -> Scenario:
    try:
        return _parse(doc, source)
    except ScenarioError:
        raise
    except (ExpressionError, ValueError, KeyError, TypeError) as exc:
        raise ScenarioError(f"{source}: {exc}") from exc


def _parse(doc: dict, source: str) -> Scenario:
    fmt = doc.get("format")
    if fmt != FORMAT:
        raise ScenarioError(f"unsupported scenario format {fmt!r} (expected {FORMAT})")
    known = {"format", "name", "description", "chart", "structure", "system", "torus",
             "actions", "average", "expect", "tolerances"}
    extra = set(doc) - known
    if extra:
        raise ScenarioError(f"unknown top-level keys {sorted(extra)}")
    chart = _chart(doc["chart"]) if "chart" in doc else None
    D, tensor = _structure(_require(doc, "structure", "scenario"), chart)
    chart = D.chart

    system = hams = region = None
    if "system" in doc:
        s = doc["system"]
        X = tuple(_vector(chart, x, "system.X") for x in _require(s, "X", "system"))
        F = tuple(parse(str(f), chart) for f in s.get("F", ()))
        system = IntegrableSystem(chart, X, F)
        if "H" in s:
            hams = tuple(str(h) for h in s["H"])
            if len(hams) != system.p:
                raise ScenarioError("[system] needs one Hamiltonian per vector field")
        if "region" in s:
            r = s["region"]
            region = tuple(tuple(r.get(c, chart.domain_box[i])) for i, c in enumerate(chart.coord_names))

    torus = None
    if "torus" in doc:
        if system is None:
            raise ScenarioError("[torus] needs a [system] block")
        t = doc["torus"]
        seed = tuple(float(v) for v in _require(t, "seed", "torus"))
        if len(seed) != chart.dim:
            raise ScenarioError(f"[torus] seed needs {chart.dim} coordinates")
        for key in ("transversal", "casimir"):
            for nm in t.get(key, ()):
                if nm not in chart.coord_names:
                    raise ScenarioError(f"[torus] {key} names unknown coordinate {nm!r}")
        levels = {k: (float(v[0]), float(v[1])) for k, v in t.get("levels", {}).items()}
        for k in levels:
            if k not in t.get("transversal", ()):
                raise ScenarioError(f"[torus] level range for {k!r}, which is not transversal")
        hyp = str(t.get("hypothesis", "ii"))
        if hyp not in ("i", "ii"):
            raise ScenarioError("[torus] hypothesis must be \"i\" or \"ii\"")
        grid = int(t.get("grid", 5))
        if grid < 2:
            raise ScenarioError("[torus] grid must be at least 2")
        torus = TorusSpec(seed, float(t.get("t_max", 50.0)), tuple(t.get("transversal", ())),
                          tuple(t.get("casimir", ())), hyp, levels, grid)

    acts = doc.get("actions", {})
    mineur = _form(chart, 1, acts["mineur"], "actions.mineur") if "mineur" in acts else None
    trials = int(acts.get("coaffine_trials", 5))
    avg = doc.get("average", {})
    tensors = tuple(_tensor_from_spec(chart, t, "average.tensors") for t in avg.get("tensors", ()))
    if not tensors and tensor is not None:
        tensors = (tensor,)
    return Scenario(str(doc.get("name", Path(source).stem)), str(doc.get("description", "")), chart, D,
                    doc["structure"]["kind"], tensor, system, hams, region, torus, mineur, trials, tensors,
                    dict(doc.get("expect", {})), dict(doc.get("tolerances", {})), source)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        bundled = bundled_path(str(path))
        if bundled is None:
            raise ScenarioError(f"no such scenario file: {path}")
        path = bundled
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return parse_scenario(doc, str(path))


def bundled_names() -> list[str]:
    root = resources.files("dirac_aa") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled_path(name: str) -> Path | None:
    """Path of a bundled scenario given its name, ``name.toml`` or ``scenarios/name.toml``."""
    stem = Path(name).name
    stem = stem[:-5] if stem.endswith(".toml") else stem
    p = resources.files("dirac_aa") / "scenarios" / f"{stem}.toml"
    return Path(str(p)) if p.is_file() else None
