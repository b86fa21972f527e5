"""Integrable systems of type (p, q): commuting fields and joint first integrals."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dirac import DiracField, PointCheck, is_hamiltonian_pair
from .expr import Chart, Expr, as_expr, parse
from .fields import VectorField, differential, evaluate_many, lie_bracket

RESIDUAL_TOL = 1e-9
WEDGE_TOL = 1e-6


class IntegrableSystemError(ValueError):
    pass


class HamiltonianBindingError(IntegrableSystemError):
    pass


@dataclass(frozen=True)
class IntegrableSystem:
    chart: Chart
    X: tuple[VectorField, ...]
    F: tuple[Expr, ...]
    H: tuple[Expr, ...] | None = None
    dirac: DiracField | None = None

    def __post_init__(self):
        X = tuple(self.X)
        F = tuple(as_expr(f) for f in self.F)
        if len(X) < 1:
            raise IntegrableSystemError("need at least one vector field")
        if len(X) + len(F) != self.chart.dim:
            raise IntegrableSystemError(f"type ({len(X)},{len(F)}) does not add up to dimension {self.chart.dim}")
        for x in X:
            if x.chart != self.chart:
                raise IntegrableSystemError("vector field on a different chart")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "F", F)
        if self.H is not None:
            H = tuple(as_expr(h) for h in self.H)
            if len(H) != len(X):
                raise IntegrableSystemError("need one Hamiltonian per vector field")
            object.__setattr__(self, "H", H)

    @classmethod
    def parse(cls, chart: Chart, X: Sequence[Sequence[str]], F: Sequence[str]) -> "IntegrableSystem":
        return cls(chart, tuple(VectorField.parse(chart, x) for x in X), tuple(parse(f, chart) for f in F))

    @property
    def p(self) -> int:
        return len(self.X)

    @property
    def q(self) -> int:
        return len(self.F)

    @property
    def is_hamiltonian(self) -> bool:
        return self.H is not None and self.dirac is not None

    def field_values(self, points) -> np.ndarray:
        """Shape (N, p, n)."""
        exprs = [c for x in self.X for c in x.components]
        pts = np.atleast_2d(points)
        vals = evaluate_many(exprs, self.chart, pts)
        return vals.reshape(len(pts), self.p, self.chart.dim)

    def integral_values(self, points) -> np.ndarray:
        return evaluate_many(self.F, self.chart, np.atleast_2d(points))

    def integral_gradients(self, points) -> np.ndarray:
        """Shape (N, q, n)."""
        exprs = [c for f in self.F for c in (differential(f, self.chart).coeff(i) for i in range(self.chart.dim))]
        pts = np.atleast_2d(points)
        vals = evaluate_many(exprs, self.chart, pts)
        return vals.reshape(len(pts), self.q, self.chart.dim)

    def recombined(self, U: np.ndarray, C: np.ndarray | None = None) -> "IntegrableSystem":
        """Fields recombined by an integer matrix U (rows), integrals by a constant matrix C."""
        U = np.asarray(U)
        X = []
        for row in U:
            v = VectorField.zero(self.chart)
            for c, x in zip(row, self.X):
                if c:
                    v = v + x.scaled(int(c))
            X.append(v)
        F = self.F
        if C is not None:
            F = tuple(sum((float(c) * f for c, f in zip(row, self.F)), as_expr(0)) for row in np.asarray(C))
        H = None
        if self.H is not None:
            H = tuple(sum((int(c) * h for c, h in zip(row, self.H)), as_expr(0)) for row in U)
        return IntegrableSystem(self.chart, tuple(X), F, H, self.dirac if H is not None else None)


def _wedge_norm(m: np.ndarray) -> np.ndarray:
    """Smallest singular value of each (k×n) matrix; +inf when k = 0."""
    if m.shape[1] == 0:
        return np.full(m.shape[0], np.inf)
    return np.linalg.svd(m, compute_uv=False)[:, -1]


@dataclass(frozen=True)
class RegularityReport:
    commutator_residual: float
    invariance_residual: float
    wedge_X_norm: float
    wedge_dF_norm: float
    worst_point: tuple[float, ...] | None
    warnings: int
    residual_tol: float
    wedge_tol: float

    @property
    def passed(self) -> bool:
        return (self.commutator_residual <= self.residual_tol
                and self.invariance_residual <= self.residual_tol
                and self.wedge_X_norm > self.wedge_tol and self.wedge_dF_norm > self.wedge_tol)


def check_integrability(sys: IntegrableSystem, points: np.ndarray,
                        region: Sequence[tuple[float, float]] | None = None,
                        residual_tol: float = RESIDUAL_TOL, wedge_tol: float = WEDGE_TOL) -> RegularityReport:
    """Commutators, invariance of the integrals, and independence on the samples.

    Independence is only required inside ``region`` (default: everywhere); degenerate
    samples outside it are counted as warnings.
    """
    pts = np.atleast_2d(points)
    comm = 0.0
    worst = None
    for i in range(sys.p):
        for j in range(i + 1, sys.p):
            br = lie_bracket(sys.X[i], sys.X[j])
            if br.is_zero_symbolic():
                continue
            v = np.linalg.norm(br.evaluate(pts), axis=1)
            k = int(np.argmax(v))
            if v[k] > comm:
                comm, worst = float(v[k]), tuple(float(t) for t in pts[k])
    inv = 0.0
    for x in sys.X:
        for f in sys.F:
            g = x(f)
            vals = np.abs(evaluate_many([g], sys.chart, pts)[:, 0])
            k = int(np.argmax(vals))
            if vals[k] > inv:
                inv = float(vals[k])
                if comm == 0.0:
                    worst = tuple(float(t) for t in pts[k])
    wx = _wedge_norm(sys.field_values(pts))
    wf = _wedge_norm(sys.integral_gradients(pts))
    if region is None:
        inside = np.ones(len(pts), dtype=bool)
    else:
        box = np.asarray(region, dtype=float)
        inside = np.all((pts >= box[:, 0]) & (pts <= box[:, 1]), axis=1)
    bad = (wx <= wedge_tol) | (wf <= wedge_tol)
    warnings = int(np.sum(bad & ~inside))
    wxi = float(np.min(wx[inside])) if inside.any() else float("inf")
    wfi = float(np.min(wf[inside])) if inside.any() else float("inf")
    return RegularityReport(comm, inv, wxi, wfi, worst, warnings, residual_tol, wedge_tol)


def is_regular_at(sys: IntegrableSystem, point, wedge_tol: float = WEDGE_TOL) -> bool:
    pt = np.atleast_2d(np.asarray(point, dtype=float))
    return bool(_wedge_norm(sys.field_values(pt))[0] > wedge_tol
                and _wedge_norm(sys.integral_gradients(pt))[0] > wedge_tol)


def bind_hamiltonians(sys: IntegrableSystem, D: DiracField, H: Sequence, points: np.ndarray,
                      tol: float = 1e-9) -> IntegrableSystem:
    """Attach Hamiltonians after checking (Xᵢ, dHᵢ) ∈ Γ(D) at every sample."""
    H = tuple(parse(h, sys.chart) if isinstance(h, str) else as_expr(h) for h in H)
    if len(H) != sys.p:
        raise HamiltonianBindingError(f"need {sys.p} Hamiltonians, got {len(H)}")
    if D.chart != sys.chart:
        raise HamiltonianBindingError("Dirac structure lives on a different chart")
    for i, (x, h) in enumerate(zip(sys.X, H)):
        c = is_hamiltonian_pair(x, h, D, points, tol)
        if not c.passed:
            raise HamiltonianBindingError(
                f"X{i + 1} is not Hamiltonian for H{i + 1} = {h}: residual {c.residual:.3e} at {c.worst_point}")
    return replace(sys, H=H, dirac=D)


def hamiltonian_checks(sys: IntegrableSystem, points: np.ndarray, tol: float = 1e-9) -> list[PointCheck]:
    out = []
    for i, (x, h) in enumerate(zip(sys.X, sys.H or ())):
        c = is_hamiltonian_pair(x, h, sys.dirac, points, tol)
        out.append(replace(c, name=f"hamiltonian_X{i + 1}"))
    return out


def bracket_residual(sys: IntegrableSystem, points: np.ndarray) -> float:
    """max |{Hᵢ, Hⱼ}| = max |Xᵢ(Hⱼ)| over samples."""
    if sys.H is None:
        raise IntegrableSystemError("system has no Hamiltonians")
    worst = 0.0
    for x in sys.X:
        for h in sys.H:
            v = np.abs(evaluate_many([x(h)], sys.chart, points)[:, 0])
            worst = max(worst, float(v.max()))
    return worst
