"""Dirac structures given by global frames of smooth sections.

Sign convention: the graph of a presymplectic form ω is {(X, i_X ω)} and a
function H is a Hamiltonian of X when (X, dH) is a section, i.e. dH = i_X ω.
The graph of a Poisson bivector Π is spanned by (Π(·, dxₖ), dxₖ).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import pointwise as pw
from .expr import ZERO, Chart, Expr, as_expr, parse, simplify, substitute
from .fields import (BivectorField, KForm, VectorField, contract_bivector,
                     differential, evaluate_many, exterior_d, interior,
                     lie_bracket, lie_derivative)
from .sampling import halton_points

MEMBERSHIP_TOL = 1e-9
CLOSEDNESS_TOL = 1e-9


class DiracError(ValueError):
    pass


class NonClosedFormError(DiracError):
    def __init__(self, residual: float, point):
        super().__init__(f"2-form is not closed: |dω| = {residual:.3e} at {tuple(round(float(v), 6) for v in point)}")
        self.residual = residual
        self.point = point


class NonRegularConstraintError(DiracError):
    pass


class UnverifiedHamiltonianError(DiracError):
    pass


@dataclass(frozen=True)
class Section:
    """A pair (X, α) of a vector field and a 1-form."""

    X: VectorField
    a: KForm

    def __post_init__(self):
        if self.X.chart != self.a.chart:
            raise DiracError("section parts live on different charts")
        if self.a.degree != 1:
            raise DiracError("cotangent part of a section must be a 1-form")

    @property
    def chart(self) -> Chart:
        return self.X.chart

    def exprs(self) -> tuple[Expr, ...]:
        n = self.chart.dim
        return self.X.components + tuple(self.a.coeff(i) for i in range(n))

    def evaluate(self, points) -> np.ndarray:
        return evaluate_many(self.exprs(), self.chart, points)

    def __add__(self, other: "Section") -> "Section":
        return Section(self.X + other.X, self.a + other.a)

    def scaled(self, f) -> "Section":
        return Section(self.X.scaled(f), self.a.scaled(f))

    def is_zero_symbolic(self) -> bool:
        return self.X.is_zero_symbolic() and self.a.is_zero_symbolic()


def courant_bracket(s1: Section, s2: Section) -> Section:
    """([X₁, X₂], ℒ_{X₁}α₂ − i_{X₂}dα₁)."""
    if s1.chart != s2.chart:
        raise DiracError("sections live on different charts")
    da1 = exterior_d(s1.a) if s1.chart.dim >= 2 else KForm.zero(s1.chart, 1)
    form = lie_derivative(s1.X, s2.a)
    if da1.degree == 2 and da1.terms:
        form = form - interior(s2.X, da1)
    return Section(lie_bracket(s1.X, s2.X), form)


@dataclass(frozen=True)
class PointCheck:
    """Worst-case outcome of a pointwise test over a sample set."""

    name: str
    passed: bool
    residual: float
    worst_point: tuple[float, ...] | None
    threshold: float
    detail: str = ""


def _worst(values: np.ndarray, points: np.ndarray) -> tuple[float, tuple[float, ...] | None]:
    if values.size == 0:
        return 0.0, None
    i = int(np.argmax(values))
    return float(values[i]), tuple(float(v) for v in points[i])


def span_distances(frames: np.ndarray, vecs: np.ndarray, relative: bool = True) -> np.ndarray:
    """Distance of each ``vecs[k]`` from the column span of ``frames[k]``.

    With ``relative`` the distance is divided by max(1, ‖v‖).
    """
    frames = np.asarray(frames, dtype=float)
    vecs = np.asarray(vecs, dtype=float)
    u, sv, _ = np.linalg.svd(frames, full_matrices=False)
    scale = sv[:, :1]
    if np.any(sv[:, -1] <= pw.RANK_TOL * scale[:, 0]):
        k = int(np.argmin(sv[:, -1] / np.maximum(scale[:, 0], 1e-300)))
        raise pw.FrameError(f"frame is rank deficient at sample {k}")
    proj = np.einsum("kij,kj->ki", u, np.einsum("kji,kj->ki", u, vecs))
    d = np.linalg.norm(vecs - proj, axis=1)
    if relative:
        d = d / np.maximum(1.0, np.linalg.norm(vecs, axis=1))
    return d


@dataclass(frozen=True)
class DiracField:
    """A Dirac structure on ``chart`` given by n sections spanning it everywhere."""

    chart: Chart
    sections: tuple[Section, ...]
    kind: str = "dirac"
    source: object = field(default=None, compare=False)

    def __post_init__(self):
        secs = tuple(self.sections)
        if len(secs) != self.chart.dim:
            raise DiracError(f"need {self.chart.dim} sections, got {len(secs)}")
        for s in secs:
            if s.chart != self.chart:
                raise DiracError("section chart differs from structure chart")
        if self.kind not in ("dirac", "presymplectic-graph", "poisson-graph"):
            raise DiracError(f"unknown kind {self.kind!r}")
        object.__setattr__(self, "sections", secs)

    @property
    def n(self) -> int:
        return self.chart.dim

    def frames(self, points) -> np.ndarray:
        """Frame matrices at ``points``: shape (N, 2n, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        exprs = [e for s in self.sections for e in s.exprs()]
        vals = evaluate_many(exprs, self.chart, pts)
        return vals.reshape(len(pts), self.n, 2 * self.n).transpose(0, 2, 1)

    def point_frame(self, point) -> pw.DiracPointFrame:
        return pw.DiracPointFrame(self.frames(point)[0], np.asarray(point, dtype=float))

    def samples(self, count: int = 128, seed: int | None = None) -> np.ndarray:
        return halton_points(self.chart, count, seed)

    # -- extraction --------------------------------------------------------

    def poisson_matrix(self, points) -> np.ndarray:
        """Π at ``points`` from X = Π A (needs invertible cotangent block)."""
        f = self.frames(points)
        X, A = f[:, : self.n], f[:, self.n:]
        return np.linalg.solve(A.transpose(0, 2, 1), X.transpose(0, 2, 1)).transpose(0, 2, 1)

    def presymplectic_matrix(self, points) -> np.ndarray:
        """ω at ``points`` from A = −ω X (needs invertible tangent block)."""
        f = self.frames(points)
        X, A = f[:, : self.n], f[:, self.n:]
        return -np.linalg.solve(X.transpose(0, 2, 1), A.transpose(0, 2, 1)).transpose(0, 2, 1)


def from_frame(chart: Chart, sections: Sequence[Section | tuple]) -> DiracField:
    secs = []
    for s in sections:
        if not isinstance(s, Section):
            s = Section(*s)
        secs.append(s)
    return DiracField(chart, tuple(secs), "dirac")


def closedness_residual(omega: KForm, points: np.ndarray) -> tuple[float, np.ndarray]:
    """max |dω| over ``points`` (0 when ω has top degree) and the worst point."""
    chart = omega.chart
    if omega.degree >= chart.dim:
        return 0.0, points[0]
    d = exterior_d(omega)
    if d.is_zero_symbolic():
        return 0.0, points[0]
    vals = np.abs(d.evaluate(points)).max(axis=1)
    i = int(np.argmax(vals))
    return float(vals[i]), points[i]


def from_presymplectic(omega: KForm, samples: np.ndarray | None = None,
                       tol: float = CLOSEDNESS_TOL, check: bool = True) -> DiracField:
    """Graph {(∂ᵢ, i_{∂ᵢ}ω)} of a closed 2-form.

    With ``check=False`` the closedness test is skipped, so that a non-closed
    form can be fed to the axiom checks as a negative control.
    """
    if omega.degree != 2:
        raise DiracError("presymplectic form must have degree 2")
    chart = omega.chart
    if check:
        pts = halton_points(chart) if samples is None else samples
        res, worst = closedness_residual(omega, pts)
        if res > tol:
            raise NonClosedFormError(res, worst)
    secs = []
    for name in chart.coord_names:
        e = VectorField.coordinate(chart, name)
        secs.append(Section(e, interior(e, omega)))
    return DiracField(chart, tuple(secs), "presymplectic-graph", omega)


def from_poisson(pi: BivectorField) -> DiracField:
    """Graph {(Π(·, dxₖ), dxₖ)}; the Jacobi identity shows up as Courant closedness."""
    chart = pi.chart
    secs = []
    for name in chart.coord_names:
        dx = differential(parse(name, chart), chart)
        secs.append(Section(contract_bivector(pi, dx), dx))
    return DiracField(chart, tuple(secs), "poisson-graph", pi)


def canonical_dirac(p: int, r: int, s: int) -> DiracField:
    """Canonical structure on T*ℝᵖ × ℝʳ × ℝˢ: leaves {c = const}, leaf form Σ dqᵢ∧dpᵢ,
    kernel along v, Casimirs c."""
    if min(p, r, s) < 0 or p + r + s == 0:
        raise DiracError("dimensions must be nonnegative and not all zero")
    names = ([f"q{i + 1}" for i in range(p)] + [f"p{i + 1}" for i in range(p)]
             + [f"v{i + 1}" for i in range(r)] + [f"c{i + 1}" for i in range(s)])
    chart = Chart(tuple(names))
    n = chart.dim
    zero_v = VectorField.zero(chart)
    zero_a = KForm.zero(chart, 1)

    def d(i):
        return KForm(chart, 1, {(i,): 1})

    def e(i):
        return VectorField(chart, tuple(as_expr(int(j == i)) for j in range(n)))

    secs = []
    for i in range(p):
        secs.append(Section(e(i), d(p + i)))
    for i in range(p):
        secs.append(Section(e(p + i), -d(i)))
    for i in range(r):
        secs.append(Section(e(2 * p + i), zero_a))
    for i in range(s):
        secs.append(Section(zero_v, d(2 * p + r + i)))
    return DiracField(chart, tuple(secs), "dirac", ("canonical", p, r, s))


# ---------------------------------------------------------------------------
# Axiom checks
# ---------------------------------------------------------------------------


def isotropy_check(D: DiracField, points: np.ndarray, tol: float = pw.ISOTROPY_TOL) -> PointCheck:
    f = D.frames(points)
    n = D.n
    g = np.einsum("kai,kaj->kij", f[:, n:], f[:, :n])
    g = 0.5 * (g + g.transpose(0, 2, 1))
    vals = np.abs(g).reshape(len(points), -1).max(axis=1)
    res, worst = _worst(vals, points)
    return PointCheck("isotropy", res <= tol, res, worst, tol)


def rank_check(D: DiracField, points: np.ndarray) -> PointCheck:
    f = D.frames(points)
    sv = np.linalg.svd(f, compute_uv=False)
    ratio = sv[:, -1] / np.maximum(sv[:, 0], 1e-300)
    i = int(np.argmin(ratio))
    ok = bool(np.all(ratio > pw.RANK_TOL))
    return PointCheck("rank", ok, float(ratio[i]), tuple(float(v) for v in points[i]), pw.RANK_TOL,
                      "smallest relative singular value")


def courant_closedness(D: DiracField, points: np.ndarray, tol: float = CLOSEDNESS_TOL) -> PointCheck:
    """Max over frame pairs and samples of the distance of [sᵢ, sⱼ] from the frame span,
    normalised by max(1, ‖sᵢ‖‖sⱼ‖)."""
    pts = np.atleast_2d(points)
    frames = D.frames(pts)
    norms = np.linalg.norm(frames, axis=1)
    worst_val, worst_pt, worst_pair = 0.0, tuple(float(v) for v in pts[0]), None
    for i in range(D.n):
        for j in range(i + 1, D.n):
            br = courant_bracket(D.sections[i], D.sections[j])
            if br.is_zero_symbolic():
                continue
            vals = br.evaluate(pts)
            d = span_distances(frames, vals, relative=False)
            d = d / np.maximum(1.0, norms[:, i] * norms[:, j])
            k = int(np.argmax(d))
            if d[k] > worst_val:
                worst_val, worst_pt, worst_pair = float(d[k]), tuple(float(v) for v in pts[k]), (i, j)
    detail = f"worst pair {worst_pair}" if worst_pair else "all brackets vanish symbolically"
    return PointCheck("courant_closedness", worst_val <= tol, worst_val, worst_pt, tol, detail)


def bi_corank_map(D: DiracField, points: np.ndarray) -> dict[tuple[int, int], int]:
    """Histogram of bi-coranks (r, s) over the sample points."""
    out: dict[tuple[int, int], int] = {}
    for f in D.frames(points):
        bc = pw.bi_corank(pw.DiracPointFrame(f))
        out[bc.pair] = out.get(bc.pair, 0) + 1
    return out


# ---------------------------------------------------------------------------
# Hamiltonians, Casimirs, brackets
# ---------------------------------------------------------------------------


def membership_check(name: str, D: DiracField, X: VectorField, a: KForm,
                     points: np.ndarray, tol: float = MEMBERSHIP_TOL) -> PointCheck:
    sec = Section(X, a)
    d = span_distances(D.frames(points), sec.evaluate(points))
    res, worst = _worst(d, points)
    return PointCheck(name, res <= tol, res, worst, tol)


def is_hamiltonian_pair(X: VectorField, H, D: DiracField, points: np.ndarray,
                        tol: float = MEMBERSHIP_TOL) -> PointCheck:
    """(X, dH) ∈ Γ(D) at every sample."""
    H = as_expr(H)
    return membership_check("hamiltonian_pair", D, X, differential(H, D.chart), points, tol)


def is_casimir(f, D: DiracField, points: np.ndarray, tol: float = MEMBERSHIP_TOL) -> PointCheck:
    f = as_expr(f)
    return membership_check("casimir", D, VectorField.zero(D.chart), differential(f, D.chart), points, tol)


def is_isotropic_field(X: VectorField, D: DiracField, points: np.ndarray,
                       tol: float = MEMBERSHIP_TOL) -> PointCheck:
    return membership_check("isotropic_field", D, X, KForm.zero(D.chart, 1), points, tol)


def is_admissible_hamiltonian(H, D: DiracField, points: np.ndarray,
                              tol: float = MEMBERSHIP_TOL) -> PointCheck:
    """dH annihilates the kernel D ∩ TM at every sample."""
    H = as_expr(H)
    grads = differential(H, D.chart).evaluate(points)
    vals = []
    for f, g in zip(D.frames(points), grads):
        k = pw.kernel_basis(pw.DiracPointFrame(f))
        vals.append(float(np.max(np.abs(g @ k), initial=0.0)) / max(1.0, float(np.linalg.norm(g))))
    res, worst = _worst(np.array(vals), points)
    return PointCheck("admissible_hamiltonian", res <= tol, res, worst, tol)


def poisson_bracket(H, F, D: DiracField, X_H: VectorField, points: np.ndarray | None = None) -> Expr:
    """{H, F} = X_H(F), after verifying that X_H is a Hamiltonian vector field of H."""
    pts = D.samples() if points is None else points
    check = is_hamiltonian_pair(X_H, H, D, pts)
    if not check.passed:
        raise UnverifiedHamiltonianError(
            f"(X_H, dH) is not a section: residual {check.residual:.3e} at {check.worst_point}")
    return X_H(as_expr(F))


# ---------------------------------------------------------------------------
# Induced structures on coordinate slices
# ---------------------------------------------------------------------------


def induced_dirac_on_level(D: DiracField, constraints: Mapping[str, float],
                           count: int = 128) -> DiracField:
    """Pull D back to the slice where the constrained coordinates are fixed.

    Sections are recombined (with coefficients that are expressions) until their
    tangent parts are tangent to the slice; the survivors are restricted and an
    everywhere-independent subset of them is kept.
    """
    chart = D.chart
    fixed = {name: as_expr(v) for name, v in constraints.items()}
    fixed_idx = [chart.index(nm) for nm in fixed]
    sub = chart.slice(fixed)
    keep = [i for i in range(chart.dim) if i not in fixed_idx]
    pts_sub = halton_points(sub, count)
    pts = np.zeros((count, chart.dim))
    pts[:, keep] = pts_sub
    for nm, v in constraints.items():
        pts[:, chart.index(nm)] = float(v)

    # rank of the constrained tangent rows must not jump on the slice
    frames = D.frames(pts)
    rows = frames[:, fixed_idx, :]
    ranks = {pw.numerical_rank(r, scale=max(1.0, float(np.linalg.norm(f, 2))))
             for r, f in zip(rows, frames)}
    if len(ranks) != 1:
        raise NonRegularConstraintError(f"constraint rank varies over the slice: {sorted(ranks)}")

    secs = list(D.sections)
    for j in fixed_idx:
        best, best_min = None, 0.0
        for i, s in enumerate(secs):
            c = s.X.components[j]
            if c == ZERO:
                continue
            vals = np.abs(evaluate_many([c], chart, pts)[:, 0])
            m = float(np.min(vals))
            if m > best_min:
                best, best_min = i, m
        if best is None or best_min <= 1e-9:
            continue
        piv = secs.pop(best)
        pc = piv.X.components[j]
        new = []
        for s in secs:
            c = s.X.components[j]
            new.append(s if c == ZERO else s + piv.scaled(-(c / pc)))
        secs = new

    restricted = []
    for s in secs:
        comps = tuple(simplify(substitute(s.X.components[i], fixed)) for i in keep)
        coeffs = {(k,): substitute(s.a.coeff(i), fixed) for k, i in enumerate(keep)}
        restricted.append(Section(VectorField(sub, comps), KForm(sub, 1, coeffs)))

    chosen: list[Section] = []
    for s in restricted:
        if s.is_zero_symbolic():
            continue
        mats = np.stack([c.evaluate(pts_sub) for c in chosen + [s]], axis=2)
        if all(pw.numerical_rank(m) == len(chosen) + 1 for m in mats):
            chosen.append(s)
        if len(chosen) == sub.dim:
            break
    if len(chosen) != sub.dim:
        raise NonRegularConstraintError(
            f"could only find {len(chosen)} independent sections on the {sub.dim}-dimensional slice")
    return DiracField(sub, tuple(chosen), "dirac", ("induced", D.source, dict(constraints)))
