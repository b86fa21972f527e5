"""Action functions and action-angle verification on a family of Liouville tori.

The torus generators are Zₖ = Σⱼ Lₖⱼ Xⱼ with L the (continued) period lattice.
For a Hamiltonian system the generator Zₖ is Hamiltonian for the 1-form
βₖ = Σⱼ Lₖⱼ dHⱼ, which is closed on every characteristic leaf.  The action Aₖ(y)
is the integral of βₖ along a leaf path from y₀ (the point where the leaf of y
meets a fixed transversal slice through the base point) to y.

Paths are concatenations of flow segments: first the tangent parts of the frame
sections carry y₀ to w, the point where the torus of y meets the torus-family
slice, then the joint flow carries w to y.  Integrals use composite 5-point
Gauss–Legendre panels.

Under the sign convention dH = i_X ω the normal form reads ω_S = Σ dθₖ∧dAₖ.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg import qr

from . import pointwise as pw
from .dirac import DiracField, PointCheck, is_casimir
from .expr import ZERO, Expr
from .fields import KForm, VectorField, evaluate_many, exterior_d, gradient
from .flow import FlowError, JointFlow
from .system import IntegrableSystem
from .torus import RETURN_TOL, TorusChart, TorusError, TorusTools

QUAD_TOL = 1e-10
PATH_TOL = 1e-8
CLOSED_TOL = 1e-8
ISOTROPY_TOL = 1e-9
AA_TOL = 1e-5
COAFFINE_TOL = 1e-7
RANK_REL_TOL = 1e-7

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


class ActionError(RuntimeError):
    pass


class DegenerateCaseError(ActionError):
    """Neither regularity hypothesis could be verified: actions are not computed."""


class LeafTransversalError(ActionError):
    """The leaf (or torus) of a point does not meet the transversal slice."""


class QuadratureError(ActionError):
    pass


class AdmissibilityError(ActionError):
    """A Mineur 1-form whose differential does not restrict to the leaf form."""


class NotLagrangianError(ActionError):
    pass


class RankJumpError(ActionError):
    pass


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------


def _wrapped(d: np.ndarray) -> np.ndarray:
    return np.mod(d + 0.5, 1.0) - 0.5


def _solve_coords(exprs: Sequence[Expr], chart, start: np.ndarray, idx: Sequence[int],
                  target: np.ndarray, iters: int = 60) -> tuple[np.ndarray, float]:
    """Adjust the coordinates ``idx`` of ``start`` so that exprs = target (batched Newton)."""
    x = np.array(start, dtype=float)
    if not len(idx):
        r = evaluate_many(exprs, chart, x) - target if len(exprs) else np.zeros((len(x), 0))
        return x, float(np.max(np.abs(r), initial=0.0))
    grads = [g for e in exprs for g in (gradient(e, chart)[i] for i in idx)]
    k = len(idx)
    idx = list(idx)
    res = np.inf
    for _ in range(iters):
        r = evaluate_many(exprs, chart, x) - target
        res = float(np.max(np.abs(r), initial=0.0))
        if res < 1e-13:
            break
        J = evaluate_many(grads, chart, x).reshape(len(x), len(exprs), k)
        try:
            step = np.linalg.solve(J, -r[..., None])[..., 0] if len(exprs) == k else \
                np.einsum("bij,bj->bi", np.linalg.pinv(J), -r)
        except np.linalg.LinAlgError:
            break
        x[:, idx] += step
        if not np.all(np.isfinite(x)):
            break
    x = chart.reduce(x)
    return x, res


@dataclass(frozen=True)
class HypothesisReport:
    declared: str
    kernel_intersection_dims: tuple[int, ...]
    leaf_codims: tuple[int, ...]

    @property
    def constant_intersection(self) -> bool:
        return len(set(self.kernel_intersection_dims)) == 1

    @property
    def regular_foliation(self) -> bool:
        return len(set(self.leaf_codims)) == 1

    @property
    def verified(self) -> bool:
        return self.constant_intersection if self.declared == "i" else self.regular_foliation


@dataclass(frozen=True)
class ActionSetup:
    """A Hamiltonian system, its base torus chart, and the torus family over a level grid.

    ``tc.transversal`` names the coordinates of the slice through the base point
    that meets every nearby torus once; ``casimir_coords`` name the coordinates of
    the slice meeting every nearby characteristic leaf once.
    """

    sys: IntegrableSystem
    tools: TorusTools
    tc: TorusChart
    casimir_coords: tuple[str, ...]
    hypothesis: str
    casimirs: tuple[int, ...]
    leaf_fields: tuple[VectorField, ...]
    levels: np.ndarray
    family: tuple[TorusChart, ...]
    hypothesis_report: HypothesisReport

    @property
    def p(self) -> int:
        return self.sys.p

    @property
    def n(self) -> int:
        return self.sys.chart.dim

    @property
    def dirac(self) -> DiracField:
        return self.sys.dirac

    @classmethod
    def create(cls, sys: IntegrableSystem, tc: TorusChart, levels: np.ndarray | None = None,
               casimir_coords: Sequence[str] = (), hypothesis: str = "ii",
               tools: TorusTools | None = None) -> "ActionSetup":
        """Validate the data and continue the lattice over the level grid.

        ``levels`` holds values of the transversal coordinates, one row per torus.
        """
        if not sys.is_hamiltonian:
            raise ActionError("actions need a system with verified Hamiltonians")
        if hypothesis not in ("i", "ii"):
            raise ValueError("hypothesis must be 'i' or 'ii'")
        tools = tools or TorusTools(sys)
        chart, D = sys.chart, sys.dirac
        n = chart.dim
        if len(tc.transversal) != sys.q:
            raise ActionError(f"need {sys.q} transversal coordinates, got {len(tc.transversal)}")
        tidx = [chart.index(c) for c in tc.transversal]
        X0 = sys.field_values(tc.base)[0]
        if pw.numerical_rank(np.vstack([X0, np.eye(n)[tidx]]), scale=1.0) != n:
            raise ActionError("transversal coordinates are not complementary to the torus")
        f0 = D.point_frame(tc.base)
        bc = pw.bi_corank(f0)
        cidx = [chart.index(c) for c in casimir_coords]
        if len(cidx) != bc.s:
            raise ActionError(f"leaves have codimension {bc.s} but {len(cidx)} Casimir coordinates were given")
        tm = pw.projections(f0)[0]
        if pw.numerical_rank(np.hstack([tm, np.eye(n)[:, cidx]]), scale=1.0) != n:
            raise ActionError("Casimir slice is not transversal to the characteristic foliation")
        if not set(cidx) <= set(tidx):
            raise ActionError("Casimir coordinates must be among the transversal coordinates")

        if levels is None:
            levels = tc.base[tidx][None]
        levels = np.atleast_2d(np.asarray(levels, dtype=float))
        family = _continue_family(tools, tc, tidx, levels)
        pts = np.concatenate([_chart_samples(tools, c, 4) for c in _spread(family)])
        cas = tuple(i for i, f in enumerate(sys.F) if is_casimir(f, D, pts).passed)
        if len(cas) != bc.s:
            raise ActionError(f"found {len(cas)} Casimir integrals, need {bc.s} to label the leaves")
        fields = tuple(VectorField(chart, s.X.components) for s in D.sections if not s.X.is_zero_symbolic())
        rep = hypothesis_report(sys, D, pts, hypothesis)
        if not rep.verified:
            other = rep.regular_foliation if hypothesis == "i" else rep.constant_intersection
            raise DegenerateCaseError(
                f"declared hypothesis ({hypothesis}) fails on the torus family"
                + ("" if other else " and so does the other one")
                + f": intersection dims {sorted(set(rep.kernel_intersection_dims))}, "
                  f"leaf codimensions {sorted(set(rep.leaf_codims))}")
        return cls(sys, tools, tc, tuple(casimir_coords), hypothesis, cas, fields, levels, family, rep)

    def with_lattice(self, U: np.ndarray) -> "ActionSetup":
        """The same family with generator basis U·L."""
        U = np.asarray(U)
        fam = tuple(replace(c, lattice=U @ c.lattice, monodromy=None) for c in self.family)
        return replace(self, tc=replace(self.tc, lattice=U @ self.tc.lattice, monodromy=None), family=fam)

    def level_points(self) -> np.ndarray:
        return np.array([c.base for c in self.family])

    def sample_points(self, per_axis: int = 4, which: str = "spread") -> np.ndarray:
        charts = _spread(self.family) if which == "spread" else self.family
        return np.concatenate([_chart_samples(self.tools, c, per_axis) for c in charts])


def _spread(family: Sequence[TorusChart]) -> list[TorusChart]:
    """First, middle and last chart of the family (without repeats)."""
    idx = sorted({0, len(family) // 2, len(family) - 1})
    return [family[i] for i in idx]


def _chart_samples(tools: TorusTools, c: TorusChart, per_axis: int) -> np.ndarray:
    s = (np.arange(per_axis) + 0.25) / per_axis
    return tools.grid_flow(c.base, list(c.lattice), [s] * tools.p).reshape(-1, tools.n)


def _continue_family(tools: TorusTools, tc: TorusChart, tidx: list[int], levels: np.ndarray) -> tuple[TorusChart, ...]:
    """Torus charts at base points with the transversal coordinates set to each level row,
    continuing the lattice outward from the base torus."""
    bases = np.broadcast_to(tc.base, (len(levels), tools.n)).copy()
    bases[:, tidx] = levels
    bases = tools.chart.reduce(bases)
    dist = np.linalg.norm(levels - tc.base[tidx], axis=1)
    done_pts = [np.asarray(tc.base, dtype=float)]
    done_L = [tc.lattice]
    out: list[TorusChart | None] = [None] * len(levels)
    for i in np.argsort(dist, kind="stable"):
        j = int(np.argmin([np.linalg.norm(bases[i, tidx] - q[tidx]) for q in done_pts]))
        guess = done_L[j]
        L, res = tools.lattice_at(bases[i][None], guess)
        L = L[0]
        if res > RETURN_TOL or np.linalg.norm(L - guess) > 0.5 * np.linalg.norm(guess):
            raise TorusError(f"lattice continuation failed at level {tuple(levels[i])}")
        out[i] = TorusChart(bases[i], L, tools.sys.integral_values(bases[i])[0], res, tc.transversal)
        done_pts.append(bases[i])
        done_L.append(L)
    return tuple(out)


def hypothesis_report(sys: IntegrableSystem, D: DiracField, points: np.ndarray, declared: str) -> HypothesisReport:
    """dim(span X ∩ (TM ∩ D)) and leaf codimension at every sample."""
    dims, codims = [], []
    X = sys.field_values(points)
    for f, x in zip(D.frames(points), X):
        fr = pw.DiracPointFrame(f)
        k = pw.kernel_basis(fr)
        dims.append(pw.subspace_intersection(x.T, k).shape[1] if k.shape[1] else 0)
        codims.append(fr.n - pw.numerical_rank(fr.X, scale=fr.scale))
    return HypothesisReport(declared, tuple(dims), tuple(codims))


# ---------------------------------------------------------------------------
# Lattice along the family and β
# ---------------------------------------------------------------------------


def lattice_near(setup: ActionSetup, points: np.ndarray) -> np.ndarray:
    """Continued period lattice at each point (B, p, p), guessed from the nearest family chart."""
    pts = np.atleast_2d(points)
    if not len(pts):
        return np.zeros((0, setup.p, setup.p))
    lev = setup.sys.integral_values(pts)
    fam_lev = np.array([c.levels for c in setup.family])
    j = np.argmin(np.linalg.norm(lev[:, None] - fam_lev[None], axis=-1), axis=1)
    guess = np.array([setup.family[i].lattice for i in j])
    L, res = setup.tools.lattice_at(pts, guess)
    if res > RETURN_TOL:
        raise TorusError(f"period continuation failed (return error {res:.3e})")
    far = np.linalg.norm(L - guess, axis=(1, 2)) > 0.5 * np.linalg.norm(guess, axis=(1, 2))
    if np.any(far):
        raise TorusError("period continuation jumped to another lattice vector")
    return L


@dataclass(frozen=True)
class BetaForm:
    """βₖ = Σⱼ Lₖⱼ dHⱼ for every generator k, evaluated pointwise."""

    setup: ActionSetup

    def coefficients(self, points) -> np.ndarray:
        """bₖⱼ = Lₖⱼ, shape (B, p, p)."""
        return lattice_near(self.setup, points)

    def evaluate(self, points) -> np.ndarray:
        """Components of β₁..β_p, shape (B, p, n)."""
        pts = np.atleast_2d(points)
        dH = _dH(self.setup, pts)
        return np.einsum("bkj,bjn->bkn", self.coefficients(pts), dH)

    def leaf_closedness(self, points) -> PointCheck:
        """max |dβₖ(u, v)| over leaf basis pairs; dβₖ = Σⱼ dLₖⱼ ∧ dHⱼ."""
        s = self.setup
        pts = np.atleast_2d(points)
        L = self.coefficients(pts)
        dL = s.tools.lattice_differential(pts, L)  # (B, k, j, n)
        dH = _dH(s, pts)
        worst, wpt = 0.0, None
        for b, f in enumerate(s.dirac.frames(pts)):
            q = pw.projections(pw.DiracPointFrame(f))[0]
            a = np.einsum("kjn,nu->kju", dL[b], q)
            h = dH[b] @ q
            m = np.einsum("kju,jv->kuv", a, h)
            v = float(np.max(np.abs(m - m.transpose(0, 2, 1)), initial=0.0))
            if v > worst:
                worst, wpt = v, tuple(float(t) for t in pts[b])
        return PointCheck("beta_closed_on_leaves", worst <= CLOSED_TOL, worst, wpt, CLOSED_TOL)


def beta_form(setup: ActionSetup) -> BetaForm:
    L = setup.tc.lattice
    if abs(np.linalg.det(L)) < 1e-12:
        raise ActionError("singular period lattice (frequency matrix undefined)")
    return BetaForm(setup)


def _dH(setup: ActionSetup, pts: np.ndarray) -> np.ndarray:
    exprs = [g for h in setup.sys.H for g in gradient(h, setup.sys.chart)]
    return evaluate_many(exprs, setup.sys.chart, pts).reshape(len(pts), setup.p, setup.n)


# ---------------------------------------------------------------------------
# Path integrals
# ---------------------------------------------------------------------------


def _panel_nodes(panels: int) -> tuple[np.ndarray, np.ndarray]:
    s = ((np.arange(panels)[:, None] + (_GL_X[None] + 1) / 2) / panels).ravel()
    w = np.tile(_GL_W / (2 * panels), panels)
    return s, w


def _segment_integral(flow: JointFlow, t: np.ndarray, start: np.ndarray, integrand,
                      label: str) -> np.ndarray:
    """∫₀¹ integrand(γ(s), t) ds with γ(s) = Φ_{s t}(start), panels doubled until stable."""
    prev = None
    panels = 1
    while panels <= 128:
        s, w = _panel_nodes(panels)
        pts = flow.flow(t, start, s_eval=s)  # (S, B, n)
        vals = integrand(pts.reshape(-1, pts.shape[-1]), np.repeat(t[None], len(s), 0).reshape(-1, t.shape[-1]))
        cur = np.einsum("s,sbk->bk", w, vals.reshape(len(s), len(start), -1))
        if prev is not None:
            change = np.max(np.abs(cur - prev) / np.maximum(1.0, np.abs(cur)), initial=0.0)
            if change <= QUAD_TOL:
                return cur
        prev = cur
        panels *= 2
    raise QuadratureError(f"quadrature along the {label} did not converge")


@dataclass(frozen=True)
class ActionValues:
    actions: np.ndarray  # (B, p)
    angles: np.ndarray  # (B, p)
    leaf_base: np.ndarray  # y₀
    torus_base: np.ndarray  # w
    torus_lattice: np.ndarray  # L(w)
    path_independence: float


class _Evaluator:
    """Batched action and angle evaluation for one setup."""

    def __init__(self, setup: ActionSetup):
        self.s = setup
        sys = setup.sys
        chart = sys.chart
        self.chart = chart
        self.vflow = JointFlow(setup.leaf_fields, setup.tools.flow.engine)
        self.xflow = setup.tools.flow
        # Vᵢ(Hⱼ) and X_l(Hⱼ) as symbolic tables
        self.vh = [[f(h) for h in sys.H] for f in setup.leaf_fields]
        self.xh = [[x(h) for h in sys.H] for x in sys.X]
        self.tidx = [chart.index(c) for c in setup.tc.transversal]
        self.cidx = [chart.index(c) for c in setup.casimir_coords]

    # -- base points --------------------------------------------------------

    def leaf_bases(self, ys: np.ndarray) -> np.ndarray:
        s = self.s
        start = np.broadcast_to(s.tc.base, ys.shape).copy()
        if not s.casimirs:
            return start
        F = [s.sys.F[i] for i in s.casimirs]
        target = evaluate_many(F, self.chart, ys)
        y0, res = _solve_coords(F, self.chart, start, self.cidx, target)
        if res > 1e-10:
            raise LeafTransversalError(f"leaf does not meet the transversal slice (residual {res:.3e})")
        return y0

    def torus_bases(self, ys: np.ndarray, y0: np.ndarray) -> np.ndarray:
        F = self.s.sys.F
        target = evaluate_many(F, self.chart, ys)
        w, res = _solve_coords(F, self.chart, y0, self.tidx, target)
        if res > 1e-10:
            raise LeafTransversalError(f"torus does not meet the transversal slice (residual {res:.3e})")
        return w

    def leaf_path(self, start: np.ndarray, end: np.ndarray, order: Sequence[int]) -> np.ndarray:
        """Segment times τ with Φ^{V_last}_{τ} ∘ … ∘ Φ^{V_first}_{τ}(start) = end (min-norm Newton)."""
        B, n = start.shape
        k = len(self.s.leaf_fields)
        tau = np.zeros((B, k))
        for _ in range(40):
            pts, mids, Js = start, [], []
            for i in order:
                t = np.zeros((B, k))
                t[:, i] = tau[:, i]
                pts, J = self.vflow.flow(t, pts, with_jacobian=True)
                mids.append(pts)
                Js.append(J)
            r = self.chart.difference(pts, end)
            if np.max(np.abs(r), initial=0.0) < 1e-12:
                return tau
            cols = np.zeros((B, n, k))
            acc = np.tile(np.eye(n), (B, 1, 1))
            for pos in range(len(order) - 1, -1, -1):
                i = order[pos]
                v = self.vflow.values(mids[pos])[:, i]
                cols[:, :, i] = np.einsum("bij,bj->bi", acc, v)
                acc = acc @ Js[pos]
            step = np.einsum("bkn,bn->bk", np.linalg.pinv(cols), -r)
            tau = tau + step
            if not np.all(np.isfinite(tau)):
                break
        raise LeafTransversalError("no leaf path found from the transversal slice to the torus")

    # -- integrals ----------------------------------------------------------

    def _leaf_integral(self, start: np.ndarray, tau: np.ndarray, order: Sequence[int]) -> np.ndarray:
        B = len(start)
        k = len(self.s.leaf_fields)
        total = np.zeros((B, self.s.p))
        pts = start
        for i in order:
            t = np.zeros((B, k))
            t[:, i] = tau[:, i]
            dead = all(e == ZERO for e in self.vh[i])
            if not dead and np.max(np.abs(tau[:, i])) > 1e-14:
                exprs = self.vh[i]

                def integrand(g, tt, exprs=exprs, i=i):
                    L = lattice_near(self.s, g)
                    dh = evaluate_many(exprs, self.chart, g)  # (M, p) = dHⱼ(Vᵢ)
                    return np.einsum("mkj,mj->mk", L, dh) * tt[:, i:i + 1]

                total += _segment_integral(self.vflow, t, pts, integrand, "leaf path")
            pts = self.vflow.flow(t, pts)
        return total

    def _torus_integral(self, w: np.ndarray, Lw: np.ndarray, theta: np.ndarray) -> np.ndarray:
        B = len(w)
        if all(e == ZERO for row in self.xh for e in row):
            return np.zeros((B, self.s.p))
        tvec = np.einsum("bk,bkj->bj", theta, Lw)
        flat = [e for row in self.xh for e in row]
        p = self.s.p

        def integrand(g, tt):
            m = len(g) // B
            xh = evaluate_many(flat, self.chart, g).reshape(len(g), p, p)  # [l, j] = X_l(H_j)
            L = np.tile(Lw, (m, 1, 1))
            return np.einsum("mkj,ml,mlj->mk", L, tt, xh)

        return _segment_integral(self.xflow, tvec, w, integrand, "torus path")

    def evaluate(self, ys, check_independence: bool = True) -> ActionValues:
        ys = self.chart.reduce(np.atleast_2d(np.asarray(ys, dtype=float)))
        y0 = self.leaf_bases(ys)
        w = self.torus_bases(ys, y0)
        Lw = lattice_near(self.s, w)
        theta = self.s.tools.angles(w, Lw, ys)
        k = len(self.s.leaf_fields)
        order = list(range(k))
        tau = self.leaf_path(y0, w, order)
        A = self._leaf_integral(y0, tau, order) + self._torus_integral(w, Lw, theta)
        dev = 0.0
        if check_independence and k > 1:
            rev = order[::-1]
            tau2 = self.leaf_path(y0, w, rev)
            A2 = self._leaf_integral(y0, tau2, rev) + self._torus_integral(w, Lw, theta)
            dev = float(np.max(np.abs(A - A2), initial=0.0))
            if dev > PATH_TOL:
                raise ActionError(f"action depends on the leaf path (difference {dev:.3e}); β is not closed on the leaf")
        return ActionValues(A, theta, y0, w, Lw, dev)


def evaluate_actions(setup: ActionSetup, ys, check_independence: bool = True) -> ActionValues:
    """Actions and angles at each point (the base torus has A = 0, θ = 0 at its base point)."""
    return _Evaluator(setup).evaluate(ys, check_independence)


def action_by_path_integral(setup: ActionSetup, ys, k: int | None = None,
                            check_independence: bool = True) -> np.ndarray:
    """Aₖ(y) = ∫ βₖ along a leaf path from the transversal slice to y."""
    y = np.asarray(ys, dtype=float)
    A = evaluate_actions(setup, y, check_independence).actions
    A = A if k is None else A[:, k]
    return A[0] if y.ndim == 1 else A


# ---------------------------------------------------------------------------
# Mineur loop integrals
# ---------------------------------------------------------------------------


def mineur_admissibility(setup: ActionSetup, alpha: KForm, points: np.ndarray | None = None) -> PointCheck:
    """max |dα(u, v) − ω_S(u, v)| over leaf basis pairs."""
    pts = setup.sample_points() if points is None else np.atleast_2d(points)
    da = exterior_d(alpha).dense(pts)
    worst, wpt = 0.0, None
    for b, f in enumerate(setup.dirac.frames(pts)):
        fr = pw.DiracPointFrame(f)
        q = pw.projections(fr)[0]
        v = float(np.max(np.abs(q.T @ da[b] @ q - pw.leaf_form_matrix(fr, q)), initial=0.0))
        if v > worst:
            worst, wpt = v, tuple(float(t) for t in pts[b])
    return PointCheck("mineur_form_admissible", worst <= CLOSED_TOL, worst, wpt, CLOSED_TOL)


def action_by_mineur(setup: ActionSetup, alpha: KForm, ys, k: int | None = None,
                     check: bool = True) -> np.ndarray:
    """∮ α over the closed orbit s ↦ Φ_{s Lₖ}(y), s ∈ [0, 1], for each generator k."""
    if alpha.degree != 1:
        raise ValueError("Mineur form must be a 1-form")
    if check:
        c = mineur_admissibility(setup, alpha)
        if not c.passed:
            raise AdmissibilityError(f"dα differs from the leaf form by {c.residual:.3e} at {c.worst_point}")
    y = np.asarray(ys, dtype=float)
    pts = setup.sys.chart.reduce(np.atleast_2d(y))
    B, p, n = len(pts), setup.p, setup.n
    L = lattice_near(setup, pts)
    flow = setup.tools.flow
    starts = np.repeat(pts, p, axis=0)
    times = L.reshape(-1, p)
    back = flow.flow(times, starts)
    err = float(np.max(np.linalg.norm(setup.sys.chart.difference(back, starts), axis=1)))
    if err > RETURN_TOL:
        raise TorusError(f"generator orbit does not close (return error {err:.3e})")
    comps = alpha.evaluate  # coefficients on (i,) keys, in chart order

    def integrand(g, tt):
        a = comps(g)  # (M, n)
        v = np.einsum("ml,mln->mn", tt, flow.values(g))
        return np.sum(a * v, axis=1, keepdims=True)

    out = _segment_integral(flow, times, starts, integrand, "generator loop").reshape(B, p)
    out = out if k is None else out[:, k]
    return out[0] if y.ndim == 1 else out


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def verify_torus_isotropy(sys: IntegrableSystem, D: DiracField, points: np.ndarray) -> PointCheck:
    """max |ω_S(Xᵢ, Xⱼ)|; fields outside the characteristic space count as failures."""
    pts = np.atleast_2d(points)
    X = sys.field_values(pts)
    worst, wpt = 0.0, None
    detail = ""
    for b, f in enumerate(D.frames(pts)):
        fr = pw.DiracPointFrame(f)
        try:
            w = pw.leaf_form_matrix(fr, X[b].T)
            v = float(np.max(np.abs(w), initial=0.0))
        except pw.FrameError:
            v, detail = float("inf"), "fields leave the characteristic distribution"
        if v > worst or wpt is None:
            worst, wpt = max(v, worst), tuple(float(t) for t in pts[b]) if v >= worst else wpt
    return PointCheck("torus_isotropy", worst <= ISOTROPY_TOL, worst, wpt, ISOTROPY_TOL, detail)


@dataclass(frozen=True)
class LeafDifferentials:
    points: np.ndarray
    bases: tuple[np.ndarray, ...]  # leaf basis q at each point (n, d)
    dA: np.ndarray  # (B, p, d)
    dtheta: np.ndarray  # (B, p, d)
    omega: tuple[np.ndarray, ...]  # leaf form on q


def _central(ev: _Evaluator, pts: np.ndarray, bases, h: float):
    """Central differences of A and θ along each leaf basis vector."""
    B = len(pts)
    d = bases[0].shape[1]
    plus = np.concatenate([pts[b][None] + h * bases[b].T for b in range(B)])
    minus = np.concatenate([pts[b][None] - h * bases[b].T for b in range(B)])
    vals = ev.evaluate(np.concatenate([plus, minus]), check_independence=False)
    M = B * d
    dA = (vals.actions[:M] - vals.actions[M:]) / (2 * h)
    # θ is measured from the torus base point; both evaluations share the same slice
    dth = _wrapped(vals.angles[:M] - vals.angles[M:]) / (2 * h)
    p = vals.actions.shape[1]
    return dA.reshape(B, d, p).transpose(0, 2, 1), dth.reshape(B, d, p).transpose(0, 2, 1)


def leaf_differentials(setup: ActionSetup, points: np.ndarray, h: float = 1e-4,
                       richardson: bool = True) -> LeafDifferentials:
    pts = np.atleast_2d(points)
    frames = [pw.DiracPointFrame(f) for f in setup.dirac.frames(pts)]
    bases = tuple(pw.projections(f)[0] for f in frames)
    if len({q.shape[1] for q in bases}) != 1:
        raise RankJumpError("leaf dimension varies across the samples")
    omega = tuple(pw.leaf_form_matrix(f, q) for f, q in zip(frames, bases))
    ev = _Evaluator(setup)
    dA, dth = _central(ev, pts, bases, h)
    if richardson:
        dA2, dth2 = _central(ev, pts, bases, h / 2)
        dA, dth = (4 * dA2 - dA) / 3, (4 * dth2 - dth) / 3
    return LeafDifferentials(pts, bases, dA, dth, omega)


def _defects(ld: LeafDifferentials) -> np.ndarray:
    """Δ = ω_S − Σ dθₖ∧dAₖ on the leaf basis, shape (B, d, d)."""
    nf = np.einsum("bku,bkv->buv", ld.dtheta, ld.dA)
    return np.array(ld.omega) - (nf - nf.transpose(0, 2, 1))


@dataclass(frozen=True)
class FullAAReport:
    residual: float
    worst_point: tuple[float, ...] | None
    action_order: tuple[int, ...]
    lagrangian: bool
    coisotropic_transversal: bool
    h: float
    threshold: float = AA_TOL

    @property
    def passed(self) -> bool:
        return self.lagrangian and self.residual <= self.threshold


def _lagrangian_tori(setup: ActionSetup, pts: np.ndarray) -> tuple[bool, bool]:
    X = setup.sys.field_values(pts)
    lag, colag = True, True
    tidx = [setup.sys.chart.index(c) for c in setup.tc.transversal]
    for f, x in zip(setup.dirac.frames(pts), X):
        fr = pw.DiracPointFrame(f)
        lag &= pw.lagrangian_check(x.T, fr, tol=ISOTROPY_TOL).lagrangian
        colag &= pw.colagrangian_check(np.eye(setup.n)[:, tidx], fr).colagrangian
    return bool(lag), bool(colag)


def verify_full_aa(setup: ActionSetup, points: np.ndarray | None = None, h: float = 1e-4,
                   richardson: bool = True, differentials: LeafDifferentials | None = None) -> FullAAReport:
    """max |ω_S(u, v) − Σ (dθₖ∧dAₖ)(u, v)| over leaf basis pairs at torus samples."""
    pts = setup.sample_points(per_axis=3) if points is None else np.atleast_2d(points)
    lag, colag = _lagrangian_tori(setup, pts)
    if not lag:
        raise NotLagrangianError("tori are not Lagrangian in their leaves (dimension or isotropy fails)")
    ld = differentials if differentials is not None else leaf_differentials(setup, pts, h, richardson)
    delta = np.abs(_defects(ld)).reshape(len(pts), -1)
    per = delta.max(axis=1, initial=0.0)
    b = int(np.argmax(per))
    jac = np.mean(ld.dA, axis=0)  # (p, d)
    _, _, piv = qr(jac.T, pivoting=True)
    return FullAAReport(float(per[b]), tuple(float(t) for t in pts[b]), tuple(int(i) for i in piv),
                        lag, colag, h)


def full_aa_convergence(setup: ActionSetup, steps: Sequence[float] = (0.04, 0.02, 0.01),
                        points: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of plain central differences at each step and the observed orders."""
    pts = setup.sample_points(per_axis=3) if points is None else np.atleast_2d(points)
    res = []
    for h in steps:
        ld = leaf_differentials(setup, pts, h, richardson=False)
        res.append(float(np.max(np.abs(_defects(ld)), initial=0.0)))
    res = np.array(res)
    ratios = np.array(steps[:-1]) / np.array(steps[1:])
    orders = np.log(res[:-1] / res[1:]) / np.log(ratios)
    return res, orders


@dataclass(frozen=True)
class PartialAAReport:
    angle_defect: float
    worst_point: tuple[float, ...] | None
    intersection_rank: int
    f: np.ndarray  # (B, c, c) transverse coefficients fᵢⱼ on an aligned basis
    transverse_basis: np.ndarray  # basis at the first sample (n, c)
    threshold: float = AA_TOL

    @property
    def passed(self) -> bool:
        return self.angle_defect <= self.threshold


def verify_partial_aa(setup: ActionSetup, points: np.ndarray | None = None, h: float = 1e-4,
                      differentials: LeafDifferentials | None = None) -> PartialAAReport:
    """Δ = ω_S − Σ dθₖ∧dAₖ must annihilate every angle direction ∂θₖ; the rest is Σ fᵢⱼ dzᵢ∧dzⱼ."""
    pts = setup.sample_points(per_axis=3) if points is None else np.atleast_2d(points)
    rep = hypothesis_report(setup.sys, setup.dirac, pts, "i")
    if not rep.constant_intersection:
        raise RankJumpError(f"rank of span X ∩ kernel jumps across the family: {sorted(set(rep.kernel_intersection_dims))}")
    ld = differentials if differentials is not None else leaf_differentials(setup, pts, h)
    delta = _defects(ld)
    L = lattice_near(setup, pts)
    Z = np.einsum("bkj,bjn->bkn", L, setup.sys.field_values(pts))
    worst, wpt = 0.0, None
    fs, basis0 = [], None
    for b in range(len(pts)):
        q = ld.bases[b]
        z = Z[b] @ q  # (p, d) generator coordinates in the leaf basis
        v = float(np.max(np.abs(z @ delta[b]), initial=0.0))
        if v > worst or wpt is None:
            worst, wpt = max(v, worst), tuple(float(t) for t in pts[b])
        ann = pw.null_space(np.vstack([ld.dtheta[b], ld.dA[b]]), tol=1e-6, scale=1.0)
        if ann.shape[1]:
            e = pw.aligned_basis(q @ ann)
            c = q.T @ e
            fs.append(c.T @ delta[b] @ c)
        else:
            e = np.zeros((setup.n, 0))
            fs.append(np.zeros((0, 0)))
        if basis0 is None:
            basis0 = e
    if len({f.shape for f in fs}) != 1:
        raise RankJumpError("transverse dimension varies across the samples")
    return PartialAAReport(worst, wpt, rep.kernel_intersection_dims[0], np.array(fs), basis0)


# ---------------------------------------------------------------------------
# Co-affine structure and functional dependence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoaffineReport:
    U: np.ndarray
    offset: np.ndarray
    deviation: float
    threshold: float = COAFFINE_TOL

    @property
    def passed(self) -> bool:
        return self.deviation <= self.threshold


def is_unimodular(U: np.ndarray) -> bool:
    U = np.asarray(U)
    return (U.ndim == 2 and U.shape[0] == U.shape[1] and np.all(U == np.round(U))
            and abs(round(float(np.linalg.det(U)))) == 1)


def coaffine_transition(setup: ActionSetup, U: np.ndarray, points: np.ndarray | None = None,
                        base_actions: np.ndarray | None = None) -> CoaffineReport:
    """Recompute actions with generator basis U·L and compare against U·A + c."""
    U = np.asarray(U)
    if U.shape != (setup.p, setup.p) or not is_unimodular(U):
        raise ValueError("U must be a square integer matrix with determinant ±1")
    pts = setup.level_points() if points is None else np.atleast_2d(points)
    A = evaluate_actions(setup, pts, False).actions if base_actions is None else base_actions
    A2 = evaluate_actions(setup.with_lattice(U), pts, False).actions
    diff = A2 - A @ U.T
    c = diff.mean(axis=0)
    return CoaffineReport(U, c, float(np.max(np.abs(diff - c), initial=0.0)))


def random_unimodular(p: int, rng: np.random.Generator, moves: int = 4) -> np.ndarray:
    """Product of random elementary integer moves and a random sign flip."""
    U = np.eye(p, dtype=int)
    for _ in range(moves):
        if p > 1:
            i, j = rng.choice(p, size=2, replace=False)
            U[i] += int(rng.choice([-1, 1])) * U[j]
    if rng.random() < 0.5:
        U[0] = -U[0]
    return U


def action_dependence_rank(setup: ActionSetup, h: float = 1e-3, point: np.ndarray | None = None
                           ) -> tuple[int, np.ndarray]:
    """Numerical rank of ∂(A₁..A_p)/∂(transversal coordinates) at the base point."""
    y = np.asarray(setup.tc.base if point is None else point, dtype=float)
    tidx = [setup.sys.chart.index(c) for c in setup.tc.transversal]
    E = np.eye(setup.n)[tidx]
    vals = evaluate_actions(setup, np.concatenate([y + h * E, y - h * E]), False).actions
    q = len(tidx)
    J = ((vals[:q] - vals[q:]) / (2 * h)).T  # (p, q)
    sv = np.linalg.svd(J, compute_uv=False)
    if not sv.size or sv[0] == 0.0:
        return 0, sv
    return int(np.sum(sv > RANK_REL_TOL * sv[0])), sv


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionReport:
    levels: np.ndarray  # (G, q) transversal values
    actions: np.ndarray  # (G, p)
    frequencies: np.ndarray  # (G, p, p) frequency matrices L⁻¹
    gradient_residual: float
    isotropy_residual: float
    path_independence: float


def gradient_check(setup: ActionSetup, points: np.ndarray, h: float = 1e-4) -> float:
    """max |dAₖ(u) − βₖ(u)| over leaf basis vectors u (Richardson central differences)."""
    pts = np.atleast_2d(points)
    ld = leaf_differentials(setup, pts, h)
    beta = BetaForm(setup).evaluate(pts)  # (B, p, n)
    worst = 0.0
    for b in range(len(pts)):
        worst = max(worst, float(np.max(np.abs(beta[b] @ ld.bases[b] - ld.dA[b]), initial=0.0)))
    return worst


def action_table(setup: ActionSetup) -> ActionReport:
    pts = setup.level_points()
    vals = evaluate_actions(setup, pts)
    if not np.all(np.isfinite(vals.actions)):
        raise ActionError("non-finite action values")
    freqs = np.array([np.linalg.inv(c.lattice) for c in setup.family])
    samples = setup.sample_points(per_axis=2)
    grad = gradient_check(setup, samples[: min(len(samples), 8)])
    iso = verify_torus_isotropy(setup.sys, setup.dirac, samples).residual
    tidx = [setup.sys.chart.index(c) for c in setup.tc.transversal]
    return ActionReport(pts[:, tidx], vals.actions, freqs, grad, iso, vals.path_independence)
