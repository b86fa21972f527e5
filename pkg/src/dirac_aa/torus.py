"""Liouville tori: period lattices, angle coordinates, torus averages and the
structure-preservation residuals of the torus action.

A torus chart stores a base point and a lattice L whose rows are time vectors
with Φ_{Lₖ}(base) = base.  The torus generators are Zₖ = Σⱼ Lₖⱼ Xⱼ = ∂/∂θₖ, so
the frequency matrix of Xⱼ = Σₖ aⱼₖ ∂/∂θₖ is a = L⁻¹.

The action ρ_θ(y) = Φ_{θ·L(y)}(y) depends on the torus through L(y).  Its
differential at y is dΦ_τ (I + X(y) Σₖ θₖ dLₖ) with τ = θ·L and
dLₖ = X⁺ (I − Mₖ), where Mₖ = dΦ_{Lₖ}(y) is the monodromy of the k-th period.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lattice as lat
from .dirac import DiracField, PointCheck, Section, courant_bracket, span_distances
from .fields import (BivectorField, KForm, TensorField, VectorField, as_tensor,
                     lie_bracket, lie_derivative)
from .flow import FlowEngine, FlowError, JointFlow
from .system import IntegrableSystem, is_regular_at

RETURN_TOL = 1e-8


class TorusError(RuntimeError):
    pass


class NonCompactError(TorusError):
    pass


@dataclass(frozen=True)
class TorusChart:
    base: np.ndarray
    lattice: np.ndarray
    levels: np.ndarray
    return_error: float
    transversal: tuple[str, ...] = ()
    monodromy: np.ndarray | None = field(default=None, compare=False)

    @property
    def p(self) -> int:
        return self.lattice.shape[0]

    @property
    def frequency_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.lattice)


def _local_minima(d: np.ndarray) -> np.ndarray:
    """Boolean mask of grid points not larger than any axis neighbour."""
    mask = np.ones(d.shape, dtype=bool)
    for ax in range(d.ndim):
        pad = [(0, 0)] * d.ndim
        pad[ax] = (1, 1)
        dp = np.pad(d, pad, constant_values=np.inf)
        sl_lo = [slice(None)] * d.ndim
        sl_hi = [slice(None)] * d.ndim
        sl_lo[ax] = slice(0, -2)
        sl_hi[ax] = slice(2, None)
        mask &= (d <= dp[tuple(sl_lo)]) & (d <= dp[tuple(sl_hi)])
    return mask


class TorusTools:
    """Flow-based torus computations for one integrable system."""

    def __init__(self, sys: IntegrableSystem, engine: FlowEngine | None = None):
        self.sys = sys
        self.flow = JointFlow(sys.X, engine)
        self.chart = sys.chart
        self.n = sys.chart.dim
        self.p = sys.p

    # -- basic flows -------------------------------------------------------

    def joint_flow(self, t, x0):
        return self.flow.flow(t, x0)

    def grid_flow(self, x0: np.ndarray, axes: Sequence[np.ndarray], s_values: Sequence[np.ndarray],
                  with_jacobian: bool = False):
        """Points Φ_{Σ sₖ tₖ}(x0) on a product grid.

        ``axes[k]`` is a time vector tₖ ∈ ℝᵖ (or one per base point) and
        ``s_values[k]`` the grid of multiples along it.  ``x0`` may be a single
        point or a batch (B, n).  Returns points of shape ([B,] N₀, …, N_{p−1}, n)
        and optionally the Jacobians dΦ at x0, shape ([B,] …, n, n).
        """
        n, p = self.n, self.p
        x0 = np.asarray(x0, dtype=float)
        single = x0.ndim == 1
        pts = np.atleast_2d(x0)
        B = len(pts)
        M = 1
        jac = np.tile(np.eye(n), (B, 1, 1)) if with_jacobian else None
        shape: list[int] = []
        for t, s in zip(axes, s_values):
            s = np.asarray(s, dtype=float)
            t = np.broadcast_to(np.asarray(t, dtype=float), (B, p))
            tt = np.repeat(t, M, axis=0)
            res = self.flow.flow(tt, pts, with_jacobian=with_jacobian, s_eval=s, wrap=False)
            if with_jacobian:
                ys, js = res
                jac = np.einsum("sbij,bjk->bsik", js, jac).reshape(-1, n, n)
            else:
                ys = res
            pts = ys.transpose(1, 0, 2).reshape(-1, n)
            M *= len(s)
            shape.append(len(s))
        pts = self.flow.wrap(pts).reshape((B,) + tuple(shape) + (n,))
        if with_jacobian:
            jac = jac.reshape((B,) + tuple(shape) + (n, n))
            return (pts[0], jac[0]) if single else (pts, jac)
        return pts[0] if single else pts

    # -- period lattice ----------------------------------------------------

    def _newton_periods(self, t0: np.ndarray, x0: np.ndarray, iters: int = 40,
                        tol: float = 1e-11) -> tuple[np.ndarray, np.ndarray]:
        """Gauss–Newton on t ↦ Φ_t(x) − x for a batch of (t, x) pairs.

        Converged items drop out of the batch; an item stops once its return
        residual is below ``tol`` or its step is at rounding level."""
        t = np.array(t0, dtype=float)
        x = np.broadcast_to(np.asarray(x0, dtype=float), (len(t), self.n))
        res = np.full(len(t), np.inf)
        active = np.arange(len(t))
        stalled = np.zeros(len(t), dtype=bool)
        for _ in range(iters):
            if not len(active):
                break
            y = self.flow.flow(t[active], x[active])
            r = self.chart.difference(y, x[active])
            res[active] = np.linalg.norm(r, axis=1)
            keep = (res[active] >= tol) & ~stalled[active]
            active, y, r = active[keep], y[keep], r[keep]
            if not len(active):
                break
            J = self.flow.values(y).transpose(0, 2, 1)
            dt = np.stack([np.linalg.lstsq(J[b], -r[b], rcond=None)[0] for b in range(len(active))])
            t[active] += dt
            stalled[active] = np.linalg.norm(dt, axis=1) < 1e-14 * np.maximum(1.0, np.linalg.norm(t[active], axis=1))
        return t, res

    def find_period_lattice(self, x0, t_max: float = 50.0, transversal: Sequence[str] = (),
                            near: float = 0.1, max_points: int = 2_000_000) -> TorusChart:
        """Scan [0, T]ᵖ for near-returns (doubling T up to ``t_max``), refine them by
        Newton, and reduce the generated lattice."""
        x0 = np.asarray(x0, dtype=float)
        if not is_regular_at(self.sys, x0):
            raise TorusError(f"system is not regular at {tuple(x0)}")
        speeds = np.linalg.norm(self.flow.values(x0[None])[0], axis=1)
        deltas = 0.04 / np.maximum(speeds, 1e-12)
        p = self.p
        T = 1.0
        found: list[np.ndarray] = []
        while True:
            T_eff = min(T, t_max)
            counts = [int(np.ceil(T_eff / d)) + 1 for d in deltas]
            if np.prod(counts, dtype=float) > max_points:
                raise TorusError("period scan grid too large; lower t_max")
            s_vals = [np.linspace(0.0, 1.0, c) for c in counts]
            axes = [np.eye(p)[k] * T_eff for k in range(p)]
            try:
                grid = self.grid_flow(x0, axes, s_vals)
            except FlowError as exc:
                raise NonCompactError(f"flow left the domain during the recurrence scan: {exc}") from exc
            d = np.linalg.norm(self.chart.difference(grid, x0), axis=-1)
            mins = _local_minima(d) & (d < near)
            mins[(0,) * p] = False
            idx = np.argwhere(mins)
            if len(idx):
                times = np.stack([s_vals[k][idx[:, k]] * T_eff for k in range(p)], axis=1)
                times = times[np.linalg.norm(times, axis=1) > 4 * np.max(deltas)]
                if len(times):
                    order = np.argsort(np.linalg.norm(times, axis=1), kind="stable")[:200]
                    t_ref, res = self._newton_periods(times[order], x0)
                    ok = (res < 1e-9) & (np.linalg.norm(t_ref, axis=1) > 1e-6)
                    found = [v for v in t_ref[ok]]
                    if found and np.linalg.matrix_rank(np.array(found), tol=1e-6) == p:
                        break
            if T >= t_max:
                raise NonCompactError(
                    f"no recurrence within time budget {t_max:g} (level set may be non-compact)")
            T *= 2.0
        try:
            L = lat.lattice_from_vectors(np.array(found), p)
        except lat.LatticeError as exc:
            raise TorusError(f"rank-deficient or inconsistent lattice: {exc}") from exc
        L, res = self._newton_periods(L, x0)
        L = lat.orient(L)
        xs = np.broadcast_to(x0, (p, self.n))
        err = float(np.max(np.linalg.norm(self.chart.difference(self.flow.flow(L, xs), xs), axis=1)))
        if err > RETURN_TOL:
            raise TorusError(f"period refinement failed: return error {err:.3e}")
        levels = self.sys.integral_values(x0)[0]
        return TorusChart(x0, L, levels, err, tuple(transversal), self.monodromy(L, x0))

    def monodromy(self, L: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Mₖ = dΦ_{Lₖ}(y), shape (p, n, n)."""
        _, J = self.flow.flow(L, np.broadcast_to(y, (len(L), self.n)), with_jacobian=True)
        return J

    def lattice_at(self, points: np.ndarray, L_guess: np.ndarray) -> tuple[np.ndarray, float]:
        """Period lattices at a batch of points (shape (B, p, p)) by Newton continuation
        from ``L_guess`` (one guess or one per point)."""
        pts = np.atleast_2d(points)
        B = len(pts)
        guess = np.broadcast_to(np.asarray(L_guess, dtype=float), (B, self.p, self.p)).reshape(-1, self.p)
        xs = np.repeat(pts, self.p, axis=0)
        t, res = self._newton_periods(guess, xs)
        return t.reshape(B, self.p, self.p), float(np.max(res, initial=0.0))

    def lattice_differential(self, points: np.ndarray, L: np.ndarray) -> np.ndarray:
        """dLₖⱼ at each point, shape (B, p, p, n): X⁺(I − Mₖ)."""
        pts = np.atleast_2d(points)
        B, p, n = len(pts), self.p, self.n
        xs = np.repeat(pts, p, axis=0)
        _, M = self.flow.flow(L.reshape(-1, p), xs, with_jacobian=True)
        M = M.reshape(B, p, n, n)
        X = self.flow.values(pts).transpose(0, 2, 1)  # (B, n, p)
        Xp = np.linalg.pinv(X)  # (B, p, n)
        I = np.eye(n)
        return np.einsum("bjn,bknm->bkjm", Xp, I - M)

    # -- angle coordinates -------------------------------------------------

    def angle_coordinates(self, tc: TorusChart, y, seed_grid: int = 16,
                          level_tol: float = 1e-8) -> np.ndarray:
        """θ mod 1 with Φ_{θ·L}(base) = y, for one point or a batch."""
        y = np.asarray(y, dtype=float)
        ys = np.atleast_2d(y)
        lev = self.sys.integral_values(ys)
        off = np.max(np.abs(lev - tc.levels), axis=1) if lev.size else np.zeros(len(ys))
        if np.any(off > level_tol):
            raise TorusError(f"point is off the level set (|ΔF| = {float(np.max(off)):.3e})")
        th = self.angles(np.broadcast_to(tc.base, ys.shape), np.broadcast_to(tc.lattice, (len(ys), self.p, self.p)),
                         ys, seed_grid)
        return th[0] if y.ndim == 1 else th

    def angles(self, bases: np.ndarray, lattices: np.ndarray, ys: np.ndarray, seed_grid: int = 16) -> np.ndarray:
        """θ mod 1 with Φ_{θ·Lᵦ}(baseᵦ) = yᵦ for each batch entry (points on the base's torus)."""
        bases = np.atleast_2d(bases)
        ys = np.atleast_2d(ys)
        Ls = np.asarray(lattices, dtype=float).reshape(len(ys), self.p, self.p)
        B = len(ys)
        s = np.arange(seed_grid) / seed_grid
        grid = self.grid_flow(bases, [Ls[:, k] for k in range(self.p)], [s] * self.p).reshape(B, -1, self.n)
        thetas = np.array(list(itertools.product(s, repeat=self.p)))
        d = np.linalg.norm(self.chart.difference(grid, ys[:, None]), axis=-1)
        th = thetas[np.argmin(d, axis=1)].copy()
        for _ in range(40):
            pts = self.flow.flow(np.einsum("bk,bkj->bj", th, Ls), bases)
            r = self.chart.difference(pts, ys)
            if np.max(np.linalg.norm(r, axis=1)) < 1e-13:
                break
            Z = np.einsum("bkj,bjn->bnk", Ls, self.flow.values(pts))
            dth = np.stack([np.linalg.lstsq(Z[b], -r[b], rcond=None)[0] for b in range(B)])
            th = th + dth
            if np.max(np.abs(dth)) < 1e-15:
                break
        pts = self.flow.flow(np.einsum("bk,bkj->bj", th, Ls), bases)
        err = float(np.max(np.linalg.norm(self.chart.difference(pts, ys), axis=1)))
        if err > RETURN_TOL:
            raise TorusError(f"angle Newton failed (residual {err:.3e})")
        th = np.mod(th, 1.0)
        th[th > 1 - 1e-12] = 0.0
        return th

    # -- torus action differential -----------------------------------------

    def torus_grid(self, tc: TorusChart, N: int):
        """Points ρ_θ(base) and differentials dρ_θ at base on the uniform N^p grid.

        Returns (thetas (M, p), points (M, n), dρ (M, n, n)).
        """
        s = np.arange(N) / N
        pts, J = self.grid_flow(tc.base, list(tc.lattice), [s] * self.p, with_jacobian=True)
        thetas = np.array(list(itertools.product(s, repeat=self.p)))
        pts = pts.reshape(-1, self.n)
        J = J.reshape(-1, self.n, self.n)
        dL = self.lattice_differential(tc.base[None], tc.lattice[None])[0]  # (p, p, n)
        X = self.flow.values(tc.base[None])[0].T  # (n, p)
        shear = np.einsum("mk,kjn->mjn", thetas, dL)  # (M, p, n): dτⱼ
        drho = J @ (np.eye(self.n)[None] + np.einsum("ij,mjn->min", X, shear))
        return thetas, pts, drho

    # -- averaging ----------------------------------------------------------

    @staticmethod
    def _transform(values: np.ndarray, k: int, h: int, up: np.ndarray, down: np.ndarray) -> np.ndarray:
        """Apply ``up`` to each upper index and contract each lower index with ``down``.

        values: (M, n, …, n) with k upper then h lower indices; up, down: (M, n, n).
        Upper: Tᵃ ↦ upᵃ_c T^c; lower: T_b ↦ T_c down^c_b.
        """
        out = values
        for pos in range(k + h):
            ax = pos + 1
            out = np.moveaxis(out, ax, -1)
            if pos < k:
                out = np.einsum("m...c,mac->m...a", out, up)
            else:
                out = np.einsum("m...c,mcb->m...b", out, down)
            out = np.moveaxis(out, -1, ax)
        return out

    def average_values(self, values: np.ndarray, k: int, h: int, drho: np.ndarray) -> np.ndarray:
        """Average grid values of a (k, h) tensor: pull back to the base by ρ_θ, take the mean,
        and push the mean forward to every grid point."""
        inv = np.linalg.inv(drho)
        pulled = self._transform(values, k, h, inv, drho)
        mean = pulled.mean(axis=0)
        M = len(drho)
        return self._transform(np.broadcast_to(mean, (M,) + mean.shape).copy(), k, h, drho, inv)


@dataclass(frozen=True)
class AverageResult:
    thetas: np.ndarray
    points: np.ndarray
    averaged: np.ndarray
    pointwise: np.ndarray
    deviation: float
    refinement_change: float
    converged: bool
    idempotency: float


def torus_average(tools: TorusTools, tc: TorusChart, T, N: int = 32, tol: float = 1e-8) -> AverageResult:
    """Average a tensor field over the torus action on a uniform N^p grid; the
    result is compared with the 2N grid to flag non-convergence."""
    t = as_tensor(T)
    if N < 8:
        raise ValueError("torus grid needs at least 8 points per angle")

    def run(N):
        thetas, pts, drho = tools.torus_grid(tc, N)
        vals = t.dense(pts)
        return thetas, pts, vals, tools.average_values(vals, t.k, t.h, drho), drho

    thetas, pts, vals, avg, drho = run(N)
    _, _, _, avg2, _ = run(2 * N)
    # grid points of the N-grid are every other point along each axis of the 2N-grid
    fine = avg2.reshape((2 * N,) * tools.p + avg2.shape[1:])
    sl = tuple(slice(0, None, 2) for _ in range(tools.p))
    fine = fine[sl].reshape(avg.shape)
    change = float(np.max(np.abs(fine - avg), initial=0.0))
    dev = float(np.max(np.abs(avg - vals), initial=0.0))
    again = tools.average_values(avg, t.k, t.h, drho)
    idem = float(np.max(np.abs(again - avg), initial=0.0))
    return AverageResult(thetas, pts, avg, vals, dev, change, change <= tol, idem)


# ---------------------------------------------------------------------------
# Structure preservation
# ---------------------------------------------------------------------------


def torus_sample_points(tools: TorusTools, tc: TorusChart, offsets: Sequence[float] = (0.0,),
                        per_axis: int = 6) -> np.ndarray:
    """Grid points on the base torus and on tori through base + offset along the
    first transversal coordinate."""
    pts = []
    s = np.arange(per_axis) / per_axis
    for off in offsets:
        b = np.array(tc.base, dtype=float)
        if off and tc.transversal:
            b[tools.chart.index(tc.transversal[0])] += off
        L = tc.lattice if not off else tools.lattice_at(b[None], tc.lattice)[0][0]
        pts.append(tools.grid_flow(b, list(L), [s] * tools.p).reshape(-1, tools.n))
    return np.concatenate(pts)


def preservation_prerequisite(sys: IntegrableSystem, D: DiracField, points: np.ndarray,
                              tol: float = 1e-8) -> PointCheck:
    """[(Xᵢ, 0), e] ∈ Γ(D) for every frame section e."""
    frames = D.frames(points)
    zero = KForm.zero(sys.chart, 1)
    worst, wpt = 0.0, None
    for x in sys.X:
        for e in D.sections:
            br = courant_bracket(Section(x, zero), e)
            if br.is_zero_symbolic():
                continue
            d = span_distances(frames, br.evaluate(points))
            k = int(np.argmax(d))
            if d[k] > worst:
                worst, wpt = float(d[k]), tuple(float(v) for v in points[k])
    return PointCheck("fields_preserve_structure", worst <= tol, worst, wpt, tol)


def _generator_data(tools: TorusTools, tc: TorusChart, points: np.ndarray):
    L, _ = tools.lattice_at(points, tc.lattice)
    dL = tools.lattice_differential(points, L)
    X = tools.flow.values(points)  # (B, p, n)
    return L, dL, X


def generator_preservation(tools: TorusTools, tc: TorusChart, D: DiracField, points: np.ndarray,
                           tol: float = 1e-8) -> PointCheck:
    """[(Zₖ, 0), e] ∈ Γ(D) for the torus generators Zₖ = Σⱼ Lₖⱼ Xⱼ (L varying with the torus)."""
    sys = tools.sys
    L, dL, X = _generator_data(tools, tc, points)
    frames = D.frames(points)
    n = tools.n
    worst, wpt = 0.0, None
    for e in D.sections:
        ev = e.evaluate(points)  # (B, 2n)
        Y, a = ev[:, :n], ev[:, n:]
        brs = [lie_bracket(x, e.X).evaluate(points) for x in sys.X]  # (B, n) each
        lies = [lie_derivative(x, e.a).evaluate(points) for x in sys.X]
        br = np.stack(brs, axis=1)  # (B, p, n)
        li = np.stack(lies, axis=1)
        alpha_X = np.einsum("bn,bjn->bj", a, X)  # α(Xⱼ)
        dLY = np.einsum("bkjn,bn->bkj", dL, Y)  # dLₖⱼ(Y)
        vec = np.einsum("bkj,bjn->bkn", L, br) - np.einsum("bkj,bjn->bkn", dLY, X)
        form = np.einsum("bkj,bjn->bkn", L, li) + np.einsum("bj,bkjn->bkn", alpha_X, dL)
        for k in range(tools.p):
            d = span_distances(frames, np.concatenate([vec[:, k], form[:, k]], axis=1))
            i = int(np.argmax(d))
            if d[i] > worst:
                worst, wpt = float(d[i]), tuple(float(v) for v in points[i])
    return PointCheck("generators_preserve_structure", worst <= tol, worst, wpt, tol)


def generator_tensor_residual(tools: TorusTools, tc: TorusChart, T, points: np.ndarray,
                              tol: float = 1e-8) -> PointCheck:
    """max |ℒ_{Zₖ} T| on the samples, using
    ℒ_{cX} T = c ℒ_X T − Σ_upper T^{..m..} ∂_m c Xᵃ + Σ_lower T_{..m..} ∂_b c Xᵐ."""
    sys = tools.sys
    t = as_tensor(T)
    L, dL, X = _generator_data(tools, tc, points)
    Tv = t.dense(points)
    LX = np.stack([as_tensor(lie_derivative(x, t)).dense(points) for x in sys.X], axis=1)
    worst, wpt = 0.0, None
    B = len(points)
    for k in range(tools.p):
        val = np.einsum("bj,bj...->b...", L[:, k], LX)
        for j in range(tools.p):
            c_grad = dL[:, k, j]  # (B, n)
            xj = X[:, j]  # (B, n)
            for pos in range(t.order):
                ax = pos + 1
                moved = np.moveaxis(Tv, ax, -1)  # index at pos moved last
                if pos < t.k:
                    # −T^{..m..} ∂_m c Xᵃ
                    contr = np.einsum("b...m,bm->b...", moved, c_grad)
                    term = -np.einsum("b...,ba->b...a", contr, xj)
                else:
                    contr = np.einsum("b...m,bm->b...", moved, xj)
                    term = np.einsum("b...,ba->b...a", contr, c_grad)
                val = val + np.moveaxis(term, -1, ax)
        res = np.abs(val).reshape(B, -1).max(axis=1) if val.ndim > 1 else np.abs(val)
        i = int(np.argmax(res))
        if res[i] > worst:
            worst, wpt = float(res[i]), tuple(float(v) for v in points[i])
    return PointCheck("generators_preserve_tensor", worst <= tol, worst, wpt, tol)
