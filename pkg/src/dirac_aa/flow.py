"""Batched adaptive Runge–Kutta integration of commuting vector fields.

The joint flow Φ_t of commuting fields X₁..X_p is the unit-time flow of
Y = Σ tᵢ Xᵢ.  Integration uses the Dormand–Prince 5(4) pair with one step
size shared by the whole batch, so a batch of trajectories is advanced by
vectorised field evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fields import VectorField, evaluate_many

# Dormand–Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class FlowError(RuntimeError):
    """Integration failed: step underflow, step budget exhausted, or the domain was left."""


@dataclass(frozen=True)
class FlowEngine:
    rtol: float = 1e-11
    atol: float = 1e-12
    max_steps: int = 200000
    bound: float = 1e6

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")

    def integrate(self, rhs: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, s_end: float = 1.0,
                  s_eval: Sequence[float] | None = None, err_slice: slice | None = None):
        """Integrate y' = rhs(y) for a batch y0 of shape (B, m) over s ∈ [0, s_end].

        Returns the final state, or the states at ``s_eval`` (shape (len, B, m)).
        ``err_slice`` restricts the error norm to some components (e.g. to keep
        variational components out of step control).
        """
        y = np.array(y0, dtype=float)
        if s_end < 0:
            raise ValueError("s_end must be nonnegative")
        evals = None if s_eval is None else np.asarray(s_eval, dtype=float)
        out = [] if evals is not None else None
        ei = 0
        if evals is not None:
            while ei < len(evals) and evals[ei] <= 0.0:
                out.append(y.copy())
                ei += 1
        s = 0.0
        if s_end == 0.0:
            return np.array(out) if out is not None else y
        sl = err_slice or slice(None)
        k1 = rhs(y)
        scale0 = self.atol + self.rtol * np.abs(y[:, sl])
        d0 = np.max(np.abs(y[:, sl]) / scale0)
        d1 = np.max(np.abs(k1[:, sl]) / scale0)
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
        h = min(h, s_end)
        steps = 0
        while s < s_end:
            target = s_end if evals is None or ei >= len(evals) else min(evals[ei], s_end)
            h_try = min(h, target - s)
            if h_try < 1e-14 * max(1.0, abs(s)):
                h_try = target - s
            ks = [k1]
            for i in range(1, 7):
                yi = y + h_try * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
                ks.append(rhs(yi))
            y_new = y + h_try * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
            err = h_try * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
            sc = self.atol + self.rtol * np.maximum(np.abs(y[:, sl]), np.abs(y_new[:, sl]))
            en = float(np.max(np.abs(err[:, sl]) / sc)) if y.size else 0.0
            if not np.isfinite(en):
                raise FlowError("non-finite state during integration")
            steps += 1
            if steps > self.max_steps:
                raise FlowError(f"step budget of {self.max_steps} exhausted at s = {s:.6g}")
            if en <= 1.0:
                s = s + h_try if target - s - h_try > 1e-14 * max(1.0, abs(target)) else target
                y = y_new
                k1 = ks[6]
                if np.max(np.abs(y)) > self.bound:
                    raise FlowError(f"trajectory left the domain (|y| > {self.bound:g})")
                if evals is not None:
                    while ei < len(evals) and evals[ei] <= s + 1e-14 * max(1.0, abs(s)):
                        out.append(y.copy())
                        ei += 1
                fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
                h = max(h_try, h) * fac if h_try < h else h_try * fac
            else:
                h = h_try * max(0.1, 0.9 * en ** -0.2)
                if h < 1e-14 * max(1.0, abs(s)):
                    raise FlowError(f"step size underflow at s = {s:.6g}")
        if evals is not None:
            while ei < len(evals):
                out.append(y.copy())
                ei += 1
            return np.array(out)
        return y


class JointFlow:
    """Flows of a fixed tuple of commuting vector fields X₁..X_p."""

    def __init__(self, fields: Sequence[VectorField], engine: FlowEngine | None = None):
        self.fields = tuple(fields)
        self.chart = self.fields[0].chart
        self.engine = engine or FlowEngine()
        self.n = self.chart.dim
        self.p = len(self.fields)
        self._exprs = tuple(c for x in self.fields for c in x.components)
        self._jac_exprs = tuple(e for x in self.fields for row in x.jacobian_exprs() for e in row)
        self._periodic = np.array(self.chart.periodic)

    def values(self, points: np.ndarray) -> np.ndarray:
        """Field values, shape (B, p, n)."""
        pts = np.asarray(points, dtype=float)
        return evaluate_many(self._exprs, self.chart, pts).reshape(pts.shape[:-1] + (self.p, self.n))

    def jacobians(self, points: np.ndarray) -> np.ndarray:
        """∂Xᵢ/∂x, shape (B, p, n, n)."""
        pts = np.asarray(points, dtype=float)
        return evaluate_many(self._jac_exprs, self.chart, pts).reshape(pts.shape[:-1] + (self.p, self.n, self.n))

    def wrap(self, y: np.ndarray) -> np.ndarray:
        if self._periodic.any():
            y = y.copy()
            y[..., self._periodic] = np.mod(y[..., self._periodic], 1.0)
        return y

    def flow(self, t, x0, with_jacobian: bool = False, s_eval=None, wrap: bool = True):
        """Φ_t(x0) for batches: t of shape (B, p) or (p,), x0 of shape (B, n) or (n,).

        With ``with_jacobian`` also returns dΦ_t at x0, shape (B, n, n).  With
        ``s_eval`` returns states along s ↦ Φ_{s t}(x0) at the given s values.
        """
        t = np.asarray(t, dtype=float)
        x0 = np.asarray(x0, dtype=float)
        single = x0.ndim == 1
        x0 = np.atleast_2d(x0)
        t = np.broadcast_to(np.atleast_2d(t), (x0.shape[0], self.p))
        n = self.n
        B = x0.shape[0]

        if with_jacobian:
            def rhs(z):
                y = z[:, :n]
                J = z[:, n:].reshape(B, n, n)
                v = np.einsum("bp,bpn->bn", t, self.values(y))
                DY = np.einsum("bp,bpij->bij", t, self.jacobians(y))
                return np.concatenate([v, (DY @ J).reshape(B, n * n)], axis=1)

            z0 = np.concatenate([x0, np.tile(np.eye(n).reshape(1, -1), (B, 1))], axis=1)
            res = self.engine.integrate(rhs, z0, 1.0, s_eval, err_slice=slice(0, n))
            ys = res[..., :n]
            Js = res[..., n:].reshape(res.shape[:-1] + (n, n))
            if wrap:
                ys = self.wrap(ys)
            if single and s_eval is None:
                return ys[0], Js[0]
            return ys, Js

        def rhs(y):
            return np.einsum("bp,bpn->bn", t, self.values(y))

        ys = self.engine.integrate(rhs, x0, 1.0, s_eval)
        if wrap:
            ys = self.wrap(ys)
        if single and s_eval is None:
            return ys[0]
        return ys

    def difference(self, a, b) -> np.ndarray:
        return self.chart.difference(a, b)
