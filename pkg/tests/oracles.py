"""Independent reference computations used by the tests.

The flow oracle propagates a point and its Jacobian by fixed-step classical
RK4 over [0, t].  The resulting map is smooth in t with the exact first
derivative at t = 0, so central differences with Richardson extrapolation
converge to the exact Lie derivative; it shares no code with the package's
flow engine.
"""

import numpy as np
from scipy.integrate import quad

from dirac_aa.expr import lambdify


class FlowOracle:
    def __init__(self, X, substeps=4):
        self.n = X.chart.dim
        self.f = lambdify(X.components, X.chart)
        self.g = lambdify([e for row in X.jacobian_exprs() for e in row], X.chart)
        self.substeps = substeps

    def _rhs(self, z):
        n = self.n
        y, J = z[:n], z[n:].reshape(n, n)
        DX = self.g(y[None])[0].reshape(n, n)
        return np.concatenate([self.f(y[None])[0], (DX @ J).ravel()])

    def __call__(self, x0, t):
        """Φ_t(x0) and DΦ_t(x0)."""
        n = self.n
        z = np.concatenate([np.asarray(x0, float), np.eye(n).ravel()])
        h = t / self.substeps
        for _ in range(self.substeps):
            k1 = self._rhs(z)
            k2 = self._rhs(z + 0.5 * h * k1)
            k3 = self._rhs(z + 0.5 * h * k2)
            k4 = self._rhs(z + h * k3)
            z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return z[:n], z[n:].reshape(n, n)


def richardson_derivative(g, h0=0.01, levels=5):
    """d/dt g(t) at 0 from central differences at h0, h0/2, ... with Richardson
    extrapolation (the error expansion of a central difference is even in h)."""
    table = []
    for k in range(levels):
        h = h0 / 2 ** k
        row = [(g(h) - g(-h)) / (2 * h)]
        for j in range(1, k + 1):
            row.append(row[j - 1] + (row[j - 1] - table[k - 1][j - 1]) / (4 ** j - 1))
        table.append(row)
    return table[-1][-1]


def lie_bivector_by_flow(X, pi, x0):
    """ℒ_X Π at x0 as d/dt of the pulled-back bivector DΦ_t⁻¹ Π(Φ_t x0) DΦ_t⁻ᵀ."""
    flow = FlowOracle(X)

    def pulled(t):
        y, J = flow(x0, t)
        Ji = np.linalg.inv(J)
        return Ji @ pi.dense(y[None])[0] @ Ji.T
    return richardson_derivative(pulled)


def lie_form_by_flow(X, alpha, x0):
    """ℒ_X α at x0 for a 1-form, as d/dt of DΦ_tᵀ α(Φ_t x0)."""
    flow = FlowOracle(X)

    def pulled(t):
        y, J = flow(x0, t)
        return J.T @ alpha.dense(y[None])[0]
    return richardson_derivative(pulled)


def lie_vector_by_flow(X, Y, x0):
    """[X, Y] at x0 as d/dt of DΦ_t⁻¹ Y(Φ_t x0)."""
    flow = FlowOracle(X)

    def pulled(t):
        y, J = flow(x0, t)
        return np.linalg.solve(J, Y.evaluate(y[None])[0])
    return richardson_derivative(pulled)


def pendulum_action(H):
    """∫₀¹ √(2(H + cos 2πq)) dq: the area under the upper branch p(q) at energy H
    for H = p²/2 − cos(2πq) on the cylinder (rotational tori, H > 1)."""
    val, err = quad(lambda q: np.sqrt(2.0 * (H + np.cos(2 * np.pi * q))), 0.0, 1.0,
                    epsabs=1e-13, epsrel=1e-13, limit=200)
    return val
