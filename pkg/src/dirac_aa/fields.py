"""Tensor calculus on a chart: vector fields, forms, bivectors, general tensors.

All components are :mod:`dirac_aa.expr` expressions, kept simplified.  Each
field can be evaluated on a batch of points through a cached numpy kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .expr import (ZERO, Chart, Expr, as_expr, check_bound, diff, lambdify,
                   parse, simplify, substitute)


class ChartMismatchError(ValueError):
    pass


def _same_chart(*fields) -> Chart:
    chart = fields[0].chart
    for f in fields[1:]:
        if f.chart != chart:
            raise ChartMismatchError(f"fields live on different charts: {chart} vs {f.chart}")
    return chart


@lru_cache(maxsize=4096)
def _kernel(exprs: tuple[Expr, ...], chart: Chart):
    return lambdify(exprs, chart)


def evaluate_many(exprs: Sequence[Expr], chart: Chart, points) -> np.ndarray:
    """Values of ``exprs`` at ``points`` (shape (..., n)) as an array (..., len(exprs))."""
    exprs = tuple(exprs)
    pts = np.asarray(points, dtype=float)
    if not exprs:
        return np.zeros(pts.shape[:-1] + (0,))
    return _kernel(exprs, chart)(pts)


def gradient(f: Expr, chart: Chart) -> tuple[Expr, ...]:
    return tuple(diff(f, name) for name in chart.coord_names)


def _sorted_sign(idx: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    """Sign of the permutation sorting ``idx`` (0 if an index repeats) and the sorted tuple."""
    idx = list(idx)
    if len(set(idx)) != len(idx):
        return 0, ()
    sign = 1
    for i in range(len(idx)):
        for j in range(len(idx) - 1 - i):
            if idx[j] > idx[j + 1]:
                idx[j], idx[j + 1] = idx[j + 1], idx[j]
                sign = -sign
    return sign, tuple(idx)


# ---------------------------------------------------------------------------
# Vector fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VectorField:
    chart: Chart
    components: tuple[Expr, ...]

    def __post_init__(self):
        comps = tuple(simplify(as_expr(c)) for c in self.components)
        if len(comps) != self.chart.dim:
            raise ValueError(f"vector field needs {self.chart.dim} components, got {len(comps)}")
        for c in comps:
            check_bound(c, self.chart)
        object.__setattr__(self, "components", comps)

    @classmethod
    def parse(cls, chart: Chart, comps: Sequence[str | Expr]) -> "VectorField":
        return cls(chart, tuple(parse(c, chart) if isinstance(c, str) else as_expr(c) for c in comps))

    @classmethod
    def zero(cls, chart: Chart) -> "VectorField":
        return cls(chart, (ZERO,) * chart.dim)

    @classmethod
    def coordinate(cls, chart: Chart, name: str) -> "VectorField":
        i = chart.index(name)
        return cls(chart, tuple(as_expr(int(j == i)) for j in range(chart.dim)))

    def __call__(self, f: Expr) -> Expr:
        """Directional derivative X(f)."""
        return simplify(sum_exprs(c * diff(f, name) for c, name in zip(self.components, self.chart.coord_names)
                                  if c != ZERO))

    def __add__(self, other: "VectorField") -> "VectorField":
        _same_chart(self, other)
        return VectorField(self.chart, tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        _same_chart(self, other)
        return VectorField(self.chart, tuple(a - b for a, b in zip(self.components, other.components)))

    def scaled(self, f) -> "VectorField":
        f = as_expr(f)
        return VectorField(self.chart, tuple(f * c for c in self.components))

    def __neg__(self) -> "VectorField":
        return self.scaled(-1)

    def is_zero_symbolic(self) -> bool:
        return all(c == ZERO for c in self.components)

    def evaluate(self, points) -> np.ndarray:
        return evaluate_many(self.components, self.chart, points)

    def jacobian_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        """Rows i, columns j: ∂Xⁱ/∂xʲ."""
        return tuple(gradient(c, self.chart) for c in self.components)

    def jacobian(self, points) -> np.ndarray:
        n = self.chart.dim
        flat = tuple(e for row in self.jacobian_exprs() for e in row)
        vals = evaluate_many(flat, self.chart, points)
        return vals.reshape(vals.shape[:-1] + (n, n))

    def __str__(self):
        terms = [f"({c})*d/d{name}" for c, name in zip(self.components, self.chart.coord_names) if c != ZERO]
        return " + ".join(terms) or "0"


def sum_exprs(exprs) -> Expr:
    exprs = list(exprs)
    if not exprs:
        return ZERO
    out = exprs[0]
    for e in exprs[1:]:
        out = out + e
    return out


def lie_bracket(x: VectorField, y: VectorField) -> VectorField:
    """[X, Y]ᵏ = X(Yᵏ) − Y(Xᵏ)."""
    chart = _same_chart(x, y)
    return VectorField(chart, tuple(x(yk) - y(xk) for xk, yk in zip(x.components, y.components)))


# ---------------------------------------------------------------------------
# Differential forms
# ---------------------------------------------------------------------------


def _clean(terms: Mapping[tuple[int, ...], Expr]) -> dict[tuple[int, ...], Expr]:
    out = {}
    for k in sorted(terms):
        v = simplify(terms[k])
        if v != ZERO:
            out[k] = v
    return out


@dataclass(frozen=True)
class KForm:
    """Differential k-form stored sparsely on strictly increasing index tuples."""

    chart: Chart
    degree: int
    terms: Mapping[tuple[int, ...], Expr]

    def __post_init__(self):
        n = self.chart.dim
        if not 0 <= self.degree <= n:
            raise ValueError(f"degree {self.degree} out of range for dimension {n}")
        acc: dict[tuple[int, ...], Expr] = {}
        for idx, coeff in dict(self.terms).items():
            idx = tuple(int(i) for i in idx)
            if len(idx) != self.degree or any(not 0 <= i < n for i in idx):
                raise ValueError(f"bad index tuple {idx} for a {self.degree}-form")
            sign, key = _sorted_sign(idx)
            if sign == 0:
                continue
            c = as_expr(coeff)
            check_bound(c, self.chart)
            c = c if sign > 0 else -c
            acc[key] = acc[key] + c if key in acc else c
        object.__setattr__(self, "terms", _clean(acc))

    @classmethod
    def zero(cls, chart: Chart, degree: int) -> "KForm":
        return cls(chart, degree, {})

    @classmethod
    def function(cls, chart: Chart, f) -> "KForm":
        return cls(chart, 0, {(): as_expr(f)})

    @classmethod
    def parse(cls, chart: Chart, degree: int, terms: Mapping[Sequence[str], str | Expr]) -> "KForm":
        """Terms keyed by coordinate-name tuples, e.g. {("x", "y"): "1"} for dx∧dy."""
        out = {}
        for names, coeff in terms.items():
            names = (names,) if isinstance(names, str) else tuple(names)
            idx = tuple(chart.index(nm) for nm in names)
            out[idx] = parse(coeff, chart) if isinstance(coeff, str) else as_expr(coeff)
        return cls(chart, degree, out)

    def coeff(self, *idx: int) -> Expr:
        sign, key = _sorted_sign(idx)
        if sign == 0:
            return ZERO
        c = self.terms.get(key, ZERO)
        return c if sign > 0 else simplify(-c)

    def __add__(self, other: "KForm") -> "KForm":
        _same_chart(self, other)
        if self.degree != other.degree:
            raise ValueError("cannot add forms of different degree")
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v
        return KForm(self.chart, self.degree, terms)

    def scaled(self, f) -> "KForm":
        f = as_expr(f)
        return KForm(self.chart, self.degree, {k: f * v for k, v in self.terms.items()})

    def __neg__(self) -> "KForm":
        return self.scaled(-1)

    def __sub__(self, other: "KForm") -> "KForm":
        return self + (-other)

    def is_zero_symbolic(self) -> bool:
        return not self.terms

    def keys(self) -> list[tuple[int, ...]]:
        return list(itertools.combinations(range(self.chart.dim), self.degree))

    def evaluate(self, points) -> np.ndarray:
        """Coefficients on all increasing index tuples (in ``keys()`` order)."""
        keys = self.keys()
        return evaluate_many([self.terms.get(k, ZERO) for k in keys], self.chart, points)

    def dense(self, points) -> np.ndarray:
        """Fully antisymmetric component array, shape (..., n, …, n)."""
        n = self.chart.dim
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1] + (n,) * self.degree)
        if not self.terms:
            return out
        keys = list(self.terms)
        vals = evaluate_many([self.terms[k] for k in keys], self.chart, pts)
        for j, key in enumerate(keys):
            for perm in itertools.permutations(range(self.degree)):
                idx = tuple(key[p] for p in perm)
                sign, _ = _sorted_sign(perm)
                out[(Ellipsis,) + idx] = sign * vals[..., j]
        return out

    def __str__(self):
        names = self.chart.coord_names
        parts = []
        for k, v in self.terms.items():
            basis = "^".join(f"d{names[i]}" for i in k) or "1"
            parts.append(f"({v})*{basis}")
        return " + ".join(parts) or "0"


def differential(f, chart: Chart) -> KForm:
    f = as_expr(f)
    return KForm(chart, 1, {(i,): g for i, g in enumerate(gradient(f, chart))})


def wedge(a: KForm, b: KForm) -> KForm:
    chart = _same_chart(a, b)
    if a.degree + b.degree > chart.dim:
        raise ValueError("wedge product degree exceeds chart dimension")
    terms: dict[tuple[int, ...], Expr] = {}
    for ka, va in a.terms.items():
        for kb, vb in b.terms.items():
            sign, key = _sorted_sign(ka + kb)
            if sign == 0:
                continue
            t = va * vb if sign > 0 else -(va * vb)
            terms[key] = terms[key] + t if key in terms else t
    return KForm(chart, a.degree + b.degree, terms)


def exterior_d(a: KForm) -> KForm:
    chart = a.chart
    if a.degree >= chart.dim:
        raise ValueError("exterior derivative of a top-degree form is not representable here")
    terms: dict[tuple[int, ...], Expr] = {}
    for key, v in a.terms.items():
        for j, name in enumerate(chart.coord_names):
            sign, k2 = _sorted_sign((j,) + key)
            if sign == 0:
                continue
            dv = diff(v, name)
            if dv == ZERO:
                continue
            t = dv if sign > 0 else -dv
            terms[k2] = terms[k2] + t if k2 in terms else t
    return KForm(chart, a.degree + 1, terms)


def interior(x: VectorField, a: KForm) -> KForm:
    """Contraction in the first slot: (i_X α)(v₂, …) = α(X, v₂, …)."""
    chart = _same_chart(x, a)
    if a.degree == 0:
        raise ValueError("cannot contract a 0-form")
    terms: dict[tuple[int, ...], Expr] = {}
    for key, v in a.terms.items():
        for pos, i in enumerate(key):
            xi = x.components[i]
            if xi == ZERO:
                continue
            rest = key[:pos] + key[pos + 1:]
            t = xi * v if pos % 2 == 0 else -(xi * v)
            terms[rest] = terms[rest] + t if rest in terms else t
    return KForm(chart, a.degree - 1, terms)


def pullback_to_slice(a: KForm, fixed: Mapping[str, float | Expr]) -> tuple[KForm, Chart]:
    """Restrict to the coordinate slice where the ``fixed`` coordinates are constant."""
    chart = a.chart
    for name in fixed:
        chart.index(name)
    sub = chart.slice(fixed)
    fixed_idx = {chart.index(nm) for nm in fixed}
    remap = {i: j for j, i in enumerate(i for i in range(chart.dim) if i not in fixed_idx)}
    terms = {}
    for key, v in a.terms.items():
        if any(i in fixed_idx for i in key):
            continue
        terms[tuple(remap[i] for i in key)] = substitute(v, dict(fixed))
    return KForm(sub, a.degree, terms), sub


# ---------------------------------------------------------------------------
# Bivectors and general tensors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BivectorField:
    chart: Chart
    terms: Mapping[tuple[int, int], Expr]

    def __post_init__(self):
        acc: dict[tuple[int, ...], Expr] = {}
        n = self.chart.dim
        for (i, j), c in dict(self.terms).items():
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bad bivector index {(i, j)}")
            sign, key = _sorted_sign((i, j))
            if sign == 0:
                continue
            c = as_expr(c)
            check_bound(c, self.chart)
            c = c if sign > 0 else -c
            acc[key] = acc[key] + c if key in acc else c
        object.__setattr__(self, "terms", _clean(acc))

    @classmethod
    def parse(cls, chart: Chart, terms: Mapping[Sequence[str], str | Expr]) -> "BivectorField":
        out = {}
        for (a, b), coeff in terms.items():
            out[(chart.index(a), chart.index(b))] = parse(coeff, chart) if isinstance(coeff, str) else as_expr(coeff)
        return cls(chart, out)

    def coeff(self, i: int, j: int) -> Expr:
        sign, key = _sorted_sign((i, j))
        if sign == 0:
            return ZERO
        c = self.terms.get(key, ZERO)
        return c if sign > 0 else simplify(-c)

    def matrix_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        n = self.chart.dim
        return tuple(tuple(self.coeff(i, j) for j in range(n)) for i in range(n))

    def dense(self, points) -> np.ndarray:
        n = self.chart.dim
        flat = [e for row in self.matrix_exprs() for e in row]
        vals = evaluate_many(flat, self.chart, points)
        return vals.reshape(vals.shape[:-1] + (n, n))

    def is_zero_symbolic(self) -> bool:
        return not self.terms


@dataclass(frozen=True)
class TensorField:
    """Tensor with ``k`` contravariant (upper, first) and ``h`` covariant (lower) indices,
    stored densely."""

    chart: Chart
    k: int
    h: int
    components: Mapping[tuple[int, ...], Expr]

    def __post_init__(self):
        n = self.chart.dim
        comps = {}
        for idx, c in dict(self.components).items():
            idx = tuple(int(i) for i in idx)
            if len(idx) != self.k + self.h or any(not 0 <= i < n for i in idx):
                raise ValueError(f"bad tensor index {idx}")
            c = as_expr(c)
            check_bound(c, self.chart)
            comps[idx] = c
        object.__setattr__(self, "components", _clean(comps))

    @property
    def order(self) -> int:
        return self.k + self.h

    def keys(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.chart.dim), repeat=self.order))

    def coeff(self, idx: tuple[int, ...]) -> Expr:
        return self.components.get(tuple(idx), ZERO)

    def dense(self, points) -> np.ndarray:
        n = self.chart.dim
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1] + (n,) * self.order)
        keys = list(self.components)
        if keys:
            vals = evaluate_many([self.components[k] for k in keys], self.chart, pts)
            for j, key in enumerate(keys):
                out[(Ellipsis,) + key] = vals[..., j]
        return out

    def __add__(self, other: "TensorField") -> "TensorField":
        _same_chart(self, other)
        if (self.k, self.h) != (other.k, other.h):
            raise ValueError("tensor types differ")
        comps = dict(self.components)
        for key, v in other.components.items():
            comps[key] = comps[key] + v if key in comps else v
        return TensorField(self.chart, self.k, self.h, comps)

    def scaled(self, f) -> "TensorField":
        f = as_expr(f)
        return TensorField(self.chart, self.k, self.h, {k: f * v for k, v in self.components.items()})

    def is_zero_symbolic(self) -> bool:
        return not self.components


def as_tensor(t) -> TensorField:
    """Dense tensor view of a vector field, form, bivector or tensor."""
    if isinstance(t, TensorField):
        return t
    chart = t.chart
    n = chart.dim
    if isinstance(t, VectorField):
        return TensorField(chart, 1, 0, {(i,): c for i, c in enumerate(t.components)})
    if isinstance(t, BivectorField):
        return TensorField(chart, 2, 0, {(i, j): t.coeff(i, j) for i in range(n) for j in range(n)})
    if isinstance(t, KForm):
        comps = {}
        for key, v in t.terms.items():
            for perm in itertools.permutations(range(t.degree)):
                sign, _ = _sorted_sign(perm)
                comps[tuple(key[p] for p in perm)] = v if sign > 0 else -v
        if t.degree == 0:
            comps = {(): t.terms.get((), ZERO)}
        return TensorField(chart, 0, t.degree, comps)
    raise TypeError(f"not a tensor-like field: {t!r}")


def _tensor_lie(x: VectorField, t: TensorField) -> TensorField:
    """(ℒ_X T) = X(T) − Σ_upper T^{..m..} ∂_m Xᵃ + Σ_lower T_{..m..} ∂_b Xᵐ."""
    chart = _same_chart(x, t)
    n = chart.dim
    jac = x.jacobian_exprs()
    comps = {}
    for idx in t.keys():
        terms = [x(t.coeff(idx))]
        for pos in range(t.order):
            for m in range(n):
                if pos < t.k:
                    d = jac[idx[pos]][m]
                    if d == ZERO:
                        continue
                    tv = t.coeff(idx[:pos] + (m,) + idx[pos + 1:])
                    if tv != ZERO:
                        terms.append(-(tv * d))
                else:
                    d = jac[m][idx[pos]]
                    if d == ZERO:
                        continue
                    tv = t.coeff(idx[:pos] + (m,) + idx[pos + 1:])
                    if tv != ZERO:
                        terms.append(tv * d)
        comps[idx] = sum_exprs(terms)
    return TensorField(chart, t.k, t.h, comps)


def lie_derivative(x: VectorField, t):
    """ℒ_X of a function (as 0-form), vector field, form, bivector or tensor."""
    if isinstance(t, VectorField):
        return lie_bracket(x, t)
    if isinstance(t, KForm):
        _same_chart(x, t)
        if t.degree == 0:
            return KForm.function(t.chart, x(t.terms.get((), ZERO)))
        d_part = interior(x, exterior_d(t)) if t.degree < t.chart.dim else KForm.zero(t.chart, t.degree)
        return d_part + exterior_d(interior(x, t))
    if isinstance(t, BivectorField):
        return schouten(x, t)
    if isinstance(t, TensorField):
        return _tensor_lie(x, t)
    raise TypeError(f"cannot take Lie derivative of {t!r}")


def schouten(x: VectorField, pi: BivectorField) -> BivectorField:
    """[X, Π] = ℒ_X Π, by Leibniz over the wedge."""
    chart = _same_chart(x, pi)
    n = chart.dim
    jac = x.jacobian_exprs()
    terms = {}
    for i in range(n):
        for j in range(i + 1, n):
            parts = [x(pi.coeff(i, j))]
            for m in range(n):
                if jac[i][m] != ZERO and pi.coeff(m, j) != ZERO:
                    parts.append(-(pi.coeff(m, j) * jac[i][m]))
                if jac[j][m] != ZERO and pi.coeff(i, m) != ZERO:
                    parts.append(-(pi.coeff(i, m) * jac[j][m]))
            terms[(i, j)] = sum_exprs(parts)
    return BivectorField(chart, terms)


def contract_bivector(pi: BivectorField, a: KForm) -> VectorField:
    """The vector field Π(·, α): component j is Σᵢ Π^{ji} αᵢ."""
    chart = _same_chart(pi, a)
    if a.degree != 1:
        raise ValueError("need a 1-form")
    n = chart.dim
    comps = []
    for j in range(n):
        comps.append(sum_exprs(pi.coeff(j, i) * a.coeff(i) for i in range(n)
                               if pi.coeff(j, i) != ZERO and a.coeff(i) != ZERO))
    return VectorField(chart, tuple(comps))
