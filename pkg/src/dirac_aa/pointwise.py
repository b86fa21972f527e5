"""Linear algebra in the double space V ⊕ V* at a single point.

A frame of an n-dimensional subspace of V ⊕ V* is stored as a 2n×n matrix
whose columns are the pairs (x, a): the top half holds tangent parts, the
bottom half cotangent parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-9
ISOTROPY_TOL = 1e-10
FORM_TOL = 1e-10


class FrameError(ValueError):
    """Frame is rank deficient, non-isotropic or otherwise unusable."""


@dataclass(frozen=True)
class DoubleVector:
    x: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        a = np.asarray(self.a, dtype=float).reshape(-1)
        if x.shape != a.shape:
            raise ValueError(f"tangent part has dim {x.size}, cotangent part {a.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)

    @property
    def dim(self) -> int:
        return self.x.size

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.a])


def pairing(u: DoubleVector, v: DoubleVector) -> float:
    """⟨(X₁,α₁),(X₂,α₂)⟩ = ½(α₁(X₂) + α₂(X₁))."""
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    return 0.5 * (float(u.a @ v.x) + float(v.a @ u.x))


def numerical_rank(m: np.ndarray, tol: float = RANK_TOL, scale: float | None = None) -> int:
    """Number of singular values above ``tol`` times ``scale`` (default: the largest)."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    sv = np.linalg.svd(m, compute_uv=False)
    ref = sv[0] if scale is None else scale
    if ref <= 0.0:
        return 0
    return int(np.sum(sv > tol * ref))


def orthonormal_range(m: np.ndarray, tol: float = RANK_TOL, scale: float | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the column space of ``m``."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[1] == 0:
        return np.zeros((m.shape[0], 0))
    u, sv, _ = np.linalg.svd(m, full_matrices=False)
    ref = (sv[0] if sv.size else 0.0) if scale is None else scale
    k = int(np.sum(sv > tol * ref)) if ref > 0 else 0
    return u[:, :k]


def null_space(m: np.ndarray, tol: float = RANK_TOL, scale: float | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the kernel of ``m``."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n = m.shape[1]
    if m.shape[0] == 0:
        return np.eye(n)
    _, sv, vt = np.linalg.svd(m, full_matrices=True)
    ref = (sv[0] if sv.size else 0.0) if scale is None else scale
    k = int(np.sum(sv > tol * ref)) if ref > 0 else 0
    return vt[k:].T.copy()


def aligned_basis(q: np.ndarray, exclude: np.ndarray | None = None, tol: float = 1e-6) -> np.ndarray:
    """Basis of span(q) ⊖ span(exclude) built from projected coordinate axes.

    Standard basis vectors are projected in index order and orthonormalised, so
    coordinate-aligned subspaces come out as (signed) coordinate vectors.
    """
    n = q.shape[0]
    target = q.shape[1] - (0 if exclude is None else exclude.shape[1])
    basis: list[np.ndarray] = []
    for i in range(n):
        v = q @ q[i]
        if exclude is not None and exclude.shape[1]:
            v = v - exclude @ (exclude.T @ v)
        for b in basis:
            v = v - (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > tol:
            basis.append(v / nv)
        if len(basis) == target:
            break
    if len(basis) != target:
        raise FrameError("could not build an aligned basis")
    return np.array(basis).T.reshape(n, target)


@dataclass(frozen=True)
class BiCorank:
    r: int
    s: int
    m: int

    @property
    def pair(self) -> tuple[int, int]:
        return (self.r, self.s)


@dataclass(frozen=True)
class DiracPointFrame:
    """Basis of an n-dimensional subspace of V ⊕ V* at ``point``."""

    matrix: np.ndarray
    point: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != 2 * m.shape[1]:
            raise ValueError(f"frame matrix must be 2n×n, got {m.shape}")
        object.__setattr__(self, "matrix", m)
        if self.point is not None:
            object.__setattr__(self, "point", np.asarray(self.point, dtype=float))

    @classmethod
    def from_vectors(cls, vectors, point=None) -> "DiracPointFrame":
        return cls(np.column_stack([v.stacked() for v in vectors]), point)

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def X(self) -> np.ndarray:
        return self.matrix[: self.n]

    @property
    def A(self) -> np.ndarray:
        return self.matrix[self.n:]

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def columns(self) -> list[DoubleVector]:
        return [DoubleVector(self.X[:, i], self.A[:, i]) for i in range(self.n)]

    def rank(self) -> int:
        return numerical_rank(self.matrix)

    def require_full_rank(self) -> None:
        if self.rank() != self.n:
            raise FrameError(f"frame has rank {self.rank()} < {self.n} at {self.point}")

    def distance(self, v: DoubleVector | np.ndarray) -> float:
        """Least-squares distance of ``v`` from the frame span, over max(1, ‖v‖)."""
        w = v.stacked() if isinstance(v, DoubleVector) else np.asarray(v, dtype=float)
        q = orthonormal_range(self.matrix)
        res = w - q @ (q.T @ w)
        return float(np.linalg.norm(res) / max(1.0, np.linalg.norm(w)))

    def contains(self, v, tol: float = RANK_TOL) -> bool:
        return self.distance(v) <= tol

    def recombined(self, g: np.ndarray) -> "DiracPointFrame":
        return DiracPointFrame(self.matrix @ np.asarray(g, dtype=float), self.point)

    def in_basis(self, b: np.ndarray) -> "DiracPointFrame":
        """The same subspace written in the coordinates whose basis vectors are the columns of ``b``."""
        b = np.asarray(b, dtype=float)
        return DiracPointFrame(np.vstack([np.linalg.solve(b, self.X), b.T @ self.A]), self.point)


def isotropy_gram(f: DiracPointFrame) -> np.ndarray:
    g = f.A.T @ f.X
    return 0.5 * (g + g.T)


def is_isotropic(f: DiracPointFrame, tol: float = ISOTROPY_TOL) -> bool:
    return float(np.max(np.abs(isotropy_gram(f)), initial=0.0)) <= tol


def bi_corank(f: DiracPointFrame, tol: float = ISOTROPY_TOL) -> BiCorank:
    """r = dim(D ∩ V), s = dim(D ∩ V*), m = (n − r − s)/2."""
    if not is_isotropic(f, tol):
        g = float(np.max(np.abs(isotropy_gram(f))))
        raise FrameError(f"frame is not isotropic (max pairing {g:.3e})")
    f.require_full_rank()
    n = f.n
    sc = f.scale
    r = n - numerical_rank(f.A, scale=sc)
    s = n - numerical_rank(f.X, scale=sc)
    if (n - r - s) % 2:
        raise FrameError(f"parity violation: n={n}, r={r}, s={s} (rank misestimated)")
    return BiCorank(r, s, (n - r - s) // 2)


def projections(f: DiracPointFrame) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of proj_V D and proj_V* D."""
    sc = f.scale
    return orthonormal_range(f.X, scale=sc), orthonormal_range(f.A, scale=sc)


def kernel_basis(f: DiracPointFrame) -> np.ndarray:
    """Orthonormal basis of D ∩ V (the kernel of the leaf 2-form)."""
    c = null_space(f.A, scale=f.scale)
    return orthonormal_range(f.X @ c, scale=f.scale) if c.shape[1] else np.zeros((f.n, 0))


def covector_for(f: DiracPointFrame, u: np.ndarray) -> np.ndarray:
    """Some α with (u, α) ∈ D, by least squares; raises if u is not in proj_V D."""
    u = np.asarray(u, dtype=float)
    c, *_ = np.linalg.lstsq(f.X, u, rcond=None)
    if np.linalg.norm(f.X @ c - u) > 1e-8 * max(1.0, np.linalg.norm(u)):
        raise FrameError("vector is not in the characteristic space")
    return f.A @ c


def leaf_form_matrix(f: DiracPointFrame, basis: np.ndarray | None = None,
                     check: bool = True) -> np.ndarray:
    """Matrix ω(bᵢ, bⱼ) = α_{bᵢ}(bⱼ) of the leaf 2-form on the given basis.

    ``basis`` defaults to the orthonormal basis of proj_V D.  With ``check``
    the value is recomputed from a second preimage (shifted by the kernel of
    the tangent projection) and antisymmetry is asserted.
    """
    if basis is None:
        basis = projections(f)[0]
    basis = np.asarray(basis, dtype=float).reshape(f.n, -1)
    k = basis.shape[1]
    c, *_ = np.linalg.lstsq(f.X, basis, rcond=None)
    resid = np.linalg.norm(f.X @ c - basis, axis=0)
    if k and np.max(resid) > 1e-8 * max(1.0, np.max(np.linalg.norm(basis, axis=0))):
        raise FrameError("basis is not contained in the characteristic space")
    alphas = f.A @ c
    w = alphas.T @ basis
    if check and k:
        nx = null_space(f.X, scale=f.scale)
        if nx.shape[1]:
            shift = nx @ np.ones((nx.shape[1], k))
            w2 = (f.A @ (c + shift)).T @ basis
            if np.max(np.abs(w2 - w)) > 1e-8 * max(1.0, np.max(np.abs(w))):
                raise FrameError("leaf 2-form is not well defined (frame not isotropic?)")
        if np.max(np.abs(w + w.T)) > 1e-8 * max(1.0, np.max(np.abs(w))):
            raise FrameError("leaf 2-form is not antisymmetric (frame not isotropic?)")
    return w


def leaf_two_form(f: DiracPointFrame) -> tuple[np.ndarray, np.ndarray]:
    """(orthonormal basis of proj_V D, antisymmetric matrix of ω_S on it)."""
    q = projections(f)[0]
    return q, leaf_form_matrix(f, q)


def leaf_form_full(f: DiracPointFrame) -> np.ndarray:
    """n×n matrix W with ω_S(u, v) = uᵀ W v for u, v in proj_V D."""
    q, w = leaf_two_form(f)
    return q @ w @ q.T


def subspace_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span(a) ∩ span(b)."""
    qa = orthonormal_range(a)
    qb = orthonormal_range(b)
    if qa.shape[1] == 0 or qb.shape[1] == 0:
        return np.zeros((a.shape[0], 0))
    c = null_space(np.hstack([qa, -qb]), scale=1.0)
    return orthonormal_range(qa @ c[: qa.shape[1]], scale=1.0)


@dataclass(frozen=True)
class LagrangianVerdict:
    in_leaf: bool
    isotropic: bool
    lagrangian: bool
    dim: int
    expected_dim: int
    form_residual: float


def lagrangian_check(subspace: np.ndarray, f: DiracPointFrame,
                     tol: float = FORM_TOL) -> LagrangianVerdict:
    """Isotropic in the leaf, and of dimension ½·rank ω_S + r."""
    sub = np.asarray(subspace, dtype=float).reshape(f.n, -1)
    k = numerical_rank(sub)
    bc = bi_corank(f)
    expected = bc.m + bc.r
    q = projections(f)[0]
    outside = np.linalg.norm(sub - q @ (q.T @ sub)) if sub.size else 0.0
    if outside > 1e-8 * max(1.0, np.linalg.norm(sub)):
        return LagrangianVerdict(False, False, False, k, expected, float("nan"))
    qs = orthonormal_range(sub)
    w = leaf_form_matrix(f, qs) if qs.shape[1] else np.zeros((0, 0))
    res = float(np.max(np.abs(w), initial=0.0))
    iso = res <= tol
    return LagrangianVerdict(True, iso, iso and k == expected, k, expected, res)


@dataclass(frozen=True)
class CoLagrangianVerdict:
    spanning: bool
    transverse_to_kernel: bool
    isotropic_part: bool
    dimension_ok: bool
    dim: int
    expected_dim: float
    form_residual: float

    @property
    def colagrangian(self) -> bool:
        return self.spanning and self.transverse_to_kernel and self.isotropic_part and self.dimension_ok


def colagrangian_check(subspace: np.ndarray, f: DiracPointFrame,
                       tol: float = FORM_TOL) -> CoLagrangianVerdict:
    """Conditions a) L + proj_V D = V, b) L ∩ (D ∩ V) = 0, c) ω_S|(L ∩ proj_V D) = 0,
    and dim L = ½(n − r + s)."""
    sub = np.asarray(subspace, dtype=float).reshape(f.n, -1)
    n = f.n
    k = numerical_rank(sub)
    bc = bi_corank(f)
    q = projections(f)[0]
    kern = kernel_basis(f)
    spanning = numerical_rank(np.hstack([orthonormal_range(sub), q]), scale=1.0) == n
    ks = kern.shape[1]
    transverse = numerical_rank(np.hstack([orthonormal_range(sub), kern]), scale=1.0) == k + ks
    inter = subspace_intersection(sub, q)
    w = leaf_form_matrix(f, inter) if inter.shape[1] else np.zeros((0, 0))
    res = float(np.max(np.abs(w), initial=0.0))
    expected = 0.5 * (n - bc.r + bc.s)
    return CoLagrangianVerdict(spanning, transverse, res <= tol, k == expected, k, expected, res)


@dataclass(frozen=True)
class DarbouxForm:
    """Linear normal form: the columns of ``basis`` are, in order,
    x₁..x_{2m} (symplectic pairs), y₁..y_r (kernel), z₁..z_s (transverse)."""

    bicorank: BiCorank
    basis: np.ndarray
    residual: float


def normal_form_matrix(bc: BiCorank) -> np.ndarray:
    """Leaf form Σ dx_{2i−1}∧dx_{2i} on the first 2m + r coordinates."""
    k = 2 * bc.m + bc.r
    w = np.zeros((k, k))
    for i in range(bc.m):
        w[2 * i, 2 * i + 1] = 1.0
        w[2 * i + 1, 2 * i] = -1.0
    return w


def linear_darboux(f: DiracPointFrame) -> DarbouxForm:
    """Change of basis bringing a constant Dirac subspace to Darboux normal form.

    Kernel and transverse directions are split off first; the rest is paired by
    symplectic Gram–Schmidt with the largest |ω(u, v)| as pivot.
    """
    bc = bi_corank(f)
    n = f.n
    q = projections(f)[0]
    kern = kernel_basis(f)
    kern_b = aligned_basis(kern) if kern.shape[1] else kern
    rest = aligned_basis(q, kern) if q.shape[1] > kern.shape[1] else np.zeros((n, 0))
    wfull = leaf_form_full(f)

    vecs = [rest[:, i] for i in range(rest.shape[1])]
    pairs: list[np.ndarray] = []
    while vecs:
        vm = np.array(vecs)
        om = vm @ wfull @ vm.T
        i, j = np.unravel_index(int(np.argmax(np.abs(om))), om.shape)
        piv = om[i, j]
        if abs(piv) < 1e-12:
            raise FrameError("leaf form degenerate on the complement of its kernel")
        if i > j:
            # keep the lower-index vector first so coordinate order is preserved
            i, j, piv = j, i, -piv
        u = vecs[i]
        v = vecs[j] / piv
        pairs.extend([u, v])
        others = [w for idx, w in enumerate(vecs) if idx not in (i, j)]
        vecs = [w - (w @ wfull @ v) * u + (w @ wfull @ u) * v for w in others]
    if len(pairs) != 2 * bc.m:
        raise FrameError("symplectic pairing did not match the bi-corank")

    z = null_space(q.T, scale=1.0) if q.shape[1] < n else np.zeros((n, 0))
    z_b = aligned_basis(z) if z.shape[1] else z
    basis = np.column_stack(pairs + [kern_b[:, i] for i in range(kern_b.shape[1])]
                            + [z_b[:, i] for i in range(z_b.shape[1])]) if n else np.zeros((0, 0))
    basis = basis.reshape(n, n)
    g = f.in_basis(basis)
    k = 2 * bc.m + bc.r
    w_new = leaf_form_matrix(g, np.eye(n)[:, :k])
    residual = float(np.max(np.abs(w_new - normal_form_matrix(bc)), initial=0.0))
    # D ∩ V* must be spanned by the dual covectors of the transverse directions
    trans = g.X[k:]
    residual = max(residual, float(np.max(np.abs(trans), initial=0.0)))
    return DarbouxForm(bc, basis, residual)
