"""Real lattices in ℝᵖ given by row bases: reduction and equivalence."""

from __future__ import annotations

from fractions import Fraction
from math import lcm

import numpy as np


class LatticeError(ValueError):
    pass


def gauss_reduce(b: np.ndarray) -> np.ndarray:
    """Lagrange–Gauss reduction of a 2-dimensional lattice basis (rows)."""
    u, v = np.array(b[0], dtype=float), np.array(b[1], dtype=float)
    if u @ u > v @ v:
        u, v = v, u
    for _ in range(1000):
        mu = round(float(u @ v) / float(u @ u))
        v = v - mu * u
        if v @ v >= u @ u:
            break
        u, v = v, u
    return np.array([u, v])


def lll_reduce(b: np.ndarray, delta: float = 0.99) -> np.ndarray:
    """LLL reduction of a lattice basis (rows)."""
    b = np.array(b, dtype=float)
    k = b.shape[0]
    if k <= 1:
        return b

    def gso(b):
        bs = np.zeros_like(b)
        mu = np.zeros((k, k))
        for i in range(k):
            bs[i] = b[i]
            for j in range(i):
                mu[i, j] = (b[i] @ bs[j]) / (bs[j] @ bs[j])
                bs[i] = bs[i] - mu[i, j] * bs[j]
        return bs, mu

    bs, mu = gso(b)
    i = 1
    guard = 0
    while i < k:
        guard += 1
        if guard > 100000:
            raise LatticeError("LLL did not terminate")
        for j in range(i - 1, -1, -1):
            q = round(mu[i, j])
            if q:
                b[i] = b[i] - q * b[j]
                bs, mu = gso(b)
        if bs[i] @ bs[i] >= (delta - mu[i, i - 1] ** 2) * (bs[i - 1] @ bs[i - 1]):
            i += 1
        else:
            b[[i, i - 1]] = b[[i - 1, i]]
            bs, mu = gso(b)
            i = max(i - 1, 1)
    return b


def reduce_basis(b: np.ndarray) -> np.ndarray:
    """Shortest-basis reduction (Gauss for p = 2, LLL for p ≥ 3) in canonical position.

    Rows are ordered by the coordinate where they are largest, each row is signed
    so that this entry is positive, and finally det > 0 is enforced.
    """
    b = np.atleast_2d(np.array(b, dtype=float))
    p = b.shape[0]
    if p == 1:
        out = np.abs(b)
    elif p == 2:
        out = gauss_reduce(b)
    else:
        out = lll_reduce(b)
    return orient(canonical_order(out))


def canonical_order(b: np.ndarray) -> np.ndarray:
    """Rows sorted by the index of their dominant entry (ties by length), dominant entries positive."""
    b = np.array(b, dtype=float)
    mag = np.round(np.abs(b), 9)
    piv = np.argmax(mag, axis=1)
    order = np.lexsort((np.arange(len(b)), np.round(np.linalg.norm(b, axis=1), 9), piv))
    b = b[order]
    piv = piv[order]
    signs = np.sign(b[np.arange(len(b)), piv])
    signs[signs == 0] = 1.0
    return b * signs[:, None] + 0.0


def orient(b: np.ndarray) -> np.ndarray:
    """Negate the first row if needed so that det > 0."""
    b = np.array(b, dtype=float)
    if np.linalg.det(b) < 0:
        b[0] = -b[0]
    return b


def unimodular_relation(l1: np.ndarray, l2: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray | None, float]:
    """Integer U with l2 = U l1 and |det U| = 1, if one exists within ``tol``.

    Returns (U or None, max deviation of U from the nearest integer matrix,
    measured after mapping back: max |U_int l1 − l2|).
    """
    l1 = np.atleast_2d(np.asarray(l1, dtype=float))
    l2 = np.atleast_2d(np.asarray(l2, dtype=float))
    u = l2 @ np.linalg.inv(l1)
    ui = np.round(u)
    dev = float(np.max(np.abs(ui @ l1 - l2)))
    if dev <= tol and abs(abs(round(np.linalg.det(ui))) - 1) == 0:
        return ui.astype(int), dev
    return None, dev


def equivalent(l1: np.ndarray, l2: np.ndarray, tol: float = 1e-8) -> bool:
    return unimodular_relation(l1, l2, tol)[0] is not None


def _integer_row_basis(m: list[list[int]]) -> list[list[int]]:
    """Row-style Hermite reduction: a basis of the ℤ-span of the integer rows ``m``."""
    rows = [list(r) for r in m if any(r)]
    if not rows:
        return []
    ncol = len(rows[0])
    basis = []
    col = 0
    while rows and col < ncol:
        nz = [r for r in rows if r[col] != 0]
        if not nz:
            col += 1
            continue
        while len([r for r in rows if r[col] != 0]) > 1:
            nz = sorted([r for r in rows if r[col] != 0], key=lambda r: abs(r[col]))
            piv = nz[0]
            new = []
            for r in rows:
                if r is piv or r[col] == 0:
                    new.append(r)
                else:
                    q = r[col] // piv[col]
                    new.append([a - q * b for a, b in zip(r, piv)])
            rows = [r for r in new if any(r)]
        piv = [r for r in rows if r[col] != 0][0]
        basis.append(piv)
        rows = [r for r in rows if r is not piv]
        col += 1
    return basis


def lattice_from_vectors(vectors: np.ndarray, p: int, max_den: int = 64, tol: float = 1e-7) -> np.ndarray:
    """Basis of the lattice generated by approximate lattice vectors.

    A reference basis is chosen among the shortest independent vectors; every
    vector is expressed in it with rational coordinates (bounded denominator),
    and the integer span is reduced to a basis.
    """
    vecs = np.atleast_2d(np.asarray(vectors, dtype=float))
    vecs = vecs[np.linalg.norm(vecs, axis=1) > tol]
    if len(vecs) == 0:
        raise LatticeError("no nonzero lattice vectors")
    order = np.argsort(np.linalg.norm(vecs, axis=1), kind="stable")
    vecs = vecs[order]
    ref: list[np.ndarray] = []
    for v in vecs:
        trial = np.array(ref + [v])
        if np.linalg.matrix_rank(trial, tol=1e-6 * max(1.0, np.abs(trial).max())) == len(ref) + 1:
            ref.append(v)
        if len(ref) == p:
            break
    if len(ref) < p:
        raise LatticeError(f"lattice vectors span only {len(ref)} of {p} dimensions")
    r = np.array(ref)
    coords = vecs @ np.linalg.inv(r)
    fr = [[Fraction(float(c)).limit_denominator(max_den) for c in row] for row in coords]
    for row, crow in zip(fr, coords):
        for f, c in zip(row, crow):
            if abs(float(f) - c) > 1e-6:
                raise LatticeError("lattice vectors are not commensurate with the reference basis")
    den = 1
    for row in fr:
        for f in row:
            den = lcm(den, f.denominator)
    ints = [[int(f * den) for f in row] for row in fr] + [[den * int(i == j) for j in range(p)] for i in range(p)]
    hb = _integer_row_basis(ints)
    if len(hb) != p:
        raise LatticeError("degenerate lattice")
    basis = np.array(hb, dtype=float) / den @ r
    return reduce_basis(basis)
