"""Dirac structures: constructions, axioms, bi-corank, Hamiltonians and induced structures."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirac_aa import pointwise as pw
from dirac_aa.dirac import (NonClosedFormError, Section, UnverifiedHamiltonianError, bi_corank_map,
                            canonical_dirac, courant_bracket, courant_closedness, from_frame,
                            from_poisson, from_presymplectic, induced_dirac_on_level, is_admissible_hamiltonian,
                            is_casimir, is_hamiltonian_pair, isotropy_check, poisson_bracket, rank_check)
from dirac_aa.expr import Chart, evaluate, parse
from dirac_aa.fields import BivectorField, KForm, VectorField
from dirac_aa.sampling import halton_points

R2 = Chart(("x", "y"), (False, False), ((0.5, 2.0),) * 2)
R3 = Chart(("x", "y", "z"), (False,) * 3, ((0.5, 2.0),) * 3)
T2R2 = Chart(("th1", "th2", "z", "w"), (True, True, False, False))


def vec(chart, *comps):
    return VectorField.parse(chart, list(comps))


def form1(chart, **terms):
    return KForm.parse(chart, 1, dict(terms))


def sections_close(a: Section, b: Section, pts) -> bool:
    return np.allclose(a.evaluate(pts), b.evaluate(pts), atol=1e-12)


def t2r2_dirac():
    """T²×ℝ² with leaves {w = const}, leaf form dθ₁∧dz and kernel ∂θ₂."""
    c = T2R2
    return from_frame(c, [
        Section(vec(c, "1", "0", "0", "0"), form1(c, z="1")),
        Section(vec(c, "0", "0", "1", "0"), form1(c, th1="-1")),
        Section(vec(c, "0", "1", "0", "0"), KForm.zero(c, 1)),
        Section(VectorField.zero(c), form1(c, w="1")),
    ])


# -- constructions ----------------------------------------------------------


def test_presymplectic_frame():
    D = from_presymplectic(KForm.parse(R2, 2, {("x", "y"): "1"}))
    pts = halton_points(R2, 8)
    f = D.frames(pts)
    assert np.allclose(f[:, :, 0], [1, 0, 0, 1])
    assert np.allclose(f[:, :, 1], [0, 1, -1, 0])


def test_presymplectic_example_with_weight():
    D = from_presymplectic(KForm.parse(R2, 2, {("x", "y"): "y"}))
    pts = halton_points(R2, 8)
    f = D.frames(pts)
    assert np.allclose(f[:, 3, 0], pts[:, 1]) and np.allclose(f[:, 2, 1], -pts[:, 1])


def test_nonclosed_form_rejected():
    with pytest.raises(NonClosedFormError) as exc:
        from_presymplectic(KForm.parse(R3, 2, {("x", "y"): "z"}))
    assert exc.value.residual > 0.5


def test_poisson_examples():
    pts = halton_points(R3, 32)
    D = from_poisson(BivectorField.parse(R3, {("x", "y"): "1"}))
    assert bi_corank_map(D, pts) == {(0, 1): 32}
    D2 = from_poisson(BivectorField.parse(R2, {("x", "y"): "y"}))
    assert courant_closedness(D2, halton_points(R2, 32)).residual <= 1e-12
    D0 = from_poisson(BivectorField(R3, {}))
    assert bi_corank_map(D0, pts) == {(0, 3): 32}


@pytest.mark.parametrize("dims, pair", [((1, 0, 0), (0, 0)), ((1, 1, 1), (1, 1)), ((0, 1, 1), (1, 1))])
def test_canonical_bicorank(dims, pair):
    D = canonical_dirac(*dims)
    pts = halton_points(D.chart, 16)
    assert bi_corank_map(D, pts) == {pair: 16}
    assert courant_closedness(D, pts).residual <= 1e-12


# -- Courant bracket --------------------------------------------------------


def test_courant_bracket_examples():
    c = R3
    pts = halton_points(c, 8)
    zero1 = KForm.zero(c, 1)
    br = courant_bracket(Section(vec(c, "1", "0", "0"), form1(c, y="1")),
                         Section(vec(c, "0", "1", "0"), form1(c, x="-1")))
    assert np.allclose(br.evaluate(pts), 0)
    br = courant_bracket(Section(vec(c, "0", "0", "1"), zero1), Section(vec(c, "1", "0", "0"), form1(c, y="z")))
    assert sections_close(br, Section(VectorField.zero(c), form1(c, y="1")), pts)
    br = courant_bracket(Section(vec(c, "0", "x", "0"), zero1), Section(vec(c, "1", "0", "0"), zero1))
    assert sections_close(br, Section(vec(c, "0", "-1", "0"), zero1), pts)


def test_nonclosed_frame_fails_closedness():
    D = from_presymplectic(KForm.parse(R3, 2, {("x", "y"): "z"}), check=False)
    assert courant_closedness(D, halton_points(R3, 128)).residual >= 0.1


# -- invariants on random constant and linear structures ------------------

coef = st.integers(-3, 3)
R4 = Chart(("a", "b", "c", "d"))
KEYS4 = [(i, j) for i in range(4) for j in range(i + 1, 4)]


@settings(max_examples=25, deadline=None)
@given(st.lists(coef, min_size=6, max_size=6), st.lists(coef, min_size=4, max_size=4))
def test_presymplectic_graph_axioms(cs, lin):
    """ω with constant coefficients plus d(f dx) terms is closed; its graph is a Dirac structure
    whose leaf form is ω."""
    names = R4.coord_names
    omega = KForm(R4, 2, {k: parse(str(v), R4) for k, v in zip(KEYS4, cs)})
    extra = KForm(R4, 2, {(0, i + 1): parse(f"{lin[i]} * {names[0]}", R4) for i in range(3)})
    omega = omega + extra
    D = from_presymplectic(omega)
    pts = halton_points(R4, 32)
    assert isotropy_check(D, pts).residual <= 1e-10
    assert rank_check(D, pts).passed
    assert courant_closedness(D, pts).residual <= 1e-9
    dense = omega.dense(pts)
    for f, w in zip(D.frames(pts), dense):
        assert np.allclose(pw.leaf_form_full(pw.DiracPointFrame(f)), w, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(coef, min_size=3, max_size=3))
def test_poisson_graph_round_trip(cs):
    """Constant bivectors on ℝ³ satisfy Jacobi; the graph returns Π coefficient-wise."""
    pi = BivectorField(R3, {k: parse(str(v), R3) for k, v in zip([(0, 1), (0, 2), (1, 2)], cs)})
    D = from_poisson(pi)
    pts = halton_points(R3, 16)
    assert courant_closedness(D, pts).residual <= 1e-9
    assert np.allclose(D.poisson_matrix(pts), pi.dense(pts), atol=1e-12)
    for pair in bi_corank_map(D, pts):
        assert (3 - sum(pair)) % 2 == 0


# -- Hamiltonians and Casimirs ----------------------------------------------


def test_oscillator_hamiltonian_sign():
    D = from_presymplectic(KForm.parse(R2, 2, {("x", "y"): "1"}))
    pts = halton_points(R2, 32)
    X = vec(R2, "y", "-x")
    assert is_hamiltonian_pair(X, parse("(x^2 + y^2)/2", R2), D, pts).passed
    assert not is_hamiltonian_pair(-X, parse("(x^2 + y^2)/2", R2), D, pts).passed


def test_weighted_example_hamiltonian():
    D = from_presymplectic(KForm.parse(R2, 2, {("x", "y"): "y"}))
    assert is_hamiltonian_pair(vec(R2, "x", "-y/2"), parse("x * y^2 / 2", R2), D, halton_points(R2, 32)).passed


@settings(max_examples=20, deadline=None)
@given(coef, coef)
def test_hamiltonian_stable_under_casimir_and_isotropic_shift(a, b):
    D = t2r2_dirac()
    pts = halton_points(T2R2, 32)
    X = vec(T2R2, "1", str(a), "0", "0")
    H = parse(f"z + {b} * w^2", T2R2)
    assert is_hamiltonian_pair(X, H, D, pts).passed


def test_casimirs_and_admissibility():
    D = t2r2_dirac()
    pts = halton_points(T2R2, 32)
    assert is_casimir(parse("w", T2R2), D, pts).passed
    assert not is_admissible_hamiltonian(parse("th2", T2R2), D, pts).passed
    assert is_admissible_hamiltonian(parse("z", T2R2), D, pts).passed
    Dp = from_poisson(BivectorField.parse(R3, {("x", "y"): "1"}))
    assert is_casimir(parse("z", R3), Dp, halton_points(R3, 32)).passed
    Dw = from_presymplectic(KForm.parse(R2, 2, {("x", "y"): "1"}))
    assert not is_casimir(parse("x", R2), Dw, halton_points(R2, 32)).passed


def test_poisson_bracket_sign():
    D = from_presymplectic(KForm.parse(R2, 2, {("x", "y"): "1"}))
    # under dH = i_X ω with ω = dx∧dy, the Hamiltonian field of x is −∂y
    Xx = vec(R2, "0", "-1")
    b = poisson_bracket(parse("x", R2), parse("y", R2), D, Xx)
    assert evaluate(b, R2, (1.0, 1.0)) == -1
    with pytest.raises(UnverifiedHamiltonianError):
        poisson_bracket(parse("x", R2), parse("y", R2), D, vec(R2, "0", "1"))


# -- induced structures ------------------------------------------------------


def test_induced_on_poisson_leaf():
    D = from_poisson(BivectorField.parse(R3, {("x", "y"): "1"}))
    Q = induced_dirac_on_level(D, {"z": 1.0})
    pts = halton_points(Q.chart, 16)
    assert bi_corank_map(Q, pts) == {(0, 0): 16}
    for f in Q.frames(pts):
        w = pw.leaf_form_full(pw.DiracPointFrame(f))
        assert np.isclose(w[0, 1], 1.0)


def test_induced_on_t2r2_slice():
    Q = induced_dirac_on_level(t2r2_dirac(), {"w": 0.0})
    pts = halton_points(Q.chart, 16)
    assert bi_corank_map(Q, pts) == {(1, 0): 16}
    for f in Q.frames(pts):
        w = pw.leaf_form_full(pw.DiracPointFrame(f))
        assert np.isclose(w[0, 2], 1.0) and np.isclose(w[1, 2], 0.0)


def test_induced_on_symplectic_line():
    D = from_presymplectic(KForm.parse(R2, 2, {("x", "y"): "1"}))
    Q = induced_dirac_on_level(D, {"x": 1.0})
    assert bi_corank_map(Q, halton_points(Q.chart, 8)) == {(1, 0): 8}
