"""Action functions: path integrals against independent oracles, Mineur loop integrals,
constancy on tori, action-angle verification and co-affine transitions."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scenario_run
from dirac_aa.action import (ActionError, ActionSetup, action_by_mineur, action_by_path_integral,
                             action_dependence_rank, coaffine_transition, evaluate_actions,
                             full_aa_convergence, is_unimodular, random_unimodular, verify_full_aa,
                             hypothesis_report, verify_partial_aa)
from dirac_aa.dirac import from_poisson
from dirac_aa.fields import BivectorField

from oracles import pendulum_action


def setup(name: str) -> ActionSetup:
    return scenario_run(name).action_setup()


def energy(q, p):
    return p ** 2 / 2 - np.cos(2 * np.pi * q)


def test_oscillator_action_is_disk_area():
    st_ = setup("oscillator")
    r = np.array([0.6, 0.9, 1.4, 1.9])
    ys = np.column_stack([r, np.zeros_like(r)])
    A = action_by_path_integral(st_, ys, k=0)
    assert np.max(np.abs(A - np.pi * (r ** 2 - 1.0))) <= 1e-7


def test_pendulum_action_matches_quadrature_oracle():
    st_ = setup("pendulum")
    base = st_.tc.base
    ps = np.array([2.5, 2.8, 3.2, 3.5])
    ys = np.column_stack([np.full_like(ps, 0.1), ps])
    A = action_by_path_integral(st_, ys, k=0)
    ref = np.array([pendulum_action(energy(0.1, p)) for p in ps]) - pendulum_action(energy(*base))
    assert np.max(np.abs(A - ref)) <= 1e-6


def test_action_constant_on_torus():
    st_ = setup("pendulum")
    c = st_.family[-1]
    tools = scenario_run("pendulum").tools()
    s = np.arange(64) / 64 + 0.003
    pts = tools.grid_flow(c.base, list(c.lattice), [s]).reshape(-1, st_.n)
    A = evaluate_actions(st_, pts, False).actions[:, 0]
    assert np.std(A) <= 1e-8


def test_mineur_agrees_with_path_integral():
    run = scenario_run("oscillator")
    st_ = run.action_setup()
    r = np.array([0.7, 1.0, 1.6])
    ys = np.column_stack([r, np.zeros_like(r)])
    M = action_by_mineur(st_, run.sc.mineur, ys, k=0)
    A = action_by_path_integral(st_, ys, k=0)
    # the orbit of y∂x − x∂y runs clockwise, so ∮ x dy = −π r²
    assert np.max(np.abs(M + np.pi * r ** 2)) <= 1e-7
    assert np.max(np.abs((M - M[1]) + (A - A[1]))) <= 1e-7


@pytest.mark.parametrize("name", ["oscillator", "t2xr", "dirac_t2xr2"])
def test_full_action_angle(name):
    st_ = setup(name)
    pts = st_.sample_points(per_axis=2)
    rep = verify_full_aa(st_, pts)
    assert rep.lagrangian
    assert rep.residual <= 1e-5


def test_full_action_angle_second_order_convergence():
    st_ = setup("oscillator")
    pts = st_.sample_points(per_axis=2)[:4]
    res, orders = full_aa_convergence(st_, (0.04, 0.02, 0.01), pts)
    assert np.all(np.abs(orders - 2.0) <= 0.2)


@pytest.mark.parametrize("name", ["poisson_r3", "product"])
def test_partial_action_angle(name):
    st_ = setup(name)
    rep = verify_partial_aa(st_, st_.sample_points(per_axis=2))
    assert rep.angle_defect <= 1e-5


def test_product_transverse_coefficient():
    st_ = setup("product")
    rep = verify_partial_aa(st_, st_.sample_points(per_axis=2))
    assert np.max(np.abs(rep.f[:, 0, 1] - 1.0)) <= 1e-6


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_coaffine_transition(seed):
    st_ = setup("t2xr")
    U = random_unimodular(st_.p, np.random.default_rng(seed))
    assert is_unimodular(U)
    levels = st_.level_points()
    rep = coaffine_transition(st_, U, levels, evaluate_actions(st_, levels, False).actions)
    assert rep.deviation <= 1e-7


def test_dependence_rank_of_presymplectic_type_21():
    rank, sv = action_dependence_rank(setup("t2xr"))
    assert rank == 1


def test_hypothesis_report_flags_jumping_leaf_codimension():
    """Π = z ∂x∧∂y has 2-dimensional leaves for z ≠ 0 and points on z = 0."""
    sc = scenario_run("poisson_r3").sc
    D = from_poisson(BivectorField.parse(sc.chart, {("x", "y"): "z"}))
    pts = np.array([[1.0, 0.0, 0.5], [1.0, 0.0, 0.0], [1.2, 0.1, -0.3]])
    rep = hypothesis_report(sc.system, D, pts, "ii")
    assert rep.leaf_codims == (1, 3, 1)
    assert not rep.verified
    assert hypothesis_report(sc.system, sc.dirac, pts, "ii").verified


def test_actions_refused_when_declared_hypothesis_fails():
    run = scenario_run("poisson_r3")
    sys = replace(run.bound_system(), dirac=from_poisson(
        BivectorField.parse(run.sc.chart, {("x", "y"): "z"})))
    tc = run.torus_chart()
    # the base torus lies on z = 0, where the leaf codimension jumps
    with pytest.raises(ActionError, match="codimension"):
        ActionSetup.create(sys, tc, np.array([[1.0, 0.0, 0.0], [1.5, 0.0, 0.0]]), ("z",), "ii", run.tools())
