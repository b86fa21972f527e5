"""Liouville tori: period lattices, angle coordinates, averaging and structure preservation."""

import numpy as np
import pytest

from conftest import scenario_run
from dirac_aa import lattice as lat
from dirac_aa.fields import KForm
from dirac_aa.system import IntegrableSystem
from dirac_aa.expr import Chart
from dirac_aa.torus import (NonCompactError, TorusTools, generator_preservation, generator_tensor_residual,
                            preservation_prerequisite, torus_average)

POSITIVE = ["oscillator", "pendulum", "t2xr", "sqrt2", "poisson_r3", "dirac_t2xr2", "product"]


def test_oscillator_period():
    tc = scenario_run("oscillator").torus_chart()
    assert abs(tc.lattice[0, 0] - 2 * np.pi) <= 1e-9
    assert tc.return_error <= 1e-9


def test_sqrt2_lattice():
    tc = scenario_run("sqrt2").torus_chart()
    ref = np.array([[1.0, -np.sqrt(2)], [0.0, 1.0]])
    U, dev = lat.unimodular_relation(ref, tc.lattice, 1e-8)
    assert U is not None and dev <= 1e-8


@pytest.mark.parametrize("name", ["oscillator", "sqrt2", "t2xr", "pendulum"])
def test_lattice_independent_of_base_point(name):
    run = scenario_run(name)
    tools, tc = run.tools(), run.torus_chart()
    frac = np.array([0.37, 0.61][: tools.p])
    x1 = tools.joint_flow(frac @ tc.lattice, tc.base)
    tc1 = tools.find_period_lattice(x1, run.sc.torus.t_max, tc.transversal)
    assert lat.equivalent(tc.lattice, tc1.lattice, 1e-8)


@pytest.mark.parametrize("name", ["oscillator", "sqrt2", "t2xr"])
def test_angle_round_trip(name):
    run = scenario_run(name)
    tools, tc = run.tools(), run.torus_chart()
    rng = np.random.default_rng(3)
    th = rng.random((6, tools.p))
    ys = tools.flow.flow(th @ tc.lattice, np.broadcast_to(tc.base, (6, tools.n)))
    back = tools.angle_coordinates(tc, ys)
    d = np.abs(back - th)
    assert np.max(np.minimum(d, 1 - d)) <= 1e-9


def test_non_compact_orbit_detected():
    c = Chart(("x", "y"))
    s = IntegrableSystem.parse(c, [["1", "0"]], ["y"])
    with pytest.raises(NonCompactError):
        TorusTools(s).find_period_lattice(np.array([0.0, 0.0]), t_max=4.0)


@pytest.mark.parametrize("name", POSITIVE)
def test_generators_preserve_structure(name):
    run = scenario_run(name)
    tools, tc = run.tools(), run.torus_chart()
    pts = run.sample_tori()
    D = run.sc.dirac
    assert preservation_prerequisite(tools.sys, D, pts).residual <= 1e-8
    assert generator_preservation(tools, tc, D, pts).residual <= 1e-8


@pytest.mark.parametrize("name", ["oscillator", "t2xr", "poisson_r3", "product"])
def test_average_fixes_invariant_tensors(name):
    run = scenario_run(name)
    tools, tc = run.tools(), run.torus_chart()
    for T in run.sc.average_tensors:
        r = torus_average(tools, tc, T)
        assert r.deviation <= 1e-10
        assert r.idempotency <= 1e-10
        assert generator_tensor_residual(tools, tc, T, run.sample_tori()).residual <= 1e-8


def test_average_of_non_invariant_form_is_invariant_and_idempotent():
    run = scenario_run("oscillator")
    tools, tc = run.tools(), run.torus_chart()
    T = KForm.parse(run.sc.chart, 1, {"x": "1"})
    r = torus_average(tools, tc, T)
    assert r.deviation > 0.1
    assert r.idempotency <= 1e-10
    # dx averages to zero over the circle action
    assert np.max(np.abs(r.averaged)) <= 1e-10
