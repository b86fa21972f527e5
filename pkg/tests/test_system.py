"""Integrable systems: integrability conditions, regularity and Hamiltonian binding."""

import numpy as np
import pytest

from dirac_aa.dirac import from_presymplectic
from dirac_aa.expr import Chart
from dirac_aa.fields import KForm, VectorField
from dirac_aa.sampling import halton_points
from dirac_aa.scenario import load_scenario
from dirac_aa.system import (HamiltonianBindingError, IntegrableSystem, IntegrableSystemError,
                             bind_hamiltonians, bracket_residual, check_integrability, is_regular_at)

ANNULUS = Chart(("x", "y"), (False, False), ((-2.0, 2.0), (-2.0, 2.0)))


def oscillator() -> IntegrableSystem:
    return IntegrableSystem.parse(ANNULUS, [["y", "-x"]], ["(x^2 + y^2)/2"])


def test_oscillator_passes_in_annulus():
    pts = halton_points(ANNULUS, 128)
    rep = check_integrability(oscillator(), pts, region=((0.5, 2.0), (0.0, 2.0)))
    assert rep.commutator_residual == 0.0 and rep.invariance_residual == 0.0
    assert rep.passed


def test_degenerate_samples_outside_region_only_warn():
    pts = np.array([[0.0, 0.0], [1.0, 0.5]])
    rep = check_integrability(oscillator(), pts, region=((0.5, 2.0), (0.0, 2.0)))
    assert rep.warnings == 1 and rep.passed
    assert not is_regular_at(oscillator(), [0.0, 0.0])
    assert is_regular_at(oscillator(), [1.0, 0.0])


def test_t2r_system():
    sc = load_scenario("t2xr")
    rep = check_integrability(sc.system, halton_points(sc.chart, 64), sc.region)
    assert rep.passed


def test_noncommuting_control():
    sc = load_scenario("noncommuting")
    rep = check_integrability(sc.system, halton_points(sc.chart, 64), sc.region)
    assert rep.commutator_residual >= 0.05 and not rep.passed


def test_type_mismatch_rejected():
    with pytest.raises(IntegrableSystemError):
        IntegrableSystem.parse(ANNULUS, [["y", "-x"]], [])


def test_bind_hamiltonians():
    D = from_presymplectic(KForm.parse(ANNULUS, 2, {("x", "y"): "1"}))
    pts = halton_points(ANNULUS, 64)
    s = bind_hamiltonians(oscillator(), D, ["(x^2 + y^2)/2"], pts)
    assert bracket_residual(s, pts) <= 1e-12
    with pytest.raises(HamiltonianBindingError):
        bind_hamiltonians(oscillator(), D, ["-(x^2 + y^2)/2"], pts)


def test_recombined_fields_commute():
    sc = load_scenario("t2xr")
    U = np.array([[2, 1], [1, 1]])
    s2 = sc.system.recombined(U)
    rep = check_integrability(s2, halton_points(sc.chart, 32), sc.region)
    assert rep.passed
    assert np.allclose(s2.field_values(np.zeros((1, 3)))[0], U @ sc.system.field_values(np.zeros((1, 3)))[0])
