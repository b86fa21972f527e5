"""Joint flows of commuting fields: accuracy, group property, variational Jacobian."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirac_aa.expr import Chart
from dirac_aa.fields import VectorField
from dirac_aa.flow import FlowEngine, FlowError, JointFlow

PLANE = Chart(("x", "y"))
T2R = Chart(("th1", "th2", "z"), (True, True, False))


def rotation() -> JointFlow:
    return JointFlow([VectorField.parse(PLANE, ["y", "-x"])])


def test_quarter_turn():
    y = rotation().flow([np.pi / 2], [1.0, 0.0])
    assert np.allclose(y, [0.0, -1.0], atol=1e-10)


def test_full_turn_returns():
    y = rotation().flow([2 * np.pi], [1.3, -0.2])
    assert np.allclose(y, [1.3, -0.2], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.3, 1.5), st.floats(0, 2 * np.pi))
def test_group_property(s, t, r, phi):
    f = rotation()
    x0 = np.array([r * np.cos(phi), r * np.sin(phi)])
    lhs = f.flow([s], f.flow([t], x0))
    rhs = f.flow([s + t], x0)
    assert np.allclose(lhs, rhs, atol=1e-9)
    assert np.isclose(np.linalg.norm(lhs), r, atol=1e-9)


def test_jacobian_matches_finite_differences():
    f = JointFlow([VectorField.parse(PLANE, ["y", "-x + x^3/10"])])
    x0 = np.array([0.7, 0.3])
    _, J = f.flow([1.3], x0, with_jacobian=True)
    h = 1e-6
    fd = np.stack([(f.flow([1.3], x0 + h * e) - f.flow([1.3], x0 - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    assert np.allclose(J, fd, atol=1e-7)


def test_joint_flow_and_wrapping():
    f = JointFlow([VectorField.parse(T2R, ["1", "0", "0"]), VectorField.parse(T2R, ["0", "1", "0"])])
    y = f.flow([1.25, 2.5], [0.5, 0.0, 3.0])
    assert np.allclose(y, [0.75, 0.5, 3.0])
    ys = f.flow([0.5, 0.0], [0.0, 0.0, 0.0], s_eval=[0.0, 0.5, 1.0])
    assert np.allclose(ys[:, 0, 0], [0.0, 0.25, 0.5])


def test_batch_matches_single():
    f = rotation()
    xs = np.array([[1.0, 0.0], [0.0, 2.0], [0.5, 0.5]])
    ts = np.array([[0.3], [1.1], [-0.7]])
    batch = f.flow(ts, xs)
    for b in range(3):
        assert np.allclose(batch[b], f.flow(ts[b], xs[b]), atol=1e-12)


def test_blow_up_raises():
    f = JointFlow([VectorField.parse(Chart(("x",)), ["x^2"])])
    with pytest.raises(FlowError):
        f.flow([2.0], [1.0])


def test_engine_rejects_bad_tolerances():
    with pytest.raises(ValueError):
        FlowEngine(rtol=0.0)
