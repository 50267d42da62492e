import numpy as np
import pytest

from xcflow import deturck as dt
from xcflow import oracles
from xcflow.chart import MetricField, make_chart
from xcflow.errors import ConfigError

from test_curvature import wavy_metric


def test_flat_metric_flat_background_is_stationary():
    c = make_chart(8, 8, 9)
    a = np.array([[2.0, 0.3, 0.0], [0.3, 1.4, 0.1], [0.0, 0.1, 1.0]])
    f = MetricField.constant(c, a)
    bg = dt.make_background("flat", f)
    w = dt.compute_w(f, bg)
    assert np.all(w.w_hi == 0.0)
    assert np.all(w.w_lo == 0.0)
    rhs = dt.modified_rhs(f, +1, bg, backend="numpy")
    assert np.all(rhs == 0.0)


def _hyperbolic_w_errors(n):
    c = make_chart(n, n, n + 1, z_min=1.0, z_max=2.0)
    f = oracles.spaceform_metric("hyperbolic-halfspace", c)
    bg = dt.make_background("flat", f)
    w = dt.compute_w(f, bg)
    phys = c.phys
    _, _, z = c.mesh()
    w_phys = w.w_hi[phys]
    err_w3 = np.max(np.abs(w_phys[..., 2] - np.broadcast_to(z, w_phys.shape[:3])))
    err_lat = np.max(np.abs(w_phys[..., :2]))
    lie = dt.lie_derivative(f, w)
    want = np.zeros(lie.shape)
    want[..., 0, 0] = -2.0 / z ** 2
    want[..., 1, 1] = -2.0 / z ** 2
    err_lie = np.max(np.abs(lie - want))
    return err_w3, err_lat, err_lie


def test_hyperbolic_flat_background_worked_values():
    # the gauge field of the hyperbolic slab against the flat background is
    # vertical with third component equal to the height, and dragging the
    # metric along it cancels exactly the x3 part of the flow
    coarse = _hyperbolic_w_errors(8)
    fine = _hyperbolic_w_errors(16)
    assert fine[0] < 1e-2
    assert fine[1] == 0.0
    assert fine[2] < 6e-2
    assert coarse[0] / fine[0] > 3.4
    assert coarse[2] / fine[2] > 3.4


def test_initial_metric_background_kills_w_for_rescaled_data():
    c = make_chart(8, 8, 9, z_min=0.5, z_max=1.5)
    f = wavy_metric(c)
    bg = dt.make_background("initial-metric", f)
    w0 = dt.compute_w(f, bg)
    assert np.max(np.abs(w0.w_hi)) == 0.0

    # power of two scaling: connection coefficients are reproduced bitwise
    f2 = MetricField(c, 2.0 * f.g, ghosts_filled=True)
    w2 = dt.compute_w(f2, bg)
    assert np.max(np.abs(w2.w_hi)) == 0.0

    f3 = MetricField(c, 1.7 * f.g, ghosts_filled=True)
    w3 = dt.compute_w(f3, bg)
    assert np.max(np.abs(w3.w_hi)) < 1e-13


def test_lie_derivative_two_expressions_agree():
    # near-constant metric with a gentle linear slope; the discrete product
    # rule defect is far below the field itself there
    c = make_chart(12, 12, 13, z_min=0.5, z_max=1.5)
    A = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, 0.2], [0.1, 0.2, 1.8]])
    L = np.array([[0.5, -0.2, 0.3], [-0.2, 0.8, 0.1], [0.3, 0.1, -0.4]])
    eps = 1e-4

    def fn(x, y, z):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
        out = np.zeros(shape + (3, 3))
        out[:] = A
        out += eps * z[..., None, None] * L
        return out

    f = MetricField.from_callable(c, fn)
    bg = dt.make_background("flat", f)
    w = dt.compute_w(f, bg)
    l1 = dt.lie_derivative(f, w)
    l2 = dt.lie_derivative_covariant(f, w)
    scale = np.max(np.abs(l1))
    assert scale > 0.0
    assert np.max(np.abs(l1 - l2)) / scale < 1e-9


def test_modified_rhs_combines_cross_and_drag():
    from xcflow import curvature as cv
    from xcflow.chart import sym_pack

    c = make_chart(8, 8, 9, z_min=0.5, z_max=1.5)
    f = wavy_metric(c)
    bg = dt.make_background("flat", f)
    rhs = dt.modified_rhs(f, -1, bg, backend="numpy")
    b = cv.compute_bundle(f)
    w = dt.compute_w(f, bg)
    want = sym_pack(-2.0 * b.cross + dt.lie_derivative(f, w))
    assert np.array_equal(rhs, want)


def test_background_and_backend_guards():
    c = make_chart(6, 6, 7)
    f = MetricField.constant(c, np.eye(3))
    with pytest.raises(ConfigError):
        dt.make_background("curved", f)
    with pytest.raises(ConfigError):
        dt.make_background("flat", None)
    bg = dt.make_background("flat", f)
    with pytest.raises(ConfigError):
        dt.modified_rhs(f, +2, bg)
    with pytest.raises(ConfigError):
        dt.modified_rhs(f, +1, bg, backend="fortran")
    other = dt.make_background("flat", MetricField.constant(
        make_chart(6, 6, 8), np.eye(3)))
    with pytest.raises(ConfigError):
        dt.compute_w(f, other)
