import numpy as np
import pytest

from xcflow import curvature as cv
from xcflow import oracles
from xcflow.chart import MetricField, make_chart, sym_pack, sym_unpack
from xcflow.errors import CrossDegenerateError, GhostStateError


def wavy_fn(x, y, z, amp=0.3, lx=1.0, ly=1.0):
    """Pointwise smooth SPD metric, periodic with lateral periods lx, ly."""
    shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
    out = np.zeros(shape + (3, 3))
    sx = np.sin(2 * np.pi * x / lx)
    cy = np.cos(2 * np.pi * y / ly)
    out[..., 0, 0] = 2.0 + amp * sx * cy + 0.1 * z
    out[..., 1, 1] = 2.0 - amp * np.cos(2 * np.pi * x / lx) * (1 + 0.2 * z)
    out[..., 2, 2] = 2.0 + amp * np.sin(2 * np.pi * y / ly) * np.cos(z)
    out[..., 0, 1] = out[..., 1, 0] = 0.2 * amp * sx * z
    out[..., 0, 2] = out[..., 2, 0] = 0.15 * amp * cy
    out[..., 1, 2] = out[..., 2, 1] = 0.1 * amp * sx * cy * z
    return out


def wavy_metric(chart, amp=0.3):
    """Smooth laterally periodic SPD metric with no special structure."""
    def fn(x, y, z):
        return wavy_fn(x, y, z, amp=amp, lx=chart.lx, ly=chart.ly)
    return MetricField.from_callable(chart, fn)


def test_requires_filled_ghosts():
    c = make_chart(6, 6, 6)
    f = MetricField.constant(c, np.eye(3))
    f.mark_ghosts_stale()
    with pytest.raises(GhostStateError):
        cv.compute_bundle(f)


def test_flat_metric_is_exactly_flat():
    c = make_chart(6, 6, 7)
    a = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, 0.0], [0.1, 0.0, 1.0]])
    b = cv.compute_bundle(MetricField.constant(c, a))
    assert np.all(b.riemann == 0.0)
    assert np.all(b.ricci == 0.0)
    assert np.all(b.einstein_lo == 0.0)
    assert np.all(b.scalar == 0.0)
    # cross must vanish identically so flat data is a bitwise fixed point
    assert np.all(b.cross == 0.0)
    assert np.all(b.det_e == 0.0)
    assert b.cross_fallback.all()
    with pytest.raises(CrossDegenerateError):
        cv.cross_variant(b, "detE")


def _spaceform_errors(name, n, **chart_kw):
    c = make_chart(n, n, n + 1, **chart_kw)
    f = oracles.spaceform_metric(name, c)
    b = cv.compute_bundle(f)
    k = oracles.spaceform_curvature(name)
    g = b.g_lo
    errs = {
        "scalar": np.max(np.abs(b.scalar - 6.0 * k)),
        "ricci": np.max(np.abs(b.ricci - 2.0 * k * g)),
        "einstein": np.max(np.abs(b.einstein_lo - (-k) * g)),
        "cross": np.max(np.abs(b.cross - k * k * g)),
        "det_e": np.max(np.abs(b.det_e - (-k) ** 3)),
    }
    return b, errs


def test_hyperbolic_halfspace_curvature_values():
    _, coarse = _spaceform_errors("hyperbolic-halfspace", 8, z_min=1.0, z_max=2.0)
    b, fine = _spaceform_errors("hyperbolic-halfspace", 16, z_min=1.0, z_max=2.0)
    for key in coarse:
        assert fine[key] < 0.05
        assert coarse[key] / fine[key] > 3.4, key
    assert not b.cross_fallback.any()


def test_stereographic_sphere_curvature_values():
    _, coarse = _spaceform_errors("sphere-stereographic", 8, z_min=0.1, z_max=0.9)
    _, fine = _spaceform_errors("sphere-stereographic", 16, z_min=0.1, z_max=0.9)
    for key in coarse:
        assert fine[key] < 0.06
        assert coarse[key] / fine[key] > 3.4, key


def test_hopf_sphere_curvature_values():
    kw = dict(lx=2 * np.pi, ly=2 * np.pi, z_min=0.5, z_max=1.0)
    _, coarse = _spaceform_errors("sphere-hopf", 8, **kw)
    _, fine = _spaceform_errors("sphere-hopf", 16, **kw)
    for key in coarse:
        assert fine[key] < 0.06
        assert coarse[key] / fine[key] > 3.4, key


def test_riemann_symmetries_exact_on_generic_metric():
    c = make_chart(10, 10, 11, z_min=0.5, z_max=1.5)
    b = cv.compute_bundle(wavy_metric(c))
    res = cv.riemann_symmetry_residuals(b)
    for key, val in res.items():
        assert val < 1e-12, (key, val)


def test_mu_identity_on_generic_metric():
    c = make_chart(10, 10, 11, z_min=0.5, z_max=1.5)
    b = cv.compute_bundle(wavy_metric(c))
    assert cv.check_mu_identity(b) < 1e-9
    # should in fact hold to rounding
    assert cv.check_mu_identity(b) < 1e-12


def test_cross_routes_agree_on_generic_metric():
    c = make_chart(10, 10, 11, z_min=0.5, z_max=1.5)
    b = cv.compute_bundle(wavy_metric(c))
    scale = np.max(np.abs(b.cross))
    for which in ("detE", "mu2", "mu4"):
        alt = cv.cross_variant(b, which)
        assert np.max(np.abs(alt - b.cross)) / scale < 1e-8, which
        assert np.max(np.abs(alt - b.cross)) / scale < 1e-11, which
    with pytest.raises(ValueError):
        cv.cross_variant(b, "bogus")


def test_constant_rescale_is_exact():
    # doubling the metric must halve the cross tensor bitwise: every
    # intermediate scales by a power of two
    c = make_chart(8, 8, 9, z_min=0.5, z_max=1.5)
    f = wavy_metric(c)
    f2 = MetricField(c, 2.0 * f.g, ghosts_filled=True)
    b1 = cv.compute_bundle(f)
    b2 = cv.compute_bundle(f2)
    assert np.array_equal(b2.gamma, b1.gamma)
    assert np.array_equal(b2.ricci, b1.ricci)
    assert np.array_equal(b2.einstein_lo, b1.einstein_lo)
    assert np.array_equal(b2.cross, 0.5 * b1.cross)


def test_eigenvalue_routes_agree():
    c = make_chart(8, 8, 9, z_min=0.5, z_max=1.5)
    b = cv.compute_bundle(wavy_metric(c))
    robust = cv.eig_e_robust(b)
    mixed = np.einsum("...ij,...jk->...ik", b.ginv, b.einstein_lo)
    trig = cv.eig_mixed_trig(mixed)
    assert np.max(np.abs(robust - trig)) < 1e-8


def test_eig_trig_triple_root():
    m = np.full((5, 3, 3), 0.0)
    m[:] = 0.7 * np.eye(3)
    eigs = cv.eig_mixed_trig(m)
    assert np.max(np.abs(eigs - 0.7)) < 5e-16


def test_sectional_report_classifications():
    c = make_chart(8, 8, 9, z_min=1.0, z_max=2.0)
    b = cv.compute_bundle(oracles.spaceform_metric("hyperbolic-halfspace", c))
    rep = cv.sectional_report(b)
    assert rep["classification"] == "all-negative-sectional"
    assert abs(rep["min_eig_E"] - 1.0) < 0.06
    assert rep["min_eig_E"] > 0.9

    c2 = make_chart(8, 8, 9, lx=2 * np.pi, ly=2 * np.pi, z_min=0.5, z_max=1.0)
    rep = cv.sectional_report(cv.compute_bundle(
        oracles.spaceform_metric("sphere-hopf", c2)))
    assert rep["classification"] == "all-positive-sectional"
    assert rep["max_eig_E"] < 0.0

    # flat data has vanishing eigenvalues, reported as mixed
    flat = cv.sectional_report(cv.compute_bundle(
        MetricField.constant(make_chart(6, 6, 6), np.eye(3))))
    assert flat["classification"] == "mixed"
    assert flat["min_eig_E"] == 0.0 and flat["max_eig_E"] == 0.0

    mixed = cv.sectional_report(cv.compute_bundle(wavy_metric(c, amp=0.3)))
    assert mixed["classification"] == "mixed"


def test_sectional_classification_matches_random_planes():
    # sample random 2-planes per node; sectional curvature of span(u, v) is
    # R(u, v, v, u) / (|u|^2 |v|^2 - <u, v>^2), all negative exactly when
    # the report says all-negative-sectional
    rng = np.random.default_rng(11)
    for name, kw, want in (
        ("hyperbolic-halfspace", dict(z_min=1.0, z_max=2.0), "neg"),
        ("sphere-hopf",
         dict(lx=2 * np.pi, ly=2 * np.pi, z_min=0.5, z_max=1.0), "pos"),
    ):
        c = make_chart(6, 6, 7, **kw)
        b = cv.compute_bundle(oracles.spaceform_metric(name, c))
        rep = cv.sectional_report(b)
        u = rng.normal(size=(100, 3))
        v = rng.normal(size=(100, 3))
        num = np.einsum("...ijkl,pi,pj,pk,pl->...p", b.riemann, u, v, v, u)
        uu = np.einsum("...ij,pi,pj->...p", b.g_lo, u, u)
        vv = np.einsum("...ij,pi,pj->...p", b.g_lo, v, v)
        uv = np.einsum("...ij,pi,pj->...p", b.g_lo, u, v)
        sect = num / (uu * vv - uv ** 2)
        if want == "neg":
            assert np.all(sect < 0.0)
            assert rep["classification"] == "all-negative-sectional"
        else:
            assert np.all(sect > 0.0)
            assert rep["classification"] == "all-positive-sectional"


def test_cross_is_tensorial_under_constant_rescaling_of_axes():
    # pull the metric back by a constant diagonal map with power-of-two
    # factors; nodes of the stretched chart coincide with mapped nodes, and
    # every finite difference scales exactly, so the transformed cross
    # tensor matches to rounding
    a = np.array([2.0, 0.5, 4.0])
    c1 = make_chart(8, 8, 9, lx=1.0, ly=1.0, z_min=0.5, z_max=1.5)
    c2 = make_chart(8, 8, 9, lx=1.0 / a[0], ly=1.0 / a[1],
                    z_min=0.5 / a[2], z_max=1.5 / a[2])
    b1 = cv.compute_bundle(wavy_metric(c1))

    # sample the pulled-back metric directly: gh(y) = A^T g(A y) A
    def pulled(x, y, z):
        g = wavy_fn(a[0] * x, a[1] * y, a[2] * z)
        return np.einsum("i,...ij,j->...ij", a, g, a)

    b2 = cv.compute_bundle(MetricField.from_callable(c2, pulled))
    want = np.einsum("i,...ij,j->...ij", a, b1.cross, a)
    scale = np.max(np.abs(want))
    assert np.max(np.abs(b2.cross - want)) / scale < 1e-12


def test_lateral_shift_invariance_is_bitwise():
    # translating the data by whole nodes along a periodic axis commutes
    # with the whole pipeline exactly
    from xcflow.chart import fill_free

    c = make_chart(8, 8, 9, z_min=0.5, z_max=1.5)
    phys = wavy_metric(c).g[c.phys]
    base = np.zeros(c.shape_total + (6,))
    base[c.phys] = phys
    fill_free(base, c)
    b = cv.compute_bundle(MetricField(c, base, ghosts_filled=True))
    for axis, k in ((0, 3), (1, 5)):
        rolled = np.zeros(c.shape_total + (6,))
        rolled[c.phys] = np.roll(phys, k, axis=axis)
        fill_free(rolled, c)
        bs = cv.compute_bundle(MetricField(c, rolled, ghosts_filled=True))
        assert np.array_equal(bs.cross, np.roll(b.cross, k, axis=axis))
        assert np.array_equal(bs.ricci, np.roll(b.ricci, k, axis=axis))


def test_pointwise_helpers():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(7, 3, 3))
    m = a @ a.transpose(0, 2, 1) + np.eye(3)
    inv, det = cv.inv3(m)
    assert np.allclose(inv @ m, np.eye(3), atol=1e-12)
    assert np.allclose(det, np.linalg.det(m), rtol=1e-12)
    assert np.allclose(cv.adj3(m), inv * det[:, None, None], rtol=1e-10)
