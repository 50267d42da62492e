import numpy as np
import pytest

from xcflow import boundary as bd
from xcflow import evolve as ev
from xcflow import oracles
from xcflow import pullback as pb
from xcflow.chart import (MAGIC_PULLBACK, MetricField, fill_free, make_chart,
                          read_snapshot)
from xcflow.errors import ConfigError, GaugeDriftError, NewtonDivergedError


def _lateral_metric(chart):
    """SPD data varying along the periodic axes with a mild z slope."""

    def fn(x, y, z):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
        out = np.zeros(shape + (3, 3))
        sx = np.sin(2 * np.pi * x / chart.lx)
        cy = np.cos(2 * np.pi * y / chart.ly)
        out[..., 0, 0] = 2.0 + 0.3 * sx * cy + 0.1 * z
        out[..., 1, 1] = 2.0 - 0.2 * np.cos(2 * np.pi * x / chart.lx)
        out[..., 2, 2] = 1.5 + 0.2 * np.sin(2 * np.pi * y / chart.ly) * z
        out[..., 0, 1] = out[..., 1, 0] = 0.1 * sx * cy
        return out

    return MetricField.from_callable(chart, fn)


def _translated(chart, dx):
    d = pb.identity_diffeo(chart)
    d.phi[..., 0] += dx
    return d


def _stretched_run(n, t_end=0.02, observer_times=()):
    c = make_chart(n, n, n + 1, z_min=1.0, z_max=2.0)
    hook = oracles.gauge_stretched_hyperbolic
    f = MetricField(c, hook(c, 0.0).g.copy(), ghosts_filled=True)
    spec = bd.make_boundary_spec("dirichlet-exact", exact=hook)
    st = ev.make_state(f, 1, "flat", spec)
    tr = pb.GaugeTracker(st)
    caps = []
    for tt in observer_times or (t_end,):
        st = ev.run(st, tt, cadence=0, observer=tr)
        caps.append(tr.capture(st))
    return c, st, tr, caps


def test_identity_map_round_trips_bitwise():
    c = make_chart(6, 6, 7)
    g = _lateral_metric(c)
    d = pb.identity_diffeo(c)
    assert d.t == 0.0

    xi = pb.preimage_field(d)
    assert np.array_equal(xi, pb._node_positions(c)[c.phys])

    gb = pb.pullback_metric(g, d)
    assert np.array_equal(gb.phys, g.phys)


def test_zero_field_advance_keeps_identity():
    c = make_chart(5, 5, 6)
    d = pb.identity_diffeo(c)
    w = np.zeros(c.shape_total + (3,))
    d2 = pb.advance_diffeo(d, 0.0, w, 0.01, w)
    assert d2.t == 0.01
    assert np.array_equal(d2.phi, d.phi)


def test_constant_field_advance_is_exact_on_periodic_chart():
    # linear ODE, one RK4 step lands on the closed form to rounding
    c = make_chart(6, 6, 6, periodic_z=True)
    d = pb.identity_diffeo(c)
    w = np.zeros(c.shape_total + (3,))
    w[..., 2] = 0.3
    d2 = pb.advance_diffeo(d, 0.0, w, 0.02, w)
    mrg = (slice(1, -1),) * 3
    want = pb._node_positions(c)[mrg][..., 2] + 0.3 * 0.02
    assert np.max(np.abs(d2.phi[mrg][..., 2] - want)) < 1e-14


def test_lateral_only_field_leaves_faces_bitwise():
    c = make_chart(6, 6, 7)
    d = pb.identity_diffeo(c)
    w = np.zeros(c.shape_total + (3,))
    w[..., 0] = 0.2
    w[..., 1] = -0.1
    d2 = pb.advance_diffeo(d, 0.0, w, 0.02, w)
    assert np.array_equal(d2.phi[..., 2], d.phi[..., 2])


def test_advance_rejects_backward_and_mismatched_times():
    c = make_chart(5, 5, 6)
    d = pb.identity_diffeo(c, t=0.1)
    w = np.zeros(c.shape_total + (3,))
    with pytest.raises(ConfigError):
        pb.advance_diffeo(d, 0.1, w, 0.05, w)
    with pytest.raises(ConfigError, match="tracked time"):
        pb.advance_diffeo(d, 0.2, w, 0.3, w)


def test_advance_guard_catches_runaway_drift():
    c = make_chart(6, 6, 7)
    d = pb.identity_diffeo(c)
    w = np.zeros(c.shape_total + (3,))
    w[..., 0] = 3.5 * c.hx / 0.01
    with pytest.raises(GaugeDriftError, match="gauge drift out of chart"):
        pb.advance_diffeo(d, 0.0, w, 0.01, w)


def test_node_translation_matches_rolled_field():
    c = make_chart(10, 10, 11)
    g = _lateral_metric(c)
    gb = pb.pullback_metric(g, _translated(c, 3 * c.hx))
    assert np.max(np.abs(gb.phys - np.roll(g.phys, 3, axis=0))) < 1e-12


def test_offnode_translation_converges_at_sampling_order():
    def gap(n):
        c = make_chart(n, n, n + 1)
        g = _lateral_metric(c)
        dx = 0.37 * c.hx
        gb = pb.pullback_metric(g, _translated(c, dx))

        def fn(x, y, z):
            shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
            out = np.zeros(shape + (3, 3))
            sx = np.sin(2 * np.pi * (x - dx) / c.lx)
            cy = np.cos(2 * np.pi * y / c.ly)
            out[..., 0, 0] = 2.0 + 0.3 * sx * cy + 0.1 * z
            out[..., 1, 1] = 2.0 - 0.2 * np.cos(2 * np.pi * (x - dx) / c.lx)
            out[..., 2, 2] = 1.5 + 0.2 * np.sin(2 * np.pi * y / c.ly) * z
            out[..., 0, 1] = out[..., 1, 0] = 0.1 * sx * cy
            return out

        want = MetricField.from_callable(c, fn)
        return float(np.max(np.abs(gb.phys - want.phys)))

    coarse, fine = gap(10), gap(20)
    assert fine < 1.5e-4
    assert coarse / fine > 8.0


def test_newton_preimages_invert_the_interpolated_map():
    c = make_chart(8, 8, 9)
    d = pb.identity_diffeo(c)
    x, y, z = c.mesh(ghosts=True)
    amp = 0.6 * c.hx
    d.phi[..., 0] += amp * np.sin(2 * np.pi * y / c.ly) * np.cos(np.pi * (z - c.z_min))
    d.phi[..., 1] += 0.5 * amp * np.sin(2 * np.pi * x / c.lx)

    xi = pb.preimage_field(d)
    flat = xi.reshape(-1, 3)
    dev = pb._deviation(d)
    fwd = flat + pb._sample(dev, c, flat, pb._margin_cells(c))
    targets = pb._node_positions(c)[c.phys].reshape(-1, 3)
    assert np.max(np.abs(fwd - targets)) < 1e-12


def test_composition_with_inverse_recovers_the_field():
    def gap(n):
        c = make_chart(n, n, n + 1)
        g = _lateral_metric(c)
        d = pb.identity_diffeo(c)
        x, y, z = c.mesh(ghosts=True)
        amp = 0.6 * c.hx
        d.phi[..., 0] += amp * np.sin(2 * np.pi * y / c.ly) * np.cos(np.pi * (z - c.z_min))
        d.phi[..., 1] += 0.5 * amp * np.sin(2 * np.pi * x / c.lx)

        gb = pb.pullback_metric(g, d)
        arr = gb.g.copy()
        fill_free(arr, c)
        back = pb.pullback_metric(MetricField(c, arr, ghosts_filled=True),
                                  pb.invert_diffeo(d))
        return float(np.max(np.abs(back.phys - g.phys)))

    coarse, fine = gap(12), gap(24)
    assert fine < 1e-2
    assert coarse / fine > 3.0


def test_folded_map_reports_orientation_loss():
    c = make_chart(8, 8, 9)
    d = pb.identity_diffeo(c)
    flip = np.fromfunction(lambda i, j, k: (-1.0) ** (i + j), c.shape_total,
                           dtype=np.intp)
    d.phi[..., 0] += 0.6 * c.hx * flip
    with pytest.raises(NewtonDivergedError, match="orientation"):
        pb.preimage_field(d)


def test_pullback_rejects_chart_mismatch():
    g = _lateral_metric(make_chart(6, 6, 7))
    d = pb.identity_diffeo(make_chart(6, 6, 8))
    with pytest.raises(ConfigError):
        pb.pullback_metric(g, d)


def test_capture_requires_matching_time():
    c, st, tr, _ = _stretched_run(6, observer_times=(0.001,))
    st2 = ev.step(st, 1e-4)
    with pytest.raises(ConfigError, match="different times"):
        tr.capture(st2)


def test_residual_rejects_misordered_or_empty_captures():
    c, st, tr, caps = _stretched_run(6, observer_times=(0.001, 0.002, 0.003))
    a, b, cc = caps
    with pytest.raises(ConfigError, match="time ordered"):
        pb.xcf_residual(b, a, cc, 1)
    dead = pb.PullbackCapture(t=b.t, gbar=b.gbar, cross=np.zeros_like(b.cross))
    with pytest.raises(ConfigError, match="vanishes"):
        pb.xcf_residual(a, dead, cc, 1)


def test_quiet_gauge_run_keeps_map_near_identity():
    # background frozen to the initial data: the gauge field starts at
    # zero and only picks up discretization-scale noise
    c = make_chart(16, 16, 17, z_min=1.0, z_max=2.0)
    g0 = oracles.spaceform_metric("hyperbolic-halfspace", c)
    f = MetricField(c, g0.g.copy(), ghosts_filled=True)
    spec = bd.make_boundary_spec("umbilic", lam=bd.LambdaSpec.power())
    st = ev.make_state(f, 1, "initial-metric", spec)
    tr = pb.GaugeTracker(st)
    st = ev.run(st, 0.002, cadence=0, observer=tr)
    mrg = (slice(1, -1),) * 3
    drift = np.max(np.abs(tr.diffeo.phi[mrg] - pb._node_positions(c)[mrg]))
    assert drift <= 1e-6


def test_stretched_run_pullback_restores_isotropy():
    c, st, tr, caps = _stretched_run(12, observer_times=(0.019, 0.02, 0.021))
    cap = caps[1]

    # the run itself is anisotropic, the transported metric is not
    ani_raw = np.max(np.abs(st.g.phys[..., 0] / st.g.phys[..., 5] - 1.0))
    ani_back = np.max(np.abs(cap.gbar.phys[..., 0] / cap.gbar.phys[..., 5] - 1.0))
    assert ani_raw > 0.03
    assert ani_back < 3e-3

    # transported field sits on the isotropic scaling solution
    phi_t = np.sqrt(1.0 + 4.0 * cap.t)
    _, _, z = c.mesh()
    want = phi_t / z ** 2
    assert np.max(np.abs(cap.gbar.phys[..., 5] - want) / want) < 3e-3

    # integrated map agrees with the closed-form normal stretch
    _, _, m = oracles.gauge_stretch_factors(st.t)
    mrg = (slice(1, -1),) * 3
    zc = pb._node_positions(c)[mrg][..., 2]
    assert np.max(np.abs(tr.diffeo.phi[mrg][..., 2] / (zc * m) - 1.0)) < 4e-3

    # and the flow-law defect of the transported family is small
    res = pb.xcf_residual(caps[0], caps[1], caps[2], st.sign)
    assert res < 0.2


def test_pulled_back_snapshot_round_trip(tmp_path):
    c, st, tr, caps = _stretched_run(6, observer_times=(0.001,))
    path = tmp_path / "pulled.xcf"
    pb.write_pulled_back(path, caps[0].gbar)
    chart, data, magic = read_snapshot(path)
    assert magic == MAGIC_PULLBACK
    assert chart == c
    assert np.array_equal(data, caps[0].gbar.phys)
