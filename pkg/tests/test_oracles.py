import numpy as np
import pytest

from xcflow import oracles
from xcflow.chart import make_chart
from xcflow.errors import ConfigError


# Frozen reference values for the scale factor law, evaluated from the
# closed form sqrt(1 + 4 s k^2 t) by hand.
PHI_HYPERBOLIC_005 = 1.0954451150103321   # sqrt(1.2)
PHI_SPHERE_005 = 0.8944271909999159       # sqrt(0.8)


def test_phi_closed_form_frozen_values():
    assert oracles.spaceform_phi(-1.0, +1, 0.05) == pytest.approx(
        PHI_HYPERBOLIC_005, abs=1e-15)
    assert oracles.spaceform_phi(1.0, -1, 0.05) == pytest.approx(
        PHI_SPHERE_005, abs=1e-15)
    assert oracles.spaceform_phi(2.0, +1, 0.01) == pytest.approx(
        np.sqrt(1.16), abs=1e-15)
    with pytest.raises(ConfigError):
        oracles.spaceform_phi(1.0, -1, 0.3)


def test_scaling_ode_matches_closed_form():
    ode = oracles.scaling_ode_oracle(-1.0, +1, 0.05)
    assert abs(ode - PHI_HYPERBOLIC_005) < 1e-10
    ode = oracles.scaling_ode_oracle(1.0, -1, 0.05)
    assert abs(ode - PHI_SPHERE_005) < 1e-10


def test_umbilic_lambda_scaling():
    lam = oracles.umbilic_lambda_of_t(1.0, -1.0, +1, 0.05)
    assert lam == pytest.approx(PHI_HYPERBOLIC_005 ** -0.5, abs=1e-14)
    assert oracles.umbilic_lambda_of_t(1.0, -1.0, +1, 0.0) == 1.0


def test_spaceform_samples_frozen_points():
    c = make_chart(8, 8, 9, z_min=1.0, z_max=2.0)
    hyp = oracles.spaceform_metric("hyperbolic-halfspace", c)
    k = 4  # z = 1.5 on this chart
    z = c.axis_coords(2)[k]
    assert z == pytest.approx(1.5)
    gw = c.ghost_width
    assert hyp.g[gw, gw, gw + k, 0] == pytest.approx(1.0 / 2.25, abs=1e-15)
    assert hyp.g[gw, gw, gw + k, 1] == 0.0

    c2 = make_chart(8, 8, 9, lx=1.0, ly=1.0, z_min=0.2, z_max=0.8)
    st = oracles.spaceform_metric("sphere-stereographic", c2)
    # at (x, y, z) = (0, 0, 0.2) the conformal factor is 4 / (1.04)^2
    assert st.g[gw, gw, gw, 3] == pytest.approx(4.0 / 1.04 ** 2, abs=1e-14)

    c3 = make_chart(8, 8, 9, lx=2 * np.pi, ly=2 * np.pi, z_min=0.5, z_max=1.0)
    hopf = oracles.spaceform_metric("sphere-hopf", c3)
    th = c3.axis_coords(2)[4]
    assert hopf.g[gw, gw, gw + 4, 0] == pytest.approx(np.cos(th) ** 2, abs=1e-15)
    assert hopf.g[gw, gw, gw + 4, 3] == pytest.approx(np.sin(th) ** 2, abs=1e-15)
    assert hopf.g[gw, gw, gw + 4, 5] == 1.0


def test_spaceform_chart_guards():
    with pytest.raises(ConfigError):
        oracles.spaceform_metric("hyperbolic-halfspace",
                                 make_chart(8, 8, 9, z_min=0.05, z_max=1.0))
    with pytest.raises(ConfigError):
        oracles.spaceform_metric("sphere-hopf",
                                 make_chart(8, 8, 9, z_min=0.5, z_max=1.6))
    with pytest.raises(ConfigError):
        oracles.spaceform_metric("no-such-form", make_chart(8, 8, 9))


def test_dense_eig_triangular_is_exact():
    t = np.triu(np.arange(36, dtype=float).reshape(6, 6) + 1.0)
    eigs = oracles.dense_eig_oracle(t)
    assert np.allclose(np.sort(eigs.real), np.sort(np.diag(t)), atol=0.0)
    assert np.max(np.abs(eigs.imag)) == 0.0


def test_dense_eig_known_spectra():
    # rotation block: conjugate pair on the unit circle
    th = 0.7
    m = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    eigs = oracles.dense_eig_oracle(m)
    assert np.allclose(sorted(eigs.imag), [-np.sin(th), np.sin(th)], atol=1e-12)
    assert np.allclose(eigs.real, np.cos(th), atol=1e-12)

    # companion matrix of (x-1)(x-2)(x-3)
    comp = np.array([[0.0, 0.0, 6.0], [1.0, 0.0, -11.0], [0.0, 1.0, 6.0]])
    eigs = oracles.dense_eig_oracle(comp)
    assert np.allclose(np.sort(eigs.real), [1.0, 2.0, 3.0], atol=1e-9)

    # semisimple repeated eigenvalue
    q, _ = np.linalg.qr(np.random.default_rng(5).normal(size=(4, 4)))
    m = q @ np.diag([2.0, 2.0, 2.0, 5.0]) @ q.T
    eigs = oracles.dense_eig_oracle(m)
    assert np.allclose(np.sort(eigs.real), [2.0, 2.0, 2.0, 5.0], atol=1e-9)


def test_dense_eig_agrees_with_lapack_on_random():
    rng = np.random.default_rng(11)
    for trial in range(4):
        m = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)) * (trial % 2)
        mine = oracles.dense_eig_oracle(m)
        ref = np.sort_complex(np.linalg.eigvals(m))
        ref = ref[np.lexsort((ref.imag, ref.real))]
        assert np.max(np.abs(mine - ref)) < 1e-8


def test_spaceform_metric_time_scaling():
    c = make_chart(6, 6, 7, z_min=1.0, z_max=2.0)
    g0 = oracles.spaceform_metric("hyperbolic-halfspace", c)
    gt = oracles.spaceform_metric("hyperbolic-halfspace", c, t=0.05)
    assert np.max(np.abs(gt.g - PHI_HYPERBOLIC_005 * g0.g)) < 1e-15
    assert oracles.spaceform_sign("hyperbolic-halfspace") == 1

    c2 = make_chart(6, 6, 7, lx=2 * np.pi, ly=2 * np.pi, z_min=0.5, z_max=1.0)
    s0 = oracles.spaceform_metric("sphere-hopf", c2)
    st = oracles.spaceform_metric("sphere-hopf", c2, t=0.05)
    assert np.max(np.abs(st.g - PHI_SPHERE_005 * s0.g)) < 1e-15
    assert oracles.spaceform_sign("sphere-hopf") == -1
    # positively curved presets collapse at t = 1/4
    with pytest.raises(ConfigError):
        oracles.spaceform_metric("sphere-hopf", c2, t=0.25)


# Frozen factors of the flat-background gauge run, from the closed forms
# b = sqrt(1.08), a = b e^(1-b), m = e^((b-1)/2) evaluated by hand.
GAUGE_A_002 = 0.9992503171794291
GAUGE_B_002 = 1.0392304845413265
GAUGE_M_002 = 1.01980888518056


def test_gauge_stretch_factors_frozen_values():
    a, b, m = oracles.gauge_stretch_factors(0.02)
    assert a == pytest.approx(GAUGE_A_002, abs=1e-15)
    assert b == pytest.approx(GAUGE_B_002, abs=1e-15)
    assert m == pytest.approx(GAUGE_M_002, abs=1e-15)
    assert oracles.gauge_stretch_factors(0.0) == (1.0, 1.0, 1.0)
    # the pullback multiplies the tangential factor by m^2, landing back on
    # the isotropic scale factor
    assert a * m * m == pytest.approx(b, rel=1e-14)
    with pytest.raises(ConfigError):
        oracles.gauge_stretch_factors(-0.3)


def test_gauge_stretch_factors_solve_the_coupled_odes():
    # plain fixed-step RK4 of da/dt = 2a(1/b^2 - 1/b), db/dt = 2/b
    def rhs(v):
        a, b = v
        return np.array([2.0 * a * (1.0 / (b * b) - 1.0 / b), 2.0 / b])

    dt = 1e-5
    v = np.array([1.0, 1.0])
    for _ in range(5000):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * dt * k1)
        k3 = rhs(v + 0.5 * dt * k2)
        k4 = rhs(v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    aw, bw, _ = oracles.gauge_stretch_factors(0.05)
    assert abs(v[0] - aw) < 1e-12
    assert abs(v[1] - bw) < 1e-12


def test_gauge_stretched_field_moves_by_the_flat_background_rhs():
    from xcflow.deturck import make_background, modified_rhs

    def rhs_gap(n):
        c = make_chart(n, n, n + 1, z_min=1.0, z_max=2.0)
        f = oracles.gauge_stretched_hyperbolic(c, 0.01)
        out = modified_rhs(f, 1, make_background("flat", f), "numpy")
        a, b, _ = oracles.gauge_stretch_factors(0.01)
        adot = (2.0 / b) * (1.0 - b) * np.exp(1.0 - b)
        bdot = 2.0 / b
        _, _, z = c.mesh()
        want = np.zeros(c.shape_phys + (6,))
        want[..., 0] = adot / z ** 2
        want[..., 3] = adot / z ** 2
        want[..., 5] = bdot / z ** 2
        return float(np.max(np.abs(out - want)))

    coarse, fine = rhs_gap(8), rhs_gap(16)
    assert fine < 0.1
    assert coarse / fine > 3.5


def periodic_probe_metric(chart, amp=0.25):
    """Smooth non-flat metric periodic along all three axes."""
    from xcflow.chart import MetricField

    span = chart.z_max - chart.z_min

    def fn(x, y, z):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
        out = np.zeros(shape + (3, 3))
        sx = np.sin(2 * np.pi * x / chart.lx)
        cy = np.cos(2 * np.pi * y / chart.ly)
        tz = 2 * np.pi * (z - chart.z_min) / span
        out[..., 0, 0] = 2.0 + amp * sx * cy + 0.1 * np.cos(tz)
        out[..., 1, 1] = 2.0 - amp * np.cos(2 * np.pi * x / chart.lx) * np.sin(tz)
        out[..., 2, 2] = 2.0 + amp * np.sin(2 * np.pi * y / chart.ly + tz)
        out[..., 0, 1] = out[..., 1, 0] = 0.2 * amp * sx * np.cos(tz)
        out[..., 0, 2] = out[..., 2, 0] = 0.15 * amp * cy
        out[..., 1, 2] = out[..., 2, 1] = 0.1 * amp * sx * cy * np.sin(tz)
        return out

    return MetricField.from_callable(chart, fn)


def test_probe_guards():
    c = make_chart(16, 16, 16, periodic_z=True)
    f = periodic_probe_metric(c)
    with pytest.raises(ConfigError):
        oracles.fourier_symbol_probe(f, (0, 0, 0))
    with pytest.raises(ConfigError):
        oracles.fourier_symbol_probe(f, (3, 0, 0))  # beyond a quarter Nyquist
    c2 = make_chart(16, 16, 16)
    f2 = periodic_probe_metric(c2)
    with pytest.raises(ConfigError):
        oracles.fourier_symbol_probe(f2, (2, 0, 0))


def test_probe_deviation_shrinks_with_frequency():
    c = make_chart(32, 32, 32, periodic_z=True)
    f = periodic_probe_metric(c)
    lo = oracles.fourier_symbol_probe(f, (2, 1, 1))
    hi = oracles.fourier_symbol_probe(f, (4, 2, 2))
    assert hi["deviation"] < 0.5
    assert lo["deviation"] / hi["deviation"] > 1.4


def test_probe_epsilon_linearity():
    c = make_chart(16, 16, 16, periodic_z=True)
    f = periodic_probe_metric(c)
    a = oracles.fourier_symbol_probe(f, (2, 1, 1), amplitude=1e-6,
                                     return_fields=True)
    b = oracles.fourier_symbol_probe(f, (2, 1, 1), amplitude=5e-7,
                                     return_fields=True)
    drift = np.max(np.abs(a["delta"] - b["delta"])) / np.max(np.abs(a["delta"]))
    assert drift < 1e-2


def test_probe_kernel_direction_responds_weakly():
    c = make_chart(32, 32, 32, periodic_z=True)
    f = periodic_probe_metric(c)
    mode = (4, 2, 2)
    extents = np.array([c.lx, c.ly, c.z_max - c.z_min])
    xi = 2 * np.pi * np.array(mode) / extents
    a = np.array([1.0, -0.3, 0.7])
    kernel_v = np.outer(xi, a) + np.outer(a, xi)
    kernel_v /= np.max(np.abs(kernel_v))
    generic = oracles.fourier_symbol_probe(f, mode)
    quiet = oracles.fourier_symbol_probe(f, mode, direction=kernel_v)
    # the symbol annihilates this polarization, so only lower order terms
    # respond
    assert quiet["response"] / generic["response"] < 0.25
