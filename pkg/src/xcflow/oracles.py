"""Independent reference values for pinning the numerical modules.

Everything here is either closed form or a deliberately plain reimplementation
that shares no code with the production paths: space form metrics with known
constant curvature, the exact scale factor law for self-similar runs, a slow
fixed-step ODE integrator for that law, a dense eigenvalue solver written from
scratch, and a finite difference probe of the linearised principal part.
"""

from __future__ import annotations

import numpy as np

from .chart import ChartSpec, MetricField
from .errors import ConfigError, GhostStateError, QrConvergenceError


def _hyperbolic_halfspace(x, y, z):
    shape = np.broadcast_shapes(x.shape, y.shape, z.shape)
    out = np.zeros(shape + (3, 3))
    w = 1.0 / (z * z)
    for i in range(3):
        out[..., i, i] = w
    return out


def _sphere_stereographic(x, y, z):
    shape = np.broadcast_shapes(x.shape, y.shape, z.shape)
    out = np.zeros(shape + (3, 3))
    w = 4.0 / (1.0 + x * x + y * y + z * z) ** 2
    for i in range(3):
        out[..., i, i] = w
    return out


def _sphere_hopf(x, y, z):
    # Round three-sphere in toroidal coordinates; the two lateral
    # directions are the torus angles and the third is the latitude.
    shape = np.broadcast_shapes(x.shape, y.shape, z.shape)
    out = np.zeros(shape + (3, 3))
    out[..., 0, 0] = np.cos(z) ** 2 + 0.0 * x
    out[..., 1, 1] = np.sin(z) ** 2 + 0.0 * y
    out[..., 2, 2] = 1.0
    return out


def _check_hyperbolic(chart: ChartSpec):
    lo = chart.z_min - 2 * chart.hz
    if lo <= 0.0:
        raise ConfigError("hyperbolic half space needs z - 2h > 0 on the chart")


def _check_hopf(chart: ChartSpec):
    lo = chart.z_min - 2 * chart.hz
    hi = chart.z_max + 2 * chart.hz
    if lo <= 0.0 or hi >= np.pi / 2.0:
        raise ConfigError("toroidal sphere chart must keep z inside (0, pi/2)")


SPACEFORMS = {
    "hyperbolic-halfspace": {
        "fn": _hyperbolic_halfspace,
        "curvature": -1.0,
        "umbilic_lambda": 1.0,
        "check": _check_hyperbolic,
        "laterally_periodic": True,
    },
    "sphere-stereographic": {
        "fn": _sphere_stereographic,
        "curvature": 1.0,
        "umbilic_lambda": None,
        "check": None,
        "laterally_periodic": False,
    },
    "sphere-hopf": {
        "fn": _sphere_hopf,
        "curvature": 1.0,
        "umbilic_lambda": None,
        "check": _check_hopf,
        "laterally_periodic": True,
    },
}


def spaceform_metric(name: str, chart: ChartSpec, t: float = 0.0) -> MetricField:
    """Sample a constant-curvature preset on a chart, analytic ghosts included.

    For ``t != 0`` the exact self-similar solution at that time is returned,
    scaled with the flow sign natural to the sign of the curvature.  Requesting
    a positively curved preset at or past its collapse time is an error.
    """
    try:
        entry = SPACEFORMS[name]
    except KeyError:
        raise ConfigError(f"unknown space form preset {name!r}") from None
    if entry["check"] is not None:
        entry["check"](chart)
    field = MetricField.from_callable(chart, entry["fn"])
    if t != 0.0:
        sign = 1 if entry["curvature"] < 0.0 else -1
        field.g *= float(spaceform_phi(entry["curvature"], sign, t))
    return field


def spaceform_sign(name: str) -> int:
    """Flow sign under which the preset moves by pure rescaling."""
    return 1 if SPACEFORMS[name]["curvature"] < 0.0 else -1


def spaceform_curvature(name: str) -> float:
    return SPACEFORMS[name]["curvature"]


def spaceform_phi(k: float, sign: int, t) -> np.ndarray:
    """Exact scale factor for a self-similar constant-curvature solution.

    A metric ``phi(t) g0`` with ``g0`` of curvature ``k`` solves the flow iff
    ``phi phi' = 2 sign k^2``, giving ``phi = sqrt(1 + 4 sign k^2 t)``.
    """
    val = 1.0 + 4.0 * sign * k * k * np.asarray(t, dtype=np.float64)
    if np.any(val <= 0.0):
        raise ConfigError("scale factor hit zero inside the requested window")
    return np.sqrt(val)


def umbilic_lambda_of_t(lambda0: float, k: float, sign: int, t: float) -> float:
    """Face curvature factor along a self-similar solution.

    Under ``g -> phi g`` the shape operator scales by ``phi^(-1/2)``.
    """
    return lambda0 * float(spaceform_phi(k, sign, t)) ** -0.5


def scaling_ode_oracle(k: float, sign: int, t_end: float, dt: float = 1e-6) -> float:
    """Fixed-step RK4 integration of the scale factor law, fully independent
    of the closed form above."""
    def rhs(phi):
        return 2.0 * sign * k * k / phi

    n = int(round(t_end / dt))
    leftover = t_end - n * dt
    phi = 1.0
    for i in range(n + 1):
        h = dt if i < n else leftover
        if h == 0.0:
            continue
        k1 = rhs(phi)
        k2 = rhs(phi + 0.5 * h * k1)
        k3 = rhs(phi + 0.5 * h * k2)
        k4 = rhs(phi + h * k3)
        phi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return phi


def gauge_stretch_factors(t):
    """Closed-form factors of the flat-background gauge run on hyperbolic data.

    With the background connection set to flat, the hyperbolic half space
    evolves inside the diagonal family ``z^-2 diag(a, a, b)``; the gauge
    field is then ``(0, 0, z/b)`` and the coupled laws ``db/dt = 2/b``,
    ``da/dt = 2a (1/b^2 - 1/b)`` integrate to ``b = sqrt(1+4t)``,
    ``a = b e^(1-b)``.  Returns ``(a, b, m)`` where ``m = e^((b-1)/2)`` is
    the normal stretch of the accumulated gauge motion: pulling the family
    back along ``(x, y, z) -> (x, y, z/m)`` recovers the isotropic scaling
    solution ``sqrt(1+4t) z^-2 delta``.
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(1.0 + 4.0 * t <= 0.0):
        raise ConfigError("stretch factors hit zero inside the requested window")
    b = np.sqrt(1.0 + 4.0 * t)
    a = b * np.exp(1.0 - b)
    m = np.exp(0.5 * (b - 1.0))
    return a, b, m


def gauge_stretched_hyperbolic(chart: ChartSpec, t: float = 0.0) -> MetricField:
    """Exact flat-background gauge-flow solution on the half-space slab."""
    _check_hyperbolic(chart)
    a, b, _ = gauge_stretch_factors(t)

    def fn(x, y, z):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
        out = np.zeros(shape + (3, 3))
        w = 1.0 / (z * z)
        out[..., 0, 0] = a * w
        out[..., 1, 1] = a * w
        out[..., 2, 2] = b * w
        return out

    return MetricField.from_callable(chart, fn)


def _wilkinson_shift(h, m):
    """Shift from the trailing 2x2 of the active block, complex safe."""
    a = h[m - 1, m - 1]
    b = h[m - 1, m]
    c = h[m, m - 1]
    d = h[m, m]
    tr = a + d
    disc = np.sqrt((a - d) ** 2 + 4.0 * b * c + 0j)
    r1 = 0.5 * (tr + disc)
    r2 = 0.5 * (tr - disc)
    return r1 if abs(r1 - d) < abs(r2 - d) else r2


def dense_eig_oracle(mat, max_sweeps: int = 600) -> np.ndarray:
    """Eigenvalues of a dense matrix by Hessenberg reduction plus shifted QR.

    Written directly from the textbook algorithm: Householder reduction to
    upper Hessenberg, then Wilkinson-shifted QR sweeps with Givens rotations
    and deflation on negligible subdiagonals.  Complex arithmetic throughout
    so real matrices with conjugate pairs converge with single shifts.
    Returns eigenvalues sorted by real part then imaginary part.
    """
    h = np.array(mat, dtype=np.complex128)
    n = h.shape[0]
    if h.shape != (n, n):
        raise ConfigError("dense_eig_oracle needs a square matrix")

    # Householder reduction to upper Hessenberg form.
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        alpha = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x.copy()
        v[0] += alpha * nx
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v /= nv
        h[k + 1:, k:] -= 2.0 * np.outer(v, v.conj() @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v.conj())

    eps = 2.3e-16
    eigs = np.empty(n, dtype=np.complex128)
    hi = n - 1
    sweeps = 0
    while hi >= 0:
        if hi == 0:
            eigs[0] = h[0, 0]
            break
        # deflate any negligible subdiagonal inside the active block
        deflated = False
        for i in range(hi, 0, -1):
            if abs(h[i, i - 1]) <= eps * (abs(h[i - 1, i - 1]) + abs(h[i, i])) + 1e-300:
                h[i, i - 1] = 0.0
                if i == hi:
                    eigs[hi] = h[hi, hi]
                    hi -= 1
                    deflated = True
                break
        if deflated:
            continue
        lo = 0
        for i in range(hi, 0, -1):
            if h[i, i - 1] == 0.0:
                lo = i
                break
        sweeps += 1
        if sweeps > max_sweeps:
            raise QrConvergenceError(f"QR failed to settle after {max_sweeps} sweeps")
        mu = _wilkinson_shift(h, hi)
        # one implicit-free explicit QR step on the active window
        a = h[lo:hi + 1, lo:hi + 1] - mu * np.eye(hi + 1 - lo)
        rots = []
        for i in range(a.shape[0] - 1):
            f, g = a[i, i], a[i + 1, i]
            af, ag = abs(f), abs(g)
            r = np.hypot(af, ag)
            if r == 0.0:
                cth, sth = 1.0, 0.0 + 0j
            elif af == 0.0:
                cth, sth = 0.0, np.conj(g) / ag
            else:
                cth = af / r
                sth = (f / af) * np.conj(g) / r
            rows = a[[i, i + 1], i:].copy()
            a[i, i:] = cth * rows[0] + sth * rows[1]
            a[i + 1, i:] = -np.conj(sth) * rows[0] + cth * rows[1]
            rots.append((cth, sth))
        for i, (cth, sth) in enumerate(rots):
            cols = a[:i + 2, [i, i + 1]].copy()
            a[:i + 2, i] = cth * cols[:, 0] + np.conj(sth) * cols[:, 1]
            a[:i + 2, i + 1] = -sth * cols[:, 0] + cth * cols[:, 1]
        h[lo:hi + 1, lo:hi + 1] = a + mu * np.eye(hi + 1 - lo)

    order = np.lexsort((eigs.imag, eigs.real))
    return eigs[order]


# Generic symmetric probe direction for the plane-wave linearization check.
PROBE_DIRECTION = np.array([
    [0.9, 0.2, -0.4],
    [0.2, -0.7, 0.5],
    [-0.4, 0.5, 0.3],
])


def fourier_symbol_probe(field: MetricField, mode, amplitude: float = 1e-6,
                         direction=None, return_fields: bool = False) -> dict:
    """Cross-check the principal symbol against the nonlinear operator.

    Perturbs the metric by a plane wave ``eps * V cos(xi . x)`` on a fully
    periodic chart, measures the centered response of the cross tensor, and
    compares it against the symbol prediction.  The quadratic covector
    dependence of the symbol is recovered by polarization and each product
    ``xi_a xi_b`` is replaced by the exact dispersion factor of the matching
    difference stencil, so the remaining deviation comes from lower order
    terms and shrinks like 1/k.
    """
    from .symbol import _apply_dx

    chart = field.chart
    if not chart.periodic_z:
        raise ConfigError("symbol probe needs a fully periodic chart")
    if not field.ghosts_filled:
        raise GhostStateError("symbol probe needs filled ghosts")
    if amplitude <= 0.0:
        raise ConfigError("probe amplitude must be positive")
    mode = np.asarray(mode, dtype=np.int64)
    if mode.shape != (3,) or not mode.any():
        raise ConfigError("probe wavevector must be a nonzero integer triple")
    counts = np.array(chart.shape_phys)
    if np.any(np.abs(mode) > counts // 8):
        raise ConfigError("probe wavevector beyond a quarter of Nyquist")

    if direction is None:
        direction = PROBE_DIRECTION
    v_lo = 0.5 * (np.asarray(direction, dtype=np.float64)
                  + np.asarray(direction, dtype=np.float64).T)

    from .chart import sym_pack
    from .curvature import compute_bundle

    extents = np.array([chart.lx, chart.ly, chart.z_max - chart.z_min])
    xi = 2.0 * np.pi * mode / extents
    xg, yg, zg = chart.mesh(ghosts=True)
    phase = np.cos(xi[0] * xg + xi[1] * yg + (xi[2] * (zg - chart.z_min)))
    bump = amplitude * phase[..., None] * sym_pack(v_lo)

    base = compute_bundle(field)
    e_hi = base.einstein_hi
    del base

    plus = compute_bundle(MetricField(chart, field.g + bump, ghosts_filled=True))
    c_plus = plus.cross
    del plus
    minus = compute_bundle(MetricField(chart, field.g - bump, ghosts_filled=True))
    delta = (c_plus - minus.cross) / (2.0 * amplitude)
    del minus

    # dispersion factors: compact stencil on the diagonal, composed centered
    # differences off it
    h = np.array(chart.spacings)
    s1 = np.sin(xi * h) / h
    d_diag = (2.0 * np.sin(0.5 * xi * h) / h) ** 2

    def polar(zeta):
        z = np.broadcast_to(np.asarray(zeta, dtype=np.float64), e_hi.shape[:-2] + (3,))
        return _apply_dx(e_hi, z, v_lo)

    axes = [polar(np.eye(3)[a]) for a in range(3)]
    pred = sum(d_diag[a] * axes[a] for a in range(3))
    for a in range(3):
        for b in range(a + 1, 3):
            mixed = polar(np.eye(3)[a] + np.eye(3)[b]) - axes[a] - axes[b]
            pred = pred + (s1[a] * s1[b]) * mixed
    pred = -0.5 * pred * phase[chart.phys][..., None, None]

    pred_scale = float(np.max(np.abs(pred)))
    response = float(np.max(np.abs(delta)))
    deviation = float(np.max(np.abs(delta - pred))) / max(pred_scale, 1e-300)
    out = {
        "deviation": deviation,
        "response": response,
        "pred_scale": pred_scale,
        "mode": tuple(int(m) for m in mode),
        "amplitude": float(amplitude),
    }
    if return_fields:
        out["delta"] = delta
        out["pred"] = pred
    return out
