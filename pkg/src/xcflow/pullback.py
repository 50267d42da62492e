"""Undoing the gauge motion of a gauge-fixed run.

The stepped evolution carries a transport term along the gauge field W, so
its solution is the sought flow seen through a moving coordinate family.
This module integrates that family one step at a time, inverts it per node,
and transports the metric (and the flow tensor) back through the inverse.
The headline diagnostic compares the time derivative of the transported
metric against the bare flow law; when the gauge has been undone correctly
the transport term is gone and only discretization error remains.

The map itself is trilinear: the advance samples the gauge field that way
and the inversion solves on that interpolant, matching the second order
accuracy of the solver stencils.  The fields carried through the transport
are looked up with a cubic form instead; see _sample4 for why.  All
sampled fields are laterally periodic, so lateral coordinates fold; on the
bounded axis lookups stay defined over the whole band the drift guard
admits.
"""

from dataclasses import dataclass

import numpy as np

from .chart import (MAGIC_PULLBACK, ChartSpec, MetricField, fill_free,
                    sym_pack, sym_unpack, wrap_lateral, write_snapshot)
from .curvature import compute_bundle
from .deturck import compute_w
from .errors import (ConfigError, GaugeDriftError, NewtonDivergedError,
                     SpdViolationError)

__all__ = [
    "DiffeoField", "identity_diffeo", "advance_diffeo", "preimage_field",
    "invert_diffeo", "pullback_metric", "PullbackCapture", "GaugeTracker",
    "xcf_residual", "write_pulled_back",
]

# Fractional offsets this close to a node collapse onto it, so sampling a
# field at its own node coordinates reproduces the stored value bitwise.
_SNAP = 1e-12


@dataclass
class DiffeoField:
    """Per-node positions of the accumulated coordinate motion at time t.

    ``phi`` covers the ghost-extended frame.  Only the inner margin (one
    node short of the frame on every side) is ever advanced; the outermost
    layer stays at its initial identity value and is never read back.
    """

    chart: ChartSpec
    phi: np.ndarray
    t: float


def _node_positions(chart: ChartSpec) -> np.ndarray:
    x, y, z = chart.mesh(ghosts=True)
    out = np.empty(chart.shape_total + (3,), dtype=np.float64)
    out[..., 0], out[..., 1], out[..., 2] = np.broadcast_arrays(x, y, z)
    return out


def identity_diffeo(chart: ChartSpec, t: float = 0.0) -> DiffeoField:
    return DiffeoField(chart, _node_positions(chart), float(t))


def _sample(values: np.ndarray, chart: ChartSpec, pts: np.ndarray,
            z_cells, jacobian: bool = False):
    """Trilinear sample of a node field at chart-coordinate points.

    ``values`` spans the ghost-extended frame with any number of trailing
    components and laterally periodic content.  ``z_cells`` bounds the
    usable lookup cells on the bounded axis; points past the last usable
    cell extrapolate its linear form.  With ``jacobian`` the derivative of
    the interpolant with respect to the point is returned as well.
    """
    hx, hy, hz = chart.spacings
    gw = chart.ghost_width
    u = np.mod(pts[..., 0], chart.lx) / hx + gw
    v = np.mod(pts[..., 1], chart.ly) / hy + gw
    if chart.periodic_z:
        lz = chart.z_max - chart.z_min
        w = np.mod(pts[..., 2] - chart.z_min, lz) / hz + gw
    else:
        # Band limit: a ghost-layer node one spacing outside the face may
        # itself carry the full two spacings of drift the advance guard
        # admits, so the hard failure sits at three.
        zc = pts[..., 2]
        if np.any(zc < chart.z_min - 3.0 * hz) or np.any(zc > chart.z_max + 3.0 * hz):
            raise GaugeDriftError("gauge drift out of chart")
        w = (zc - chart.z_min) / hz + gw

    cu = np.floor(u).astype(np.intp)
    cv = np.floor(v).astype(np.intp)
    cw = np.floor(w).astype(np.intp)
    np.clip(cu, 0, chart.nxt - 2, out=cu)
    np.clip(cv, 0, chart.nyt - 2, out=cv)
    np.clip(cw, z_cells[0], z_cells[1], out=cw)
    fu = u - cu
    fv = v - cv
    fw = w - cw
    for f in (fu, fv, fw):
        f[np.abs(f) < _SNAP] = 0.0
        f[np.abs(f - 1.0) < _SNAP] = 1.0

    m = values.shape[3:]
    out = np.zeros(pts.shape[:-1] + m, dtype=np.float64)
    jac = np.zeros(pts.shape[:-1] + m + (3,), dtype=np.float64) if jacobian else None
    for du in (0, 1):
        pu, su = (fu, 1.0 / hx) if du else (1.0 - fu, -1.0 / hx)
        for dv in (0, 1):
            pv, sv = (fv, 1.0 / hy) if dv else (1.0 - fv, -1.0 / hy)
            for dw in (0, 1):
                pw, sw = (fw, 1.0 / hz) if dw else (1.0 - fw, -1.0 / hz)
                corner = values[cu + du, cv + dv, cw + dw]
                out += (pu * pv * pw)[..., None] * corner
                if jacobian:
                    jac[..., 0] += (su * pv * pw)[..., None] * corner
                    jac[..., 1] += (pu * sv * pw)[..., None] * corner
                    jac[..., 2] += (pu * pv * sw)[..., None] * corner
    return (out, jac) if jacobian else out


# Lookup-cell bounds on the bounded axis.  Gauge samples and map deviations
# are only valid on the inner margin, so their outermost cell is excluded;
# metric and curvature arrays carry full ghost content.
def _margin_cells(chart: ChartSpec):
    return (1, chart.nzt - 3)


def _full_cells(chart: ChartSpec):
    return (0, chart.nzt - 2)


def _extend_margin_z(arr: np.ndarray, chart: ChartSpec) -> np.ndarray:
    """Fill the stale outermost z-layers by quadratic extension of the margin.

    Margin-valid fields end one layer outside each face.  Lookups clamped
    to the last live cell would continue its linear form, which bends away
    from the field across the cell boundary and leaves a kink that face
    Jacobian rows later differentiate.  A quadratic through the last three
    live layers extends smoothly instead.
    """
    if chart.periodic_z:
        return arr
    out = arr.copy()
    out[:, :, 0] = 3.0 * arr[:, :, 1] - 3.0 * arr[:, :, 2] + arr[:, :, 3]
    out[:, :, -1] = 3.0 * arr[:, :, -2] - 3.0 * arr[:, :, -3] + arr[:, :, -4]
    return out


def _axis_weights(f: np.ndarray):
    """Cubic Lagrange weights for node offsets (-1, 0, 1, 2) at fraction f."""
    fm = f - 1.0
    fp = f + 1.0
    f2 = f - 2.0
    return (
        -f * fm * f2 / 6.0,
        fp * fm * f2 / 2.0,
        -fp * f * f2 / 2.0,
        fp * f * fm / 6.0,
    )


def _sample4(values: np.ndarray, chart: ChartSpec, pts: np.ndarray) -> np.ndarray:
    """Cubic Lagrange sample of a ghost-extended node field.

    Used for the fields carried through the transport, where the residual
    diagnostic time-differences two lookups on slightly shifted preimage
    grids.  A linear lookup leaves an error whose drift derivative decays
    only like h; the cubic form pushes it below the stencil error of the
    fields themselves.  At a node every weight collapses to 0 or 1, so
    node sampling stays bitwise.
    """
    hx, hy, hz = chart.spacings
    gw = chart.ghost_width
    u = np.mod(pts[..., 0], chart.lx) / hx + gw
    v = np.mod(pts[..., 1], chart.ly) / hy + gw
    if chart.periodic_z:
        lz = chart.z_max - chart.z_min
        w = np.mod(pts[..., 2] - chart.z_min, lz) / hz + gw
    else:
        w = (pts[..., 2] - chart.z_min) / hz + gw

    cu = np.clip(np.floor(u).astype(np.intp), 1, chart.nxt - 3)
    cv = np.clip(np.floor(v).astype(np.intp), 1, chart.nyt - 3)
    cw = np.clip(np.floor(w).astype(np.intp), 1, chart.nzt - 3)
    fu = u - cu
    fv = v - cv
    fw = w - cw
    for f in (fu, fv, fw):
        f[np.abs(f) < _SNAP] = 0.0
        f[np.abs(f - 1.0) < _SNAP] = 1.0
    wu = _axis_weights(fu)
    wv = _axis_weights(fv)
    ww = _axis_weights(fw)

    out = np.zeros(pts.shape[:-1] + values.shape[3:], dtype=np.float64)
    for du in range(4):
        for dv in range(4):
            puv = wu[du] * wv[dv]
            for dw in range(4):
                p = puv * ww[dw]
                if not np.any(p):
                    continue
                out += p[..., None] * values[cu + du - 1, cv + dv - 1, cw + dw - 1]
    return out


def advance_diffeo(d: DiffeoField, t0: float, w0: np.ndarray,
                   t1: float, w1: np.ndarray) -> DiffeoField:
    """One RK4 step of the node motion across the stored field pair.

    ``w0`` and ``w1`` are the gauge samples bracketing the step just taken
    by the flow integrator; stage values blend them linearly in time, which
    is all the stored history can support and matches the integrator's own
    one-step locality.
    """
    chart = d.chart
    dt = t1 - t0
    if dt < 0.0:
        raise ConfigError("diffeomorphism update must move forward in time")
    if abs(d.t - t0) > 1e-12 * max(1.0, abs(t0)):
        raise ConfigError("gauge history does not start at the tracked time")
    if dt == 0.0:
        return DiffeoField(chart, d.phi.copy(), float(t1))

    w0 = np.ascontiguousarray(w0, dtype=np.float64).copy()
    w1 = np.ascontiguousarray(w1, dtype=np.float64).copy()
    wrap_lateral(w0, chart)
    wrap_lateral(w1, chart)
    w0 = _extend_margin_z(w0, chart)
    w1 = _extend_margin_z(w1, chart)
    cells = _full_cells(chart)

    def field(s: float, pts: np.ndarray) -> np.ndarray:
        return _sample((1.0 - s) * w0 + s * w1, chart, pts, cells)

    mrg = (slice(1, -1),) * 3
    p0 = d.phi[mrg]
    k1 = field(0.0, p0)
    k2 = field(0.5, p0 + (0.5 * dt) * k1)
    k3 = field(0.5, p0 + (0.5 * dt) * k2)
    k4 = field(1.0, p0 + dt * k3)
    phi = d.phi.copy()
    phi[mrg] = p0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    disp = np.abs(phi[mrg] - _node_positions(chart)[mrg])
    for axis, h in enumerate(chart.spacings):
        if np.max(disp[..., axis]) > 2.0 * h:
            raise GaugeDriftError("gauge drift out of chart")
    return DiffeoField(chart, phi, float(t1))


def _deviation(d: DiffeoField) -> np.ndarray:
    # The map itself is only equivariant under the lateral period; its
    # deviation from identity is genuinely periodic and safe to fold.
    dev = d.phi - _node_positions(d.chart)
    wrap_lateral(dev, d.chart)
    return dev


def _newton_preimages(d: DiffeoField, targets: np.ndarray, shape,
                      max_iter: int) -> np.ndarray:
    """Damped Newton on the trilinear interpolant of the map.

    The drift guard keeps the map within two spacings of identity, so
    starting each solve at the target node itself is already inside the
    contraction basin.
    """
    chart = d.chart
    dev = _deviation(d)
    cells = _margin_cells(chart)
    tol = 1e-12 * max(1.0, chart.lx, chart.ly, chart.z_max - chart.z_min)

    xi = targets.copy()
    err = np.empty(xi.shape[0], dtype=np.float64)
    for _ in range(max_iter):
        s, ds = _sample(dev, chart, xi, cells, jacobian=True)
        f = xi + s - targets
        np.max(np.abs(f), axis=-1, out=err)
        if err.max() <= tol:
            return xi.reshape(shape + (3,))
        jac = ds
        jac[..., 0, 0] += 1.0
        jac[..., 1, 1] += 1.0
        jac[..., 2, 2] += 1.0
        dets = np.linalg.det(jac)
        if np.any(dets <= 0.0):
            node = _node_of(int(np.argmin(dets)), shape)
            raise NewtonDivergedError(
                f"interpolated map loses orientation near node {node}")
        step = np.linalg.solve(jac, -f[..., None])[..., 0]
        alpha = np.ones(xi.shape[0], dtype=np.float64)
        for _ in range(4):
            trial = xi + alpha[:, None] * step
            ft = trial + _sample(dev, chart, trial, cells) - targets
            worse = np.max(np.abs(ft), axis=-1) > err
            if not worse.any():
                break
            alpha[worse] *= 0.5
        xi += alpha[:, None] * step
    node = _node_of(int(np.argmax(err)), shape)
    raise NewtonDivergedError(
        f"no convergence in {max_iter} iterations at node {node}, "
        f"residual {err.max():.3e}")


def preimage_field(d: DiffeoField, max_iter: int = 50) -> np.ndarray:
    """Preimage of every physical node under the map, shape (nx, ny, nz, 3)."""
    chart = d.chart
    targets = _node_positions(chart)[chart.phys].reshape(-1, 3)
    return _newton_preimages(d, targets, chart.shape_phys, max_iter)


def _margin_preimage(d: DiffeoField, max_iter: int = 50) -> np.ndarray:
    """Preimages over the physical region plus one ghost layer per side.

    The extra layer lets the transform Jacobian stay centered on the face
    planes instead of falling back to one-sided forms there.
    """
    chart = d.chart
    mrg = (slice(1, -1),) * 3
    targets = _node_positions(chart)[mrg].reshape(-1, 3)
    shape = tuple(n - 2 for n in chart.shape_total)
    return _newton_preimages(d, targets, shape, max_iter)


def _node_of(flat: int, shape):
    return tuple(int(k) for k in np.unravel_index(flat, shape))


def _preimage_jacobian(chart: ChartSpec, xi: np.ndarray) -> np.ndarray:
    """d(xi)/dy on physical nodes by differencing the preimage field.

    Worked through the deviation xi - y, which is laterally periodic, so a
    wrap pad gives seam-safe central differences; the bounded axis falls
    back to one-sided second order forms on the faces.  Entry [k, i] holds
    the derivative of component k along direction i.
    """
    hx, hy, hz = chart.spacings
    dev = xi - _node_positions(chart)[chart.phys]
    if chart.periodic_z:
        p = np.pad(dev, ((1, 1), (1, 1), (1, 1), (0, 0)), mode="wrap")
    else:
        p = np.pad(dev, ((1, 1), (1, 1), (0, 0), (0, 0)), mode="wrap")
    jac = np.zeros(chart.shape_phys + (3, 3), dtype=np.float64)
    jac[..., 0, 0] = jac[..., 1, 1] = jac[..., 2, 2] = 1.0
    jac[..., 0] += (p[2:, 1:-1, _mid(chart)] - p[:-2, 1:-1, _mid(chart)]) / (2.0 * hx)
    jac[..., 1] += (p[1:-1, 2:, _mid(chart)] - p[1:-1, :-2, _mid(chart)]) / (2.0 * hy)
    if chart.periodic_z:
        jac[..., 2] += (p[1:-1, 1:-1, 2:] - p[1:-1, 1:-1, :-2]) / (2.0 * hz)
    else:
        dz = np.empty_like(dev)
        dz[:, :, 1:-1] = (dev[:, :, 2:] - dev[:, :, :-2]) / (2.0 * hz)
        dz[:, :, 0] = (-3.0 * dev[:, :, 0] + 4.0 * dev[:, :, 1] - dev[:, :, 2]) / (2.0 * hz)
        dz[:, :, -1] = (3.0 * dev[:, :, -1] - 4.0 * dev[:, :, -2] + dev[:, :, -3]) / (2.0 * hz)
        jac[..., 2] += dz
    return jac


def _mid(chart: ChartSpec):
    return slice(1, -1) if chart.periodic_z else slice(None)


def _margin_jacobian(chart: ChartSpec, xim: np.ndarray) -> np.ndarray:
    """dxi/dy on physical nodes from a margin-wide preimage solve.

    Every physical node, face planes included, has solved neighbors on
    both sides, so the stencil is centered throughout.  One-sided face
    rows differentiate the map's own discretization error at full
    strength; the centered form cancels its even part.
    """
    hx, hy, hz = chart.spacings
    mrg = (slice(1, -1),) * 3
    dev = xim - _node_positions(chart)[mrg]
    jac = np.zeros(chart.shape_phys + (3, 3), dtype=np.float64)
    jac[..., 0, 0] = 1.0
    jac[..., 1, 1] = 1.0
    jac[..., 2, 2] = 1.0
    jac[..., 0] += (dev[2:, 1:-1, 1:-1] - dev[:-2, 1:-1, 1:-1]) / (2.0 * hx)
    jac[..., 1] += (dev[1:-1, 2:, 1:-1] - dev[1:-1, :-2, 1:-1]) / (2.0 * hy)
    jac[..., 2] += (dev[1:-1, 1:-1, 2:] - dev[1:-1, 1:-1, :-2]) / (2.0 * hz)
    return jac


def _transport(packed: np.ndarray, chart: ChartSpec, xi: np.ndarray,
               jac: np.ndarray) -> np.ndarray:
    """Pull a packed symmetric field through the preimage map and Jacobian."""
    vals = _sample4(packed, chart, xi)
    m = sym_unpack(vals)
    return sym_pack(np.einsum("...ki,...kl,...lj->...ij", jac, m, jac))


def invert_diffeo(d: DiffeoField) -> DiffeoField:
    """The inverse family as a map of its own, for transport the other way.

    Ghost-margin positions come from extrapolating the preimage deviation
    past the faces, matching how every other field extends there.
    """
    chart = d.chart
    xi = preimage_field(d)
    dev = np.zeros(chart.shape_total + (3,), dtype=np.float64)
    dev[chart.phys] = xi - _node_positions(chart)[chart.phys]
    fill_free(dev, chart)
    return DiffeoField(chart, _node_positions(chart) + dev, d.t)


def pullback_metric(g: MetricField, d: DiffeoField,
                    xi: np.ndarray | None = None) -> MetricField:
    """Transport the metric back through the inverse of the node map family.

    Two index transforms by the preimage Jacobian around a lookup of the
    metric at the preimage.  Ghost layers of the result are left
    unassigned.  Positivity of the result is asserted node by node.
    """
    chart = g.chart
    if chart != d.chart:
        raise ConfigError("metric and map live on different charts")
    if xi is None:
        xim = _margin_preimage(d)
        xi = xim[1:-1, 1:-1, 1:-1]
        jac = _margin_jacobian(chart, xim)
    else:
        jac = _preimage_jacobian(chart, xi)
    return _assemble_pullback(g, xi, jac)


def _assemble_pullback(g: MetricField, xi: np.ndarray,
                       jac: np.ndarray) -> MetricField:
    chart = g.chart
    arr = np.zeros(chart.shape_total + (6,), dtype=np.float64)
    arr[chart.phys] = _transport(g.g, chart, xi, jac)
    out = MetricField(chart, arr, ghosts_filled=False)
    m1, m2, m3 = out.leading_minors()
    if not ((m1 > 0.0).all() and (m2 > 0.0).all() and (m3 > 0.0).all()):
        raise SpdViolationError("transported metric lost positivity")
    return out


@dataclass
class PullbackCapture:
    """Transported state at one time: the metric and the flow tensor.

    ``cross`` holds the cross tensor of the running solution carried
    through the same map as the metric.  The tensor transforms naturally,
    so transporting the grid values evaluates the transported solution's
    own cross tensor without differentiating interpolated data, which
    would shed its accuracy at lookup-cell seams.
    """

    t: float
    gbar: MetricField
    cross: np.ndarray


def _cross_extended(state) -> np.ndarray:
    """Packed cross tensor of the state, extended over the whole frame.

    Face-plane curvature of evolved data is one order less accurate than
    interior curvature: at a pinned face the solution error drops to zero
    across a single cell and the second-derivative stencils there
    differentiate that kink.  The transported-cross field therefore
    rebuilds its face planes from interior planes before the ghost
    extension, keeping the whole array at interior accuracy.
    """
    chart = state.g.chart
    out = np.zeros(chart.shape_total + (6,), dtype=np.float64)
    out[chart.phys] = sym_pack(compute_bundle(state.g).cross)
    if not chart.periodic_z:
        gw = chart.ghost_width
        lo = gw
        hi = gw + chart.nz - 1
        out[:, :, lo] = (3.0 * out[:, :, lo + 1] - 3.0 * out[:, :, lo + 2]
                         + out[:, :, lo + 3])
        out[:, :, hi] = (3.0 * out[:, :, hi - 1] - 3.0 * out[:, :, hi - 2]
                         + out[:, :, hi - 3])
    fill_free(out, chart)
    return out


class GaugeTracker:
    """run() observer that integrates the coordinate motion as it happens.

    One map update per accepted flow step.  Only the bracketing pair of
    gauge samples is held at any time; a full stored history adds nothing,
    as each pair is consumed exactly once by the matching map step.
    """

    def __init__(self, state):
        self.diffeo = identity_diffeo(state.g.chart, t=state.t)
        self._t = state.t
        self._w = compute_w(state.g, state.bg).w_hi

    def __call__(self, state) -> None:
        if state.t == self._t:
            return
        w = compute_w(state.g, state.bg).w_hi
        self.diffeo = advance_diffeo(self.diffeo, self._t, self._w, state.t, w)
        self._t = state.t
        self._w = w

    def capture(self, state) -> PullbackCapture:
        """Snapshot the transported metric and cross tensor at this time."""
        if abs(state.t - self._t) > 1e-12 * max(1.0, abs(state.t)):
            raise ConfigError("tracker and state are at different times")
        chart = state.g.chart
        xim = _margin_preimage(self.diffeo)
        xi = xim[1:-1, 1:-1, 1:-1]
        jac = _margin_jacobian(chart, xim)
        return PullbackCapture(
            t=state.t,
            gbar=_assemble_pullback(state.g, xi, jac),
            cross=_transport(_cross_extended(state), chart, xi, jac),
        )


def xcf_residual(before: PullbackCapture, middle: PullbackCapture,
                 after: PullbackCapture, sign: int) -> float:
    """Largest relative defect of the bare flow law on transported captures.

    Centered time difference of the transported metric across the outer
    captures, against sign * 2 * cross at the middle one, normalized by
    the largest cross entry.
    """
    if not before.t < middle.t < after.t:
        raise ConfigError("captures must be time ordered")
    dt_g = (after.gbar.phys - before.gbar.phys) / (after.t - before.t)
    want = float(sign) * 2.0 * middle.cross
    denom = np.max(np.abs(middle.cross))
    if not denom > 0.0:
        raise ConfigError("cross tensor vanishes, residual is undefined")
    return float(np.max(np.abs(dt_g - want)) / denom)


def write_pulled_back(path, field: MetricField) -> None:
    """Snapshot a transported metric under the dedicated magic variant."""
    write_snapshot(path, field.chart, field.phys, magic=MAGIC_PULLBACK)
