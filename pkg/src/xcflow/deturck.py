"""Gauge vector field against a background connection and the modified flow.

The evolution actually stepped is not the bare cross flow but its gauge-fixed
version: the right hand side carries an extra Lie derivative along

    W^k = g^{pq} (G^k_pq - Gt^k_pq),

where ``Gt`` is the connection of a fixed background.  The background is
either the flat chart connection or the connection of the filled initial
metric; in the second case a metric evolving by pure rescaling keeps W = 0
to rounding, because the connection is scale invariant.

W is needed one node beyond the physical region so that its first
derivatives exist everywhere the right hand side is evaluated; all arrays
here are full-shape with a one-node valid margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fd
from .chart import ChartSpec, MetricField, sym_unpack
from .curvature import christoffel, compute_bundle, inv3
from .errors import ConfigError, GhostStateError

BACKGROUND_KINDS = ("flat", "initial-metric")


@dataclass
class BackgroundConnection:
    """Frozen connection coefficients ``gamma[..., k, p, q]`` on the grid.

    Valid one node into the ghost frame; the outermost layer is zero and
    never read.
    """

    kind: str
    chart: ChartSpec
    gamma: np.ndarray

    def is_flat(self) -> bool:
        return self.kind == "flat"


@dataclass
class DeTurckField:
    """Gauge vector field with both index positions, full-shape arrays."""

    chart: ChartSpec
    w_hi: np.ndarray
    w_lo: np.ndarray


def _interior(chart: ChartSpec):
    # one-node margin inside the total frame
    return (slice(1, chart.nxt - 1), slice(1, chart.nyt - 1),
            slice(1, chart.nzt - 1))


def christoffel_extended(field: MetricField):
    """Connection of a filled metric on the one-node-margin region.

    Returns full-shape ``gamma[..., k, p, q]`` with zeros on the outermost
    layer.
    """
    if not field.ghosts_filled:
        raise GhostStateError("connection needs filled ghosts")
    chart = field.chart
    inner = _interior(chart)
    sp = chart.spacings
    dg = np.empty(field.g[inner].shape[:3] + (3, 6), dtype=np.float64)
    for a in range(3):
        dg[..., a, :] = fd.d1(field.g, a, sp[a])[inner]
    g_lo = sym_unpack(field.g[inner])
    ginv, _ = inv3(g_lo)
    _, gamma = christoffel(g_lo, ginv, dg)
    out = np.zeros(chart.shape_total + (3, 3, 3), dtype=np.float64)
    out[inner] = gamma
    return out


def make_background(kind: str, field: MetricField | None = None) -> BackgroundConnection:
    """Build the frozen background connection.

    ``flat`` ignores the field.  ``initial-metric`` freezes the connection
    of the passed filled metric; the caller decides how its ghosts were
    filled, and the gauge field later vanishes exactly whenever the evolved
    metric is a constant multiple of it with identically filled ghosts.
    """
    if kind not in BACKGROUND_KINDS:
        raise ConfigError(f"unknown background kind {kind!r}")
    if kind == "flat":
        if field is None:
            raise ConfigError("background needs a field to supply the chart")
        gamma = np.zeros(field.chart.shape_total + (3, 3, 3), dtype=np.float64)
        return BackgroundConnection(kind="flat", chart=field.chart, gamma=gamma)
    if field is None:
        raise ConfigError("initial-metric background needs the initial field")
    return BackgroundConnection(kind="initial-metric", chart=field.chart,
                                gamma=christoffel_extended(field))


def compute_w(field: MetricField, bg: BackgroundConnection) -> DeTurckField:
    """Gauge vector field on the one-node-margin region."""
    chart = field.chart
    if bg.chart != chart:
        raise ConfigError("background connection built on a different chart")
    inner = _interior(chart)
    gamma = christoffel_extended(field)
    diff = gamma[inner] - bg.gamma[inner]
    g_lo = sym_unpack(field.g[inner])
    ginv, _ = inv3(g_lo)
    w = np.einsum("...pq,...kpq->...k", ginv, diff)
    w_hi = np.zeros(chart.shape_total + (3,), dtype=np.float64)
    w_lo = np.zeros_like(w_hi)
    w_hi[inner] = w
    w_lo[inner] = np.einsum("...ij,...j->...i", g_lo, w)
    return DeTurckField(chart=chart, w_hi=w_hi, w_lo=w_lo)


def lie_derivative(field: MetricField, w: DeTurckField) -> np.ndarray:
    """Connection-free Lie derivative of the metric along W, physical region.

    (L_W g)_ij = W^k D_k g_ij + g_kj D_i W^k + g_ik D_j W^k
    """
    chart = field.chart
    sp = chart.spacings
    phys = chart.phys
    g_lo = sym_unpack(field.g[phys])
    w_hi = w.w_hi[phys]
    out = np.zeros(chart.shape_phys + (3, 3), dtype=np.float64)
    for a in range(3):
        dg = sym_unpack(fd.d1(field.g, a, sp[a])[phys])
        out += w_hi[..., a, None, None] * dg
        dw = fd.d1(w.w_hi, a, sp[a])[phys]
        out[..., a, :] += np.einsum("...kj,...k->...j", g_lo, dw)
        out[..., :, a] += np.einsum("...ik,...k->...i", g_lo, dw)
    return out


def lie_derivative_covariant(field: MetricField, w: DeTurckField) -> np.ndarray:
    """Equivalent covariant expression, kept as a cross-check.

    (L_W g)_ij = D_i W_j + D_j W_i - 2 G^k_ij W_k
    """
    chart = field.chart
    sp = chart.spacings
    phys = chart.phys
    b = compute_bundle(field)
    out = np.zeros(chart.shape_phys + (3, 3), dtype=np.float64)
    for a in range(3):
        dwl = fd.d1(w.w_lo, a, sp[a])[phys]
        out[..., a, :] += dwl
        out[..., :, a] += dwl
    out -= 2.0 * np.einsum("...kij,...k->...ij", b.gamma, w.w_lo[phys])
    return out


def modified_rhs(field: MetricField, sign: int, bg: BackgroundConnection,
                 backend: str = "auto") -> np.ndarray:
    """Packed right hand side of the gauge-fixed flow on the physical region.

    d/dt g = sign * 2 * cross(g) + L_W g
    """
    if sign not in (1, -1):
        raise ConfigError("flow sign must be +1 or -1")
    if backend == "auto":
        backend = _default_backend()
    if backend == "numba":
        from ._kernels import rhs_numba
        return rhs_numba(field, sign, bg)
    if backend != "numpy":
        raise ConfigError(f"unknown backend {backend!r}")
    b = compute_bundle(field)
    w = compute_w(field, bg)
    rhs = float(sign) * 2.0 * b.cross + lie_derivative(field, w)
    from .chart import sym_pack
    return sym_pack(rhs)


def _default_backend() -> str:
    import os

    if os.environ.get("XCF_NUMBA", "1") == "0":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"
