"""Boundary handling on the two z faces: ghost fills and residuals.

Both faces use the same outward-agnostic convention: the unit normal is
built from the third row of the inverse metric with a positive x3
component, and the shape operator reads

    h_ab = -1/2 (g33_up)^(1/2) d3 g_ab,

with the same formula on both faces.  The umbilic condition h = lam(t) g
restricted to the face tangent directions is enforced through ghost values:

  (i)   g_3a is set to zero on the face and its ghosts extrapolate through
        that zero,
  (ii)  tangential components get a Robin ghost so the centered normal
        derivative lands exactly on -2 lam (g33_up)^(-1/2) g_ab,
  (iii) the g_33 ghost is solved from the vanishing of the third component
        of the gauge field at the face, which closes the system,
  (iv)  second ghosts extrapolate cubically through the first ones.

With g_3a pinned to zero along the whole face the lateral terms of the
gauge field drop out identically, so step (iii) reduces to a scalar linear
equation per face node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chart import (C11, C12, C13, C22, C23, C33, ChartSpec, MetricField,
                    sym_unpack, wrap_lateral, wrap_z)
from .curvature import inv3
from .errors import ConfigError, GhostStateError

FACES = ("z_min", "z_max")
BOUNDARY_MODES = ("dirichlet-g0", "dirichlet-exact", "umbilic")
_TANGENTIAL = (C11, C12, C22)
_OFFDIAG = (C13, C23)


@dataclass
class LambdaSpec:
    """Face curvature factor lam(t).

    Presets: a constant, the self-similar power law (1 + 4t)^(-1/4), or a
    sampled table interpolated linearly and clamped at its ends.
    """

    kind: str
    value: float = 1.0
    table_t: np.ndarray | None = None
    table_v: np.ndarray | None = None

    @classmethod
    def constant(cls, value: float) -> "LambdaSpec":
        return cls(kind="constant", value=float(value))

    @classmethod
    def power(cls) -> "LambdaSpec":
        return cls(kind="power")

    @classmethod
    def table(cls, path) -> "LambdaSpec":
        data = np.loadtxt(path, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
            raise ConfigError("lambda table needs two columns and >= 2 rows")
        t, v = data[:, 0], data[:, 1]
        if not np.all(np.diff(t) > 0.0):
            raise ConfigError("lambda table times must be strictly increasing")
        return cls(kind="table", table_t=t, table_v=v)

    @classmethod
    def parse(cls, text: str) -> "LambdaSpec":
        if text == "power":
            return cls.power()
        if text.startswith("constant:"):
            return cls.constant(float(text.split(":", 1)[1]))
        if text.startswith("table:"):
            return cls.table(text.split(":", 1)[1])
        raise ConfigError(f"cannot parse lambda preset {text!r}")

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "power":
            base = 1.0 + 4.0 * t
            if base <= 0.0:
                raise ConfigError("lambda power law undefined at this time")
            return float(base ** -0.25)
        if self.kind == "table":
            return float(np.interp(t, self.table_t, self.table_v))
        raise ConfigError(f"unknown lambda kind {self.kind!r}")


@dataclass
class BoundarySpec:
    mode: str
    lam: LambdaSpec | None = None
    g0_faces: dict | None = None
    exact: Callable | None = None
    faces: tuple = FACES

    def __post_init__(self):
        if self.mode not in BOUNDARY_MODES:
            raise ConfigError(f"unknown boundary mode {self.mode!r}")
        if self.mode == "umbilic" and self.lam is None:
            raise ConfigError("umbilic boundary needs a lambda preset")
        if self.mode == "dirichlet-exact" and self.exact is None:
            raise ConfigError("dirichlet-exact needs an analytic solution hook")
        for f in self.faces:
            if f not in FACES:
                raise ConfigError(f"unknown face {f!r}")


def make_boundary_spec(mode: str, g0: MetricField | None = None,
                       lam: LambdaSpec | None = None,
                       exact: Callable | None = None) -> BoundarySpec:
    """Convenience constructor capturing face values from the initial field."""
    g0_faces = None
    if mode == "dirichlet-g0":
        if g0 is None:
            raise ConfigError("dirichlet-g0 needs the initial field")
        lo, hi = _face_indices(g0.chart)
        g0_faces = {"z_min": g0.g[:, :, lo, :].copy(),
                    "z_max": g0.g[:, :, hi, :].copy()}
    return BoundarySpec(mode=mode, lam=lam, g0_faces=g0_faces, exact=exact)


def _face_indices(chart: ChartSpec):
    gw = chart.ghost_width
    return gw, gw + chart.nz - 1


def _face_plane(chart: ChartSpec, face: str) -> int:
    lo, hi = _face_indices(chart)
    return lo if face == "z_min" else hi


def unit_normal(field: MetricField, face: str) -> np.ndarray:
    """Unit normal with positive x3 component on the face, physical nodes."""
    if face not in FACES:
        raise ConfigError(f"unknown face {face!r}")
    chart = field.chart
    gw = chart.ghost_width
    k = _face_plane(chart, face)
    g = sym_unpack(field.g[gw:gw + chart.nx, gw:gw + chart.ny, k, :])
    ginv, _ = inv3(g)
    up = ginv[..., 2, 2]
    if np.any(up <= 0.0):
        raise ConfigError("face metric is not positive definite")
    return ginv[..., 2, :] / np.sqrt(up)[..., None]


def second_fundamental_form(field: MetricField, face: str) -> np.ndarray:
    """Tangential shape operator components on a face, physical nodes.

    The normal derivative is the one-sided second-order stencil, so this
    measures the boundary condition independently of the ghost values used
    to enforce it.
    """
    if face not in FACES:
        raise ConfigError(f"unknown face {face!r}")
    chart = field.chart
    gw = chart.ghost_width
    sx, sy = slice(gw, gw + chart.nx), slice(gw, gw + chart.ny)
    h = chart.hz
    k = _face_plane(chart, face)
    g = field.g
    if face == "z_min":
        dz = (-3.0 * g[sx, sy, k, :] + 4.0 * g[sx, sy, k + 1, :]
              - g[sx, sy, k + 2, :]) / (2.0 * h)
    else:
        dz = (3.0 * g[sx, sy, k, :] - 4.0 * g[sx, sy, k - 1, :]
              + g[sx, sy, k - 2, :]) / (2.0 * h)
    gf = sym_unpack(g[sx, sy, k, :])
    ginv, _ = inv3(gf)
    coef = -0.5 * np.sqrt(ginv[..., 2, 2])
    dzm = sym_unpack(dz)
    return coef[..., None, None] * dzm[..., :2, :2]


def w3_face_from_jet(face_g: np.ndarray, dz_tangential: np.ndarray,
                     dz_g33: np.ndarray) -> np.ndarray:
    """Third gauge-field component from a face jet, flat background.

    ``face_g`` must have vanishing 3a components; ``dz_tangential`` holds the
    normal derivative of the tangential block and ``dz_g33`` that of g_33.
    """
    g = np.asarray(face_g, dtype=np.float64)
    if np.max(np.abs(g[..., 2, :2])) != 0.0 or np.max(np.abs(g[..., :2, 2])) != 0.0:
        raise ConfigError("face jet must have vanishing 3a components")
    ginv, _ = inv3(g)
    g33_up = ginv[..., 2, 2]
    s = np.einsum("...ab,...ab->...", ginv[..., :2, :2], dz_tangential)
    return g33_up * (0.5 * g33_up * dz_g33 - 0.5 * s)


def _tangential_robin(lam_t, g_face):
    # d3 g_ab target: -2 lam (g33_up)^(-1/2) g_ab with the off block zeroed,
    # where g33_up = 1/g_33 exactly
    sqrt_g33 = np.sqrt(g_face[..., C33])
    out = np.empty(g_face.shape[:-1] + (3,))
    for slot, comp in enumerate(_TANGENTIAL):
        out[..., slot] = -2.0 * lam_t * sqrt_g33 * g_face[..., comp]
    return out


def fill_umbilic_ghosts(field: MetricField, t: float, spec: BoundarySpec,
                        bg) -> None:
    """Enforce the umbilic condition through the z ghosts, in place.

    ``bg`` supplies the frozen background connection entering the gauge
    field; its third Christoffel trace is subtracted in the g_33 solve.
    """
    chart = field.chart
    if chart.periodic_z:
        raise ConfigError("umbilic fill has no meaning on a periodic chart")
    lam_t = spec.lam(t)
    g = field.g
    h = chart.hz

    for face in spec.faces:
        k = _face_plane(chart, face)
        into = 1 if face == "z_min" else -1
        gh = -into

        # (i) off block zero on the face, ghosts through zero
        for comp in _OFFDIAG:
            g[:, :, k, comp] = 0.0
            g[:, :, k + gh, comp] = (-3.0 * g[:, :, k + into, comp]
                                     + g[:, :, k + 2 * into, comp])
            g[:, :, k + 2 * gh, comp] = (-8.0 * g[:, :, k + into, comp]
                                         + 3.0 * g[:, :, k + 2 * into, comp])

        face_g = g[:, :, k, :]
        target = _tangential_robin(lam_t, face_g)

        # (ii) Robin ghost for the tangential block: centered derivative at
        # the face equals the target exactly
        for slot, comp in enumerate(_TANGENTIAL):
            g[:, :, k + gh, comp] = (g[:, :, k + into, comp]
                                     - 2.0 * h * target[..., slot] * into)

        # (iii) g_33 ghost from the vanishing third gauge component
        g33 = face_g[..., C33]
        g33_up = 1.0 / g33
        a2 = _tangential_block_inverse(face_g)
        s = (a2[..., 0] * target[..., 0] + 2.0 * a2[..., 1] * target[..., 1]
             + a2[..., 2] * target[..., 2])
        gamma_t = bg.gamma[:, :, k, 2, :, :]
        ttil = (a2[..., 0] * gamma_t[..., 0, 0]
                + 2.0 * a2[..., 1] * gamma_t[..., 0, 1]
                + a2[..., 2] * gamma_t[..., 1, 1]
                + g33_up * gamma_t[..., 2, 2])
        d33 = s / g33_up + 2.0 * ttil / (g33_up * g33_up)
        g[:, :, k + gh, C33] = g[:, :, k + into, C33] - 2.0 * h * d33 * into

        # (iv) second ghosts, cubic through the first ghost and three layers
        for comp in range(6):
            if comp in _OFFDIAG:
                continue
            g[:, :, k + 2 * gh, comp] = (4.0 * g[:, :, k + gh, comp]
                                         - 6.0 * g[:, :, k, comp]
                                         + 4.0 * g[:, :, k + into, comp]
                                         - g[:, :, k + 2 * into, comp])

    wrap_lateral(g, chart)
    field.ghosts_filled = True


def _tangential_block_inverse(face_g):
    # inverse of the 2x2 tangential block, packed (11, 12, 22), valid when
    # the off block vanishes
    a, b, c = face_g[..., C11], face_g[..., C12], face_g[..., C22]
    det = a * c - b * b
    out = np.empty(face_g.shape[:-1] + (3,))
    out[..., 0] = c / det
    out[..., 1] = -b / det
    out[..., 2] = a / det
    return out


def bootstrap_initial_fill(field: MetricField, spec: BoundarySpec) -> None:
    """Ghost fill for the background copy of the initial metric, in place.

    Umbilic runs fill the off block and tangential ghosts exactly as the
    evolution will at t = 0, and extrapolate the g_33 ghosts cubically.
    Freezing the connection of this fill makes the t = 0 gauge-field solve
    reproduce the extrapolated ghost, so the gauge field starts at zero.
    """
    chart = field.chart
    if chart.periodic_z:
        wrap_z(field.g, chart)
        wrap_lateral(field.g, chart)
        field.ghosts_filled = True
        return
    if spec.mode != "umbilic":
        fill_dirichlet(field, 0.0, spec)
        return
    lam0 = spec.lam(0.0)
    g = field.g
    h = chart.hz
    for face in spec.faces:
        k = _face_plane(chart, face)
        into = 1 if face == "z_min" else -1
        gh = -into
        for comp in _OFFDIAG:
            g[:, :, k, comp] = 0.0
            g[:, :, k + gh, comp] = (-3.0 * g[:, :, k + into, comp]
                                     + g[:, :, k + 2 * into, comp])
            g[:, :, k + 2 * gh, comp] = (-8.0 * g[:, :, k + into, comp]
                                         + 3.0 * g[:, :, k + 2 * into, comp])
        face_g = g[:, :, k, :]
        target = _tangential_robin(lam0, face_g)
        for slot, comp in enumerate(_TANGENTIAL):
            g[:, :, k + gh, comp] = (g[:, :, k + into, comp]
                                     - 2.0 * h * target[..., slot] * into)
        g[:, :, k + gh, C33] = (4.0 * g[:, :, k, C33]
                                - 6.0 * g[:, :, k + into, C33]
                                + 4.0 * g[:, :, k + 2 * into, C33]
                                - g[:, :, k + 3 * into, C33])
        for comp in range(6):
            if comp in _OFFDIAG:
                continue
            g[:, :, k + 2 * gh, comp] = (4.0 * g[:, :, k + gh, comp]
                                         - 6.0 * g[:, :, k, comp]
                                         + 4.0 * g[:, :, k + into, comp]
                                         - g[:, :, k + 2 * into, comp])
    wrap_lateral(g, chart)
    field.ghosts_filled = True


def fill_dirichlet(field: MetricField, t: float, spec: BoundarySpec) -> None:
    """Pin face planes and refresh the ghosts behind them, in place.

    With an analytic solution hook the ghost planes take its values
    directly; extrapolating through the pinned face instead would leave an
    O(h) curvature error layer there, large enough to drown the pullback
    residual of gauge runs.  The g0 mode has no off-face information, so
    its ghosts come from quadratic extrapolation through the face value.
    """
    chart = field.chart
    if chart.periodic_z:
        raise ConfigError("dirichlet fill has no meaning on a periodic chart")
    g = field.g
    pinned = None
    if spec.mode == "dirichlet-exact":
        pinned = spec.exact(chart, t)
        lo, hi = _face_indices(chart)
        planes = {"z_min": pinned.g[:, :, lo, :], "z_max": pinned.g[:, :, hi, :]}
    elif spec.mode == "dirichlet-g0":
        planes = spec.g0_faces
    else:
        raise ConfigError("dirichlet fill called with a non-dirichlet spec")

    for face in spec.faces:
        k = _face_plane(chart, face)
        into = 1 if face == "z_min" else -1
        gh = -into
        g[:, :, k, :] = planes[face]
        if pinned is not None:
            g[:, :, k + gh, :] = pinned.g[:, :, k + gh, :]
            g[:, :, k + 2 * gh, :] = pinned.g[:, :, k + 2 * gh, :]
        else:
            g[:, :, k + gh, :] = (3.0 * g[:, :, k, :] - 3.0 * g[:, :, k + into, :]
                                  + g[:, :, k + 2 * into, :])
            g[:, :, k + 2 * gh, :] = (6.0 * g[:, :, k, :]
                                      - 8.0 * g[:, :, k + into, :]
                                      + 3.0 * g[:, :, k + 2 * into, :])
    wrap_lateral(g, chart)
    field.ghosts_filled = True


def fill_boundary(field: MetricField, t: float, spec: BoundarySpec, bg) -> None:
    """Mode dispatch for the full ghost refresh."""
    if field.chart.periodic_z:
        wrap_z(field.g, field.chart)
        wrap_lateral(field.g, field.chart)
        field.ghosts_filled = True
        return
    if spec.mode == "umbilic":
        fill_umbilic_ghosts(field, t, spec, bg)
    else:
        fill_dirichlet(field, t, spec)


@dataclass
class BoundaryResiduals:
    umbilic_res: float
    offdiag_res: float
    w3_res: float


def boundary_residuals(field: MetricField, t: float, spec: BoundarySpec,
                       bg) -> BoundaryResiduals:
    """Residuals of the enforced conditions, measured on both faces.

    The umbilic residual uses the ghost-centered normal derivative, i.e. it
    measures how well the enforced discrete condition is being held by the
    evolved data, normalised by the largest metric entry on the face.
    """
    from .deturck import compute_w

    chart = field.chart
    if not field.ghosts_filled:
        raise GhostStateError("residuals need filled ghosts")
    gw = chart.ghost_width
    sx, sy = slice(gw, gw + chart.nx), slice(gw, gw + chart.ny)
    h = chart.hz
    lam_t = spec.lam(t) if spec.lam is not None else 1.0
    g = field.g

    umb = 0.0
    off = 0.0
    for face in spec.faces:
        k = _face_plane(chart, face)
        into = 1 if face == "z_min" else -1
        face_g = g[sx, sy, k, :]
        off = max(off, float(np.max(np.abs(face_g[..., list(_OFFDIAG)]))))
        dz = (g[sx, sy, k + into, :] - g[sx, sy, k - into, :]) / (2.0 * h * into)
        gf = sym_unpack(face_g)
        ginv, _ = inv3(gf)
        coef = -0.5 * np.sqrt(ginv[..., 2, 2])
        h_ab = coef[..., None, None] * sym_unpack(dz)[..., :2, :2]
        want = lam_t * gf[..., :2, :2]
        scale = max(float(np.max(np.abs(gf))), 1e-30)
        umb = max(umb, float(np.max(np.abs(h_ab - want))) / scale)

    w = compute_w(field, bg)
    lo, hi = _face_indices(chart)
    w3 = max(float(np.max(np.abs(w.w_hi[sx, sy, lo, 2]))),
             float(np.max(np.abs(w.w_hi[sx, sy, hi, 2]))))
    return BoundaryResiduals(umbilic_res=umb, offdiag_res=off, w3_res=w3)
