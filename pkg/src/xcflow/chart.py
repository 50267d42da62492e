"""Periodic slab chart, packed metric storage, and snapshot I/O.

The computational domain is a rectangular box that is periodic in the two
lateral directions and bounded by a pair of flat faces in the third.  Nodes
are vertex centred: the lateral axes carry ``n`` distinct nodes with spacing
``extent / n`` (the wrap image is not duplicated), while the bounded axis
carries nodes on both faces, so its spacing is ``extent / (n - 1)``.  A chart
may instead be declared periodic in the third axis, which is used by probe
tooling that needs a torus.

Symmetric 2-tensors are stored packed as six components in the order
``11, 12, 13, 22, 23, 33`` on a ghost-extended grid of shape
``(nx + 2*gw, ny + 2*gw, nz + 2*gw, 6)``.  Every stencil in the package has
reach at most two nodes, and ``gw == 2`` is the only supported width.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, GhostStateError, SnapshotFormatError

C11, C12, C13, C22, C23, C33 = 0, 1, 2, 3, 4, 5

# PACK[i][j] is the packed slot holding component (i, j).
PACK = np.array([[C11, C12, C13], [C12, C22, C23], [C13, C23, C33]])

# Inverse of PACK: packed slot -> (i, j) with i <= j.
UNPACK = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

GHOST_WIDTH = 2

_HEADER = struct.Struct("<4s3I4d")

MAGIC_METRIC = b"XCF1"
MAGIC_PULLBACK = b"XCFP"


@dataclass(frozen=True)
class ChartSpec:
    """Immutable description of the discretised slab."""

    nx: int
    ny: int
    nz: int
    lx: float = 1.0
    ly: float = 1.0
    z_min: float = 0.0
    z_max: float = 1.0
    ghost_width: int = GHOST_WIDTH
    periodic_z: bool = False

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if not isinstance(n, int) or n < 4:
                raise ConfigError(f"{name} must be an integer >= 4, got {n!r}")
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise ConfigError("lateral extents must be positive")
        if not self.z_max > self.z_min:
            raise ConfigError("z_max must exceed z_min")
        if self.ghost_width != GHOST_WIDTH:
            raise ConfigError("only ghost_width == 2 is supported")

    # Spacings.  The bounded axis is vertex centred on both faces.
    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def hz(self) -> float:
        if self.periodic_z:
            return (self.z_max - self.z_min) / self.nz
        return (self.z_max - self.z_min) / (self.nz - 1)

    @property
    def spacings(self):
        return (self.hx, self.hy, self.hz)

    @property
    def min_spacing(self) -> float:
        return min(self.hx, self.hy, self.hz)

    # Ghost-extended shapes and the physical-region slices.
    @property
    def nxt(self) -> int:
        return self.nx + 2 * self.ghost_width

    @property
    def nyt(self) -> int:
        return self.ny + 2 * self.ghost_width

    @property
    def nzt(self) -> int:
        return self.nz + 2 * self.ghost_width

    @property
    def shape_phys(self):
        return (self.nx, self.ny, self.nz)

    @property
    def shape_total(self):
        return (self.nxt, self.nyt, self.nzt)

    @property
    def phys(self):
        gw = self.ghost_width
        return (slice(gw, gw + self.nx), slice(gw, gw + self.ny), slice(gw, gw + self.nz))

    def axis_coords(self, axis: int, ghosts: bool = False) -> np.ndarray:
        """Node coordinates along one axis (0, 1 or 2).

        Ghost coordinates are unwrapped: they continue the uniform spacing
        past the physical range rather than folding back into it.
        """
        n = (self.nx, self.ny, self.nz)[axis]
        h = self.spacings[axis]
        origin = (0.0, 0.0, self.z_min)[axis]
        if ghosts:
            idx = np.arange(-self.ghost_width, n + self.ghost_width)
        else:
            idx = np.arange(n)
        return origin + h * idx

    def mesh(self, ghosts: bool = False):
        """Broadcastable coordinate arrays (X, Y, Z) over the grid."""
        x = self.axis_coords(0, ghosts)[:, None, None]
        y = self.axis_coords(1, ghosts)[None, :, None]
        z = self.axis_coords(2, ghosts)[None, None, :]
        return x, y, z

    def with_resolution(self, nx: int, ny: int, nz: int) -> "ChartSpec":
        return replace(self, nx=nx, ny=ny, nz=nz)


def make_chart(nx, ny, nz, lx=1.0, ly=1.0, z_min=0.0, z_max=1.0,
               periodic_z: bool = False) -> ChartSpec:
    """Validated chart constructor."""
    return ChartSpec(nx=int(nx), ny=int(ny), nz=int(nz), lx=float(lx), ly=float(ly),
                     z_min=float(z_min), z_max=float(z_max), periodic_z=periodic_z)


def sym_pack(m: np.ndarray) -> np.ndarray:
    """(..., 3, 3) symmetric matrix to packed (..., 6)."""
    out = np.empty(m.shape[:-2] + (6,), dtype=np.float64)
    for slot, (i, j) in enumerate(UNPACK):
        out[..., slot] = m[..., i, j]
    return out


def sym_unpack(p: np.ndarray) -> np.ndarray:
    """Packed (..., 6) to full (..., 3, 3)."""
    out = np.empty(p.shape[:-1] + (3, 3), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            out[..., i, j] = p[..., PACK[i, j]]
    return out


def wrap_lateral(data: np.ndarray, chart: ChartSpec) -> None:
    """Copy periodic images into the lateral ghost layers, in place.

    Applied to every layer of the third axis, so any ghost content already
    present there is propagated consistently.
    """
    gw = chart.ghost_width
    nx, ny = chart.nx, chart.ny
    data[:gw] = data[nx:nx + gw]
    data[nx + gw:] = data[gw:2 * gw]
    data[:, :gw] = data[:, ny:ny + gw]
    data[:, ny + gw:] = data[:, gw:2 * gw]


def wrap_z(data: np.ndarray, chart: ChartSpec) -> None:
    """Periodic ghost copy along the third axis, in place."""
    gw = chart.ghost_width
    nz = chart.nz
    data[:, :, :gw] = data[:, :, nz:nz + gw]
    data[:, :, nz + gw:] = data[:, :, gw:2 * gw]


def extrapolate_z_ghosts(data: np.ndarray, chart: ChartSpec) -> None:
    """Fill the z ghost layers by cubic extrapolation from the interior.

    Gauge free: uses no boundary condition, just continues the profile.
    """
    gw = chart.ghost_width
    lo = gw
    hi = gw + chart.nz - 1
    f0, f1, f2, f3 = (data[:, :, lo + m] for m in range(4))
    data[:, :, lo - 1] = 4.0 * f0 - 6.0 * f1 + 4.0 * f2 - f3
    data[:, :, lo - 2] = 10.0 * f0 - 20.0 * f1 + 15.0 * f2 - 4.0 * f3
    f0, f1, f2, f3 = (data[:, :, hi - m] for m in range(4))
    data[:, :, hi + 1] = 4.0 * f0 - 6.0 * f1 + 4.0 * f2 - f3
    data[:, :, hi + 2] = 10.0 * f0 - 20.0 * f1 + 15.0 * f2 - 4.0 * f3


def fill_free(data: np.ndarray, chart: ChartSpec) -> None:
    """Boundary-condition-free ghost fill for a whole grid array, in place.

    Periodic wrap laterally; on the bounded axis either wrap (periodic
    charts) or cubic extrapolation.
    """
    if chart.periodic_z:
        wrap_z(data, chart)
    else:
        extrapolate_z_ghosts(data, chart)
    wrap_lateral(data, chart)


class MetricField:
    """Packed symmetric 2-tensor field on a ghost-extended chart grid."""

    def __init__(self, chart: ChartSpec, g: np.ndarray, ghosts_filled: bool = False):
        expected = chart.shape_total + (6,)
        if g.shape != expected:
            raise ConfigError(f"metric array has shape {g.shape}, expected {expected}")
        self.chart = chart
        self.g = np.ascontiguousarray(g, dtype=np.float64)
        self.ghosts_filled = bool(ghosts_filled)

    @classmethod
    def from_callable(cls, chart: ChartSpec, fn) -> "MetricField":
        """Sample ``fn(X, Y, Z) -> (..., 3, 3)`` on every node, ghosts included.

        Ghost nodes are sampled at their unwrapped coordinates, which gives an
        analytic fill.  Callers that want a discretely periodic fill should
        rewrap afterwards.
        """
        x, y, z = chart.mesh(ghosts=True)
        m = fn(x, y, z)
        m = np.broadcast_to(np.asarray(m, dtype=np.float64),
                            chart.shape_total + (3, 3))
        return cls(chart, sym_pack(m), ghosts_filled=True)

    @classmethod
    def constant(cls, chart: ChartSpec, mat) -> "MetricField":
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape == (6,):
            packed = mat
        elif mat.shape == (3, 3):
            packed = sym_pack(mat)
        else:
            raise ConfigError("constant metric must be (3, 3) or packed (6,)")
        g = np.empty(chart.shape_total + (6,), dtype=np.float64)
        g[...] = packed
        return cls(chart, g, ghosts_filled=True)

    def copy(self) -> "MetricField":
        return MetricField(self.chart, self.g.copy(), self.ghosts_filled)

    @property
    def phys(self) -> np.ndarray:
        """View of the physical region, shape (nx, ny, nz, 6)."""
        return self.g[self.chart.phys]

    def full_matrices(self, region: str = "phys") -> np.ndarray:
        data = self.phys if region == "phys" else self.g
        return sym_unpack(data)

    def leading_minors(self):
        """The three leading principal minors on physical nodes."""
        p = self.phys
        m1 = p[..., C11]
        m2 = p[..., C11] * p[..., C22] - p[..., C12] ** 2
        m3 = (p[..., C11] * (p[..., C22] * p[..., C33] - p[..., C23] ** 2)
              - p[..., C12] * (p[..., C12] * p[..., C33] - p[..., C23] * p[..., C13])
              + p[..., C13] * (p[..., C12] * p[..., C23] - p[..., C22] * p[..., C13]))
        return m1, m2, m3

    def is_spd(self) -> bool:
        m1, m2, m3 = self.leading_minors()
        return bool((m1 > 0.0).all() and (m2 > 0.0).all() and (m3 > 0.0).all())

    def mark_ghosts_stale(self) -> None:
        self.ghosts_filled = False


class TensorField:
    """Dense tensor field of small rank on the same ghost-extended grid."""

    def __init__(self, chart: ChartSpec, rank: int, data=None, ghosts_filled=False):
        shape = chart.shape_total + (3,) * rank
        if data is None:
            data = np.zeros(shape, dtype=np.float64)
        elif data.shape != shape:
            raise ConfigError(f"tensor array has shape {data.shape}, expected {shape}")
        self.chart = chart
        self.rank = rank
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.ghosts_filled = bool(ghosts_filled)

    @property
    def phys(self) -> np.ndarray:
        return self.data[self.chart.phys]


def fd_partial(fld, axis: int) -> np.ndarray:
    """Central first derivative of a field along coordinate axis 1, 2 or 3.

    Returns values on the physical region only.  Requires filled ghosts.
    """
    if axis not in (1, 2, 3):
        raise ConfigError("axis must be 1, 2 or 3")
    if not fld.ghosts_filled:
        raise GhostStateError("fd_partial needs filled ghost layers")
    data = fld.g if isinstance(fld, MetricField) else fld.data
    chart = fld.chart
    a = axis - 1
    h = chart.spacings[a]
    gw = chart.ghost_width
    n = chart.shape_phys[a]
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[a] = slice(gw - 1, gw + n - 1)
    hi[a] = slice(gw + 1, gw + n + 1)
    sub = [chart.phys[0], chart.phys[1], chart.phys[2]]
    sub[a] = slice(None)
    dd = (data[tuple(hi)] - data[tuple(lo)]) / (2.0 * h)
    return dd[tuple(sub)]


def write_snapshot(path, chart: ChartSpec, g_phys: np.ndarray,
                   magic: bytes = MAGIC_METRIC) -> None:
    """Write a packed physical-region metric to a binary snapshot file.

    Layout: 48 byte little-endian header (magic, nx, ny, nz, lx, ly, z_min,
    z_max) followed by float64 payload with the first grid index varying
    fastest and the six packed components contiguous per node.
    """
    if magic not in (MAGIC_METRIC, MAGIC_PULLBACK):
        raise SnapshotFormatError(f"unknown snapshot magic {magic!r}")
    if g_phys.shape != chart.shape_phys + (6,):
        raise SnapshotFormatError(
            f"payload shape {g_phys.shape} does not match chart {chart.shape_phys}")
    header = _HEADER.pack(magic, chart.nx, chart.ny, chart.nz,
                          chart.lx, chart.ly, chart.z_min, chart.z_max)
    body = np.ascontiguousarray(g_phys.transpose(2, 1, 0, 3), dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def read_snapshot(path, expected_magic: bytes | None = None):
    """Read a snapshot written by :func:`write_snapshot`.

    Returns ``(chart, g_phys, magic)``.  The chart is reconstructed with the
    default non-periodic third axis.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError("snapshot shorter than its header")
    magic, nx, ny, nz, lx, ly, z_min, z_max = _HEADER.unpack_from(raw)
    if magic not in (MAGIC_METRIC, MAGIC_PULLBACK):
        raise SnapshotFormatError(f"bad snapshot magic {magic!r}")
    if expected_magic is not None and magic != expected_magic:
        raise SnapshotFormatError(
            f"snapshot magic {magic!r} does not match expected {expected_magic!r}")
    want = _HEADER.size + nx * ny * nz * 6 * 8
    if len(raw) != want:
        raise SnapshotFormatError(
            f"snapshot payload has {len(raw)} bytes, expected {want}")
    chart = make_chart(nx, ny, nz, lx=lx, ly=ly, z_min=z_min, z_max=z_max)
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if not np.all(np.isfinite(flat)):
        raise SnapshotFormatError("snapshot payload contains non-finite values")
    g = flat.reshape(nz, ny, nx, 6).transpose(2, 1, 0, 3)
    return chart, np.ascontiguousarray(g), magic
