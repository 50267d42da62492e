"""Principal symbol of the linearised flow and parabolicity probes.

The linearisation of the cross tensor in a direction ``v`` has second order
part ``-1/2 sigma_dx(v)`` contracted with the frequency covector, where for a
unit covector ``zeta``

    sigma_dx(v) = tr(E v) zeta zeta^T + (zeta.E zeta) v
                  - zeta (v u)^T - (v u) zeta^T,      u = E zeta,

with ``E`` the raised trace-adjusted Ricci tensor.  Every direction of the
form ``zeta a^T + a zeta^T`` is annihilated, for any ``E``: these are exactly
the directions a gauge motion can produce, so the operator alone is only
weakly elliptic.  The gauge correction contributes

    sigma_dy(v) = zeta xi^T + xi zeta^T,
    xi_l = zeta^j v_jl - 1/2 zeta_l tr_g(v),

which restores those three directions with unit eigenvalue.  The combined
matrix is similar to a block triangular one with diagonal
``(1, 1, 1, s q, s q, s q)`` where ``q = zeta.E zeta`` and ``s`` the flow
orientation, so the time stepper is parabolic exactly when ``s q`` stays
positive over the region.

Symmetric matrices are flattened in the basis order 11, 12, 13, 22, 33, 23,
which is the order used for all 6x6 matrices here.
"""

from __future__ import annotations

import numpy as np

from .curvature import compute_bundle
from .errors import QrConvergenceError

SYMBOL_BASIS = ((0, 0), (0, 1), (0, 2), (1, 1), (2, 2), (1, 2))

# Probe directions: axes, face diagonals, body diagonals.
_HALF_SPHERE = np.array([
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
    (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
], dtype=np.float64)

# 26 lattice directions covering the covector sphere; the symbol is even in
# the covector but the probe samples both hemispheres anyway.
DEFAULT_DIRECTIONS = np.concatenate([_HALF_SPHERE, -_HALF_SPHERE])


def basis_matrix(slot: int) -> np.ndarray:
    """Symmetric unit matrix for one basis slot."""
    i, j = SYMBOL_BASIS[slot]
    m = np.zeros((3, 3))
    m[i, j] = 1.0
    m[j, i] = 1.0
    return m


def sym_to_vec(m: np.ndarray) -> np.ndarray:
    """Flatten a (..., 3, 3) symmetric batch into basis coefficients."""
    out = np.empty(m.shape[:-2] + (6,), dtype=m.dtype)
    for slot, (i, j) in enumerate(SYMBOL_BASIS):
        out[..., slot] = m[..., i, j]
    return out


def vec_to_sym(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=v.dtype)
    for slot, (i, j) in enumerate(SYMBOL_BASIS):
        out[..., i, j] = v[..., slot]
        out[..., j, i] = v[..., slot]
    return out


def normalize_covector(ginv: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Scale a covector batch to unit length against the inverse metric."""
    n2 = np.einsum("...i,...ij,...j->...", zeta, ginv, zeta)
    return zeta / np.sqrt(n2)[..., None]


def _apply_dx(e_hi, zeta, v):
    tr_ev = np.einsum("...pq,pq->...", e_hi, v)[..., None, None]
    u = np.einsum("...pq,...q->...p", e_hi, zeta)
    q = np.einsum("...p,...p->...", zeta, u)[..., None, None]
    vu = np.einsum("ip,...p->...i", v, u)
    zz = zeta[..., :, None] * zeta[..., None, :]
    zvu = zeta[..., :, None] * vu[..., None, :]
    return tr_ev * zz + q * v - zvu - zvu.swapaxes(-1, -2)


def _apply_dy(ginv, zeta, v):
    zup = np.einsum("...ij,...j->...i", ginv, zeta)
    tr_gv = np.einsum("...ij,ij->...", ginv, v)
    xi = np.einsum("...j,ji->...i", zup, v) - 0.5 * tr_gv[..., None] * zeta
    zx = zeta[..., :, None] * xi[..., None, :]
    return zx + zx.swapaxes(-1, -2)


def _assemble(apply_fn, *args):
    cols = [sym_to_vec(apply_fn(*args, basis_matrix(slot))) for slot in range(6)]
    return np.stack(cols, axis=-1)


def sigma_dx(e_hi: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Curvature block of the principal symbol, batched over leading axes."""
    return _assemble(_apply_dx, e_hi, zeta)


def sigma_dy(ginv: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Gauge block of the principal symbol, batched over leading axes."""
    return _assemble(_apply_dy, ginv, zeta)


def combined_symbol(e_hi, ginv, zeta, sign: int = 1) -> np.ndarray:
    return sigma_dy(ginv, zeta) + float(sign) * sigma_dx(e_hi, zeta)


def gauge_directions(zeta: np.ndarray) -> np.ndarray:
    """The three symmetrised products of zeta with the coordinate axes,
    flattened; these span the kernel of the curvature block."""
    outs = []
    for a in np.eye(3):
        m = zeta[..., :, None] * a
        outs.append(sym_to_vec(m + m.swapaxes(-1, -2)))
    return np.stack(outs, axis=-1)


def spectrum(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of a 6x6 batch, sorted by real part then imaginary part.

    Dense nonsymmetric solve; the matrices are tiny so robustness wins over
    structure exploitation.
    """
    try:
        eigs = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise QrConvergenceError(
            f"eigenvalue iteration failed: {exc}\noffending batch:\n{m!r}"
        ) from exc
    order = np.lexsort((eigs.imag, eigs.real), axis=-1)
    return np.take_along_axis(eigs, order, axis=-1)


def parabolicity_report(field, bg=None, sign: int = 1, stride: int = 1,
                        directions: np.ndarray | None = None) -> dict:
    """Probe the combined symbol over the grid and summarise its spectrum.

    The gauge background never enters the principal part (its connection is
    differentiated once at most), so ``bg`` is accepted for signature
    symmetry and ignored.  Nodes are subsampled by ``stride``; every node is
    probed along each direction, normalised to unit inverse-metric length.
    """
    del bg
    if directions is None:
        directions = DEFAULT_DIRECTIONS
    b = compute_bundle(field)
    sl = (slice(None, None, stride),) * 3
    e_hi = b.einstein_hi[sl].reshape(-1, 3, 3)
    ginv = b.ginv[sl].reshape(-1, 3, 3)

    min_real = np.inf
    min_real_dx = np.inf
    max_imag = 0.0
    kernel_res = 0.0
    gauge_eig_err = 0.0
    scale = max(float(np.max(np.abs(e_hi))), 1e-30)
    for raw in directions:
        zeta = normalize_covector(ginv, np.broadcast_to(raw, e_hi.shape[:1] + (3,)))
        mdx = float(sign) * sigma_dx(e_hi, zeta)
        mc = sigma_dy(ginv, zeta) + mdx
        eigs = spectrum(mc)
        min_real = min(min_real, float(eigs.real.min()))
        min_real_dx = min(min_real_dx, float(spectrum(mdx).real.min()))
        max_imag = max(max_imag, float(np.abs(eigs.imag).max()))
        kern = gauge_directions(zeta)
        kernel_res = max(kernel_res, float(np.max(np.abs(mdx @ kern))) / scale)
        gauge_out = mc @ kern
        gauge_eig_err = max(gauge_eig_err, float(np.max(np.abs(gauge_out - kern))))
    tol = 1e-10
    if min_real < -tol or min_real_dx < -tol:
        label = "not-parabolic"
    elif min_real > tol:
        label = "strictly-parabolic"
    else:
        label = "weakly-parabolic"
    return {
        "min_real_eig": min_real,
        "min_real_eig_dx": min_real_dx,
        "max_imag_abs": max_imag,
        "kernel_residual": kernel_res,
        "gauge_unit_residual": gauge_eig_err,
        "classification": label,
        "parabolic": bool(min_real > 0.0),
        "nodes_probed": int(e_hi.shape[0]),
        "directions_probed": int(len(directions)),
    }
