"""Discrete curvature pipeline: connection, Riemann tensor, and cross tensor.

Everything is assembled pointwise from finite differences of the packed
metric.  The lowered Riemann tensor is built directly from second metric
derivatives plus a quadratic connection term,

    R_ijkl = 1/2 (D_i D_k g_jl + D_j D_l g_ik - D_i D_l g_jk - D_j D_k g_il)
             + g_mn (G^m_ik G^n_jl - G^m_il G^n_jk),

which keeps every pair antisymmetry, the pair swap and the first Bianchi
identity exact at the discrete level because the difference operators commute
and the stored connection is symmetric.  Sign conventions are fixed so that a
space form of curvature K has

    R_ijkl = K (g_jk g_il - g_ik g_jl),   Ric = 2 K g,   scal = 6 K.

The trace-adjusted Ricci tensor ``E = Ric - (scal/2) g`` then satisfies
``E = -K g`` on space forms, and the cross tensor

    c = det(E^i_j) * (E^{..})^{-1}   (both indices lowered)

reduces to ``K^2 g`` there.  Where ``E^{..}`` is numerically singular the
cross tensor falls back to an equivalent contraction against two
volume-weighted alternators, which needs no inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fd
from .chart import MetricField, sym_unpack
from .errors import CrossDegenerateError, GhostStateError

# Alternating symbol, built once.
LEVI = np.zeros((3, 3, 3))
LEVI[0, 1, 2] = LEVI[1, 2, 0] = LEVI[2, 0, 1] = 1.0
LEVI[0, 2, 1] = LEVI[2, 1, 0] = LEVI[1, 0, 2] = -1.0

# Inverse-route guard: nodes where |det E^{..}| falls below
# DEGENERACY_RTOL * max|E^{..}|^3 use the alternator contraction instead.
DEGENERACY_RTOL = 1e-36
DEGENERACY_ATOL = 1e-300


def det3(m: np.ndarray) -> np.ndarray:
    """Determinant of a (..., 3, 3) batch, explicit cofactor expansion."""
    return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
            - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
            + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))


def adj3(m: np.ndarray) -> np.ndarray:
    """Adjugate of a (..., 3, 3) batch: adj(m) @ m = det(m) * I."""
    out = np.empty_like(m)
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            out[..., j, i] = (m[..., i1, j1] * m[..., i2, j2]
                             - m[..., i1, j2] * m[..., i2, j1])
    return out


def inv3(m: np.ndarray):
    """Inverse and determinant of a (..., 3, 3) batch."""
    d = det3(m)
    return adj3(m) / d[..., None, None], d


@dataclass
class CurvatureBundle:
    """Pointwise curvature data on the physical region.

    All arrays are shaped ``(nx, ny, nz, ...)``.  ``gamma`` stores the
    connection coefficients as ``gamma[..., k, i, j] = G^k_ij`` and
    ``riemann`` the fully lowered tensor ``R_ijkl``.
    """

    g_lo: np.ndarray
    ginv: np.ndarray
    detg: np.ndarray
    sqrt_detg: np.ndarray
    gamma: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    einstein_lo: np.ndarray
    einstein_hi: np.ndarray
    mu_hi: np.ndarray
    cross: np.ndarray
    det_e: np.ndarray
    cross_fallback: np.ndarray


def _phys_crop(chart, arr):
    return arr[chart.phys]


def metric_first_derivs(field: MetricField):
    """First derivatives of the packed metric on the physical region.

    Returns an array ``dg[..., a, c]`` with axis ``a`` the derivative
    direction and ``c`` the packed component.
    """
    if not field.ghosts_filled:
        raise GhostStateError("curvature assembly needs filled ghosts")
    chart = field.chart
    sp = chart.spacings
    out = np.empty(chart.shape_phys + (3, 6), dtype=np.float64)
    for a in range(3):
        out[..., a, :] = _phys_crop(chart, fd.d1(field.g, a, sp[a]))
    return out


def metric_second_derivs(field: MetricField):
    """Symmetric table of second derivatives, ``ddg[..., a, b, c]``."""
    if not field.ghosts_filled:
        raise GhostStateError("curvature assembly needs filled ghosts")
    chart = field.chart
    sp = chart.spacings
    out = np.empty(chart.shape_phys + (3, 3, 6), dtype=np.float64)
    for a in range(3):
        for b in range(a, 3):
            d = _phys_crop(chart, fd.second_derivative(field.g, a, b, sp))
            out[..., a, b, :] = d
            if b != a:
                out[..., b, a, :] = d
    return out


def christoffel(g_lo, ginv, dg):
    """Connection coefficients from pointwise data.

    ``dg[..., a, c]`` holds packed first derivatives.  Returns
    ``(gamma_first, gamma)`` where ``gamma_first[..., l, i, j]`` carries the
    lowered symbol ``1/2 (D_i g_jl + D_j g_il - D_l g_ij)``.
    """
    t = sym_unpack(dg)  # t[..., a, i, j] = D_a g_ij
    gamma_first = 0.5 * (np.einsum("...ijl->...lij", t)
                         + np.einsum("...jil->...lij", t)
                         - t)
    gamma = np.einsum("...kl,...lij->...kij", ginv, gamma_first)
    return gamma_first, gamma


def lowered_riemann(g_lo, gamma_first, gamma, ddg):
    """Fully lowered curvature tensor from second derivatives and G terms."""
    d2 = sym_unpack(ddg)  # d2[..., a, b, i, j] = D_a D_b g_ij
    t1 = d2.transpose(0, 1, 2, 3, 5, 4, 6)   # D_i D_k g_jl
    t2 = d2.transpose(0, 1, 2, 5, 3, 6, 4)   # D_j D_l g_ik
    t3 = d2.transpose(0, 1, 2, 3, 5, 6, 4)   # D_i D_l g_jk
    t4 = d2.transpose(0, 1, 2, 5, 3, 4, 6)   # D_j D_k g_il
    riem = 0.5 * (t1 + t2 - t3 - t4)
    riem += np.einsum("...nik,...njl->...ijkl", gamma_first, gamma)
    riem -= np.einsum("...nil,...njk->...ijkl", gamma_first, gamma)
    return riem


def compute_bundle(field: MetricField) -> CurvatureBundle:
    """Assemble the full curvature bundle on the physical region."""
    chart = field.chart
    dg = metric_first_derivs(field)
    ddg = metric_second_derivs(field)
    g_lo = sym_unpack(_phys_crop(chart, field.g))
    ginv, detg = inv3(g_lo)
    sqrt_detg = np.sqrt(detg)

    gamma_first, gamma = christoffel(g_lo, ginv, dg)
    riem = lowered_riemann(g_lo, gamma_first, gamma, ddg)

    ricci = np.einsum("...il,...ijkl->...jk", ginv, riem)
    scalar = np.einsum("...jk,...jk->...", ginv, ricci)
    einstein_lo = ricci - 0.5 * scalar[..., None, None] * g_lo
    einstein_hi = np.einsum("...ip,...pq,...jq->...ij", ginv, einstein_lo, ginv)
    mu_hi = LEVI / sqrt_detg[..., None, None, None]

    cross, det_e, fallback = _cross_primary(g_lo, detg, einstein_lo, einstein_hi)

    return CurvatureBundle(
        g_lo=g_lo, ginv=ginv, detg=detg, sqrt_detg=sqrt_detg,
        gamma=gamma, riemann=riem, ricci=ricci, scalar=scalar,
        einstein_lo=einstein_lo, einstein_hi=einstein_hi, mu_hi=mu_hi,
        cross=cross, det_e=det_e, cross_fallback=fallback,
    )


def _cross_primary(g_lo, detg, einstein_lo, einstein_hi):
    """Inverse-route cross tensor with the alternator fallback.

    The primary expression is ``det(E^i_j) * inverse(E^{..})`` lowered.
    ``det(E^i_j)`` means the mixed determinant ``det(E_lo) / det(g)``.
    """
    det_e_hi = det3(einstein_hi)
    det_e = det3(einstein_lo) / detg
    scale = np.max(np.abs(einstein_hi), axis=(-2, -1))
    fallback = np.abs(det_e_hi) <= DEGENERACY_RTOL * scale ** 3 + DEGENERACY_ATOL

    adj_hi = adj3(einstein_hi)
    safe = np.where(fallback, 1.0, det_e_hi)
    cross = (det_e / safe)[..., None, None] * adj_hi
    if fallback.any():
        alt = _cross_mu2(g_lo, detg, einstein_lo)
        cross = np.where(fallback[..., None, None], alt, cross)
    return cross, det_e, fallback


def _cross_mu2(g_lo, detg, einstein_lo):
    """Alternator route: contract E twice against the weighted alternator.

    The raw contraction produces the index-raised tensor; both slots are
    lowered with the metric before returning.
    """
    mu2 = np.einsum("ipq,jrs,...pr,...qs->...ij", LEVI, LEVI,
                    einstein_lo, einstein_lo) / (2.0 * detg[..., None, None])
    return np.einsum("...ik,...kl,...jl->...ij", g_lo, mu2, g_lo)


def _cross_triple(bundle: CurvatureBundle):
    """Quadratic-in-curvature route, two alternators against two Riemanns."""
    return 0.125 * np.einsum("...pqk,...rsl,...ilpq,...kjrs->...ij",
                             bundle.mu_hi, bundle.mu_hi,
                             bundle.riemann, bundle.riemann)


def cross_variant(bundle: CurvatureBundle, which: str) -> np.ndarray:
    """Evaluate the cross tensor through one named route.

    ``detE`` is the inverse route; it refuses degenerate nodes instead of
    falling back.  ``mu2`` contracts E twice against the weighted alternator
    and ``mu4`` is the quadratic-in-curvature route; both are defined
    everywhere.
    """
    if which == "detE":
        if bundle.cross_fallback.any():
            n = int(bundle.cross_fallback.sum())
            raise CrossDegenerateError(
                f"detE route undefined at {n} degenerate node(s)")
        inv_e, _ = inv3(bundle.einstein_hi)
        return bundle.det_e[..., None, None] * inv_e
    if which == "mu2":
        return _cross_mu2(bundle.g_lo, bundle.detg, bundle.einstein_lo)
    if which == "mu4":
        return _cross_triple(bundle)
    raise ValueError(f"unknown cross route {which!r}")


def check_mu_identity(bundle: CurvatureBundle) -> float:
    """Residual of the alternator curvature identity.

    Checks ``mu^{pqk} mu^{rsl} R_kjrs = 2 (E^{ql} d^p_j - E^{pl} d^q_j)``
    pointwise and returns the largest entry normalised by the largest
    raised-E entry over the region.
    """
    lhs = np.einsum("...pqk,...rsl,...kjrs->...pqjl",
                    bundle.mu_hi, bundle.mu_hi, bundle.riemann)
    eye = np.eye(3)
    rhs = 2.0 * (np.einsum("...ql,pj->...pqjl", bundle.einstein_hi, eye)
                 - np.einsum("...pl,qj->...pqjl", bundle.einstein_hi, eye))
    scale = max(float(np.max(np.abs(bundle.einstein_hi))), 1e-30)
    return float(np.max(np.abs(lhs - rhs))) / scale


def riemann_symmetry_residuals(bundle: CurvatureBundle) -> dict:
    """Max norm violations of the algebraic curvature symmetries."""
    r = bundle.riemann
    scale = max(float(np.max(np.abs(r))), 1e-30)
    pair1 = np.max(np.abs(r + r.transpose(0, 1, 2, 4, 3, 5, 6)))
    pair2 = np.max(np.abs(r + r.transpose(0, 1, 2, 3, 4, 6, 5)))
    swap = np.max(np.abs(r - r.transpose(0, 1, 2, 5, 6, 3, 4)))
    bianchi = np.max(np.abs(r + r.transpose(0, 1, 2, 3, 5, 6, 4)
                            + r.transpose(0, 1, 2, 3, 6, 4, 5)))
    return {
        "antisym_first": float(pair1) / scale,
        "antisym_second": float(pair2) / scale,
        "pair_swap": float(swap) / scale,
        "first_bianchi": float(bianchi) / scale,
    }


def eig_e_robust(bundle: CurvatureBundle) -> np.ndarray:
    """Eigenvalues of E relative to g, ascending, via Cholesky reduction.

    Solves the symmetric pencil ``E v = lam g v`` by forming
    ``L^-1 E L^-T`` with ``g = L L^T``, which keeps the problem symmetric.
    """
    L = np.linalg.cholesky(bundle.g_lo)
    linv = np.linalg.inv(L)
    c = linv @ bundle.einstein_lo @ linv.transpose(0, 1, 2, 4, 3)
    return np.linalg.eigvalsh(0.5 * (c + c.transpose(0, 1, 2, 4, 3)))


def eig_mixed_trig(m: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues of a (..., 3, 3) batch with real spectrum.

    Trigonometric solution of the characteristic cubic in terms of the
    invariants; robust at triple roots, ascending order.
    """
    q = np.trace(m, axis1=-2, axis2=-1) / 3.0
    b = m - q[..., None, None] * np.eye(3)
    p2 = np.einsum("...ij,...ji->...", b, b) / 6.0
    p2 = np.maximum(p2, 0.0)
    p = np.sqrt(p2)
    scale = np.maximum(np.abs(q), np.max(np.abs(m), axis=(-2, -1)))
    tiny = p <= 1e-14 * scale + 1e-300
    p_safe = np.where(tiny, 1.0, p)
    r = det3(b) / (2.0 * p_safe ** 3)
    r = np.clip(r, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    eigs = np.stack(
        [q + 2.0 * p * np.cos(phi + 2.0 * np.pi * k / 3.0) for k in range(3)],
        axis=-1)
    eigs = np.where(tiny[..., None], q[..., None], eigs)
    return np.sort(eigs, axis=-1)


def sectional_report(bundle: CurvatureBundle, g=None) -> dict:
    """Eigenvalue range of E relative to g and a sign classification.

    In three dimensions the eigenvalues of E relative to g are the negatives
    of the sectional curvatures of the complementary planes, so all
    sectional curvatures are negative exactly when every eigenvalue of E is
    positive, and positive exactly when every eigenvalue is negative.
    Anything else, including the flat case where the eigenvalues vanish, is
    reported as mixed.  ``g`` is accepted for interface symmetry; the bundle
    already carries the metric.
    """
    eigs = eig_e_robust(bundle)
    emin = float(eigs.min())
    emax = float(eigs.max())
    if emin > 0.0:
        label = "all-negative-sectional"
    elif emax < 0.0:
        label = "all-positive-sectional"
    else:
        label = "mixed"
    return {
        "min_eig_E": emin,
        "max_eig_E": emax,
        "classification": label,
    }
