"""Quadrature-point kernels for the beam internal forces and tangent.

Two interchangeable backends compute identical results: a loop kernel
compiled with numba and a batched numpy version. Setting the environment
variable ``IGAFEMU_DISABLE_NUMBA=1`` (or running without numba installed)
selects the numpy backend.

Both kernels work on a flat batch of quadrature points. Each point carries
``k`` shape functions (3 for quadratic NURBS, 2 for linear Lagrange) and
returns

* ``gN``, ``gM`` : (nq, 2k) force densities per unit axial / bending
  stiffness, already multiplied by the reference length element, so the
  element force is ``EA * gN + EI * gM``;
* ``K`` : (nq, 2k, 2k) consistent tangent contribution (optional).
"""
from __future__ import annotations

import os

import numpy as np

from .kinematics import METRIC_FLOOR, SingularGeometryError

try:  # pragma: no cover - import guard
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

__all__ = ["use_numba", "qp_forces", "qp_forces_numpy", "qp_forces_numba", "backend"]


def use_numba() -> bool:
    """True when the compiled backend is active (re-read on every call)."""
    return _HAVE_NUMBA and os.environ.get("IGAFEMU_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def backend() -> str:
    return "numba" if use_numba() else "numpy"


def qp_forces_numpy(x, conn, dN, ddN, dL, A11, B11, EA, EI, tangent=True):
    """Batched numpy evaluation; see module docstring for the outputs."""
    nq, k = conn.shape
    xe = x[conn]  # (nq, k, 2)
    a1 = np.einsum("qa,qai->qi", dN, xe)
    b = np.einsum("qa,qai->qi", ddN, xe)
    a11 = np.einsum("qi,qi->q", a1, a1)
    bad = np.flatnonzero(a11 < METRIC_FLOOR)
    if bad.size:
        raise SingularGeometryError(f"degenerate tangent at quadrature point {bad[0]}")
    s = np.sqrt(a11)
    pa1 = np.stack([-a1[:, 1], a1[:, 0]], axis=1)
    n = pa1 / s[:, None]
    c = a1[:, 0] * b[:, 1] - a1[:, 1] * b[:, 0]
    b11 = c / s
    gam = np.einsum("qi,qi->q", b, a1) / a11
    iA2 = 1.0 / A11**2
    ec = 0.5 * (a11 - A11) * iA2
    kc = (b11 - B11) * iA2

    de = dN[:, :, None] * a1[:, None, :]                       # (nq, k, 2)
    cov = ddN - gam[:, None] * dN
    db = cov[:, :, None] * n[:, None, :]
    gN = ((dL * ec)[:, None, None] * de).reshape(nq, 2 * k)
    gM = ((dL * kc)[:, None, None] * db).reshape(nq, 2 * k)
    if not tangent:
        return gN, gM, None

    I2 = np.eye(2)
    N0 = EA * ec
    M0 = EI * kc
    deF = de.reshape(nq, 2 * k)
    dbF = db.reshape(nq, 2 * k)
    K = (EA * iA2)[:, None, None] * deF[:, :, None] * deF[:, None, :]
    K += (EI * iA2)[:, None, None] * dbF[:, :, None] * dbF[:, None, :]
    nn = np.einsum("qa,qb->qab", dN, dN)
    K += (N0[:, None, None, None, None] * nn[:, :, None, :, None]
          * I2[None, None, :, None, :]).reshape(nq, 2 * k, 2 * k)

    # second variation of the curvature b11 = c / s
    Jm = np.array([[0.0, 1.0], [-1.0, 0.0]])
    mpb = np.stack([b[:, 1], -b[:, 0]], axis=1)                # -perp(a1_1)
    dc = dN[:, :, None] * mpb[:, None, :] + ddN[:, :, None] * pa1[:, None, :]
    ds = dN[:, :, None] * (a1 / s[:, None])[:, None, :]
    dcF, dsF = dc.reshape(nq, 2 * k), ds.reshape(nq, 2 * k)
    anti = np.einsum("qa,qb->qab", dN, ddN)
    anti = anti - anti.transpose(0, 2, 1)
    d2c = (anti[:, :, None, :, None] * Jm[None, None, :, None, :]).reshape(nq, 2 * k, 2 * k)
    P = I2[None] / s[:, None, None] - np.einsum("qi,qj->qij", a1, a1) / s[:, None, None] ** 3
    d2s = (nn[:, :, None, :, None] * P[:, None, :, None, :]).reshape(nq, 2 * k, 2 * k)
    s2 = s * s
    d2b = (d2c / s[:, None, None]
           - (dcF[:, :, None] * dsF[:, None, :] + dsF[:, :, None] * dcF[:, None, :]) / s2[:, None, None]
           - (c / s2)[:, None, None] * d2s
           + (2.0 * c / (s2 * s))[:, None, None] * dsF[:, :, None] * dsF[:, None, :])
    K += M0[:, None, None] * d2b
    K *= dL[:, None, None]
    return gN, gM, K


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _kernel_nb(x, conn, dN, ddN, dL, A11, B11, EA, EI, tangent, gN, gM, K):
        nq, k = conn.shape
        de = np.empty(2 * k)
        db = np.empty(2 * k)
        dc = np.empty(2 * k)
        ds = np.empty(2 * k)
        for q in range(nq):
            a1x = 0.0
            a1z = 0.0
            bx = 0.0
            bz = 0.0
            for a in range(k):
                ci = conn[q, a]
                a1x += dN[q, a] * x[ci, 0]
                a1z += dN[q, a] * x[ci, 1]
                bx += ddN[q, a] * x[ci, 0]
                bz += ddN[q, a] * x[ci, 1]
            a11 = a1x * a1x + a1z * a1z
            if a11 < 1e-14:
                return q
            s = np.sqrt(a11)
            nx = -a1z / s
            nz = a1x / s
            c = a1x * bz - a1z * bx
            b11 = c / s
            gam = (bx * a1x + bz * a1z) / a11
            iA2 = 1.0 / (A11[q] * A11[q])
            ec = 0.5 * (a11 - A11[q]) * iA2
            kc = (b11 - B11[q]) * iA2
            w = dL[q]
            for a in range(k):
                cov = ddN[q, a] - gam * dN[q, a]
                de[2 * a] = dN[q, a] * a1x
                de[2 * a + 1] = dN[q, a] * a1z
                db[2 * a] = cov * nx
                db[2 * a + 1] = cov * nz
                gN[q, 2 * a] = w * ec * de[2 * a]
                gN[q, 2 * a + 1] = w * ec * de[2 * a + 1]
                gM[q, 2 * a] = w * kc * db[2 * a]
                gM[q, 2 * a + 1] = w * kc * db[2 * a + 1]
            if not tangent:
                continue
            ea = EA[q]
            ei = EI[q]
            N0 = ea * ec
            M0 = ei * kc
            for a in range(k):
                dc[2 * a] = dN[q, a] * bz - ddN[q, a] * a1z
                dc[2 * a + 1] = -dN[q, a] * bx + ddN[q, a] * a1x
                ds[2 * a] = dN[q, a] * a1x / s
                ds[2 * a + 1] = dN[q, a] * a1z / s
            s2 = a11
            s3 = a11 * s
            for a in range(k):
                for i in range(2):
                    r = 2 * a + i
                    for bb in range(k):
                        nab = dN[q, a] * dN[q, bb]
                        anti = dN[q, a] * ddN[q, bb] - ddN[q, a] * dN[q, bb]
                        for j in range(2):
                            col = 2 * bb + j
                            val = ea * iA2 * de[r] * de[col] + ei * iA2 * db[r] * db[col]
                            if i == j:
                                val += N0 * nab
                            if ei != 0.0:
                                # Jm = [[0, 1], [-1, 0]]
                                jm = 0.0
                                if i == 0 and j == 1:
                                    jm = 1.0
                                elif i == 1 and j == 0:
                                    jm = -1.0
                                a1i = a1x if i == 0 else a1z
                                a1j = a1x if j == 0 else a1z
                                d2s = nab * ((1.0 / s if i == j else 0.0) - a1i * a1j / s3)
                                d2b = (anti * jm / s
                                       - (dc[r] * ds[col] + ds[r] * dc[col]) / s2
                                       - c * d2s / s2
                                       + 2.0 * c * ds[r] * ds[col] / s3)
                                val += M0 * d2b
                            K[q, r, col] = w * val
        return -1


def qp_forces_numba(x, conn, dN, ddN, dL, A11, B11, EA, EI, tangent=True):
    """Compiled loop evaluation with the same contract as :func:`qp_forces_numpy`."""
    if not _HAVE_NUMBA:  # pragma: no cover
        raise RuntimeError("numba is not available")
    nq, k = conn.shape
    gN = np.empty((nq, 2 * k))
    gM = np.empty((nq, 2 * k))
    K = np.empty((nq, 2 * k, 2 * k)) if tangent else np.empty((0, 2 * k, 2 * k))
    f64 = np.ascontiguousarray
    bad = _kernel_nb(f64(x, dtype=np.float64), f64(conn, dtype=np.int64), f64(dN), f64(ddN),
                     f64(dL), f64(A11), f64(B11), f64(EA, dtype=np.float64),
                     f64(EI, dtype=np.float64), tangent, gN, gM, K)
    if bad >= 0:
        raise SingularGeometryError(f"degenerate tangent at quadrature point {bad}")
    return gN, gM, (K if tangent else None)


def qp_forces(x, conn, dN, ddN, dL, A11, B11, EA, EI, tangent=True):
    """Dispatch to the active backend."""
    fn = qp_forces_numba if use_numba() else qp_forces_numpy
    return fn(x, conn, dN, ddN, dL, A11, B11, EA, EI, tangent)
