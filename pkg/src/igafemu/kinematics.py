"""Pointwise kinematics of a planar rotation-free beam axis.

The unit normal is the unit tangent rotated by +90 degrees in-plane,
``n = (-a1_z, a1_x) / |a1|``. Positive pressure acts along ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SingularGeometryError", "PointKinematics", "point_kinematics", "variations", "perp"]

#: smallest admissible metric component a11 (dimensionless)
METRIC_FLOOR = 1e-14


class SingularGeometryError(ArithmeticError):
    """Degenerate tangent vector (a11 or A11 below the floor)."""


def perp(v):
    """In-plane rotation by +90 degrees."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True)
class PointKinematics:
    a1: np.ndarray
    A1: np.ndarray
    a11: float
    A11: float
    n: np.ndarray
    N: np.ndarray
    b11: float
    B11: float
    Gamma: float
    lam: float
    eps11: float
    kappa11: float
    eps_contra: float
    kappa_contra: float
    eps0: float
    kappa0: float
    eps_phys: float
    kappa_phys: float
    a1_1: np.ndarray  # current a_{1,1}


def _metric(cp, dN, ddN):
    t = dN @ cp
    tt = ddN @ cp
    g = float(t @ t)
    if g < METRIC_FLOOR:
        raise SingularGeometryError(f"degenerate tangent, a11 = {g:.3e}")
    s = np.sqrt(g)
    n = perp(t) / s
    b = float(n @ tt)
    return t, tt, g, n, b


def point_kinematics(ref_cp, cur_cp, basis) -> PointKinematics:
    """Kinematic quantities at one point.

    Parameters
    ----------
    ref_cp, cur_cp : (n_e, 2) array
        Reference and current element control points.
    basis : tuple
        ``(R, dR, ddR)`` at the point, each of length ``n_e``.
    """
    _, dR, ddR = (np.asarray(b, dtype=float) for b in basis)
    A1, _, A11, N, B11 = _metric(np.asarray(ref_cp, float), dR, ddR)
    a1, a1_1, a11, n, b11 = _metric(np.asarray(cur_cp, float), dR, ddR)
    eps11 = 0.5 * (a11 - A11)
    kap11 = b11 - B11
    return PointKinematics(
        a1=a1, A1=A1, a11=a11, A11=A11, n=n, N=N, b11=b11, B11=B11,
        Gamma=float(a1_1 @ a1) / a11,
        lam=np.sqrt(a11 / A11),
        eps11=eps11, kappa11=kap11,
        eps_contra=eps11 / A11**2, kappa_contra=kap11 / A11**2,
        eps0=eps11 / A11, kappa0=kap11 / A11,
        eps_phys=eps11 / a11, kappa_phys=kap11 / a11,
        a1_1=a1_1,
    )


def variations(kin: PointKinematics, basis):
    """Rows of the strain and curvature variations per element dof.

    Returns ``(d_eps, d_kappa)``, each of length ``2 n_e`` ordered
    ``[x_1, z_1, x_2, z_2, ...]``, such that ``delta eps11 = d_eps @ delta_x``.
    The curvature row uses the covariant second derivative
    ``N_{,11} - Gamma N_{,1}``.
    """
    _, dR, ddR = (np.asarray(b, dtype=float) for b in basis)
    d_eps = (dR[:, None] * kin.a1[None, :]).ravel()
    cov = ddR - kin.Gamma * dR
    d_kap = (cov[:, None] * kin.n[None, :]).ravel()
    return d_eps, d_kap
