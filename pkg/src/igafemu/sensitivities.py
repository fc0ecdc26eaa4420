"""Analytical derivatives of static and modal responses w.r.t. material nodal values."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fe import BeamModel
from .material import MaterialField
from .modal import ModalError, ModalSolution

__all__ = [
    "assemble_S_EA",
    "assemble_S_EI",
    "element_sensitivity_blocks",
    "MassSensitivity",
    "build_Z",
    "du_dq",
    "dmode_dq",
]


def _require_field(fld, name):
    if not isinstance(fld, MaterialField):
        raise TypeError(f"{name} must be a MaterialField to take derivatives")
    return fld


def _parts(model: BeamModel, u, parts):
    return model.internal(u, tangent=False)[2] if parts is None else parts


def assemble_S_EA(model: BeamModel, u, parts=None) -> np.ndarray:
    """``d f_int / d q_EA`` as a dense ``(n_dof, n_EA)`` array."""
    fld = _require_field(model.problem.ea, "EA")
    qs, gN, _ = _parts(model, u, parts)[-1 if model.memb is not None else 0]
    return np.asarray((qs.scatter_matrix(gN, model.n_dof) @ model.Q(fld, qs)).todense())


def assemble_S_EI(model: BeamModel, u, parts=None) -> np.ndarray:
    """``d f_int / d q_EI`` as a dense ``(n_dof, n_EI)`` array."""
    fld = _require_field(model.problem.ei, "EI")
    qs, _, gM = _parts(model, u, parts)[0]
    return np.asarray((qs.scatter_matrix(gM, model.n_dof) @ model.Q(fld, qs)).todense())


def element_sensitivity_blocks(model: BeamModel, u, element: int, which: str = "EA") -> dict:
    """Per material element blocks of one NURBS element, ``{me: (2(p+1), n_me_nodes)}``."""
    fld = _require_field(model.problem.ea if which == "EA" else model.problem.ei, which)
    qs = model.bend
    parts = model.internal(u, tangent=False)[2]
    g = parts[0][1] if which == "EA" else parts[0][2]
    sel = np.flatnonzero(qs.element == element)
    mesh = fld.mesh
    me = mesh.locate(qs.owner_mid[sel])
    out = {}
    for m in np.unique(me):
        s = sel[me == m]
        Nb = mesh.shape(m, mesh.master(m, qs.xi[s]))
        out[int(m)] = g[s].T @ Nb
    return out


@dataclass
class MassSensitivity:
    """Sparse 3-index array ``Z[i, j, k] = d M[i, j] / d rho_k`` stored as coordinates."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    val: np.ndarray
    shape: tuple

    def contract(self, u) -> np.ndarray:
        """``[Z u]_{ik} = sum_j Z_ijk u_j`` as a dense ``(n_dof, n_rho)`` array."""
        n, _, nk = self.shape
        out = np.bincount(self.i * nk + self.k, weights=self.val * np.asarray(u)[self.j],
                          minlength=n * nk)
        return out.reshape(n, nk)

    def slice(self, k: int) -> sp.csr_matrix:
        sel = self.k == k
        return sp.csr_matrix((self.val[sel], (self.i[sel], self.j[sel])), shape=self.shape[:2])


def build_Z(model: BeamModel) -> MassSensitivity:
    """Mass sensitivity on the reference configuration (independent of the density values)."""
    fld = _require_field(model.problem.rho, "rho")
    qs = model.bend
    Q = model.Q(fld, qs).tocoo()
    n = model.n_dof
    nk = fld.mesh.n_nodes
    c = model.problem.width * qs.dL
    k = qs.k
    a, b = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    a, b = a.ravel(), b.ravel()
    q = Q.row
    base = (c[q] * Q.data)[:, None] * qs.N[q][:, a] * qs.N[q][:, b]      # (nnz, k*k)
    ci, cj = qs.conn[q][:, a], qs.conn[q][:, b]
    I, J, K, V = [], [], [], []
    for comp in (0, 1):
        I.append((2 * ci + comp).ravel())
        J.append((2 * cj + comp).ravel())
        K.append(np.repeat(Q.col, k * k))
        V.append(base.ravel())
    I, J, K, V = map(np.concatenate, (I, J, K, V))
    lin = (I.astype(np.int64) * n + J) * nk + K
    uniq, inv = np.unique(lin, return_inverse=True)
    vals = np.bincount(inv, weights=V)
    K = uniq % nk
    IJ = uniq // nk
    return MassSensitivity(IJ // n, IJ % n, K, vals, (n, n, nk))


def du_dq(model: BeamModel, u, S, load_factor: float = 1.0) -> np.ndarray:
    """Displacement sensitivities ``-K^{-1} S`` on the independent dofs, expanded."""
    T = model.elimination[0]
    _, K, _ = model.residual(u, load_factor, tangent=True)
    lu = spla.splu(model.reduce(K))
    X = lu.solve(np.asarray(T.T @ S))
    return -(T @ X)


def dmode_dq(model: BeamModel, solution: ModalSolution, i: int, Z: MassSensitivity,
             K_r=None, M_r=None):
    """Derivatives of mode ``i`` and its circular frequency w.r.t. the density nodes.

    Returns ``(dU, domega)`` with ``dU`` of shape ``(n_dof, n_rho)``.
    """
    if solution.near_repeated[i]:
        raise ModalError(f"mode {i} has a near-repeated eigenvalue; derivative undefined")
    T = model.elimination[0]
    if K_r is None:
        K_r = model.reduce(model.stiffness())
    if M_r is None:
        M_r = model.reduce(model.mass())
    Kd = K_r.toarray() if sp.issparse(K_r) else K_r
    Md = M_r.toarray() if sp.issparse(M_r) else M_r
    om = solution.omegas[i]
    v = solution.reduced[:, i]
    Mv = Md @ v
    # K v = omega^2 M v is used wherever it avoids a cancelling product with K
    A = om**2 * Md + 2.0 * om**2 * np.outer(Mv, Mv) - Kd
    rhs = -om**2 * (T.T @ Z.contract(solution.modes[:, i]))
    dv = sla.lu_solve(sla.lu_factor(A), rhs)
    dom = om * (Mv @ dv)
    return T @ dv, dom
