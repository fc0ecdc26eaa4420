"""Small-amplitude eigenanalysis about the unloaded reference configuration."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .fe import BeamModel

log = logging.getLogger(__name__)

__all__ = ["ModalError", "ModalSolution", "solve_modes", "sample_mode", "align_sign",
           "normalize_samples", "write_modal_csv", "DENSE_LIMIT"]

#: reduced dof count up to which the dense generalized solver is used
DENSE_LIMIT = 1500
GAP_TOL = 1e-8


class ModalError(RuntimeError):
    pass


@dataclass
class ModalSolution:
    """Mass-normalized eigenpairs in ascending order.

    ``modes`` holds full-length dof vectors (one column per mode), ``reduced``
    the same vectors on the independent dofs.
    """

    omegas: np.ndarray
    modes: np.ndarray
    reduced: np.ndarray
    near_repeated: np.ndarray
    checks: dict = field(default_factory=dict)

    @property
    def n_mode(self) -> int:
        return self.omegas.size


def _sign_fix(V):
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def solve_modes(model: BeamModel, n_mode: int, dense_limit: int = DENSE_LIMIT) -> ModalSolution:
    """Lowest ``n_mode`` eigenpairs of ``K u = omega^2 M u`` with constraints eliminated."""
    T, up, free = model.elimination
    if np.any(up != 0):
        raise ModalError("modal analysis requires homogeneous constraints")
    if not 1 <= n_mode <= free.size:
        raise ModalError(f"cannot extract {n_mode} modes from {free.size} free dofs")
    Kr = model.reduce(model.stiffness())
    Mr = model.reduce(model.mass())
    D = model.strain_operator() @ T
    try:
        if free.size <= dense_limit:
            lam, V = sla.eigh(Kr.toarray(), Mr.toarray(), subset_by_index=[0, n_mode - 1])
        else:
            lam, V = spla.eigsh(Kr, k=n_mode, M=Mr, sigma=0.0, which="LM")
        # Rayleigh-Ritz pass with the stiffness as a Gram matrix: v^T K v = ||D v||^2
        # keeps small bending eigenvalues accurate where v @ (K @ v) cancels
        B = D @ V
        lam, Y = sla.eigh(B.T @ B, V.T @ (Mr @ V))
        V = V @ Y
    except (np.linalg.LinAlgError, sla.LinAlgError, spla.ArpackError) as exc:
        raise ModalError(f"eigensolver failed: {exc}") from exc
    if np.any(lam <= 0):
        raise ModalError("non-positive eigenvalue; the structure is not restrained")
    V = V / np.sqrt(np.einsum("ij,ij->j", V, Mr @ V))
    V = _sign_fix(V)
    omegas = np.sqrt(lam)
    gaps = np.diff(omegas)
    near = np.zeros(n_mode, dtype=bool)
    bad = gaps < GAP_TOL * omegas[1:]
    near[1:] |= bad
    near[:-1] |= bad
    if near.any():
        log.warning("near-repeated eigenvalues at modes %s", np.flatnonzero(near))
    MV = Mr @ V
    ortho = float(np.abs(V.T @ MV - np.eye(n_mode)).max())
    DV = D @ V
    rq = float(np.abs(np.einsum("ij,ij->j", DV, DV) / lam - 1.0).max())
    if ortho > 1e-10 or rq > 1e-8:
        raise ModalError(f"eigenvector checks failed (orthonormality {ortho:.2e}, Rayleigh {rq:.2e})")
    return ModalSolution(omegas, T @ V, V, near, {"orthonormality": ortho, "rayleigh": rq})


def sample_mode(model: BeamModel, solution: ModalSolution, index: int, xi) -> np.ndarray:
    """Interleaved ``[ux, uz]`` samples of one mode at parameters ``xi``."""
    xi = np.atleast_1d(np.asarray(xi, float))
    if xi.size == 0:
        raise ValueError("empty sample set")
    return model.sampling_matrix(xi) @ solution.modes[:, index]


def normalize_samples(U: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(U)
    if nrm == 0:
        raise ValueError("zero mode samples")
    return U / nrm


def align_sign(samples: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Flip ``samples`` when they point away from ``reference``; ties keep the sign."""
    samples = np.asarray(samples, float)
    reference = np.asarray(reference, float)
    if not np.any(samples) or not np.any(reference):
        raise ValueError("cannot align zero vectors")
    return -samples if samples @ reference < 0 else samples


def write_modal_csv(path, model: BeamModel, solution: ModalSolution, xi):
    xi = np.atleast_1d(np.asarray(xi, float))
    P = model.sampling_matrix(xi)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "omega", "xi", "ux", "uz"])
        for i, om in enumerate(solution.omegas):
            U = P @ solution.modes[:, i]
            for j, x in enumerate(xi):
                w.writerow([i + 1, repr(float(om)), repr(float(x)),
                            repr(float(U[2 * j])), repr(float(U[2 * j + 1]))])
