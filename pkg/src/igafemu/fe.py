"""Finite element core for planar rotation-free beams.

A :class:`BeamProblem` bundles geometry, constraints, loads and material
fields. :class:`BeamModel` turns it into flat batches of quadrature points
(one batch for the NURBS bending/membrane terms, plus a second batch of
linear membrane elements for the B2M1 scheme), assembles global vectors and
sparse matrices, and runs the Newton load-stepping solver.

Dofs are interleaved per control point, ``[x_0, z_0, x_1, z_1, ...]``.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import qp_forces
from .kinematics import METRIC_FLOOR, SingularGeometryError, perp
from .material import (MaterialError, MaterialField, as_callable, build_map,
                       interpolation_matrix, split_nonconforming)
from .splines import NurbsCurve, SplineError, bernstein, gauss_legendre, rationalize

log = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "Constraints",
    "LoadProgram",
    "BeamProblem",
    "StaticState",
    "QuadSet",
    "BeamModel",
    "dof",
    "basis_at",
    "element_internal_forces",
    "element_tangent",
    "element_mass",
    "external_forces",
    "solve_static",
    "assemble_b2m1",
    "l2_error",
]

SCHEMES = ("B2M2", "B2M1")
#: Newton also stops once the update is this small relative to the solution;
#: on very fine meshes round-off puts a floor under the force residual
STEP_TOL = 1e-10
#: a residual that stops shrinking is accepted when it is this small relative to
#: the load; at tiny strains round-off in a11 - A11 bounds the attainable residual
STALL_TOL = 1e-6
_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])  # perp(v) == _ROT @ v


class SolverError(RuntimeError):
    """Newton failure; carries the last reduced residual norm."""

    def __init__(self, msg, residual=np.nan, load_factor=np.nan):
        super().__init__(msg)
        self.residual = residual
        self.load_factor = load_factor


def dof(cp: int, comp: int) -> int:
    """Global dof index of component ``comp`` (0 = x, 1 = z) of control point ``cp``."""
    return 2 * int(cp) + int(comp)


# --------------------------------------------------------------------- constraints

@dataclass
class Constraints:
    """Dirichlet values and linear multi-point ties, eliminated exactly."""

    fixed: dict = field(default_factory=dict)
    linear: list = field(default_factory=list)

    def fix(self, d: int, value: float = 0.0) -> "Constraints":
        d = int(d)
        if d in self.fixed:
            raise ValueError(f"dof {d} constrained twice")
        self.fixed[d] = float(value)
        return self

    def tie(self, slave: int, master: int) -> "Constraints":
        """``u[slave] == u[master]``."""
        return self.add_linear({int(slave): 1.0, int(master): -1.0}, 0.0)

    def add_linear(self, coeffs: dict, value: float = 0.0) -> "Constraints":
        self.linear.append(({int(k): float(v) for k, v in coeffs.items()}, float(value)))
        return self

    def clamp(self, curve: NurbsCurve, end: int) -> "Constraints":
        """Keep the end tangent direction: the second control point moves with the first
        perpendicular to the reference tangent."""
        n = curve.n_control_points
        i0, i1 = (0, 1) if end == 0 else (n - 1, n - 2)
        t = curve.control_points[i1] - curve.control_points[i0]
        m = perp(t / np.linalg.norm(t))
        return self.add_linear({dof(i1, 0): m[0], dof(i1, 1): m[1],
                                dof(i0, 0): -m[0], dof(i0, 1): -m[1]}, 0.0)

    def elimination(self, n_dof: int):
        """Affine map ``u = T v + u_p`` onto the independent dofs ``v``.

        Returns ``(T, u_p, free)`` with ``T`` sparse ``(n_dof, n_free)``.
        """
        rep: dict[int, tuple[dict, float]] = {}
        for d, v in self.fixed.items():
            if not 0 <= d < n_dof:
                raise ValueError(f"constrained dof {d} out of range")
            rep[d] = ({}, v)
        for coeffs, value in self.linear:
            comb: dict[int, float] = {}
            const = 0.0
            for d, c in coeffs.items():
                if not 0 <= d < n_dof:
                    raise ValueError(f"constrained dof {d} out of range")
                if d in rep:
                    m, k0 = rep[d]
                    const += c * k0
                    for mm, cc in m.items():
                        comb[mm] = comb.get(mm, 0.0) + c * cc
                else:
                    comb[d] = comb.get(d, 0.0) + c
            scale = max((abs(c) for c in coeffs.values()), default=1.0)
            comb = {d: c for d, c in comb.items() if abs(c) > 1e-14 * scale}
            if not comb:
                if abs(value - const) > 1e-12 * max(1.0, abs(value)):
                    raise ValueError("inconsistent linear constraints")
                continue
            slave = None
            for d, c in comb.items():  # first listed wins ties
                if slave is None or abs(c) > abs(comb[slave]) * (1 + 1e-12):
                    slave = d
            cs = comb.pop(slave)
            new = ({d: -c / cs for d, c in comb.items()}, (value - const) / cs)
            for s, (m, k0) in list(rep.items()):
                if slave in m:
                    c = m.pop(slave)
                    for d, cc in new[0].items():
                        m[d] = m.get(d, 0.0) + c * cc
                    rep[s] = (m, k0 + c * new[1])
            rep[slave] = new
        free = np.array([d for d in range(n_dof) if d not in rep], dtype=int)
        col = {d: i for i, d in enumerate(free)}
        rows = list(free)
        cols = list(range(free.size))
        vals = [1.0] * free.size
        up = np.zeros(n_dof)
        for s, (m, k0) in rep.items():
            up[s] = k0
            for d, c in m.items():
                rows.append(s)
                cols.append(col[d])
                vals.append(c)
        T = sp.csr_matrix((vals, (rows, cols)), shape=(n_dof, free.size))
        return T, up, free

    def to_dict(self):
        return {"fixed": [[d, v] for d, v in sorted(self.fixed.items())],
                "linear": [[[[d, c] for d, c in co.items()], v] for co, v in self.linear]}


# --------------------------------------------------------------------- loads

@dataclass
class LoadProgram:
    """Loads at unit load factor.

    dead_load : force per unit reference length, (fx, fz)
    pressure : follower pressure along the current normal, force per unit current length
    point_forces : list of (xi, (fx, fz)) dead forces at the curve ends
    end_forces : list of (xi, N, S) follower forces along the outward tangent / normal
    end_moments : list of (xi, M)
    """

    dead_load: tuple | None = None
    pressure: float = 0.0
    point_forces: list = field(default_factory=list)
    end_forces: list = field(default_factory=list)
    end_moments: list = field(default_factory=list)

    def __post_init__(self):
        for entry in list(self.point_forces) + list(self.end_forces) + list(self.end_moments):
            xi = float(entry[0])
            if not (np.isclose(xi, 0.0) or np.isclose(xi, 1.0)):
                raise ValueError(f"concentrated loads are only admitted at the ends, got xi = {xi}")

    @property
    def is_follower(self) -> bool:
        return bool(self.pressure) or bool(self.end_forces) or bool(self.end_moments)

    def scaled(self, c: float) -> "LoadProgram":
        return LoadProgram(
            None if self.dead_load is None else tuple(c * np.asarray(self.dead_load)),
            c * self.pressure,
            [(xi, tuple(c * np.asarray(f))) for xi, f in self.point_forces],
            [(xi, c * N, c * S) for xi, N, S in self.end_forces],
            [(xi, c * M) for xi, M in self.end_moments])


# --------------------------------------------------------------------- problem

@dataclass
class BeamProblem:
    curve: NurbsCurve
    constraints: Constraints
    loads: LoadProgram
    ea: object = 1.0
    ei: object = 1.0
    rho: object = 1.0
    scheme: str = "B2M2"
    width: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown membrane scheme {self.scheme!r}")
        if self.scheme == "B2M1" and self.curve.degree != 2:
            raise ValueError("B2M1 requires a quadratic bending discretization")

    @property
    def n_dof(self) -> int:
        return 2 * self.curve.n_control_points

    def replace(self, **kw) -> "BeamProblem":
        return dataclasses.replace(self, **kw)


@dataclass
class StaticState:
    u: np.ndarray
    load_factor: float
    residual_norm: float
    iterations: int = 0
    history: list = field(default_factory=list)


# --------------------------------------------------------------------- quadrature batches

@dataclass
class QuadSet:
    """Flat batch of quadrature points sharing one shape-function count."""

    name: str
    element: np.ndarray      # owning element (B2 element or M1 element)
    conn: np.ndarray         # (nq, k) control-point indices
    N: np.ndarray
    dN: np.ndarray
    ddN: np.ndarray
    w: np.ndarray            # parametric weight
    xi: np.ndarray           # global parameter of the point
    owner_mid: np.ndarray    # midpoint of the integration (sub)interval
    A11: np.ndarray
    B11: np.ndarray
    dL: np.ndarray           # reference length element
    split_key: object = None

    @property
    def nq(self) -> int:
        return self.conn.shape[0]

    @property
    def k(self) -> int:
        return self.conn.shape[1]

    def dofs(self) -> np.ndarray:
        c = self.conn
        return np.stack([2 * c, 2 * c + 1], axis=-1).reshape(c.shape[0], -1)

    def scatter(self, vals: np.ndarray, n_dof: int) -> np.ndarray:
        return np.bincount(self.dofs().ravel(), weights=np.asarray(vals).ravel(), minlength=n_dof)

    def scatter_matrix(self, vals: np.ndarray, n_dof: int) -> sp.csr_matrix:
        """Sparse ``(n_dof, nq)`` operator whose column q holds ``vals[q]`` at the point's dofs."""
        d = self.dofs()
        cols = np.repeat(np.arange(self.nq), d.shape[1])
        return sp.csr_matrix((np.asarray(vals).ravel(), (d.ravel(), cols)), shape=(n_dof, self.nq))


def _reference_metrics(X, conn, dN, ddN):
    Xe = X[conn]
    A1 = np.einsum("qa,qai->qi", dN, Xe)
    A1_1 = np.einsum("qa,qai->qi", ddN, Xe)
    A11 = np.einsum("qi,qi->q", A1, A1)
    if np.any(A11 < METRIC_FLOOR):
        raise SingularGeometryError("degenerate reference tangent")
    Nn = perp(A1) / np.sqrt(A11)[:, None]
    B11 = np.einsum("qi,qi->q", Nn, A1_1)
    return A11, B11


def basis_at(curve: NurbsCurve, xi):
    """Element index, connectivity and rational basis (with derivatives) at parameters ``xi``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    el = curve.locate(xi)
    conn_all = curve.connectivity()
    bounds = curve.element_bounds()
    p = curve.degree
    R = np.empty((xi.size, p + 1))
    dR = np.empty_like(R)
    ddR = np.empty_like(R)
    for e in np.unique(el):
        sel = el == e
        lo, hi = bounds[e]
        t = (2.0 * xi[sel] - lo - hi) / (hi - lo)
        B, dB, ddB = bernstein(p, t)
        C = curve.extraction[e]
        J = 2.0 / (hi - lo)
        R[sel], dR[sel], ddR[sel] = rationalize(B @ C.T, (dB @ C.T) * J, (ddB @ C.T) * J * J,
                                                curve.weights[conn_all[e]])
    return el, conn_all[el], R, dR, ddR


def _bending_set(curve: NurbsCurve, n_gauss: int | None = None) -> QuadSet:
    p = curve.degree
    ng = n_gauss or p + 1
    t, wg = gauss_legendre(ng)
    B, dB, ddB = bernstein(p, t)
    conn_all = curve.connectivity()
    bounds = curve.element_bounds()
    ne = curve.n_elements
    R = np.empty((ne, ng, p + 1))
    dR = np.empty_like(R)
    ddR = np.empty_like(R)
    for e in range(ne):
        lo, hi = bounds[e]
        if hi <= lo:
            raise SplineError("degenerate knot span")
        C = curve.extraction[e]
        J = 2.0 / (hi - lo)
        R[e], dR[e], ddR[e] = rationalize(B @ C.T, (dB @ C.T) * J, (ddB @ C.T) * J * J,
                                          curve.weights[conn_all[e]])
    h = bounds[:, 1] - bounds[:, 0]
    xi = (bounds[:, :1] + (t[None, :] + 1.0) * h[:, None] / 2.0).ravel()
    w = (wg[None, :] * h[:, None] / 2.0).ravel()
    conn = np.repeat(conn_all, ng, axis=0)
    dN = dR.reshape(-1, p + 1)
    ddN = ddR.reshape(-1, p + 1)
    A11, B11 = _reference_metrics(curve.control_points, conn, dN, ddN)
    element = np.repeat(np.arange(ne), ng)
    return QuadSet("bending", element, conn, R.reshape(-1, p + 1), dN, ddN, w, xi,
                   np.repeat(bounds.mean(axis=1), ng), A11, B11, np.sqrt(A11) * w)


def _membrane_set(curve: NurbsCurve, split_mesh=None) -> QuadSet:
    """Linear membrane elements between consecutive control points.

    Nodes sit at the Greville abscissae, so interior elements are centred on the
    interior knots. Elements are cut at breakpoints of ``split_mesh``.
    """
    g = curve.knot_vector.greville()
    X = curve.control_points
    t, wg = gauss_legendre(2)
    rows = []
    for j in range(g.size - 1):
        g0, g1 = g[j], g[j + 1]
        pieces = (split_nonconforming((g0, g1), split_mesh) if split_mesh is not None
                  else [((g0, g1), -1)])
        for (a, b), _ in pieces:
            xs = a + (t + 1.0) * (b - a) / 2.0
            for xq, wq in zip(xs, wg):
                rows.append((j, xq, wq * (b - a) / 2.0, 0.5 * (a + b), g0, g1))
    arr = np.array(rows)
    j = arr[:, 0].astype(int)
    xq, w, mid, g0, g1 = arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5]
    d = g1 - g0
    N = np.column_stack([(g1 - xq) / d, (xq - g0) / d])
    dN = np.column_stack([-1.0 / d, 1.0 / d])
    ddN = np.zeros_like(dN)
    conn = np.column_stack([j, j + 1])
    A1 = (X[j + 1] - X[j]) / d[:, None]
    A11 = np.einsum("qi,qi->q", A1, A1)
    if np.any(A11 < METRIC_FLOOR):
        raise SingularGeometryError("coincident control points")
    return QuadSet("membrane", j, conn, N, dN, ddN, w, xq, mid, A11, np.zeros_like(A11),
                   np.sqrt(A11) * w, split_key=split_mesh)


def assemble_b2m1(problem: BeamProblem):
    """Membrane and bending quadrature batches of the hybrid scheme.

    Returns ``(membrane, bending)``; the membrane batch uses linear elements on the
    control polygon, the bending batch the quadratic NURBS elements.
    """
    if problem.curve.degree != 2:
        raise ValueError("B2M1 requires quadratic NURBS")
    if problem.curve.n_control_points != problem.curve.n_elements + 2:
        raise ValueError("B2M1 requires a C1 (single interior knot multiplicity) mesh")
    mesh = problem.ea.mesh if isinstance(problem.ea, MaterialField) else None
    return _membrane_set(problem.curve, mesh), _bending_set(problem.curve)


# --------------------------------------------------------------------- model

class BeamModel:
    """Discretized beam: quadrature batches, assembly and solvers."""

    def __init__(self, problem: BeamProblem):
        self.problem = problem
        self.curve = problem.curve
        self.X = problem.curve.control_points
        self.n_dof = problem.n_dof
        self.bend = _bending_set(problem.curve)
        self.memb = None
        if problem.scheme == "B2M1":
            self.memb, _ = assemble_b2m1(problem)
        self._Qcache: dict = {}
        self._elim = problem.constraints.elimination(self.n_dof)
        self._dead = None
        self._conform_checked: set = set()
        self._refresh()

    # ---- fields
    def update(self, **fields) -> "BeamModel":
        """Swap material fields (``ea``, ``ei``, ``rho``) keeping the discretization."""
        self.problem = self.problem.replace(**fields)
        if self.memb is not None and isinstance(self.problem.ea, MaterialField):
            if self.memb.split_key is not self.problem.ea.mesh:
                old = self.memb.split_key
                same = (old is not None
                        and np.array_equal(old.breakpoints, self.problem.ea.mesh.breakpoints))
                if not same:
                    self.memb, _ = assemble_b2m1(self.problem)
        self._refresh()
        return self

    def _refresh(self):
        p = self.problem
        if p.scheme == "B2M2":
            self._ea_b = self.field_qp(p.ea, self.bend)
            self._ea_m = None
        else:
            self._ea_b = np.zeros(self.bend.nq)
            self._ea_m = self.field_qp(p.ea, self.memb)
        self._ei_b = self.field_qp(p.ei, self.bend)

    def Q(self, fld: MaterialField, qs: QuadSet) -> sp.csr_matrix:
        """Interpolation matrix from the nodal values of ``fld`` to the points of ``qs``."""
        mesh = fld.mesh
        key = (id(mesh), id(qs))
        hit = self._Qcache.get(key)
        if hit is not None and hit[0] is mesh and hit[1] is qs:
            return hit[2]
        if qs is self.bend and key not in self._conform_checked:
            build_map(self.curve.element_bounds(), mesh)
            self._conform_checked.add(key)
        me = mesh.locate(qs.owner_mid)
        Qm = interpolation_matrix(mesh, qs.xi, me)
        self._Qcache[key] = (mesh, qs, Qm)
        return Qm

    def field_qp(self, fld, qs: QuadSet) -> np.ndarray:
        if isinstance(fld, MaterialField):
            vals = self.Q(fld, qs) @ fld.values
        else:
            vals = np.asarray(as_callable(fld)(qs.xi), dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise MaterialError("material field negative or non-finite at a quadrature point")
        return vals

    # ---- sets paired with their stiffness values
    def _sets(self):
        out = [(self.bend, self._ea_b, self._ei_b)]
        if self.memb is not None:
            out.append((self.memb, self._ea_m, np.zeros(self.memb.nq)))
        return out

    def current(self, u) -> np.ndarray:
        return self.X + np.asarray(u, dtype=float).reshape(-1, 2)

    # ---- internal forces
    def internal(self, u, tangent=True):
        """Internal force vector, tangent and per-point unit force densities.

        Returns ``(f, K, parts)`` with ``parts`` a list of ``(set, gN, gM)``.
        """
        x = self.current(u)
        f = np.zeros(self.n_dof)
        rows, cols, data, parts = [], [], [], []
        for qs, EA, EI in self._sets():
            gN, gM, Kq = qp_forces(x, qs.conn, qs.dN, qs.ddN, qs.dL, qs.A11, qs.B11,
                                   EA, EI, tangent)
            f += qs.scatter(EA[:, None] * gN + EI[:, None] * gM, self.n_dof)
            parts.append((qs, gN, gM))
            if tangent:
                d = qs.dofs()
                rows.append(np.repeat(d, d.shape[1], axis=1).ravel())
                cols.append(np.tile(d, (1, d.shape[1])).ravel())
                data.append(Kq.ravel())
        K = None
        if tangent:
            K = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(self.n_dof, self.n_dof))
        return f, K, parts

    # ---- external forces
    def dead_forces(self) -> np.ndarray:
        if self._dead is None:
            L = self.problem.loads
            f = np.zeros(self.n_dof)
            if L.dead_load is not None:
                f0 = np.asarray(L.dead_load, dtype=float)
                qs = self.bend
                vals = (qs.N * qs.dL[:, None])[:, :, None] * f0[None, None, :]
                f += qs.scatter(vals, self.n_dof)
            for xi, F in L.point_forces:
                _, conn, R, _, _ = basis_at(self.curve, [xi])
                for a, c in enumerate(conn[0]):
                    f[2 * c:2 * c + 2] += R[0, a] * np.asarray(F, dtype=float)
            self._dead = f
        return self._dead

    def external(self, u, load_factor=1.0, tangent=True):
        """External force vector and its derivative w.r.t. ``u`` (follower parts only)."""
        lam = float(load_factor)
        L = self.problem.loads
        f = lam * self.dead_forces()
        Kext = None
        if not L.is_follower or lam == 0.0:
            return f, (sp.csr_matrix((self.n_dof, self.n_dof)) if tangent else None)
        x = self.current(u)
        rows, cols, data = [], [], []
        if L.pressure:
            p = lam * L.pressure
            qs = self.bend
            a1 = np.einsum("qa,qai->qi", qs.dN, x[qs.conn])
            vals = p * (qs.N * qs.w[:, None])[:, :, None] * perp(a1)[:, None, :]
            f += qs.scatter(vals, self.n_dof)
            if tangent:
                d = qs.dofs()
                k = qs.k
                blk = (p * qs.w)[:, None, None, None, None] * \
                    (qs.N[:, :, None, None, None] * qs.dN[:, None, None, :, None]) * \
                    _ROT[None, None, :, None, :]
                rows.append(np.repeat(d, 2 * k, axis=1).ravel())
                cols.append(np.tile(d, (1, 2 * k)).ravel())
                data.append(blk.reshape(qs.nq, 2 * k, 2 * k).ravel())
        for xi, Nb, Sb in L.end_forces:
            fe, ke, dd = self._end_force(x, xi, lam * Nb, lam * Sb)
            f[dd] += fe
            if tangent:
                rows.append(np.repeat(dd, dd.size))
                cols.append(np.tile(dd, dd.size))
                data.append(ke.ravel())
        for xi, M in L.end_moments:
            fe, ke, dd = self._end_moment(x, xi, lam * M)
            f[dd] += fe
            if tangent:
                rows.append(np.repeat(dd, dd.size))
                cols.append(np.tile(dd, dd.size))
                data.append(ke.ravel())
        if tangent:
            if data:
                Kext = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                                     shape=(self.n_dof, self.n_dof))
            else:
                Kext = sp.csr_matrix((self.n_dof, self.n_dof))
        return f, Kext

    def _end_geometry(self, x, xi):
        _, conn, R, dR, _ = basis_at(self.curve, [xi])
        conn, R, dR = conn[0], R[0], dR[0]
        a1 = dR @ x[conn]
        sgn = 1.0 if xi > 0.5 else -1.0
        dd = np.stack([2 * conn, 2 * conn + 1], axis=-1).ravel()
        return conn, R, dR, a1, sgn, dd

    def _end_force(self, x, xi, Nb, Sb):
        conn, R, dR, a1, sgn, dd = self._end_geometry(x, xi)
        s = np.linalg.norm(a1)
        t = a1 / s
        P = (np.eye(2) - np.outer(t, t)) / s       # d t / d a1
        vec = sgn * Nb * t + Sb * perp(t)
        dvec = sgn * Nb * P + Sb * _ROT @ P
        fe = (R[:, None] * vec[None, :]).ravel()
        ke = (R[:, None, None, None] * dR[None, None, :, None] * dvec[None, :, None, :]).reshape(dd.size, dd.size)
        return fe, ke, dd

    def _end_moment(self, x, xi, M):
        conn, R, dR, a1, sgn, dd = self._end_geometry(x, xi)
        a11 = a1 @ a1
        v = perp(a1) / a11
        dv = _ROT / a11 - 2.0 * np.outer(perp(a1), a1) / a11**2
        fe = (-sgn * M * dR[:, None] * v[None, :]).ravel()
        ke = (-sgn * M * dR[:, None, None, None] * dR[None, None, :, None] * dv[None, :, None, :]).reshape(dd.size, dd.size)
        return fe, ke, dd

    # ---- residual and reduction
    def residual(self, u, load_factor=1.0, tangent=True):
        fi, Ki, _ = self.internal(u, tangent)
        fe, Ke = self.external(u, load_factor, tangent)
        return fi - fe, ((Ki - Ke).tocsr() if tangent else None), fe

    @property
    def elimination(self):
        return self._elim

    def reduce(self, K):
        T = self._elim[0]
        return (T.T @ K @ T).tocsc()

    def expand(self, v):
        T, up, _ = self._elim
        return T @ v + up

    # ---- statics
    def solve_static(self, levels: Sequence[float] = (1.0,), u0=None, tol: float = 1e-10,
                     max_iter: int = 30, max_cuts: int = 10) -> list[StaticState]:
        """Newton–Raphson with load stepping through ``levels`` (fractions of the full load).

        Each level is reached from the previous converged one; an increment that fails
        to converge is halved up to ``max_cuts`` times.
        """
        T, up, free = self._elim
        v = np.zeros(free.size) if u0 is None else np.asarray(u0, float)[free]
        lam_prev = 0.0
        states = []
        for target in levels:
            target = float(target)
            lam = lam_prev
            inc = target - lam_prev
            cuts = 0
            last = None
            while True:
                trial = target if abs(target - lam) <= abs(inc) * (1 + 1e-12) else lam + inc
                ok, v_new, info = self._newton(v, trial, tol, max_iter)
                if ok:
                    v, lam, last = v_new, trial, info
                    if trial == target:
                        break
                    continue
                cuts += 1
                if cuts > max_cuts:
                    raise SolverError(f"Newton failed at load factor {trial:.6g}: {info['reason']}",
                                      residual=info["residual"], load_factor=trial)
                inc /= 2.0
                log.debug("halving load increment to %.3g", inc)
            states.append(StaticState(self.expand(v), target, last["residual"], last["iterations"],
                                      last["history"]))
            lam_prev = target
        return states

    def _newton(self, v, lam, tol, max_iter):
        T, up, _ = self._elim
        v = v.copy()
        hist = []
        if lam == 0.0 and not np.any(v) and not np.any(up):
            return True, v, {"residual": 0.0, "iterations": 0, "history": [0.0]}  # stress-free
        try:
            for it in range(max_iter + 1):
                u = T @ v + up
                r, K, fe = self.residual(u, lam, tangent=True)
                rr = T.T @ r
                rn = float(np.linalg.norm(rr))
                scale = float(np.linalg.norm(T.T @ fe))
                hist.append(rn)
                if not np.isfinite(rn):
                    return False, v, {"reason": "non-finite residual", "residual": rn}
                if rn <= tol * scale or rn == 0.0:
                    return True, v, {"residual": rn, "iterations": it, "history": hist}
                if len(hist) >= 3 and rn >= 0.5 * hist[-2] and rn <= STALL_TOL * scale:
                    return True, v, {"residual": rn, "iterations": it, "history": hist}
                if it == max_iter:
                    break
                if len(hist) > 3 and rn > 1e6 * max(hist[0], 1e-300):
                    return False, v, {"reason": "diverging", "residual": rn}
                Kr = self.reduce(K)
                dv = spla.splu(Kr).solve(-rr)
                v = v + dv
                un = np.linalg.norm(T @ v)
                if np.linalg.norm(dv) <= STEP_TOL * max(un, 1e-300):
                    u = T @ v + up
                    r, _, fe = self.residual(u, lam, tangent=False)
                    rn = float(np.linalg.norm(T.T @ r))
                    hist.append(rn)
                    return True, v, {"residual": rn, "iterations": it + 1, "history": hist}
        except (SingularGeometryError, RuntimeError, ValueError) as exc:
            return False, v, {"reason": str(exc), "residual": hist[-1] if hist else np.nan}
        return False, v, {"reason": "iteration cap", "residual": hist[-1]}

    # ---- linear operators at the reference state
    def stiffness(self, u=None) -> sp.csr_matrix:
        u = np.zeros(self.n_dof) if u is None else u
        return self.internal(u, tangent=True)[1]

    def strain_operator(self) -> sp.csr_matrix:
        """Weighted strain and curvature variations at the reference state, ``K(0) = D^T D``.

        Quadratic forms ``v^T K(0) v`` evaluated as ``||D v||^2`` are sums of positive
        terms and keep full relative accuracy where ``v @ (K @ v)`` cancels.
        """
        rows, cols, vals = [], [], []
        r0 = 0
        for qs, EA, EI in self._sets():
            Xe = self.X[qs.conn]
            A1 = np.einsum("qa,qai->qi", qs.dN, Xe)
            A1_1 = np.einsum("qa,qai->qi", qs.ddN, Xe)
            s = np.sqrt(qs.A11)
            n = perp(A1) / s[:, None]
            gam = np.einsum("qi,qi->q", A1_1, A1) / qs.A11
            de = (qs.dN[:, :, None] * A1[:, None, :]).reshape(qs.nq, -1)
            db = ((qs.ddN - gam[:, None] * qs.dN)[:, :, None] * n[:, None, :]).reshape(qs.nq, -1)
            d = qs.dofs()
            for g, c in ((de, EA), (db, EI)):
                scale = np.sqrt(c * qs.dL) / qs.A11
                rows.append(np.repeat(r0 + np.arange(qs.nq), d.shape[1]))
                cols.append(d.ravel())
                vals.append((scale[:, None] * g).ravel())
                r0 += qs.nq
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(r0, self.n_dof))

    def mass(self) -> sp.csr_matrix:
        qs = self.bend
        rho = self.field_qp(self.problem.rho, qs)
        if np.any(rho <= 0):
            raise MaterialError("density must be positive")
        c = self.problem.width * rho * qs.dL
        k = qs.k
        blk = c[:, None, None] * qs.N[:, :, None] * qs.N[:, None, :]
        d = qs.dofs()
        data = (blk[:, :, None, :, None] * np.eye(2)[None, None, :, None, :]).reshape(qs.nq, 2 * k, 2 * k)
        return sp.csr_matrix((data.ravel(), (np.repeat(d, 2 * k, axis=1).ravel(),
                                             np.tile(d, (1, 2 * k)).ravel())),
                             shape=(self.n_dof, self.n_dof))

    def sampling_matrix(self, xi) -> sp.csr_matrix:
        """Sparse map from control-point displacements to ``[ux, uz]`` samples at ``xi``."""
        xi = np.atleast_1d(np.asarray(xi, float))
        if xi.size == 0:
            raise ValueError("empty sample set")
        _, conn, R, _, _ = basis_at(self.curve, xi)
        k = conn.shape[1]
        rows = np.concatenate([np.repeat(2 * np.arange(xi.size), k),
                               np.repeat(2 * np.arange(xi.size) + 1, k)])
        cols = np.concatenate([(2 * conn).ravel(), (2 * conn + 1).ravel()])
        vals = np.concatenate([R.ravel(), R.ravel()])
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * xi.size, self.n_dof))

    def profile(self, u, xi) -> dict:
        """Sampled state along the axis: position, displacement, stretch and curvature."""
        xi = np.atleast_1d(np.asarray(xi, float))
        x = self.current(u)
        _, conn, R, dR, ddR = basis_at(self.curve, xi)
        pos = np.einsum("qa,qai->qi", R, x[conn])
        X0 = np.einsum("qa,qai->qi", R, self.X[conn])
        a1 = np.einsum("qa,qai->qi", dR, x[conn])
        A1 = np.einsum("qa,qai->qi", dR, self.X[conn])
        a11 = np.einsum("qi,qi->q", a1, a1)
        A11 = np.einsum("qi,qi->q", A1, A1)
        a1_1 = np.einsum("qa,qai->qi", ddR, x[conn])
        c = a1[:, 0] * a1_1[:, 1] - a1[:, 1] * a1_1[:, 0]
        return {"xi": xi, "x": pos[:, 0], "z": pos[:, 1], "ux": pos[:, 0] - X0[:, 0],
                "uz": pos[:, 1] - X0[:, 1], "stretch": np.sqrt(a11 / A11),
                "curvature": c / a11**1.5}


# --------------------------------------------------------------------- element-level views

def _element_points(model: BeamModel, element: int):
    if not 0 <= element < model.curve.n_elements:
        raise SplineError(f"element {element} out of range")
    return np.flatnonzero(model.bend.element == element)


def element_internal_forces(model: BeamModel, element: int, u):
    """Membrane and bending force vectors of one NURBS element (length ``2 (p+1)``).

    Under B2M1 the membrane part of the NURBS element is zero; it lives on the
    linear membrane batch.
    """
    sel = _element_points(model, element)
    qs = model.bend
    x = model.current(u)
    gN, gM, _ = qp_forces(x, qs.conn[sel], qs.dN[sel], qs.ddN[sel], qs.dL[sel], qs.A11[sel],
                          qs.B11[sel], model._ea_b[sel], model._ei_b[sel], tangent=False)
    fN = (model._ea_b[sel][:, None] * gN).sum(axis=0)
    fM = (model._ei_b[sel][:, None] * gM).sum(axis=0)
    return fN, fM


def element_tangent(model: BeamModel, element: int, u, load_factor: float = 1.0):
    """Element tangent of internal minus follower-pressure forces."""
    sel = _element_points(model, element)
    qs = model.bend
    x = model.current(u)
    _, _, Kq = qp_forces(x, qs.conn[sel], qs.dN[sel], qs.ddN[sel], qs.dL[sel], qs.A11[sel],
                         qs.B11[sel], model._ea_b[sel], model._ei_b[sel], tangent=True)
    K = Kq.sum(axis=0)
    p = load_factor * model.problem.loads.pressure
    if p:
        N, dN, w = qs.N[sel], qs.dN[sel], qs.w[sel]
        k = qs.k
        blk = np.einsum("q,qa,qb,ij->qaibj", p * w, N, dN, _ROT).reshape(sel.size, 2 * k, 2 * k)
        K = K - blk.sum(axis=0)
    return K


def element_mass(model: BeamModel, element: int):
    sel = _element_points(model, element)
    qs = model.bend
    rho = model.field_qp(model.problem.rho, qs)[sel]
    if np.any(rho <= 0):
        raise MaterialError("density must be positive")
    c = model.problem.width * rho * qs.dL[sel]
    m = np.einsum("q,qa,qb->ab", c, qs.N[sel], qs.N[sel])
    return np.kron(m, np.eye(2))


def external_forces(model: BeamModel, u, load_factor: float):
    return model.external(u, load_factor, tangent=False)[0]


def solve_static(problem_or_model, levels: Sequence[float] = (1.0,), **kw) -> list[StaticState]:
    model = problem_or_model if isinstance(problem_or_model, BeamModel) else BeamModel(problem_or_model)
    return model.solve_static(levels, **kw)


def l2_error(u_fe: np.ndarray, u_ref: np.ndarray) -> float:
    """Discrete L2 error of sampled displacements relative to the reference samples."""
    return float(np.linalg.norm(np.asarray(u_fe) - u_ref) / np.linalg.norm(u_ref))
