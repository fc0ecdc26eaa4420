"""Model updating: objectives, Jacobians, regularization and a bounded trust-region solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.interpolate as si

from .fe import BeamModel, SolverError
from .kinematics import SingularGeometryError
from .material import MaterialError, MaterialField, MaterialMesh
from .modal import ModalError, align_sign, solve_modes
from .sensitivities import assemble_S_EA, assemble_S_EI, build_Z, dmode_dq, du_dq

log = logging.getLogger(__name__)

__all__ = [
    "ForwardFailure",
    "FieldBlock",
    "Parametrization",
    "StaticExperiment",
    "StaticObjectiveSpec",
    "ModalObjectiveSpec",
    "InverseResult",
    "static_residual_jacobian",
    "modal_residual_jacobian",
    "objective_value",
    "tir_minimize",
    "build_penalty_L",
    "l_curve_select",
    "lcurve_corner",
]

FORWARD_ERRORS = (SolverError, ModalError, SingularGeometryError, MaterialError,
                  np.linalg.LinAlgError, ArithmeticError)


class ForwardFailure(RuntimeError):
    """Forward model could not be evaluated at a trial point."""


# --------------------------------------------------------------------- design vector

@dataclass(frozen=True)
class FieldBlock:
    """One material field inside the design vector."""

    name: str                 # "ea", "ei" or "rho"
    mesh: MaterialMesh
    bounds: tuple             # (lower, upper), absolute
    scale: float = 1.0        # typical magnitude, used for step and stopping norms

    @property
    def size(self) -> int:
        return self.mesh.n_nodes


@dataclass(frozen=True)
class Parametrization:
    blocks: tuple

    def __post_init__(self):
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate field in the design vector")

    @property
    def n_var(self) -> int:
        return sum(b.size for b in self.blocks)

    def slices(self) -> dict:
        out, i = {}, 0
        for b in self.blocks:
            out[b.name] = slice(i, i + b.size)
            i += b.size
        return out

    def fields(self, q) -> dict:
        q = np.asarray(q, float)
        sl = self.slices()
        return {b.name: MaterialField(b.mesh, q[sl[b.name]], b.bounds, b.name) for b in self.blocks}

    def bounds(self):
        lb = np.concatenate([np.full(b.size, b.bounds[0]) for b in self.blocks])
        ub = np.concatenate([np.full(b.size, b.bounds[1]) for b in self.blocks])
        return lb, ub

    def scale(self) -> np.ndarray:
        return np.concatenate([np.full(b.size, b.scale) for b in self.blocks])

    def penalty(self) -> np.ndarray:
        """Block-diagonal first-difference operator over all fields."""
        L = np.zeros((sum(max(b.size - 1, 0) for b in self.blocks), self.n_var))
        r = c = 0
        for b in self.blocks:
            Lb = build_penalty_L(b.size)
            L[r:r + Lb.shape[0], c:c + b.size] = Lb
            r += Lb.shape[0]
            c += b.size
        return L


def build_penalty_L(n_var: int, layout=None) -> np.ndarray:
    """First-difference operator of shape ``(n_var - 1, n_var)``.

    Rows are ``q[i+1] - q[i]``. When ``layout`` gives the node positions the rows
    are divided by the node spacing, approximating the first derivative.
    """
    if n_var < 2:
        raise ValueError("a difference penalty needs at least two variables")
    if layout is None:
        h = np.ones(n_var - 1)
    else:
        x = np.asarray(layout, float)
        if x.shape != (n_var,) or np.any(np.diff(x) <= 0):
            raise ValueError("layout must list increasing node positions")
        h = np.diff(x)
    L = np.zeros((n_var - 1, n_var))
    i = np.arange(n_var - 1)
    L[i, i] = -1.0 / h
    L[i, i + 1] = 1.0 / h
    return L


# --------------------------------------------------------------------- objectives

@dataclass
class StaticExperiment:
    """One loading program on its own analysis mesh, measured at several load levels."""

    model: BeamModel
    levels: Sequence[float]
    xi: np.ndarray
    U_exp: Sequence[np.ndarray]   # one vector per level, interleaved [ux, uz]

    def __post_init__(self):
        self.xi = np.asarray(self.xi, float)
        self.U_exp = [np.asarray(U, float) for U in self.U_exp]
        if len(self.U_exp) != len(self.levels):
            raise ValueError("one measurement vector per load level required")
        for U in self.U_exp:
            if U.shape != (2 * self.xi.size,):
                raise ValueError("measurement vector does not match the grid")
            if np.linalg.norm(U) == 0:
                raise ValueError("measurement vector has zero norm")
        self.P = self.model.sampling_matrix(self.xi)


@dataclass
class StaticObjectiveSpec:
    experiments: list
    param: Parametrization
    alpha: float = 0.0
    L: np.ndarray | None = None

    @property
    def n_lc(self) -> int:
        return sum(len(e.levels) for e in self.experiments)

    def penalty(self):
        if self.L is None:
            self.L = self.param.penalty()
        return self.L


@dataclass
class ModalObjectiveSpec:
    model: BeamModel
    param: Parametrization
    xi: np.ndarray
    U_hat_exp: Sequence[np.ndarray]
    omega_exp: np.ndarray
    alpha: float = 0.0
    L: np.ndarray | None = None
    w_U: np.ndarray | None = None
    w_omega: np.ndarray | None = None
    _Z: object = field(default=None, repr=False)

    def __post_init__(self):
        self.xi = np.asarray(self.xi, float)
        self.U_hat_exp = [np.asarray(U, float) for U in self.U_hat_exp]
        self.omega_exp = np.asarray(self.omega_exp, float)
        n = self.n_mode
        for U in self.U_hat_exp:
            if abs(np.linalg.norm(U) - 1.0) > 1e-10:
                raise ValueError("experimental modes must be unit vectors")
        if np.any(self.omega_exp <= 0) or np.any(np.diff(self.omega_exp) <= 0):
            raise ValueError("experimental frequencies must be positive and ascending")
        self.w_U = np.ones(n) if self.w_U is None else np.asarray(self.w_U, float)
        self.w_omega = np.ones(n) if self.w_omega is None else np.asarray(self.w_omega, float)
        self.P = self.model.sampling_matrix(self.xi)

    @property
    def n_mode(self) -> int:
        return self.omega_exp.size

    def penalty(self):
        if self.L is None:
            self.L = self.param.penalty()
        return self.L


def _append_regularization(spec, q, r, J):
    if spec.alpha:
        L = spec.penalty()
        r = np.concatenate([r, spec.alpha * (L @ q)])
        J = np.vstack([J, spec.alpha * L])
    return r, J


def static_residual_jacobian(spec: StaticObjectiveSpec, q, jacobian: bool = True):
    """Stacked normalized displacement residuals and their Jacobian w.r.t. ``q``."""
    q = np.asarray(q, float)
    fields = spec.param.fields(q)
    sl = spec.param.slices()
    rs, Js = [], []
    for ex in spec.experiments:
        m = ex.model
        m.update(**fields)
        try:
            states = m.solve_static(ex.levels)
        except FORWARD_ERRORS as exc:
            raise ForwardFailure(str(exc)) from exc
        for st, U in zip(states, ex.U_exp):
            nrm = np.linalg.norm(U)
            rs.append((U - ex.P @ st.u) / nrm)
            if not jacobian:
                continue
            J = np.zeros((U.size, spec.param.n_var))
            parts = m.internal(st.u, tangent=False)[2]
            for name, fn in (("ea", assemble_S_EA), ("ei", assemble_S_EI)):
                if name in sl:
                    S = fn(m, st.u, parts)
                    J[:, sl[name]] = -(ex.P @ du_dq(m, st.u, S, st.load_factor)) / nrm
            Js.append(J)
    r = np.concatenate(rs)
    J = np.vstack(Js) if jacobian else None
    if jacobian:
        return _append_regularization(spec, q, r, J)
    if spec.alpha:
        r = np.concatenate([r, spec.alpha * (spec.penalty() @ q)])
    return r, None


def modal_residual_jacobian(spec: ModalObjectiveSpec, q, jacobian: bool = True):
    """Stacked unit-mode and relative-frequency residuals and their Jacobian."""
    q = np.asarray(q, float)
    fields = spec.param.fields(q)
    if set(fields) != {"rho"}:
        raise ValueError("modal identification acts on the density only")
    m = spec.model
    m.update(rho=fields["rho"])
    try:
        sol = solve_modes(m, spec.n_mode)
    except FORWARD_ERRORS as exc:
        raise ForwardFailure(str(exc)) from exc
    if jacobian and spec._Z is None:
        spec._Z = build_Z(m)
    Kr = Mr = None
    if jacobian:
        Kr = m.reduce(m.stiffness()).toarray()
        Mr = m.reduce(m.mass()).toarray()
    rs, Js = [], []
    for i in range(spec.n_mode):
        U = spec.P @ sol.modes[:, i]
        if align_sign(U, spec.U_hat_exp[i]) is not U:
            sol.modes[:, i] *= -1.0
            sol.reduced[:, i] *= -1.0
            U = -U
        nU = np.linalg.norm(U)
        Uh = U / nU
        om = sol.omegas[i]
        wu, ww = np.sqrt(spec.w_U[i]), np.sqrt(spec.w_omega[i])
        rs.append(wu * (spec.U_hat_exp[i] - Uh))
        rs.append([ww * (spec.omega_exp[i] - om) / spec.omega_exp[i]])
        if jacobian:
            try:
                dU, dom = dmode_dq(m, sol, i, spec._Z, Kr, Mr)
            except FORWARD_ERRORS as exc:
                raise ForwardFailure(str(exc)) from exc
            PdU = spec.P @ dU
            Js.append(-wu * (PdU - np.outer(Uh, Uh @ PdU)) / nU)
            Js.append(-ww * dom[None, :] / spec.omega_exp[i])
    r = np.concatenate([np.atleast_1d(x) for x in rs])
    if not jacobian:
        if spec.alpha:
            r = np.concatenate([r, spec.alpha * (spec.penalty() @ q)])
        return r, None
    return _append_regularization(spec, q, r, np.vstack(Js))


def objective_value(spec, q) -> float:
    fn = modal_residual_jacobian if isinstance(spec, ModalObjectiveSpec) else static_residual_jacobian
    r, _ = fn(spec, q, jacobian=False)
    return float(r @ r)


# --------------------------------------------------------------------- optimizer

@dataclass
class InverseResult:
    q_opt: np.ndarray
    f_opt: float
    history: list
    iterations: int
    reason: str
    success: bool
    trace: list = field(default_factory=list)
    nfev: int = 0
    njev: int = 0
    seed: int | None = None
    errors: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"q_opt": self.q_opt.tolist(), "f_opt": self.f_opt, "history": list(self.history),
               "iterations": self.iterations, "reason": self.reason, "success": self.success,
               "nfev": self.nfev, "njev": self.njev, "seed": self.seed}
        if self.errors is not None:
            out["errors"] = np.asarray(self.errors).tolist()
        return out


def _cl_scaling(x, g, lb, ub):
    """Coleman-Li scaling vector and its derivative sign."""
    v = np.ones_like(x)
    dv = np.zeros_like(x)
    m = (g < 0) & np.isfinite(ub)
    v[m] = ub[m] - x[m]
    dv[m] = -1.0
    m = (g > 0) & np.isfinite(lb)
    v[m] = x[m] - lb[m]
    dv[m] = 1.0
    return v, dv


def _quad(J, g, s, diag, s0=None):
    """Coefficients of ``t -> model(s0 + t s)`` with model ``g.p + 0.5 p.(J'J + diag).p``."""
    v = J @ s
    a = 0.5 * (v @ v + s @ (diag * s))
    b = g @ s
    c = 0.0
    if s0 is not None:
        u = J @ s0
        b += u @ v + s0 @ (diag * s)
        c = 0.5 * (u @ u + s0 @ (diag * s0)) + g @ s0
    return a, b, c


def _model(J, g, s, diag) -> float:
    a, b, _ = _quad(J, g, s, diag)
    return a + b


def _min_1d(a, b, c, lo, hi):
    ts = [lo, hi]
    if a > 0:
        t = -b / (2 * a)
        if lo < t < hi:
            ts.append(t)
    vals = [a * t * t + b * t + c for t in ts]
    k = int(np.argmin(vals))
    return ts[k], vals[k]


def _to_bound(x, s, lb, ub):
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.where(s > 0, (ub - x) / s, np.where(s < 0, (lb - x) / s, np.inf))
    t = float(np.min(steps))
    hits = np.where(steps == t, np.sign(s), 0.0) if np.isfinite(t) else np.zeros_like(s)
    return t, hits


def _to_sphere(p, s, radius):
    a = s @ s
    b = 2 * (p @ s)
    c = p @ p - radius**2
    disc = max(b * b - 4 * a * c, 0.0)
    sq = np.sqrt(disc)
    return (-b - sq) / (2 * a), (-b + sq) / (2 * a)


def _dogleg(Jh, gh, diag, r, radius):
    """Dogleg minimizer of the scaled Gauss-Newton model inside a ball."""
    n = gh.size
    A = np.vstack([Jh, np.diag(np.sqrt(diag))]) if np.any(diag) else Jh
    rhs = np.concatenate([r, np.zeros(n)]) if np.any(diag) else r
    p_gn = np.linalg.lstsq(A, -rhs, rcond=None)[0]
    if np.linalg.norm(p_gn) <= radius:
        return p_gn, False
    gnorm = np.linalg.norm(gh)
    if gnorm == 0:
        return p_gn * (radius / np.linalg.norm(p_gn)), True
    curv = _quad(Jh, gh, gh, diag)[0] * 2.0
    t_c = gnorm**2 / curv if curv > 0 else np.inf
    p_c = -t_c * gh
    if np.linalg.norm(p_c) >= radius:
        return -radius * gh / gnorm, True
    _, t = _to_sphere(p_c, p_gn - p_c, radius)
    return p_c + t * (p_gn - p_c), True


def _select_step(x, Jh, diag, gh, p, ph, d, radius, lb, ub, theta):
    """Keep the step strictly feasible: truncated, reflected or Cauchy, whichever is best."""
    if np.all(x + p > lb) and np.all(x + p < ub):
        return p, ph, -_model(Jh, gh, ph, diag)
    stride, hits = _to_bound(x, p, lb, ub)
    rh = ph.copy()
    rh[hits != 0] *= -1.0
    rr = d * rh
    p = p * stride
    ph = ph * stride
    x_on = x + p
    _, to_tr = _to_sphere(ph, rh, radius)
    to_b, _ = _to_bound(x_on, rr, lb, ub)
    r_stride = min(to_b, to_tr)
    if r_stride > 0:
        lo = (1 - theta) * stride / r_stride
        hi = theta * to_b if r_stride == to_b else to_tr
    else:
        lo, hi = 0.0, -1.0
    if lo <= hi:
        a, b, c = _quad(Jh, gh, rh, diag, s0=ph)
        t, r_val = _min_1d(a, b, c, lo, hi)
        rh = ph + t * rh
        rr = d * rh
    else:
        r_val = np.inf
    p = p * theta
    ph = ph * theta
    p_val = _model(Jh, gh, ph, diag)
    agh = -gh
    ag = d * agh
    to_tr = radius / np.linalg.norm(agh)
    to_b, _ = _to_bound(x, ag, lb, ub)
    ag_stride = theta * to_b if to_b < to_tr else to_tr
    a, b, _ = _quad(Jh, gh, agh, diag)
    t, ag_val = _min_1d(a, b, 0.0, 0.0, ag_stride)
    best = int(np.argmin([p_val, r_val, ag_val]))
    if best == 0:
        return p, ph, -p_val
    if best == 1:
        return rr, rh, -r_val
    return t * ag, t * agh, -ag_val


def tir_minimize(fun: Callable, q0, bounds, tol: float = 1e-6, max_iter: int = 100,
                 x_scale=None, max_trials: int = 40, callback=None) -> InverseResult:
    """Bound-constrained nonlinear least squares, ``min ||r(q)||^2`` with ``lb <= q <= ub``.

    ``fun(q, jacobian=True)`` returns ``(r, J)`` and may raise :class:`ForwardFailure`,
    which rejects the trial step. Iterates stay strictly inside the box through
    Coleman-Li scaling and reflective step selection. The run stops when the scaled
    step ``||dq / x_scale||`` and the objective change ``|df| / (1 + |f|)`` are both
    at most ``tol``.
    """
    lb, ub = (np.asarray(b, float) for b in bounds)
    x = np.asarray(q0, float).copy()
    if x.shape != lb.shape or np.any(x <= lb) or np.any(x >= ub):
        raise ValueError("initial guess must lie strictly inside the bounds")
    scale = np.ones_like(x) if x_scale is None else np.broadcast_to(np.asarray(x_scale, float), x.shape).copy()
    scale_inv = 1.0 / scale

    try:
        r, J = fun(x, jacobian=True)
    except ForwardFailure as exc:
        raise ForwardFailure(f"forward model fails at the initial guess: {exc}") from exc
    nfev = njev = 1
    f = float(r @ r)
    history = [f]
    trace = [x.copy()]
    radius = max(np.linalg.norm(x * scale_inv), 1.0)
    reason, success = "iteration cap", False
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        v, dv = _cl_scaling(x, g, lb, ub)
        v[dv != 0] *= scale_inv[dv != 0]
        d = np.sqrt(v) * scale
        diag_h = g * dv * scale
        gh = d * g
        Jh = J * d
        theta = max(0.995, 1.0 - np.linalg.norm(gh, np.inf))
        if np.linalg.norm(gh, np.inf) == 0.0:
            reason, success = "zero gradient", True
            it -= 1
            break
        accepted = False
        for _ in range(max_trials):
            ph, hit_tr = _dogleg(Jh, gh, diag_h, r, radius)
            p, ph, pred_half = _select_step(x, Jh, diag_h, gh, d * ph, ph, d, radius, lb, ub, theta)
            x_new = np.clip(x + p, np.nextafter(lb, ub), np.nextafter(ub, lb))
            step_h = np.linalg.norm(ph)
            try:
                r_new, _ = fun(x_new, jacobian=False)
                nfev += 1
                f_new = float(r_new @ r_new)
            except ForwardFailure as exc:
                nfev += 1
                log.info("trial step rejected, forward failure: %s", exc)
                radius = 0.25 * step_h
                continue
            actual = f - f_new
            pred = 2.0 * pred_half
            if pred > 0:
                ratio = actual / pred
            elif pred == actual == 0:
                ratio = 1.0
            else:
                ratio = 0.0
            if ratio < 0.25:
                radius = 0.25 * step_h
            elif ratio > 0.75 and abs(step_h - radius) <= 1e-8 * radius:
                radius *= 2.0
            if f_new < f:
                accepted = True
                break
            if radius < 1e-15 * max(1.0, np.linalg.norm(x * scale_inv)):
                break
        if not accepted:
            reason, success = "trust region collapsed", True
            it -= 1
            break
        dq = np.linalg.norm((x_new - x) * scale_inv)
        df = abs(f_new - f)
        f_old = f
        x = x_new
        r, J = fun(x, jacobian=True)
        nfev += 1
        njev += 1
        f = float(r @ r)
        history.append(f)
        trace.append(x.copy())
        if callback is not None:
            callback(it, x, f)
        if dq <= tol and df <= tol * (1.0 + abs(f_old)):
            reason, success = "step and objective converged", True
            break
    return InverseResult(x, f, history, it, reason, success, trace, nfev, njev)


# --------------------------------------------------------------------- L-curve

def _discrete_curvature(t, x, y):
    dx, dy = np.gradient(x, t), np.gradient(y, t)
    ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
    return (dx * ddy - dy * ddx) / (dx**2 + dy**2) ** 1.5


def _spline_curvature(t, x, y):
    sx, sy = si.CubicSpline(t, x), si.CubicSpline(t, y)
    dx, dy = sx(t, 1), sy(t, 1)
    ddx, ddy = sx(t, 2), sy(t, 2)
    return (dx * ddy - dy * ddx) / (dx**2 + dy**2) ** 1.5


def lcurve_corner(alphas, res_norms, seminorms):
    """Corner of the L-curve by two curvature estimates.

    Returns ``(index_fd, index_spline)``: positions of maximum curvature of
    ``(log ||r||, log ||L q||)`` parametrized by ``log alpha``, using finite
    differences and a cubic spline respectively.
    """
    t = np.log10(np.asarray(alphas, float))
    x = np.log10(np.asarray(res_norms, float))
    y = np.log10(np.asarray(seminorms, float))
    k1 = _discrete_curvature(t, x, y)
    k2 = _spline_curvature(t, x, y)
    inner = slice(1, t.size - 1)  # endpoints carry one-sided estimates only
    i1 = int(np.argmax(k1[inner])) + 1
    i2 = int(np.argmax(k2[inner])) + 1
    return i1, i2


def l_curve_select(spec, q0, alphas, solver: Callable | None = None, **tir_kw):
    """Sweep the regularization weight and pick the corner of the L-curve.

    Returns ``(alpha, points)`` where ``points`` is a list of dicts with the
    weight, data-misfit norm, seminorm ``||L q||``, the result and the two
    corner indices under ``points[0]['corner']``.
    """
    alphas = np.sort(np.asarray(alphas, float))
    if alphas.size < 5 or np.log10(alphas[-1] / alphas[0]) < 3 - 1e-9:
        raise ValueError("need at least 5 weights spanning 3 decades")
    fn = modal_residual_jacobian if isinstance(spec, ModalObjectiveSpec) else static_residual_jacobian
    L = spec.penalty()
    lb, ub = spec.param.bounds()
    pts = []
    for a in alphas:
        spec.alpha = float(a)
        try:
            res = (solver or tir_minimize)(lambda q, jacobian=True: fn(spec, q, jacobian), q0,
                                           (lb, ub), x_scale=spec.param.scale(), **tir_kw)
        except ForwardFailure as exc:
            log.warning("alpha = %.3g dropped: %s", a, exc)
            continue
        spec.alpha = 0.0
        r, _ = fn(spec, res.q_opt, jacobian=False)
        pts.append({"alpha": float(a), "residual": float(np.linalg.norm(r)),
                    "seminorm": float(np.linalg.norm(L @ res.q_opt)), "result": res})
    if len(pts) < 5:
        raise ForwardFailure("too few converged points on the L-curve")
    i1, i2 = lcurve_corner([p["alpha"] for p in pts], [p["residual"] for p in pts],
                           [p["seminorm"] for p in pts])
    pts[0]["corner"] = (i1, i2)
    spec.alpha = pts[i1]["alpha"]
    return pts[i1]["alpha"], pts
