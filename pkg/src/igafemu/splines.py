"""Univariate NURBS curves on an element-wise Bezier-extraction representation.

Elements live on the master interval [-1, 1]. Basis derivatives returned by
:func:`basis_eval` are taken with respect to the global knot coordinate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

__all__ = [
    "SplineError",
    "KnotVector",
    "NurbsCurve",
    "bernstein",
    "build_extraction",
    "basis_eval",
    "insert_knots",
    "greville_refine",
    "straight_line",
    "quarter_circle",
    "gauss_legendre",
]


class SplineError(ValueError):
    """Invalid knot vector, element index or refinement request."""


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", k)
        p = self.degree
        if p < 1:
            raise SplineError("degree must be >= 1")
        if k.ndim != 1 or k.size < 2 * (p + 1):
            raise SplineError("knot vector too short for the degree")
        if np.any(np.diff(k) < 0):
            raise SplineError("knots must be non-decreasing")

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def is_open(self) -> bool:
        k, p = self.knots, self.degree
        return bool(np.all(k[: p + 1] == k[0]) and np.all(k[-p - 1 :] == k[-1]))

    @property
    def breaks(self) -> np.ndarray:
        """Distinct knot values."""
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breaks.size - 1

    def span_indices(self) -> np.ndarray:
        """Knot-span index (Piegl-Tiller convention) of every nonzero span."""
        k = self.knots
        idx = np.nonzero(np.diff(k) > 0)[0]
        return idx

    def find_span(self, xi: float) -> int:
        k, p = self.knots, self.degree
        n = self.n_basis - 1
        if xi >= k[n + 1]:
            return n
        if xi <= k[p]:
            return p
        return int(np.searchsorted(k, xi, side="right") - 1)

    def greville(self) -> np.ndarray:
        p, k = self.degree, self.knots
        return np.array([k[i + 1 : i + p + 1].mean() for i in range(self.n_basis)])


def bernstein(p: int, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bernstein polynomials of degree ``p`` on [-1, 1] and their first two
    derivatives with respect to ``t``. Output shapes are ``t.shape + (p+1,)``."""
    t = np.asarray(t, dtype=float)
    u = (1.0 + t) / 2.0
    v = 1.0 - u
    B = np.empty(t.shape + (p + 1,))
    dB = np.zeros_like(B)
    ddB = np.zeros_like(B)
    for i in range(p + 1):
        c = comb(p, i)
        B[..., i] = c * u**i * v ** (p - i)
        # d/du of u^i v^(p-i)
        d1 = np.zeros_like(u)
        if i >= 1:
            d1 = d1 + i * u ** (i - 1) * v ** (p - i)
        if p - i >= 1:
            d1 = d1 - (p - i) * u**i * v ** (p - i - 1)
        d2 = np.zeros_like(u)
        if i >= 2:
            d2 = d2 + i * (i - 1) * u ** (i - 2) * v ** (p - i)
        if i >= 1 and p - i >= 1:
            d2 = d2 - 2 * i * (p - i) * u ** (i - 1) * v ** (p - i - 1)
        if p - i >= 2:
            d2 = d2 + (p - i) * (p - i - 1) * u**i * v ** (p - i - 2)
        dB[..., i] = 0.5 * c * d1
        ddB[..., i] = 0.25 * c * d2
    return B, dB, ddB


def build_extraction(kv: KnotVector) -> list[np.ndarray]:
    """Bezier extraction operators, one ``(p+1, p+1)`` matrix per element.

    Rows index the element's B-spline functions, columns the Bernstein
    polynomials, so that ``N_hat = C_e @ B``.
    """
    if not kv.is_open:
        raise SplineError("Bezier extraction requires an open knot vector")
    U = kv.knots
    p = kv.degree
    m = U.size
    a, b = p + 1, p + 2  # 1-based positions into U
    ops = [np.eye(p + 1)]
    alphas = np.zeros(p + 1)
    while b < m:
        ops.append(np.eye(p + 1))
        i = b
        while b < m and U[b] == U[b - 1]:
            b += 1
        mult = b - i + 1
        C, Cn = ops[-2], ops[-1]
        if mult < p:
            numer = U[b - 1] - U[a - 1]
            for j in range(p, mult, -1):
                alphas[j - mult] = numer / (U[a + j - 1] - U[a - 1])
            r = p - mult
            for j in range(1, r + 1):
                save = r - j + 1
                s = mult + j
                for k in range(p + 1, s, -1):
                    alpha = alphas[k - s]
                    C[:, k - 1] = alpha * C[:, k - 1] + (1.0 - alpha) * C[:, k - 2]
                if b < m:
                    Cn[save - 1 : save + j, save - 1] = C[p - j : p + 1, p]
        if b < m:
            a = b
            b = a + 1
    ops.pop()  # the trailing operator was opened past the last element
    if len(ops) != kv.n_elements:
        raise SplineError("extraction produced an inconsistent element count")
    return ops


def insert_knots(kv: KnotVector, cpw: np.ndarray, new: Sequence[float]):
    """Insert knots into a curve given by homogeneous control points ``cpw``.

    Returns the refined ``(KnotVector, cpw)``. ``cpw`` rows are
    ``(w*x, w*y, w)``.
    """
    X = np.sort(np.asarray(new, dtype=float))
    if X.size == 0:
        return kv, cpw.copy()
    U, p = kv.knots, kv.degree
    Pw = np.asarray(cpw, dtype=float)
    n = Pw.shape[0] - 1
    m = n + p + 1
    r = X.size - 1
    if X[0] < U[p] or X[-1] > U[n + 1]:
        raise SplineError("inserted knots outside the parameter range")
    a = kv.find_span(X[0])
    b = kv.find_span(X[r]) + 1
    Qw = np.zeros((n + r + 2, Pw.shape[1]))
    Ub = np.zeros(m + r + 2)
    Qw[: a - p + 1] = Pw[: a - p + 1]
    Qw[b - 1 + r + 1 : n + r + 2] = Pw[b - 1 : n + 1]
    Ub[: a + 1] = U[: a + 1]
    Ub[b + p + r + 1 : m + r + 2] = U[b + p : m + 1]
    i = b + p - 1
    k = b + p + r
    for j in range(r, -1, -1):
        while X[j] <= U[i] and i > a:
            Qw[k - p - 1] = Pw[i - p - 1]
            Ub[k] = U[i]
            k -= 1
            i -= 1
        Qw[k - p - 1] = Qw[k - p]
        for l in range(1, p + 1):
            ind = k - p + l
            alfa = Ub[k + l] - X[j]
            if abs(alfa) == 0.0:
                Qw[ind - 1] = Qw[ind]
            else:
                alfa = alfa / (Ub[k + l] - U[i - p + l])
                Qw[ind - 1] = alfa * Qw[ind - 1] + (1.0 - alfa) * Qw[ind]
        Ub[k] = X[j]
        k -= 1
    return KnotVector(p, Ub), Qw


@dataclass(frozen=True)
class NurbsCurve:
    """Planar NURBS curve with cached Bezier extraction."""

    knot_vector: KnotVector
    control_points: np.ndarray
    weights: np.ndarray
    extraction: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.asarray(self.control_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "control_points", P)
        object.__setattr__(self, "weights", w)
        if P.ndim != 2 or P.shape[1] != 2:
            raise SplineError("control points must be an (n, 2) array")
        if P.shape[0] != self.knot_vector.n_basis or w.shape != (P.shape[0],):
            raise SplineError("control point / weight / knot counts disagree")
        if np.any(w <= 0):
            raise SplineError("weights must be strictly positive")
        object.__setattr__(self, "extraction", build_extraction(self.knot_vector))

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    @property
    def n_elements(self) -> int:
        return self.knot_vector.n_elements

    @property
    def n_control_points(self) -> int:
        return self.control_points.shape[0]

    def element_bounds(self) -> np.ndarray:
        """``(n_el, 2)`` array of element parameter intervals."""
        br = self.knot_vector.breaks
        return np.column_stack([br[:-1], br[1:]])

    def connectivity(self) -> np.ndarray:
        """Control-point indices of each element, ``(n_el, p+1)``."""
        p = self.degree
        spans = self.knot_vector.span_indices()
        return np.array([np.arange(s - p, s + 1) for s in spans])

    def homogeneous(self) -> np.ndarray:
        return np.column_stack([self.control_points * self.weights[:, None], self.weights])

    def locate(self, xi) -> np.ndarray:
        """Element index containing each parameter value (right-closed at the end)."""
        br = self.knot_vector.breaks
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < br[0] - 1e-14) or np.any(xi > br[-1] + 1e-14):
            raise SplineError("parameter value outside the curve domain")
        e = np.searchsorted(br, xi, side="right") - 1
        return np.clip(e, 0, br.size - 2)

    def to_local(self, element, xi):
        b = self.element_bounds()[element]
        return (2.0 * np.asarray(xi) - b[..., 0] - b[..., 1]) / (b[..., 1] - b[..., 0])

    def points(self, xi) -> np.ndarray:
        """Curve positions at parameter values ``xi``."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        el = self.locate(xi)
        out = np.empty((xi.size, 2))
        conn = self.connectivity()
        for e in np.unique(el):
            sel = el == e
            R, _, _ = basis_eval(self, e, self.to_local(e, xi[sel]))
            out[sel] = R @ self.control_points[conn[e]]
        return out

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "knots": self.knot_vector.knots.tolist(),
            "control_points": self.control_points.tolist(),
            "weights": self.weights.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "NurbsCurve":
        return cls(KnotVector(int(d["degree"]), d["knots"]), d["control_points"], d["weights"])

    @classmethod
    def from_json(cls, text: str) -> "NurbsCurve":
        return cls.from_dict(json.loads(text))


def basis_eval(curve: NurbsCurve, element: int, xi_local):
    """Rational basis values and first/second derivatives on one element.

    Parameters
    ----------
    curve : NurbsCurve
    element : int
        Element index.
    xi_local : float or array_like
        Master coordinates in [-1, 1].

    Returns
    -------
    R, dR, ddR : ndarray
        Shape ``xi_local.shape + (p+1,)``; derivatives are with respect to
        the global parameter.
    """
    n_el = curve.n_elements
    if not 0 <= element < n_el:
        raise SplineError(f"element {element} out of range [0, {n_el})")
    lo, hi = curve.element_bounds()[element]
    h = hi - lo
    if h <= 0:
        raise SplineError("degenerate knot span")
    t = np.asarray(xi_local, dtype=float)
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise SplineError("local coordinate outside [-1, 1]")
    C = curve.extraction[element]
    w = curve.weights[curve.connectivity()[element]]
    B, dB, ddB = bernstein(curve.degree, t)
    J = 2.0 / h
    Nh = B @ C.T
    dNh = (dB @ C.T) * J
    ddNh = (ddB @ C.T) * J * J
    return rationalize(Nh, dNh, ddNh, w)


def rationalize(Nh, dNh, ddNh, w):
    """Quotient rule turning B-spline values/derivatives into NURBS ones."""
    W = Nh @ w
    dW = dNh @ w
    ddW = ddNh @ w
    W_, dW_, ddW_ = W[..., None], dW[..., None], ddW[..., None]
    R = w * Nh / W_
    dR = w * (dNh / W_ - Nh * dW_ / W_**2)
    ddR = w * (ddNh / W_ - 2.0 * dNh * dW_ / W_**2 - Nh * ddW_ / W_**2
               + 2.0 * Nh * dW_**2 / W_**3)
    return R, dR, ddR


def greville_refine(curve: NurbsCurve, n_elements: int) -> NurbsCurve:
    """Uniform h-refinement by knot insertion to ``n_elements`` equal spans.

    Existing interior knots must lie on the target uniform grid.
    """
    cur = curve.n_elements
    if n_elements < cur:
        raise SplineError("coarsening is not supported")
    kv = curve.knot_vector
    lo, hi = kv.knots[0], kv.knots[-1]
    target = lo + (hi - lo) * np.arange(1, n_elements) / n_elements
    existing = kv.breaks[1:-1]
    for k in existing:
        if not np.any(np.isclose(target, k, rtol=0, atol=1e-12 * (hi - lo))):
            raise SplineError("existing knots are not on the requested uniform grid")
    new = [t for t in target if not np.any(np.isclose(existing, t, rtol=0, atol=1e-12 * (hi - lo)))]
    kv2, Qw = insert_knots(kv, curve.homogeneous(), new)
    w = Qw[:, 2]
    return NurbsCurve(kv2, Qw[:, :2] / w[:, None], w)


def straight_line(start, end, degree: int = 2) -> NurbsCurve:
    """Single-element straight segment, arc-length-uniform parametrization."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    s = np.linspace(0.0, 1.0, degree + 1)
    P = start + s[:, None] * (end - start)
    kv = KnotVector(degree, [0.0] * (degree + 1) + [1.0] * (degree + 1))
    return NurbsCurve(kv, P, np.ones(degree + 1))


def quarter_circle(radius: float) -> NurbsCurve:
    """Exact quadratic NURBS arc from (0, R) clockwise to (R, 0)."""
    R = float(radius)
    P = np.array([[0.0, R], [R, R], [R, 0.0]])
    w = np.array([1.0, np.sqrt(0.5), 1.0])
    kv = KnotVector(2, [0, 0, 0, 1, 1, 1])
    return NurbsCurve(kv, P, w)
