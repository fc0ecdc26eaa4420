"""Material meshes: low-order Lagrange discretization of scalar material fields.

A material mesh lives in the unit parameter domain, independent of the FE
mesh. Constant elements carry one node at their centre, linear elements
two nodes at their end points (shared between neighbours).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MaterialError",
    "MaterialMesh",
    "MaterialField",
    "FieldMap",
    "build_map",
    "eval_field",
    "split_nonconforming",
    "interpolation_matrix",
]


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialMesh:
    breakpoints: np.ndarray
    order: int = 1  # 0 constant, 1 linear

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        object.__setattr__(self, "breakpoints", b)
        if self.order not in (0, 1):
            raise MaterialError("material elements are constant (0) or linear (1)")
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
            raise MaterialError("breakpoints must be strictly increasing")

    @classmethod
    def uniform(cls, n_elements: int, order: int = 1, lo: float = 0.0, hi: float = 1.0):
        return cls(np.linspace(lo, hi, n_elements + 1), order)

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    @property
    def n_nodes(self) -> int:
        return self.n_elements + self.order

    @property
    def nodes(self) -> np.ndarray:
        """Parameter positions of the material nodes."""
        b = self.breakpoints
        return b.copy() if self.order == 1 else 0.5 * (b[:-1] + b[1:])

    def element_nodes(self, me: int) -> np.ndarray:
        return np.array([me, me + 1]) if self.order == 1 else np.array([me])

    def locate(self, xi) -> np.ndarray:
        b = self.breakpoints
        xi = np.asarray(xi, dtype=float)
        tol = 1e-12 * (b[-1] - b[0])
        if np.any(xi < b[0] - tol) or np.any(xi > b[-1] + tol):
            raise MaterialError("point outside the material mesh")
        return np.clip(np.searchsorted(b, xi, side="right") - 1, 0, self.n_elements - 1)

    def shape(self, me, xi_bar):
        """Shape values of element(s) ``me`` at master coordinates ``xi_bar``."""
        xi_bar = np.asarray(xi_bar, dtype=float)
        if self.order == 0:
            return np.ones(xi_bar.shape + (1,))
        return np.stack([(1.0 - xi_bar) / 2.0, (1.0 + xi_bar) / 2.0], axis=-1)

    def master(self, me, xi):
        b = self.breakpoints
        lo, hi = b[me], b[me + 1]
        return (2.0 * np.asarray(xi) - lo - hi) / (hi - lo)


def interpolation_matrix(mesh: MaterialMesh, xi, me=None) -> sp.csr_matrix:
    """Sparse ``(len(xi), n_nodes)`` matrix evaluating a nodal vector at ``xi``.

    ``me`` optionally pins the material element of each point (used where a
    point sits on a breakpoint and its attribution matters).
    """
    xi = np.asarray(xi, dtype=float).ravel()
    me = mesh.locate(xi) if me is None else np.asarray(me).ravel()
    Nb = mesh.shape(me, mesh.master(me, xi))
    k = 1 + mesh.order
    cols = me[:, None] + np.arange(k)[None, :]
    rows = np.repeat(np.arange(xi.size), k)
    return sp.csr_matrix((Nb.ravel(), (rows, cols.ravel())), shape=(xi.size, mesh.n_nodes))


class MaterialField:
    """Nodal values of one scalar material field on a material mesh, with bounds."""

    def __init__(self, mesh: MaterialMesh, values, bounds=(0.0, np.inf), name: str = "q"):
        self.mesh = mesh
        self.name = name
        lo, hi = float(bounds[0]), float(bounds[1])
        if not (0.0 <= lo <= hi):
            raise MaterialError("bounds must satisfy 0 <= q_min <= q_max")
        self.bounds = (lo, hi)
        self._values = None
        self.values = values

    @property
    def values(self) -> np.ndarray:
        return self._values

    @values.setter
    def values(self, q):
        q = np.array(q, dtype=float)
        if q.shape == ():
            q = np.full(self.mesh.n_nodes, float(q))
        if q.shape != (self.mesh.n_nodes,):
            raise MaterialError(f"expected {self.mesh.n_nodes} nodal values, got {q.shape}")
        lo, hi = self.bounds
        if np.any(q < lo) or np.any(q > hi) or np.any(~np.isfinite(q)):
            raise MaterialError(f"{self.name} nodal values violate bounds [{lo}, {hi}]")
        q.setflags(write=False)
        self._values = q

    def with_values(self, q) -> "MaterialField":
        return MaterialField(self.mesh, q, self.bounds, self.name)

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return (interpolation_matrix(self.mesh, xi) @ self.values).reshape(xi.shape)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xi", self.name])
            for x, v in zip(self.mesh.nodes, self.values):
                w.writerow([repr(float(x)), repr(float(v))])

    def __repr__(self):
        return f"MaterialField({self.name}, n_nodes={self.mesh.n_nodes}, order={self.mesh.order})"


@dataclass(frozen=True)
class FieldMap:
    """Per-FE-element attribution to a material element: ``xi_bar = (xi + offset) / span``."""

    material_element: np.ndarray
    span: np.ndarray
    offset: np.ndarray

    def to_material(self, fe_element, xi_local):
        return (np.asarray(xi_local) + self.offset[fe_element]) / self.span[fe_element]


def build_map(fe_bounds, mesh: MaterialMesh) -> FieldMap:
    """Map conforming FE elements into material elements.

    Parameters
    ----------
    fe_bounds : (n_el, 2) array
        FE element intervals in the parameter domain.
    """
    fe_bounds = np.asarray(fe_bounds, dtype=float)
    lo, hi = fe_bounds[:, 0], fe_bounds[:, 1]
    mid = 0.5 * (lo + hi)
    me = mesh.locate(mid)
    b = mesh.breakpoints
    H = b[me + 1] - b[me]
    scale = b[-1] - b[0]
    tol = 1e-10 * scale
    if np.any(lo < b[me] - tol) or np.any(hi > b[me + 1] + tol):
        raise MaterialError(
            "FE mesh does not conform to the material mesh "
            "(FE element count must subdivide every material element)")
    h = hi - lo
    span = H / h
    offset = 2.0 * (mid - 0.5 * (b[me] + b[me + 1])) / h
    return FieldMap(me, span, offset)


def eval_field(field: MaterialField, fmap: FieldMap, fe_element: int, xi_local):
    """Field value and material shape values at an FE point."""
    me = int(fmap.material_element[fe_element])
    xb = fmap.to_material(fe_element, xi_local)
    if np.any(np.abs(xb) > 1.0 + 1e-12):
        raise MaterialError("point does not map into its material element")
    Nb = field.mesh.shape(me, xb)
    q = field.values[field.mesh.element_nodes(me)]
    return Nb @ q, Nb


def split_nonconforming(interval: Sequence[float], mesh: MaterialMesh):
    """Split an analysis element at interior material breakpoints.

    Returns a list of ``((lo, hi), material_element)``. Elements straddling
    more than two material elements are rejected.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if hi <= lo:
        raise MaterialError("empty element interval")
    b = mesh.breakpoints
    tol = 1e-12 * (b[-1] - b[0])
    inner = b[(b > lo + tol) & (b < hi - tol)]
    if inner.size > 1:
        raise MaterialError(
            f"element [{lo:.6g}, {hi:.6g}] spans {inner.size + 1} material elements; "
            "refine the analysis mesh")
    cuts = np.concatenate([[lo], inner, [hi]])
    out = []
    for a, c in zip(cuts[:-1], cuts[1:]):
        out.append(((float(a), float(c)), int(mesh.locate(0.5 * (a + c)))))
    return out


FieldLike = "MaterialField | Callable[[np.ndarray], np.ndarray] | float"


def as_callable(field) -> Callable:
    """Uniform evaluation for material fields, callables and constants."""
    if isinstance(field, MaterialField):
        return field
    if callable(field):
        return field
    val = float(field)
    if val <= 0:
        raise MaterialError("material constants must be positive")
    return lambda xi: np.full(np.shape(xi), val)
