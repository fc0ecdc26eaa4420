"""Benchmark problems and the case catalog.

Three structures are available: a straight ``sheet`` in uniaxial tension, a
straight ``beam`` in bending and a quarter ``arc``. Each has named setups
(supports plus loads). Cases are stored as JSON descriptors in the ``cases``
data directory, one file per case.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import numpy as np

from .fe import BeamProblem, Constraints, LoadProgram, dof
from .splines import greville_refine, quarter_circle, straight_line

__all__ = [
    "SETUPS",
    "LEVELS",
    "build_problem",
    "CaseDescriptor",
    "load_case",
    "list_cases",
    "table_cases",
    "TABLES",
]

SHEET_LENGTH = 2.0
BEAM_LENGTH = 4.0
ARC_RADIUS = 10.0
WIDTH = 1.0

LEVELS = {1: (1.0,), 3: (0.1, 0.5, 1.0), 4: (0.25, 0.5, 0.75, 1.0)}


def _geometry(example: str, n_fe: int):
    if example == "sheet":
        base = straight_line((0.0, 0.0), (SHEET_LENGTH, 0.0))
    elif example == "beam":
        base = straight_line((0.0, 0.0), (BEAM_LENGTH, 0.0))
    elif example == "arc":
        base = quarter_circle(ARC_RADIUS)
    else:
        raise KeyError(f"unknown example {example!r}")
    return greville_refine(base, int(n_fe))


def _fix_all(c: Constraints, n_cp: int, comp: int, skip=()):
    for i in range(n_cp):
        if dof(i, comp) not in skip:
            c.fix(dof(i, comp))


def _sheet(setup, curve):
    n = curve.n_control_points
    c = Constraints()
    _fix_all(c, n, 1)
    if setup == "tension":
        c.fix(dof(0, 0))
        return c, LoadProgram(point_forces=[(1.0, (500.0, 0.0))])
    if setup == "tension_swapped":
        c.fix(dof(n - 1, 0))
        return c, LoadProgram(point_forces=[(0.0, (-500.0, 0.0))])
    if setup == "modal":
        c.fix(dof(0, 0))
        return c, LoadProgram()
    raise KeyError(setup)


def _beam(setup, curve):
    n = curve.n_control_points
    c = Constraints()
    if setup == "modal":
        # bending vibrations only: axial motion suppressed
        _fix_all(c, n, 0)
        c.fix(dof(0, 1)).fix(dof(n - 1, 1))
        return c, LoadProgram()
    c.fix(dof(0, 0)).fix(dof(0, 1)).fix(dof(n - 1, 1))
    if setup == "simply_supported":
        return c, LoadProgram(dead_load=(0.0, -0.002))
    if setup == "clamped":
        c.clamp(curve, 0).clamp(curve, 1)
        return c, LoadProgram(dead_load=(0.0, -0.01))
    raise KeyError(setup)


def _arc(setup, curve):
    n = curve.n_control_points
    c = Constraints()
    c.fix(dof(0, 0)).fix(dof(n - 1, 1))
    c.clamp(curve, 0).clamp(curve, 1)
    loads = {
        "pressure": LoadProgram(pressure=2.0),
        "p_hor": LoadProgram(point_forces=[(1.0, (2e-5, 0.0))]),
        "p_vert": LoadProgram(point_forces=[(0.0, (0.0, -2e-5))]),
        "modal": LoadProgram(),
    }
    if setup not in loads:
        raise KeyError(setup)
    return c, loads[setup]


_BUILDERS = {"sheet": _sheet, "beam": _beam, "arc": _arc}

SETUPS = {
    "sheet": ("tension", "tension_swapped", "modal"),
    "beam": ("simply_supported", "clamped", "modal"),
    "arc": ("pressure", "p_hor", "p_vert", "modal"),
}


def build_problem(example: str, setup: str, n_fe: int, ea=1.0, ei=1.0, rho=1.0,
                  scheme: str = "B2M2") -> BeamProblem:
    """Problem for one setup of one structure on a uniform mesh of ``n_fe`` quadratic elements."""
    if example not in _BUILDERS:
        raise KeyError(f"unknown example {example!r}")
    if setup not in SETUPS[example]:
        raise KeyError(f"unknown setup {setup!r} for {example!r}; known: {SETUPS[example]}")
    curve = _geometry(example, n_fe)
    cons, loads = _BUILDERS[example](setup, curve)
    return BeamProblem(curve, cons, loads, ea=ea, ei=ei, rho=rho, scheme=scheme, width=WIDTH)


# --------------------------------------------------------------------- case catalog

TABLES = {
    "1": "sheet axial stiffness from statics",
    "2": "sheet density from axial modes",
    "3": "sheet density with noisy modal data",
    "4": "beam bending stiffness from statics",
    "5": "beam density from bending modes, regularized vs adapted mesh",
    "6": "beam density with noisy modal data",
    "7": "arc axial and bending stiffness from statics",
    "8": "arc density from modes",
}


@dataclass
class CaseDescriptor:
    """One identification case as stored in the catalog.

    ``experiments`` lists ``{"setup", "fe", "scheme"}`` entries, ``unknowns`` maps
    each identified field to its reference, bounds, initial guess and scale,
    ``known`` maps the remaining fields to registered reference names and
    ``variants`` optionally overrides the material mesh and regularization.
    """

    id: str
    table: str
    example: str
    kind: str
    experiments: list
    dense_fe: int
    n_exp: int
    unknowns: dict
    known: dict
    material: dict
    levels: list = field(default_factory=lambda: [1.0])
    modes: int = 0
    noise: list = field(default_factory=lambda: [0.0, 0.0])
    seeds: int = 1
    alpha: float = 0.0
    variants: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    row: int = 0
    note: str = ""

    def __post_init__(self):
        if self.kind not in ("static", "modal"):
            raise ValueError(f"case {self.id}: kind must be static or modal")
        if self.table not in TABLES:
            raise ValueError(f"case {self.id}: unknown table {self.table!r}")
        for ex in self.experiments:
            if ex["setup"] not in SETUPS[self.example]:
                raise ValueError(f"case {self.id}: unknown setup {ex['setup']!r}")
            if self.dense_fe < 8 * ex["fe"]:
                raise ValueError(f"case {self.id}: data mesh must be at least 8x the analysis mesh")
        if self.kind == "modal" and self.modes < 1:
            raise ValueError(f"case {self.id}: modal cases need modes >= 1")
        if self.noise[0] > 0 or self.noise[1] > 0:
            if self.seeds < 25:
                raise ValueError(f"case {self.id}: noisy cases need at least 25 seeds")

    @property
    def noisy(self) -> bool:
        return self.noise[0] > 0 or self.noise[1] > 0

    def variant_labels(self) -> list:
        return list(self.variants) or [""]

    def variant(self, label: str = "") -> tuple[dict, float]:
        """Material-mesh spec and regularization weight of one variant."""
        if not label:
            if self.variants:
                label = next(iter(self.variants))
            else:
                return self.material, self.alpha
        v = self.variants[label]
        return v.get("material", self.material), float(v.get("alpha", self.alpha))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CaseDescriptor":
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _case_dir():
    return resources.files("igafemu") / "cases"


def _file_name(case_id: str) -> str:
    return "case_" + case_id.replace(".", "_") + ".json"


def load_case(case_id: str) -> CaseDescriptor:
    path = _case_dir() / _file_name(case_id)
    if not path.is_file():
        raise KeyError(f"unknown case {case_id!r}")
    d = json.loads(path.read_text())
    if d.get("id") != case_id:
        raise ValueError(f"case file {path.name} holds id {d.get('id')!r}")
    return CaseDescriptor.from_dict(d)


def list_cases() -> list[str]:
    ids = []
    for p in _case_dir().iterdir():
        if p.name.startswith("case_") and p.name.endswith(".json"):
            ids.append(json.loads(p.read_text())["id"])
    return sorted(ids, key=_sort_key)


def _sort_key(cid: str):
    head, _, tail = cid.partition(".")
    num = "".join(ch for ch in tail if ch.isdigit())
    return (head, int(num) if num else 0, tail)


def table_cases(table: str) -> list[CaseDescriptor]:
    if str(table) not in TABLES:
        raise KeyError(f"unknown table {table!r}; known: {sorted(TABLES)}")
    cases = [load_case(c) for c in list_cases()]
    return sorted((c for c in cases if c.table == str(table)), key=lambda c: c.row)


def mesh_from_spec(spec: dict):
    """Material mesh from a catalog entry: ``{"n_el", "order"}`` or ``{"breakpoints", "order"}``."""
    from .material import MaterialMesh

    order = int(spec.get("order", 1))
    if "breakpoints" in spec:
        return MaterialMesh(np.asarray(spec["breakpoints"], float), order)
    return MaterialMesh.uniform(int(spec["n_el"]), order)
