"""Case execution: data generation with a disk cache, identification runs and tables."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .catalog import CaseDescriptor, build_problem, load_case, mesh_from_spec, table_cases
from .fe import BeamModel
from .inverse import (FieldBlock, ModalObjectiveSpec, Parametrization, StaticExperiment,
                      StaticObjectiveSpec, modal_residual_jacobian, static_residual_jacobian,
                      tir_minimize)
from .material import MaterialField
from .synthetic import (MeasurementSet, add_noise, error_metrics, generate_modal_data,
                        generate_static_data, get_field, uniform_grid)

log = logging.getLogger(__name__)

__all__ = ["default_out_dir", "case_data", "noisy_data", "build_spec", "run_case", "run_seeds",
           "aggregate", "reproduce_table", "parse_seeds", "OUT_DIR_ENV"]

OUT_DIR_ENV = "IGAFEMU_OUT_DIR"
FIELDS = ("ea", "ei", "rho")


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "igafemu_out"))


def parse_seeds(text) -> list[int]:
    """``"25"`` -> 0..24, ``"3:7"`` -> 3..6, ``"1,4,9"`` -> as listed."""
    if isinstance(text, int):
        return list(range(text))
    text = str(text).strip()
    if "," in text:
        return [int(s) for s in text.split(",")]
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b)))
    return list(range(int(text)))


# --------------------------------------------------------------------- data

def _reference_fields(example: str) -> dict:
    return {f: get_field(f"{example}_{f}") for f in FIELDS}


def _data_stem(case: CaseDescriptor, setup: str) -> str:
    tag = ("l" + "-".join(f"{x:g}" for x in case.levels)) if case.kind == "static" else f"m{case.modes}"
    return f"{case.example}_{setup}_fe{case.dense_fe}_n{case.n_exp}_{tag}"


def case_data(case: CaseDescriptor, out_dir=None) -> list[MeasurementSet]:
    """Noise-free data for every experiment of ``case`` from the dense reference model.

    Sets are cached under ``<out_dir>/data`` and shared between cases.
    """
    root = Path(out_dir or default_out_dir()) / "data"
    root.mkdir(parents=True, exist_ok=True)
    refs = _reference_fields(case.example)
    out = []
    for ex in case.experiments:
        stem = root / _data_stem(case, ex["setup"])
        if stem.with_suffix(".json").is_file() and stem.with_suffix(".csv").is_file():
            out.append(MeasurementSet.read(stem))
            continue
        model = BeamModel(build_problem(case.example, ex["setup"], case.dense_fe, **refs))
        xi = uniform_grid(case.n_exp)
        if case.kind == "static":
            data = generate_static_data(model, case.levels, xi)
        else:
            data = generate_modal_data(model, case.modes, xi)
        data.meta.update({"example": case.example, "setup": ex["setup"]})
        data.write(stem, case.id)
        out.append(MeasurementSet.read(stem))
    return out


def noisy_data(case: CaseDescriptor, data: list[MeasurementSet], seed) -> list[MeasurementSet]:
    if not case.noisy or seed is None:
        return data
    s_u, s_w = case.noise
    return [add_noise(d, s_u, [int(seed), j], s_w) for j, d in enumerate(data)]


# --------------------------------------------------------------------- identification

def _known_field(name: str):
    return get_field(name).as_field()


def build_spec(case: CaseDescriptor, data: list[MeasurementSet], variant: str = ""):
    """Objective specification and initial guess for one case variant."""
    mat, alpha = case.variant(variant)
    mesh = mesh_from_spec(mat)
    blocks, q0 = [], []
    for name in FIELDS:
        if name in case.unknowns:
            u = case.unknowns[name]
            blocks.append(FieldBlock(name, mesh, tuple(u["bounds"]), float(u.get("scale", 1.0))))
            q0.append(np.full(mesh.n_nodes, float(u["q0"])))
    param = Parametrization(tuple(blocks))
    q0 = np.concatenate(q0)
    init = param.fields(q0)
    fields = {n: init[n] if n in init else _known_field(case.known[n]) for n in FIELDS}
    if case.kind == "static":
        exps = []
        for ex, d in zip(case.experiments, data):
            model = BeamModel(build_problem(case.example, ex["setup"], ex["fe"],
                                            scheme=ex.get("scheme", "B2M2"), **fields))
            exps.append(StaticExperiment(model, list(case.levels), d.xi, d.values))
        spec = StaticObjectiveSpec(exps, param, alpha)
    else:
        (ex,), (d,) = case.experiments, data
        model = BeamModel(build_problem(case.example, ex["setup"], ex["fe"], **fields))
        spec = ModalObjectiveSpec(model, param, d.xi, d.values, d.omegas, alpha)
    return spec, q0


def run_case(case: CaseDescriptor | str, seed=None, variant: str = "", out_dir=None,
             tol: float = 1e-6, alpha: float | None = None, data=None) -> dict:
    """Identify the unknown fields of one case for one noise seed.

    Returns a JSON-ready dict with per-field nodal errors (percent).
    """
    if isinstance(case, str):
        case = load_case(case)
    if data is None:
        data = case_data(case, out_dir)
    data = noisy_data(case, data, seed)
    spec, q0 = build_spec(case, data, variant)
    if alpha is not None:
        spec.alpha = float(alpha)
    fn = static_residual_jacobian if case.kind == "static" else modal_residual_jacobian
    lb, ub = spec.param.bounds()
    t0 = time.perf_counter()
    res = tir_minimize(lambda q, jacobian=True: fn(spec, q, jacobian), q0, (lb, ub), tol=tol,
                       x_scale=spec.param.scale())
    out = {"case": case.id, "variant": variant, "seed": seed, "alpha": spec.alpha,
           "iterations": res.iterations, "reason": res.reason, "f_opt": res.f_opt,
           "nfev": res.nfev, "time": time.perf_counter() - t0, "fields": {}}
    sl = spec.param.slices()
    for b in spec.param.blocks:
        q = res.q_opt[sl[b.name]]
        ref = get_field(case.unknowns[b.name]["reference"]).at_nodes(b.mesh)
        d, ave, mx = error_metrics(q, ref)
        out["fields"][b.name] = {"nodes": b.mesh.nodes.tolist(), "q_opt": q.tolist(),
                                 "q_ref": ref.tolist(), "delta": d.tolist(),
                                 "delta_ave": ave, "delta_max": mx}
    return out


def _run_one(args):
    case, seed, variant, out_dir, tol, alpha = args
    return run_case(case, seed, variant, out_dir, tol, alpha)


def run_seeds(case: CaseDescriptor | str, seeds=None, variant: str = "", out_dir=None,
              tol: float = 1e-6, alpha: float | None = None, workers: int = 1) -> list[dict]:
    """Run all seeds of a case (a single unseeded run when the case has no noise)."""
    if isinstance(case, str):
        case = load_case(case)
    case_data(case, out_dir)  # populate the cache before forking workers
    if not case.noisy:
        seeds = [None]
    elif seeds is None:
        seeds = list(range(case.seeds))
    tasks = [(case, s, variant, out_dir, tol, alpha) for s in seeds]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def aggregate(results: list[dict]) -> dict:
    """Mean and sample standard deviation of the errors over seeds, per field."""
    out = {"n_runs": len(results),
           "iterations": float(np.mean([r["iterations"] for r in results]))}
    for name in results[0]["fields"]:
        for key in ("delta_ave", "delta_max"):
            v = np.array([r["fields"][name][key] for r in results])
            out[f"{name}_{key}_mean"] = float(v.mean())
            out[f"{name}_{key}_std"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return out


def _target_values(case: CaseDescriptor, variant: str, name: str):
    p = case.target.get(variant, case.target) if variant else case.target
    it = p.get("iter", case.target.get("iter"))
    if name in p:
        p = p[name]

    def split(v):
        return (v[0], v[1]) if isinstance(v, list) else (v, None)

    return it, split(p.get("delta_max")), split(p.get("delta_ave"))


TABLE_COLUMNS = ["case", "variant", "field", "n_runs", "iterations", "delta_max_mean",
                 "delta_max_std", "delta_ave_mean", "delta_ave_std", "target_iterations",
                 "target_delta_max", "target_delta_max_std", "target_delta_ave",
                 "target_delta_ave_std", "status"]


def table_rows(case: CaseDescriptor, variant: str, results: list[dict] | None, status="ok"):
    rows = []
    agg = aggregate(results) if results else {}
    for name in case.unknowns:
        it, (pm, pms), (pa, pas) = _target_values(case, variant, name)
        rows.append({"case": case.id, "variant": variant, "field": name,
                     "n_runs": agg.get("n_runs", 0), "iterations": agg.get("iterations"),
                     "delta_max_mean": agg.get(f"{name}_delta_max_mean"),
                     "delta_max_std": agg.get(f"{name}_delta_max_std"),
                     "delta_ave_mean": agg.get(f"{name}_delta_ave_mean"),
                     "delta_ave_std": agg.get(f"{name}_delta_ave_std"),
                     "target_iterations": it, "target_delta_max": pm, "target_delta_max_std": pms,
                     "target_delta_ave": pa, "target_delta_ave_std": pas, "status": status})
    return rows


def write_results(results: list[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(results, fh, indent=1)


def write_table(rows: list[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in TABLE_COLUMNS})


def reproduce_table(table: str, out_dir=None, seeds=None, workers: int = 1,
                    tol: float = 1e-6) -> tuple[list[dict], list[str]]:
    """Run every case of a table, writing per-case results and ``table_<id>.csv``.

    Returns ``(rows, failed_case_ids)``; a failing case is reported and skipped.
    """
    out_dir = Path(out_dir or default_out_dir())
    rows, failed = [], []
    for case in table_cases(table):
        for variant in case.variant_labels():
            try:
                res = run_seeds(case, seeds, variant, out_dir, tol, workers=workers)
            except Exception as exc:  # keep going with the other cases
                log.error("case %s%s failed: %s", case.id, f" ({variant})" if variant else "", exc)
                failed.append(case.id)
                rows.extend(table_rows(case, variant, None, f"failed: {exc}"))
                continue
            tag = case.id + (f"_{variant}" if variant else "")
            write_results(res, out_dir / "results" / f"case_{tag}.json")
            rows.extend(table_rows(case, variant, res))
    write_table(rows, out_dir / f"table_{table}.csv")
    return rows, failed
