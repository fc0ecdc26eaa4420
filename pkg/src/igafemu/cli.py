"""Command-line front end.

Verbs
-----
forward    one static or modal analysis described by a JSON config
generate   measurement files of a catalog case (noise-free and per seed)
identify   identification runs of a catalog case over seeds, plus an aggregate row
lcurve     regularization-weight sweep with corner selection
reproduce  every case of one results table

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 partial
reproduction. The default output directory is taken from ``IGAFEMU_OUT_DIR``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import runner
from .catalog import TABLES, CaseDescriptor, build_problem, load_case
from .fe import BeamModel, SolverError
from .inverse import ForwardFailure, l_curve_select
from .material import MaterialError, MaterialField, MaterialMesh
from .modal import ModalError, solve_modes, write_modal_csv
from .synthetic import get_field

log = logging.getLogger("igafemu")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PARTIAL = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package (``forward`` or ``case``)."""
    return json.loads((resources.files("igafemu") / "schemas" / f"{name}.schema.json").read_text())


def _read_json(path, schema: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, load_schema(schema))
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {loc}: {exc.message}") from exc
    return cfg


def _field(spec, example: str, name: str):
    if spec is None:
        return get_field(f"{example}_{name}").as_field()
    if isinstance(spec, str):
        return get_field(spec).as_field()
    if isinstance(spec, (int, float)):
        return float(spec)
    order = int(spec.get("order", 1))
    vals = np.asarray(spec["values"], float)
    if vals.size - order < 1:
        raise ConfigError(f"field {name}: too few nodal values for order {order}")
    return MaterialField(MaterialMesh.uniform(vals.size - order, order), vals, name=name)


def _case(args) -> CaseDescriptor:
    if args.config:
        cfg = _read_json(args.config, "case")
        try:
            return CaseDescriptor.from_dict(cfg)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    if not args.case:
        raise ConfigError("give --case or --config")
    return load_case(args.case)


def _seeds(args, case: CaseDescriptor):
    if not case.noisy:
        return [None]
    if args.seeds is None:
        return list(range(case.seeds))
    try:
        return runner.parse_seeds(args.seeds)
    except ValueError as exc:
        raise ConfigError(f"bad --seeds {args.seeds!r}") from exc


def _out(args) -> Path:
    out = Path(args.out_dir) if args.out_dir else runner.default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------- verbs

def cmd_forward(args) -> int:
    if not args.config:
        raise ConfigError("forward needs --config")
    cfg = _read_json(args.config, "forward")
    ex = cfg["example"]
    fields = {n: _field(cfg.get("fields", {}).get(n), ex, n) for n in ("ea", "ei", "rho")}
    try:
        problem = build_problem(ex, cfg["setup"], cfg["fe"], scheme=cfg.get("scheme", "B2M2"),
                                **fields)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    model = BeamModel(problem)
    xi = np.linspace(0.0, 1.0, int(cfg.get("grid", 100)) + 1)
    out = _out(args)
    stem = Path(args.config).stem
    if cfg.get("analysis", "static") == "modal":
        sol = solve_modes(model, int(cfg.get("modes", 6)))
        path = out / f"{stem}_modes.csv"
        write_modal_csv(path, model, sol, xi)
        with open(out / f"{stem}_frequencies.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "omega"])
            for i, om in enumerate(sol.omegas):
                w.writerow([i + 1, repr(float(om))])
        print(f"{sol.n_mode} modes, omega_1 = {sol.omegas[0]:.6g} -> {path}")
        return EXIT_OK
    levels = cfg.get("levels", [1.0])
    states = model.solve_static(levels, tol=float(args.tol or 1e-10))
    path = out / f"{stem}_state.csv"
    cols = ["level", "xi", "x", "z", "ux", "uz", "stretch", "curvature"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for lam, s in zip(levels, states):
            prof = model.profile(s.u, xi)
            for j in range(xi.size):
                w.writerow([lam] + [repr(float(prof[c][j])) for c in cols[1:]])
    print(f"{len(states)} load levels -> {path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    case = _case(args)
    out = _out(args)
    data = runner.case_data(case, out)
    root = out / "generated" / case.id
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for seed in _seeds(args, case):
        tag = "clean" if seed is None else f"seed_{seed}"
        for j, d in enumerate(runner.noisy_data(case, data, seed)):
            written += d.write(root / f"{tag}_{case.experiments[j]['setup']}", case.id)
    print(f"case {case.id}: {len(written) // 2} measurement sets -> {root}")
    return EXIT_OK


def cmd_identify(args) -> int:
    case = _case(args)
    out = _out(args)
    seeds = _seeds(args, case)
    rows = []
    for variant in case.variant_labels():
        res = runner.run_seeds(case, seeds, variant, out, args.tol or 1e-6, args.alpha,
                               workers=args.workers)
        tag = case.id + (f"_{variant}" if variant else "")
        runner.write_results(res, out / "results" / f"case_{tag}.json")
        rows += runner.table_rows(case, variant, res)
    runner.write_table(rows, out / f"identify_{case.id}.csv")
    for r in rows:
        label = f"{r['case']}{' ' + r['variant'] if r['variant'] else ''} {r['field']}"
        print(f"{label}: delta_max {r['delta_max_mean']:.3f} +- {r['delta_max_std']:.3f} %, "
              f"delta_ave {r['delta_ave_mean']:.3f} +- {r['delta_ave_std']:.3f} % "
              f"({r['n_runs']} runs)")
    return EXIT_OK


def _alpha_grid(text: str | None) -> np.ndarray:
    lo, hi, step = (-3.0, 1.0, 0.05) if not text else map(float, text.split(":"))
    return 10.0 ** np.arange(lo, hi + 0.5 * step, step)


def cmd_lcurve(args) -> int:
    case = _case(args)
    out = _out(args)
    variant = args.variant or ("reg" if "reg" in case.variants else "")
    data = runner.case_data(case, out)
    spec, q0 = runner.build_spec(case, data, variant)
    try:
        alphas = _alpha_grid(args.alphas)
    except ValueError as exc:
        raise ConfigError(f"bad --alphas {args.alphas!r}") from exc
    alpha, pts = l_curve_select(spec, q0, alphas, tol=args.tol or 1e-6)
    i1, i2 = pts[0]["corner"]
    path = out / f"lcurve_{case.id}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "residual", "seminorm", "corner_fd", "corner_spline"])
        for i, p in enumerate(pts):
            w.writerow([repr(p["alpha"]), repr(p["residual"]), repr(p["seminorm"]),
                        int(i == i1), int(i == i2)])
    agree = "agree" if abs(i1 - i2) <= 1 else "disagree"
    print(f"case {case.id}: alpha = {alpha:.4g} (corner estimates {agree}) -> {path}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.table not in TABLES:
        raise ConfigError(f"unknown table {args.table!r}; known: {sorted(TABLES)}")
    seeds = runner.parse_seeds(args.seeds) if args.seeds else None
    out = _out(args)
    rows, failed = runner.reproduce_table(args.table, out, seeds, args.workers, args.tol or 1e-6)
    print(f"table {args.table}: {len(rows)} rows -> {out / f'table_{args.table}.csv'}")
    if failed:
        print(f"failed cases: {', '.join(failed)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# --------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help="output directory (default $IGAFEMU_OUT_DIR or ./igafemu_out)")
    common.add_argument("--tol", type=float, help="solver tolerance")
    common.add_argument("-v", "--verbose", action="store_true")
    case = argparse.ArgumentParser(add_help=False)
    case.add_argument("--case", help="catalog case id, e.g. 1.3")
    case.add_argument("--config", help="JSON file (forward config or case descriptor)")
    case.add_argument("--seeds", help="'25' (0..24), '3:7' or '1,4,9'")

    p = _Parser(prog="igafemu", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    f = sub.add_parser("forward", parents=[common], help="static or modal forward analysis")
    f.add_argument("--config", required=True)
    sub.add_parser("generate", parents=[common, case], help="write measurement files")
    i = sub.add_parser("identify", parents=[common, case], help="identify material fields")
    i.add_argument("--alpha", type=float, help="override the regularization weight")
    i.add_argument("--workers", type=int, default=1)
    lc = sub.add_parser("lcurve", parents=[common, case], help="L-curve sweep")
    lc.add_argument("--alphas", help="log10 grid 'lo:hi:step' (default -3:1:0.05)")
    lc.add_argument("--variant")
    r = sub.add_parser("reproduce", parents=[common], help="run all cases of a table")
    r.add_argument("table")
    r.add_argument("--seeds")
    r.add_argument("--workers", type=int, default=1)
    return p


VERBS = {"forward": cmd_forward, "generate": cmd_generate, "identify": cmd_identify,
         "lcurve": cmd_lcurve, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return VERBS[args.verb](args)
    except (ConfigError, KeyError, MaterialError, jsonschema.ValidationError) as exc:
        print(f"igafemu: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ModalError, ForwardFailure) as exc:
        print(f"igafemu: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
