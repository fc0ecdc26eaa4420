"""Acceptance suite: every criterion at its stated tolerance, one summary line each.

The noisy statistics (criterion 7) run 25 identifications for each of 23 cases and
take tens of minutes on one core.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from igafemu import runner
from igafemu.catalog import build_problem, load_case, table_cases
from igafemu.fe import BeamModel
from igafemu.inverse import l_curve_select
from igafemu.modal import solve_modes
from igafemu.synthetic import error_metrics, fe_error_metrics, get_field

from conftest import report

XI = np.linspace(0.0, 1.0, 1001)


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _fields(example):
    return {f: get_field(f"{example}_{f}") for f in ("ea", "ei", "rho")}


def _slope(ladder, errors):
    return -np.polyfit(np.log(ladder), np.log(errors), 1)[0]


def _static_u(example, setup, n_fe, scheme="B2M2"):
    m = BeamModel(build_problem(example, setup, n_fe, scheme=scheme, **_fields(example)))
    return m.sampling_matrix(XI) @ m.solve_static([1.0])[0].u


def _omegas(example, n_fe, k):
    return solve_modes(BeamModel(build_problem(example, "modal", n_fe, **_fields(example))), k).omegas


def _target(case, field=None, variant=None):
    p = case.target[variant] if variant else case.target
    return p[field] if field else p


class TestConvergenceRates:
    LADDER = np.array([8, 16, 32, 64])

    def test_static_l2(self):
        ref = _static_u("sheet", "tension", 1024)
        err = [fe_error_metrics(_static_u("sheet", "tension", n), ref) for n in self.LADDER]
        s = _slope(self.LADDER, err)
        report(1, "static L2 slope >= 2.8 (sheet, ref 1024 FE)", s >= 2.8, f"slope {s:.2f}")

    def test_axial_frequencies(self):
        ref = _omegas("sheet", 2048, 4)
        err = np.array([np.abs(_omegas("sheet", n, 4) / ref - 1) for n in self.LADDER])
        s = [_slope(self.LADDER, err[:, i]) for i in range(4)]
        report(1, "axial frequency slope >= 3.7 (modes 1-4, ref 2048 FE)", min(s) >= 3.7,
               "slopes " + " ".join(f"{x:.2f}" for x in s))

    def test_bending_frequencies(self):
        ladder = np.array([10, 20, 40, 80])
        ref = _omegas("beam", 2560, 4)
        err = np.array([np.abs(_omegas("beam", n, 4) / ref - 1) for n in ladder])
        s = [_slope(ladder, err[:, i]) for i in range(4)]
        report(1, "bending frequency slope >= 1.8 (modes 1-4, ref 2560 FE)", min(s) >= 1.8,
               "slopes " + " ".join(f"{x:.2f}" for x in s))


class TestNoiseFree:
    def test_sheet_stiffness_ladder(self, out_dir):
        aves, ok, parts = [], True, []
        for cid in ("1.1", "1.2", "1.3", "1.4"):
            case = load_case(cid)
            ave = runner.run_case(case, out_dir=out_dir)["fields"]["ea"]["delta_ave"]
            ref = _target(case)["delta_ave"]
            ok &= abs(ave - ref) <= max(0.5, 0.25 * ref)
            aves.append(ave)
            parts.append(f"{cid} {ave:.2f} (target {ref})")
        mono = all(a > b for a, b in zip(aves, aves[1:]))
        report(2, "cases 1.1-1.4 delta_ave within max(0.5 pp, 25 %), monotone", ok and mono,
               ", ".join(parts) + f", monotone {mono}")

    def test_beam_bending_stiffness(self, out_dir):
        ok, parts = True, []
        for cid in ("2.1s", "2.1c"):
            f = runner.run_case(cid, out_dir=out_dir)["fields"]["ei"]
            ok &= f["delta_max"] <= 1.0 and f["delta_ave"] <= 0.5
            parts.append(f"{cid} {f['delta_max']:.2f}/{f['delta_ave']:.2f}")
        report(3, "cases 2.1s/2.1c delta_max <= 1.0 %, delta_ave <= 0.5 %", ok, ", ".join(parts))

    def test_arc_stiffness(self, out_dir):
        f = runner.run_case("3.1", out_dir=out_dir)["fields"]
        ea, ei = f["ea"]["delta_ave"], f["ei"]["delta_ave"]
        report(4, "case 3.1 delta_ave(EA) <= 0.6 %, delta_ave(EI) <= 2.5 %", ea <= 0.6 and ei <= 2.5,
               f"EA {ea:.2f}, EI {ei:.2f}")

    def test_mixed_scheme_beats_standard(self):
        parts, ok = [], True
        for setup in ("p_hor", "p_vert"):
            ref = _static_u("arc", setup, 4096)
            e2 = fe_error_metrics(_static_u("arc", setup, 64, "B2M2"), ref)
            e1 = fe_error_metrics(_static_u("arc", setup, 64, "B2M1"), ref)
            ok &= e1 < e2
            parts.append(f"{setup} B2M1 {e1:.2e} < B2M2 {e2:.2e}")
        report(4, "B2M1 static error below B2M2 at 64 FE for point forces", ok, ", ".join(parts))

    def test_density_exact_stiffness(self, out_dir):
        ok, parts = True, []
        for cid, dmax, dave in (("1d.2", 1.2, 0.3), ("3d.1", 1.8, 0.8)):
            f = runner.run_case(cid, out_dir=out_dir)["fields"]["rho"]
            ok &= f["delta_max"] <= dmax and f["delta_ave"] <= dave
            parts.append(f"{cid} {f['delta_max']:.2f}/{f['delta_ave']:.2f} (limits {dmax}/{dave})")
        report(5, "density from modes with exact stiffness", ok, ", ".join(parts))

    def test_density_inexact_stiffness_trend(self, out_dir):
        aves = {}
        for case in table_cases("2"):
            if case.id in ("1d.6", "1d.8", "1d.9", "1d.10", "1d.11"):
                aves[case.id] = runner.run_case(case, out_dir=out_dir)["fields"]["rho"]["delta_ave"]
        first, ninth = aves["1d.6"], aves["1d.10"]
        trend = " -> ".join(f"{k} {v:.2f}" for k, v in aves.items())
        # beyond nine modes the error may grow again; reported only
        report(6, "delta_ave >= 25 % with 1 mode, <= 3 % with 9 modes", first >= 25 and ninth <= 3,
               trend)


NOISY = [c.id for t in ("1", "3", "4", "6", "7") for c in table_cases(t) if c.noisy]


class TestNoisyStatistics:
    @pytest.mark.slow
    @pytest.mark.parametrize("case_id", NOISY)
    def test_target_mean_within_two_std(self, case_id, out_dir):
        case = load_case(case_id)
        res = runner.run_seeds(case, out_dir=out_dir)
        agg = runner.aggregate(res)
        ok, parts = len(res) >= 25, []
        for name in case.unknowns:
            tgt = case.target.get(name, case.target)
            for key in ("delta_ave", "delta_max"):
                m, s = agg[f"{name}_{key}_mean"], agg[f"{name}_{key}_std"]
                p = tgt[key][0]
                hit = m - 2 * s <= p <= m + 2 * s
                ok &= hit
                parts.append(f"{name} {key} {m:.2f}+-{s:.2f} vs {p}{'' if hit else ' OUT'}")
        report(7, f"case {case_id} ({len(res)} seeds) target mean inside mean +- 2 std", ok,
               "; ".join(parts))


PROPERTY_TESTS = [
    "tests/test_inverse.py::TestJacobians",
    "tests/test_sensitivities.py",
    "tests/test_kernels.py::TestTangent",
    "tests/test_splines.py::TestBasis::test_partition_of_unity",
    "tests/test_material.py::TestMesh::test_interpolation_rows_sum_to_one",
    "tests/test_modal.py::TestProperties::test_orthonormal_and_rayleigh",
    "tests/test_kinematics.py::TestKinematics::test_objectivity",
    "tests/test_inverse.py::TestOptimizer::test_iterates_stay_feasible",
    "tests/test_inverse.py::TestPenalty::test_constant_nullspace",
]


class TestPropertySuite:
    def test_runs_green_within_a_minute(self):
        root = Path(__file__).resolve().parent.parent
        t0 = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                               *PROPERTY_TESTS], cwd=root, capture_output=True, text=True)
        dt = time.perf_counter() - t0
        tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
        report(8, "property suite green in under 60 s", proc.returncode == 0 and dt < 60,
               f"{tail} ({dt:.0f} s)")


class TestRegularization:
    def test_lcurve_case_2d3(self, out_dir):
        case = load_case("2d.3")
        data = runner.case_data(case, out_dir)
        spec, q0 = runner.build_spec(case, data, "reg")
        alphas = 10.0 ** np.arange(-3.0, 1.0 + 1e-9, 0.05)
        alpha, pts = l_curve_select(spec, q0, alphas)
        i1, i2 = pts[0]["corner"]
        res = pts[i1]["result"]
        ref = get_field(case.unknowns["rho"]["reference"]).at_nodes(spec.param.blocks[0].mesh)
        _, ave, mx = error_metrics(res.q_opt, ref)
        ok = abs(i1 - i2) <= 1 and alpha == pts[i1]["alpha"] and ave <= 4.0
        report(9, "L-curve corner estimators agree, regularized delta_ave <= 4 %", ok,
               f"alpha {alpha:.4g} (indices {i1}/{i2}), delta_ave {ave:.2f}, delta_max {mx:.2f}"
               f" (target alpha 0.1585, delta_ave 2.60)")
