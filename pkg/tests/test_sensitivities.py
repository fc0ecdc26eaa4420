import numpy as np
import pytest

from igafemu.catalog import build_problem
from igafemu.fe import BeamModel
from igafemu.modal import solve_modes
from igafemu.sensitivities import (assemble_S_EA, assemble_S_EI, build_Z, dmode_dq, du_dq,
                                   element_sensitivity_blocks)

from conftest import central_diff, nodal


def _model(setup, scheme="B2M2", n_fe=8):
    ea = nodal(lambda x: 100 * (1.5 - 0.5 * x), 4, name="ea")
    ei = nodal(lambda x: 1e-3 * (2 + np.sin(3 * x)), 4, name="ei")
    rho = nodal(lambda x: 1e-5 * (1 + x), 4, name="rho")
    return BeamModel(build_problem("arc", setup, n_fe, ea=ea, ei=ei, rho=rho, scheme=scheme))


def _with(m, name, q):
    return m.update(**{name: getattr(m.problem, name).with_values(q)})


class TestStiffnessSensitivity:
    @pytest.mark.parametrize("scheme", ["B2M2", "B2M1"])
    @pytest.mark.parametrize("name,fn", [("ea", assemble_S_EA), ("ei", assemble_S_EI)])
    def test_force_derivative(self, scheme, name, fn):
        m = _model("pressure", scheme)
        u = m.solve_static([1.0])[0].u
        q0 = getattr(m.problem, name).values.copy()
        S = fn(m, u)

        def f(q):
            return _with(m, name, q).internal(u, tangent=False)[0]

        num = central_diff(f, q0, 1e-3 * q0)
        _with(m, name, q0)
        np.testing.assert_allclose(S, num, rtol=1e-5, atol=1e-8 * np.abs(num).max())

    def test_element_blocks_sum_to_global(self):
        m = _model("pressure")
        u = m.solve_static([1.0])[0].u
        S = assemble_S_EA(m, u)
        conn = m.curve.connectivity()
        acc = np.zeros_like(S)
        for e in range(m.curve.n_elements):
            d = (2 * conn[e][:, None] + np.arange(2)).ravel()
            for me, blk in element_sensitivity_blocks(m, u, e, "EA").items():
                acc[np.ix_(d, m.problem.ea.mesh.element_nodes(me))] += blk
        np.testing.assert_allclose(acc, S, atol=1e-12 * np.abs(S).max())

    @pytest.mark.parametrize("setup,name", [("pressure", "ea"), ("p_vert", "ei"), ("p_hor", "ei")])
    def test_displacement_derivative(self, setup, name):
        m = _model(setup, "B2M1")
        q0 = getattr(m.problem, name).values.copy()
        st = m.solve_static([1.0])[0]
        S = (assemble_S_EA if name == "ea" else assemble_S_EI)(m, st.u)
        du = du_dq(m, st.u, S)

        def solve(q):
            return _with(m, name, q).solve_static([1.0], tol=1e-13)[0].u

        num = central_diff(solve, q0, 1e-4 * q0)
        _with(m, name, q0)
        np.testing.assert_allclose(du, num, rtol=1e-5, atol=1e-6 * np.abs(num).max())


class TestMassSensitivity:
    def test_mass_is_linear_in_density(self):
        m = _model("modal")
        Z = build_Z(m)
        rho = m.problem.rho.values
        M = m.mass().toarray()
        acc = sum(Z.slice(k).toarray() * rho[k] for k in range(rho.size))
        np.testing.assert_allclose(acc, M, atol=1e-14 * np.abs(M).max())
        u = np.random.default_rng(0).standard_normal(m.n_dof)
        np.testing.assert_allclose(Z.contract(u) @ rho, M @ u, atol=1e-13 * np.abs(M @ u).max())

    def test_mode_derivative(self):
        m = _model("modal", n_fe=16)
        q0 = m.problem.rho.values.copy()
        n_mode = 4
        sol = solve_modes(m, n_mode)
        Z = build_Z(m)
        ref = sol.modes.copy()

        def modes(q):
            s = solve_modes(_with(m, "rho", q), n_mode)
            V = s.modes * np.sign(np.einsum("ij,ij->j", s.modes, ref))
            return np.concatenate([V.ravel(), s.omegas])

        num = central_diff(modes, q0, 1e-4 * q0)
        _with(m, "rho", q0)
        n = m.n_dof
        for i in range(n_mode):
            dU, dom = dmode_dq(m, sol, i, Z)
            dU_num = num[: n * n_mode].reshape(n, n_mode, -1)[:, i, :]
            np.testing.assert_allclose(dom, num[n * n_mode + i], rtol=1e-5)
            np.testing.assert_allclose(dU, dU_num, rtol=1e-5, atol=1e-5 * np.abs(dU_num).max())

    def test_uniform_scaling_direction(self):
        # omega ~ rho^(-1/2): d omega / d s at rho(1 + s) equals -omega / 2
        m = _model("modal", n_fe=16)
        sol = solve_modes(m, 3)
        Z = build_Z(m)
        rho = m.problem.rho.values
        for i in range(3):
            _, dom = dmode_dq(m, sol, i, Z)
            assert dom @ rho == pytest.approx(-0.5 * sol.omegas[i], rel=1e-6)

    def test_requires_nodal_field(self):
        m = BeamModel(build_problem("beam", "modal", 8))
        with pytest.raises(TypeError):
            build_Z(m)
