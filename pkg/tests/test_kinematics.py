import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igafemu.kinematics import SingularGeometryError, perp, point_kinematics, variations
from igafemu.splines import basis_eval, greville_refine, quarter_circle, straight_line

ARC = greville_refine(quarter_circle(10.0), 4)


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _element(curve, e, t):
    conn = curve.connectivity()[e]
    return curve.control_points[conn], basis_eval(curve, e, t)


class TestKinematics:
    def test_reference_state_is_strain_free(self):
        X, basis = _element(ARC, 1, 0.3)
        k = point_kinematics(X, X, basis)
        assert k.eps11 == 0 and k.kappa11 == 0 and k.lam == 1.0

    def test_circle_curvature(self):
        X, basis = _element(ARC, 2, -0.4)
        k = point_kinematics(X, X, basis)
        # clockwise parametrization: normal perp(a1) points outward
        assert k.B11 / k.A11 == pytest.approx(-1 / 10.0, rel=1e-12)

    def test_uniform_stretch(self):
        c = straight_line((0, 0), (2, 0))
        X, basis = _element(c, 0, 0.1)
        k = point_kinematics(X, 1.3 * X, basis)
        assert k.lam == pytest.approx(1.3)
        assert k.eps0 == pytest.approx(0.5 * (1.3**2 - 1))

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-np.pi, np.pi), st.floats(-50, 50), st.floats(-50, 50),
           st.integers(0, 3), st.floats(-1, 1),
           st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6))
    def test_objectivity(self, theta, tx, tz, e, t, pert):
        X, basis = _element(ARC, e, t)
        x = X + np.reshape(pert, (3, 2))
        a = point_kinematics(X, x, basis)
        y = x @ _rot(theta).T + np.array([tx, tz])
        b = point_kinematics(X, y, basis)
        assert abs(b.eps11 - a.eps11) <= 1e-12 * max(1.0, abs(a.a11))
        assert abs(b.kappa11 - a.kappa11) <= 1e-12 * max(1.0, abs(a.b11) + np.linalg.norm(a.a1_1))

    def test_variations_by_differences(self):
        X, basis = _element(ARC, 0, 0.2)
        rng = np.random.default_rng(3)
        x = X + 0.2 * rng.standard_normal(X.shape)
        de, dk = variations(point_kinematics(X, x, basis), basis)
        h = 1e-6
        num_e, num_k = [], []
        for i in range(6):
            d = np.zeros(6)
            d[i] = h
            p = point_kinematics(X, x + d.reshape(3, 2), basis)
            m = point_kinematics(X, x - d.reshape(3, 2), basis)
            num_e.append((p.eps11 - m.eps11) / (2 * h))
            num_k.append((p.kappa11 - m.kappa11) / (2 * h))
        np.testing.assert_allclose(de, num_e, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(dk, num_k, rtol=1e-6, atol=1e-8)

    def test_perp(self):
        np.testing.assert_array_equal(perp([1.0, 0.0]), [0.0, 1.0])

    def test_degenerate_tangent(self):
        X, basis = _element(ARC, 0, 0.0)
        with pytest.raises(SingularGeometryError):
            point_kinematics(X, np.zeros_like(X), basis)
