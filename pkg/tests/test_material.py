import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igafemu.material import (MaterialError, MaterialField, MaterialMesh, as_callable, build_map,
                              eval_field, interpolation_matrix, split_nonconforming)


class TestMesh:
    def test_nodes(self):
        np.testing.assert_allclose(MaterialMesh.uniform(4, 1).nodes, [0, .25, .5, .75, 1])
        np.testing.assert_allclose(MaterialMesh.uniform(4, 0).nodes, [.125, .375, .625, .875])

    def test_invalid(self):
        with pytest.raises(MaterialError):
            MaterialMesh(np.array([0.0, 0.5, 0.5, 1.0]))
        with pytest.raises(MaterialError):
            MaterialMesh.uniform(3, 2)
        with pytest.raises(MaterialError):
            MaterialMesh.uniform(3).locate([1.5])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 1),
           st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_interpolation_rows_sum_to_one(self, n, order, xi):
        mesh = MaterialMesh.uniform(n, order)
        Q = interpolation_matrix(mesh, np.array(xi))
        np.testing.assert_allclose(np.asarray(Q.sum(axis=1)).ravel(), 1.0, atol=1e-14)
        assert Q.min() >= -1e-15


class TestField:
    def test_linear_reproduced(self):
        f = MaterialField(MaterialMesh.uniform(5), 2 + 3 * MaterialMesh.uniform(5).nodes)
        xi = np.linspace(0, 1, 23)
        np.testing.assert_allclose(f(xi), 2 + 3 * xi, atol=1e-14)

    def test_constant_elements(self):
        f = MaterialField(MaterialMesh.uniform(2, 0), [1.0, 5.0])
        np.testing.assert_allclose(f([0.1, 0.4, 0.6, 0.99]), [1, 1, 5, 5])

    def test_bounds_enforced(self):
        mesh = MaterialMesh.uniform(2)
        with pytest.raises(MaterialError):
            MaterialField(mesh, [1.0, -1.0, 1.0])
        with pytest.raises(MaterialError):
            MaterialField(mesh, [1.0, 3.0, 1.0], bounds=(0.5, 2.0))
        with pytest.raises(MaterialError):
            MaterialField(mesh, [1.0, 1.0])

    def test_values_immutable(self):
        f = MaterialField(MaterialMesh.uniform(2), 1.0)
        with pytest.raises(ValueError):
            f.values[0] = 3.0

    def test_csv(self, tmp_path):
        f = MaterialField(MaterialMesh.uniform(3), [1.0, 2.0, 3.0, 4.0], name="ea")
        f.to_csv(tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "xi,ea" and len(lines) == 5

    def test_as_callable(self):
        np.testing.assert_allclose(as_callable(2.5)(np.zeros(3)), 2.5)
        with pytest.raises(MaterialError):
            as_callable(0.0)


class TestMaps:
    def test_conforming_map(self):
        mesh = MaterialMesh.uniform(2)
        f = MaterialField(mesh, [1.0, 3.0, 2.0])
        fe = np.column_stack([np.linspace(0, 1, 9)[:-1], np.linspace(0, 1, 9)[1:]])
        fmap = build_map(fe, mesh)
        for e in range(8):
            for t in (-1.0, 0.0, 0.4, 1.0):
                xi = fe[e, 0] + (t + 1) / 2 * (fe[e, 1] - fe[e, 0])
                val, _ = eval_field(f, fmap, e, t)
                assert val == pytest.approx(f(np.array([xi]))[0], abs=1e-13)

    def test_nonconforming_rejected(self):
        fe = np.column_stack([np.linspace(0, 1, 4)[:-1], np.linspace(0, 1, 4)[1:]])
        with pytest.raises(MaterialError):
            build_map(fe, MaterialMesh.uniform(2))

    def test_split(self):
        mesh = MaterialMesh(np.array([0, 0.3, 0.5, 1.0]))
        parts = split_nonconforming((0.25, 0.45), mesh)
        assert parts == [((0.25, 0.3), 0), ((0.3, 0.45), 1)]
        with pytest.raises(MaterialError):
            split_nonconforming((0.2, 0.6), mesh)
