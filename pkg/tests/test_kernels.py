import os
import subprocess
import sys

import numpy as np
import pytest

from igafemu import kernels


def _batch(nq=40, k=3, seed=0):
    rng = np.random.default_rng(seed)
    n_cp = nq + k
    x = np.column_stack([np.linspace(0, 5, n_cp), 0.3 * np.sin(np.linspace(0, 3, n_cp))])
    x += 0.05 * rng.standard_normal(x.shape)
    conn = np.arange(nq)[:, None] + np.arange(k)[None, :]
    dN = rng.standard_normal((nq, k))
    dN -= dN.mean(axis=1, keepdims=True)
    ddN = rng.standard_normal((nq, k))
    ddN -= ddN.mean(axis=1, keepdims=True)
    dL = rng.uniform(0.05, 0.2, nq)
    A11 = rng.uniform(0.5, 2.0, nq)
    B11 = rng.uniform(-0.2, 0.2, nq)
    EA = rng.uniform(50, 150, nq)
    EI = rng.uniform(0.5, 2.0, nq)
    return x, conn, dN, ddN, dL, A11, B11, EA, EI


def _force(args, x):
    gN, gM, _ = kernels.qp_forces_numpy(x, *args[1:], tangent=False)
    EA, EI, conn = args[7], args[8], args[1]
    f = np.zeros(x.size)
    vals = EA[:, None] * gN + EI[:, None] * gM
    k = conn.shape[1]
    idx = (2 * conn[:, :, None] + np.arange(2)).reshape(len(conn), 2 * k)
    np.add.at(f, idx, vals)
    return f


@pytest.mark.skipif(not kernels._HAVE_NUMBA, reason="numba not installed")
class TestBackends:
    @pytest.mark.parametrize("k", [2, 3])
    def test_identical_outputs(self, k):
        args = _batch(k=k)
        a = kernels.qp_forces_numpy(*args)
        b = kernels.qp_forces_numba(*args)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12 * np.abs(x).max())

    def test_env_flag(self):
        code = "from igafemu import kernels; print(kernels.backend())"
        env = dict(os.environ, IGAFEMU_DISABLE_NUMBA="1")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert out.stdout.strip() == "numpy"
        env["IGAFEMU_DISABLE_NUMBA"] = "0"
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert out.stdout.strip() == "numba"


class TestTangent:
    @pytest.mark.parametrize("k", [2, 3])
    def test_tangent_by_differences(self, k):
        args = _batch(nq=6, k=k, seed=1)
        x = args[0]
        _, _, Kq = kernels.qp_forces_numpy(*args)
        conn = args[1]
        K = np.zeros((x.size, x.size))
        idx = (2 * conn[:, :, None] + np.arange(2)).reshape(len(conn), 2 * k)
        for q in range(len(conn)):
            K[np.ix_(idx[q], idx[q])] += Kq[q]
        h = 1e-6
        num = np.zeros_like(K)
        for j in range(x.size):
            e = np.zeros(x.size)
            e[j] = h
            num[:, j] = (_force(args, x + e.reshape(x.shape)) - _force(args, x - e.reshape(x.shape))) / (2 * h)
        np.testing.assert_allclose(K, num, rtol=1e-6, atol=1e-6 * np.abs(K).max())
        np.testing.assert_allclose(K, K.T, atol=1e-10 * np.abs(K).max())

    def test_degenerate_tangent(self):
        args = list(_batch(nq=3))
        args[0] = np.zeros_like(args[0])
        with pytest.raises(Exception, match="degenerate"):
            kernels.qp_forces_numpy(*args)
