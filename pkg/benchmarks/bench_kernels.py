"""Timing of the quadrature-point kernels: numba loop kernel against batched numpy.

Run with ``python3 benchmarks/bench_kernels.py [n_fe ...]``. The two backends are
also checked to agree on every output before timing.
"""
import sys
import time

import numpy as np

from igafemu import kernels
from igafemu.catalog import build_problem
from igafemu.fe import BeamModel
from igafemu.synthetic import get_field


def _inputs(n_fe):
    model = BeamModel(build_problem("arc", "pressure", n_fe, ea=get_field("arc_ea"),
                                    ei=get_field("arc_ei"), rho=get_field("arc_rho")))
    u = model.solve_static([1.0])[0].u
    s = model.bend
    ea, ei = model._ea_b, model._ei_b
    return (model.current(u), s.conn, s.dN, s.ddN, s.dL, s.A11, s.B11, ea, ei)


def _best(fn, args, repeat=7):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args, tangent=True)
        ts.append(time.perf_counter() - t0)
    return min(ts)


def main(sizes):
    if not kernels._HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return
    print(f"{'n_fe':>6} {'nq':>7} {'numpy [ms]':>11} {'numba [ms]':>11} {'speed-up':>9}")
    for n_fe in sizes:
        args = _inputs(n_fe)
        a = kernels.qp_forces_numpy(*args, tangent=True)
        b = kernels.qp_forces_numba(*args, tangent=True)  # also triggers compilation
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12 * np.abs(x).max())
        t_np = _best(kernels.qp_forces_numpy, args)
        t_nb = _best(kernels.qp_forces_numba, args)
        print(f"{n_fe:6d} {args[1].shape[0]:7d} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} "
              f"{t_np / t_nb:9.2f}")


if __name__ == "__main__":
    main([int(s) for s in sys.argv[1:]] or [64, 256, 1024, 4096])
