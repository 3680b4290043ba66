"""Compare the compiled and pure-Python element kernels on a realistic fluid mesh.

    python benchmarks/bench_kernels.py [--nz 32 --nr 16 --repeat 5]
"""
import argparse
import timeit

import numpy as np

from fsisplit import _kernels_py
from fsisplit.discretization.assembly import transformed_basis_gradients
from fsisplit.discretization.spaces import Resolution, build_spaces
from fsisplit.geometry import ReferenceGeometry, harmonic_extension
from fsisplit.scheme import smooth_profile

try:
    from fsisplit import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def inputs(nz: int, nr: int, seed: int = 0):
    spaces = build_spaces(ReferenceGeometry(), Resolution(nz, nr, nz, max(2, nr // 2), 8))
    amap = harmonic_extension(smooth_profile(spaces, 0.05), spaces)
    bgrad = np.ascontiguousarray(transformed_basis_gradients(amap))
    jw = np.ascontiguousarray(amap.jacobian * spaces.qw)
    u = np.random.default_rng(seed).standard_normal((spaces.n_v, 2))
    ue = np.ascontiguousarray(u[spaces.v_elems])
    return ue, bgrad, jw


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nz", type=int, default=32)
    ap.add_argument("--nr", type=int, default=16)
    ap.add_argument("--p", type=float, default=3.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    ue, bgrad, jw = inputs(args.nz, args.nr)
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    print(f"{bgrad.shape[0]} elements, {bgrad.shape[1]} quadrature points each, p = {args.p}")
    results = {}
    for name, mod in backends.items():
        D = mod.strain_at_qp(ue, bgrad)
        calls = {
            "strain_at_qp": lambda: mod.strain_at_qp(ue, bgrad),
            "viscous (picard)": lambda: mod.viscous_element(bgrad, jw, D, args.p, False),
            "viscous (newton)": lambda: mod.viscous_element(bgrad, jw, D, args.p, True),
        }
        for label, fn in calls.items():
            t = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results[(name, label)] = t
        results[(name, "out")] = mod.viscous_element(bgrad, jw, D, args.p, True)
    for label in ("strain_at_qp", "viscous (picard)", "viscous (newton)"):
        line = f"{label:<18} python {1e3 * results[('python', label)]:9.2f} ms"
        if "cython" in backends:
            t = results[("cython", label)]
            line += f"   cython {1e3 * t:9.2f} ms   speedup {results[('python', label)] / t:6.1f}x"
        print(line)
    if "cython" in backends:
        (rp, mp), (rc, mc) = results[("python", "out")], results[("cython", "out")]
        print(f"max |difference|: residual {np.abs(rp - rc).max():.2e}, matrix {np.abs(mp - mc).max():.2e}")
    else:
        print("compiled extension not available; only the Python kernels were timed")


if __name__ == "__main__":
    main()
