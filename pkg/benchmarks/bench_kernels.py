"""Compiled vs numpy element kernels and block PCG.

Run: python benchmarks/bench_kernels.py [--degree 2] [--level 4] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np
import scipy.sparse as sp

from mcfem import _kernels_py
from mcfem.assembly import mass_matrix
from mcfem.femspace import tables
from mcfem.mesh import build_icosphere

try:
    from mcfem import _core
except ImportError:
    _core = None


def _pcg_args(M, B):
    M = sp.csr_matrix(M)
    return (M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, 1.0 / M.diagonal(),
            np.ascontiguousarray(B), np.zeros_like(B), 1e-12, 10_000)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    mesh, x = build_icosphere(args.level, args.degree)
    tb = tables(mesh.degree)
    xe = np.ascontiguousarray(x[mesh.elements])
    w = np.ascontiguousarray(tb.quad.weights)
    N, dN = np.ascontiguousarray(tb.N), np.ascontiguousarray(tb.dN)
    M = mass_matrix(mesh, x)
    B = np.ascontiguousarray(np.random.default_rng(0).standard_normal((mesh.node_count, 3)))

    cases = {
        "element_matrices": lambda m: m.element_matrices(xe, N, dN, w),
        "element_ax": lambda m: m.element_ax(xe, dN, w),
        "element_mass_ax": lambda m: m.element_mass_ax(xe, N, dN, w),
        "pcg": lambda m: m.pcg(*_pcg_args(M, B)),
    }
    backends = [("python", _kernels_py)] + ([("cython", _core)] if _core is not None else [])
    print(f"# k={mesh.degree} level={mesh.level} nodes={mesh.node_count} elements={mesh.n_elements}")
    print("kernel,backend,seconds,speedup")
    for name, fn in cases.items():
        base = None
        for label, mod in backends:
            t = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            base = t if base is None else base
            print(f"{name},{label},{t:.4e},{base / t:.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
