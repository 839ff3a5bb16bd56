"""Drag on a translating sphere against 6 pi over refinement levels."""
import argparse
import time

import numpy as np

from febe import bem, shapes
from febe.quadrature import OrderHistogram, QuadratureSettings
from febe.subdivision import build_patches


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--lam", default="inf")
    p.add_argument("--q-max", type=int, default=12)
    args = p.parse_args()
    settings = QuadratureSettings(tol=1e-7, q_min=2, q_max=args.q_max)
    print(f"{'level':>5} {'elements':>8} {'F_x / 6pi - 1':>14} {'nonconv':>8} {'seconds':>8}")
    for level in args.levels:
        t0 = time.perf_counter()
        patches = build_patches(shapes.sphere_mesh(level))
        X = patches.mesh.vertices
        op = bem.assemble_fluid(X, patches, args.lam, settings, histogram=OrderHistogram())
        sol = bem.solve_fluid(op, bem.DirichletData(np.tile([1.0, 0.0, 0.0], (len(X), 1))))
        err = sol.total_force(op)[0] / (6 * np.pi) - 1
        print(f"{level:5d} {len(patches):8d} {err:14.3e} {op.nonconverged:8d} "
              f"{time.perf_counter() - t0:8.1f}")


if __name__ == "__main__":
    main()
