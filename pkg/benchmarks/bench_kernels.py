"""Time the numba and pure-numpy kernels on desk-sized inputs.

    python benchmarks/bench_kernels.py [--repeats 5]

Both backends are called through the same dispatchers; outputs are compared
before timing so a speedup never hides a divergence.
"""
import argparse
import time

import numpy as np

from meshattack.kernels import gru_backward, gru_forward, walk_kernel
from meshattack.mesh import Mesh
from meshattack.shapes import icosphere


def best_of(fn, repeats):
    fn()  # warm-up (triggers numba compilation)
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--walks", type=int, default=64)
    ap.add_argument("--length", type=int, default=200)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--batch", type=int, nargs="+", default=[16, 1], help="16 = training batch, 1 = attack step")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    v, f = icosphere(3)
    mesh = Mesh(v, f)
    offsets, nbrs = mesh.adjacency_csr
    u = rng.random((args.walks, args.length))
    H = args.hidden
    U = rng.normal(0, 0.1, size=(H, 3 * H))
    bh = rng.normal(size=3 * H)

    cases = {
        f"walk ({args.walks}x{args.length} on {mesh.n_vertices} verts)":
            lambda nb: walk_kernel(offsets, nbrs, mesh.n_vertices, u, use_numba=nb),
    }
    for B in args.batch:
        xp = rng.normal(size=(B, args.length, 3 * H))
        dhs = rng.normal(size=(B, args.length, H))
        cases[f"gru forward (B={B}, L={args.length}, H={H})"] = \
            lambda nb, xp=xp: gru_forward(xp, U, bh, use_numba=nb)
        cases[f"gru fwd+bwd (B={B}, L={args.length}, H={H})"] = \
            lambda nb, xp=xp, dhs=dhs: gru_backward(dhs, gru_forward(xp, U, bh, use_numba=nb), U, use_numba=nb)
    print(f"{'kernel':<46}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in cases.items():
        a, b = fn(False), fn(True)
        for x, y in zip(a, b):
            assert np.allclose(x, y, atol=1e-10), f"{name}: backends disagree"
        t_np = best_of(lambda: fn(False), args.repeats)
        t_nb = best_of(lambda: fn(True), args.repeats)
        print(f"{name:<46}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
