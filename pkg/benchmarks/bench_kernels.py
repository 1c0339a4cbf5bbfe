"""Compiled kernels versus the numpy fallback.

    python3 benchmarks/bench_kernels.py [--grid 32] [--particles 100000] [--repeat 5] [--json out.json]

Times the three hot kernels (flux divergence of the grid solver, Box-Muller
transform of raw Philox words, particle boundary handling) for every
available backend, checks that the backends agree and prints the speedup.
"""

import argparse
import json
import math
import timeit

import numpy as np

from beltrami import catalog, kernels
from beltrami.expr import preset
from beltrami.fpe import FpeOperator
from beltrami.grid import Grid3


def flux_case(n: int):
    grid = Grid3.cube(n)
    op = FpeOperator(grid, catalog.get_entry("b1-classical").field, preset("cos-x"), 1.0, 0.5, 1.0)
    x = grid.centers()
    f = 1.0 + 0.3 * np.sin(x[..., 0]) * np.cos(x[..., 1] + x[..., 2])
    h = grid.spacing
    args = (grid.pad(f), op.jc, op.jk, op.adv, 0.5, h[0], h[1], h[2], grid.zero_flux)

    def run(mod):
        return mod.corner_flux_divergence(*args, 1)[0]

    return run


def box_muller_case(count: int):
    raw = np.random.Philox(key=7).random_raw(count * 4).reshape(count, 4)

    def run(mod):
        return mod.box_muller(raw, 3)

    return run


def boundary_case(count: int):
    rng = np.random.default_rng(3)
    x0 = rng.uniform(-1.0, 2 * math.pi + 1.0, size=(count, 3))
    lower, upper = np.zeros(3), np.full(3, 2 * math.pi)
    mask = np.array([1, 0, 1], dtype=np.uint8)

    def run(mod):
        x = x0.copy()
        mod.apply_boundary(x, lower, upper, mask)
        return x

    return run


def bench(cases, repeat: int) -> list:
    backends = kernels.backends()
    rows = []
    for name, run in cases:
        results, times = {}, {}
        for label, mod in backends.items():
            results[label] = run(mod)
            times[label] = min(timeit.repeat(lambda: run(mod), number=1, repeat=repeat))
        ref = results["python"]
        diff = max(float(np.max(np.abs(r - ref))) for r in results.values())
        rows.append({"kernel": name, "seconds": times, "max_abs_diff": diff})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--grid", type=int, default=32)
    ap.add_argument("--particles", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write the timings to this file")
    args = ap.parse_args(argv)

    cases = [
        (f"corner_flux_divergence {args.grid}^3", flux_case(args.grid)),
        (f"box_muller N={args.particles}", box_muller_case(args.particles)),
        (f"apply_boundary N={args.particles}", boundary_case(args.particles)),
    ]
    rows = bench(cases, args.repeat)
    print(f"{'kernel':36s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for r in rows:
        py = r["seconds"]["python"] * 1e3
        cy = r["seconds"].get("cython")
        speed = f"{py / (cy * 1e3):8.1f}" if cy else f"{'n/a':>8s}"
        cy_s = f"{cy * 1e3:12.3f}" if cy else f"{'n/a':>12s}"
        print(f"{r['kernel']:36s} {py:12.3f} {cy_s} {speed} {r['max_abs_diff']:10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
