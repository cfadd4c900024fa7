"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 32] [--size 80]

Prints one TSV row per kernel with the median wall time of each backend and
the speedup, after checking that both backends return the same numbers.
"""
import argparse
import sys
import timeit

import numpy as np

from cffont import _fallback
from cffont.projection import make_plan

try:
    from cffont import _kernels
except ImportError:
    _kernels = None


def _cases(batch, size, directions):
    rng = np.random.default_rng(0)
    plan = make_plan(size, size, directions)
    images = rng.uniform(0.0, 1.0, (batch, size * size))
    bin_grads = rng.normal(size=(batch, plan.n_directions, plan.n_bins))
    n_param = 64 * size * size
    adam_state = [rng.normal(size=n_param) for _ in range(3)] + [rng.uniform(0.0, 1.0, n_param)]
    return {
        "project_batch": lambda mod: mod.project_batch(images, plan.index_map, plan.n_bins),
        "scatter_bins": lambda mod: mod.scatter_bins(bin_grads, plan.index_map),
        # param, grad, m, v updated in place; copies keep the runs comparable
        "adam_update": lambda mod: _adam(mod, *adam_state),
    }


def _adam(mod, p, g, m, v):
    p, m, v = p.copy(), m.copy(), v.copy()
    mod.adam_update(p, g, m, v, 1e-3, 0.9, 0.99, 0.1, 0.01, 1e-8, 1e-4)
    return p


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--size", type=int, default=80)
    ap.add_argument("--directions", type=int, default=12)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    print("kernel\tnumpy_ms\tcython_ms\tspeedup\tmax_abs_diff")
    for name, fn in _cases(args.batch, args.size, args.directions).items():
        diff = float(np.max(np.abs(np.asarray(fn(_kernels)) - np.asarray(fn(_fallback)))))
        times = {}
        for label, mod in (("numpy", _fallback), ("cython", _kernels)):
            runs = timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)
            times[label] = 1e3 * float(np.median(runs))
        print(f"{name}\t{times['numpy']:.3f}\t{times['cython']:.3f}\t"
              f"{times['numpy'] / times['cython']:.2f}x\t{diff:.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
