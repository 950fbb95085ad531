"""Compare the compiled and pure-Python persistence kernels.

    python3 benchmarks/bench_kernels.py [--sizes 16,32,64,128] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from tacnet._backend import available_backends
from tacnet.persistence import critical_point_map, superlevel_diagram


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,32,64,128")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    backends = available_backends()
    rng = np.random.default_rng(args.seed)
    names = list(backends)
    print(f"{'op':<10}{'size':>6}" + "".join(f"{n + ' ms':>12}" for n in names)
          + ("   speedup" if len(names) > 1 else ""))
    for size in (int(s) for s in args.sizes.split(",")):
        field = rng.uniform(size=(size, size))
        for op, call in (("diagram", superlevel_diagram), ("cp_map", critical_point_map)):
            times = [bench(lambda k=k: call(field, kernels=k), args.repeat)
                     for k in backends.values()]
            line = f"{op:<10}{size:>6}" + "".join(f"{t * 1e3:>12.3f}" for t in times)
            if len(times) > 1:
                line += f"{times[-1] / times[0]:>9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
