"""Compare the compiled and pure-Python GMM kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 200] [--boot 100]

Prints per-call timings for ``minimize`` on the bundled deliberation data and
on a simulated dataset, then a full bootstrap under each backend, and checks
that both backends return identical estimates.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from shadowcace import _kernels
from shadowcace.causal import bootstrap_cace
from shadowcace.gmm import default_start
from shadowcace.io import table4_dataset
from shadowcace.simulation import SimConfig, simulate_dataset


def _time_minimize(kern, cells, repeat):
    x0 = default_start(cells).as_array()
    W = np.eye(4)
    args = (x0, cells.y, cells.a, cells.z, cells.r, cells.weight, W, (True, True, True), 1e-10, 500)
    out = kern.minimize(*args)
    t0 = time.perf_counter()
    for _ in range(repeat):
        kern.minimize(*args)
    return (time.perf_counter() - t0) / repeat, out


def _time_bootstrap(name, data, n_boot):
    _kernels.set_backend(name)
    t0 = time.perf_counter()
    draws, skipped = bootstrap_cace(data, n_boot, seed=7)
    return time.perf_counter() - t0, draws


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    p.add_argument("--boot", type=int, default=100)
    args = p.parse_args(argv)

    backends = _kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the Python kernel is available")
    datasets = {
        "table4": table4_dataset(),
        "sim-n2000": simulate_dataset(SimConfig(n=2000), 0),
    }
    default = _kernels.BACKEND
    print(f"{'case':<22}{'backend':<10}{'time':>14}")
    for label, data in datasets.items():
        results = {}
        for name in backends:
            dt, out = _time_minimize(_kernels.get_backend(name), data.cells, args.repeat)
            results[name] = out
            print(f"{'minimize/' + label:<22}{name:<10}{dt * 1e6:>11.1f} us")
        if len(results) == 2:
            same = np.array_equal(results["cython"][0], results["python"][0])
            print(f"  estimates identical across backends: {same}")

    data = datasets["sim-n2000"]
    draws = {}
    for name in backends:
        dt, draws[name] = _time_bootstrap(name, data, args.boot)
        print(f"{'bootstrap/B=' + str(args.boot):<22}{name:<10}{dt * 1e3:>11.1f} ms")
    if len(draws) == 2:
        print(f"  bootstrap draws identical across backends: "
              f"{np.array_equal(draws['cython'], draws['python'])}")
    _kernels.set_backend(default)


if __name__ == "__main__":
    main()
