"""Compare the compiled kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [case_name] [repeats]
"""

import sys
import timeit

import numpy as np

from opfbench import _pykernels
from opfbench.caseparser import load_case
from opfbench.grid import build_network, build_ybus

try:
    from opfbench import _ckernels
except ImportError:
    _ckernels = None


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv):
    name = argv[1] if len(argv) > 1 else "case118"
    reps = int(argv[2]) if len(argv) > 2 else 50
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    net = build_network(load_case(name))
    Y = build_ybus(net).Y
    rng = np.random.default_rng(0)
    n = net.n_buses
    V = (1 + 0.05 * rng.standard_normal(n)) * np.exp(0.1j * rng.standard_normal(n))
    lam = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    m = 4 * n
    s, z = rng.random(m) + 0.1, rng.random(m) + 0.1
    ds, dz = rng.standard_normal(m), rng.standard_normal(m)

    cases = [
        ("dsbus_dv", (Y, V)),
        ("d2sbus_dv2", (Y, V, lam)),
        ("step_to_boundary", (s, ds)),
        ("comp_dot", (s, ds, z, dz, 0.7)),
    ]
    print(f"{name}: n={n}, {reps} repeats")
    print(f"{'kernel':<18}{'python ms':>12}{'cython ms':>12}{'speedup':>10}{'max |diff|':>14}")
    for kname, args in cases:
        fp, fc = getattr(_pykernels, kname), getattr(_ckernels, kname)
        diff = max_diff(fp(*args), fc(*args))
        tp = min(timeit.repeat(lambda: fp(*args), number=reps, repeat=3)) / reps * 1e3
        tc = min(timeit.repeat(lambda: fc(*args), number=reps, repeat=3)) / reps * 1e3
        print(f"{kname:<18}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.2f}{diff:>14.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
