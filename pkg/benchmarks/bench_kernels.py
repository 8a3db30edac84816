"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-``repeat`` wall time per call after one
warm-up call (which also triggers compilation), and the max abs difference
between the two outputs.
"""

import argparse
import timeit

import numpy as np

from mudlab import kernels
from mudlab.coding import CODE_57, conv_encode
from mudlab.model import SystemConfig, generate_instance


def _sweep_case(K, alpha, T, seed=0):
    inst = generate_instance(SystemConfig.from_load(K, alpha, 6.0, seed), symbols=T)
    y = np.ascontiguousarray(inst.y)
    m0 = np.tanh(0.5 * y)
    return inst, y, m0


def cases():
    inst, y, m0 = _sweep_case(512, 1.0, 8)
    lam = np.zeros_like(y)
    out = {}

    def sspda(fn):
        m = m0.copy()
        fn(m, inst.R, y, lam, inst.sigma2, inst.alpha, 0.0)
        return m

    def mic(fn):
        m = m0.copy()
        fn(m, inst.R, y, lam, inst.sigma2, 0.0)
        return m

    out["sspda sweep K=512 T=8"] = (lambda: sspda(kernels.sspda_sweep_jit),
                                    lambda: sspda(kernels.sspda_sweep_numpy))
    out["mic sweep K=512 T=8"] = (lambda: mic(kernels.mic_sweep_jit),
                                  lambda: mic(kernels.mic_sweep_numpy))

    small = generate_instance(SystemConfig(14, 28, 6.0, 1))
    lam_s = np.zeros(14)
    out["posterior K=14"] = (
        lambda: kernels.posterior_enumerate_jit(small.y, small.R, lam_s, small.sigma2, True),
        lambda: kernels.posterior_enumerate_numpy(small.y, small.R, lam_s, small.sigma2, True))

    rng = np.random.default_rng(2)
    cw = conv_encode(rng.integers(0, 2, size=(28, 1000)))
    Lc = (1.0 - 2.0 * cw) * 2.0 + rng.standard_normal(cw.shape)
    La = np.zeros((28, 1000))
    args = (Lc, La, CODE_57.next_state, CODE_57.out_sym, 1000)
    out["bcjr 28 x 1000 bits"] = (lambda: kernels.bcjr_batch_jit(*args),
                                  lambda: kernels.bcjr_batch_numpy(*args))
    return out


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(_maxdiff(x, y) for x, y in zip(a, b) if x is not None)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':<24}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, (fj, fn) in cases().items():
        diff = _maxdiff(fj(), fn())
        tj = min(timeit.repeat(fj, number=1, repeat=args.repeat))
        tn = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        print(f"{name:<24}{1e3 * tj:>12.3f}{1e3 * tn:>12.3f}{tn / tj:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
