"""Time the numba kernels against the numpy fallback on realistic workloads.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from teleauth import kernels
from teleauth.auth import build_profiles, stream_authenticate
from teleauth.data import synth_dataset
from teleauth.decoder import builtin_grammar
from teleauth.hmm import Segment, baum_welch_step, forward_log_likelihood


def _workloads():
    grammar = builtin_grammar()
    ops, trials = synth_dataset(5, 2, 6, 2.0, 11, grammar)
    profiles = build_profiles([m for op in ops for m in op.models.values()], grammar)
    model = next(iter(ops[0].models.values()))
    rng = np.random.default_rng(0)
    segs = [Segment(rng.normal(size=(120, model.dim)), model.gesture_id, trial_id=f"T{k}")
            for k in range(20)]
    trial = trials[0]
    return {
        "forward (20 x 120 frames)":
            lambda: [forward_log_likelihood(model, s.observations) for s in segs],
        "baum-welch step (20 segments)": lambda: baum_welch_step(model, segs, seed=0),
        f"windowed auth 1s ({len(trial)} frames, 5 operators)":
            lambda: stream_authenticate(profiles, trial, 1.0, with_labels=False),
        "windowed auth 1s with labels":
            lambda: stream_authenticate(profiles, trial, 1.0, with_labels=True),
    }


def _best(fn, repeat):
    fn()  # warm-up (compiles numba kernels on first use)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    backends = kernels.available_backends()
    work = _workloads()
    print(f"{'workload':<48}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in work.items():
        row = {}
        for b in backends:
            prev = kernels.use_backend(b)
            try:
                row[b] = _best(fn, args.repeat)
            finally:
                kernels.use_backend(prev)
        speed = (f"{row['numpy'] / row['numba']:>9.1f}x" if "numba" in row else f"{'n/a':>10}")
        print(f"{name:<48}" + "".join(f"{row[b]:>11.4f}s" for b in backends) + speed)


if __name__ == "__main__":
    main()
