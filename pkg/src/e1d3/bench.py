"""Compare the compiled and numpy convolution backends.

    python -m e1d3.bench [--size 32] [--repeat 3]

Reports throughput per kernel and the wall time of one full training step
(forward, loss, backward) for each available backend.
"""
import argparse
import time

import numpy as np

from . import kernels
from .losses import combined_loss
from .network import NetworkSpec, backward, build_network, forward


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(size, channels, rng):
    xp = rng.standard_normal((2, channels, size + 2, size + 2, size + 2))
    w = rng.standard_normal((channels, channels, 3, 3, 3))
    g = rng.standard_normal((2, channels, size, size, size))
    macs = 2 * channels * channels * 27 * size**3
    return {
        "forward": (lambda b: b.corr3d(xp, w, 1), macs),
        "grad_weight": (lambda b: b.corr3d_grad_weight(xp, g, 1, 3), macs),
        "grad_input": (lambda b: b.corr3d_grad_input(g, w, 1, xp.shape), macs),
    }


def train_step_time(size, repeat):
    spec = NetworkSpec("E1D3", levels=3, base_width=8)
    state = build_network(spec, 0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 4, size, size, size))
    y = rng.choice(np.array([0, 1, 2, 4]), size=(2, 1, size, size, size))

    def step():
        state.zero_grad()
        trace = forward(state, spec, x)
        _, grads = combined_loss(trace, y, spec.variant)
        backward(trace, state, spec, grads)

    return _best(step, repeat)


def run(size=32, channels=16, repeat=3, backends=None):
    rng = np.random.default_rng(0)
    cases = kernel_cases(size, channels, rng)
    rows = []
    for name in backends or kernels.available_backends():
        b = kernels.get_backend(name)
        for kname, (fn, macs) in cases.items():
            t = _best(lambda: fn(b), repeat)
            rows.append((name, kname, t, macs / t / 1e9))
        with kernels.use_backend(name):
            rows.append((name, "train_step", train_step_time(size, repeat), float("nan")))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description="conv backend benchmark")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    rows = run(args.size, args.channels, args.repeat)
    print(f"{'backend':<10}{'kernel':<14}{'seconds':>10}{'GMAC/s':>10}")
    for backend, kname, t, rate in rows:
        rate_s = "" if np.isnan(rate) else f"{rate:10.2f}"
        print(f"{backend:<10}{kname:<14}{t:10.4f}{rate_s}")
    base = {k: t for b, k, t, _ in rows if b == "python"}
    for b, k, t, _ in rows:
        if b != "python" and k in base:
            print(f"speedup {b}/{k}: {base[k] / t:.1f}x")


if __name__ == "__main__":
    main()
