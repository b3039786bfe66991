#!/usr/bin/env python3
"""Benchmark the compiled vs pure-numpy convolution backends.

Times the three kernel primitives on the layer shapes the default desk-scale
network actually runs, plus one full training step, and prints a table with
the speedup of the compiled extension over the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--batch N]
"""

import argparse
import statistics
import time

import numpy as np

from calseg.kernels import backends


# (label, N, Cin, H, W, Cout, k, stride) padded shapes as conv2d produces them
def layer_shapes(batch):
    return [
        ("enc1 64x64 13->8 k3", batch, 13, 66, 66, 8, 3, 1),
        ("enc2 down 8->16 k2", batch, 8, 64, 64, 16, 2, 2),
        ("enc5 4x4 128->128 k3", batch, 128, 6, 6, 128, 3, 1),
        ("dec1 8x8 128->64 k3", batch, 128, 10, 10, 64, 3, 1),
        ("dec4 64x64 16->8 k3", batch, 16, 66, 66, 8, 3, 1),
    ]


def time_call(fn, repeats):
    fn()  # warm up
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def bench_kernels(repeats, batch):
    rng = np.random.default_rng(0)
    rows = []
    for label, n, cin, h, w, cout, k, stride in layer_shapes(batch):
        xp = rng.normal(size=(n, cin, h, w)).astype(np.float32)
        kernel = rng.normal(size=(cout, cin, k, k)).astype(np.float32)
        ho = (h - k) // stride + 1
        wo = (w - k) // stride + 1
        dy = rng.normal(size=(n, cout, ho, wo)).astype(np.float32)
        for op, make in [
            ("fwd", lambda m: (lambda: m.conv_fwd(xp, kernel, stride))),
            ("grad_in", lambda m: (lambda: m.conv_grad_input(dy, kernel, stride, h, w))),
            ("grad_k", lambda m: (lambda: m.conv_grad_kernel(dy, xp, stride, k, k))),
        ]:
            times = {name: time_call(make(mod), repeats)
                     for name, mod in backends().items()}
            rows.append((f"{label} [{op}]", times))
    return rows


def bench_training_step(repeats):
    """One optimizer step of the desk-scale net under each backend."""
    import importlib
    import os
    import sys

    results = {}
    for name in backends():
        os.environ["CALSEG_KERNELS"] = name
        for mod in [m for m in list(sys.modules) if m.startswith("calseg")]:
            del sys.modules[mod]
        from calseg import autodiff as ad
        from calseg import losses
        from calseg.network import NetConfig, init_params
        from calseg.training import Adam, Hyperparams

        net = init_params(NetConfig(), seed=1)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 13, 64, 64)).astype(np.float32)
        y = (rng.random((2, 1, 64, 64)) < 0.1).astype(np.float32)
        hp = Hyperparams(seed=0, kl_scale=1 / 16)
        optimizer = Adam(net.parameters(), hp.learning_rate)

        def step(i=[0]):
            i[0] += 1
            optimizer.zero_grads()
            with ad.Tape() as tape:
                pred = net.forward_flipout(x, "train", np.random.default_rng(i[0]))
                tape.backward(losses.total_loss(y, pred, net, hp))
            optimizer.step()

        results[name] = time_call(step, repeats)
    os.environ.pop("CALSEG_KERNELS", None)
    return results


def print_table(rows):
    names = list(backends())
    header = f"{'case':38s}" + "".join(f"{n:>14s}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for label, times in rows:
        line = f"{label:38s}" + "".join(f"{times[n] * 1e3:11.3f} ms" for n in names)
        if len(names) == 2:
            line += f"{times['python'] / times['compiled']:9.2f}x"
        print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--batch", type=int, default=2)
    args = parser.parse_args()

    if len(backends()) < 2:
        print("NOTE: compiled extension not built; timing the numpy fallback only")

    print("== kernel primitives ==")
    print_table(bench_kernels(args.repeats, args.batch))
    print()
    print("== full training step (desk-scale net, batch 2, 64x64) ==")
    step_repeats = max(3, args.repeats // 4)
    print_table([("train step", bench_training_step(step_repeats))])
    print()
    print("'speedup' > 1 means the compiled extension is faster.")


if __name__ == "__main__":
    main()
