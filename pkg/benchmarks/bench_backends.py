"""Compare the numba and pure-numpy kernel backends.

The backend is fixed at import by STOCHASTICNET_NUMBA, so each backend is
timed in its own interpreter. Two workloads are measured: one SGD step of
the reference network on a batch, and sparse-executor inference.

    python benchmarks/bench_backends.py [--density 0.39] [--batch 64] [--repetitions 10] [--csv out.csv]
"""
import argparse
import csv
import json
import os
import subprocess
import sys
import time

import numpy as np


def child(args):
    from stochasticnet import bench as B
    from stochasticnet import net as N
    from stochasticnet._accel import backend_name

    cfg = N.reference_config(density=args.density)
    net = N.build_network(cfg)
    r = np.random.default_rng(0)
    x = r.standard_normal((args.batch,) + cfg.input_shape)
    y = r.integers(0, 10, args.batch)

    def step():
        _, grads = N.loss(net, x, y)
        N.apply_update(net, grads, 0.001)

    step()
    times = []
    for _ in range(args.repetitions):
        t0 = time.perf_counter()
        step()
        times.append(time.perf_counter() - t0)
    ex = B.compile_sparse(net, backend_name())
    inf = B.bench_inference(ex, args.batch, max(args.repetitions, 10), 1)
    print(json.dumps({"backend": backend_name(), "train_step": float(np.median(times)),
                      "inference": inf.median}))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--density", type=float, default=0.39)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--csv")
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args(argv)
    if args.child:
        return child(args)

    rows = []
    for flag in ("1", "0"):
        env = dict(os.environ, STOCHASTICNET_NUMBA=flag)
        cmd = [sys.executable, __file__, "--child", "--density", str(args.density),
               "--batch", str(args.batch), "--repetitions", str(args.repetitions)]
        out = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout
        rows.append(json.loads(out.strip().splitlines()[-1]))

    print(f"density {args.density}, batch {args.batch}, median of {args.repetitions}")
    for r in rows:
        print(f"{r['backend']:6s} train step {r['train_step'] * 1e3:9.2f} ms   inference {r['inference'] * 1e3:9.2f} ms")
    if len(rows) == 2 and rows[0]["backend"] != rows[1]["backend"]:
        print(f"speedup   train step {rows[1]['train_step'] / rows[0]['train_step']:.2f}x   "
              f"inference {rows[1]['inference'] / rows[0]['inference']:.2f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["backend", "train_step", "inference"])
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
