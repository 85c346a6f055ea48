"""Acceptance suite: one test per criterion, each recording a pass/fail line
that the terminal summary prints at the end of the run.

Criteria 4, 5 and 7 need the full MNIST training set. Point
STOCHASTICNET_MNIST_DIR at a directory holding the four standard IDX files
(optionally gzipped); without it those criteria are skipped with the reason.
"""
import os
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from stochasticnet import bench as B
from stochasticnet import cli
from stochasticnet import config as C
from stochasticnet import data as D
from stochasticnet import mask as M
from stochasticnet import net as N
from stochasticnet import tensor as T
from stochasticnet import train as TR

from conftest import ACCEPTANCE
from oracles import expected_inclusion, numeric_grad, rel_error

ROOT = Path(__file__).resolve().parents[1]
SAMPLE = ROOT / "data" / "mnist-sample"
MNIST_DIR = os.environ.get("STOCHASTICNET_MNIST_DIR")

pytestmark = pytest.mark.acceptance


def record(number, ok, detail):
    ACCEPTANCE.append((number, "PASS" if ok else "FAIL", detail))
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def sample_experiment(**kw):
    base = dict(net=N.reference_config(), data_dir=str(SAMPLE), train_per_class=100, test_per_class=100,
                epochs=2, batch_size=64, lr=0.01, momentum=0.9, lr_step=5, lr_gamma=0.5)
    base.update(kw)
    return TR.ExperimentConfig(**base)


# -- 1 ---------------------------------------------------------------------------

def test_criterion_1_dense_equivalence():
    t0 = time.perf_counter()
    exp = sample_experiment()
    data = TR.load_data(exp)
    stoch_cfg = N.reference_config(density=1.0, kind=M.GAUSSIAN)
    conv_cfg = N.reference_config(density=1.0, kind=M.UNIFORM)

    a = N.build_network(replace(stoch_cfg, mask_seed=11, init_seed=5))
    b = N.build_convnet(replace(conv_cfg, mask_seed=12, init_seed=5))
    x = data.test.images[:256]
    dlogit = float(np.max(np.abs(N.forward(a, x) - N.forward(b, x))))

    # different trial indices give different mask seeds; init and shuffle are shared
    ta = TR.run_single(exp, 0, data, stoch_cfg)
    tb = TR.run_single(exp, 1, data, conv_cfg)
    same = ta.train_error == tb.train_error and ta.test_error == tb.test_error
    elapsed = time.perf_counter() - t0
    ok = dlogit <= 1e-12 and same and elapsed < 120
    record(1, ok, f"max|logit diff| {dlogit:.1e}, trajectories identical {same}, "
                  f"final test {ta.test_error[-1]:.4f}, {elapsed:.0f}s")
    assert dlogit <= 1e-12
    assert same
    assert elapsed < 120


# -- 2 ---------------------------------------------------------------------------

def _conv_case(r):
    n = int(r.integers(1, 3))
    c, o, k = int(r.integers(1, 4)), int(r.integers(1, 4)), int(r.choice([1, 3, 5]))
    size = int(r.integers(k, k + 4))
    stride, padding = int(r.integers(1, 3)), int(r.integers(0, k // 2 + 1))
    x = r.standard_normal((n, c, size, size))
    w = r.standard_normal((o, c, k, k))
    b = r.standard_normal(o)
    bits = r.random((o, c, k, k)) < r.uniform(0.2, 0.9)
    out = T.masked_conv2d_forward(x, w, b, bits, stride, padding)[0]
    g = r.standard_normal(out.shape)

    def f():
        return float((T.masked_conv2d_forward(x, w, b, bits, stride, padding)[0] * g).sum())

    _, cache = T.masked_conv2d_forward(x, w, b, bits, stride, padding)
    dx, dw, db = T.masked_conv2d_backward(g, cache)
    return max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)),
               rel_error(db, numeric_grad(f, b)))


def _affine_case(r):
    n, i, o = int(r.integers(1, 5)), int(r.integers(1, 20)), int(r.integers(1, 10))
    x = r.standard_normal((n, i))
    w = r.standard_normal((i, o))
    b = r.standard_normal(o)
    bits = r.random((i, o)) < r.uniform(0.2, 0.9)
    g = r.standard_normal((n, o))

    def f():
        return float((T.masked_affine_forward(x, w, b, bits)[0] * g).sum())

    _, cache = T.masked_affine_forward(x, w, b, bits)
    dx, dw, db = T.masked_affine_backward(g, cache)
    return max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)),
               rel_error(db, numeric_grad(f, b)))


def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    errors = [_conv_case(r) for _ in range(40)] + [_affine_case(r) for _ in range(40)]
    worst = max(errors)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and len(errors) >= 50 and elapsed < 60
    record(2, ok, f"{len(errors)} cases, worst relative error {worst:.1e}, {elapsed:.0f}s")
    assert len(errors) >= 50
    assert worst < 1e-6
    assert elapsed < 60


# -- 3 ---------------------------------------------------------------------------

def test_criterion_3_mask_statistics():
    t0 = time.perf_counter()
    n_real = 10_000
    worst_z, worst_mean = 0.0, 0.0
    for kind in M.KINDS:
        for d in (0.1, 0.39, 0.75):
            f = M.build_probability_field(kind, 5, d)
            worst_mean = max(worst_mean, abs(f.grid.mean() - d))
            counts = np.zeros((5, 5))
            for s in range(n_real):
                counts += M.realize_rf_mask(f, 1, 1, s).bits[0, 0]
            # the oracle includes the empty-filter repair at the most probable tap
            p = expected_inclusion(f.grid, 1)[0]
            se = np.sqrt(p * (1 - p) / n_real)
            z = np.where(se > 0, np.abs(counts / n_real - p) / np.where(se > 0, se, 1), 0.0)
            worst_z = max(worst_z, float(z.max()))
    elapsed = time.perf_counter() - t0
    ok = worst_z <= 3 and worst_mean <= 1e-12 and elapsed < 60
    record(3, ok, f"worst cell deviation {worst_z:.2f} SE, worst |grid mean - target| {worst_mean:.1e}, "
                  f"{elapsed:.0f}s")
    assert worst_mean <= 1e-12
    assert worst_z <= 3
    assert elapsed < 60


# -- 4, 5, 7 -------------------------------------------------------------------------

def _full_mnist_available():
    if not MNIST_DIR:
        return False, "STOCHASTICNET_MNIST_DIR not set; full MNIST (60,000 train images) is required"
    try:
        D.mnist_paths(MNIST_DIR, "train")
        D.mnist_paths(MNIST_DIR, "test")
    except FileNotFoundError as exc:
        return False, str(exc)
    return True, ""


@pytest.fixture(scope="module")
def full_mnist_run(tmp_path_factory):
    ok, reason = _full_mnist_available()
    if not ok:
        return None, reason
    exp = TR.ExperimentConfig(net=N.reference_config(), data_dir=MNIST_DIR, epochs=10, batch_size=64,
                              lr=0.01, momentum=0.9, lr_step=5, lr_gamma=0.5)
    resolved = C.Resolved(exp, C.SweepOptions(), C.CompareOptions(0.39, 5, M.GAUSSIAN), C.BenchOptions())
    out = tmp_path_factory.mktemp("criterion4")
    t0 = time.perf_counter()
    manifest = cli.run_command("compare", resolved, out)
    return (out, manifest, time.perf_counter() - t0), ""


def _summary_rows(out):
    import csv
    with open(out / "compare_summary.csv") as f:
        rows = list(csv.DictReader(f))
    last = max(int(r["epoch"]) for r in rows)
    return {r["model"]: r for r in rows if int(r["epoch"]) == last}


def test_criterion_4_accuracy(full_mnist_run):
    run, reason = full_mnist_run
    if run is None:
        ACCEPTANCE.append((4, "SKIP", reason))
        pytest.skip(reason)
    out, _, elapsed = run
    rows = _summary_rows(out)
    dense = float(rows["convnet"]["test_error_mean"])
    stoch = float(rows["stochasticnet"]["test_error_mean"])
    ok = dense <= 0.02 and abs(stoch - dense) <= 0.01
    record(4, ok, f"ConvNet test {100 * dense:.2f}%, StochasticNet mean of 5 {100 * stoch:.2f}%, "
                  f"{elapsed / 60:.1f} min")
    assert dense <= 0.02
    assert abs(stoch - dense) <= 0.01


def test_criterion_5_gap_report(full_mnist_run):
    run, reason = full_mnist_run
    if run is None:
        ACCEPTANCE.append((5, "SKIP", reason))
        pytest.skip(reason)
    rows = _summary_rows(run[0])
    g_stoch = float(rows["stochasticnet"]["gap"])
    g_dense = float(rows["convnet"]["gap"])
    ok = g_stoch <= g_dense + 0.005
    detail = f"gap StochasticNet {100 * g_stoch:+.2f} pts, ConvNet {100 * g_dense:+.2f} pts"
    if ok:
        record(5, True, detail)
    else:
        # soft check: report, do not fail
        ACCEPTANCE.append((5, "WARN", detail))
        warnings.warn(f"overfitting gap larger than ConvNet's + 0.5 pts: {detail}")


def test_criterion_7_rerun(full_mnist_run, tmp_path):
    run, reason = full_mnist_run
    if run is None:
        ACCEPTANCE.append((7, "SKIP", reason))
        pytest.skip(reason)
    out, manifest, _ = run
    assert cli.main(["rerun", str(manifest), "--out-dir", str(tmp_path)]) == 0
    same = (tmp_path / "compare.csv").read_bytes() == (out / "compare.csv").read_bytes()
    record(7, same, "compare.csv reproduced byte-for-byte" if same else "compare.csv differs")
    assert same


# -- 6 ---------------------------------------------------------------------------

def test_criterion_6_sparse_executor():
    t0 = time.perf_counter()
    r = np.random.default_rng(6)
    worst = 0.0
    for case in range(20):
        cfg = replace(N.reference_config(density=float(r.uniform(0.1, 1.0))), mask_seed=case, init_seed=case)
        net = N.build_network(cfg)
        for layer in net.layers:
            layer.bias[:] = r.standard_normal(layer.bias.shape) * 0.1
        x = r.standard_normal((4, 1, 32, 32))
        worst = max(worst, float(np.max(np.abs(B.compile_sparse(net).run(x) - N.forward(net, x)))))

    densities = [0.25, 0.5, 0.75, 1.0]
    macs_exact = True
    for d in densities:
        net = N.build_network(N.reference_config(density=d))
        ex = B.compile_sparse(net)
        ex.run(np.zeros((2, 1, 32, 32)))
        per_image = sum(l.formed * hw for l, hw in zip(net.layers, (32 * 32, 16 * 16, 8 * 8, 1, 1)))
        macs_exact &= ex.last_macs == 2 * per_image

    report = B.sweep_relative_time(N.reference_config(), densities, batch_size=32, repetitions=20,
                                   warmup=2, threads=1)
    rel = [row.relative_time for row in report.rows]
    trend = all(rel[i] <= rel[j] * 1.10 for i in range(len(rel)) for j in range(i + 1, len(rel)))
    anchor = rel[-1] == 1.0
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and macs_exact and trend and anchor and elapsed < 300
    record(6, ok, f"max|diff| {worst:.1e}, MAC count exact {macs_exact}, relative time "
                  + " / ".join(f"{v:.3f}" for v in rel) + f", {elapsed:.0f}s")
    assert worst <= 1e-9
    assert macs_exact
    assert anchor
    assert trend
    assert elapsed < 300


# -- 8 ---------------------------------------------------------------------------

def test_criterion_8_25_trials():
    t0 = time.perf_counter()
    exp = sample_experiment()
    data = TR.load_data(exp)
    assert len(data.train) + len(data.test) == 2000
    stoch, dense = TR.compare_vs_convnet(exp, 25, 0.39, M.GAUSSIAN, data)
    final_std = float(stoch.test_std[-1])
    curves = all(len(a) == exp.epochs + 1 for a in (stoch.train_mean, stoch.train_std,
                                                   stoch.test_mean, stoch.test_std))
    one, _ = TR.compare_vs_convnet(replace(exp, epochs=1), 1, 0.39, M.GAUSSIAN, data)
    single_zero = not one.test_std.any() and not one.train_std.any()
    elapsed = time.perf_counter() - t0
    ok = (stoch.trials == 25 and curves and np.isfinite(final_std) and final_std > 0
          and single_zero and elapsed < 900)
    record(8, ok, f"25 trials, final test {100 * stoch.test_mean[-1]:.2f}% +- {100 * final_std:.2f}, "
                  f"ConvNet {100 * dense.test_mean[-1]:.2f}%, trials=1 std zero {single_zero}, "
                  f"{elapsed / 60:.1f} min")
    assert stoch.trials == 25 and len(stoch.final_test) == 25
    assert curves
    assert np.isfinite(final_std) and final_std > 0
    assert single_zero
    assert elapsed < 900
