from dataclasses import replace

import numpy as np
import pytest

from stochasticnet import bench as B
from stochasticnet import kernels
from stochasticnet import net as N


def small_config(density=0.5):
    stages = (N.ConvStage(4, 3, density=density), N.ConvStage(6, 5, density=density))
    return N.NetConfig(input_shape=(2, 16, 16), conv_stages=stages, hidden=N.HiddenLayer(12, density))


def test_dense_entry_count():
    net = N.build_network(N.reference_config(density=1.0))
    ex = B.compile_sparse(net)
    assert ex.entries == net.dense_connections
    assert ex.layer_entries() == [l.weight.size for l in net.layers]


def test_sparse_entry_count():
    cfg = N.reference_config()
    net = N.build_network(cfg.with_density(N.solve_density(cfg, 0.39)))
    ex = B.compile_sparse(net)
    assert ex.entries == net.formed_connections
    assert ex.layer_entries() == [l.formed for l in net.layers]
    assert abs(ex.entries / net.dense_connections - 0.39) < 0.02


@pytest.mark.parametrize("backend", list(kernels.BACKENDS))
def test_executor_matches_dense_forward(backend):
    r = np.random.default_rng(0)
    for case in range(20):
        net = N.build_network(replace(small_config(0.2 + 0.04 * case), mask_seed=case, init_seed=case))
        for l in net.layers:
            l.bias[:] = r.standard_normal(l.bias.shape) * 0.1
        x = r.standard_normal((3, 2, 16, 16))
        ex = B.compile_sparse(net, backend)
        assert np.max(np.abs(ex.run(x) - N.forward(net, x))) < 1e-9


def test_mac_count_is_exact():
    net = N.build_network(small_config(0.4))
    ex = B.compile_sparse(net)
    x = np.random.default_rng(1).standard_normal((5, 2, 16, 16))
    ex.run(x)
    conv = [l for l in net.layers if l.kind == "conv"]
    positions = [16 * 16, 8 * 8]
    expected = sum(l.formed * p for l, p in zip(conv, positions))
    expected += sum(l.formed for l in net.layers if l.kind == "affine")
    assert ex.last_macs == 5 * expected == ex.expected_macs(5)


def test_threads_do_not_change_output():
    net = N.build_network(small_config())
    ex = B.compile_sparse(net)
    x = np.random.default_rng(2).standard_normal((7, 2, 16, 16))
    one = ex.run(x, threads=1)
    macs = ex.last_macs
    assert np.array_equal(ex.run(x, threads=3), one)
    assert ex.last_macs == macs


def test_backends_agree():
    net = N.build_network(small_config())
    x = np.random.default_rng(3).standard_normal((4, 2, 16, 16))
    outs = [B.compile_sparse(net, name).run(x) for name in kernels.BACKENDS]
    assert np.max(np.abs(outs[0] - outs[-1])) < 1e-12
    with pytest.raises(ValueError):
        B.compile_sparse(net, "fortran")


def test_executor_rejects_wrong_shape():
    ex = B.compile_sparse(N.build_network(small_config()))
    with pytest.raises(ValueError):
        ex.run(np.zeros((1, 1, 16, 16)))


def test_bench_inference_stats():
    ex = B.compile_sparse(N.build_network(small_config()))
    st = B.bench_inference(ex, batch_size=4, repetitions=10, warmup=1)
    assert st.repetitions == 10
    assert min(st.samples) <= st.median <= max(st.samples)
    assert st.q1 <= st.median <= st.q3 and st.iqr >= 0
    assert st.per_image == st.median / 4
    one = B.bench_inference(ex, batch_size=1, repetitions=10, warmup=1)
    assert one.per_image == one.median
    with pytest.raises(ValueError):
        B.bench_inference(ex, repetitions=9)
    with pytest.raises(ValueError):
        B.bench_inference(ex, warmup=0)


def test_bench_self_consistency():
    ex = B.compile_sparse(N.build_network(N.reference_config(density=0.5)))
    a = B.bench_inference(ex, batch_size=8, repetitions=15, warmup=2)
    b = B.bench_inference(ex, batch_size=8, repetitions=15, warmup=2)
    # medians agree to within the two runs' combined interquartile spread
    assert abs(a.median - b.median) <= a.iqr + b.iqr


def test_sweep_relative_time_anchor_and_csv():
    rep = B.sweep_relative_time(small_config(), [1.0, 0.5], batch_size=2, repetitions=10, warmup=1)
    assert [r.density for r in rep.rows] == [0.5, 1.0]
    assert rep.rows[-1].relative_time == 1.0
    lines = rep.csv().splitlines()
    assert lines[0] == "percentage,median_latency_us,iqr_us,relative_time,batch,reps,threads"
    assert lines[-1].startswith("100.0000,") and ",1.000000,2,10,1" in lines[-1]


def test_sweep_relative_time_errors():
    with pytest.raises(ValueError):
        B.sweep_relative_time(small_config(), [])
    with pytest.raises(ValueError):
        B.sweep_relative_time(small_config(), [0.5])
    with pytest.raises(ValueError):
        B.sweep_relative_time(small_config(), [0.0, 1.0])


def test_compare_backends_reports_both():
    net = N.build_network(small_config())
    out = B.compare_backends(net, batch_size=2, repetitions=10, warmup=1)
    assert set(out) == set(kernels.BACKENDS)
