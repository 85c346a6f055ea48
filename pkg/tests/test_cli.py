import csv
import json
from pathlib import Path

import numpy as np
import pytest

from stochasticnet import cli
from stochasticnet import config as C
from stochasticnet import data as D
from stochasticnet import mask as M
from stochasticnet import net as N

ROOT = Path(__file__).resolve().parents[1]
SAMPLE = ROOT / "data" / "mnist-sample"

TINY = f"""
[network]
filters = 4 4 4
kernel = 3
hidden_units = 8
density = 0.5

[data]
data_dir = {SAMPLE}
train_per_class = 5
test_per_class = 5

[train]
epochs = 1
batch_size = 16
lr = 0.02
trials = 2

[sweep]
densities = 0.25 0.5 0.75 1.0
kinds = gaussian uniform

[compare]
connectivity = 0.39
trials = 3

[bench]
densities = 0.5 1.0
batch = 2
repetitions = 10
warmup = 1
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_mask_command(tmp_path, capsys):
    out = tmp_path / "m.snmk"
    assert cli.main(["mask", "--kind", "uniform", "--density", "1.0", "--output", str(out)]) == 0
    assert M.load_mask(out).bits.all()
    assert "density 1.000000" in capsys.readouterr().out

    assert cli.main(["mask", "--kind", "gaussian", "--k", "5", "--density", "0.39", "--out-channels", "64",
                     "--in-channels", "32", "--output", str(out)]) == 0
    assert abs(M.measured_density(M.load_mask(out)) - 0.39) < 0.01

    assert cli.main(["mask", "--dense", "--density", "0.5", "--in-channels", "100", "--out-channels", "10",
                     "--output", str(out)]) == 0
    assert isinstance(M.load_mask(out), M.DenseMask)


def test_mask_validation_exit_2(tmp_path, capsys):
    assert cli.main(["mask", "--density", "1.5", "--output", str(tmp_path / "m")]) == cli.EXIT_USAGE
    assert "density" in capsys.readouterr().err
    assert not (tmp_path / "m").exists()
    with pytest.raises(SystemExit) as e:
        cli.main(["mask", "--kind", "triangular", "--density", "0.5", "--output", "x"])
    assert e.value.code == 2


def test_mask_io_error_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["mask", "--density", "0.5", "--output", str(blocker / "m.snmk")]) == cli.EXIT_IO


def test_train_and_rerun(tiny, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", str(tiny), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "train.csv")
    assert len(rows) == 2 * 2 and {r["trial"] for r in rows} == {"0", "1"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "train" and set(man["seeds"]) == {"0", "1"}
    assert len(man["datasets"]) == 4 and "train.csv" in man["outputs"]
    assert (out / "model-trial0.snck").exists()
    again = tmp_path / "again"
    assert cli.main(["rerun", str(out / "manifest.json"), "--out-dir", str(again)]) == 0
    assert (again / "train.csv").read_bytes() == (out / "train.csv").read_bytes()
    assert (again / "model-trial1.snck").read_bytes() == (out / "model-trial1.snck").read_bytes()


def test_overrides(tiny, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["train", str(tiny), "--out-dir", str(out), "--trials", "1", "--epochs", "2",
                     "--seed", "5", "--threads", "1"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"]["epochs"] == 2 and man["experiment"]["base_seed"] == 5
    assert len(read_csv(out / "train.csv")) == 3
    assert cli.main(["train", str(tiny), "--out-dir", str(out), "--trials", "0"]) == cli.EXIT_USAGE


def test_sweep_groups(tiny, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sweep", str(tiny), "--out-dir", str(out), "--trials", "3"]) == 0
    rows = read_csv(out / "sweep.csv")
    groups = {(r["kind"], r["percentage"], r["trial"]) for r in rows}
    assert len(groups) == 4 * 2 * 3
    assert len(read_csv(out / "sweep_summary.csv")) == 8


def test_compare_and_rerun(tiny, tmp_path):
    out = tmp_path / "c"
    assert cli.main(["compare", str(tiny), "--out-dir", str(out)]) == 0
    summary = read_csv(out / "compare_summary.csv")
    assert {r["model"] for r in summary} == {"stochasticnet", "convnet"}
    assert "gap" in summary[0]
    again = tmp_path / "c2"
    assert cli.main(["rerun", str(out / "manifest.json"), "--out-dir", str(again)]) == 0
    assert (again / "compare.csv").read_bytes() == (out / "compare.csv").read_bytes()


def test_bench_command(tiny, tmp_path):
    out = tmp_path / "b"
    assert cli.main(["bench", str(tiny), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "bench.csv")
    assert rows[-1]["relative_time"] == "1.000000"
    man = json.loads((out / "manifest.json").read_text())
    assert "cpu_count" in man["machine"]


def test_missing_data_exit_3(tiny, tmp_path, capsys):
    code = cli.main(["train", str(tiny), "--out-dir", str(tmp_path / "x"), "--data-dir", str(tmp_path / "nope")])
    assert code == cli.EXIT_DATA
    assert "--data-dir" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[network]\nkind = triangle\n")
    assert cli.main(["train", str(bad), "--out-dir", str(tmp_path / "x")]) == cli.EXIT_USAGE
    assert cli.main(["train", str(tmp_path / "absent.ini")]) == cli.EXIT_USAGE
    assert cli.main(["rerun", str(bad), "--out-dir", str(tmp_path / "y")]) == cli.EXIT_USAGE


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_4(tmp_path):
    r = np.random.default_rng(0)
    images = r.random((8, 1, 32, 32))
    D.save_snds(D.Dataset(images, np.arange(8) % 10), tmp_path / "test.snds")
    images[3, 0, 5, 5] = np.nan
    D.save_snds(D.Dataset(images, np.arange(8) % 10), tmp_path / "train.snds")
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.replace(f"data_dir = {SAMPLE}", f"dataset = snds\ndata_dir = {tmp_path}")
                   .replace("train_per_class = 5\ntest_per_class = 5", ""))
    with np.errstate(all="ignore"):
        assert cli.main(["train", str(cfg), "--out-dir", str(tmp_path / "x")]) == cli.EXIT_DIVERGED


def test_sample_config_parses():
    r = C.load(ROOT / "configs" / "mnist_sample.ini")
    assert abs(r.experiment.net.conv_stages[0].density - 0.3873) < 1e-3
    assert r.compare.trials == 5
    full = C.load(ROOT / "configs" / "mnist_full.ini")
    assert full.experiment.epochs == 10 and full.experiment.train_per_class is None


def test_config_parse_rules():
    r = C.parse("[network]\nconnectivity = 0.39\n")
    d = r.experiment.net.conv_stages[0].density
    assert d == N.solve_density(N.NetConfig(), 0.39) and r.experiment.net.hidden.density == d
    with pytest.raises(C.ConfigError):
        C.parse("[network]\nconnectivity = 0.39\ndensity = 0.5\n")
    with pytest.raises(C.ConfigError):
        C.parse("[nonsense]\nx = 1\n")
    with pytest.raises(C.ConfigError):
        C.parse("[train]\nepochs = ten\n")
    with pytest.raises(C.ConfigError):
        C.parse("[sweep]\nkinds = gaussian cauchy\n")
    defaults = C.parse("")
    assert defaults.experiment.epochs == 10 and defaults.experiment.batch_size == 64
