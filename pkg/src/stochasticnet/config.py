"""Experiment config files: INI-style sections of flat key = value pairs.

    [network]   in_channels, filters, kernel, kind, density | connectivity,
                hidden_units, hidden_density, classes, share_channels
    [data]      dataset, data_dir, train_per_class, test_per_class
    [train]     epochs, batch_size, lr, momentum, lr_step, lr_gamma,
                trials, seed, vary_all_seeds, workers
    [sweep]     densities, kinds
    [compare]   connectivity, trials, kind
    [bench]     densities, batch, repetitions, warmup, backend, threads

Every key is optional; defaults reproduce the desk-scale MNIST setup.
"""
import configparser
from dataclasses import dataclass, field, replace

from . import net as N
from .mask import GAUSSIAN, KINDS, UNIFORM
from .train import ExperimentConfig


class ConfigError(ValueError):
    pass


@dataclass
class SweepOptions:
    densities: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    kinds: list = field(default_factory=lambda: [GAUSSIAN, UNIFORM])


@dataclass
class CompareOptions:
    connectivity: float = 0.39
    trials: int = 25
    kind: str = GAUSSIAN


@dataclass
class BenchOptions:
    densities: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    batch: int = 64
    repetitions: int = 20
    warmup: int = 2
    backend: str = None
    threads: int = 1


@dataclass
class Resolved:
    experiment: ExperimentConfig
    sweep: SweepOptions
    compare: CompareOptions
    bench: BenchOptions


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _words(text):
    return [v.strip() for v in text.replace(",", " ").split() if v.strip()]


def _opt_int(text):
    text = text.strip()
    return None if text in ("", "none", "None") else int(text)


def parse(text):
    """Resolve a config file's text into typed options. Raises ConfigError."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"network", "data", "train", "sweep", "compare", "bench"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    try:
        return _resolve(cp)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path):
    with open(path) as f:
        return parse(f.read())


def _resolve(cp):
    net = cp["network"] if cp.has_section("network") else {}
    kind = net.get("kind", GAUSSIAN)
    if kind not in KINDS:
        raise ConfigError(f"[network] kind must be one of {KINDS}")
    filters = [int(v) for v in _floats(net.get("filters", "32 32 64"))]
    k = int(net.get("kernel", "5"))
    stages = tuple(N.ConvStage(f, k, kind, 1.0) for f in filters)
    base = N.NetConfig(
        input_shape=(int(net.get("in_channels", "1")), 32, 32),
        conv_stages=stages,
        hidden=N.HiddenLayer(int(net.get("hidden_units", "64")), 1.0),
        classes=int(net.get("classes", "10")),
        share_channels=net.get("share_channels", "false").lower() in ("1", "true", "yes"),
    )
    if "connectivity" in net and "density" in net:
        raise ConfigError("[network] give either density or connectivity, not both")
    if "connectivity" in net:
        density = N.solve_density(base, float(net["connectivity"]))
    else:
        density = float(net.get("density", "1.0"))
    hidden_density = float(net.get("hidden_density", str(density)))
    netcfg = base.with_density(density)
    netcfg = replace(netcfg, hidden=replace(netcfg.hidden, density=hidden_density))

    d = cp["data"] if cp.has_section("data") else {}
    t = cp["train"] if cp.has_section("train") else {}
    exp = ExperimentConfig(
        net=netcfg,
        dataset=d.get("dataset", "mnist"),
        data_dir=d.get("data_dir", "data/mnist-sample"),
        train_per_class=_opt_int(d.get("train_per_class", "")),
        test_per_class=_opt_int(d.get("test_per_class", "")),
        epochs=int(t.get("epochs", "10")),
        batch_size=int(t.get("batch_size", "64")),
        lr=float(t.get("lr", "0.01")),
        momentum=float(t.get("momentum", "0.9")),
        lr_step=int(t.get("lr_step", "5")),
        lr_gamma=float(t.get("lr_gamma", "0.5")),
        trials=int(t.get("trials", "1")),
        base_seed=int(t.get("seed", "0")),
        vary_all_seeds=t.get("vary_all_seeds", "false").lower() in ("1", "true", "yes"),
        workers=int(t.get("workers", "1")),
    )

    s = cp["sweep"] if cp.has_section("sweep") else {}
    sweep = SweepOptions()
    if "densities" in s:
        sweep.densities = _floats(s["densities"])
    if "kinds" in s:
        sweep.kinds = _words(s["kinds"])
    for kd in sweep.kinds:
        if kd not in KINDS:
            raise ConfigError(f"[sweep] unknown kind {kd!r}")

    c = cp["compare"] if cp.has_section("compare") else {}
    compare = CompareOptions(float(c.get("connectivity", "0.39")), int(c.get("trials", "25")),
                             c.get("kind", GAUSSIAN))
    if compare.kind not in KINDS:
        raise ConfigError(f"[compare] unknown kind {compare.kind!r}")

    b = cp["bench"] if cp.has_section("bench") else {}
    bench = BenchOptions()
    if "densities" in b:
        bench.densities = _floats(b["densities"])
    bench.batch = int(b.get("batch", "64"))
    bench.repetitions = int(b.get("repetitions", "20"))
    bench.warmup = int(b.get("warmup", "2"))
    bench.backend = b.get("backend") or None
    bench.threads = int(b.get("threads", "1"))
    return Resolved(exp, sweep, compare, bench)
