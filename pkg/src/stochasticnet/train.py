"""Training experiments: single runs, connectivity sweeps, and multi-trial
StochasticNet-vs-ConvNet comparisons.

Per-trial seeds are derived from ``(base_seed, trial)``. By default only the
mask seed changes between trials, so trial-to-trial spread reflects the
connectivity realization alone.
"""
import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as D
from . import net as N
from . import rng
from .mask import GAUSSIAN, KINDS, UNIFORM

REFERENCE_CONNECTIVITY = 0.39


class TrialDiverged(N.DivergenceError):
    def __init__(self, trial, epoch, message):
        super().__init__(f"trial {trial}, epoch {epoch}: {message}")
        self.trial = trial
        self.epoch = epoch


@dataclass(frozen=True)
class ExperimentConfig:
    net: N.NetConfig = N.NetConfig()
    dataset: str = "mnist"  # mnist | cifar10 | snds
    data_dir: str = "data/mnist-sample"
    train_per_class: int = None  # class-balanced subset sizes; None keeps everything
    test_per_class: int = None
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    lr_step: int = 5  # epochs between decays; 0 keeps the rate fixed
    lr_gamma: float = 0.5
    trials: int = 1
    base_seed: int = 0
    vary_all_seeds: bool = False
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.net, N.NetConfig):
            object.__setattr__(self, "net", N.NetConfig.from_dict(self.net))
        self.validate()

    def validate(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.dataset not in ("mnist", "cifar10", "snds"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr > 0 and momentum in [0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def lr_at(self, epoch):
        """Learning rate for 1-based ``epoch``."""
        if self.lr_step <= 0:
            return self.lr
        return self.lr * self.lr_gamma ** ((epoch - 1) // self.lr_step)

    def to_dict(self):
        d = asdict(self)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["net"] = N.NetConfig.from_dict(d["net"])
        return cls(**d)


def trial_seeds(config, trial):
    base = config.base_seed
    if config.vary_all_seeds:
        return {"mask": rng.derive_seed(base, 1, trial), "init": rng.derive_seed(base, 2, trial),
                "shuffle": rng.derive_seed(base, 3, trial)}
    return {"mask": rng.derive_seed(base, 1, trial), "init": rng.derive_seed(base, 2),
            "shuffle": rng.derive_seed(base, 3)}


# -- data ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExperimentData:
    train: D.Dataset
    test: D.Dataset
    standardizer: D.Standardizer
    files: tuple = ()


def load_data(config):
    """Load, subset, and standardize both splits (train statistics only)."""
    root = Path(config.data_dir)
    if not root.exists():
        raise FileNotFoundError(f"data directory not found: {root}")
    if config.dataset == "mnist":
        tr_paths, te_paths = D.mnist_paths(root, "train"), D.mnist_paths(root, "test")
        train, test = D.load_idx(*tr_paths, split="train"), D.load_idx(*te_paths, split="test")
    elif config.dataset == "cifar10":
        tr_paths, te_paths = D.cifar10_paths(root, "train"), D.cifar10_paths(root, "test")
        train, test = D.load_cifar10(tr_paths, "train"), D.load_cifar10(te_paths, "test")
    else:
        tr_paths, te_paths = [root / "train.snds"], [root / "test.snds"]
        train, test = D.load_snds(tr_paths[0], "train"), D.load_snds(te_paths[0], "test")
    sub_seed = rng.derive_seed(config.base_seed, 4)
    if config.train_per_class:
        train = D.subset(train, config.train_per_class, sub_seed)
    if config.test_per_class:
        test = D.subset(test, config.test_per_class, rng.derive_seed(sub_seed, 1))
    if train.shape != config.net.input_shape:
        raise D.DataError(f"dataset images are {train.shape}, network expects {config.net.input_shape}")
    std = D.Standardizer.fit(train)
    return ExperimentData(std.apply(train), std.apply(test), std, tuple(str(p) for p in tr_paths + te_paths))


# -- single run ----------------------------------------------------------------

@dataclass
class Trajectory:
    trial: int
    train_error: list  # index 0 is before any training
    test_error: list
    connectivity: float
    masked_connectivity: float
    seeds: dict
    wall_seconds: float = 0.0

    @property
    def epochs(self):
        return list(range(len(self.train_error)))


def run_single(config, trial=0, data=None, net_config=None, return_network=False):
    """Train one realization and record train/test error after every epoch.

    ``net_config`` overrides ``config.net`` (sweeps and baselines use this);
    its seeds are replaced by the trial seeds. With ``return_network`` the
    trained network is returned alongside the trajectory.
    """
    t0 = time.perf_counter()
    data = data if data is not None else load_data(config)
    seeds = trial_seeds(config, trial)
    cfg = replace(net_config or config.net, mask_seed=seeds["mask"], init_seed=seeds["init"])
    net = N.build_network(cfg)
    train, test = data.train, data.test
    tr_err = [N.error_rate(net, train.images, train.labels)]
    te_err = [N.error_rate(net, test.images, test.labels)]
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        try:
            for xb, yb in D.batches(train, config.batch_size, rng.derive_seed(seeds["shuffle"], epoch)):
                _, grads = N.loss(net, xb, yb)
                N.apply_update(net, grads, lr, config.momentum)
        except N.DivergenceError as exc:
            raise TrialDiverged(trial, epoch, str(exc)) from exc
        tr_err.append(N.error_rate(net, train.images, train.labels))
        te_err.append(N.error_rate(net, test.images, test.labels))
    traj = Trajectory(trial, tr_err, te_err, net.connectivity, net.masked_connectivity, seeds,
                      time.perf_counter() - t0)
    return (traj, net) if return_network else traj


def _run_job(args):
    config, trial, data, net_config = args
    return run_single(config, trial, data, net_config)


def run_trials(config, data, net_config=None, trials=None):
    """Run trials 0..trials-1, serially or in a process pool; results come back
    ordered by trial index."""
    trials = config.trials if trials is None else trials
    jobs = [(config, t, data, net_config) for t in range(trials)]
    if config.workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            out = list(pool.map(_run_job, jobs))
    else:
        out = [_run_job(j) for j in jobs]
    return sorted(out, key=lambda t: t.trial)


# -- aggregation ---------------------------------------------------------------

@dataclass
class TrialSummary:
    model: str
    train_mean: np.ndarray
    train_std: np.ndarray
    test_mean: np.ndarray
    test_std: np.ndarray
    final_train: list
    final_test: list
    connectivity: float
    wall_seconds: list
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def trials(self):
        return len(self.final_test)

    @property
    def gap(self):
        """Per-epoch test error minus train error of the mean curves."""
        return self.test_mean - self.train_mean


def summarize(model, trajectories):
    tr = np.array([t.train_error for t in trajectories])
    te = np.array([t.test_error for t in trajectories])
    return TrialSummary(model, tr.mean(axis=0), tr.std(axis=0), te.mean(axis=0), te.std(axis=0),
                        [t.train_error[-1] for t in trajectories], [t.test_error[-1] for t in trajectories],
                        float(np.mean([t.connectivity for t in trajectories])),
                        [t.wall_seconds for t in trajectories], list(trajectories))


def expected_connectivity(net_config, density):
    masked, head = net_config.weight_counts()
    return (density * masked + head) / (masked + head)


# -- experiments -----------------------------------------------------------------

@dataclass
class SweepRow:
    kind: str
    density: float
    percentage: float  # expected connectivity x 100
    measured_percentage: float
    train_mean: float
    train_std: float
    test_mean: float
    test_std: float
    summary: TrialSummary = field(repr=False, default=None)


def sweep_connectivity(config, densities, kind, data=None):
    """One multi-trial run per density; density 1.0 is the ConvNet."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    densities = list(densities)
    if not densities:
        raise ValueError("no densities given")
    for d in densities:
        if not 0.0 < d <= 1.0:
            raise ValueError(f"density {d} outside (0, 1]")
    data = data if data is not None else load_data(config)
    rows = []
    for d in densities:
        cfg = config.net.with_density(d, kind)
        s = summarize(kind, run_trials(config, data, cfg))
        rows.append(SweepRow(kind, d, 100.0 * expected_connectivity(cfg, d), 100.0 * s.connectivity,
                             float(np.mean(s.final_train)), float(np.std(s.final_train)),
                             float(np.mean(s.final_test)), float(np.std(s.final_test)), s))
    return rows


def compare_vs_convnet(config, trials=None, connectivity=REFERENCE_CONNECTIVITY, kind=GAUSSIAN, data=None):
    """Multi-trial StochasticNet at ``connectivity`` vs a single ConvNet run.

    The ConvNet has no stochastic connections, so it runs once (trial 0
    seeds).
    """
    data = data if data is not None else load_data(config)
    d = N.solve_density(config.net, connectivity)
    stoch = summarize("stochasticnet", run_trials(config, data, config.net.with_density(d, kind), trials))
    dense = summarize("convnet", run_trials(config, data, config.net.dense(), 1))
    return stoch, dense


# -- CSV output ------------------------------------------------------------------

SWEEP_HEADER = ["kind", "percentage", "trial", "epoch", "train_error", "test_error"]
COMPARE_HEADER = ["model", "trial", "epoch", "train_error", "test_error"]
SWEEP_SUMMARY_HEADER = ["kind", "density", "percentage", "measured_percentage",
                        "train_error_mean", "train_error_std", "test_error_mean", "test_error_std", "trials"]
COMPARE_SUMMARY_HEADER = ["model", "epoch", "train_error_mean", "train_error_std",
                          "test_error_mean", "test_error_std", "gap"]


def _f(x):
    return format(float(x), ".10g")


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def single_csv(trajectory, model="stochasticnet"):
    return _csv(COMPARE_HEADER, [
        (model, trajectory.trial, e, _f(a), _f(b))
        for e, a, b in zip(trajectory.epochs, trajectory.train_error, trajectory.test_error)])


def sweep_csv(rows):
    out = []
    for r in rows:
        for t in r.summary.trajectories:
            out += [(r.kind, f"{r.percentage:.4f}", t.trial, e, _f(a), _f(b))
                    for e, a, b in zip(t.epochs, t.train_error, t.test_error)]
    return _csv(SWEEP_HEADER, out)


def sweep_summary_csv(rows):
    return _csv(SWEEP_SUMMARY_HEADER, [
        (r.kind, _f(r.density), f"{r.percentage:.4f}", f"{r.measured_percentage:.4f}",
         _f(r.train_mean), _f(r.train_std), _f(r.test_mean), _f(r.test_std), r.summary.trials)
        for r in rows])


def compare_csv(summaries):
    out = []
    for s in summaries:
        for t in s.trajectories:
            out += [(s.model, t.trial, e, _f(a), _f(b))
                    for e, a, b in zip(t.epochs, t.train_error, t.test_error)]
    return _csv(COMPARE_HEADER, out)


def compare_summary_csv(summaries):
    out = []
    for s in summaries:
        for e in range(len(s.train_mean)):
            out.append((s.model, e, _f(s.train_mean[e]), _f(s.train_std[e]),
                        _f(s.test_mean[e]), _f(s.test_std[e]), _f(s.gap[e])))
    return _csv(COMPARE_SUMMARY_HEADER, out)


__all__ = [
    "ExperimentConfig", "ExperimentData", "Trajectory", "TrialSummary", "SweepRow", "TrialDiverged",
    "load_data", "run_single", "run_trials", "summarize", "sweep_connectivity", "compare_vs_convnet",
    "trial_seeds", "expected_connectivity", "single_csv", "sweep_csv", "sweep_summary_csv",
    "compare_csv", "compare_summary_csv", "UNIFORM", "GAUSSIAN", "REFERENCE_CONNECTIVITY",
]
