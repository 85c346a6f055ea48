"""Command-line entry point.

    stochasticnet mask    --kind gaussian --k 5 --density 0.39 --output m.snmk
    stochasticnet train   CONFIG [--out-dir DIR] [overrides]
    stochasticnet sweep   CONFIG ...
    stochasticnet compare CONFIG ...
    stochasticnet bench   CONFIG ...
    stochasticnet rerun   MANIFEST --out-dir DIR

Exit codes: 0 success, 1 I/O failure, 2 bad flags or config, 3 data error,
4 numerical divergence.
"""
import argparse
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import bench as B
from . import config as C
from . import data as D
from . import manifest as M
from . import mask as masks
from . import net as N
from . import train as TR
from .io import atomic_write_text

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class UsageError(Exception):
    pass


class OutputError(Exception):
    pass


def _fail(code, message):
    print(f"stochasticnet: error: {message}", file=sys.stderr)
    return code


# -- mask ------------------------------------------------------------------------

def cmd_mask(args):
    if not 0.0 < args.density <= 1.0:
        raise UsageError(f"--density must lie in (0, 1], got {args.density}")
    if args.k < 1 or args.out_channels < 1 or args.in_channels < 1:
        raise UsageError("--k, --out-channels and --in-channels must be >= 1")
    if args.dense:
        m = masks.realize_dense_mask(args.in_channels, args.out_channels, args.density, args.seed)
    else:
        field_ = masks.build_probability_field(args.kind, args.k, args.density)
        m = masks.realize_rf_mask(field_, args.out_channels, args.in_channels, args.seed,
                                  share_channels=args.share_channels)
    try:
        masks.save_mask(m, args.output)
    except OSError as exc:
        raise OutputError(f"cannot write {args.output}: {exc}") from exc
    print(f"density {masks.measured_density(m):.6f} ({int(m.bits.sum())}/{m.bits.size}) -> {args.output}")
    return EXIT_OK


# -- experiment commands -----------------------------------------------------------

def _apply_overrides(resolved, args):
    exp = resolved.experiment
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
        resolved.compare.trials = args.trials
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "data_dir", None) is not None:
        changes["data_dir"] = args.data_dir
    if getattr(args, "threads", None) is not None:
        changes["workers"] = args.threads
        resolved.bench.threads = args.threads
    if changes:
        try:
            exp = replace(exp, **changes)
        except ValueError as exc:
            raise C.ConfigError(str(exc)) from exc
    resolved.experiment = exp
    return resolved


def _seed_table(exp, trials):
    return {str(t): TR.trial_seeds(exp, t) for t in range(trials)}


def run_command(command, resolved, out_dir):
    """Execute an experiment command and write its CSVs plus manifest.

    Shared by the subcommands and ``rerun``; returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exp = resolved.experiment
    started = M.now()

    if command == "bench":
        opts = resolved.bench
        report = B.sweep_relative_time(exp.net, opts.densities, opts.batch, opts.repetitions,
                                       opts.warmup, opts.backend, opts.threads)
        atomic_write_text(out_dir / "bench.csv", report.csv())
        man = M.build(command, exp, asdict(opts), {"mask": exp.net.mask_seed, "init": exp.net.init_seed},
                      started=started)
        for r in report.rows:
            print(f"{r.percentage:7.2f}%  median {r.stats.median * 1e3:9.3f} ms  relative {r.relative_time:.3f}")
        return M.finish(man, out_dir, ["bench.csv"])

    data = TR.load_data(exp)
    if command == "train":
        outputs = ["train.csv"]
        rows = []
        for t in range(exp.trials):
            traj, net = TR.run_single(exp, t, data, return_network=True)
            rows.append(TR.single_csv(traj))
            N.save_checkpoint(net, out_dir / f"model-trial{t}.snck")
            outputs.append(f"model-trial{t}.snck")
            print(f"trial {t}: connectivity {100 * traj.connectivity:.2f}%  "
                  f"train {traj.train_error[-1]:.4f}  test {traj.test_error[-1]:.4f}")
        text = rows[0] + "".join(r.split("\n", 1)[1] for r in rows[1:])
        atomic_write_text(out_dir / "train.csv", text)
        options, trials = {}, exp.trials
    elif command == "sweep":
        opts = resolved.sweep
        rows = []
        for kind in opts.kinds:
            rows += TR.sweep_connectivity(exp, opts.densities, kind, data)
        atomic_write_text(out_dir / "sweep.csv", TR.sweep_csv(rows))
        atomic_write_text(out_dir / "sweep_summary.csv", TR.sweep_summary_csv(rows))
        for r in rows:
            print(f"{r.kind:8s} {r.percentage:7.2f}%  train {r.train_mean:.4f}±{r.train_std:.4f}  "
                  f"test {r.test_mean:.4f}±{r.test_std:.4f}")
        outputs, options, trials = ["sweep.csv", "sweep_summary.csv"], asdict(opts), exp.trials
    elif command == "compare":
        opts = resolved.compare
        stoch, dense = TR.compare_vs_convnet(exp, opts.trials, opts.connectivity, opts.kind, data)
        atomic_write_text(out_dir / "compare.csv", TR.compare_csv([stoch, dense]))
        atomic_write_text(out_dir / "compare_summary.csv", TR.compare_summary_csv([stoch, dense]))
        for s in (stoch, dense):
            print(f"{s.model:14s} connectivity {100 * s.connectivity:.2f}%  final test "
                  f"{s.test_mean[-1]:.4f}±{s.test_std[-1]:.4f}  gap {s.gap[-1]:+.4f}")
        outputs, options, trials = ["compare.csv", "compare_summary.csv"], asdict(opts), opts.trials
    else:
        raise UsageError(f"unknown command {command!r}")
    man = M.build(command, exp, options, _seed_table(exp, trials), data.files, started)
    return M.finish(man, out_dir, outputs)


def _resolved_from_manifest(m):
    exp = TR.ExperimentConfig.from_dict(m["experiment"])
    res = C.Resolved(exp, C.SweepOptions(), C.CompareOptions(), C.BenchOptions())
    opts = m.get("options") or {}
    target = {"sweep": res.sweep, "compare": res.compare, "bench": res.bench}.get(m["command"])
    if target is not None:
        for k, v in opts.items():
            setattr(target, k, v)
    return res


def cmd_experiment(args):
    try:
        resolved = C.load(args.config)
    except OSError as exc:
        raise C.ConfigError(f"cannot read config {args.config}: {exc}") from exc
    resolved = _apply_overrides(resolved, args)
    path = run_command(args.command, resolved, args.out_dir)
    print(f"manifest: {path}")
    return EXIT_OK


def cmd_rerun(args):
    try:
        m = M.load(args.manifest)
        resolved = _resolved_from_manifest(m)
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise C.ConfigError(f"cannot rerun {args.manifest}: {exc}") from exc
    path = run_command(m["command"], resolved, args.out_dir)
    print(f"manifest: {path}")
    return EXIT_OK


def cmd_kernels(args):
    cfg = N.reference_config(density=args.density)
    net = N.build_network(cfg)
    for name, st in B.compare_backends(net, args.batch, args.repetitions).items():
        print(f"{name:6s} median {st.median * 1e3:9.3f} ms  iqr {st.iqr * 1e3:7.3f} ms  "
              f"per image {st.per_image * 1e6:8.1f} us")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="stochasticnet", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mask", help="realize a connectivity mask and write it to a file")
    m.add_argument("--kind", choices=masks.KINDS, default=masks.GAUSSIAN)
    m.add_argument("--k", type=int, default=5)
    m.add_argument("--density", type=float, required=True)
    m.add_argument("--out-channels", type=int, default=32)
    m.add_argument("--in-channels", type=int, default=1)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--dense", action="store_true",
                   help="fully connected mask of in-channels x out-channels units")
    m.add_argument("--share-channels", action="store_true",
                   help="one spatial pattern per filter, shared by all input channels")
    m.add_argument("--output", required=True)
    m.set_defaults(func=cmd_mask)

    for name, helptext in (("train", "train networks and write per-epoch errors"),
                           ("sweep", "connectivity sweep over densities and kinds"),
                           ("compare", "multi-trial StochasticNet vs ConvNet"),
                           ("bench", "relative inference time vs connectivity")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("config")
        e.add_argument("--out-dir", default=f"runs/{name}")
        e.add_argument("--seed", type=int)
        e.add_argument("--trials", type=int)
        e.add_argument("--epochs", type=int)
        e.add_argument("--threads", type=int,
                       help="worker processes for trials; executor threads for bench")
        e.add_argument("--data-dir")
        e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("rerun", help="repeat a run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_rerun)

    k = sub.add_parser("kernels", help="time the numba and numpy kernel backends")
    k.add_argument("--density", type=float, default=0.39)
    k.add_argument("--batch", type=int, default=64)
    k.add_argument("--repetitions", type=int, default=10)
    k.set_defaults(func=cmd_kernels)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, C.ConfigError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except OutputError as exc:
        return _fail(EXIT_IO, str(exc))
    except N.DivergenceError as exc:
        return _fail(EXIT_DIVERGED, f"training diverged: {exc}")
    except (FileNotFoundError, D.DataError) as exc:
        return _fail(EXIT_DATA, f"{exc} (check [data] data_dir or pass --data-dir)")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))


if __name__ == "__main__":
    sys.exit(main())
