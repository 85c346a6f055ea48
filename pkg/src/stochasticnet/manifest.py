"""Run manifests: everything needed to reproduce a CLI run's outputs."""
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import machine_descriptor
from .io import atomic_write_text, sha256_file

MANIFEST_NAME = "manifest.json"


def now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def build(command, experiment, options, seeds, data_files=(), started=None):
    try:
        import numba
        numba_version = numba.__version__
    except ImportError:  # pragma: no cover
        numba_version = None
    return {
        "tool": "stochasticnet",
        "version": __version__,
        "command": command,
        "experiment": experiment.to_dict() if experiment is not None else None,
        "options": options,
        "seeds": seeds,
        "datasets": {str(p): sha256_file(p) for p in data_files},
        "machine": dict(machine_descriptor(), numpy=np.__version__, numba=numba_version),
        "started": started or now(),
        "finished": None,
        "outputs": {},
    }


def finish(manifest, out_dir, outputs):
    """Record output checksums and write the manifest next to them."""
    out_dir = Path(out_dir)
    manifest["outputs"] = {name: sha256_file(out_dir / name) for name in outputs}
    manifest["finished"] = now()
    atomic_write_text(out_dir / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir / MANIFEST_NAME


def load(path):
    with open(path) as f:
        m = json.load(f)
    if m.get("tool") != "stochasticnet" or "command" not in m:
        raise ValueError(f"{path} is not a stochasticnet manifest")
    return m
