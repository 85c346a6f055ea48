"""Build a small MNIST sample in IDX format from the 5,000-image CSV that
ships inside the mlxtend wheel (500 images per class, taken from the
original MNIST training set).

Usage:
    pip download mlxtend --no-deps -d /tmp/mlx
    python scripts/make_mnist_sample.py /tmp/mlx/mlxtend-*.whl data/mnist-sample

Writes gzipped IDX files with the standard MNIST names. Images are split
4,000 / 1,000 (400 / 100 per class) into pseudo train and test files; both
halves come from the original training set.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + array.astype(np.uint8).tobytes())


def main(wheel, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    images = pixels.reshape(-1, 28, 28)

    rng = np.random.default_rng(0)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        test_idx.extend(idx[:100])
        train_idx.extend(idx[100:])
    train_idx = np.sort(np.array(train_idx))
    test_idx = np.sort(np.array(test_idx))

    for prefix, idx in (("train", train_idx), ("t10k", test_idx)):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", images[idx], 0x00000803)
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", labels[idx], 0x00000801)
    print(f"train={len(train_idx)} test={len(test_idx)} -> {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
