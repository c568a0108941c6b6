#!/usr/bin/env python3
"""Convert the 5,000-image MNIST subset shipped with mlxtend into gzipped IDX files.

The subset (500 images per class) lives inside the mlxtend wheel as
mlxtend/data/data/mnist_5k.csv.gz, one row per image: 784 pixel values
followed by the label. Rows are sorted by class, so they are shuffled with
a fixed seed before writing; any contiguous train/valid split is then
class-balanced.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist5k.py /tmp/mlx/mlxtend-*.whl data/mnist5k
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

SEED = 20200701


def load_rows(src: Path) -> np.ndarray:
    if src.suffix == ".whl":
        with zipfile.ZipFile(src) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
        return np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    return np.loadtxt(gzip.open(src), delimiter=",")


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    rows = load_rows(Path(sys.argv[1]))
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    perm = np.random.default_rng(SEED).permutation(rows.shape[0])
    rows = rows[perm]
    images = rows[:, :784].astype(np.uint8)
    labels = rows[:, 784].astype(np.uint8)
    n = images.shape[0]

    with gzip.GzipFile(out / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(out / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
