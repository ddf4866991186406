"""Build the bundled 5k MNIST subset (IDX, gzip) under data/mnist-5k/.

The source is the 5000-image MNIST extract shipped inside the mlxtend
wheel (``mlxtend/data/data/mnist_5k.csv.gz``: 784 pixel columns followed
by the label). It is split per class into 400 train / 100 test images.

    pip download mlxtend --no-deps -d /tmp/mlx
    python scripts/build_mnist_subset.py /tmp/mlx/mlxtend-*.whl
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from xbarmap.data import Dataset, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TEST_PER_CLASS = 100


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel", type=Path)
    parser.add_argument("--out", type=Path, default=Path(__file__).parents[1] / "data" / "mnist-5k")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    raw = gzip.decompress(zipfile.ZipFile(args.wheel).read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :-1] / 255.0
    labels = table[:, -1].astype(np.int64)

    rng = np.random.default_rng(args.seed)
    train_ix, test_ix = [], []
    for c in range(10):
        ix = rng.permutation(np.flatnonzero(labels == c))
        test_ix.append(ix[:TEST_PER_CLASS])
        train_ix.append(ix[TEST_PER_CLASS:])
    train_ix = rng.permutation(np.concatenate(train_ix))
    test_ix = rng.permutation(np.concatenate(test_ix))

    args.out.mkdir(parents=True, exist_ok=True)
    for prefix, ix in (("train", train_ix), ("t10k", test_ix)):
        ds = Dataset(pixels[ix], labels[ix], 10, prefix, (28, 28))
        write_idx(ds, args.out / f"{prefix}-images-idx3-ubyte.gz",
                  args.out / f"{prefix}-labels-idx1-ubyte.gz")
        print(f"{prefix}: {len(ds)} images, class counts {np.bincount(ds.labels).tolist()}")


if __name__ == "__main__":
    main()
