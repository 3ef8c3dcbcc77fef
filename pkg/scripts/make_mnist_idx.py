"""Write an MNIST subset as standard IDX files for offline use.

Source: the 5000-digit sample shipped with ``mlxtend`` (500 per class,
stored sorted by class). Each class is split 450 train / 50 test, then
both splits are shuffled with a fixed seed so any prefix is roughly
balanced.

    python scripts/make_mnist_idx.py OUT_DIR
"""

import argparse
import os

import numpy as np

from specpool.data_io import write_idx

TEST_PER_CLASS = 50


def build(out_dir, seed=0):
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    images = x.reshape(-1, 28, 28).astype(np.uint8)
    y = y.astype(np.uint8)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(y == digit))
        test_idx.append(idx[:TEST_PER_CLASS])
        train_idx.append(idx[TEST_PER_CLASS:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    os.makedirs(out_dir, exist_ok=True)
    for prefix, idx in (("train", train_idx), ("t10k", test_idx)):
        write_idx(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte.gz"), images[idx])
        write_idx(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte.gz"), y[idx])
    return len(train_idx), len(test_idx)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)
    n_tr, n_te = build(a.out_dir, a.seed)
    print(f"wrote {n_tr} train and {n_te} test digits to {a.out_dir}")


if __name__ == "__main__":
    main()
