#!/usr/bin/env python3
"""Build the bundled MNIST subset (IDX format) from the `mnist` npm package.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset

Takes the first 200 (train) and next 100 (test) digits of every class,
shuffles each split with a fixed seed and writes uncompressed IDX files.
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 200
TEST_PER_CLASS = 100


def load(digits_dir):
    out = {}
    for d in range(10):
        flat = json.load(open(Path(digits_dir) / f"{d}.json"))["data"]
        out[d] = [
            bytes(round(v * 255) for v in flat[i : i + 784])
            for i in range(0, len(flat), 784)
        ]
    return out


def write_idx(prefix, items):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(items), 28, 28))
        for img, _ in items:
            f.write(img)
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(items)))
        f.write(bytes(label for _, label in items))


def main():
    digits = load(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for d, imgs in digits.items():
        train += [(img, d) for img in imgs[:TRAIN_PER_CLASS]]
        test += [(img, d) for img in imgs[TRAIN_PER_CLASS : TRAIN_PER_CLASS + TEST_PER_CLASS]]
    rng = random.Random(20230101)
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(out / "train", train)
    write_idx(out / "t10k", test)


if __name__ == "__main__":
    main()
