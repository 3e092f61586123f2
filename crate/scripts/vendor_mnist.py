#!/usr/bin/env python3
"""Convert the `mnist` npm package (first 10,000 MNIST training digits,
grouped by class) into gzipped IDX files.

The npm package stores digits grouped by class, so the original order is
lost. Samples are re-ordered with a fixed permutation (numpy seed 0) so that
any prefix is roughly class balanced.

usage: npm pack mnist && tar xzf mnist-*.tgz && python3 vendor_mnist.py package data/mnist
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(pkg: Path, out: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        arr = np.asarray(data, dtype=np.float64).reshape(-1, 784)
        images.append(np.rint(arr * 255.0).clip(0, 255).astype(np.uint8))
        labels.extend([digit] * len(arr))
    images = np.concatenate(images)
    labels = np.asarray(labels, dtype=np.uint8)
    perm = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[perm], labels[perm]

    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(out / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(labels)} samples to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
