"""Rebuild MNIST IDX files from the digits bundled in the npm ``mnist`` package.

Offline sandboxes cannot reach the canonical MNIST mirrors, but the npm
package ships 10,000 real MNIST digits as JSON arrays of pixel/255 values
rounded to three decimals. Rounding ``value * 255`` recovers the original
byte exactly (the rounding error is at most 0.128 of a byte).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/mnist_from_npm.py package/src/digits data/mnist

Records are written in a fixed seeded interleaving so that any prefix holds
a class mix close to the full set.
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(digits_dir, out_dir, seed=20200101):
    images, labels = [], []
    for digit in range(10):
        with open(Path(digits_dir) / f"{digit}.json") as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        rows = flat.reshape(-1, 784)
        images.append(np.rint(rows * 255.0).astype(np.uint8))
        labels.append(np.full(len(rows), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.Generator(np.random.Philox(seed)).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        fh.write(images.tobytes())
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(labels.tobytes())
    print(f"wrote {len(labels)} records to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
