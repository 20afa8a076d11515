#!/usr/bin/env python3
"""Build the bundled MNIST subset in IDX format.

Source: the `mnist` npm package (10,000 MNIST digits stored as JSON arrays of
pixel intensities in [0, 1]). Usage:

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIZE = 28 * 28


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        for k in range(len(raw) // SIZE):
            pixels = bytes(round(v * 255) for v in raw[k * SIZE:(k + 1) * SIZE])
            samples.append((pixels, digit))
    random.Random(0).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    images = struct.pack(">IIII", 2051, n, 28, 28) + b"".join(p for p, _ in samples)
    labels = struct.pack(">II", 2049, n) + bytes(d for _, d in samples)
    # mtime=0 keeps the archives byte-reproducible
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(images)
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(labels)
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
