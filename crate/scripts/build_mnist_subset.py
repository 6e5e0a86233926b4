#!/usr/bin/env python3
"""Convert the digit arrays bundled in the npm `mnist` package (10,000 MNIST
samples, MIT licensed) into gzip-compressed IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/build_mnist_subset.py package/src/digits data/mnist-10k

Each class is shuffled with a fixed seed and split 80/20 into train/test.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx_images(path, images, side):
    header = struct.pack(">IIII", 0x00000803, len(images), side, side)
    body = bytes(b for img in images for b in img)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + body)


def write_idx_labels(path, labels):
    header = struct.pack(">II", 0x00000801, len(labels))
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20220101)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        samples = [
            [min(255, max(0, round(v * 255))) for v in flat[i : i + 784]]
            for i in range(0, len(flat), 784)
        ]
        rng.shuffle(samples)
        cut = int(round(len(samples) * 0.8))
        train += [(s, digit) for s in samples[:cut]]
        test += [(s, digit) for s in samples[cut:]]
    rng.shuffle(train)
    rng.shuffle(test)
    for name, rows in (("train", train), ("t10k", test)):
        write_idx_images(dst / f"{name}-images-idx3-ubyte.gz", [r[0] for r in rows], 28)
        write_idx_labels(dst / f"{name}-labels-idx1-ubyte.gz", [r[1] for r in rows])
        print(name, len(rows))


if __name__ == "__main__":
    main()
