#!/usr/bin/env python3
"""Convert the digits shipped with the npm `mnist` package into IDX files.

    npm install mnist
    python3 scripts/make_mnist_subset.py node_modules/mnist data/mnist-subset

The package stores 10,000 MNIST digits grouped by class as 784 floats in
[0, 1]. Samples are shuffled with a fixed seed so any tail split is mixed.
"""

import argparse
import json
import random
import struct
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package", type=Path, help="path to the npm mnist package")
    ap.add_argument("out", type=Path, help="output directory")
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        doc = json.loads((args.package / "src" / "digits" / f"{digit}.json").read_text())
        flat = doc["data"]
        if len(flat) % 784:
            raise SystemExit(f"{digit}.json: length {len(flat)} is not a multiple of 784")
        for i in range(0, len(flat), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i : i + 784])
            samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    args.out.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    with open(args.out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(args.out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} samples to {args.out}")


if __name__ == "__main__":
    main()
