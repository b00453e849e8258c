#!/usr/bin/env python3
"""Convert the digits shipped in the npm `mnist` package into IDX files.

The package stores about 1,000 real MNIST digits per class as flat JSON
arrays of 784 floats in [0, 1]. The digits are shuffled with a fixed seed
and split into a training file and a 1,000-image test file.

usage: mnist_from_npm.py PACKAGE_DIR [OUT_DIR]
OUT_DIR defaults to $TSDL_DATA_DIR/mnist, or data/mnist.
"""
import json
import os
import random
import struct
import sys

SEED = 20190124
TEST_COUNT = 1000
SIDE = 28


def load(package_dir):
    samples = []
    for digit in range(10):
        path = os.path.join(package_dir, "src", "digits", f"{digit}.json")
        with open(path) as f:
            flat = json.load(f)["data"]
        px = SIDE * SIDE
        for i in range(len(flat) // px):
            image = bytes(min(255, max(0, round(v * 255))) for v in flat[i * px:(i + 1) * px])
            samples.append((image, digit))
    return samples


def write(out_dir, prefix, samples):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), SIDE, SIDE))
        for image, _ in samples:
            f.write(image)
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    default = os.path.join(os.environ.get("TSDL_DATA_DIR", "data"), "mnist")
    out_dir = sys.argv[2] if len(sys.argv) > 2 else default
    os.makedirs(out_dir, exist_ok=True)
    samples = load(sys.argv[1])
    random.Random(SEED).shuffle(samples)
    write(out_dir, "train", samples[TEST_COUNT:])
    write(out_dir, "t10k", samples[:TEST_COUNT])
    print(f"wrote {len(samples) - TEST_COUNT} training and {TEST_COUNT} test images to {out_dir}")


if __name__ == "__main__":
    main()
