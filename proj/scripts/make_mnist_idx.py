#!/usr/bin/env python3
"""Build gzipped IDX files from the digits bundled in the npm `mnist` package.

The package (MIT, J. Cazala) ships 10000 MNIST digits as per-class JSON arrays
of 28x28 intensities quantized to k/255.  We restore the bytes, shuffle with a
fixed seed so class order is interleaved, and write standard IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_idx.py package/src/digits data/mnist
"""
import gzip
import json
import os
import random
import struct
import sys


def main(src, dst):
    samples = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            data = json.load(f)["data"]
        assert len(data) % 784 == 0
        for i in range(0, len(data), 784):
            pixels = bytes(round(v * 255) for v in data[i:i + 784])
            samples.append((pixels, digit))
    random.Random(0).shuffle(samples)

    os.makedirs(dst, exist_ok=True)
    n = len(samples)
    with gzip.GzipFile(os.path.join(dst, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with gzip.GzipFile(os.path.join(dst, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
