#!/usr/bin/env python3
"""Write the 5000-image MNIST subset shipped inside the mlxtend wheel as IDX files.

Usage:
    python3 scripts/fetch_mnist5k.py [--wheel PATH] [--out data/mnist5k]

Without --wheel the wheel is fetched with `pip download mlxtend --no-deps`.
"""

import argparse
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(path):
    if path:
        return path
    tmp = tempfile.mkdtemp(prefix="mlxtend-")
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "mlxtend", "--no-deps", "-d", tmp, "-q"],
        check=True,
    )
    wheels = glob.glob(os.path.join(tmp, "mlxtend-*.whl"))
    if not wheels:
        sys.exit("pip download produced no mlxtend wheel")
    return wheels[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", help="path to a local mlxtend wheel")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k"))
    args = ap.parse_args()

    with zipfile.ZipFile(find_wheel(args.wheel)) as z:
        text = gzip.decompress(z.read(CSV_MEMBER)).decode("ascii")

    pixels = bytearray()
    labels = bytearray()
    for line in text.splitlines():
        if not line.strip():
            continue
        fields = [int(float(v)) for v in line.split(",")]
        if len(fields) != 785:
            sys.exit(f"unexpected row width {len(fields)}")
        pixels.extend(fields[:784])
        labels.append(fields[784])
    count = len(labels)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, count, 28, 28))
        f.write(pixels)
    with open(os.path.join(args.out, "labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, count))
        f.write(labels)
    print(f"wrote {count} images to {os.path.abspath(args.out)}")


if __name__ == "__main__":
    main()
