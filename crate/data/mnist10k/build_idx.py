"""Rebuild the bundled 10k MNIST subset as IDX files.

Source: the `mnist` npm package (v1.1.0, MIT), which ships 10,000 MNIST
digits as JSON grey levels in [0, 1]. Usage:

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 build_idx.py package/src/digits .
"""
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(len(flat) // 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784])
            samples.append((pixels, digit))
    random.Random(20211014).shuffle(samples)
    n = len(samples)
    with open(dst / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(dst / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for _, label in samples))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
