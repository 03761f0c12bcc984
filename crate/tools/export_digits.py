#!/usr/bin/env python3
"""Export scikit-learn's bundled 8x8 handwritten-digits set (the UCI ML
handwritten digits test set that ships inside the sklearn wheel) to the
IDX container format used by crates/donet/data/.

The first 1000 samples are taken in the library's order; pixel values
(0..16) are rescaled to the full 0..255 byte range so the loader's 1/255
normalization yields [0,1] inputs.

Usage: python3 tools/export_digits.py
"""
import struct
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

N = 1000
OUT = Path(__file__).resolve().parent.parent / "crates" / "donet" / "data"

digits = load_digits()
images = np.round(digits.images[:N] * (255.0 / 16.0)).astype(np.uint8)
labels = digits.target[:N].astype(np.uint8)

OUT.mkdir(parents=True, exist_ok=True)
with open(OUT / "digits-images.idx3", "wb") as f:
    f.write(struct.pack(">IIII", 0x0803, N, 8, 8))
    f.write(images.tobytes())
with open(OUT / "digits-labels.idx1", "wb") as f:
    f.write(struct.pack(">II", 0x0801, N))
    f.write(labels.tobytes())

counts = np.bincount(labels, minlength=10)
print(f"wrote {N} 8x8 images; class counts: {counts.tolist()}")
