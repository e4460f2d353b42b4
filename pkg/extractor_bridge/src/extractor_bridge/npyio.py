"""Minimal NPY v1.0 writer matching the downstream toolkit's contract.

The consumer accepts exactly: magic \\x93NUMPY, version 1.0, little-endian
f32/f64, C order, rank 1 or 2. numpy.save produces this layout for such
arrays, but the writer is spelled out here so the emitted bytes depend on
nothing but this file.
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"\x93NUMPY\x01\x00"
_DESCRS = {"f32": "<f4", "f64": "<f8"}


def write_npy(path, array: np.ndarray, precision: str = "f32") -> None:
    a = np.asarray(array)
    if a.ndim not in (1, 2):
        raise ValueError(f"only rank-1/2 arrays supported, got rank {a.ndim}")
    if not np.isfinite(a).all():
        raise ValueError(f"refusing to write non-finite values to {path}")
    a = np.ascontiguousarray(a, dtype=_DESCRS[precision])
    head = f"{{'descr': '{_DESCRS[precision]}', 'fortran_order': False, 'shape': {a.shape!r}, }}"
    total = len(_MAGIC) + 2 + len(head) + 1
    head = head + " " * ((64 - total % 64) % 64) + "\n"
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<H", len(head)))
        f.write(head.encode("latin1"))
        f.write(a.tobytes(order="C"))
