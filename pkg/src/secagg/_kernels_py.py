"""Pure-numpy fallback for the compiled kernels.

Same contract as ``_kernels``: C-contiguous uint64 arrays, elements in
[0, q), q < 2**63. Multiplication avoids 128-bit intermediates by
running a shift-and-add ladder over the scalar's bits, so every partial
stays below 2**64.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def add_mod(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    s = a + b
    np.subtract(s, np.uint64(q), out=s, where=s >= np.uint64(q))
    return s


def sub_mod(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    # Wraparound subtraction, then add q back where a < b.
    with np.errstate(over="ignore"):
        s = a - b
        np.add(s, np.uint64(q), out=s, where=b > a)
    return s


def iadd_mod(acc: np.ndarray, b: np.ndarray, q: int) -> None:
    acc += b
    np.subtract(acc, np.uint64(q), out=acc, where=acc >= np.uint64(q))


def scalar_mul_mod(a: np.ndarray, c: int, q: int) -> np.ndarray:
    res = np.zeros_like(a)
    if c == 0 or a.size == 0:
        return res
    for bit in bin(c)[2:]:
        res = add_mod(res, res, q)
        if bit == "1":
            res = add_mod(res, a, q)
    return res
