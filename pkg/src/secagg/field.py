"""Prime-field vector arithmetic over Z_q and fixed-point encoding.

Vectors over Z_q are the unit of all masking and aggregation: a masked
model update, a partial aggregate, and the global model are all
FieldVectors. Fixed-point encoding maps real-valued model updates into
the field via a power-of-two scale and a centered lift, so that field
sums correspond to real sums within quantization error.

The canonical byte encoding of a vector (8-byte little-endian length,
then one 8-byte little-endian word per residue) is the bit-exact input
to every signature and MAC in the protocol.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

import numpy as np

from . import backend

# Default modulus: Mersenne prime 2^61 - 1. Large enough for 64-bit model
# words with headroom, small enough that sums of two residues stay in a
# uint64 lane.
PRIME_M61 = (1 << 61) - 1

_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _is_prime_u64(n: int) -> bool:
    """Deterministic Miller-Rabin; exact for all n < 3.3 * 10**24."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldParams:
    """A prime modulus q < 2**63 and a human-readable label."""

    q: int
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.q, int):
            raise TypeError("modulus must be an int")
        if self.q >= 1 << 63:
            # Two fully reduced operands must sum below 2**64.
            raise ValueError(f"modulus {self.q} does not fit in 63 bits")
        if not _is_prime_u64(self.q):
            raise ValueError(f"modulus {self.q} is not prime")
        if not self.name:
            object.__setattr__(self, "name", f"Z_{self.q}")


DEFAULT_PARAMS = FieldParams(PRIME_M61, "M61")


@dataclass(frozen=True, eq=False)
class FieldVector:
    """Immutable vector of residues in [0, q)."""

    params: FieldParams
    elems: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        self.elems.flags.writeable = False

    @classmethod
    def from_ints(cls, params: FieldParams, values: Iterable[int]) -> "FieldVector":
        arr = np.asarray(list(values), dtype=np.uint64)
        if arr.size and int(arr.max()) >= params.q:
            raise ValueError("element out of range [0, q)")
        return cls(params, arr)

    @classmethod
    def zeros(cls, params: FieldParams, length: int) -> "FieldVector":
        return cls(params, np.zeros(length, dtype=np.uint64))

    @classmethod
    def wrap(cls, params: FieldParams, arr: np.ndarray) -> "FieldVector":
        """Adopt an array whose elements are already reduced mod q."""
        return cls(params, np.ascontiguousarray(arr, dtype=np.uint64))

    def __len__(self) -> int:
        return self.elems.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldVector):
            return NotImplemented
        return self.params == other.params and np.array_equal(self.elems, other.elems)

    def __add__(self, other: "FieldVector") -> "FieldVector":
        return add(self, other)

    def __sub__(self, other: "FieldVector") -> "FieldVector":
        return sub(self, other)

    def tolist(self) -> list:
        return [int(e) for e in self.elems]

    def __repr__(self) -> str:
        head = self.tolist() if len(self) <= 8 else self.tolist()[:8] + ["..."]
        return f"FieldVector(q={self.params.q}, len={len(self)}, {head})"


def _check_compat(a: FieldVector, b: FieldVector) -> None:
    if a.params != b.params:
        raise ValueError("field params mismatch")
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")


def add(a: FieldVector, b: FieldVector) -> FieldVector:
    """Elementwise (a + b) mod q."""
    _check_compat(a, b)
    return FieldVector(a.params, backend.add_mod(a.elems, b.elems, a.params.q))


def sub(a: FieldVector, b: FieldVector) -> FieldVector:
    """Elementwise (a - b) mod q."""
    _check_compat(a, b)
    return FieldVector(a.params, backend.sub_mod(a.elems, b.elems, a.params.q))


def scale_by_inverse(v: FieldVector, n: int) -> FieldVector:
    """Elementwise v * n^-1 mod q; the x/n term of a masked share."""
    q = v.params.q
    if not 0 < n < q:
        raise ValueError(f"node count {n} outside (0, q)")
    inv = pow(n, -1, q)
    return FieldVector(v.params, backend.scalar_mul_mod(v.elems, inv, q))


def sum_vectors(vectors: Sequence[FieldVector]) -> FieldVector:
    """Field sum of one or more vectors of equal params/length."""
    if not vectors:
        raise ValueError("cannot sum zero vectors")
    first = vectors[0]
    acc = np.array(first.elems, dtype=np.uint64)  # private mutable copy
    for v in vectors[1:]:
        _check_compat(first, v)
        backend.iadd_mod(acc, v.elems, first.params.q)
    return FieldVector(first.params, acc)


# ---------------------------------------------------------------------------
# Fixed-point encoding
# ---------------------------------------------------------------------------


class ClipStats:
    """Mutable counter for values clipped during encoding."""

    __slots__ = ("clipped",)

    def __init__(self):
        self.clipped = 0


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps reals to residues: r -> round(r * scale), centered lift for signs.

    max_summands bounds how many encoded vectors may be summed before
    decoding; the no-wraparound check against a given modulus is
    ``validate_for``.
    """

    scale: int = 1 << 16
    clip_bound: float = float(1 << 8)
    max_summands: int = 1 << 10

    def __post_init__(self):
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ValueError("scale must be a positive power of two")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")
        if self.max_summands < 1:
            raise ValueError("max_summands must be >= 1")

    def validate_for(self, params: FieldParams) -> None:
        if self.max_summands * self.clip_bound * self.scale >= params.q / 2:
            raise ValueError("codec range would wrap the centered lift")


DEFAULT_CODEC = FixedPointCodec()


def encode(
    reals: Sequence[float] | np.ndarray,
    codec: FixedPointCodec = DEFAULT_CODEC,
    params: FieldParams = DEFAULT_PARAMS,
    stats: ClipStats | None = None,
) -> FieldVector:
    """Fixed-point encode; values beyond clip_bound are clipped, not rejected."""
    codec.validate_for(params)
    arr = np.asarray(reals, dtype=np.float64)
    if stats is not None:
        stats.clipped += int(np.count_nonzero(np.abs(arr) > codec.clip_bound))
    clipped = np.clip(arr, -codec.clip_bound, codec.clip_bound)
    scaled = np.rint(clipped * codec.scale).astype(np.int64)
    lifted = np.where(scaled < 0, scaled + np.int64(params.q), scaled)
    return FieldVector(params, lifted.astype(np.uint64))


def decode(v: FieldVector, codec: FixedPointCodec = DEFAULT_CODEC) -> np.ndarray:
    """Centered lift (residues above q/2 read as negative) divided by scale."""
    codec.validate_for(v.params)
    q = v.params.q
    x = v.elems.astype(np.int64)  # safe: q < 2**63
    centered = np.where(x > q // 2, x - np.int64(q), x)
    return centered.astype(np.float64) / codec.scale


# ---------------------------------------------------------------------------
# Canonical byte encoding (the signing/MAC input everywhere)
# ---------------------------------------------------------------------------


def vector_bytes(v: FieldVector) -> bytes:
    """8-byte LE length, then one 8-byte LE word per residue."""
    return struct.pack("<Q", len(v)) + v.elems.astype("<u8").tobytes()


def vector_from_bytes(params: FieldParams, data: bytes) -> FieldVector:
    if len(data) < 8:
        raise ValueError("truncated vector encoding")
    (length,) = struct.unpack_from("<Q", data, 0)
    if len(data) != 8 + 8 * length:
        raise ValueError("vector length prefix disagrees with payload size")
    arr = np.frombuffer(data, dtype="<u8", offset=8).astype(np.uint64)
    if arr.size and int(arr.max()) >= params.q:
        raise ValueError("element out of range [0, q)")
    return FieldVector(params, arr)
