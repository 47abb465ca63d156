# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: elementwise vector arithmetic mod q.

All inputs are C-contiguous uint64 arrays with every element already
reduced into [0, q). q must be < 2**63 so that two-operand sums never
overflow a 64-bit lane; products go through a 128-bit intermediate.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef unsigned long long u64

cdef extern from *:
    ctypedef unsigned long long u128 "__uint128_t"

BACKEND_NAME = "compiled"


def add_mod(const u64[::1] a, const u64[::1] b, u64 q):
    """Elementwise (a + b) mod q."""
    cdef Py_ssize_t n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    cdef Py_ssize_t i
    cdef u64 s
    with nogil:
        for i in range(n):
            s = a[i] + b[i]
            if s >= q:
                s -= q
            o[i] = s
    return out


def sub_mod(const u64[::1] a, const u64[::1] b, u64 q):
    """Elementwise (a - b) mod q."""
    cdef Py_ssize_t n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            if a[i] >= b[i]:
                o[i] = a[i] - b[i]
            else:
                o[i] = a[i] + (q - b[i])
    return out


def iadd_mod(u64[::1] acc, const u64[::1] b, u64 q):
    """In-place acc = (acc + b) mod q; used by aggregation loops."""
    cdef Py_ssize_t n = acc.shape[0]
    cdef Py_ssize_t i
    cdef u64 s
    with nogil:
        for i in range(n):
            s = acc[i] + b[i]
            if s >= q:
                s -= q
            acc[i] = s


def scalar_mul_mod(const u64[::1] a, u64 c, u64 q):
    """Elementwise (a * c) mod q via 128-bit intermediates."""
    cdef Py_ssize_t n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    cdef Py_ssize_t i
    cdef u128 p
    with nogil:
        for i in range(n):
            p = <u128> a[i] * <u128> c
            o[i] = <u64> (p % q)
    return out
