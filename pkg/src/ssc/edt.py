"""Exact squared Euclidean distance transform by separable lower-envelope passes.

Felzenszwalb & Huttenlocher's 1D transform is run along z, y and x in turn;
after all three passes every voxel holds the squared distance (in voxel
units) from its center to the nearest seed voxel center. Values are integer
valued floats, so the result is exact.
"""
from __future__ import annotations

import numba
import numpy as np

BIG = 1e20


@numba.njit(cache=True)
def _dt1d(f, out, v, z):
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        fq = f[q] + q * q
        p = v[k]
        s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
        while s <= z[k]:
            k -= 1
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = d * d + f[v[k]]


@numba.njit(cache=True, parallel=True)
def _pass_last_axis(a):
    n0, n1, n2 = a.shape
    for i in numba.prange(n0):
        f = np.empty(n2)
        out = np.empty(n2)
        v = np.empty(n2, dtype=np.int64)
        z = np.empty(n2 + 1)
        for j in range(n1):
            for k in range(n2):
                f[k] = a[i, j, k]
            _dt1d(f, out, v, z)
            for k in range(n2):
                a[i, j, k] = out[k]


@numba.njit(cache=True, parallel=True)
def _pass_middle_axis(a):
    n0, n1, n2 = a.shape
    for i in numba.prange(n0):
        f = np.empty(n1)
        out = np.empty(n1)
        v = np.empty(n1, dtype=np.int64)
        z = np.empty(n1 + 1)
        for k in range(n2):
            for j in range(n1):
                f[j] = a[i, j, k]
            _dt1d(f, out, v, z)
            for j in range(n1):
                a[i, j, k] = out[j]


@numba.njit(cache=True, parallel=True)
def _pass_first_axis(a):
    n0, n1, n2 = a.shape
    for j in numba.prange(n1):
        f = np.empty(n0)
        out = np.empty(n0)
        v = np.empty(n0, dtype=np.int64)
        z = np.empty(n0 + 1)
        for k in range(n2):
            for i in range(n0):
                f[i] = a[i, j, k]
            _dt1d(f, out, v, z)
            for i in range(n0):
                a[i, j, k] = out[i]


def squared_edt(seeds: np.ndarray) -> np.ndarray:
    """Squared distance (voxel units) from each voxel to the nearest True voxel.

    Voxels with no seed anywhere in the volume keep a huge sentinel value.
    """
    a = np.where(np.asarray(seeds, dtype=bool), 0.0, BIG)
    a = np.ascontiguousarray(a)
    _pass_last_axis(a)
    _pass_middle_axis(a)
    _pass_first_axis(a)
    return a
