"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from convbudget import zoo


@pytest.fixture(scope="session")
def zoo_arch():
    cache = {}

    def get(name: str):
        if name not in cache:
            cache[name] = zoo.load(name)
        return cache[name]

    return get


def naive_conv(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Deliberately naive six-nested-loop convolution in float64. The
    correctness reference for the jitted kernel; never the other way
    around."""
    c, h, width = x.shape
    n, per_group, s, _ = w.shape
    groups = c // per_group
    xb = np.zeros((c, h + 2 * pad, width + 2 * pad), dtype=np.float64)
    xb[:, pad:pad + h, pad:pad + width] = x.astype(np.float64)
    oh = (h + 2 * pad - s) // stride + 1
    ow = (width + 2 * pad - s) // stride + 1
    out = np.zeros((n, oh, ow), dtype=np.float64)
    out_per_group = n // groups
    for co in range(n):
        base = (co // out_per_group) * per_group
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0
                for ci in range(per_group):
                    for ky in range(s):
                        for kx in range(s):
                            acc += (float(xb[base + ci, y * stride + ky, xx * stride + kx])
                                    * float(w[co, ci, ky, kx]))
                out[co, y, xx] = acc
    return out
