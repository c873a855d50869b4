"""Compiled inner loops for the lattice and graph Gibbs samplers.

All randomness is passed in as pre-drawn uniforms so that every caller owns
its ``numpy.random.Generator`` and results stay reproducible.
"""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _site_neighbor_sum(x, i, j):
    r, s = x.shape
    total = 0
    if i > 0:
        total += x[i - 1, j]
    if i < r - 1:
        total += x[i + 1, j]
    if j > 0:
        total += x[i, j - 1]
    if j < s - 1:
        total += x[i, j + 1]
    return total


@numba.njit(cache=True)
def ising_stat(x):
    r, s = x.shape
    total = 0
    for i in range(r):
        for j in range(s - 1):
            total += x[i, j] * x[i, j + 1]
    for i in range(r - 1):
        for j in range(s):
            total += x[i, j] * x[i + 1, j]
    return total


@numba.njit(cache=True)
def ising_sweeps(x, theta, uniforms):
    """Heat-bath raster sweeps in place; returns S(x) after every sweep."""
    r, s = x.shape
    n_sweeps = uniforms.shape[0]
    out = np.empty(n_sweeps, dtype=np.int64)
    stat = ising_stat(x)
    for t in range(n_sweeps):
        k = 0
        for i in range(r):
            for j in range(s):
                nb = _site_neighbor_sum(x, i, j)
                p_up = 1.0 / (1.0 + math.exp(-2.0 * theta * nb))
                new = 1 if uniforms[t, k] < p_up else -1
                if new != x[i, j]:
                    stat += (new - x[i, j]) * nb
                    x[i, j] = new
                k += 1
        out[t] = stat
    return out


@numba.njit(cache=True)
def ising_bounding_pair(top, bottom, theta, uniforms):
    """Run the upper and lower chains on shared uniforms; True if they meet."""
    r, s = top.shape
    for t in range(uniforms.shape[0]):
        k = 0
        for i in range(r):
            for j in range(s):
                u = uniforms[t, k]
                p_top = 1.0 / (1.0 + math.exp(-2.0 * theta * _site_neighbor_sum(top, i, j)))
                p_bot = 1.0 / (1.0 + math.exp(-2.0 * theta * _site_neighbor_sum(bottom, i, j)))
                top[i, j] = 1 if u < p_top else -1
                bottom[i, j] = 1 if u < p_bot else -1
                k += 1
    for i in range(r):
        for j in range(s):
            if top[i, j] != bottom[i, j]:
                return False
    return True


@numba.njit(cache=True)
def _shared_partners(a, i, k, skip):
    n = a.shape[0]
    total = 0
    for l in range(n):
        if l != skip and a[i, l] and a[k, l]:
            total += 1
    return total


@numba.njit(cache=True)
def ergm_change_stats(a, i, j, weights):
    """Change in (edges, GWESP) from adding dyad (i, j), evaluated with it absent."""
    n = a.shape[0]
    delta = weights[_shared_partners(a, i, j, -1)]
    for k in range(n):
        if k == i or k == j:
            continue
        if a[i, k] and a[j, k]:
            sp_ik = _shared_partners(a, i, k, j)
            sp_jk = _shared_partners(a, j, k, i)
            delta += weights[sp_ik + 1] - weights[sp_ik]
            delta += weights[sp_jk + 1] - weights[sp_jk]
    return 1.0, delta


@numba.njit(cache=True)
def ergm_stats(a, weights):
    n = a.shape[0]
    edges = 0.0
    gwesp = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if a[i, j]:
                edges += 1.0
                gwesp += weights[_shared_partners(a, i, j, -1)]
    return edges, gwesp


@numba.njit(cache=True)
def ergm_sweeps(a, theta1, theta2, weights, uniforms):
    """Systematic-scan dyad Gibbs sweeps in place; returns (S1, S2) per sweep."""
    n = a.shape[0]
    n_sweeps = uniforms.shape[0]
    out = np.empty((n_sweeps, 2))
    s1, s2 = ergm_stats(a, weights)
    for t in range(n_sweeps):
        k = 0
        for i in range(n):
            for j in range(i + 1, n):
                old = a[i, j]
                if old:
                    a[i, j] = 0
                    a[j, i] = 0
                d1, d2 = ergm_change_stats(a, i, j, weights)
                eta = theta1 * d1 + theta2 * d2
                p_on = 1.0 / (1.0 + math.exp(-eta))
                on = uniforms[t, k] < p_on
                if on:
                    a[i, j] = 1
                    a[j, i] = 1
                if on and not old:
                    s1 += d1
                    s2 += d2
                elif old and not on:
                    s1 -= d1
                    s2 -= d2
                k += 1
        out[t, 0] = s1
        out[t, 1] = s2
    return out
