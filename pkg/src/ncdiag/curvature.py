"""Curvature diagnostics built on the second Bartlett identity.

At the target, the sensitivity matrix ``E[-H]`` equals the variability
matrix ``E[u u^T]``. Along a chain both are averaged; the scaled diagnostic
compares their half-vectorizations through the cosine of the angle between
them and the ratio of their Euclidean norms:

    CD = 1 - { w cos(h, j) + (1 - w) min(|h|, |j|) / max(|h|, |j|) }

CD is 0 exactly when the two matrices agree. It lies in [0, 1] whenever
the cosine is nonnegative, which holds for any pair of positive
semidefinite matrices; opposed matrices can push it up to ``1 + w``.
"""

from __future__ import annotations

import numpy as np

from .score_approx import PointEstimates, point_key

__all__ = [
    "DegenerateInputError",
    "vech",
    "average_H",
    "average_J",
    "naive_cd",
    "scaled_cd",
    "cd",
    "acd",
    "cd_trace",
    "chain_estimate_arrays",
]


class DegenerateInputError(ValueError):
    """A half-vectorized matrix has zero norm, so the scaled diagnostic is undefined."""


def vech(m) -> np.ndarray:
    """Lower triangle stacked column by column."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("vech needs a square matrix")
    rows, cols = np.tril_indices(m.shape[0])
    order = np.lexsort((rows, cols))
    return m[rows[order], cols[order]]


def _weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("one weight per matrix required")
    return w / w.sum()


def _stack(mats) -> np.ndarray:
    arr = np.asarray(mats, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] == 0:
        raise ValueError("expected a nonempty stack of square matrices")
    return arr


def average_H(hessians, weights=None) -> np.ndarray:
    """Weighted average of ``-H`` over the chain (the sensitivity estimate)."""
    arr = _stack(hessians)
    return -np.einsum("i,ijk->jk", _weights(len(arr), weights), arr)


def average_J(outer_products, weights=None) -> np.ndarray:
    """Weighted average of ``u u^T`` over the chain (the variability estimate)."""
    arr = _stack(outer_products)
    return np.einsum("i,ijk->jk", _weights(len(arr), weights), arr)


def _check_pair(Hn, Jn):
    Hn = np.asarray(Hn, dtype=float)
    Jn = np.asarray(Jn, dtype=float)
    if Hn.shape != Jn.shape or Hn.ndim != 2:
        raise ValueError(f"dimension mismatch: {Hn.shape} vs {Jn.shape}")
    return Hn, Jn


def naive_cd(Hn, Jn) -> float:
    """Frobenius norm of ``Hn - Jn``."""
    Hn, Jn = _check_pair(Hn, Jn)
    return float(np.linalg.norm(Hn - Jn, "fro"))


def scaled_cd(Hn, Jn, w: float = 0.5) -> float:
    Hn, Jn = _check_pair(Hn, Jn)
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    h, j = vech(Hn), vech(Jn)
    nh, nj = np.linalg.norm(h), np.linalg.norm(j)
    if nh == 0.0 or nj == 0.0:
        raise DegenerateInputError("scaled curvature diagnostic needs nonzero matrices")
    if np.array_equal(h, j):
        return 0.0
    cos = float(np.clip(np.dot(h, j) / (nh * nj), -1.0, 1.0))
    ratio = min(nh, nj) / max(nh, nj)
    return max(0.0, 1.0 - (w * cos + (1.0 - w) * ratio))


def cd(hessians, scores, weights=None, w: float = 0.5) -> float:
    """Scaled CD from exact per-point Hessians and scores."""
    u = np.atleast_2d(np.asarray(scores, dtype=float))
    return scaled_cd(average_H(hessians, weights), average_J(u[:, :, None] * u[:, None, :], weights), w)


def chain_estimate_arrays(points, estimates: dict[str, PointEstimates]):
    """Per-row ``(u_hat, H_hat, J_hat)`` arrays for a chain, honouring repeats."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cache: dict[bytes, PointEstimates] = {}
    us, hs, js = [], [], []
    for row in pts:
        b = row.tobytes()
        est = cache.get(b)
        if est is None:
            try:
                est = estimates[point_key(row)]
            except KeyError:
                raise KeyError(f"no estimate for chain point {row}") from None
            cache[b] = est
        us.append(est.u_hat)
        hs.append(est.H_hat)
        js.append(est.J_hat)
    return np.array(us), np.array(hs), np.array(js)


def acd(chain, estimates: dict[str, PointEstimates], w: float = 0.5) -> float:
    """Approximate CD from two-stage estimates at every chain point."""
    points = chain.points if hasattr(chain, "points") else chain
    weights = getattr(chain, "weights", None)
    _, hs, js = chain_estimate_arrays(points, estimates)
    return scaled_cd(average_H(hs, weights), average_J(js, weights), w)


def cd_trace(hessians, outer_products, prefixes, w: float = 0.5) -> np.ndarray:
    """Scaled CD of the running (uniform) averages at each prefix length."""
    hs = _stack(hessians)
    js = _stack(outer_products)
    if len(hs) != len(js):
        raise ValueError("need one Hessian and one outer product per chain point")
    prefixes = np.asarray(prefixes, dtype=int)
    if np.any(prefixes < 1) or np.any(prefixes > len(hs)):
        raise ValueError(f"prefix lengths must lie in 1..{len(hs)}")
    cum_h = np.cumsum(hs, axis=0)
    cum_j = np.cumsum(js, axis=0)
    return np.array([scaled_cd(-cum_h[n - 1] / n, cum_j[n - 1] / n, w) for n in prefixes])
