"""Inverse multiquadric kernel Stein discrepancy (IMQ KSD) and its approximate-score twin.

For base kernel ``k(x, y) = (c^2 + |x - y|^2)^beta`` and score ``u`` the
coordinatewise Stein kernel is

    k0_j(x, y) = u_j(x) u_j(y) k + u_j(x) d_{y_j} k + u_j(y) d_{x_j} k + d_{x_j} d_{y_j} k

and the discrepancy of a weighted sample is ``|| w ||_p`` with
``w_j^2 = sum_{k,l} q_k q_l k0_j(theta_k, theta_l)``. AIKS is the same
quantity with a Monte Carlo score ``u_hat`` plugged in.

On a box support with finite bounds the base kernel is multiplied by
``a(x) a(y)``, ``a(x) = prod (x_j - l_j) prod (x_j - u_j)`` over the finite
bounds, so the kernel itself vanishes on the boundary.

The double sum is tiled into blocks over the upper triangle. Block partial
sums are reduced in a fixed order, so results are bitwise reproducible for
any number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .curvature import chain_estimate_arrays
from .score_approx import PointEstimates, unique_points

__all__ = [
    "KernelConfig",
    "KSDResult",
    "imq_kernel",
    "constrained_kernel",
    "stein_kernel_j",
    "stein_gram_block",
    "ksd",
    "aiks",
    "ksd_trace",
    "NEGATIVE_RADICAND_TOL",
]

NEGATIVE_RADICAND_TOL = 1e-9


@dataclass
class KernelConfig:
    """IMQ settings. ``constrained=None`` engages the boundary factor whenever a bound is finite."""

    c: float = 1.0
    beta: float = -0.5
    norm_p: float = 2.0
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    constrained: bool | None = None
    block_size: int = 1024
    workers: int = 1

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("IMQ scale c must be positive")
        if not -1.0 < self.beta < 0.0:
            raise ValueError("IMQ exponent beta must lie in (-1, 0)")
        if not self.norm_p >= 1:
            raise ValueError("norm_p must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    def with_support(self, lower, upper) -> "KernelConfig":
        """Fill in bounds not already set."""
        return KernelConfig(
            self.c,
            self.beta,
            self.norm_p,
            self.lower if self.lower is not None else lower,
            self.upper if self.upper is not None else upper,
            self.constrained,
            self.block_size,
            self.workers,
        )

    def bounds(self, dim: int):
        """``(lower, upper)`` actually used by the kernel, or ``None`` if unconstrained."""
        lo = np.full(dim, -np.inf) if self.lower is None else np.broadcast_to(np.asarray(self.lower, float), (dim,))
        hi = np.full(dim, np.inf) if self.upper is None else np.broadcast_to(np.asarray(self.upper, float), (dim,))
        finite = np.isfinite(lo).any() or np.isfinite(hi).any()
        use = finite if self.constrained is None else (self.constrained and finite)
        return (lo, hi) if use else None


@dataclass
class KSDResult:
    value: float
    w: np.ndarray
    radicands: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# kernels


def _imq_parts(diff, r2, c, beta):
    """k, d_x k, d_y k, d_x d_y k per coordinate for difference arrays ``diff[..., j]``."""
    g = c * c + r2
    k = g**beta
    g1 = k / g
    g2 = g1 / g
    gx = 2.0 * beta * diff * g1[..., None]
    gy = -gx
    gxy = -2.0 * beta * g1[..., None] - 4.0 * beta * (beta - 1.0) * diff**2 * g2[..., None]
    return k, gx, gy, gxy


def _boundary_factor(x, lo, hi):
    """``a(x)`` and ``d_j log a(x)`` for rows of ``x``."""
    a = np.ones(x.shape[:-1])
    d = np.zeros(x.shape)
    for bound in (lo, hi):
        fin = np.isfinite(bound)
        if fin.any():
            off = x[..., fin] - bound[fin]
            a = a * np.prod(off, axis=-1)
            d[..., fin] += 1.0 / off
    return a, d


def _check_inside(x, lo, hi):
    if not np.all((x > lo) & (x < hi)):
        raise ValueError("constrained kernel needs points strictly inside the bounds")


def imq_kernel(x, y, config: KernelConfig | None = None):
    """IMQ value and partials ``(k, d_x k, d_y k, d_x d_y k)`` at one pair."""
    config = config or KernelConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("points must have the same dimension")
    diff = x - y
    k, gx, gy, gxy = _imq_parts(diff, np.dot(diff, diff), config.c, config.beta)
    return float(k), gx, gy, gxy


def constrained_kernel(x, y, config: KernelConfig):
    """Boundary-respecting kernel ``k(x, y) a(x) a(y)`` and its partials."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    k, gx, gy, gxy = imq_kernel(x, y, config)
    bounds = config.bounds(x.size)
    if bounds is None:
        return k, gx, gy, gxy
    lo, hi = bounds
    _check_inside(x, lo, hi)
    _check_inside(y, lo, hi)
    ax, dx = _boundary_factor(x, lo, hi)
    ay, dy = _boundary_factor(y, lo, hi)
    s = float(ax * ay)
    return (
        k * s,
        s * (gx + k * dx),
        s * (gy + k * dy),
        s * (gxy + gx * dy + gy * dx + k * dx * dy),
    )


def stein_gram_block(X, Y, UX, UY, config: KernelConfig, bounds=None) -> np.ndarray:
    """Stein kernel values ``k0_j(X[a], Y[b])`` as an array of shape ``(len(X), len(Y), p)``."""
    diff = X[:, None, :] - Y[None, :, :]
    r2 = np.einsum("abj,abj->ab", diff, diff)
    k, gx, gy, gxy = _imq_parts(diff, r2, config.c, config.beta)
    k = k[..., None]
    if bounds is not None:
        lo, hi = bounds
        ax, dx = _boundary_factor(X, lo, hi)
        ay, dy = _boundary_factor(Y, lo, hi)
        dx = dx[:, None, :]
        dy = dy[None, :, :]
        s = (ax[:, None] * ay[None, :])[..., None]
        gxy = s * (gxy + gx * dy + gy * dx + k * dx * dy)
        gx, gy = s * (gx + k * dx), s * (gy + k * dy)
        k = s * k
    ux = UX[:, None, :]
    uy = UY[None, :, :]
    return ux * uy * k + ux * gy + uy * gx + gxy


def stein_kernel_j(x, y, j: int, score, config: KernelConfig | None = None) -> float:
    """One coordinate of the Stein kernel at a single pair.

    ``score`` is a callable ``theta -> u(theta)`` or a pair ``(u(x), u(y))``.
    """
    config = config or KernelConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if callable(score):
        ux, uy = np.atleast_1d(score(x)), np.atleast_1d(score(y))
    else:
        ux, uy = (np.atleast_1d(np.asarray(s, dtype=float)) for s in score)
    k, gx, gy, gxy = constrained_kernel(x, y, config)
    return float(ux[j] * uy[j] * k + ux[j] * gy[j] + uy[j] * gx[j] + gxy[j])


# ---------------------------------------------------------------------------
# discrepancies


def _block_edges(n: int, size: int, extra=()) -> np.ndarray:
    edges = set(range(0, n, size)) | {n} | {int(e) for e in extra}
    return np.array(sorted(edges))


def _block_sums(points, scores, weights, edges, config, bounds):
    """``G[a, b, j] = sum_{k in I_a, l in I_b} q_k q_l k0_j`` for ``a <= b``."""
    nb = len(edges) - 1
    p = points.shape[1]
    pairs = [(a, b) for a in range(nb) for b in range(a, nb)]

    def work(pair):
        a, b = pair
        sa = slice(edges[a], edges[a + 1])
        sb = slice(edges[b], edges[b + 1])
        blk = stein_gram_block(points[sa], points[sb], scores[sa], scores[sb], config, bounds)
        if weights is None:
            return blk.sum(axis=(0, 1))
        return np.einsum("a,abj,b->j", weights[sa], blk, weights[sb])

    if config.workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            partial = list(pool.map(work, pairs))
    else:
        partial = [work(pr) for pr in pairs]
    G = np.zeros((nb, nb, p))
    for (a, b), v in zip(pairs, partial):
        G[a, b] = v
    return G


def _symmetric_total(G, upto: int) -> np.ndarray:
    """Full double sum over blocks ``< upto`` from the upper-triangular block sums."""
    total = np.zeros(G.shape[-1])
    for a in range(upto):
        total = total + G[a, a]
        for b in range(a + 1, upto):
            total = total + 2.0 * G[a, b]
    return total


def _finish(radicands: np.ndarray, norm_p: float) -> KSDResult:
    if np.any(radicands < -NEGATIVE_RADICAND_TOL):
        raise ValueError(
            f"negative Stein Gram radicand {radicands.min():.3e}; score and kernel are inconsistent"
        )
    w = np.sqrt(np.clip(radicands, 0.0, None))
    value = float(np.max(w)) if np.isinf(norm_p) else float(np.sum(w**norm_p) ** (1.0 / norm_p))
    return KSDResult(value, w, radicands)


def _resolve_scores(points, score) -> np.ndarray:
    if callable(score):
        return np.atleast_2d(np.asarray(score(points), dtype=float)).reshape(points.shape)
    s = np.asarray(score, dtype=float)
    return s.reshape(points.shape)


def ksd(chain, score, config: KernelConfig | None = None, weights=None) -> KSDResult:
    """IMQ KSD of a weighted sample.

    ``chain`` is a :class:`~ncdiag.samplers.SampleChain` or an ``(n, p)`` array.
    ``score`` is a callable evaluated on an ``(m, p)`` array of points, or an
    array of scores aligned with the chain rows. Repeated points are merged
    with summed weights before the Gram evaluation.
    """
    config = config or KernelConfig()
    points = np.asarray(getattr(chain, "points", chain), dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if len(points) == 0:
        raise ValueError("chain is empty")
    if hasattr(chain, "lower"):
        config = config.with_support(chain.lower, chain.upper)
    if weights is None:
        weights = getattr(chain, "weights", None)
    q = np.full(len(points), 1.0 / len(points)) if weights is None else np.asarray(weights, dtype=float)
    uniq, inverse = unique_points(points)
    qu = np.bincount(inverse, weights=q, minlength=len(uniq))
    if callable(score):
        su = _resolve_scores(uniq, score)
    else:
        full = _resolve_scores(points, score)
        first = np.full(len(uniq), -1)
        for i, j in enumerate(inverse):
            if first[j] < 0:
                first[j] = i
        su = full[first]
    bounds = config.bounds(points.shape[1])
    if bounds is not None:
        _check_inside(uniq, *bounds)
    edges = _block_edges(len(uniq), config.block_size)
    G = _block_sums(uniq, su, qu, edges, config, bounds)
    return _finish(_symmetric_total(G, len(edges) - 1), config.norm_p)


def aiks(chain, estimates: dict[str, PointEstimates], config: KernelConfig | None = None) -> KSDResult:
    """KSD with the Monte Carlo score ``u_hat`` from ``estimates`` at each chain point."""
    points = np.asarray(getattr(chain, "points", chain), dtype=float)
    u_hat, _, _ = chain_estimate_arrays(points, estimates)
    return ksd(chain, u_hat, config)


def ksd_trace(chain, score, prefixes, config: KernelConfig | None = None) -> list[KSDResult]:
    """KSD of every uniformly weighted prefix ``chain[:n]`` from one tiled pass."""
    config = config or KernelConfig()
    points = np.asarray(getattr(chain, "points", chain), dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if hasattr(chain, "lower"):
        config = config.with_support(chain.lower, chain.upper)
    n = len(points)
    prefixes = [int(m) for m in prefixes]
    if any(m < 1 or m > n for m in prefixes):
        raise ValueError(f"prefix lengths must lie in 1..{n}")
    last = max(prefixes)
    points = points[:last]
    scores = _resolve_scores(points, score) if callable(score) else _resolve_scores(np.asarray(getattr(chain, "points", chain), float), score)[:last]
    bounds = config.bounds(points.shape[1])
    if bounds is not None:
        _check_inside(points, *bounds)
    edges = _block_edges(last, config.block_size, prefixes)
    G = _block_sums(points, scores, None, edges, config, bounds)
    out = []
    for m in prefixes:
        upto = int(np.searchsorted(edges, m))
        out.append(_finish(_symmetric_total(G, upto) / (m * m), config.norm_p))
    return out
