"""Two-stage Monte Carlo estimates of the posterior score, Hessian and outer product.

At each parameter value two independent sets of ``N`` auxiliary draws from
``f(. | theta)`` are summarized into an :class:`AuxBatch`. From those sums:

* ``approx_log_c_grad``  -- pooled 2N mean of ``grad log h(y | theta)``
* ``approx_posterior_score`` -- ``grad log p + grad log h(x | .) - approx_log_c_grad``
* ``approx_H`` -- unbiased estimate of the log-posterior Hessian
* ``approx_J`` -- unbiased estimate of ``u u^T``

Seeding: the draws for a point ``theta`` come from
``SeedSequence(seed, spawn_key=words(theta))`` where ``words`` are the uint32
words of the float64 coordinates; set A and set B are its first two spawned
children. Estimates therefore depend only on ``(model, data, theta, N, seed)``
and never on chain order or worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import AuxSums, Model

__all__ = [
    "AuxBatch",
    "PointEstimates",
    "EstimationError",
    "point_key",
    "point_seed",
    "generate_aux_batch",
    "approx_log_c_grad",
    "approx_posterior_score",
    "approx_H",
    "approx_J",
    "estimate_point",
    "estimate_chain",
    "unique_points",
]

logger = logging.getLogger(__name__)

DEFAULT_AUX_BURN_IN = 500


class EstimationError(RuntimeError):
    """One or more chain points failed; ``failures`` maps point index to message."""

    def __init__(self, failures: dict[int, str]):
        self.failures = failures
        lines = "; ".join(f"point {i}: {msg}" for i, msg in sorted(failures.items()))
        super().__init__(f"{len(failures)} point(s) failed: {lines}")


@dataclass
class AuxBatch:
    theta: np.ndarray
    N: int
    set_a: AuxSums
    set_b: AuxSums
    seed_a: tuple
    seed_b: tuple

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("auxiliary batch is empty")
        if self.set_a.count != self.N or self.set_b.count != self.N:
            raise ValueError("both auxiliary sets must hold N draws")
        if self.seed_a == self.seed_b:
            raise ValueError("auxiliary sets A and B must come from independent seeds")
        for s in (self.set_a, self.set_b):
            if not (np.allclose(s.hess, s.hess.T) and np.allclose(s.outer, s.outer.T)):
                raise ValueError("accumulated auxiliary matrices must be symmetric")

    @property
    def mean_a(self) -> np.ndarray:
        return self.set_a.grad / self.N

    @property
    def mean_b(self) -> np.ndarray:
        return self.set_b.grad / self.N


@dataclass
class PointEstimates:
    u_hat: np.ndarray
    H_hat: np.ndarray
    J_hat: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.u_hat)):
            raise ValueError("approximate score is not finite")

    def to_json(self) -> dict:
        return {"u_hat": self.u_hat.tolist(), "H_hat": self.H_hat.tolist(), "J_hat": self.J_hat.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "PointEstimates":
        return cls(np.asarray(obj["u_hat"], float), np.asarray(obj["H_hat"], float), np.asarray(obj["J_hat"], float))


def point_key(theta) -> str:
    """Exact, order-preserving text key of a parameter point."""
    return ",".join(float(v).hex() for v in np.ravel(theta))


def point_seed(seed: int, theta) -> np.random.SeedSequence:
    words = np.ascontiguousarray(np.ravel(theta), dtype=np.float64).view(np.uint32)
    return np.random.SeedSequence(seed, spawn_key=tuple(int(w) for w in words))


def generate_aux_batch(
    model: Model,
    theta,
    data,
    N: int,
    seed: int | np.random.SeedSequence,
    burn_in: int = DEFAULT_AUX_BURN_IN,
) -> AuxBatch:
    """Draw the two independent auxiliary sets at ``theta``.

    Each set is its own chain started at the observed data, with ``burn_in``
    discarded cycles and no thinning.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    ss = seed if isinstance(seed, np.random.SeedSequence) else point_seed(seed, theta)
    ss_a, ss_b = ss.spawn(2)
    sums = [
        model.aux_sums(theta, N, np.random.default_rng(s), data, burn_in)
        for s in (ss_a, ss_b)
    ]
    prov = [(s.entropy, tuple(s.spawn_key)) for s in (ss_a, ss_b)]
    return AuxBatch(theta, N, sums[0], sums[1], prov[0], prov[1])


def _observed_part(theta, data, model: Model) -> np.ndarray:
    return model.grad_log_prior(theta) + model.grad_log_h(data, theta)


def approx_log_c_grad(batch: AuxBatch) -> np.ndarray:
    """Pooled mean of ``grad log h(y | theta)`` over all 2N auxiliary draws."""
    return (batch.set_a.grad + batch.set_b.grad) / (2 * batch.N)


def approx_posterior_score(theta, data, model: Model, batch: AuxBatch) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not model.in_support(theta):
        raise ValueError(f"theta={theta} is not interior to the support")
    return _observed_part(theta, data, model) - approx_log_c_grad(batch)


def approx_H(theta, data, model: Model, batch: AuxBatch) -> np.ndarray:
    """Unbiased estimate of the log-posterior Hessian, symmetrized.

    prior Hessian + data Hessian - pooled mean auxiliary Hessian
    - pooled mean auxiliary grad outer product + (mean_A)(mean_B)^T.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n2 = 2 * batch.N
    m = (
        model.hess_log_prior(theta)
        + model.hess_log_h(data, theta)
        - (batch.set_a.hess + batch.set_b.hess) / n2
        - (batch.set_a.outer + batch.set_b.outer) / n2
        + np.outer(batch.mean_a, batch.mean_b)
    )
    return 0.5 * (m + m.T)


def approx_J(theta, data, model: Model, batch: AuxBatch) -> np.ndarray:
    """Unbiased estimate of ``u u^T``, symmetrized.

    With ``g = grad log p + grad log h(x | .)`` and set means ``a``, ``b``:
    ``g g^T - g b^T - a g^T + a b^T``, i.e. ``(g - a)(g - b)^T``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    g = _observed_part(theta, data, model)
    a, b = batch.mean_a, batch.mean_b
    m = np.outer(g, g) - np.outer(g, b) - np.outer(a, g) + np.outer(a, b)
    return 0.5 * (m + m.T)


def estimate_point(
    model: Model, theta, data, N: int, seed: int, burn_in: int = DEFAULT_AUX_BURN_IN
) -> PointEstimates:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not model.in_support(theta):
        raise ValueError(f"theta={theta} is not interior to the support")
    batch = generate_aux_batch(model, theta, data, N, seed, burn_in)
    return PointEstimates(
        approx_posterior_score(theta, data, model, batch),
        approx_H(theta, data, model, batch),
        approx_J(theta, data, model, batch),
    )


def unique_points(points) -> tuple[np.ndarray, np.ndarray]:
    """Unique rows in order of first appearance, and the row -> unique index map."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    index: dict[bytes, int] = {}
    inverse = np.empty(pts.shape[0], dtype=np.int64)
    first = []
    for i, row in enumerate(pts):
        k = row.tobytes()
        j = index.get(k)
        if j is None:
            j = index[k] = len(first)
            first.append(i)
        inverse[i] = j
    return pts[first], inverse


def _estimate_many(args):
    model, thetas, data, N, seed, burn_in = args
    out = []
    for theta in thetas:
        try:
            out.append(estimate_point(model, theta, data, N, seed, burn_in))
        except Exception as exc:  # reported per point by the caller
            out.append(exc)
    return out


def estimate_chain(
    chain,
    data,
    model: Model,
    N: int,
    seed: int,
    workers: int = 1,
    burn_in: int = DEFAULT_AUX_BURN_IN,
    cache: dict | None = None,
    chunk_size: int = 64,
) -> dict[str, PointEstimates]:
    """Estimates at every unique chain point, keyed by :func:`point_key`.

    ``cache`` (a dict keyed like the result) is consulted first and updated
    in place. Results do not depend on ``workers``.
    """
    points = chain.points if hasattr(chain, "points") else np.atleast_2d(chain)
    if len(points) == 0:
        raise ValueError("chain is empty")
    data = model.validate_data(data)
    uniq, inverse = unique_points(points)
    first_index = np.full(len(uniq), -1)
    for i, j in enumerate(inverse):
        if first_index[j] < 0:
            first_index[j] = i
    keys = [point_key(t) for t in uniq]
    cache = {} if cache is None else cache
    todo = [j for j, k in enumerate(keys) if k not in cache]
    logger.info("estimating %d of %d unique points (N=%d)", len(todo), len(uniq), N)
    chunks = [todo[i : i + chunk_size] for i in range(0, len(todo), chunk_size)]
    jobs = [(model, uniq[c], data, N, seed, burn_in) for c in chunks]
    workers = max(1, int(workers or 1))
    if workers == 1 or len(jobs) <= 1:
        results = [_estimate_many(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_estimate_many, jobs))
    failures = {}
    for c, res in zip(chunks, results):
        for j, est in zip(c, res):
            if isinstance(est, Exception):
                failures[int(first_index[j])] = str(est)
            else:
                cache[keys[j]] = est
    if failures:
        raise EstimationError(failures)
    return {k: cache[k] for k in keys}
