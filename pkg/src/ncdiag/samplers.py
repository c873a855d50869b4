"""Posterior and model samplers.

Chains are produced by :func:`run_sampler` from a :class:`SamplerConfig`:

* ``gibbs_posterior`` -- conjugate two-block Gibbs for the Gaussian toy model.
* ``mh`` -- random-walk Metropolis-Hastings on a tractable posterior.
* ``exchange`` -- exchange algorithm with exact auxiliary draws.
* ``dmh`` -- double Metropolis-Hastings, ``m`` inner update cycles started
  from the observed data.

Random streams: a chain with seed ``s`` draws from
``Generator(PCG64(SeedSequence(s)))``; chain ``i`` of a multi-chain run uses
``SeedSequence(s, spawn_key=(i,))``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _jit
from .model import GaussianModel, Model, ParamVector

__all__ = [
    "SamplerConfig",
    "SampleChain",
    "CFTPError",
    "chain_rng",
    "ising_gibbs_sweep",
    "ising_cftp",
    "dmh_step",
    "exchange_step",
    "mh_step",
    "gaussian_posterior_gibbs",
    "run_sampler",
]

KINDS = ("gibbs_posterior", "mh", "exchange", "dmh")


class CFTPError(RuntimeError):
    """Coupling from the past did not coalesce within the allowed horizon."""


@dataclass
class SamplerConfig:
    kind: str
    iterations: int
    inner_updates: int = 1
    proposal_scale: tuple = (0.1,)
    seed: int = 0
    thinning: int = 1
    burn_in: int = 0
    init: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"sampler kind must be one of {KINDS}, got {self.kind!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.kind == "dmh" and self.inner_updates < 1:
            raise ValueError("DMH needs inner_updates >= 1")
        if self.thinning < 1 or self.burn_in < 0:
            raise ValueError("thinning must be >= 1 and burn_in >= 0")
        self.proposal_scale = tuple(float(v) for v in np.atleast_1d(self.proposal_scale))
        if any(v <= 0 for v in self.proposal_scale):
            raise ValueError("proposal_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SampleChain:
    """An ordered sequence of parameter draws with probability weights."""

    points: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 1:
            raise ValueError("a chain needs at least one point")
        self.points = pts
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), pts.shape[1:]).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), pts.shape[1:]).copy()
        if not np.all((pts > self.lower) & (pts < self.upper)):
            raise ValueError("chain contains points outside the parameter support")
        if self.weights is None:
            self.weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative, one per point, and sum to 1")
        self.weights = w

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def prefix(self, n: int) -> "SampleChain":
        """The first ``n`` points with uniform weights."""
        if not 1 <= n <= len(self):
            raise ValueError(f"prefix length {n} outside 1..{len(self)}")
        return SampleChain(self.points[:n], self.lower, self.upper, None, dict(self.meta))

    def param(self, i: int) -> ParamVector:
        return ParamVector(self.points[i], self.lower, self.upper)


def chain_rng(seed: int, chain_index: int | None = None) -> np.random.Generator:
    if chain_index is None:
        return np.random.default_rng(np.random.SeedSequence(seed))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain_index,)))


# ---------------------------------------------------------------------------
# Ising lattice samplers


def ising_gibbs_sweep(state, theta: float, rng: np.random.Generator) -> np.ndarray:
    """One raster-order heat-bath sweep; returns a new lattice."""
    x = np.array(state, dtype=np.int64)
    _jit.ising_sweeps(x, float(theta), rng.random((1, x.size)))
    return x


def ising_cftp(
    theta: float,
    dims,
    seed,
    growth: int = 2,
    max_sweeps: int = 1 << 20,
) -> np.ndarray:
    """Exact Ising draw by monotone coupling from the past.

    The all-up and all-down chains are started at time ``-T`` and run to 0 on
    shared uniforms. Uniforms for a given time step are reused across restarts;
    ``T`` grows by ``growth`` until the chains coalesce.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if theta < 0:
        raise ValueError("monotone CFTP needs theta >= 0")
    if growth < 2:
        raise ValueError("growth factor must be >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r, s = (int(d) for d in dims)
    sites = r * s
    # row k holds the uniforms for the sweep at time -(k + 1)
    uniforms = np.empty((0, sites))
    horizon = 1
    while True:
        if horizon > max_sweeps:
            raise CFTPError(f"no coalescence within {max_sweeps} sweeps at theta={theta}")
        if uniforms.shape[0] < horizon:
            fresh = rng.random((horizon - uniforms.shape[0], sites))
            uniforms = np.concatenate([uniforms, fresh])
        top = np.ones((r, s), dtype=np.int64)
        bottom = -np.ones((r, s), dtype=np.int64)
        schedule = np.ascontiguousarray(uniforms[:horizon][::-1])
        if _jit.ising_bounding_pair(top, bottom, float(theta), schedule):
            return top
        horizon *= growth


# ---------------------------------------------------------------------------
# parameter-space Metropolis steps


def _propose(current: np.ndarray, scale: np.ndarray, rng) -> np.ndarray:
    return current + scale * rng.standard_normal(current.size)


def _log_exchange_ratio(model: Model, data, y, current, proposal) -> float:
    return (
        model.log_prior(proposal)
        + model.log_h(data, proposal)
        + model.log_h(y, current)
        - model.log_prior(current)
        - model.log_h(data, current)
        - model.log_h(y, proposal)
    )


def _as_values(current) -> np.ndarray:
    if isinstance(current, ParamVector):
        return current.values
    return np.atleast_1d(np.asarray(current, dtype=float))


def dmh_step(current, data, model: Model, m: int, rng, proposal_scale=0.1):
    """One double Metropolis-Hastings step; returns ``(next_point, accepted)``.

    The auxiliary ``y`` comes from ``m`` inner update cycles at the proposal,
    started from the observed data. Proposals outside the support are rejected.
    """
    theta = _as_values(current)
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), theta.shape)
    prop = _propose(theta, scale, rng)
    if not model.in_support(prop):
        return theta, False
    y = model.inner_sample(data, prop, m, rng)
    log_r = _log_exchange_ratio(model, data, y, theta, prop)
    if log_r >= 0 or math.log(rng.random()) < log_r:
        return prop, True
    return theta, False


def exchange_step(current, data, model: Model, exact_sampler, rng, proposal_scale=0.1):
    """One exchange-algorithm step with ``y = exact_sampler(theta', rng)``."""
    theta = _as_values(current)
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), theta.shape)
    prop = _propose(theta, scale, rng)
    if not model.in_support(prop):
        return theta, False
    y = exact_sampler(prop, rng)
    log_r = _log_exchange_ratio(model, data, y, theta, prop)
    if log_r >= 0 or math.log(rng.random()) < log_r:
        return prop, True
    return theta, False


def mh_step(current, log_target, support_check, rng, proposal_scale=0.1):
    """Random-walk Metropolis on an explicitly evaluable log posterior."""
    theta = _as_values(current)
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), theta.shape)
    prop = _propose(theta, scale, rng)
    if not support_check(prop):
        return theta, False
    log_r = log_target(prop) - log_target(theta)
    if log_r >= 0 or math.log(rng.random()) < log_r:
        return prop, True
    return theta, False


# ---------------------------------------------------------------------------
# conjugate Gibbs for the Gaussian toy model


def gaussian_posterior_gibbs(
    data,
    n: int,
    seed,
    mu0: float = 0.0,
    tau0_sq: float = 100.0,
    a: float = 0.001,
    b: float = 0.001,
    init=None,
) -> SampleChain:
    """Two-block Gibbs: ``mu | sigma2, x`` Normal, ``sigma2 | mu, x`` inverse gamma."""
    x = np.asarray(data, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("data must be nonempty")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else chain_rng(seed)
    nx, xsum = x.size, x.sum()
    if init is None:
        sigma2 = float(x.var()) if nx > 1 and x.var() > 0 else 1.0
    else:
        sigma2 = float(init[1])
    out = np.empty((n, 2))
    shape = a + nx / 2.0
    for t in range(n):
        prec = 1.0 / tau0_sq + nx / sigma2
        mean = (mu0 / tau0_sq + xsum / sigma2) / prec
        mu = mean + rng.standard_normal() / math.sqrt(prec)
        resid = x - mu
        rate = b + 0.5 * np.dot(resid, resid)
        sigma2 = rate / rng.standard_gamma(shape)
        out[t] = mu, sigma2
    model = GaussianModel(mu0, tau0_sq, a, b)
    return SampleChain(out, model.lower, model.upper)


# ---------------------------------------------------------------------------
# chain driver


def run_sampler(model: Model, data, config: SamplerConfig, exact_sampler=None, log_target=None) -> SampleChain:
    """Generate a chain for ``model`` given observed ``data``.

    ``exact_sampler(theta, rng)`` is needed for ``exchange`` (defaults to the
    model's own exact sampler); ``log_target(theta)`` for ``mh``.
    """
    data = model.validate_data(data)
    rng = chain_rng(config.seed)
    started = time.perf_counter()
    if config.kind == "gibbs_posterior":
        if not isinstance(model, GaussianModel):
            raise ValueError("gibbs_posterior is only available for the Gaussian model")
        total = config.burn_in + config.iterations * config.thinning
        chain = gaussian_posterior_gibbs(
            data, total, rng, model.mu0, model.tau0_sq, model.a, model.b
        )
        pts = chain.points[config.burn_in :: config.thinning][: config.iterations]
        accept_rate = 1.0
    else:
        if config.init is not None:
            theta = np.asarray(config.init, dtype=float)
        else:
            theta = _default_init(model, data)
        if not model.in_support(theta):
            raise ValueError(f"initial value {theta} outside support")
        scale = np.broadcast_to(np.asarray(config.proposal_scale, dtype=float), theta.shape)
        if config.kind == "exchange":
            if exact_sampler is None:
                exact_sampler = lambda t, g: model.exact_sample(t, g, data)  # noqa: E731
            step = lambda th: exchange_step(th, data, model, exact_sampler, rng, scale)  # noqa: E731
        elif config.kind == "dmh":
            step = lambda th: dmh_step(th, data, model, config.inner_updates, rng, scale)  # noqa: E731
        else:
            if log_target is None:
                raise ValueError("mh needs an explicit log_target")
            step = lambda th: mh_step(th, log_target, model.in_support, rng, scale)  # noqa: E731
        total = config.burn_in + config.iterations * config.thinning
        pts = np.empty((config.iterations, theta.size))
        accepted = 0
        k = 0
        for t in range(total):
            theta, acc = step(theta)
            accepted += acc
            if t >= config.burn_in and (t - config.burn_in) % config.thinning == 0:
                pts[k] = theta
                k += 1
        accept_rate = accepted / total
    meta = {
        "sampler": config.to_dict(),
        "model": model.name,
        "model_config": model.config(),
        "acceptance_rate": accept_rate,
        "wall_clock_s": time.perf_counter() - started,
    }
    return SampleChain(pts, model.lower, model.upper, None, meta)


def _default_init(model: Model, data) -> np.ndarray:
    if isinstance(model, GaussianModel):
        x = np.asarray(data, dtype=float)
        return np.array([x.mean(), max(x.var(), 1e-3)])
    lo = np.where(np.isfinite(model.lower), model.lower, -1.0)
    hi = np.where(np.isfinite(model.upper), model.upper, 1.0)
    return 0.5 * (lo + hi)
