"""Probability models with (possibly) intractable normalizing functions.

A model splits its likelihood as ``h(x | theta) / c(theta)``. Everything the
diagnostics need is exposed here: ``log h`` and its first two
theta-derivatives, the prior and its derivatives, and auxiliary sampling from
``f(. | theta) = h(. | theta) / c(theta)``.

Three models ship with the package:

* :class:`GaussianModel` -- iid ``N(mu, sigma2)`` with ``h`` the Gaussian
  kernel, so ``c(theta) = (2 pi sigma2)^{n/2}`` is known in closed form.
* :class:`IsingModel` -- free-boundary Ising lattice, ``log h = theta S(x)``.
* :class:`ErgmModel` -- undirected ERGM with edge count and GWESP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _jit

__all__ = [
    "ParamVector",
    "AuxSums",
    "Model",
    "ExponentialFamilyModel",
    "GaussianModel",
    "IsingModel",
    "ErgmModel",
    "ising_statistic",
    "ergm_statistics",
    "gwesp_weights",
    "gaussian_log_h",
    "get_model",
    "data_to_json",
    "data_from_json",
]


@dataclass(frozen=True)
class ParamVector:
    """A parameter point together with its box support.

    Bounds may be infinite. Values must lie strictly inside the support.
    """

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), values.shape).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), values.shape).copy()
        if values.ndim != 1 or values.size < 1:
            raise ValueError("a parameter vector needs at least one coordinate")
        if np.any(lower >= upper):
            raise ValueError(f"empty support interval: lower={lower}, upper={upper}")
        if not np.all((values > lower) & (values < upper)):
            raise ValueError(f"{values} is not strictly inside the support [{lower}, {upper}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass
class AuxSums:
    """Per-set sums over auxiliary draws: gradient, Hessian and grad outer product."""

    count: int
    grad: np.ndarray
    hess: np.ndarray
    outer: np.ndarray


def _pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Sum over the leading axis with numpy's pairwise reduction.

    numpy only sums pairwise along a contiguous last axis, so the draws are
    moved there first.
    """
    moved = np.ascontiguousarray(np.moveaxis(values, 0, -1))
    return moved.sum(axis=-1)


class Model:
    """Base class for a model ``f(x | theta) = h(x | theta) / c(theta)`` with a prior.

    Subclasses implement ``log_h``, ``grad_log_h``, ``hess_log_h``, the prior
    hooks and ``inner_sample``. ``aux_sums`` has a generic implementation built
    on ``aux_states``; concrete models override it with vectorized paths.
    """

    name: str = "model"
    param_dim: int = 1
    is_exponential_family: bool = False

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).reshape(self.param_dim)
        self.upper = np.asarray(upper, dtype=float).reshape(self.param_dim)
        if np.any(self.lower >= self.upper):
            raise ValueError("empty parameter support")

    # -- parameter space -------------------------------------------------
    def param(self, values) -> ParamVector:
        return ParamVector(values, self.lower, self.upper)

    def in_support(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all((theta > self.lower) & (theta < self.upper)))

    def config(self) -> dict:
        """JSON-able constructor arguments (used for cache keys and manifests)."""
        return {}

    # -- unnormalized likelihood ----------------------------------------
    def log_h(self, data, theta) -> float:
        raise NotImplementedError

    def grad_log_h(self, data, theta) -> np.ndarray:
        raise NotImplementedError

    def hess_log_h(self, data, theta) -> np.ndarray:
        raise NotImplementedError

    # -- prior -------------------------------------------------------------
    def log_prior(self, theta) -> float:
        raise NotImplementedError

    def grad_log_prior(self, theta) -> np.ndarray:
        raise NotImplementedError

    def hess_log_prior(self, theta) -> np.ndarray:
        raise NotImplementedError

    # -- data ----------------------------------------------------------------
    def validate_data(self, data):
        return data

    # -- sampling ------------------------------------------------------------
    def inner_sample(self, state, theta, cycles: int, rng: np.random.Generator):
        """Run ``cycles`` update cycles targeting ``f(. | theta)`` from ``state``."""
        raise NotImplementedError

    def exact_sample(self, theta, rng: np.random.Generator, like):
        """One exact draw from ``f(. | theta)`` shaped like ``like``."""
        raise NotImplementedError(f"{self.name} has no exact sampler")

    def aux_states(
        self, theta, count: int, rng: np.random.Generator, start, burn_in: int = 0
    ) -> Iterator:
        """Yield ``count`` successive auxiliary states after ``burn_in`` cycles."""
        state = self.inner_sample(start, theta, burn_in, rng) if burn_in else start
        for _ in range(count):
            state = self.inner_sample(state, theta, 1, rng)
            yield state

    def aux_sums(
        self, theta, count: int, rng: np.random.Generator, start, burn_in: int = 0
    ) -> AuxSums:
        grads, hessians = [], []
        for y in self.aux_states(theta, count, rng, start, burn_in):
            grads.append(self.grad_log_h(y, theta))
            hessians.append(self.hess_log_h(y, theta))
        g = np.array(grads)
        return AuxSums(
            count,
            _pairwise_sum(g),
            _pairwise_sum(np.array(hessians)),
            _pairwise_sum(g[:, :, None] * g[:, None, :]),
        )


class ExponentialFamilyModel(Model):
    """``log h(x | theta) = theta . S(x)``: gradient is S(x), Hessian vanishes."""

    is_exponential_family = True

    def statistic(self, data) -> np.ndarray:
        raise NotImplementedError

    def log_h(self, data, theta) -> float:
        return float(np.dot(np.asarray(theta, dtype=float), self.statistic(data)))

    def grad_log_h(self, data, theta) -> np.ndarray:
        return np.asarray(self.statistic(data), dtype=float)

    def hess_log_h(self, data, theta) -> np.ndarray:
        return np.zeros((self.param_dim, self.param_dim))

    # uniform box prior
    def log_prior(self, theta) -> float:
        if not self.in_support(theta):
            return -math.inf
        return -float(np.sum(np.log(self.upper - self.lower)))

    def grad_log_prior(self, theta) -> np.ndarray:
        return np.zeros(self.param_dim)

    def hess_log_prior(self, theta) -> np.ndarray:
        return np.zeros((self.param_dim, self.param_dim))

    def aux_statistics(
        self, theta, count: int, rng: np.random.Generator, start, burn_in: int = 0
    ) -> np.ndarray:
        """Sufficient statistics of ``count`` auxiliary draws, shape ``(count, p)``."""
        raise NotImplementedError

    def aux_sums(self, theta, count, rng, start, burn_in=0) -> AuxSums:
        s = self.aux_statistics(theta, count, rng, start, burn_in)
        return AuxSums(
            count,
            _pairwise_sum(s),
            np.zeros((self.param_dim, self.param_dim)),
            _pairwise_sum(s[:, :, None] * s[:, None, :]),
        )


# ---------------------------------------------------------------------------
# Gaussian toy model


def gaussian_log_h(data, theta) -> float:
    """``-sum (x_i - mu)^2 / (2 sigma2)`` for ``theta = (mu, sigma2)``."""
    mu, sigma2 = float(theta[0]), float(theta[1])
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    x = np.asarray(data, dtype=float)
    return float(-np.sum((x - mu) ** 2) / (2.0 * sigma2))


class GaussianModel(Model):
    """iid ``N(mu, sigma2)`` data, ``mu ~ N(mu0, tau0_sq)``, ``sigma2 ~ IG(a, b)``.

    The normalizer ``(2 pi sigma2)^{n/2}`` is treated as unknown by the
    approximate diagnostics and as known by the oracle. Auxiliary draws are
    exact: only the two sufficient statistics ``sum(y - mu)`` and
    ``sum (y - mu)^2`` enter the derivatives, and those are drawn directly.
    """

    name = "gaussian"
    param_dim = 2

    def __init__(self, mu0: float = 0.0, tau0_sq: float = 100.0, a: float = 0.001, b: float = 0.001):
        super().__init__([-np.inf, 0.0], [np.inf, np.inf])
        if tau0_sq <= 0 or a <= 0 or b <= 0:
            raise ValueError("prior scale parameters must be positive")
        self.mu0, self.tau0_sq, self.a, self.b = float(mu0), float(tau0_sq), float(a), float(b)

    def config(self):
        return {"mu0": self.mu0, "tau0_sq": self.tau0_sq, "a": self.a, "b": self.b}

    @staticmethod
    def _split(theta):
        mu, sigma2 = float(theta[0]), float(theta[1])
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        return mu, sigma2

    def validate_data(self, data):
        x = np.asarray(data, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("Gaussian data must be nonempty")
        return x

    @staticmethod
    def _grad_from_sums(n, s1, s2, sigma2):
        return np.array([s1 / sigma2, s2 / (2.0 * sigma2**2)])

    @staticmethod
    def _hess_from_sums(n, s1, s2, sigma2):
        return np.array(
            [
                [-n / sigma2, -s1 / sigma2**2],
                [-s1 / sigma2**2, -s2 / sigma2**3],
            ]
        )

    def log_h(self, data, theta):
        return gaussian_log_h(data, theta)

    def grad_log_h(self, data, theta):
        mu, sigma2 = self._split(theta)
        d = np.asarray(data, dtype=float) - mu
        return self._grad_from_sums(d.size, d.sum(), np.dot(d, d), sigma2)

    def hess_log_h(self, data, theta):
        mu, sigma2 = self._split(theta)
        d = np.asarray(data, dtype=float) - mu
        return self._hess_from_sums(d.size, d.sum(), np.dot(d, d), sigma2)

    def log_prior(self, theta):
        mu, sigma2 = float(theta[0]), float(theta[1])
        if sigma2 <= 0:
            return -math.inf
        lp_mu = -0.5 * (mu - self.mu0) ** 2 / self.tau0_sq - 0.5 * math.log(2 * math.pi * self.tau0_sq)
        lp_s = (
            self.a * math.log(self.b)
            - math.lgamma(self.a)
            - (self.a + 1.0) * math.log(sigma2)
            - self.b / sigma2
        )
        return lp_mu + lp_s

    def grad_log_prior(self, theta):
        mu, sigma2 = self._split(theta)
        return np.array(
            [-(mu - self.mu0) / self.tau0_sq, -(self.a + 1.0) / sigma2 + self.b / sigma2**2]
        )

    def hess_log_prior(self, theta):
        mu, sigma2 = self._split(theta)
        return np.array(
            [
                [-1.0 / self.tau0_sq, 0.0],
                [0.0, (self.a + 1.0) / sigma2**2 - 2.0 * self.b / sigma2**3],
            ]
        )

    def exact_sample(self, theta, rng, like):
        mu, sigma2 = self._split(theta)
        return mu + math.sqrt(sigma2) * rng.standard_normal(np.shape(like))

    def inner_sample(self, state, theta, cycles, rng):
        # exact draws mix in one cycle
        if cycles <= 0:
            return state
        return self.exact_sample(theta, rng, state)

    def aux_sums(self, theta, count, rng, start, burn_in=0):
        if count < 1:
            raise ValueError("need at least one auxiliary draw")
        mu, sigma2 = self._split(theta)
        n = np.size(start)
        # sum(y - mu) = sigma sqrt(n) z and sum(y - mu)^2 = sigma2 (q + z^2), q ~ chi2_{n-1}
        z = rng.standard_normal(count)
        q = 2.0 * rng.standard_gamma((n - 1) / 2.0, count) if n > 1 else np.zeros(count)
        s1 = math.sqrt(sigma2 * n) * z
        s2 = sigma2 * (q + z * z)
        g = np.stack([s1 / sigma2, s2 / (2.0 * sigma2**2)])
        grad = g.sum(axis=1)
        outer = np.einsum("ik,jk->ij", g, g)
        outer = 0.5 * (outer + outer.T)
        sum1, sum2 = s1.sum(), s2.sum()
        hess = np.array(
            [
                [-n * count / sigma2, -sum1 / sigma2**2],
                [-sum1 / sigma2**2, -sum2 / sigma2**3],
            ]
        )
        return AuxSums(count, grad, hess, outer)


# ---------------------------------------------------------------------------
# Ising model


def ising_statistic(state) -> int:
    """Sum of products of horizontally and vertically adjacent spins."""
    x = np.asarray(state)
    if x.ndim != 2:
        raise ValueError("Ising state must be a 2-D lattice")
    return int(np.sum(x[:, :-1] * x[:, 1:]) + np.sum(x[:-1, :] * x[1:, :]))


def _check_lattice(state) -> np.ndarray:
    x = np.asarray(state)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("Ising state must be a nonempty 2-D lattice")
    if not np.all((x == 1) | (x == -1)):
        raise ValueError("Ising spins must be -1 or +1")
    return x.astype(np.int64)


class IsingModel(ExponentialFamilyModel):
    """Free-boundary Ising lattice with a uniform prior on ``(lower, upper)``."""

    name = "ising"
    param_dim = 1

    def __init__(self, lower: float = 0.0, upper: float = 1.0):
        super().__init__([lower], [upper])

    def config(self):
        return {"lower": float(self.lower[0]), "upper": float(self.upper[0])}

    def validate_data(self, data):
        return _check_lattice(data)

    def statistic(self, data):
        return np.array([float(ising_statistic(data))])

    def inner_sample(self, state, theta, cycles, rng):
        x = _check_lattice(state).copy()
        if cycles > 0:
            u = rng.random((cycles, x.size))
            _jit.ising_sweeps(x, float(np.ravel(theta)[0]), u)
        return x

    def exact_sample(self, theta, rng, like):
        """CFTP draw. The lattice is bipartite, so for ``theta < 0`` a draw at
        ``-theta`` with one checkerboard colour flipped is exact."""
        from .samplers import ising_cftp

        t = float(np.ravel(theta)[0])
        x = ising_cftp(abs(t), np.shape(like), rng)
        if t < 0:
            i, j = np.indices(x.shape)
            x = np.where((i + j) % 2 == 0, x, -x)
        return x

    def aux_statistics(self, theta, count, rng, start, burn_in=0, chunk=1 << 16):
        if count < 1:
            raise ValueError("need at least one auxiliary draw")
        t = float(np.ravel(theta)[0])
        x = _check_lattice(start).copy()
        if burn_in:
            _jit.ising_sweeps(x, t, rng.random((burn_in, x.size)))
        out = np.empty(count)
        for lo in range(0, count, chunk):
            hi = min(count, lo + chunk)
            out[lo:hi] = _jit.ising_sweeps(x, t, rng.random((hi - lo, x.size)))
        return out[:, None]


# ---------------------------------------------------------------------------
# ERGM with edges + GWESP


def gwesp_weights(n: int, tau: float) -> np.ndarray:
    """``w[k] = e^tau (1 - (1 - e^-tau)^k)`` for ``k = 0..n``; ``w[0] = 0``."""
    k = np.arange(n + 1)
    return math.exp(tau) * (1.0 - (1.0 - math.exp(-tau)) ** k)


def _check_graph(state) -> np.ndarray:
    a = np.asarray(state)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise ValueError("graph state must be an n x n adjacency matrix with n >= 2")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("adjacency entries must be 0 or 1")
    if np.any(a != a.T) or np.any(np.diag(a) != 0):
        raise ValueError("adjacency must be symmetric with zero diagonal")
    return a.astype(np.uint8)


def edgewise_shared_partners(state) -> np.ndarray:
    """``EP[k]`` = number of edges whose endpoints share exactly ``k`` neighbours."""
    a = _check_graph(state).astype(np.int64)
    n = a.shape[0]
    common = a @ a
    iu = np.triu_indices(n, 1)
    on = a[iu] == 1
    return np.bincount(common[iu][on], minlength=n - 1)


def ergm_statistics(state, tau: float = 0.25) -> np.ndarray:
    """Edge count and GWESP statistic of an undirected graph."""
    a = _check_graph(state)
    n = a.shape[0]
    ep = edgewise_shared_partners(a)
    w = gwesp_weights(n, tau)
    s1 = float(a.sum()) / 2.0
    s2 = float(np.dot(w[1 : n - 1], ep[1 : n - 1]))
    return np.array([s1, s2])


class ErgmModel(ExponentialFamilyModel):
    """Undirected ERGM on (edges, GWESP) with a uniform box prior.

    Default bounds are the prior box used for the 30-actor network; pass
    others for different data.
    """

    name = "ergm"
    param_dim = 2

    def __init__(self, tau: float = 0.25, lower=(-5.0, -1.57), upper=(2.27, 2.32)):
        super().__init__(lower, upper)
        self.tau = float(tau)

    def config(self):
        return {"tau": self.tau, "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def validate_data(self, data):
        return _check_graph(data)

    def statistic(self, data):
        return ergm_statistics(data, self.tau)

    def _weights(self, n):
        return gwesp_weights(n + 1, self.tau)

    def inner_sample(self, state, theta, cycles, rng):
        a = _check_graph(state).copy()
        if cycles > 0:
            n = a.shape[0]
            t = np.asarray(theta, dtype=float)
            u = rng.random((cycles, n * (n - 1) // 2))
            _jit.ergm_sweeps(a, t[0], t[1], self._weights(n), u)
        return a

    def exact_sample(self, theta, rng, like):
        from .oracle import ergm_state_space

        n = np.shape(like)[0]
        space = ergm_state_space(n, self.tau)
        logw = space.stats @ np.asarray(theta, dtype=float)
        p = np.exp(logw - logw.max())
        p /= p.sum()
        return space.adjacency(int(rng.choice(p.size, p=p)))

    def aux_statistics(self, theta, count, rng, start, burn_in=0, chunk=1 << 14):
        if count < 1:
            raise ValueError("need at least one auxiliary draw")
        t = np.asarray(theta, dtype=float)
        a = _check_graph(start).copy()
        n = a.shape[0]
        dyads = n * (n - 1) // 2
        w = self._weights(n)
        if burn_in:
            _jit.ergm_sweeps(a, t[0], t[1], w, rng.random((burn_in, dyads)))
        out = np.empty((count, 2))
        for lo in range(0, count, chunk):
            hi = min(count, lo + chunk)
            out[lo:hi] = _jit.ergm_sweeps(a, t[0], t[1], w, rng.random((hi - lo, dyads)))
        return out


# ---------------------------------------------------------------------------
# registry and serialization

_MODELS = {"gaussian": GaussianModel, "ising": IsingModel, "ergm": ErgmModel}


def get_model(name: str, **kwargs) -> Model:
    """Instantiate a model by its config-file name."""
    try:
        cls = _MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(_MODELS)}") from None
    return cls(**kwargs)


def data_to_json(model_name: str, data) -> dict:
    """Serialize a data state. Lattices are row-major, graphs are edge lists."""
    if model_name == "gaussian":
        return {"model": "gaussian", "data": [float(v) for v in np.ravel(data)]}
    if model_name == "ising":
        x = _check_lattice(data)
        return {"model": "ising", "r": x.shape[0], "s": x.shape[1], "lattice": x.ravel().tolist()}
    if model_name == "ergm":
        a = _check_graph(data)
        i, j = np.nonzero(np.triu(a, 1))
        return {"model": "ergm", "n": a.shape[0], "edges": [[int(p), int(q)] for p, q in zip(i, j)]}
    raise ValueError(f"unknown model {model_name!r}")


def data_from_json(obj: dict):
    kind = obj["model"]
    if kind == "gaussian":
        return np.asarray(obj["data"], dtype=float)
    if kind == "ising":
        return _check_lattice(np.asarray(obj["lattice"], dtype=np.int64).reshape(obj["r"], obj["s"]))
    if kind == "ergm":
        n = int(obj["n"])
        a = np.zeros((n, n), dtype=np.uint8)
        for i, j in obj["edges"]:
            a[i, j] = a[j, i] = 1
        return _check_graph(a)
    raise ValueError(f"unknown model {kind!r}")
