"""Brute-force ground truth for desk-scale models.

Enumerates every state of small Ising lattices and small graphs, giving exact
normalizing functions, moments of the sufficient statistics and exact
posterior scores and Hessians. These are the reference values every Monte
Carlo estimator in the package is tested against.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import mpmath
import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .model import ErgmModel, GaussianModel, IsingModel, Model, gwesp_weights

__all__ = [
    "EnumerationTable",
    "enumerate_ising",
    "enumerate_ergm",
    "ising_statistic_histogram",
    "ergm_state_space",
    "log_c_derivatives_mp",
    "gaussian_exact_log_c",
    "gaussian_exact_log_c_grad",
    "gaussian_exact_log_c_hess",
    "ExactPosterior",
    "exact_posterior",
    "grid_posterior",
    "ising_grid_posterior",
    "FIXTURE_DIR",
    "compute_fixtures",
    "load_fixtures",
    "diff_fixtures",
]

MAX_ISING_SITES = 16
MAX_ERGM_DYADS = 15


@dataclass
class EnumerationTable:
    """Exact summary of an exponential family at one parameter value.

    ``values``/``counts`` form the histogram of the sufficient statistic over
    all states (rows of ``values`` are distinct statistic vectors).
    """

    model: str
    theta: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    log_c: float
    probs: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov)


def _table(model: str, theta, values: np.ndarray, counts: np.ndarray) -> EnumerationTable:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    values = np.asarray(values, dtype=float).reshape(len(counts), -1)
    logw = values @ theta + np.log(counts)
    log_c = float(logsumexp(logw))
    probs = np.exp(logw - log_c)
    mean = probs @ values
    centred = values - mean
    cov = (centred * probs[:, None]).T @ centred
    return EnumerationTable(model, theta, values, np.asarray(counts), log_c, probs, mean, cov)


# ---------------------------------------------------------------------------
# Ising


def _all_spin_configs(r: int, s: int) -> np.ndarray:
    idx = np.arange(1 << (r * s), dtype=np.int64)
    bits = (idx[:, None] >> np.arange(r * s)) & 1
    return (2 * bits - 1).reshape(-1, r, s)


@functools.lru_cache(maxsize=32)
def ising_statistic_histogram(r: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct values of S(x) over all ``2^{rs}`` lattices with their counts."""
    if r * s > MAX_ISING_SITES:
        raise ValueError(f"{r}x{s} lattice has more than {MAX_ISING_SITES} sites; too large to enumerate")
    x = _all_spin_configs(r, s)
    stat = np.sum(x[:, :, :-1] * x[:, :, 1:], axis=(1, 2)) + np.sum(x[:, :-1, :] * x[:, 1:, :], axis=(1, 2))
    values, counts = np.unique(stat, return_counts=True)
    return values.astype(float), counts


def enumerate_ising(dims, theta: float) -> EnumerationTable:
    """Exact ``c(theta)``, pmf, mean and variance of S for an ``r x s`` lattice."""
    r, s = (int(d) for d in dims)
    values, counts = ising_statistic_histogram(r, s)
    return _table("ising", theta, values, counts)


# ---------------------------------------------------------------------------
# ERGM


@dataclass
class ErgmStateSpace:
    n: int
    tau: float
    stats: np.ndarray  # (2^dyads, 2)

    def adjacency(self, index: int) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        bits = (index >> np.arange(len(iu[0]))) & 1
        a = np.zeros((self.n, self.n), dtype=np.uint8)
        a[iu] = bits
        return a | a.T


@functools.lru_cache(maxsize=16)
def ergm_state_space(n: int, tau: float = 0.25) -> ErgmStateSpace:
    """Statistics of every graph on ``n`` vertices (graph index = dyad bitmask)."""
    dyads = n * (n - 1) // 2
    if dyads > MAX_ERGM_DYADS:
        raise ValueError(f"{n} vertices give {dyads} dyads; too large to enumerate")
    iu = np.triu_indices(n, 1)
    idx = np.arange(1 << dyads, dtype=np.int64)
    bits = ((idx[:, None] >> np.arange(dyads)) & 1).astype(np.int64)
    a = np.zeros((idx.size, n, n), dtype=np.int64)
    a[:, iu[0], iu[1]] = bits
    a = a + a.transpose(0, 2, 1)
    common = a @ a
    sp = common[:, iu[0], iu[1]]
    w = gwesp_weights(n, tau)
    s1 = bits.sum(axis=1).astype(float)
    s2 = np.sum(bits * w[sp], axis=1)
    return ErgmStateSpace(n, tau, np.column_stack([s1, s2]))


def enumerate_ergm(n: int, theta, tau: float = 0.25) -> EnumerationTable:
    """Exact ``c(theta)`` and moments of (edges, GWESP) over all graphs on ``n`` vertices."""
    space = ergm_state_space(int(n), float(tau))
    rounded = np.round(space.stats, 12)
    values, inverse = np.unique(rounded, axis=0, return_inverse=True)
    counts = np.bincount(inverse.ravel())
    # keep unrounded representatives for accuracy
    reps = np.zeros_like(values)
    np.add.at(reps, inverse.ravel(), space.stats)
    reps /= counts[:, None]
    return _table("ergm", theta, reps, counts)


# ---------------------------------------------------------------------------
# high-precision derivatives of log c (independent of the moment formulas)


def log_c_derivatives_mp(values, counts, theta: float, dps: int = 40) -> tuple[float, float]:
    """First and second derivatives of ``log sum_s count(s) exp(theta s)`` by mpmath.

    Uses numerical differentiation at ``dps`` digits, so it shares nothing with
    the probability-weighted moments used by :func:`enumerate_ising`.
    """
    values = [mpmath.mpf(float(v)) for v in np.ravel(values)]
    counts = [mpmath.mpf(int(c)) for c in np.ravel(counts)]
    with mpmath.workdps(dps):

        def log_c(t):
            return mpmath.log(mpmath.fsum(c * mpmath.exp(t * v) for v, c in zip(values, counts)))

        t0 = mpmath.mpf(theta)
        d1 = mpmath.diff(log_c, t0, 1)
        d2 = mpmath.diff(log_c, t0, 2)
    return float(d1), float(d2)


# ---------------------------------------------------------------------------
# Gaussian closed forms


def _sigma2(theta) -> float:
    sigma2 = float(theta[1])
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return sigma2


def gaussian_exact_log_c(theta, n_data: int) -> float:
    """``(n/2) log(2 pi sigma2)``."""
    return 0.5 * n_data * math.log(2.0 * math.pi * _sigma2(theta))


def gaussian_exact_log_c_grad(theta, n_data: int) -> np.ndarray:
    return np.array([0.0, 0.5 * n_data / _sigma2(theta)])


def gaussian_exact_log_c_hess(theta, n_data: int) -> np.ndarray:
    s = _sigma2(theta)
    return np.array([[0.0, 0.0], [0.0, -0.5 * n_data / s**2]])


# ---------------------------------------------------------------------------
# exact posterior score / Hessian


class ExactPosterior:
    """Exact posterior score ``u(theta)`` and Hessian ``H(theta)`` for tractable cases.

    ``u = grad log p + grad log h(x|.) - grad log c`` and
    ``H = hess log p + hess log h(x|.) - hess log c``.
    """

    def __init__(self, model: Model, data):
        self.model = model
        self.data = model.validate_data(data)
        if isinstance(model, GaussianModel):
            n = self.data.size
            self._log_c = lambda t: (gaussian_exact_log_c(t, n), gaussian_exact_log_c_grad(t, n), gaussian_exact_log_c_hess(t, n))
        elif isinstance(model, IsingModel):
            r, s = self.data.shape
            values, counts = ising_statistic_histogram(r, s)
            self._log_c = lambda t: self._expfam(values, counts, t)
        elif isinstance(model, ErgmModel):
            table = enumerate_ergm(self.data.shape[0], np.zeros(2), model.tau)
            self._log_c = lambda t: self._expfam(table.values, table.counts, t)
        else:
            raise ValueError(f"no exact normalizer for model {model.name!r}")

    @staticmethod
    def _expfam(values, counts, theta):
        t = _table("", theta, values, counts)
        return t.log_c, t.mean, t.cov

    def log_c(self, theta) -> float:
        return self._log_c(np.atleast_1d(np.asarray(theta, dtype=float)))[0]

    def log_posterior(self, theta) -> float:
        """Unnormalized log posterior ``log p + log h - log c``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if not self.model.in_support(theta):
            return -math.inf
        return self.model.log_prior(theta) + self.model.log_h(self.data, theta) - self.log_c(theta)

    def score_hessian(self, theta) -> tuple[np.ndarray, np.ndarray]:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        _, grad_c, hess_c = self._log_c(theta)
        m = self.model
        u = m.grad_log_prior(theta) + m.grad_log_h(self.data, theta) - grad_c
        h = m.hess_log_prior(theta) + m.hess_log_h(self.data, theta) - hess_c
        return u, 0.5 * (h + h.T)

    def score(self, points) -> np.ndarray:
        """Score at each row of ``points``."""
        pts = np.atleast_2d(points)
        return np.array([self.score_hessian(t)[0] for t in pts])

    def along_chain(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Scores ``(n, p)`` and Hessians ``(n, p, p)`` at each row, computed once per unique row."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        us, hs = zip(*(self.score_hessian(t) for t in uniq))
        return np.array(us)[inverse], np.array(hs)[inverse]


def exact_posterior(model: Model, data) -> ExactPosterior:
    return ExactPosterior(model, data)


# ---------------------------------------------------------------------------
# grid posteriors


@dataclass
class GridPosterior:
    grid: np.ndarray
    density: np.ndarray
    mean: float
    var: float


def grid_posterior(log_unnormalized, lower: float, upper: float, size: int = 2000) -> GridPosterior:
    """Normalize ``exp(log_unnormalized)`` on an even grid by the trapezoid rule."""
    if size < 100:
        raise ValueError("grid needs at least 100 points")
    grid = np.linspace(lower, upper, size)
    logd = np.array([log_unnormalized(t) for t in grid])
    dens = np.exp(logd - logd.max())
    dens /= trapezoid(dens, grid)
    mean = float(trapezoid(grid * dens, grid))
    var = float(trapezoid((grid - mean) ** 2 * dens, grid))
    return GridPosterior(grid, dens, mean, var)


def ising_grid_posterior(data, lower: float = 0.0, upper: float = 1.0, size: int = 2000) -> GridPosterior:
    """Exact posterior of the Ising parameter under a uniform prior on ``[lower, upper]``."""
    x = IsingModel().validate_data(data)
    r, s = x.shape
    values, counts = ising_statistic_histogram(r, s)
    stat = float(np.sum(x[:, :-1] * x[:, 1:]) + np.sum(x[:-1, :] * x[1:, :]))
    logw = np.log(counts)

    def log_post(t):
        return t * stat - logsumexp(t * values + logw)

    return grid_posterior(log_post, lower, upper, size)


# ---------------------------------------------------------------------------
# regression fixtures

FIXTURE_DIR = Path(__file__).with_name("fixtures") / "v1"
FIXTURE_VERSION = 1


def compute_fixtures() -> dict:
    """Recompute every pinned oracle value."""
    ising = enumerate_ising((3, 3), 0.2)
    ergm = enumerate_ergm(5, np.array([-0.5, 0.3]), 0.25)
    data = np.array([[-1, 1, 1], [1, 1, 1], [1, 1, -1]])  # S(x) = 4
    post = ising_grid_posterior(data, 0.0, 1.0, 2000)
    return {
        "ising_3x3_theta0.2.json": {
            "version": FIXTURE_VERSION,
            "dims": [3, 3],
            "theta": 0.2,
            "log_c": ising.log_c,
            "mean_S": float(ising.mean[0]),
            "var_S": float(ising.cov[0, 0]),
        },
        "ergm_n5.json": {
            "version": FIXTURE_VERSION,
            "n": 5,
            "theta": [-0.5, 0.3],
            "tau": 0.25,
            "log_c": ergm.log_c,
            "mean": ergm.mean.tolist(),
            "cov": ergm.cov.tolist(),
        },
        "ising_grid_posterior_S4.json": {
            "version": FIXTURE_VERSION,
            "lattice": data.tolist(),
            "grid_size": 2000,
            "mean": post.mean,
            "var": post.var,
        },
    }


def load_fixtures(directory: Path | str = FIXTURE_DIR) -> dict:
    directory = Path(directory)
    return {p.name: json.loads(p.read_text()) for p in sorted(directory.glob("*.json"))}


def _walk_diff(path, a, b, rtol, out):
    if isinstance(a, dict) and isinstance(b, dict):
        for k in sorted(set(a) | set(b)):
            if k not in a or k not in b:
                out.append(f"{path}/{k}: present on one side only")
            else:
                _walk_diff(f"{path}/{k}", a[k], b[k], rtol, out)
    elif isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append(f"{path}: length {len(a)} != {len(b)}")
        for i, (x, y) in enumerate(zip(a, b)):
            _walk_diff(f"{path}[{i}]", x, y, rtol, out)
    elif isinstance(a, float) or isinstance(b, float):
        if not math.isclose(a, b, rel_tol=rtol, abs_tol=rtol):
            out.append(f"{path}: {a!r} != {b!r}")
    elif a != b:
        out.append(f"{path}: {a!r} != {b!r}")


def diff_fixtures(pinned: dict, fresh: dict, rtol: float = 1e-10) -> list[str]:
    """Human-readable differences between two fixture sets (empty when they agree)."""
    out: list[str] = []
    _walk_diff("", pinned, fresh, rtol, out)
    return out
