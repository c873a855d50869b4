"""Experiment runner: data simulation, sampler sweeps, diagnostic traces and reports.

A run is described by an :class:`ExperimentConfig`. For every sampler
setting the runner draws a chain, fills the estimate cache at its unique
points, evaluates each requested diagnostic on a grid of prefix lengths and
writes a long-format CSV (one row per cell) plus a JSON manifest.

Only deterministic quantities go into the CSV. Wall-clock times and cache
statistics live in the manifest, so CSVs from runs that differ only in the
worker count are byte-identical.
"""

from __future__ import annotations

import csv
import io as _io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .curvature import cd_trace, chain_estimate_arrays
from .io import (
    EstimateCache,
    atomic_write_text,
    config_hash,
    data_hash,
    fmt,
    read_data,
    write_chain,
    write_data,
    write_json,
)
from .model import Model, get_model
from .oracle import exact_posterior
from .samplers import SampleChain, SamplerConfig, chain_rng, ising_cftp, run_sampler
from .score_approx import DEFAULT_AUX_BURN_IN, EstimationError, estimate_chain, point_key, unique_points
from .stein import KernelConfig, ksd_trace

__all__ = [
    "DIAGNOSTICS",
    "ESS_METHODS",
    "autocorrelation",
    "ess",
    "ess_per_coordinate",
    "min_ess",
    "simulate_data",
    "default_prefixes",
    "ExperimentConfig",
    "DiagnosticReport",
    "run_experiment",
    "PRESETS",
    "preset",
]

logger = logging.getLogger(__name__)

DIAGNOSTICS = ("ess", "cd", "acd", "ksd", "aiks")
ESS_METHODS = ("threshold", "geyer")
ESS_THRESHOLD = 0.05


# ---------------------------------------------------------------------------
# effective sample size


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at lags ``0..n-1`` via zero-padded FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    f = np.fft.rfft(d, 2 * n)
    acov = np.fft.irfft(f * np.conj(f), 2 * n)[:n]
    if acov[0] <= 0:
        raise ValueError("chain has zero variance")
    return acov / acov[0]


def _ess_1d(x, method: str) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 10:
        raise ValueError("ESS needs a chain of length >= 10")
    if np.ptp(x) == 0:
        raise ValueError("chain has zero variance")
    rho = autocorrelation(x)
    n = x.size
    if method == "threshold":
        below = np.nonzero(rho[1:] < ESS_THRESHOLD)[0]
        stop = below[0] + 1 if below.size else n
        tau = 1.0 + 2.0 * rho[1:stop].sum()
    elif method == "geyer":
        pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
        neg = np.nonzero(pairs <= 0)[0]
        keep = pairs[: neg[0]] if neg.size else pairs
        tau = -1.0 + 2.0 * keep.sum()
    else:
        raise ValueError(f"ESS method must be one of {ESS_METHODS}")
    return float(n / tau)


def _points(chain) -> np.ndarray:
    pts = np.asarray(getattr(chain, "points", chain), dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def ess(chain, coordinate: int = 0, method: str = "threshold") -> float:
    """ESS ``n / (1 + 2 sum rho_k)`` of one coordinate.

    ``threshold`` truncates the sum at the first lag whose autocorrelation
    falls below 0.05 (which includes turning negative). ``geyer`` uses the
    initial positive sequence of paired autocorrelations.
    """
    return _ess_1d(_points(chain)[:, coordinate], method)


def ess_per_coordinate(chain, method: str = "threshold") -> np.ndarray:
    pts = _points(chain)
    return np.array([_ess_1d(pts[:, j], method) for j in range(pts.shape[1])])


def min_ess(chain, method: str = "threshold") -> float:
    return float(ess_per_coordinate(chain, method).min())


# ---------------------------------------------------------------------------
# data simulation


def _recipe_model(recipe: dict) -> str:
    try:
        return recipe["model"]
    except KeyError:
        raise ValueError("recipe needs a 'model' entry") from None


def simulate_data(recipe: dict, seed: int, path=None):
    """Simulate an observed data set; optionally write it with provenance.

    Recipes:

    * ``{"model": "gaussian", "n", "mu", "sigma"}`` -- iid normal draws
    * ``{"model": "ising", "r", "s", "theta"}`` -- exact draw by CFTP
    * ``{"model": "ergm", "n", "theta", "tau"=0.25, "sweeps"=1000}`` --
      Gibbs sweeps from the empty graph

    Returns ``(data, provenance)``.
    """
    kind = _recipe_model(recipe)
    rng = chain_rng(int(seed))
    if kind == "gaussian":
        n, mu, sigma = int(recipe["n"]), float(recipe["mu"]), float(recipe["sigma"])
        if n < 1 or sigma <= 0:
            raise ValueError("gaussian recipe needs n >= 1 and sigma > 0")
        data = mu + sigma * rng.standard_normal(n)
    elif kind == "ising":
        r, s, theta = int(recipe["r"]), int(recipe["s"]), float(recipe["theta"])
        if r < 1 or s < 1:
            raise ValueError("ising recipe needs positive lattice dimensions")
        data = ising_cftp(theta, (r, s), rng, max_sweeps=int(recipe.get("max_sweeps", 1 << 20)))
    elif kind == "ergm":
        n = int(recipe["n"])
        model = get_model("ergm", tau=float(recipe.get("tau", 0.25)))
        sweeps = int(recipe.get("sweeps", 1000))
        if n < 2 or sweeps < 1:
            raise ValueError("ergm recipe needs n >= 2 and sweeps >= 1")
        data = model.inner_sample(np.zeros((n, n), dtype=np.uint8), np.asarray(recipe["theta"], float), sweeps, rng)
    else:
        raise ValueError(f"unknown model {kind!r} in recipe")
    provenance = {"recipe": dict(recipe), "seed": int(seed), "version": __version__}
    if path is not None:
        write_data(path, kind, data, provenance)
    return data, provenance


# ---------------------------------------------------------------------------
# configuration


def default_prefixes(n: int, count: int = 10) -> list[int]:
    """``count`` evenly spaced prefix lengths ending at ``n``."""
    grid = np.unique(np.ceil(np.arange(1, count + 1) * n / count).astype(int))
    return [int(v) for v in grid if v >= 1]


@dataclass
class ExperimentConfig:
    """Everything a run needs. Seeds are always explicit integers."""

    model: str
    sampler: dict
    model_options: dict = field(default_factory=dict)
    data_file: str | None = None
    recipe: dict | None = None
    data_seed: int = 0
    sweep: dict | None = None
    seeds: list | None = None
    diagnostics: tuple = DIAGNOSTICS
    w: float = 0.5
    N: int = 10_000
    aux_burn_in: int = DEFAULT_AUX_BURN_IN
    aux_seed: int = 0
    kernel: dict = field(default_factory=dict)
    prefixes: list | None = None
    ess_method: str = "threshold"
    workers: int = 1
    output_dir: str = "results"
    cache_dir: str | None = None
    name: str = "experiment"

    def __post_init__(self):
        self.diagnostics = tuple(self.diagnostics)
        self.validate()

    def validate(self):
        get_model(self.model, **self.model_options)
        if (self.data_file is None) == (self.recipe is None):
            raise ValueError("give exactly one of data_file or recipe")
        if self.recipe is not None and _recipe_model(self.recipe) != self.model:
            raise ValueError("recipe model does not match the experiment model")
        bad = set(self.diagnostics) - set(DIAGNOSTICS)
        if bad or not self.diagnostics:
            raise ValueError(f"diagnostics must be a nonempty subset of {DIAGNOSTICS}")
        if self.sweep is not None:
            values = list(self.sweep.get("values", []))
            if not values:
                raise ValueError("sweep has no values")
            if len({repr(v) for v in values}) != len(values):
                raise ValueError("sweep values must be distinct")
            if self.sweep.get("parameter") not in SamplerConfig.__dataclass_fields__:
                raise ValueError(f"cannot sweep over {self.sweep.get('parameter')!r}")
        if self.seeds is not None:
            if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
                raise ValueError("seeds must be a nonempty list of integers")
            if len(set(self.seeds)) != len(self.seeds):
                raise ValueError("seeds must be distinct")
        if not isinstance(self.sampler.get("seed", 0), int):
            raise ValueError("sampler seed must be an explicit integer")
        if self.ess_method not in ESS_METHODS:
            raise ValueError(f"ess_method must be one of {ESS_METHODS}")
        if self.N < 1 or self.workers < 1:
            raise ValueError("N and workers must be positive")
        if self.prefixes is not None and (not self.prefixes or min(self.prefixes) < 1):
            raise ValueError("prefixes must be positive lengths")
        KernelConfig(**self.kernel)
        self.settings()

    def settings(self) -> list[tuple[str, SamplerConfig]]:
        """Expanded ``(label, sampler config)`` pairs: sweep values x seeds."""
        base = dict(self.sampler)
        seeds = self.seeds if self.seeds is not None else [int(base.get("seed", 0))]
        out = []
        values = [None] if self.sweep is None else list(self.sweep["values"])
        for v in values:
            for s in seeds:
                cfg = dict(base, seed=s)
                parts = []
                if v is not None:
                    cfg[self.sweep["parameter"]] = v
                    parts.append(f"{self.sweep['parameter']}={v}")
                if self.seeds is not None:
                    parts.append(f"seed={s}")
                out.append(("/".join(parts) or cfg["kind"], SamplerConfig(**cfg)))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["diagnostics"] = list(self.diagnostics)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if "preset" in obj:
            return preset(obj.pop("preset"), **obj)
        return cls(**obj)

    def hash(self) -> str:
        """Hash of everything that affects results (not workers or paths)."""
        d = self.to_dict()
        for k in ("workers", "output_dir", "cache_dir"):
            d.pop(k)
        return config_hash(d)


# ---------------------------------------------------------------------------
# reports


CSV_FIXED = ["setting", "diagnostic", "prefix", "value", "w", "N", "source", "status", "reason"]
SOURCES = {"ess": "chain", "cd": "exact", "ksd": "exact", "acd": "approximated", "aiks": "approximated"}


@dataclass
class DiagnosticReport:
    """One cell per (setting, diagnostic, prefix), each ok or failed with a reason."""

    rows: list
    dim: int
    ess: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    cache_hits: int = 0
    cache_misses: int = 0

    @property
    def failed(self) -> list:
        return [r for r in self.rows if r["status"] != "ok"]

    def value(self, setting: str, diagnostic: str, prefix: int) -> float:
        for r in self.rows:
            if (r["setting"], r["diagnostic"], r["prefix"]) == (setting, diagnostic, prefix):
                if r["status"] != "ok":
                    raise ValueError(f"cell failed: {r['reason']}")
                return r["value"]
        raise KeyError((setting, diagnostic, prefix))

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIXED + [f"comp_{j + 1}" for j in range(self.dim)])
        for r in self.rows:
            comps = list(r.get("comps") or [])
            comps = [fmt(c) for c in comps] + [""] * (self.dim - len(comps))
            w.writerow(
                [
                    r["setting"],
                    r["diagnostic"],
                    r["prefix"],
                    fmt(r["value"]),
                    fmt(r.get("w")),
                    "" if r.get("N") is None else r["N"],
                    SOURCES[r["diagnostic"]],
                    r["status"],
                    r.get("reason", ""),
                ]
                + comps
            )
        return buf.getvalue()


def _cell(setting, diagnostic, prefix, value=None, comps=None, N=None, reason=None, w=None):
    return {
        "setting": setting,
        "diagnostic": diagnostic,
        "prefix": int(prefix),
        "value": None if value is None else float(value),
        "comps": None if comps is None else [float(c) for c in comps],
        "N": N,
        "w": w,
        "status": "ok" if reason is None else "failed",
        "reason": reason or "",
    }


def _diagnose(label, chain: SampleChain, cfg: ExperimentConfig, prefixes, exact, estimates, est_error):
    """All cells for one chain, in diagnostic then prefix order."""
    rows = []
    kernel = KernelConfig(**{"workers": cfg.workers, **cfg.kernel})
    u_ex = H_ex = None
    for diag in cfg.diagnostics:
        N = cfg.N if diag in ("acd", "aiks") else None
        w = cfg.w if diag in ("cd", "acd") else None

        def fail(reason):
            rows.extend(_cell(label, diag, m, N=N, reason=reason, w=w) for m in prefixes)

        try:
            if diag in ("cd", "ksd") and exact is None:
                fail("no exact score available for this model and data size")
                continue
            if diag in ("acd", "aiks") and est_error is not None:
                fail(est_error)
                continue
            if diag in ("cd", "ksd") and u_ex is None:
                u_ex, H_ex = exact.along_chain(chain.points)
            if diag in ("acd", "aiks"):
                u_hat, H_hat, J_hat = chain_estimate_arrays(chain.points, estimates)
            if diag == "ess":
                for m in prefixes:
                    try:
                        per = ess_per_coordinate(chain.points[:m], cfg.ess_method)
                        rows.append(_cell(label, diag, m, per.min(), per))
                    except ValueError as exc:
                        rows.append(_cell(label, diag, m, reason=str(exc)))
            elif diag == "cd":
                vals = cd_trace(H_ex, u_ex[:, :, None] * u_ex[:, None, :], prefixes, cfg.w)
                rows.extend(_cell(label, diag, m, v, w=w) for m, v in zip(prefixes, vals))
            elif diag == "acd":
                vals = cd_trace(H_hat, J_hat, prefixes, cfg.w)
                rows.extend(_cell(label, diag, m, v, N=N, w=w) for m, v in zip(prefixes, vals))
            else:
                scores = u_ex if diag == "ksd" else u_hat
                res = ksd_trace(chain, scores, prefixes, kernel)
                rows.extend(_cell(label, diag, m, r.value, r.w, N=N) for m, r in zip(prefixes, res))
        except Exception as exc:  # any failure becomes a reported cell, never a dropped one
            logger.exception("diagnostic %s failed for %s", diag, label)
            rows = [r for r in rows if r["diagnostic"] != diag]
            fail(f"{type(exc).__name__}: {exc}")
    return rows


def _load_data(cfg: ExperimentConfig, out: Path):
    if cfg.data_file is not None:
        kind, data, prov = read_data(cfg.data_file)
        if kind != cfg.model:
            raise ValueError(f"data file holds a {kind} data set, config expects {cfg.model}")
        return data, prov
    return simulate_data(cfg.recipe, cfg.data_seed, out / "data.json")


def run_experiment(config: ExperimentConfig) -> DiagnosticReport:
    """Run every sampler setting and write ``diagnostics.csv`` and ``manifest.json``."""
    cfg = config
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model: Model = get_model(cfg.model, **cfg.model_options)
    data, provenance = _load_data(cfg, out)
    data = model.validate_data(data)
    try:
        exact = exact_posterior(model, data)
    except ValueError as exc:
        logger.info("no exact posterior: %s", exc)
        exact = None
    need_est = any(d in cfg.diagnostics for d in ("acd", "aiks"))
    cache = EstimateCache(cfg.cache_dir or out / "cache")
    cache_key = cache.key(model, data, cfg.N, cfg.aux_seed, cfg.aux_burn_in)
    store = cache.load(cache_key) if need_est else {}
    hits = misses = 0
    rows, ess_summary, clock = [], {}, {}
    for label, scfg in cfg.settings():
        started = time.perf_counter()
        try:
            chain = run_sampler(model, data, scfg)
        except Exception as exc:
            logger.exception("sampler failed for %s", label)
            n = scfg.iterations
            prefixes = sorted(set(cfg.prefixes)) if cfg.prefixes else default_prefixes(n)
            reason = f"sampler failed: {type(exc).__name__}: {exc}"
            rows.extend(_cell(label, d, m, reason=reason) for d in cfg.diagnostics for m in prefixes)
            continue
        write_chain(out / "chains" / f"{label.replace('/', '_').replace('=', '-')}.csv", chain)
        prefixes = sorted(set(cfg.prefixes)) if cfg.prefixes else default_prefixes(len(chain))
        prefixes = [m for m in prefixes if m <= len(chain)]
        estimates, est_error = None, None
        if need_est:
            keys = {point_key(t) for t in unique_points(chain.points)[0]}
            cached = sum(k in store for k in keys)
            hits += cached
            misses += len(keys) - cached
            try:
                estimates = estimate_chain(
                    chain, data, model, cfg.N, cfg.aux_seed, cfg.workers, cfg.aux_burn_in, cache=store
                )
            except EstimationError as exc:
                est_error = f"estimation failed: {exc}"
            cache.save(cache_key, store)
        rows.extend(_diagnose(label, chain, cfg, prefixes, exact, estimates, est_error))
        try:
            ess_summary[label] = ess_per_coordinate(chain, cfg.ess_method).tolist()
        except ValueError as exc:
            ess_summary[label] = str(exc)
        clock[label] = time.perf_counter() - started
    report = DiagnosticReport(rows, model.param_dim, ess_summary, clock, hits, misses)
    atomic_write_text(out / "diagnostics.csv", report.to_csv())
    write_json(
        out / "manifest.json",
        {
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "data_hash": data_hash(model.name, data),
            "data_provenance": provenance,
            "estimate_cache": str(cache.path(cache_key)) if need_est else None,
            "cache_hits": hits,
            "cache_misses": misses,
            "ess": ess_summary,
            "wall_clock_s": clock,
            "failed_cells": len(report.failed),
            "version": __version__,
        },
    )
    return report


# ---------------------------------------------------------------------------
# presets


def _toy_gaussian(**kw) -> ExperimentConfig:
    base = dict(
        name="toy-gaussian",
        model="gaussian",
        recipe={"model": "gaussian", "n": 500, "mu": 5.0, "sigma": 2.0},
        data_seed=20,
        sampler={"kind": "gibbs_posterior", "iterations": 20_000, "seed": 1},
        prefixes=[5000, 10_000, 15_000, 20_000],
        diagnostics=("cd", "acd", "ksd", "aiks"),
        N=100_000,
        aux_seed=2,
    )
    return ExperimentConfig(**{**base, **kw})


def _ising_dmh_sweep(**kw) -> ExperimentConfig:
    base = dict(
        name="ising-dmh-sweep",
        model="ising",
        model_options={"lower": -2.0, "upper": 3.0},
        recipe={"model": "ising", "r": 3, "s": 3, "theta": 0.2},
        data_seed=11,
        sampler={"kind": "dmh", "iterations": 5000, "proposal_scale": [1.2], "seed": 0, "init": [0.5]},
        sweep={"parameter": "inner_updates", "values": [1, 5, 20, 100]},
        N=10_000,
        aux_seed=5,
    )
    return ExperimentConfig(**{**base, **kw})


def _ergm_dmh(**kw) -> ExperimentConfig:
    base = dict(
        name="ergm-dmh",
        model="ergm",
        recipe={"model": "ergm", "n": 6, "theta": [-0.5, 0.3], "tau": 0.25, "sweeps": 200},
        data_seed=3,
        sampler={"kind": "dmh", "iterations": 2000, "proposal_scale": [0.4, 0.4], "seed": 0, "init": [-0.5, 0.3]},
        sweep={"parameter": "inner_updates", "values": [1, 10]},
        N=5000,
        aux_seed=7,
    )
    return ExperimentConfig(**{**base, **kw})


PRESETS = {"toy-gaussian": _toy_gaussian, "ising-dmh-sweep": _ising_dmh_sweep, "ergm-dmh": _ergm_dmh}


def preset(name: str, **overrides) -> ExperimentConfig:
    try:
        return PRESETS[name](**overrides)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
