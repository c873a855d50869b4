"""Command-line interface: ``ncdiag {simulate,sample,estimate,diagnose,oracle,report}``.

Every subcommand that accepts ``--config`` reads a TOML or JSON file whose
keys mirror :class:`~ncdiag.harness.ExperimentConfig`; explicit flags take
precedence over the file. The exit status is nonzero iff a diagnostic cell
failed (or, for ``oracle``, a fixture differs from its pinned value).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .harness import (
    DIAGNOSTICS,
    ESS_METHODS,
    PRESETS,
    DiagnosticReport,
    ExperimentConfig,
    _diagnose,
    default_prefixes,
    preset,
    run_experiment,
    simulate_data,
)
from .io import EstimateCache, atomic_write_text, read_chain, read_data, write_chain, write_json
from .model import get_model
from .oracle import FIXTURE_DIR, compute_fixtures, diff_fixtures, exact_posterior, load_fixtures
from .samplers import KINDS, SamplerConfig, run_sampler
from .score_approx import DEFAULT_AUX_BURN_IN, EstimationError, estimate_chain

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["main", "build_parser", "load_config_file"]

logger = logging.getLogger("ncdiag")


def load_config_file(path) -> dict:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _kv(items) -> dict:
    """Parse ``key=value`` pairs; values are read as JSON when possible."""
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _model_for(data_model: str, args, file_cfg: dict):
    opts = dict(file_cfg.get("model_options", {}))
    opts.update(_kv(getattr(args, "model_option", None)))
    return get_model(data_model, **opts)


def _file_cfg(args) -> dict:
    return load_config_file(args.config) if getattr(args, "config", None) else {}


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = _file_cfg(args)
    recipe = dict(cfg.get("recipe", {}))
    if args.model:
        recipe["model"] = args.model
    recipe.update(_kv(args.set))
    seed = args.seed if args.seed is not None else int(cfg.get("data_seed", 0))
    simulate_data(recipe, seed, args.output)
    print(args.output)
    return 0


def cmd_sample(args) -> int:
    cfg = _file_cfg(args)
    kind, data, _ = read_data(args.data)
    model = _model_for(kind, args, cfg)
    sampler = dict(cfg.get("sampler", {}))
    for key in ("kind", "iterations", "inner_updates", "seed", "burn_in", "thinning"):
        val = getattr(args, key)
        if val is not None:
            sampler[key] = val
    if args.proposal_scale is not None:
        sampler["proposal_scale"] = args.proposal_scale
    if args.init is not None:
        sampler["init"] = args.init
    chain = run_sampler(model, data, SamplerConfig(**sampler))
    write_chain(args.output, chain)
    print(f"{args.output}: {len(chain)} points, acceptance {chain.meta['acceptance_rate']:.3f}")
    return 0


def _estimate(args, cfg, model, data, chain):
    N = args.N if args.N is not None else int(cfg.get("N", 10_000))
    seed = args.aux_seed if args.aux_seed is not None else int(cfg.get("aux_seed", 0))
    burn = args.aux_burn_in if args.aux_burn_in is not None else int(cfg.get("aux_burn_in", DEFAULT_AUX_BURN_IN))
    workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
    cache = EstimateCache(args.cache_dir)
    key = cache.key(model, data, N, seed, burn)
    store = cache.load(key)
    try:
        est = estimate_chain(chain, data, model, N, seed, workers, burn, cache=store)
    finally:
        cache.save(key, store)
    return N, est, cache.path(key)


def cmd_estimate(args) -> int:
    cfg = _file_cfg(args)
    kind, data, _ = read_data(args.data)
    model = _model_for(kind, args, cfg)
    chain = read_chain(args.chain)
    try:
        _, est, path = _estimate(args, cfg, model, data, chain)
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 1
    print(f"{path}: {len(est)} unique points")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _file_cfg(args)
    kind, data, _ = read_data(args.data)
    model = _model_for(kind, args, cfg)
    chain = read_chain(args.chain)
    diags = tuple(args.diagnostics or cfg.get("diagnostics", DIAGNOSTICS))
    base = {k: v for k, v in cfg.items() if k in ExperimentConfig.__dataclass_fields__}
    base.update(
        model=kind,
        model_options=model.config(),
        sampler={"kind": "mh", "iterations": len(chain)},
        data_file=str(args.data),
        recipe=None,
        sweep=None,
        seeds=None,
        diagnostics=diags,
    )
    if args.prefixes:
        base["prefixes"] = args.prefixes
    if args.ess_method:
        base["ess_method"] = args.ess_method
    econf = ExperimentConfig(**base)
    prefixes = sorted(set(econf.prefixes)) if econf.prefixes else default_prefixes(len(chain))
    try:
        exact = exact_posterior(model, data)
    except ValueError:
        exact = None
    estimates = err = None
    N = econf.N
    if any(d in diags for d in ("acd", "aiks")):
        try:
            N, estimates, _ = _estimate(args, cfg, model, data, chain)
        except EstimationError as exc:
            err = f"estimation failed: {exc}"
    econf.N = N
    label = args.label or Path(args.chain).stem
    rows = _diagnose(label, chain, econf, prefixes, exact, estimates, err)
    report = DiagnosticReport(rows, model.param_dim)
    text = report.to_csv()
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 1 if report.failed else 0


def cmd_oracle(args) -> int:
    fresh = compute_fixtures()
    directory = Path(args.fixture_dir) if args.fixture_dir else FIXTURE_DIR
    if args.write:
        for name, obj in fresh.items():
            write_json(directory / name, obj)
        print(f"wrote {len(fresh)} fixtures to {directory}")
        return 0
    diffs = diff_fixtures(load_fixtures(directory), fresh, rtol=args.rtol)
    for line in diffs:
        print(line)
    print("fixtures match" if not diffs else f"{len(diffs)} difference(s)")
    return 1 if diffs else 0


def cmd_report(args) -> int:
    cfg = _file_cfg(args)
    if args.preset:
        cfg["preset"] = args.preset
    if not cfg:
        raise SystemExit("report needs --config or --preset")
    for key in ("workers", "output_dir", "cache_dir", "N"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    if args.iterations is not None:
        base = preset(cfg["preset"]).sampler if "preset" in cfg and "sampler" not in cfg else cfg.get("sampler", {})
        cfg["sampler"] = dict(base, iterations=args.iterations)
    if args.prefixes:
        cfg["prefixes"] = args.prefixes
    econf = ExperimentConfig.from_dict(cfg)
    report = run_experiment(econf)
    out = Path(econf.output_dir)
    print(f"{out / 'diagnostics.csv'}: {len(report.rows)} cells, {len(report.failed)} failed")
    for row in report.failed:
        print(f"  FAILED {row['setting']} {row['diagnostic']} n={row['prefix']}: {row['reason']}", file=sys.stderr)
    return 1 if report.failed else 0


# ---------------------------------------------------------------------------
# parser


def _add_model_options(p):
    p.add_argument("--model-option", action="append", metavar="KEY=VALUE", help="model constructor option")


def _add_estimate_options(p):
    p.add_argument("--N", type=int, help="auxiliary draws per set")
    p.add_argument("--aux-seed", type=int)
    p.add_argument("--aux-burn-in", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir", default=".ncdiag-cache")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncdiag", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an observed data set")
    p.add_argument("--config")
    p.add_argument("--model", choices=["gaussian", "ising", "ergm"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="recipe entry, e.g. theta=0.2")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="run a posterior sampler")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    _add_model_options(p)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--iterations", type=int)
    p.add_argument("--inner-updates", type=int)
    p.add_argument("--proposal-scale", type=float, nargs="+")
    p.add_argument("--init", type=float, nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thinning", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", help="fill the auxiliary estimate cache for a chain")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--chain", required=True)
    _add_model_options(p)
    _add_estimate_options(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose", help="diagnostic traces for one chain")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--chain", required=True)
    _add_model_options(p)
    _add_estimate_options(p)
    p.add_argument("--diagnostics", nargs="+", choices=DIAGNOSTICS)
    p.add_argument("--prefixes", type=int, nargs="+")
    p.add_argument("--ess-method", choices=ESS_METHODS)
    p.add_argument("--label")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("oracle", help="regenerate enumeration fixtures and diff against the pinned set")
    p.add_argument("--fixture-dir")
    p.add_argument("--rtol", type=float, default=1e-10)
    p.add_argument("--write", action="store_true", help="overwrite the pinned fixtures")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="run a full experiment from a config or preset")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--cache-dir")
    p.add_argument("--N", type=int)
    p.add_argument("--iterations", type=int, help="override the sampler chain length")
    p.add_argument("--prefixes", type=int, nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
