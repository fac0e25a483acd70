"""Command-line interface: ``eivigp fit`` and ``eivigp validate``.

Exit codes: 0 success, 2 input or usage error, 3 numerical failure,
4 convergence diagnostics over threshold with ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import effective_sample_size, gelman_rubin, geweke
from .io import SITE_GIA, InputError, _site_key, ingest_instrumental, load_proxy
from .kernel import ConditioningError, ParameterDomainError
from .model import GiaParams, Priors
from .posterior import summarize
from .sampler import MODES, ChainConfig, Problem, SamplerError, run_chains
from .validation import SCENARIO_CHAIN, SCENARIO_PRIORS, SCENARIOS, kfold_cv, run_scenario

__all__ = ["main", "build_parser", "RunConfig"]

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_STRICT = 0, 2, 3, 4
RHAT_THRESHOLD = 1.1


class UsageError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one fit."""

    mode: str
    data: str
    data_format: str
    gia: tuple[tuple[str, float, float], ...]
    priors: Priors
    grid_m: int | None
    quad_order: int
    chain: ChainConfig
    out: str
    kappa: float
    time_scale: float
    n_eval: int
    jobs: int

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gia"] = [{"site": s, "gamma": g, "t0": t} for s, g, t in self.gia]
        return d


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def _gia_spec(text: str) -> tuple[str, float, float]:
    """``GAMMA[,T0]`` for every record or ``SITE=GAMMA[,T0]`` for one site."""
    site, _, value = text.rpartition("=")
    parts = value.split(",")
    try:
        gamma = float(parts[0])
        t0 = float(parts[1]) if len(parts) > 1 else 2010.0
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"bad GIA spec {text!r}; use GAMMA[,T0] or SITE=GAMMA[,T0]") from None
    if len(parts) > 2:
        raise argparse.ArgumentTypeError(f"bad GIA spec {text!r}")
    return site.strip(), gamma, t0


def _sniff_columns(path: str) -> int:
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if row and any(c.strip() for c in row):
                first = row[0].strip()
                try:
                    float(first)
                except ValueError:
                    continue
                return len(row)
    raise InputError(f"{path}: no data rows")


def _add_data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="comma-delimited observation file")
    p.add_argument("--format", dest="data_format", choices=("auto", "instrumental", "proxy"), default="auto",
                   help="file layout; auto picks by column count")
    p.add_argument("--mode", choices=MODES, default=None,
                   help="sigp ignores age errors; eivigp samples true ages (default: by file layout)")
    p.add_argument("--gia", action="append", type=_gia_spec, default=[], metavar="[SITE=]GAMMA[,T0]",
                   help="GIA rate in mm/yr and reference year; repeat for several sites")
    p.add_argument("--grid-m", type=int, default=None, help="number of rate grid nodes")
    p.add_argument("--quad-order", type=int, default=30)
    p.add_argument("--kappa", type=float, default=2.0, help="kernel power in (0, 2]")
    p.add_argument("--time-scale", type=float, default=1000.0, help="years per internal time unit")
    p.add_argument("--prior-rho", type=_pair, default=None, metavar="A,B")
    p.add_argument("--prior-tau2", type=_pair, default=None, metavar="SHAPE,RATE")
    p.add_argument("--prior-upsilon2", type=_pair, default=None, metavar="SHAPE,RATE")
    p.add_argument("--prior-alpha-sd", type=float, default=None)


def _add_chain_args(p: argparse.ArgumentParser) -> None:
    base = ChainConfig()
    p.add_argument("--iters", type=int, default=None, help=f"iterations per chain (default {base.n_iterations})")
    p.add_argument("--burnin", type=int, default=None, help=f"default {base.burn_in}")
    p.add_argument("--thin", type=int, default=None, help=f"default {base.thin}")
    p.add_argument("--chains", type=int, default=None, help=f"default {base.n_chains}")
    p.add_argument("--long", action="store_true", help="50000 iterations, burn-in 5000, thin 15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eivigp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the model and write draws, diagnostics and summaries")
    _add_data_args(fit)
    _add_chain_args(fit)
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--n-eval", type=int, default=200, help="summary evaluation points")
    fit.add_argument("--strict", action="store_true", help="exit 4 when diagnostics exceed thresholds")

    val = sub.add_parser("validate", help="run a validation suite")
    val.add_argument("--suite", required=True, help="scenarios or cv")
    val.add_argument("--out", required=True, help="output directory")
    val.add_argument("--scenarios", default="abcdefg", help="scenario letters to run")
    val.add_argument("--n-sims", type=int, default=200)
    val.add_argument("--folds", type=int, default=10)
    val.add_argument("--lsr-degree", type=int, default=2)
    val.add_argument("--n-paths", type=int, default=500)
    _add_data_args(val, required=False)
    _add_chain_args(val)
    return parser


def _priors(args, base: Priors = Priors()) -> Priors:
    kw = {}
    for name in ("rho", "tau2", "upsilon2"):
        value = getattr(args, f"prior_{name}")
        if value is not None:
            kw[name] = value
    if args.prior_alpha_sd is not None:
        kw["alpha_sd"] = args.prior_alpha_sd
    try:
        return dataclasses.replace(base, **kw)
    except ParameterDomainError as exc:
        raise InputError(f"prior override: {exc}") from None


def _chain_config(args, base: ChainConfig | None = None) -> ChainConfig:
    base = base or (ChainConfig.long_run() if args.long else ChainConfig())
    kw = {"seed": args.seed}
    for flag, field in (("iters", "n_iterations"), ("burnin", "burn_in"), ("thin", "thin"), ("chains", "n_chains")):
        value = getattr(args, flag)
        if value is not None:
            kw[field] = value
    try:
        return dataclasses.replace(base, **kw)
    except ParameterDomainError as exc:
        raise InputError(f"chain settings: {exc}") from None


def _load(args):
    """Read the data file and resolve mode and per-record GIA parameters."""
    layout = args.data_format
    if layout == "auto":
        layout = "instrumental" if _sniff_columns(args.data) == 3 else "proxy"
    mode = args.mode or ("sigp" if layout == "instrumental" else "eivigp")
    if layout == "instrumental":
        if mode == "eivigp":
            raise InputError("eivigp mode needs a proxy file with an age-error column")
        records, site_gia, sites = ingest_instrumental(args.data), None, None
    else:
        overrides = {_site_key(s): GiaParams(g, t) for s, g, t in args.gia if s}
        table = {_site_key(k): v for k, v in SITE_GIA.items()}
        table.update(overrides)
        records, site_gia, sites = load_proxy(args.data, table)
    single = [(g, t) for s, g, t in args.gia if not s]
    if len(single) > 1:
        raise InputError("give at most one GIA spec without a site name")
    if single:
        gia = GiaParams(*single[0])
        site_gia = [gia] * len(records)
    elif any(s for s, _, _ in args.gia) and sites is None:
        raise InputError("site GIA specs need a site column in the data file")
    resolved = [(s, g.gamma, g.t0) for s, g in zip(sites or [""] * len(records), site_gia or [])]
    return layout, mode, records, site_gia, tuple(dict.fromkeys(resolved))


def _problem(args, mode, records, gia) -> Problem:
    try:
        return Problem.from_records(records, gia, mode=mode, m=args.grid_m, quad_order=args.quad_order,
                                    kappa=args.kappa, time_scale=args.time_scale)
    except ParameterDomainError as exc:
        raise InputError(str(exc)) from None


def _diagnostics(chains) -> tuple[list[list], list[str]]:
    rows, flags = [], []
    n_chains = len(chains)
    for name in ("alpha", "tau2", "upsilon2", "rho"):
        traces = [c.scalar_traces()[name] for c in chains]
        z = [geweke(t) if t.size >= 100 else float("nan") for t in traces]
        rhat = gelman_rubin(traces) if n_chains >= 2 and traces[0].size >= 10 else float("nan")
        ess = sum(effective_sample_size(t) for t in traces) if traces[0].size >= 10 else float("nan")
        rows.append([name, rhat, ess] + z)
        if rhat > RHAT_THRESHOLD:
            flags.append(f"{name}: R-hat {rhat:.4g} > {RHAT_THRESHOLD}")
    return rows, flags


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def cmd_fit(args) -> int:
    layout, mode, records, gia, gia_resolved = _load(args)
    priors = _priors(args)
    config = _chain_config(args)
    cfg = RunConfig(mode=mode, data=os.fspath(args.data), data_format=layout, gia=gia_resolved, priors=priors,
                    grid_m=args.grid_m, quad_order=args.quad_order, chain=config, out=os.fspath(args.out),
                    kappa=args.kappa, time_scale=args.time_scale, n_eval=args.n_eval, jobs=args.jobs)
    problem = _problem(args, mode, records, gia)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    chains = run_chains(problem, priors, config, n_jobs=args.jobs)
    elapsed = time.perf_counter() - started

    m, n = problem.grid.m, problem.n
    header = ["chain", "draw", "logpost", "alpha", "tau2", "upsilon2", "rho"] + [f"w{j}" for j in range(m)]
    if mode == "eivigp":
        header += [f"age{i}" for i in range(n)]
    rows = []
    for c in chains:
        ages = problem.axis.to_years(c.chis)
        for i in range(c.n_draws):
            row = [str(c.chain), str(i), c.logpost[i], c.alpha[i], c.tau2[i], c.upsilon2[i], c.rho[i], *c.w[i]]
            if mode == "eivigp":
                row += list(ages[i])
            rows.append(row)
    _write_table(out / "draws.csv", header, rows)

    diag_rows, flags = _diagnostics(chains)
    _write_table(out / "diagnostics.csv",
                 ["parameter", "rhat", "ess"] + [f"geweke_z_chain{c.chain}" for c in chains], diag_rows)

    for kind in ("rate", "level"):
        s = summarize(chains, kind=kind, n_eval=args.n_eval, min_draws=1)
        cols = s.as_columns()
        _write_table(out / f"{kind}_summary.csv", list(cols), zip(*cols.values()))

    accept = {}
    for c in chains:
        for key, (a, r) in c.accept.items():
            acc = accept.setdefault(key, [0, 0])
            acc[0] += a
            acc[1] += r
    manifest = {
        "version": __version__,
        "config": cfg.as_dict(),
        "seed": config.seed,
        "data_sha256": _sha256(args.data),
        "n_records": n,
        "grid": {"m": m, "start_year": float(problem.axis.to_years(problem.grid.lower)),
                 "end_year": float(problem.axis.to_years(problem.grid.upper))},
        "n_draws": sum(c.n_draws for c in chains),
        "acceptance": accept,
        "max_jitter": float(max(c.jitter.max() for c in chains if c.n_draws)) if any(c.n_draws for c in chains)
        else None,
        "diagnostic_flags": flags,
        "files": ["draws.csv", "diagnostics.csv", "rate_summary.csv", "level_summary.csv"],
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "runtime_seconds": round(elapsed, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for f in flags:
        logger.warning("diagnostic threshold exceeded: %s", f)
    if flags and args.strict:
        return EXIT_STRICT
    return EXIT_OK


def cmd_validate(args) -> int:
    out = Path(args.out)
    if args.suite == "scenarios":
        config = _chain_config(args, base=SCENARIO_CHAIN)
        priors = _priors(args, base=SCENARIO_PRIORS)
        unknown = set(args.scenarios) - set(SCENARIOS)
        if unknown:
            raise UsageError(f"unknown scenario(s): {''.join(sorted(unknown))}")
        if args.n_sims < 1:
            raise UsageError("--n-sims must be at least 1")
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for name in args.scenarios:
            spec = dataclasses.replace(SCENARIOS[name], n_sims=args.n_sims, seed=args.seed)
            res = run_scenario(spec, config, priors, n_jobs=args.jobs)
            logger.info("scenario %s: %.3f %.3f", name, res.coverage95, res.coverage68)
            rows.append([name, spec.sigma_g2_mean, spec.sigma_g2_var, spec.rho_mean, spec.rho_var,
                         res.coverage95, res.coverage68, res.mc_se95, res.mc_se68,
                         str(res.n_sims), str(res.n_failed)])
        _write_table(out / "scenarios.csv",
                     ["scenario", "sigma_g2_mean", "sigma_g2_var", "rho_mean", "rho_var", "coverage95",
                      "coverage68", "mc_se95", "mc_se68", "n_sims", "n_failed"], rows)
        return EXIT_OK
    if args.suite == "cv":
        if args.data is None:
            raise UsageError("the cv suite needs --data")
        layout, mode, records, gia, _ = _load(args)
        problem = _problem(args, mode, records, gia)
        config = _chain_config(args)
        priors = _priors(args)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for model in ("lsr", mode):
            res = kfold_cv(problem, model=model, k=args.folds, seed=args.seed, config=config, priors=priors,
                           n_paths=args.n_paths, lsr_degree=args.lsr_degree)
            rows.append([{"lsr": "LSR", "sigp": "S-IGP", "eivigp": "EIV-IGP"}[model], res.empirical_coverage,
                         res.avg_interval_width, res.avg_interval_score])
        _write_table(out / "cv.csv", ["model", "coverage", "avg_interval_width", "avg_interval_score"], rows)
        return EXIT_OK
    raise UsageError(f"unknown suite {args.suite!r}; choose scenarios or cv")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_fit(args) if args.command == "fit" else cmd_validate(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eivigp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ParameterDomainError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"eivigp: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConditioningError, SamplerError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"eivigp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
