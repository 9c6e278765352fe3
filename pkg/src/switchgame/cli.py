"""Command line front end.

Subcommands::

    compare-laws    game values under the four standard correlation laws
    region-map      equilibrium classification grid from the lattice engine
    sample-path     one (or more) simulated equilibrium paths
    default-config  print the default configuration file

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, NumericalError
from .lsmc import solve_lsmc, sample_equilibrium_path, write_coefficients
from .matrix_game import KIND_NAMES
from .mca import build_lattice, region_map, solve_mca, write_region_map

log = logging.getLogger("switchgame")

TABLE_LAWS = ("utilitarian", "egalitarian", "preferential1", "preferential2")


def _fmt(v):
    return f"{v:.17g}"


def _lattice(cfg):
    e = cfg.engine
    return build_lattice(cfg.market, cfg.producer1, cfg.producer2, bounds=e.bounds,
                         sizes=(e.grid_p, e.grid_x), cap=cfg.cap)


def _lsmc(cfg, law):
    e = cfg.engine
    return solve_lsmc(cfg.market, cfg.producer1, cfg.producer2, law, n_paths=e.n_paths,
                      basis=e.basis, outer_iters=e.outer_iters, seed=e.seed,
                      threads=e.threads, cap=cfg.cap)


def cmd_compare_laws(cfg, out, laws=TABLE_LAWS):
    """Write ``compare_laws.csv`` (values) and ``compare_laws_timing.csv``."""
    e = cfg.engine
    engines = ("mca", "lsmc") if e.engine == "both" else (e.engine,)
    rows, timing = [], []
    lat = _lattice(cfg) if "mca" in engines else None
    for name in laws:
        law = e.correlation_law(name)
        for engine in engines:
            start = time.perf_counter()
            if engine == "mca":
                vs = solve_mca(lat, law)
                v1, v2 = vs.value_at(cfg.market.p0, cfg.market.x0, 0)
                se1 = se2 = 0.0
            else:
                res = _lsmc(cfg, law)
                v1, v2 = res.estimate.value(0)
                se1, se2 = res.estimate.stderr(0)
                with open(out / f"coefficients_{law.name}.csv", "w", newline="") as fh:
                    write_coefficients(fh, res.model)
            elapsed = time.perf_counter() - start
            log.info("%s %s: V1=%.4f (%.4f) V2=%.4f (%.4f) in %.1fs", engine, law.name, v1, se1, v2, se2, elapsed)
            rows.append([engine, law.name, _fmt(v1), _fmt(se1), _fmt(v2), _fmt(se2)])
            timing.append([engine, law.name, f"{elapsed:.3f}"])
    with open(out / "compare_laws.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["engine", "law", "V1", "SE1", "V2", "SE2"])
        w.writerows(rows)
    with open(out / "compare_laws_timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["engine", "law", "runtime_s"])
        w.writerows(timing)
    return rows


def cmd_region_map(cfg, out, stage, regime):
    T = cfg.market.T
    if not 0 <= stage < T:
        raise ConfigError(f"stage must lie in [0, {T})")
    if not 0 <= regime < 4:
        raise ConfigError("regime must be an index in 0..3")
    lat = _lattice(cfg)
    vs = solve_mca(lat, cfg.engine.correlation_law())
    rm = region_map(vs, stage, regime)
    write_region_map(out / "region_map.csv", rm)
    counts = np.bincount(rm["kind"], minlength=len(KIND_NAMES))
    log.info("region map: %s", ", ".join(f"{n}={c}" for n, c in zip(KIND_NAMES, counts)))
    return rm


def cmd_sample_path(cfg, out, count=1, regime=0):
    law = cfg.engine.correlation_law()
    res = _lsmc(cfg, law)
    with open(out / "sample_path.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "p", "x", "regime", "spread1", "spread2", "pnl1", "pnl2"])
        for k in range(count):
            rec = sample_equilibrium_path(res.model, law, cfg.engine.seed, path=k, regime=regime)
            for s in range(len(rec["t"])):
                w.writerow([k, int(rec["t"][s]), _fmt(rec["p"][s]), _fmt(rec["x"][s]), int(rec["regime"][s]),
                            _fmt(rec["spread1"][s]), _fmt(rec["spread2"][s]),
                            _fmt(rec["pnl1"][s]), _fmt(rec["pnl2"][s])])
    with open(out / f"coefficients_{law.name}.csv", "w", newline="") as fh:
        write_coefficients(fh, res.model)
    return res


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="switchgame", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="configuration file (section.key = value)")
    common.add_argument("--seed", type=_seed, help="master seed (unsigned 64-bit)")
    common.add_argument("--law", help="correlation law: " + ", ".join(cfgmod.LAW_NAMES))
    common.add_argument("--engine", choices=cfgmod.ENGINES)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("compare-laws", parents=[common], help="values under the standard laws")
    p.set_defaults(func=lambda cfg, out, a: cmd_compare_laws(
        cfg, out, (a.law,) if a.law else TABLE_LAWS))
    p = sub.add_parser("region-map", parents=[common], help="equilibrium region grid (lattice engine)")
    p.add_argument("--stage", type=int, default=7)
    p.add_argument("--regime", type=int, default=0, help="joint regime index 0..3")
    p.set_defaults(func=lambda cfg, out, a: cmd_region_map(cfg, out, a.stage, a.regime))
    p = sub.add_parser("sample-path", parents=[common], help="simulated equilibrium path(s)")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--regime", type=int, default=0, help="initial joint regime index 0..3")
    p.set_defaults(func=lambda cfg, out, a: cmd_sample_path(cfg, out, a.count, a.regime))
    p = sub.add_parser("default-config", parents=[common], help="print the default configuration")
    p.set_defaults(func=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.ModelConfig()
        cfg = cfg.with_engine(seed=args.seed, law=args.law, engine=args.engine,
                              out=str(args.out) if args.out else None,
                              threads=args.threads, n_paths=args.paths)
        if args.func is None:
            sys.stdout.write(cfgmod.dumps(cfg))
            return 0
        out = Path(cfg.engine.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(cfg, out, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if out is not None:
            (out / "diagnostics.txt").write_text(traceback.format_exc())
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
