"""Command-line entry point: ``hyperfoil run|verify|identities|sweep``.

Exit codes: 0 success, 2 a selected check failed, 3 the evolution produced
NaN/Inf or lost hyperbolicity, 4 the configuration was rejected.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .grid import NonFiniteFieldError

EXIT_OK, EXIT_CHECK, EXIT_BLOWUP, EXIT_CONFIG = 0, 2, 3, 4
SWEEP_PARAMETERS = ("eps", "h", "dt")

log = logging.getLogger("hyperfoil")


def _config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_run(args) -> int:
    from .archive import run_system

    cfg = _config(args.config)
    arch = run_system(args.system, cfg, out_dir=args.out, threads=args.threads)
    print(f"wrote {args.out} ({arch.manifest['steps']} steps, {arch.manifest['wall_clock_s']} s)")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .archive import RunArchive
    from .report import plot_fits
    from .verify import run_checks

    try:
        arch = RunArchive.load(args.run_dir)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    selection = [c for c in args.checks.split(",") if c] if args.checks else None
    try:
        ledger = run_checks(arch, selection)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    ledger.write(args.run_dir)
    if arch.config.figures:
        plot_fits(ledger.fits, args.run_dir)
    for e in ledger.entries:
        val = next((v for v in (e.exponent, e.constant, e.margin_min) if v is not None), float("nan"))
        print(f"{'PASS' if e.passed else 'FAIL'}  {e.name:<34s} {val:.4g}")
    return EXIT_OK if ledger.passed else EXIT_CHECK


def identity_table(gamma: float, hs, t: float = 4.0, order: int = 2) -> list[dict]:
    """Boost-identity residuals over a resolution ladder with observed orders."""
    from .calculus import check_exact_weight_identities
    from .grid import Grid

    rows = []
    for h in hs:
        grid = Grid.covering(t + 1.0, h)
        rep = check_exact_weight_identities(grid, t, gamma, order=order)
        rows.append({"h": h, **rep})
    for a, b in zip(rows, rows[1:]):
        for k in rows[0]:
            if k == "h":
                continue
            if a[k] > 1e-11 and b[k] > 1e-11:
                b[f"order:{k}"] = float(np.log(a[k] / b[k]) / np.log(a["h"] / b["h"]))
    return rows


def cmd_identities(args) -> int:
    hs = [float(x) for x in args.resolution_ladder.split(",")]
    rows = identity_table(args.gamma, hs, args.t, args.order)
    keys = [k for k in rows[0] if k != "h"]
    print("h        " + "  ".join(f"{k:>16s}" for k in keys))
    for r in rows:
        print(f"{r['h']:<8g} " + "  ".join(f"{r[k]:16.3e}" for k in keys))
    for r in rows[1:]:
        orders = [r.get(f"order:{k}") for k in keys]
        print(f"order    " + "  ".join(f"{o:16.2f}" if o is not None else f"{'-':>16s}" for o in orders))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "identities.json").write_text(json.dumps(rows, indent=2))
    return EXIT_OK


def sweep_rows(parameter: str, values, cfg: RunConfig, out: Path | None, threads: int | None = None) -> list[dict]:
    from .archive import run_system
    from .verify import fit_decay

    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
    rows = []
    for v in values:
        c = dataclasses.replace(cfg, **{parameter: float(v)})
        if parameter == "h":
            c = dataclasses.replace(c, nx=2 * int(np.ceil(cfg.extent / c.h)) + 1)
        run_dir = out / f"{parameter}={v:g}" if out is not None else None
        arch = run_system("kgz", c, out_dir=run_dir, threads=threads, figures=False)
        t, y = arch.series["t"], arch.series["sup_E"]
        try:
            p = fit_decay(t, y).exponent
        except ValueError:
            p = float("nan")
        rows.append({"parameter": parameter, "value": float(v), "sup_E_max": float(y.max()),
                     "sup_E_final": float(y[-1]), "sup_E_max_over_value": float(y.max() / v) if v else float("nan"),
                     "decay_exponent": p, "wall_clock_s": arch.manifest["wall_clock_s"]})
    return rows


def cmd_sweep(args) -> int:
    from .archive import write_csv

    cfg = _config(args.config)
    values = [float(x) for x in args.values.split(",")]
    out = Path(args.out) if args.out else None
    rows = sweep_rows(args.parameter, values, cfg, out, args.threads)
    keys = list(rows[0])
    if out is not None:
        write_csv(out / "sweep.csv", keys, ([r[k] for k in keys] for r in rows))
    print("  ".join(f"{k:>20s}" for k in keys[1:]))
    for r in rows:
        print("  ".join(f"{r[k]:20.6g}" for k in keys[1:]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperfoil", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evolve a system and write a run directory")
    r.add_argument("system", choices=("kgz", "qwkg"))
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run inequality checks on a run directory")
    v.add_argument("run_dir")
    v.add_argument("--checks", help="comma-separated check groups (default: all)")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("identities", help="boost-identity residuals on analytic samples")
    i.add_argument("--gamma", type=float, default=0.5)
    i.add_argument("--resolution-ladder", default="0.1,0.05,0.025")
    i.add_argument("--t", type=float, default=4.0)
    i.add_argument("--order", type=int, default=2, choices=(2, 4))
    i.add_argument("--out")
    i.set_defaults(func=cmd_identities)

    s = sub.add_parser("sweep", help="repeat a KGZ run over one parameter")
    s.add_argument("--parameter", required=True, choices=SWEEP_PARAMETERS)
    s.add_argument("--values", required=True)
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteFieldError, FloatingPointError) as exc:
        print(f"blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
