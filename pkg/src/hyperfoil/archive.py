"""Run orchestration: evolution, streaming diagnostics, and the on-disk archive.

A run directory holds::

    config.txt        the effective configuration
    series.csv        fixed-t sup norms and flat energies, one row per level
    energies.csv      three energy expressions per (s, component)
    hyperboloid.csv   per-s integrals and sups from the streaming recorder
    sources.csv       source norms on the dense s grid
    ghost.csv         pointwise ghost-identity residuals at the probe times
    residual.csv      un-reduced KGZ residuals (KGZ runs only)
    slices.npz        base hyperboloid slices (if kept)
    manifest.json     hashes, versions, timings, status
    checkpoints/      HYPF snapshots (if enabled)
"""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calculus import words_up_to
from .config import RunConfig, dump_config, parse_config
from .grid import Field, Grid, integrate, laplacian_array, partial, write_snapshot
from .hyperboloid import (BASE_KEYS, KGZ_FINE_NEED, EnergyReport, HyperboloidRecord, HyperboloidRecorder,
                          HyperboloidSlice, kgz_probe, kgz_source_probe, qwkg_probe, slice_time, support_radius)
from .runner import Level, evolve, pump

log = logging.getLogger(__name__)

MARGIN = 1.5  # sup norms use r <= t - MARGIN


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: Path) -> dict[str, np.ndarray | list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = col
    return out


# --- consumers ---------------------------------------------------------------------

def flat_energy_density(u, ut, h, m):
    g1 = np.diff(u, axis=0, append=0.0) / h
    g2 = np.diff(u, axis=1, append=0.0) / h
    return ut * ut + g1 * g1 + g2 * g2 + m * m * u * u


class SeriesRecorder:
    """Fixed-t sup norms (over ``r <= t - 1.5``) and flat energies."""

    def __init__(self, kind: str, grid: Grid, order: int, masses: dict, coeffs=None):
        self.kind, self.grid, self.order = kind, grid, order
        self.masses = masses
        self.coeffs = coeffs
        self.rows: list[dict] = []

    def consume(self, lev: Level):
        g, t = self.grid, lev.t
        inside = g.r <= t - MARGIN
        tr = np.maximum(t - g.r, 1.0)

        def sup(a):
            return float(np.abs(a[inside]).max()) if inside.any() else 0.0

        row = {"t": t}
        if self.kind == "kgz":
            E = np.hypot(lev.value[0], lev.value[1])
            n = laplacian_array(lev.value[2], g.h, self.order)
            row.update(sup_E=sup(E), sup_tE=sup(t * E), sup_n=sup(n),
                       n_weighted=sup(n * np.sqrt(t) * np.sqrt(tr)))
        else:
            from .evolve_qwkg import hessian, smallness_ratio

            v, w = lev.value
            H = hessian(w, lev.rate[1], lev.accel[1], g.h, self.order)
            ddw = np.abs(H).max(axis=(0, 1))
            s = np.sqrt(np.maximum(t * t - g.r**2, 0.0))
            dv = [lev.rate[0], partial(v, g.h, 1, 0, self.order), partial(v, g.h, 0, 1, self.order)]
            Q = self.coeffs.Q(v, dv)
            row.update(sup_v=sup(v), sup_tv=sup(t * v), sup_ddw=sup(ddw), sup_s_ddw=sup(s * ddw),
                       gate_ratio=smallness_ratio(Q, g, t, MARGIN))
        for i, name in enumerate(lev.names):
            row[f"flat_{name}"] = integrate(flat_energy_density(lev.value[i], lev.rate[i], g.h, self.masses[name]), g.h)
        self.rows.append(row)

    def finish(self):
        pass

    def arrays(self) -> dict[str, np.ndarray]:
        if not self.rows:
            return {}
        return {k: np.array([r[k] for r in self.rows]) for k in self.rows[0]}


def ghost_identity_residual(prev: Level, cur: Level, nxt: Level, grid: Grid, gamma: float, comp: int,
                            order: int = 2, r_min: float = 0.5, gap: float = MARGIN) -> dict[str, float]:
    """Pointwise residual of the ghost-weight multiplier identity.

    With ``w = (t - r)^(-gamma)`` the identity reads::

        (u_tt - Lap u) w u_t = 1/2 d_t(w (u_t^2 + |grad u|^2)) - d_a(w u_a u_t)
                               + gamma/2 (t - r)^(-1-gamma) sum_a ((x_a/r) u_t + u_a)^2

    The time derivative is a centred difference over the neighbouring
    levels and the divergence a stencil of the product, so the residual is
    O(dt^2) + O(h^order).  Evaluated on ``r_min <= r <= t - gap``.
    """
    h, t, dt = grid.h, cur.t, cur.t - prev.t
    r = grid.r
    region = (r >= r_min) & (r <= t - gap)

    def weight(T):
        return np.maximum(T - r, 1.0) ** (-gamma)

    def dens(L):
        u = L.value[comp]
        g1, g2 = partial(u, h, 1, 0, order), partial(u, h, 0, 1, order)
        return weight(L.t) * (L.rate[comp] ** 2 + g1 * g1 + g2 * g2)

    u, ut, utt = cur.value[comp], cur.rate[comp], cur.accel[comp]
    g = [partial(u, h, 1, 0, order), partial(u, h, 0, 1, order)]
    w = weight(t)
    lhs = (utt - laplacian_array(u, h, order)) * w * ut
    d_t = 0.5 * (dens(nxt) - dens(prev)) / (2.0 * dt)
    div = partial(w * g[0] * ut, h, 1, 0, order) + partial(w * g[1] * ut, h, 0, 1, order)
    with np.errstate(divide="ignore", invalid="ignore"):
        tr = np.maximum(t - r, 1.0)
        rem = 0.5 * gamma * tr ** (-1.0 - gamma) * sum((grid.unit_radial(a + 1) * ut + g[a]) ** 2 for a in range(2))
    res = lhs - (d_t - div + rem)
    if not region.any():
        return {"t": t, "residual": 0.0, "scale": 0.0, "remainder_min": 0.0}
    return {"t": t, "residual": float(np.abs(res[region]).max()), "scale": float(np.abs(lhs[region]).max()),
            "remainder_min": float(rem[region].min())}


class TripleProbe:
    """Calls ``fn(prev, cur, nxt)`` around selected level indices."""

    def __init__(self, targets, fn):
        self.targets = sorted(set(int(k) for k in targets))
        self.fn = fn
        self.window: list[Level] = []
        self.results: list[dict] = []

    def consume(self, lev: Level):
        self.window = (self.window + [lev])[-3:]
        if len(self.window) == 3 and self.window[1].index in self.targets:
            self.results.append(self.fn(*self.window))

    def finish(self):
        pass


class Checkpointer:
    def __init__(self, out_dir: Path, every: int, grid: Grid):
        self.dir = Path(out_dir) / "checkpoints"
        self.every, self.grid = every, grid
        self.paths: list[str] = []

    def consume(self, lev: Level):
        if lev.index % self.every:
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        for i, name in enumerate(lev.names):
            for tag, arr in (("", lev.value[i]), ("d", lev.rate[i])):
                p = self.dir / f"{tag}{name}_{lev.index:06d}.hypf"
                write_snapshot(p, Field(self.grid, np.array(arr)), lev.t)
                self.paths.append(str(p))

    def finish(self):
        pass


# --- the archive ---------------------------------------------------------------------

@dataclass
class RunArchive:
    kind: str
    config: RunConfig
    series: dict[str, np.ndarray]
    hyper: HyperboloidRecord | None
    ghost: list[dict] = field(default_factory=list)
    residual: list[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def grid(self) -> Grid:
        return Grid(self.config.nx, self.config.nx, self.config.h)

    @property
    def names(self) -> tuple[str, ...]:
        return ("E1", "E2", "nDelta") if self.kind == "kgz" else ("v", "w")

    def reports(self, component: str) -> list[EnergyReport]:
        return [r for r in self.hyper.reports if r.component == component] if self.hyper else []

    def save(self, out_dir, figures: bool | None = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg = self.config
        (out / "config.txt").write_text(dump_config(cfg))
        files = ["config.txt"]
        if self.series:
            keys = list(self.series)
            write_csv(out / "series.csv", keys, zip(*(self.series[k] for k in keys)))
            files.append("series.csv")
        if self.hyper is not None:
            H = self.hyper
            write_csv(out / "energies.csv",
                      ["s", "component", "m", "expr1", "expr2", "expr3", "ghost_gamma", "ghost_value"],
                      [(r.s, r.component, r.m, r.expr1, r.expr2, r.expr3, r.ghost_gamma, r.ghost_value)
                       for r in H.reports])
            cols = sorted(H.sums) + sorted(f"max:{k}" for k in H.maxes)
            data = [H.sums[k] for k in sorted(H.sums)] + [H.maxes[k] for k in sorted(H.maxes)]
            write_csv(out / "hyperboloid.csv", ["s"] + cols, zip(H.s, *data))
            files += ["energies.csv", "hyperboloid.csv"]
            if len(H.fine_s):
                keys = sorted(H.fine_sums)
                write_csv(out / "sources.csv", ["s"] + keys, zip(H.fine_s, *(H.fine_sums[k] for k in keys)))
                files.append("sources.csv")
            if H.slices:
                save_slices(out / "slices.npz", H.slices)
                files.append("slices.npz")
        if self.ghost:
            keys = list(self.ghost[0])
            write_csv(out / "ghost.csv", keys, ([g[k] for k in keys] for g in self.ghost))
            files.append("ghost.csv")
        if self.residual:
            keys = list(self.residual[0])
            write_csv(out / "residual.csv", keys, ([g[k] for k in keys] for g in self.residual))
            files.append("residual.csv")
        draw = cfg.figures if figures is None else figures
        if draw:
            from .report import render_run

            files += [str(Path(p).relative_to(out)) for p in render_run(self, out)]
        self.manifest["outputs"] = files
        (out / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True, default=_json_default))
        self.path = out
        return out

    @classmethod
    def load(cls, run_dir) -> "RunArchive":
        d = Path(run_dir)
        if not (d / "manifest.json").exists():
            raise FileNotFoundError(f"{d} is not a run directory (no manifest.json)")
        manifest = json.loads((d / "manifest.json").read_text())
        cfg = parse_config((d / "config.txt").read_text(), str(d / "config.txt"))
        series = read_csv(d / "series.csv") if (d / "series.csv").exists() else {}
        hyper = None
        if (d / "hyperboloid.csv").exists():
            hc = read_csv(d / "hyperboloid.csv")
            s = hc.pop("s")
            sums = {k: v for k, v in hc.items() if not k.startswith("max:")}
            maxes = {k[4:]: v for k, v in hc.items() if k.startswith("max:")}
            fine_s, fine = np.zeros(0), {}
            if (d / "sources.csv").exists():
                fc = read_csv(d / "sources.csv")
                fine_s = fc.pop("s")
                fine = fc
            ec = read_csv(d / "energies.csv")
            reports = []
            for i in range(len(ec["s"])):
                reports.append(EnergyReport(ec["s"][i], ec["component"][i], ec["m"][i], ec["expr1"][i],
                                            ec["expr1"][i], ec["expr2"][i], ec["expr3"][i], {},
                                            _num(ec["ghost_gamma"][i]), _num(ec["ghost_value"][i])))
            grid = Grid(cfg.nx, cfg.nx, cfg.h)
            slices = load_slices(d / "slices.npz", grid, cfg.order) if (d / "slices.npz").exists() else []
            hyper = HyperboloidRecord(s, sums, maxes, fine_s, fine, slices, reports)
        ghost = _rows(d / "ghost.csv")
        residual = _rows(d / "residual.csv")
        return cls(manifest.get("kind", "kgz"), cfg, series, hyper, ghost, residual, manifest, d)


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def _rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    cols = read_csv(path)
    n = len(next(iter(cols.values())))
    return [{k: v[i] for k, v in cols.items()} for i in range(n)]


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def save_slices(path: Path, slices: list[HyperboloidSlice]):
    payload = {"s": np.array([sl.s for sl in slices])}
    bounds = []
    for i, sl in enumerate(slices):
        bounds.append((sl.grid.origin[0], sl.grid.origin[1], sl.grid.nx, sl.grid.ny))
        for c, arrs in sl.comps.items():
            for k, a in arrs.items():
                payload[f"{i}/{c}/{k}"] = a
    payload["bounds"] = np.array(bounds, dtype=float)
    np.savez(path, **payload)


def load_slices(path: Path, grid: Grid, order: int) -> list[HyperboloidSlice]:
    with np.load(path) as z:
        s_vals, bounds = z["s"], z["bounds"]
        keys = [k for k in z.files if "/" in k]
        out = []
        for i, (s, b) in enumerate(zip(s_vals, bounds)):
            sub = Grid(int(b[2]), int(b[3]), grid.h, (float(b[0]), float(b[1])))
            comps: dict = {}
            for k in keys:
                idx, c, key = k.split("/")
                if int(idx) == i:
                    comps.setdefault(c, {})[key] = z[k]
            valid = sub.r <= support_radius(s) + 1e-12
            out.append(HyperboloidSlice(float(s), sub, slice_time(s, sub.r), valid, comps, order))
    return out


# --- entry point -----------------------------------------------------------------------

def resolve_threads(threads: int | None, cfg: RunConfig | None = None) -> int:
    if threads is None:
        env = os.environ.get("HYPERFOIL_THREADS")
        threads = int(env) if env else (cfg.threads if cfg is not None else 1)
    return max(1, int(threads))


def fine_s_values(cfg: RunConfig, factor: int = 4) -> np.ndarray:
    return np.linspace(cfg.s_min, cfg.s_max, (cfg.n_hyperboloids - 1) * factor + 1)


def build_run(kind: str, cfg: RunConfig, grid: Grid | None = None):
    """System, initial state array, masses and probes for ``kind``."""
    grid = grid or Grid(cfg.nx, cfg.nx, cfg.h)
    if kind == "kgz":
        from .evolve_kgz import KgzSystem, initial_data_kgz

        st = initial_data_kgz(cfg, grid)
        system = KgzSystem(grid, cfg.order)
        masses = {"E1": 1.0, "E2": 1.0, "nDelta": 0.0}
        return system, st.data, masses, None
    if kind == "qwkg":
        from .evolve_qwkg import Coeffs, QwkgSystem, initial_data_qwkg

        st = initial_data_qwkg(cfg, grid)
        coeffs = Coeffs.from_config(cfg)
        system = QwkgSystem(grid, coeffs, cfg.order)
        return system, st.data, {"v": 1.0, "w": 0.0}, coeffs
    raise ValueError(f"unknown system {kind!r}")


def run_system(kind: str, cfg: RunConfig, out_dir=None, threads: int | None = None,
               figures: bool | None = None) -> RunArchive:
    """Evolve ``kind`` ("kgz" or "qwkg") with every diagnostic attached."""
    cfg.validate()
    if cfg.n_hyperboloids and (cfg.s_min < cfg.t0 or cfg.s_max > np.sqrt(2 * cfg.t_final - 1) + 1e-12):
        raise ValueError("hyperboloid range must lie in [t0, sqrt(2 t_final - 1)]")
    threads = resolve_threads(threads, cfg)
    grid = Grid(cfg.nx, cfg.nx, cfg.h)
    system, U0, masses, coeffs = build_run(kind, cfg, grid)
    nsteps = int(round((cfg.t_final - cfg.t0) / cfg.dt))
    series = SeriesRecorder(kind, grid, cfg.order, masses, coeffs)
    consumers = [series]
    recorder = None
    if cfg.n_hyperboloids:
        words = words_up_to(cfg.words_order)
        if kind == "kgz":
            probe = kgz_probe(cfg.gamma, cfg.delta, words)
            fine, fprobe, fneed = fine_s_values(cfg), kgz_source_probe(cfg.gamma), KGZ_FINE_NEED
        else:
            probe, fine, fprobe, fneed = qwkg_probe(coeffs), None, None, None
        recorder = HyperboloidRecorder(grid, system.names, cfg.hyperboloid_times(), masses, cfg.order, words,
                                       probe, fine, fprobe, fneed, cfg.gamma, MARGIN, cfg.keep_slices)
        consumers.append(recorder)
    ghost = None
    if kind == "kgz" and cfg.ghost_times:
        targets = [int(round((t - cfg.t0) / cfg.dt)) for t in cfg.ghost_times]
        targets = [k for k in targets if 0 < k < nsteps]
        ghost = TripleProbe(targets, lambda a, b, c: ghost_identity_residual(a, b, c, grid, cfg.gamma, 2, cfg.order))
        consumers.append(ghost)
    resid = None
    if kind == "kgz":
        from .evolve_kgz import unreduced_residual

        every = max(1, nsteps // 8)
        resid = TripleProbe(range(every, nsteps, every),
                            lambda a, b, c: {"t": b.t, **unreduced_residual(a, b, c, grid, cfg.order)})
        consumers.append(resid)
    if cfg.checkpoint_every and out_dir is not None:
        consumers.append(Checkpointer(Path(out_dir), cfg.checkpoint_every, grid))

    start = time.perf_counter()
    status = "ok"
    try:
        pump(evolve(system, U0, cfg.t0, cfg.dt, cfg.t_final), consumers, threads)
    finally:
        wall = time.perf_counter() - start
    manifest = {
        "kind": kind,
        "config_hash": cfg.digest(),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "grid": {"nx": cfg.nx, "h": cfg.h, "order": cfg.order, "extent": cfg.extent},
        "dt": cfg.dt,
        "eps": cfg.eps,
        "seed": cfg.seed,
        "threads": threads,
        "steps": nsteps,
        "wall_clock_s": round(wall, 3),
        "status": status,
    }
    arch = RunArchive(kind, cfg, series.arrays(), recorder.record if recorder else None,
                      ghost.results if ghost else [], resid.results if resid else [], manifest)
    if out_dir is not None:
        arch.save(out_dir, figures)
    return arch
