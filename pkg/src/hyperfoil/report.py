"""Static PNG figures for a run directory (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SERIES_COLUMNS = {
    "kgz": ("sup_E", "sup_tE", "sup_n", "n_weighted"),
    "qwkg": ("sup_v", "sup_tv", "sup_ddw", "sup_s_ddw"),
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_series(archive, out: Path) -> Path | None:
    S = archive.series
    cols = [c for c in SERIES_COLUMNS[archive.kind] if c in S]
    if not cols or len(S.get("t", ())) < 2:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    t = np.asarray(S["t"])
    for c in cols:
        y = np.abs(np.asarray(S[c], dtype=float))
        keep = y > 0
        ax.loglog(t[keep], y[keep], label=c)
    ax.set_xlabel("t")
    ax.set_title("sup norms on the cone interior")
    ax.legend(fontsize=8)
    return _save(fig, out / "series.png")


def plot_energies(archive, out: Path) -> list[Path]:
    H = archive.hyper
    if H is None or not H.reports:
        return []
    paths = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for comp in archive.names:
        reps = archive.reports(comp)
        if reps:
            ax.semilogy([r.s for r in reps], [max(r.expr1, 1e-300) for r in reps], marker="o", ms=3, label=comp)
    ax.set_xlabel("s")
    ax.set_title("hyperboloidal energy")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out / "energies.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    for comp in archive.names:
        reps = archive.reports(comp)
        if reps:
            ax.semilogy([r.s for r in reps], [max(r.spread, 1e-16) for r in reps], marker="o", ms=3, label=comp)
    ax.axhline(1e-3, color="k", lw=0.8, ls="--")
    ax.set_xlabel("s")
    ax.set_title("spread of the three energy expressions")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out / "spread.png"))
    return paths


def render_run(archive, out_dir) -> list[Path]:
    """Write the standard figures into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = plot_series(archive, out)
    if p is not None:
        paths.append(p)
    paths += plot_energies(archive, out)
    return paths


def plot_fits(fits, out_dir) -> list[Path]:
    """One log-log panel per decay fit; the per-word growth fits are left to ``fits.csv``."""
    out = Path(out_dir)
    paths = []
    for f in fits:
        if f.name.startswith("growth["):
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.loglog(f.x, f.y, "o", ms=3)
        ax.loglog(f.x, f.fitted(f.x), "-", label=f"p = {f.exponent:.3f}")
        ax.set_title(f.name, fontsize=9)
        ax.legend(fontsize=8)
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in f.name)
        paths.append(_save(fig, out / f"fit_{safe}.png"))
    return paths
