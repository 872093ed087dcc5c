"""Inequality checks, decay regressions and refinement studies over run archives.

Implicit constants are never assumed: each check reports the empirical
constant (largest observed ratio) or margin, and stability across
resolutions is tested by the ladder helpers at the bottom.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .archive import MARGIN, RunArchive, ghost_identity_residual, run_system
from .calculus import word_name, words_up_to
from .config import RunConfig
from .grid import Grid, integrate
from .hyperboloid import HyperboloidSlice, analytic_slice, support_radius
from .runner import evolve

log = logging.getLogger(__name__)

FIT_START = 5.0
GROWTH_SLACK = 0.05


# --- regression ------------------------------------------------------------------------

@dataclass
class DecayFit:
    """Least-squares power law ``y ~ C x^p`` on log-log data."""

    name: str
    x: np.ndarray
    y: np.ndarray
    window: tuple[float, float]
    exponent: float
    intercept: float
    band: tuple[float, float]
    rms: float
    n: int

    def fitted(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.exponent


class InsufficientDataError(ValueError):
    """The run is too short or too sparse for the requested check."""


def fit_decay(x, y, window: tuple[float, float] | None = None, name: str = "") -> DecayFit:
    """Fit ``log y = a + p log x`` over ``window`` (default ``[5, max x]``).

    Returns:
        DecayFit with the exponent ``p`` and its 95% confidence band.

    Raises:
        ValueError: fewer than three positive samples in the window.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = window if window is not None else (FIT_START, float(x.max()))
    sel = (x >= lo - 1e-12) & (x <= hi + 1e-12) & (y > 0) & np.isfinite(y)
    if sel.sum() < 3:
        raise InsufficientDataError(f"fit {name!r}: need at least 3 positive samples in [{lo:g}, {hi:g}], got {int(sel.sum())}")
    lx, ly = np.log(x[sel]), np.log(y[sel])
    res = stats.linregress(lx, ly)
    n = int(sel.sum())
    if n > 2 and np.isfinite(res.stderr):
        half = stats.t.ppf(0.975, n - 2) * res.stderr
    else:
        half = 0.0
    rms = float(np.sqrt(np.mean((ly - (res.intercept + res.slope * lx)) ** 2)))
    return DecayFit(name, x[sel], y[sel], (lo, hi), float(res.slope), float(res.intercept),
                    (float(res.slope - half), float(res.slope + half)), rms, n)


# --- ledger --------------------------------------------------------------------------------

@dataclass
class LedgerEntry:
    name: str
    reference: str
    passed: bool
    constant: float | None = None
    margin_min: float | None = None
    exponent: float | None = None
    detail: dict = field(default_factory=dict)


@dataclass
class InequalityLedger:
    entries: list[LedgerEntry] = field(default_factory=list)
    fits: list[DecayFit] = field(default_factory=list)

    def add(self, entry: LedgerEntry, fit: DecayFit | None = None) -> LedgerEntry:
        self.entries.append(entry)
        if fit is not None:
            self.fits.append(fit)
        return entry

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __getitem__(self, name: str) -> LedgerEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def as_json(self) -> list[dict]:
        out = []
        for e in self.entries:
            d = dataclasses.asdict(e)
            d["pass"] = d.pop("passed")
            out.append(d)
        return out

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        p1 = out / "ledger.json"
        p1.write_text(json.dumps(self.as_json(), indent=2, default=_jsonable))
        p2 = out / "fits.csv"
        with open(p2, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fit", "x", "y", "fitted", "exponent", "band_lo", "band_hi"])
            for f in self.fits:
                for xi, yi in zip(f.x, f.y):
                    w.writerow([f.name, repr(float(xi)), repr(float(yi)), repr(float(f.fitted(xi))),
                                repr(f.exponent), repr(f.band[0]), repr(f.band[1])])
        return [p1, p2]


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# --- helpers over archives -----------------------------------------------------------------

def _energy_series(arch: RunArchive, component: str) -> tuple[np.ndarray, np.ndarray]:
    reps = arch.reports(component)
    return np.array([r.s for r in reps]), np.array([r.expr1 for r in reps])


def _cumulative(s_fine: np.ndarray, dens: np.ndarray, s_at: np.ndarray) -> np.ndarray:
    """``int_{s_fine[0]}^{s} dens ds`` (trapezoid) evaluated at ``s_at``."""
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s_fine))])
    return np.interp(s_at, s_fine, cum)


def _need_hyper(arch: RunArchive):
    if arch.hyper is None:
        raise InsufficientDataError("run has no hyperboloid diagnostics (verify.n_hyperboloids = 0)")
    return arch.hyper


# --- checks on a single run --------------------------------------------------------------------

def _fit(x, y, name: str) -> DecayFit | None:
    """Fit over the standard window; ``None`` for an identically zero series."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if not np.any(y):
        return None
    return fit_decay(x, y, (FIT_START, float(x.max())), name)


def _trivial(name: str, ref: str) -> LedgerEntry:
    return LedgerEntry(name, ref, True, detail={"note": "identically zero series"})


def check_decay(arch: RunArchive, column: str, target: float, tol: float, name: str, ref: str,
                x_column: str = "t") -> tuple[LedgerEntry, DecayFit | None]:
    fit = _fit(arch.series[x_column], arch.series[column], name)
    if fit is None:
        return _trivial(name, ref), None
    ok = abs(fit.exponent - target) <= tol
    return LedgerEntry(name, ref, ok, exponent=fit.exponent,
                       detail={"target": target, "tol": tol, "band": fit.band, "window": fit.window}), fit


def check_decay_E(arch, ledger):
    e, f = check_decay(arch, "sup_E", -1.0, 0.15, "decay_E", "pointwise decay of E like 1/t")
    ledger.add(e, f)


def check_decay_n(arch, ledger):
    e, f = check_decay(arch, "n_weighted", 0.0, 0.10, "decay_n_weighted",
                       "|n| bounded by t^-1/2 (t-r)^-1/2, sup over fixed-t slices")
    ledger.add(e, f)
    H = arch.hyper
    if H is not None and "n_weighted" in H.maxes:
        f2 = _fit(H.s, H.maxes["n_weighted"], "decay_n_weighted_Hs")
        if f2 is None:
            return
        ledger.add(LedgerEntry("decay_n_weighted_Hs", "same bound, sup over hyperboloids (reported alongside)",
                               abs(f2.exponent) <= 0.10, exponent=f2.exponent,
                               detail={"band": f2.band, "axis": "s"}), f2)


def check_uniform_energy(arch, ledger, s_from: float = 3.0, tol: float = 0.10):
    s, e1 = _energy_series(arch, "E1")
    _, e2 = _energy_series(arch, "E2")
    amp = np.sqrt(e1 + e2)
    sel = s >= s_from - 1e-12
    ref = amp[sel][0]
    drift = float(np.abs(amp[sel] / ref - 1.0).max()) if ref > 0 else 0.0
    ledger.add(LedgerEntry("uniform_energy_E", "low-order Klein-Gordon energy of E stays bounded",
                           drift <= tol, constant=drift, detail={"s_from": s_from, "tol": tol}))


def word_energy_series(arch: RunArchive, group: Sequence[str], word) -> np.ndarray:
    H = _need_hyper(arch)
    return sum(H.sums[f"E[{c}:{word_name(word)}]"] for c in group)


def check_energy_growth(arch, ledger, delta: float | None = None):
    """Growth exponents of ``E_1(s, d^I L^J E)^(1/2)`` and ``E(s, d^I L^J nDelta)^(1/2)``."""
    H = _need_hyper(arch)
    delta = arch.config.delta if delta is None else delta
    cap = delta + GROWTH_SLACK
    worst = {}
    groups = {"E": ("E1", "E2"), "nDelta": ("nDelta",)} if arch.kind == "kgz" else {"v": ("v",), "w": ("w",)}
    for gname, comps in groups.items():
        for w in words_up_to(arch.config.words_order):
            y = np.sqrt(np.maximum(word_energy_series(arch, comps, w), 0.0))
            if not (y > 0).any():
                continue
            f = _fit(H.s, y, f"growth[{gname}:{word_name(w)}]")
            worst[f.name] = f.exponent
            ledger.fits.append(f)
    top = max(worst.values()) if worst else 0.0
    ledger.add(LedgerEntry("energy_growth", "high-order energies grow at most like s^delta", top <= cap,
                           exponent=top, detail={"cap": cap, "exponents": worst}))


def check_energy_equivalence(arch, ledger, tol: float = 1e-3):
    spreads = [(r.s, r.component, r.spread) for r in _need_hyper(arch).reports]
    worst = max((sp for _, _, sp in spreads), default=0.0)
    ledger.add(LedgerEntry("energy_equivalence", "three equivalent expressions of the hyperboloidal energy",
                           worst <= tol, constant=worst,
                           detail={"tol": tol, "per_slice": [[s, c, sp] for s, c, sp in spreads]}))


def _sources(arch):
    H = _need_hyper(arch)
    if not len(H.fine_s):
        raise ValueError("run has no source-norm sheets")
    return H


def check_energy_inequality_I(arch, ledger, component: str, m: float, tol: float = 1e-2):
    """``E_m(s)^(1/2) <= E_m(s0)^(1/2) + int ||-Box phi + m^2 phi||_{L^2_f} ds``."""
    H = _sources(arch)
    s, E = _energy_series(arch, component)
    norm = np.sqrt(np.maximum(H.fine_sums[f"src2[{component}]"], 0.0))
    rhs = np.sqrt(E[0]) + _cumulative(H.fine_s, norm, s)
    lhs = np.sqrt(E)
    _ineq_entry(ledger, f"energy_inequality_I[{component}]", "hyperboloidal energy estimate, square-root form",
                s, lhs, rhs, tol)


def check_energy_inequality_II(arch, ledger, component: str, m: float, tol: float = 1e-2):
    """``E_m(s) <= E_m(s0) + int int (s/t)|d_t phi||-Box phi + m^2 phi| dx ds``."""
    H = _sources(arch)
    s, E = _energy_series(arch, component)
    rhs = E[0] + _cumulative(H.fine_s, H.fine_sums[f"src_dt[{component}]"], s)
    _ineq_entry(ledger, f"energy_inequality_II[{component}]", "hyperboloidal energy estimate, weighted form",
                s, E, rhs, tol)


def _ineq_entry(ledger, name, ref, s, lhs, rhs, tol):
    with np.errstate(divide="ignore", invalid="ignore"):
        margin = np.where(rhs > 0, (rhs - lhs) / rhs, 0.0)
    ok = bool(np.all(lhs <= rhs * (1.0 + tol)))
    # both sides coincide at s0, so the informative margin starts at the next slice
    m = margin[1:] if len(margin) > 1 else margin
    ledger.add(LedgerEntry(name, ref, ok, margin_min=float(m.min()),
                           detail={"tol": tol, "s": s, "lhs": lhs, "rhs": rhs}))


def check_ghost_integrated(arch, ledger, tol: float = 1e-2):
    """``int w (s/t)^2 |du|^2 <= 2 E(s0, u) + 4 int int (s/t) w f u_t`` for ``u = nDelta``."""
    H = _sources(arch)
    reps = arch.reports("nDelta")
    s = np.array([r.s for r in reps])
    lhs = np.array([r.ghost_value for r in reps])
    rhs = 2.0 * reps[0].expr1 + 4.0 * _cumulative(H.fine_s, H.fine_sums["ghost_src"], s)
    _ineq_entry(ledger, "ghost_integrated", "ghost-weight energy estimate", s, lhs, rhs, tol)


def check_ghost_identity(arch, ledger):
    rows = arch.ghost
    if not rows:
        return
    worst = max(r["residual"] for r in rows)
    nonneg = all(r["remainder_min"] >= 0 for r in rows)
    ledger.add(LedgerEntry("ghost_identity", "pointwise ghost-weight multiplier identity", nonneg,
                           constant=worst, detail={"rows": rows,
                                                   "note": "convergence is judged by ghost_ladder"}))


def check_second_derivative_bound(arch, ledger):
    H = _need_hyper(arch)
    ratio = H.maxes.get("ddu_ratio")
    if ratio is None:
        return
    C = float(np.max(ratio))
    ledger.add(LedgerEntry("second_derivative_bound", "second derivatives of a wave bounded via d L u and Box u",
                           bool(np.isfinite(C)), constant=C, detail={"per_s": ratio}))


def check_energy_bounds(arch, ledger, delta: float | None = None):
    """Energy growth caps plus the weighted pointwise bound on ``d d^I L^J nDelta``."""
    check_energy_growth(arch, ledger, delta)
    H = _need_hyper(arch)
    delta = arch.config.delta if delta is None else delta
    if "n12_2" in H.maxes:
        f = _fit(H.s, H.maxes["n12_2"], "pointwise_nDelta_weighted")
        if f is None:
            return
        ledger.add(LedgerEntry("pointwise_nDelta_weighted", "|d d^I L^J nDelta| <~ s^-1 (t-r)^(2 delta)",
                               f.exponent <= delta + GROWTH_SLACK, exponent=f.exponent,
                               detail={"band": f.band}), f)


def check_unreduced_residual(arch, ledger):
    if not arch.residual:
        return
    worst = {k: max(r[k] for r in arch.residual) for k in ("n", "E1", "E2")}
    ledger.add(LedgerEntry("unreduced_residual", "reduced solution satisfies the original system",
                           all(np.isfinite(v) for v in worst.values()), constant=max(worst.values()),
                           detail=worst))


# --- Sobolev-type inequalities ---------------------------------------------------------------------

SOBOLEV_KINDS = ("sobolev1", "sobolev2", "sobolev3")


def sobolev_ratios(sl: HyperboloidSlice, component: str, gamma: float = 0.5) -> dict[str, float]:
    """LHS / RHS of the three Sobolev-type inequalities on one slice."""
    u = sl.comps[component]["value"]
    if not np.any(u[sl.valid]):
        return {}
    words = sl.boost_words(component)
    h, t, valid = sl.grid.h, sl.t, sl.valid
    st = sl.s / t
    w = np.maximum(sl.t_minus_r, 1.0) ** (-gamma)

    def l2(a):
        return np.sqrt(integrate(np.where(valid, a * a, 0.0), h))

    lhs = {
        "sobolev1": np.abs(t * u)[valid].max(),
        "sobolev2": np.abs(sl.s * u)[valid].max(),
        "sobolev3": np.abs(sl.s * w * u)[valid].max(),
    }
    rhs = {
        "sobolev1": sum(l2(L) for L in words.values()),
        "sobolev2": sum(l2(st * L) for L in words.values()),
        "sobolev3": sum(l2(st * w * L) for L in words.values()),
    }
    return {k: float(lhs[k] / rhs[k]) for k in SOBOLEV_KINDS if rhs[k] > 0}


def sobolev_constants(slices: Iterable[tuple[HyperboloidSlice, str]], gamma: float = 0.5) -> dict[str, float]:
    best = {k: 0.0 for k in SOBOLEV_KINDS}
    for sl, comp in slices:
        for k, v in sobolev_ratios(sl, comp, gamma).items():
            best[k] = max(best[k], v)
    return best


def random_bump_slices(h: float, count: int = 50, seed: int = 0, s_choices=(3.0, 4.0, 5.0)):
    """Seeded family of compact bumps placed on hyperboloid slices.

    Each bump is ``A * bump(|x - c| / rho)``, independent of ``t``, with its
    support inside ``r <= (s^2 - 1)/2``.  The same seed gives the same
    family at any ``h``.
    """
    from .evolve_kgz import bump

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        s = float(rng.choice(s_choices))
        R = support_radius(s)
        rho = rng.uniform(0.25, 0.5) * R
        cr = rng.uniform(0.0, R - rho)
        ang = rng.uniform(0.0, 2 * np.pi)
        c = (cr * np.cos(ang), cr * np.sin(ang))
        A = rng.uniform(0.1, 2.0)
        grid = Grid.covering(R + 1.0, h)

        def u(t, x1, x2, c=c, rho=rho, A=A):
            return A * bump(np.hypot(x1 - c[0], x2 - c[1]), rho)

        zero = lambda t, x1, x2: 0.0 * x1  # noqa: E731
        out.append((analytic_slice(grid, s, {"u": (u, zero, zero, zero)}), "u"))
    return out


def check_sobolev(slices, ledger, gamma: float = 0.5, name: str = "sobolev", reference: dict | None = None,
                  tol: float = 0.20) -> dict[str, float]:
    """Empirical constants; with ``reference`` (another resolution) also stability."""
    C = sobolev_constants(slices, gamma)
    if reference is None:
        ok = all(np.isfinite(v) for v in C.values())
        ledger.add(LedgerEntry(name, "Sobolev-type inequalities on hyperboloids", ok,
                               constant=max(C.values()), detail={"constants": C}))
    else:
        change = {k: abs(C[k] - reference[k]) / reference[k] for k in C if reference.get(k)}
        ok = all(v <= tol for v in change.values())
        ledger.add(LedgerEntry(name, "Sobolev-type inequalities on hyperboloids", ok,
                               constant=max(C.values()), margin_min=tol - max(change.values(), default=0.0),
                               detail={"constants": C, "reference": reference, "relative_change": change}))
    return C


def archive_slices(arch: RunArchive, components: Sequence[str] | None = None):
    H = _need_hyper(arch)
    comps = components or arch.names
    return [(sl, c) for sl in H.slices for c in comps]


# --- quasilinear checks -------------------------------------------------------------------------

def check_qwkg(arch: RunArchive, ledger: InequalityLedger):
    from .evolve_qwkg import Coeffs, quasilinear_energy

    ledger.add(LedgerEntry("no_blowup", "global existence (desk-scale surrogate)",
                           arch.manifest.get("status", "ok") == "ok"))
    e, f = check_decay(arch, "sup_v", -1.0, 0.15, "decay_v", "pointwise decay of v like 1/t")
    ledger.add(e, f)
    H = _need_hyper(arch)
    f2 = _fit(H.s, H.maxes["ddw_sup"] * H.s, "ddw_times_s")
    if f2 is None:
        ledger.add(_trivial("ddw_times_s", "|d d w| <~ 1/s"))
    else:
        ledger.add(LedgerEntry("ddw_times_s", "|d d w| <~ 1/s", abs(f2.exponent) <= 0.10, exponent=f2.exponent,
                               detail={"band": f2.band}), f2)
    coeffs = Coeffs.from_config(arch.config)
    gated, ratios = [], []
    for sl, gate in zip(H.slices, H.maxes["gate"]):
        rep = quasilinear_energy(sl, coeffs, arch.config.order)
        base = rep.terms["E1(s,v)"] + rep.terms["E(s,w)"]
        if base <= 0:
            continue
        ratios.append(rep.total / base)
        if gate < 1.0:
            gated.append(rep.total / base)
    in_band = lambda xs: all(0.5 <= x <= 2.0 for x in xs)  # noqa: E731
    ledger.add(LedgerEntry("quasilinear_equivalence", "energy equivalence under the smallness condition",
                           in_band(gated) and in_band(ratios),
                           constant=max(ratios, default=1.0), margin_min=min(ratios, default=1.0),
                           detail={"gated_ratios": gated, "all_ratios": ratios,
                                   "slices_with_gate": len(gated), "slices": len(ratios)}))


# --- registry ---------------------------------------------------------------------------------

def _kgz_checks():
    def ineq(a, L):
        for c, m in (("E1", 1.0), ("E2", 1.0), ("nDelta", 0.0)):
            check_energy_inequality_I(a, L, c, m)
            check_energy_inequality_II(a, L, c, m)

    return {
        "decay": lambda a, L: (check_decay_E(a, L), check_decay_n(a, L)),
        "energy": lambda a, L: (check_uniform_energy(a, L), check_energy_equivalence(a, L)),
        "growth": lambda a, L: check_energy_bounds(a, L),
        "inequalities": ineq,
        "ghost": lambda a, L: (check_ghost_integrated(a, L), check_ghost_identity(a, L)),
        "sobolev": lambda a, L: check_sobolev(archive_slices(a, ("E1", "E2")), L, a.config.gamma),
        "ddu": check_second_derivative_bound,
        "residual": check_unreduced_residual,
    }


CHECK_GROUPS = {"kgz": tuple(_kgz_checks()), "qwkg": ("qwkg", "growth")}


def run_checks(arch: RunArchive, selection: Sequence[str] | None = None) -> InequalityLedger:
    """Run the selected check groups (all by default) and collect a ledger."""
    ledger = InequalityLedger()
    if arch.kind == "kgz":
        table = _kgz_checks()
    else:
        table = {"qwkg": check_qwkg, "growth": check_energy_growth}
    names = list(selection) if selection else list(table)
    unknown = [n for n in names if n not in table]
    if unknown:
        raise KeyError(f"unknown check(s) {unknown}; available: {sorted(table)}")
    for n in names:
        try:
            table[n](arch, ledger)
        except InsufficientDataError as exc:
            ledger.add(LedgerEntry(n, "check group could not be evaluated", False, detail={"error": str(exc)}))
    return ledger


# --- ladders and refinement -------------------------------------------------------------------

def ladder_config(h: float, t_final: float, cfl: float = 0.4, order: int = 4, **kw) -> RunConfig:
    """Small-domain config with ``X = t_final + 1`` (plus rounding) and ``dt = cfl * h``."""
    dt = cfl * h
    n = int(round((t_final - 2.0) / dt))
    t_final = 2.0 + n * dt
    nx = 2 * int(np.ceil((t_final + 1.0) / h)) + 1
    return RunConfig(nx=nx, h=h, dt=dt, t_final=t_final, order=order, **kw)


LADDER_GAP = 3.5  # trailing edge of the outgoing pulse is at t - r = t0 + radius = 3


def ghost_ladder(hs: Sequence[float] = (0.1, 0.05, 0.025), t_eval: float = 6.0, gamma: float = 0.5,
                 cfl: float = 0.4, order: int = 2, eps: float = 0.01, r_min: float = 0.5,
                 gap: float = LADDER_GAP) -> list[dict]:
    """Pointwise ghost-identity residual at ``t_eval`` across a resolution ladder.

    The check region ``r_min <= r <= t - gap`` sits behind the outgoing
    pulse.  Across the pulse itself the bump's steep edges are not in the
    asymptotic regime at these resolutions and the ratios stall near 2.
    With ``order=2`` the residual is uniformly second order and the ratios
    approach 4; with ``order=4`` the O(h^4) part inflates the coarse ratio.
    """
    from .archive import build_run

    rows = []
    for h in hs:
        cfg = ladder_config(h, t_eval + 2 * cfl * h, cfl, order, eps=eps, n_hyperboloids=0, gamma=gamma)
        grid = Grid(cfg.nx, cfg.nx, h)
        system, U0, _, _ = build_run("kgz", cfg, grid)
        k_eval = int(round((t_eval - cfg.t0) / cfg.dt))
        win = []
        for lev in evolve(system, U0, cfg.t0, cfg.dt, cfg.t_final):
            win = (win + [lev])[-3:]
            if lev.index == k_eval + 1:
                break
        row = ghost_identity_residual(*win, grid, gamma, 2, order, r_min, gap)
        row.update(h=h, dt=cfg.dt)
        rows.append(row)
    for a, b in zip(rows, rows[1:]):
        b["ratio"] = a["residual"] / b["residual"] if b["residual"] > 0 else float("inf")
    return rows


def ladder_passes(rows: list[dict], lo: float = 3.0, hi: float = 5.0) -> bool:
    ratios = [r["ratio"] for r in rows if "ratio" in r]
    return bool(ratios) and all(lo <= q <= hi for q in ratios) and all(r["remainder_min"] >= 0 for r in rows)


def refined(cfg: RunConfig) -> RunConfig:
    """Same physical setup with ``h`` and ``dt`` halved."""
    return dataclasses.replace(cfg, h=cfg.h / 2, dt=cfg.dt / 2, nx=2 * (cfg.nx - 1) + 1)


def refinement_pair(cfg: RunConfig, kind: str = "kgz", threads: int | None = None):
    coarse = run_system(kind, cfg, threads=threads, figures=False)
    fine = run_system(kind, refined(cfg), threads=threads, figures=False)
    return coarse, fine


def spread_shrink(coarse: RunArchive, fine: RunArchive) -> dict:
    """Per-slice ratio of three-expression spreads between two resolutions."""
    a = {(round(r.s, 9), r.component): r.spread for r in coarse.hyper.reports}
    b = {(round(r.s, 9), r.component): r.spread for r in fine.hyper.reports}
    ratios = {k: a[k] / b[k] for k in a if k in b and b[k] > 0}
    return {"ratios": ratios, "min_ratio": min(ratios.values(), default=float("nan")),
            "max_spread_coarse": max(a.values(), default=0.0), "max_spread_fine": max(b.values(), default=0.0)}


def eps_linearity(cfg: RunConfig, eps_pair=(0.005, 0.01), t_max: float = 20.0, threads: int | None = None) -> dict:
    """Ratio of ``sup|E|`` trajectories for two amplitudes over ``[t0, t_max]``."""
    runs = []
    for eps in eps_pair:
        c = dataclasses.replace(cfg, eps=eps, t_final=min(cfg.t_final, t_max), n_hyperboloids=0)
        runs.append(run_system("kgz", c, threads=threads, figures=False))
    scale = eps_pair[1] / eps_pair[0]
    y0, y1 = runs[0].series["sup_E"], runs[1].series["sup_E"]
    sel = y0 > 0
    rel = np.abs(y1[sel] / (scale * y0[sel]) - 1.0)
    return {"t": runs[0].series["t"], "max_relative_deviation": float(rel.max()), "scale": scale,
            "series": (y0, y1)}
