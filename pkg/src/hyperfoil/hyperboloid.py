"""Hyperboloid slices ``H_s = {t^2 = s^2 + r^2}`` and their energy functionals.

Grid nodes are kept fixed in ``x``; only time is interpolated.  Two routes
produce slices: :func:`slice_onto_hyperboloid` works on an in-memory
:class:`~hyperfoil.calculus.Slab`, while :class:`HyperboloidRecorder`
consumes the level stream of a run and never holds more than a handful of
levels.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calculus import Slab, _time_derivative, assemble_word, required_partials, word_name, words_up_to
from .grid import STENCILS_1D, Grid, integrate, pairwise_sum_rows, partial
from .runner import Level

log = logging.getLogger(__name__)

BASE_KEYS = ("value", "d0", "d1", "d2")
SPREAD_TOL = 1e-3
BOOST_WORDS = ((), (1,), (2,), (1, 1), (1, 2), (2, 1), (2, 2))


def support_radius(s: float) -> float:
    """Largest ``r`` on ``H_s`` inside the cone ``r <= t - 1``."""
    return 0.5 * (s * s - 1.0)


def slice_time(s: float, r):
    return np.sqrt(s * s + np.asarray(r, dtype=float) ** 2)


def slice_bounds(grid: Grid, s: float, pad: int = 4) -> tuple[int, int, int, int]:
    """Index box of ``grid`` holding ``H_s`` plus ``pad`` nodes (at least 16 per axis)."""
    R = support_radius(s) + pad * grid.h
    out = []
    for n, x in ((grid.nx, grid.x1[:, 0]), (grid.ny, grid.x2[0, :])):
        lo = int(np.searchsorted(x, -R - 1e-9, "left"))
        hi = int(np.searchsorted(x, R + 1e-9, "right"))
        while hi - lo < 16:
            lo, hi = max(lo - 1, 0), min(hi + 1, n)
            if lo == 0 and hi == n:
                break
        out += [lo, hi]
    return tuple(out)


def cubic_weights(theta: np.ndarray) -> np.ndarray:
    """Lagrange weights on nodes 0..3 at fractional positions ``theta``."""
    th = np.asarray(theta, dtype=float)
    return np.stack([
        -(th - 1.0) * (th - 2.0) * (th - 3.0) / 6.0,
        th * (th - 2.0) * (th - 3.0) / 2.0,
        -th * (th - 1.0) * (th - 3.0) / 2.0,
        th * (th - 1.0) * (th - 2.0) / 6.0,
    ])


@dataclass
class HyperboloidSlice:
    """Samples of every component at ``(t(x), x)`` on a cropped grid.

    ``comps[name]`` maps ``value``, ``d0``, ``d1``, ``d2`` (and possibly
    extra keys) to arrays on ``grid``; nodes outside ``valid`` hold zeros.
    """

    s: float
    grid: Grid
    t: np.ndarray
    valid: np.ndarray
    comps: dict[str, dict[str, np.ndarray]]
    order: int = 2

    @property
    def s_over_t(self) -> np.ndarray:
        return self.s / self.t

    @property
    def t_minus_r(self) -> np.ndarray:
        return self.t - self.grid.r

    @property
    def node_count(self) -> int:
        return int(self.valid.sum())

    def tangential(self, values: np.ndarray, a: int) -> np.ndarray:
        """``d_a`` of a function restricted to the slice, by spatial stencil."""
        return partial(np.where(self.valid, values, 0.0), self.grid.h, a == 1, a == 2, self.order)

    def boost(self, values: np.ndarray, a: int) -> np.ndarray:
        """``L_a`` along ``H_s``: the boosts are tangent, so ``L_a u = t d_a u~``."""
        return np.where(self.valid, self.t * self.tangential(values, a), 0.0)

    def boost_words(self, component: str) -> dict[tuple[int, ...], np.ndarray]:
        """``L^J u`` for every boost sequence of length at most 2."""
        u = self.comps[component]["value"]
        out = {(): u}
        for a in (1, 2):
            out[(a,)] = self.boost(u, a)
        for a in (1, 2):
            for b in (1, 2):
                out[(b, a)] = self.boost(out[(a,)], b)
        return out


@dataclass
class EnergyReport:
    """Natural energy of one component on ``H_s`` by all three expressions."""

    s: float
    component: str
    m: float
    total: float
    expr1: float
    expr2: float
    expr3: float
    terms: dict[str, float] = field(default_factory=dict)
    ghost_gamma: float | None = None
    ghost_value: float | None = None
    flagged: bool = False

    @property
    def spread(self) -> float:
        """Largest pairwise relative difference of the three expressions."""
        vals = [v for v in (self.expr1, self.expr2, self.expr3) if np.isfinite(v)]
        scale = max((abs(v) for v in vals), default=0.0)
        if scale == 0.0:
            return 0.0
        return (max(vals) - min(vals)) / scale


# --- slab route ----------------------------------------------------------------

def _level_rate(slab: Slab, comp: str, k: int) -> np.ndarray:
    if comp in slab.rates:
        return slab.rates[comp][k]
    vals, dt, K = slab.values[comp], slab.dt, len(slab.times)
    if k == 0:
        return (-3.0 * vals[0] + 4.0 * vals[1] - vals[2]) / (2.0 * dt)
    if k == K - 1:
        return (3.0 * vals[k] - 4.0 * vals[k - 1] + vals[k - 2]) / (2.0 * dt)
    return _time_derivative(slab, (), comp, k)


def slice_onto_hyperboloid(slab: Slab, s: float, components: Sequence[str] | None = None) -> HyperboloidSlice:
    """Interpolate slab data onto ``H_s`` with 4-point cubics in time.

    Raises:
        ValueError: the slab does not cover ``[s, (s^2 + 1)/2]``.
    """
    t_lo, t_hi = s, 0.5 * (s * s + 1.0)
    times = slab.times
    tol = 1e-9 * max(1.0, t_hi)
    if times[0] > t_lo + tol or times[-1] < t_hi - tol:
        raise ValueError(
            f"slab window [{times[0]:g}, {times[-1]:g}] does not cover the required window "
            f"[{t_lo:g}, {t_hi:g}] for s={s:g}")
    components = list(components or slab.values)
    i0, i1, j0, j1 = slice_bounds(slab.grid, s)
    sub = slab.grid.crop(i0, i1, j0, j1)
    R = support_radius(s)
    valid = sub.r <= R + 1e-12
    tau = slice_time(s, sub.r)
    K, dt = len(times), slab.dt
    base = np.clip(np.floor((tau - times[0]) / dt).astype(int) - 1, 0, K - 4)
    lam = cubic_weights((tau - times[base]) / dt)
    kmin, kmax = int(base[valid].min()) if valid.any() else 0, int(base[valid].max()) + 3 if valid.any() else 3
    base = np.where(valid, base, kmin)  # masked nodes are zeroed below
    crop = (slice(None), slice(i0, i1), slice(j0, j1))
    comps = {}
    for c in components:
        stacks = {key: np.zeros((kmax - kmin + 1,) + sub.shape) for key in BASE_KEYS}
        for k in range(kmin, kmax + 1):
            v = slab.values[c][k]
            stacks["value"][k - kmin] = v[crop[1:]]
            stacks["d0"][k - kmin] = _level_rate(slab, c, k)[crop[1:]]
            stacks["d1"][k - kmin] = partial(v, slab.grid.h, 1, 0, slab.order)[crop[1:]]
            stacks["d2"][k - kmin] = partial(v, slab.grid.h, 0, 1, slab.order)[crop[1:]]
        out = {}
        for key, st in stacks.items():
            acc = np.zeros(sub.shape)
            for q in range(4):
                acc += lam[q] * np.take_along_axis(st, (base - kmin + q)[None], axis=0)[0]
            out[key] = np.where(valid, acc, 0.0)
        comps[c] = out
    return HyperboloidSlice(s, sub, tau, valid, comps, slab.order)


def analytic_slice(grid: Grid, s: float, funcs: dict[str, Sequence[Callable]], order: int = 2) -> HyperboloidSlice:
    """Slice from closed forms ``(u, u_t, u_1, u_2)`` of ``(t, x1, x2)``."""
    i0, i1, j0, j1 = slice_bounds(grid, s)
    sub = grid.crop(i0, i1, j0, j1)
    valid = sub.r <= support_radius(s) + 1e-12
    tau = slice_time(s, sub.r)
    comps = {}
    for name, fns in funcs.items():
        comps[name] = {key: np.where(valid, np.broadcast_to(fn(tau, sub.x1, sub.x2), sub.shape), 0.0)
                       for key, fn in zip(BASE_KEYS, fns)}
    return HyperboloidSlice(s, sub, tau, valid, comps, order)


# --- functionals -----------------------------------------------------------------

def energy_m(slice_: HyperboloidSlice, component: str, m: float, order: int | None = None,
             gamma: float | None = None) -> EnergyReport:
    """All three expressions of the natural energy ``E_m(s, phi)``.

    Expression 1 uses the samples ``(phi_t, phi_a)`` only.  Expressions 2 and
    3 take the tangential derivatives ``d_a phi~`` and ``Omega_12 phi~`` of
    the sliced function by spatial stencil, so on a discrete slice they
    differ from expression 1 at truncation order.
    """
    sl = slice_
    if order is not None and order != sl.order:
        sl = HyperboloidSlice(sl.s, sl.grid, sl.t, sl.valid, sl.comps, order)
    C = sl.comps[component]
    h, t, x = sl.grid.h, sl.t, (sl.grid.x1, sl.grid.x2)
    phi, pt, p1, p2 = (C[k] for k in BASE_KEYS)
    st = sl.s_over_t
    mass = m * m * phi * phi
    tan1, tan2 = sl.tangential(phi, 1), sl.tangential(phi, 2)
    omega = x[0] * tan2 - x[1] * tan1
    perp = pt + (x[0] * p1 + x[1] * p2) / t

    def q(d):
        return integrate(np.where(sl.valid, d, 0.0), h)

    terms = {
        "1:dt^2": q(pt * pt),
        "1:sum da^2": q(p1 * p1 + p2 * p2),
        "1:cross": q(2.0 * (x[0] * p1 + x[1] * p2) / t * pt),
        "2:(s/t dt)^2": q((st * pt) ** 2),
        "2:sum tangential^2": q(tan1 * tan1 + tan2 * tan2),
        "3:perp^2": q(perp * perp),
        "3:sum (s/t da)^2": q(st * st * (p1 * p1 + p2 * p2)),
        "3:(Omega/t)^2": q((omega / t) ** 2),
        "mass": q(mass),
    }
    e1 = terms["1:dt^2"] + terms["1:sum da^2"] + terms["1:cross"] + terms["mass"]
    e2 = terms["2:(s/t dt)^2"] + terms["2:sum tangential^2"] + terms["mass"]
    e3 = terms["3:perp^2"] + terms["3:sum (s/t da)^2"] + terms["3:(Omega/t)^2"] + terms["mass"]
    rep = EnergyReport(sl.s, component, m, e1, e1, e2, e3, terms)
    if gamma is not None:
        rep.ghost_gamma = gamma
        rep.ghost_value = ghost_energy(sl, component, gamma)
    if rep.spread > 10 * SPREAD_TOL:
        rep.flagged = True
        log.warning("energy expressions disagree on s=%g (%s): spread %.3g", sl.s, component, rep.spread)
    return rep


def ghost_energy(slice_: HyperboloidSlice, component: str, gamma: float) -> float:
    """``int (t - r)^(-gamma) (s/t)^2 |d u|^2 dx`` over ``H_s``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    sl = slice_
    C = sl.comps[component]
    grad2 = C["d0"] ** 2 + C["d1"] ** 2 + C["d2"] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(sl.valid, np.maximum(sl.t_minus_r, 1.0) ** (-gamma), 0.0)
    return integrate(w * sl.s_over_t ** 2 * grad2, sl.grid.h)


def lp_norm_f(slice_: HyperboloidSlice, component: str, p: float, key: str = "value") -> float:
    """``(sum |phi|^p h^2)^(1/p)`` over valid nodes; ``p = inf`` gives the max."""
    vals = np.abs(slice_.comps[component][key][slice_.valid])
    if vals.size == 0:
        return 0.0
    if np.isinf(p):
        return float(vals.max())
    if p < 1:
        raise ValueError("p must be >= 1")
    return integrate(vals**p, slice_.grid.h) ** (1.0 / p)


# --- streaming recorder ------------------------------------------------------------

class _Sheets:
    """Node tables of a set of hyperboloids, sorted by slice time."""

    def __init__(self, grid: Grid, s_values, need: dict[str, set]):
        self.s = np.asarray(s_values, dtype=float)
        self.need = need
        r = grid.r.ravel()
        self.idx, self.tau = [], []
        for s in self.s:
            sel = np.flatnonzero(r <= support_radius(s) + 1e-12)
            tau = slice_time(s, r[sel])
            o = np.argsort(tau, kind="stable")
            self.idx.append(sel[o].astype(np.int64))
            self.tau.append(tau[o])
        self.sums: dict[str, np.ndarray] = {}
        self.maxes: dict[str, np.ndarray] = {}

    def band(self, t_lo: float, t_hi: float | None):
        parts, taus, segs = [], [], []
        start = 0
        for i in range(len(self.s)):
            lo = np.searchsorted(self.tau[i], t_lo, "left")
            hi = len(self.tau[i]) if t_hi is None else np.searchsorted(self.tau[i], t_hi, "left")
            parts.append(self.idx[i][lo:hi])
            taus.append(self.tau[i][lo:hi])
            segs.append((start, start + hi - lo))
            start += hi - lo
        if start == 0:
            return None
        return np.concatenate(parts), np.concatenate(taus), segs

    def accumulate(self, sums: dict, maxes: dict, segs, h: float):
        """Add band integrals (``h^2`` times pairwise sums) and running maxima."""
        n = len(self.s)
        if sums:
            names = sorted(sums)
            mat = np.stack([np.broadcast_to(sums[k], (segs[-1][1],)) for k in names])
            for k in names:
                self.sums.setdefault(k, np.zeros(n))
            for i, (a, b) in enumerate(segs):
                if b > a:
                    tot = h * h * pairwise_sum_rows(mat[:, a:b])
                    for k, v in zip(names, tot):
                        self.sums[k][i] += v
        for k, arr in maxes.items():
            acc = self.maxes.setdefault(k, np.zeros(n))
            for i, (a, b) in enumerate(segs):
                if b > a:
                    acc[i] = max(acc[i], float(np.max(arr[a:b])))


@dataclass
class NodeContext:
    """Per-node data handed to probes: slice time, coordinates, partials."""

    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    s: np.ndarray
    partials: dict[str, dict]
    margin: float

    @property
    def r(self):
        return np.hypot(self.x1, self.x2)

    @property
    def inside(self):
        return self.r <= self.t - self.margin

    def word(self, comp: str, w: Sequence[str]) -> np.ndarray:
        return np.broadcast_to(assemble_word(tuple(w), self.partials[comp], self.t, self.x1, self.x2), self.t.shape)


def masked_max(values, inside) -> np.ndarray:
    return np.where(inside, np.abs(values), 0.0)


@dataclass
class HyperboloidRecord:
    """Everything the recorder extracted from a run."""

    s: np.ndarray
    sums: dict[str, np.ndarray]
    maxes: dict[str, np.ndarray]
    fine_s: np.ndarray
    fine_sums: dict[str, np.ndarray]
    slices: list[HyperboloidSlice]
    reports: list[EnergyReport]


class HyperboloidRecorder:
    """Streams levels into hyperboloid integrals, sups and base slices.

    When level ``L`` arrives the time interval ``[t_{L-3}, t_{L-2}]`` is
    processed: every node whose slice time lies in it is interpolated with
    a cubic through levels ``L-4 .. L-1`` (shifted at the ends).  Spacetime
    partials up to third order are gathered at those nodes with product
    stencils; second time derivatives come from the evolution right-hand
    side and third ones from centred differences of it.  Integrals are
    pairwise sums per band, added in time order.

    Args:
        grid: evolution grid.
        names: component names in level order.
        s_values: hyperbolic times for the full probe set and base slices.
        masses: mass per component (1 Klein-Gordon, 0 wave).
        probe: ``probe(ctx) -> (sums, maxes)`` for the main sheets.
        words: words whose energies are accumulated.
        fine_s / fine_probe: optional dense set of sheets with a cheap probe
            (source norms for the ``ds`` integrals).
    """

    def __init__(self, grid: Grid, names: Sequence[str], s_values, masses: dict[str, float],
                 order: int = 2, words=None, probe=None, fine_s=None, fine_probe=None,
                 fine_need: dict | None = None, gamma: float = 0.5, margin: float = 1.5,
                 keep_slices: bool = True):
        self.grid = grid
        self.names = tuple(names)
        self.order = order
        self.masses = dict(masses)
        self.words = list(words if words is not None else words_up_to(2))
        self.gamma = gamma
        self.margin = margin
        self.keep_slices = keep_slices
        self.probe = probe
        self.fine_probe = fine_probe
        need = sorted(required_partials(self.words, extra=1))
        self.main = _Sheets(grid, s_values, {c: set(need) for c in self.names})
        self.fine = None
        if fine_s is not None and fine_probe is not None:
            self.fine = _Sheets(grid, fine_s, fine_need or {c: {(0, 0, 0), (1, 0, 0)} for c in self.names})
        self.buffer: dict[int, Level] = {}
        self._accel_rate: dict[int, np.ndarray] = {}
        self.done = 0  # next interval to process
        self.last = -1
        self._slices = []
        for s in self.main.s:
            i0, i1, j0, j1 = slice_bounds(grid, s)
            shape = (i1 - i0, j1 - j0)
            self._slices.append(((i0, i1, j0, j1), {c: {k: np.zeros(shape) for k in BASE_KEYS} for c in self.names}))
        self.record: HyperboloidRecord | None = None

    # level bookkeeping
    def consume(self, level: Level):
        if level.index != self.last + 1:
            raise ValueError(f"levels must arrive in order (expected {self.last + 1}, got {level.index})")
        self.buffer[level.index] = level
        self.last = level.index
        if level.index == 0:
            self.t0, self.dt = level.t, None
        elif level.index == 1:
            self.dt = level.t - self.t0
        while self.done <= self.last - 3:
            self._process(self.done, final=False)
            self.done += 1
            for k in [k for k in self.buffer if k < self.done - 2]:
                del self.buffer[k]
                self._accel_rate.pop(k, None)

    def finish(self):
        if self.last < 3:
            raise ValueError("the hyperboloid recorder needs at least 4 time levels")
        t_end = self.t0 + self.last * self.dt
        for sheets in (self.main, self.fine):
            if sheets is not None and len(sheets.s):
                need = 0.5 * (float(np.max(sheets.s)) ** 2 + 1.0)
                if need > t_end + 1e-9 * max(1.0, t_end):
                    raise ValueError(f"levels end at t={t_end:g} but H_s with s={np.max(sheets.s):g} "
                                     f"reaches t={need:g}")
        while self.done <= self.last - 1:
            self._process(self.done, final=self.done == self.last - 1)
            self.done += 1
        self.record = self._build()
        return self.record

    def _time(self, k):
        return self.t0 + k * self.dt

    def _src(self, k: int, nt: int, c: int) -> np.ndarray:
        lev = self.buffer[k]
        if nt == 0:
            return lev.value[c]
        if nt == 1:
            return lev.rate[c]
        if nt == 2:
            return lev.accel[c]
        if nt == 3:
            if k not in self._accel_rate:
                lo, hi = min(self.buffer), self.last
                A = lambda j: self.buffer[j].accel  # noqa: E731
                if k == lo:
                    val = (-3.0 * A(k) + 4.0 * A(k + 1) - A(k + 2)) / (2.0 * self.dt)
                elif k == hi:
                    val = (3.0 * A(k) - 4.0 * A(k - 1) + A(k - 2)) / (2.0 * self.dt)
                else:
                    val = (A(k + 1) - A(k - 1)) / (2.0 * self.dt)
                self._accel_rate[k] = val
            return self._accel_rate[k][c]
        raise ValueError(f"time derivatives of order {nt} are not available")

    def _gather(self, sheets: _Sheets, j: int, final: bool):
        t_lo = self._time(j)
        got = sheets.band(t_lo, None if final else self._time(j + 1))
        if got is None:
            return None
        idx, tau, segs = got
        base = min(max(j - 1, 0), self.last - 3)
        lam = cubic_weights((tau - self._time(base)) / self.dt)
        nx, ny = self.grid.shape
        ix, iy = np.divmod(idx, ny)
        h = self.grid.h
        partials = {}
        for ci, c in enumerate(self.names):
            cache = {}

            def samp(nt, di, dj):
                key = (nt, di, dj)
                if key not in cache:
                    jx = np.clip(ix + di, 0, nx - 1)
                    jy = np.clip(iy + dj, 0, ny - 1)
                    acc = lam[0] * self._src(base, nt, ci)[jx, jy]
                    for q in range(1, 4):
                        acc = acc + lam[q] * self._src(base + q, nt, ci)[jx, jy]
                    cache[key] = acc
                return cache[key]

            out = {}
            for m in sheets.need[c]:
                nt, n1, n2 = m
                w1, w2 = STENCILS_1D[(n1, self.order)], STENCILS_1D[(n2, self.order)]
                p1, p2 = len(w1) // 2, len(w2) // 2
                acc = 0.0
                for a, wa in enumerate(w1):
                    if wa == 0.0:
                        continue
                    for b, wb in enumerate(w2):
                        if wb != 0.0:
                            acc = acc + (wa * wb) * samp(nt, a - p1, b - p2)
                out[m] = acc / h ** (n1 + n2)
            partials[c] = out
        x1 = self.grid.x1.ravel()[idx]
        x2 = self.grid.x2.ravel()[idx]
        s_node = np.empty(len(idx))
        for i, (a, b) in enumerate(segs):
            s_node[a:b] = sheets.s[i]
        ctx = NodeContext(tau, x1, x2, s_node, partials, self.margin)
        return ctx, idx, segs

    def _process(self, j: int, final: bool):
        got = self._gather(self.main, j, final)
        if got is not None:
            ctx, idx, segs = got
            sums, maxes = self._word_energies(ctx)
            if self.probe is not None:
                s2, m2 = self.probe(ctx)
                sums.update(s2)
                maxes.update(m2)
            self.main.accumulate(sums, maxes, segs, self.grid.h)
            self._store(ctx, idx, segs)
        if self.fine is not None:
            got = self._gather(self.fine, j, final)
            if got is not None:
                ctx, _, segs = got
                s2, m2 = self.fine_probe(ctx)
                self.fine.accumulate(s2, m2, segs, self.grid.h)

    def _word_energies(self, ctx: NodeContext):
        sums = {}
        t, x1, x2 = ctx.t, ctx.x1, ctx.x2
        for c in self.names:
            m2 = self.masses[c] ** 2
            for w in self.words:
                phi = ctx.word(c, w)
                d0, d1, d2 = (ctx.word(c, (f"d{a}",) + tuple(w)) for a in range(3))
                dens = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * (x1 * d1 + x2 * d2) / t * d0 + m2 * phi * phi
                sums[f"E[{c}:{word_name(w)}]"] = dens
        return sums, {}

    def _store(self, ctx: NodeContext, idx, segs):
        nx, ny = self.grid.shape
        ix, iy = np.divmod(idx, ny)
        vals = {c: {"value": ctx.partials[c][(0, 0, 0)], "d0": ctx.partials[c][(1, 0, 0)],
                    "d1": ctx.partials[c][(0, 1, 0)], "d2": ctx.partials[c][(0, 0, 1)]} for c in self.names}
        for i, (a, b) in enumerate(segs):
            if b == a:
                continue
            (i0, _, j0, _), arrs = self._slices[i]
            for c in self.names:
                for k in BASE_KEYS:
                    arrs[c][k][ix[a:b] - i0, iy[a:b] - j0] = vals[c][k][a:b]

    def _build(self) -> HyperboloidRecord:
        slices, reports = [], []
        for s, ((i0, i1, j0, j1), arrs) in zip(self.main.s, self._slices):
            sub = self.grid.crop(i0, i1, j0, j1)
            valid = sub.r <= support_radius(s) + 1e-12
            sl = HyperboloidSlice(float(s), sub, slice_time(s, sub.r), valid, arrs, self.order)
            for c in self.names:
                reports.append(energy_m(sl, c, self.masses[c], gamma=self.gamma))
            slices.append(sl)
        fine_s = self.fine.s if self.fine is not None else np.zeros(0)
        fine_sums = dict(self.fine.sums) if self.fine is not None else {}
        rec = HyperboloidRecord(self.main.s, dict(self.main.sums), dict(self.main.maxes), fine_s, fine_sums,
                                slices if self.keep_slices else [], reports)
        return rec


# --- probes for the two systems ------------------------------------------------------

def kgz_probe(gamma: float = 0.5, delta: float = 1.0 / 32.0, words=None):
    """Pointwise quantities on the main sheets of a KGZ run."""
    words = list(words if words is not None else words_up_to(2))

    def probe(ctx: NodeContext):
        P = ctx.partials
        t, r, inside = ctx.t, ctx.r, ctx.inside
        tr = np.maximum(t - r, 1.0)
        E1, E2 = P["E1"][(0, 0, 0)], P["E2"][(0, 0, 0)]
        nD = P["nDelta"]
        n = nD[(0, 2, 0)] + nD[(0, 0, 2)]
        Eabs = np.hypot(E1, E2)
        maxes = {
            "E_sup": masked_max(Eabs, inside),
            "tE_sup": masked_max(t * Eabs, inside),
            "n_sup": masked_max(n, inside),
            "n_weighted": masked_max(n * np.sqrt(t) * np.sqrt(t - r), inside),
        }
        # |d d u| against (t-r)^-1 (|d L u| + |d u|) + t/(t-r) |Box u| for u = nDelta
        dd = sum((1 + (a != b)) * nD[_m(a, b)] ** 2 for a in range(3) for b in range(a, 3))
        du = sum(nD[_m(a)] ** 2 for a in range(3))
        dL = sum(ctx.word("nDelta", (f"d{al}", f"L{a}")) ** 2 for al in range(3) for a in (1, 2))
        box = -nD[(2, 0, 0)] + n
        maxes["ddu_ratio"] = np.where(inside, second_derivative_ratio(dd, du, dL, box, t, r), 0.0)
        # |d d^I L^J nDelta| s (t-r)^(-2 delta)
        weight = ctx.s * tr ** (-2.0 * delta)
        best = np.zeros_like(t)
        for w in words:
            for al in range(3):
                best = np.maximum(best, np.abs(ctx.word("nDelta", (f"d{al}",) + tuple(w))))
        maxes["n12_2"] = np.where(inside, best * weight, 0.0)
        return {}, maxes

    return probe


def second_derivative_ratio(dd2, du2, dL2, box, t, r):
    """``|d d u| / ((t-r)^-1 (|d L u| + |d u|) + t/(t-r) |Box u|)``.

    Args:
        dd2: sum of squares of all second partials ``d_a d_b u``.
        du2: sum of squares of ``d_a u``.
        dL2: sum of squares of ``d_a L_b u``.
        box: ``-u_tt + Lap u``.
        t, r: node coordinates; ``t - r`` is floored at 1.

    Returns:
        The pointwise ratio, 0 where the right-hand side vanishes.
    """
    tr = np.maximum(t - r, 1.0)
    rhs = (np.sqrt(dL2) + np.sqrt(du2)) / tr + t / tr * np.abs(box)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rhs > 0, np.sqrt(dd2) / rhs, 0.0)


def _m(*axes) -> tuple[int, int, int]:
    m = [0, 0, 0]
    for a in axes:
        m[a] += 1
    return tuple(m)


KGZ_FINE_NEED = {
    "E1": {(0, 0, 0), (1, 0, 0)},
    "E2": {(0, 0, 0), (1, 0, 0)},
    "nDelta": {(0, 0, 0), (1, 0, 0), (0, 2, 0), (0, 0, 2)},
}


def kgz_source_probe(gamma: float = 0.5):
    """Source norms on a dense set of sheets, for the ``ds`` integrals."""

    def probe(ctx: NodeContext):
        P = ctx.partials
        t, r = ctx.t, ctx.r
        st = ctx.s / t
        tr = np.maximum(t - r, 1.0)
        E = [P["E1"][(0, 0, 0)], P["E2"][(0, 0, 0)]]
        nD = P["nDelta"]
        n = nD[(0, 2, 0)] + nD[(0, 0, 2)]
        f = {"E1": n * E[0], "E2": n * E[1], "nDelta": E[0] ** 2 + E[1] ** 2}
        sums = {}
        for c, fc in f.items():
            sums[f"src2[{c}]"] = fc * fc
            sums[f"src_dt[{c}]"] = st * np.abs(P[c][(1, 0, 0)]) * np.abs(fc)
        sums["ghost_src"] = st * tr ** (-gamma) * f["nDelta"] * nD[(1, 0, 0)]
        return sums, {}

    return probe


def qwkg_probe(coeffs):
    """Pointwise quantities on the main sheets of a quasilinear run."""
    from .evolve_qwkg import SMALLNESS

    def probe(ctx: NodeContext):
        P = ctx.partials
        t, inside = ctx.t, ctx.inside
        v = P["v"][(0, 0, 0)]
        dv = [P["v"][_m(a)] for a in range(3)]
        W = P["w"]
        ddw = np.zeros_like(t)
        for a in range(3):
            for b in range(a, 3):
                ddw = np.maximum(ddw, np.abs(W[_m(a, b)]))
        Q = coeffs.Q(v, dv)
        qmax = np.abs(Q).max(axis=(0, 1))
        st2 = (ctx.s / t) ** 2
        return {}, {
            "v_sup": masked_max(v, inside),
            "tv_sup": masked_max(t * v, inside),
            "ddw_sup": masked_max(ddw, inside),
            "gate": np.where(inside, qmax / (SMALLNESS * st2), 0.0),
            "Q_sup": np.where(ctx.t > 0, qmax, 0.0),
        }

    return probe
