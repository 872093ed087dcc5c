"""Translations, Lorentz boosts and the semi-hyperboloidal frame.

Vector fields act on time-ordered windows of grid data (:class:`Slab`).
Spatial derivatives use the grid stencils; time derivatives use a stored
rate when the component carries one, otherwise centred differences over the
window.  Words are operator products written left to right, so the word
``("d1", "L1")`` means ``d1 (L1 u)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import Grid, Field, partial, ensure_finite

OPERATORS = ("d0", "d1", "d2", "L1", "L2")
MAX_WORD_LENGTH = 2


class UnsupportedOrderError(ValueError):
    pass


def parse_word(word: str | Sequence[str]) -> tuple[str, ...]:
    """Accept ``"L1L2"``, ``"d0 L1"`` or a sequence of operator names."""
    if isinstance(word, str):
        text = word.replace(" ", "").replace(",", "")
        ops = tuple(text[i:i + 2] for i in range(0, len(text), 2))
    else:
        ops = tuple(word)
    for op in ops:
        if op not in OPERATORS:
            raise ValueError(f"unknown vector field {op!r}; expected one of {OPERATORS}")
    return ops


def word_name(word: Sequence[str]) -> str:
    return "".join(word) or "id"


def words_up_to(order: int, partials_first: bool = True) -> list[tuple[str, ...]]:
    """Words ``d^I L^J`` with ``|I| + |J| <= order``.

    Partial derivatives commute, so their multi-indices are taken sorted;
    boosts do not, so every ordering of ``L`` factors is kept.
    """
    out: list[tuple[str, ...]] = [()]
    parts = ("d0", "d1", "d2")
    boosts = ("L1", "L2")
    for n in range(1, order + 1):
        for nd in range(n, -1, -1):
            nl = n - nd
            dfacs = _sorted_multisets(parts, nd)
            lfacs = _sequences(boosts, nl)
            for d in dfacs:
                for l in lfacs:
                    out.append(tuple(d) + tuple(l) if partials_first else tuple(l) + tuple(d))
    return out


def _sorted_multisets(items, n):
    if n == 0:
        return [()]
    out = []
    for i, it in enumerate(items):
        for rest in _sorted_multisets(items[i:], n - 1):
            out.append((it,) + rest)
    return out


def _sequences(items, n):
    if n == 0:
        return [()]
    return [(it,) + rest for it in items for rest in _sequences(items, n - 1)]


@dataclass
class Slab:
    """Uniformly spaced window of time levels.

    ``values[name]`` has shape ``(K, nx, ny)``; ``rates[name]`` optionally
    holds the matching exact or evolved time derivative.
    """

    grid: Grid
    times: np.ndarray
    values: dict[str, np.ndarray]
    rates: dict[str, np.ndarray] = field(default_factory=dict)
    order: int = 2

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 5:
            raise ValueError("a slab needs at least 5 time levels")
        steps = np.diff(self.times)
        if (steps <= 0).any():
            raise ValueError("slab times must be strictly increasing")
        if np.abs(steps - steps[0]).max() > 1e-9 * max(1.0, abs(self.times[-1])):
            raise ValueError("slab times must be uniformly spaced")
        for name, arr in list(self.values.items()) + list(self.rates.items()):
            if arr.shape != (len(self.times),) + self.grid.shape:
                raise ValueError(f"component {name!r} has shape {arr.shape}")
            ensure_finite(arr, what=f"slab component {name!r}")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @classmethod
    def sample(cls, grid: Grid, times: Iterable[float], funcs: dict[str, Callable],
               rates: dict[str, Callable] | None = None, order: int = 2) -> "Slab":
        """Sample closed-form ``f(t, x1, x2)`` on every level."""
        times = np.asarray(list(times), dtype=float)

        def stack(fn):
            return np.stack([np.broadcast_to(fn(t, grid.x1, grid.x2), grid.shape).astype(float) for t in times])

        return cls(grid, times, {k: stack(f) for k, f in funcs.items()},
                   {k: stack(f) for k, f in (rates or {}).items()}, order)


def _check_level(slab: Slab, k: int, reach: int):
    if k - reach < 0 or k + reach >= len(slab.times):
        raise IndexError(f"level {k} needs {reach} neighbour(s) on each side in a window of {len(slab.times)}")


def _eval(slab: Slab, word: tuple[str, ...], comp: str, k: int) -> np.ndarray:
    if not word:
        return slab.values[comp][k]
    op, rest = word[0], word[1:]
    h = slab.grid.h
    if op == "d0":
        return _time_derivative(slab, rest, comp, k)
    if op in ("d1", "d2"):
        n1, n2 = (1, 0) if op == "d1" else (0, 1)
        return partial(_eval(slab, rest, comp, k), h, n1, n2, slab.order)
    a = int(op[1])
    inner_t = _time_derivative(slab, rest, comp, k)
    n1, n2 = (1, 0) if a == 1 else (0, 1)
    inner_x = partial(_eval(slab, rest, comp, k), h, n1, n2, slab.order)
    return slab.grid.coord(a) * inner_t + slab.times[k] * inner_x


def _time_derivative(slab: Slab, rest: tuple[str, ...], comp: str, k: int) -> np.ndarray:
    if comp in slab.rates and all(op in ("d1", "d2") for op in rest):
        out = slab.rates[comp][k]
        for op in reversed(rest):
            out = partial(out, slab.grid.h, op == "d1", op == "d2", slab.order)
        return out
    _check_level(slab, k, 1)
    return (_eval(slab, rest, comp, k + 1) - _eval(slab, rest, comp, k - 1)) / (2.0 * slab.dt)


def dt_field(slab: Slab, component: str, k: int) -> Field:
    """Time derivative at level ``k``: stored rate if present, else O(dt^2) centred difference."""
    return Field(slab.grid, np.array(_time_derivative(slab, (), component, k)))


def lorentz_boost(slab: Slab, a: int, component: str, k: int) -> Field:
    """``L_a u = x_a d_t u + t d_a u`` at level ``k``."""
    if a not in (1, 2):
        raise ValueError(f"boost index must be 1 or 2, got {a}")
    return Field(slab.grid, _eval(slab, (f"L{a}",), component, k))


def iterated_vector_field(slab: Slab, word, component: str, k: int) -> Field:
    ops = parse_word(word)
    if len(ops) > MAX_WORD_LENGTH:
        raise UnsupportedOrderError(f"words longer than {MAX_WORD_LENGTH} are not supported (got {len(ops)})")
    out = _eval(slab, ops, component, k)
    return Field(slab.grid, np.array(out))


# --- closed-form weights -------------------------------------------------------

def s_over_t(grid: Grid, t: float) -> Field:
    """``s/t = sqrt(1 - r^2/t^2)`` inside the cone, 0 outside."""
    inside = grid.r <= t - 1.0
    val = np.sqrt(np.clip(1.0 - (grid.r / t) ** 2, 0.0, None))
    return Field(grid, np.where(inside, val, 0.0))


def t_minus_r_pow(grid: Grid, t: float, gamma: float) -> Field:
    """``(t - r)^(-gamma)`` inside the cone, 0 outside."""
    inside = grid.r <= t - 1.0
    base = np.maximum(t - grid.r, 1.0)
    return Field(grid, np.where(inside, base ** (-gamma), 0.0))


@dataclass
class FrameWeights:
    s_over_t: Field
    t_minus_r_pow: Field
    gamma: float

    @classmethod
    def at(cls, grid: Grid, t: float, gamma: float) -> "FrameWeights":
        return cls(s_over_t(grid, t), t_minus_r_pow(grid, t, gamma), gamma)


def ghost_weight_boost(x1, x2, t, gamma: float, a: int):
    """Closed form ``L_a (t-|x|)^-gamma = gamma (t-|x|)^-gamma x_a/|x|``."""
    r = np.hypot(x1, x2)
    xa = x1 if a == 1 else x2
    with np.errstate(divide="ignore", invalid="ignore"):
        return gamma * (t - r) ** (-gamma) * np.divide(xa, r, out=np.zeros(np.shape(r)), where=r > 0)


def ghost_weight_double_boost(x1, x2, t, gamma: float, a: int, b: int):
    """Closed form of ``L_b L_a (t-|x|)^-gamma``."""
    r = np.hypot(x1, x2)
    xa = x1 if a == 1 else x2
    xb = x1 if b == 1 else x2
    safe = np.where(r > 0, r, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (t - r) ** (-gamma)
        val = (gamma**2 * w * xa * xb / safe**2
               + gamma * w * (1.0 if a == b else 0.0) * t / safe
               - gamma * w * xa * xb * t / safe**3)
    return np.where(r > 0, val, 0.0)


def check_exact_weight_identities(grid: Grid, t: float, gamma: float, order: int = 4,
                                  dt: float | None = None, r_min: float = 1.0,
                                  edge: float = 1.5) -> dict[str, float]:
    """Max-norm residuals of the boost identities on analytic samples.

    The check region is ``r_min <= r <= t - edge``: the weight has a conical
    kink at ``r = 0`` and the support edge is excluded like every other
    pointwise check.  First-order boosts use the exact stored time
    derivative; second-order boosts difference in time with step ``dt``
    (defaults to ``h``).
    """
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    dt = grid.h if dt is None else dt
    times = t + dt * np.arange(-2, 3)
    k = 2
    w = lambda tt, x1, x2: (tt - np.hypot(x1, x2)) ** (-gamma)
    w_t = lambda tt, x1, x2: -gamma * (tt - np.hypot(x1, x2)) ** (-gamma - 1.0)
    s_fn = lambda tt, x1, x2: np.sqrt(np.clip(tt * tt - x1 * x1 - x2 * x2, 0.0, None))
    s_t = lambda tt, x1, x2: np.where(s_fn(tt, x1, x2) > 0, tt / np.maximum(s_fn(tt, x1, x2), 1e-300), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        slab = Slab.sample(
            grid, times,
            {"w": lambda tt, x1, x2: np.where(np.hypot(x1, x2) < tt, w(tt, x1, x2), 0.0),
             "t": lambda tt, x1, x2: tt + 0.0 * x1,
             "x1": lambda tt, x1, x2: x1 + 0.0 * tt,
             "x2": lambda tt, x1, x2: x2 + 0.0 * tt,
             "s": s_fn},
            rates={"w": lambda tt, x1, x2: np.where(np.hypot(x1, x2) < tt, w_t(tt, x1, x2), 0.0),
                   "t": lambda tt, x1, x2: 1.0 + 0.0 * x1,
                   "x1": lambda tt, x1, x2: 0.0 * x1,
                   "x2": lambda tt, x1, x2: 0.0 * x1,
                   "s": s_t},
            order=order)
    region = (grid.r >= r_min) & (grid.r <= t - edge)
    x1, x2 = grid.x1, grid.x2
    report: dict[str, float] = {}

    def resid(num, exact):
        return float(np.abs((num - exact)[region]).max()) if region.any() else 0.0

    for a in (1, 2):
        La = lorentz_boost(slab, a, "w", k).data
        report[f"L{a}(t-r)^-g"] = resid(La, ghost_weight_boost(x1, x2, t, gamma, a))
        for b in (1, 2):
            LbLa = iterated_vector_field(slab, (f"L{b}", f"L{a}"), "w", k).data
            report[f"L{b}L{a}(t-r)^-g"] = resid(LbLa, ghost_weight_double_boost(x1, x2, t, gamma, a, b))
        report[f"L{a} t"] = resid(lorentz_boost(slab, a, "t", k).data, grid.coord(a))
        for b in (1, 2):
            report[f"L{a} x{b}"] = resid(lorentz_boost(slab, a, f"x{b}", k).data, t * (a == b) + 0.0 * x1)
        report[f"L{a} s"] = resid(lorentz_boost(slab, a, "s", k).data, 0.0 * x1)
    return report


def frame_weight_bounds(grid: Grid, t: float) -> dict[str, float]:
    """Empirical constants for ``|d(s/t)| <= C/s`` and ``|L_a(s/t)| <= C s/t``.

    Uses closed-form derivatives of ``s/t`` on the cone interior.
    """
    inside = grid.r <= t - 1.0
    r, x1, x2 = grid.r, grid.x1, grid.x2
    s = np.sqrt(np.clip(t * t - r * r, 1e-300, None))
    # s/t = sqrt(1 - r^2/t^2)
    d_t = r * r / (t**3 * (s / t))
    d_a = [-x / (t * t * (s / t)) for x in (x1, x2)]
    grad = np.sqrt(d_t**2 + d_a[0] ** 2 + d_a[1] ** 2)
    boost = [x * d_t + t * d for x, d in zip((x1, x2), d_a)]
    return {
        "C_d(s/t)": float((grad * s)[inside].max()),
        "C_L(s/t)": float(max((np.abs(b) / (s / t))[inside].max() for b in boost)),
    }


# --- symbolic expansion of words into spacetime partials ---------------------

Multi = tuple[int, int, int]


@lru_cache(maxsize=None)
def expand_word(word: tuple[str, ...]) -> tuple[tuple[Multi, Callable], ...]:
    """Write a word as ``sum_b c_b(t, x1, x2) * d^b u`` with polynomial ``c_b``.

    ``b`` is a multi-index ``(n_t, n_1, n_2)``.  Used by the streaming
    hyperboloid recorder, which samples partials of ``u`` once and then
    assembles any word exactly.
    """
    import sympy as sp

    t, x1, x2 = sp.symbols("t x1 x2")
    coords = {0: t, 1: x1, 2: x2}
    expr: dict[Multi, sp.Expr] = {(0, 0, 0): sp.Integer(1)}

    def apply_partial(e, alpha):
        out: dict[Multi, sp.Expr] = {}
        for m, c in e.items():
            up = list(m)
            up[alpha] += 1
            out[tuple(up)] = out.get(tuple(up), 0) + c
            dc = sp.diff(c, coords[alpha])
            if dc != 0:
                out[m] = out.get(m, 0) + dc
        return out

    for op in reversed(word):
        if op[0] == "d":
            expr = apply_partial(expr, int(op[1]))
        else:
            a = int(op[1])
            e_t = apply_partial(expr, 0)
            e_a = apply_partial(expr, a)
            new: dict[Multi, sp.Expr] = {}
            for m, c in e_t.items():
                new[m] = new.get(m, 0) + coords[a] * c
            for m, c in e_a.items():
                new[m] = new.get(m, 0) + t * c
            expr = new
    terms = []
    for m, c in sorted(expr.items()):
        c = sp.expand(c)
        if c == 0:
            continue
        terms.append((m, sp.lambdify((t, x1, x2), c, "numpy")))
    return tuple(terms)


def assemble_word(word: tuple[str, ...], partials: dict[Multi, np.ndarray], t, x1, x2) -> np.ndarray:
    """Evaluate a word from sampled partials ``{(nt, n1, n2): array}``."""
    out = None
    for m, coef in expand_word(tuple(word)):
        term = coef(t, x1, x2) * partials[m]
        out = term if out is None else out + term
    return out if out is not None else np.zeros_like(partials[(0, 0, 0)])


def required_partials(words: Iterable[tuple[str, ...]], extra: int = 1) -> set[Multi]:
    """Partials needed to assemble every word and ``extra`` further derivatives of it."""
    need: set[Multi] = set()
    for w in words:
        for m, _ in expand_word(tuple(w)):
            need.add(m)
            if extra:
                for alpha in range(3):
                    up = list(m)
                    up[alpha] += 1
                    need.add(tuple(up))
    return need
