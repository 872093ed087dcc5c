"""Quasilinear wave / Klein-Gordon system in ``(v, w)``::

    -Box v + v + Q^{ab} d_a d_b w = 0
    -Box w     + Q^{ab} d_a d_b v = 0,     Q^{ab} = P1^{ab} v + P2^{abc} d_c v

Indices run over ``(t, x1, x2)``.  The ``Q^{00} d_t^2`` terms on the right
use second time derivatives cached at the start of the step; the cache is
refreshed at every accepted level by solving the pointwise 2x2 system.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, RunConfig
from .grid import Field, Grid, ensure_finite, integrate, laplacian_array, partial
from .runner import evolve
from .evolve_kgz import data_profiles

COMPONENTS = ("v", "w")
SMALLNESS = 0.01  # |Q| < SMALLNESS * (s/t)^2


@dataclass
class Coeffs:
    P1: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    P2: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 3)))

    def __post_init__(self):
        self.P1 = np.asarray(self.P1, dtype=float).reshape(3, 3)
        self.P2 = np.asarray(self.P2, dtype=float).reshape(3, 3, 3)
        if not np.array_equal(self.P1, self.P1.T):
            raise ValueError("P1 must be symmetric")
        if not np.array_equal(self.P2, self.P2.transpose(1, 0, 2)):
            raise ValueError("P2 must be symmetric in its first two indices")
        if np.abs(self.P1).max(initial=0) > 1 or np.abs(self.P2).max(initial=0) > 1:
            raise ValueError("coefficient magnitudes must be normalised to <= 1")

    @classmethod
    def preset(cls, name: str) -> "Coeffs":
        ones2, ones3 = np.ones((3, 3)), np.ones((3, 3, 3))
        zero2, zero3 = np.zeros((3, 3)), np.zeros((3, 3, 3))
        table = {"a": (ones2, zero3), "b": (zero2, ones3), "c": (ones2, ones3), "zero": (zero2, zero3)}
        if name not in table:
            raise ValueError(f"unknown coefficient set {name!r}")
        return cls(*table[name])

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Coeffs":
        if cfg.coeff_set != "custom":
            return cls.preset(cfg.coeff_set)
        try:
            return cls(np.array(cfg.P1 or np.zeros(9)), np.array(cfg.P2 or np.zeros(27)))
        except ValueError as exc:
            raise ConfigError(f"coeffs: {exc}") from None

    def Q(self, v: np.ndarray, dv: list[np.ndarray]) -> np.ndarray:
        """``Q^{ab}`` as a ``(3, 3, ...)`` array from ``v`` and ``[d_t v, d_1 v, d_2 v]``."""
        v = np.asarray(v, dtype=float)
        expand = (slice(None), slice(None)) + (None,) * v.ndim
        out = self.P1[expand] * v
        for c in range(3):
            if np.any(self.P2[:, :, c]):
                out = out + self.P2[:, :, c][expand] * dv[c]
        return out


@dataclass
class QwkgState:
    grid: Grid
    t: float
    data: np.ndarray  # (4, nx, ny): v, w, dv, dw
    hess_v: np.ndarray | None = None  # (3, 3, nx, ny)
    hess_w: np.ndarray | None = None

    @property
    def v(self) -> Field:
        return Field(self.grid, self.data[0])

    @property
    def w(self) -> Field:
        return Field(self.grid, self.data[1])

    @property
    def dv(self) -> Field:
        return Field(self.grid, self.data[2])

    @property
    def dw(self) -> Field:
        return Field(self.grid, self.data[3])


def initial_data_qwkg(cfg: RunConfig, grid: Grid | None = None) -> QwkgState:
    grid = grid or Grid(cfg.nx, cfg.nx, cfg.h)
    p = data_profiles(grid, cfg.eps, cfg.seed, cfg.radius, names=("v0", "w0", "v1", "w1"))
    data = np.stack([p["v0"], p["w0"], p["v1"], p["w1"]])
    return QwkgState(grid, cfg.t0, data)


def spatial_gradient(u: np.ndarray, h: float, order: int) -> list[np.ndarray]:
    return [partial(u, h, 1, 0, order), partial(u, h, 0, 1, order)]


def _mixed_terms(Q: np.ndarray, u: np.ndarray, ut: np.ndarray, h: float, order: int) -> np.ndarray:
    """``Q^{ab} d_a d_b u`` without the ``Q^{00} d_t^2 u`` term."""
    g_t = spatial_gradient(ut, h, order)
    out = 2.0 * (Q[0, 1] * g_t[0] + Q[0, 2] * g_t[1])
    out += Q[1, 1] * partial(u, h, 2, 0, order) + Q[2, 2] * partial(u, h, 0, 2, order)
    out += 2.0 * Q[1, 2] * partial(u, h, 1, 1, order)
    return out


def hessian(u: np.ndarray, ut: np.ndarray, utt: np.ndarray, h: float, order: int) -> np.ndarray:
    g_t = spatial_gradient(ut, h, order)
    H = np.empty((3, 3) + u.shape)
    H[0, 0] = utt
    H[0, 1] = H[1, 0] = g_t[0]
    H[0, 2] = H[2, 0] = g_t[1]
    H[1, 1] = partial(u, h, 2, 0, order)
    H[2, 2] = partial(u, h, 0, 2, order)
    H[1, 2] = H[2, 1] = partial(u, h, 1, 1, order)
    return H


class QwkgSystem:
    names = COMPONENTS

    def __init__(self, grid: Grid, coeffs: Coeffs, order: int = 2):
        self.grid = grid
        self.coeffs = coeffs
        self.order = order
        self.vtt = np.zeros(grid.shape)
        self.wtt = np.zeros(grid.shape)
        self.gate_ratio = 0.0

    def _Q(self, U):
        v, dv = U[0], U[2]
        return self.coeffs.Q(v, [dv] + spatial_gradient(v, self.grid.h, self.order))

    def rhs(self, t, U):
        h, order = self.grid.h, self.order
        v, w, dv, dw = U
        Q = self._Q(U)
        out = np.empty_like(U)
        out[0], out[1] = dv, dw
        out[2] = laplacian_array(v, h, order) - v - _mixed_terms(Q, w, dw, h, order) - Q[0, 0] * self.wtt
        out[3] = laplacian_array(w, h, order) - _mixed_terms(Q, v, dv, h, order) - Q[0, 0] * self.vtt
        ensure_finite(out, t=t, what="quasilinear right-hand side")
        return out

    def solve_accel(self, U) -> tuple[np.ndarray, np.ndarray]:
        """Exact pointwise ``(d_t^2 v, d_t^2 w)`` at a level."""
        h, order = self.grid.h, self.order
        v, w, dv, dw = U
        Q = self._Q(U)
        A = laplacian_array(v, h, order) - v - _mixed_terms(Q, w, dw, h, order)
        B = laplacian_array(w, h, order) - _mixed_terms(Q, v, dv, h, order)
        q = Q[0, 0]
        det = 1.0 - q * q
        if (det <= 0).any():
            raise FloatingPointError(f"Q^00 reached 1; the system is no longer hyperbolic")
        return (A - q * B) / det, (B - q * A) / det

    def accel(self, t, U, k1):
        return np.stack([self.vtt, self.wtt])

    def accept(self, t, U):
        self.vtt, self.wtt = self.solve_accel(U)
        self.gate_ratio = smallness_ratio(self._Q(U), self.grid, t)


def smallness_ratio(Q: np.ndarray, grid: Grid, t: float, margin: float = 1.5) -> float:
    """``max |Q^{ab}| / (0.01 (s/t)^2)`` over the cone interior; < 1 means the gate holds."""
    inside = grid.r <= t - margin
    if not inside.any():
        return 0.0
    st2 = 1.0 - (grid.r[inside] / t) ** 2
    qmax = np.abs(Q[:, :, inside]).max(axis=(0, 1))
    return float((qmax / (SMALLNESS * st2)).max())


def rhs_qwkg(state: QwkgState, coeffs: Coeffs, order: int = 2) -> tuple[QwkgState, dict]:
    """Right-hand side plus the smallness-gate record.

    The Hessian cache of ``state`` is used for the ``Q^{00}`` terms (it is
    filled from the exact pointwise solve when absent).  The gate is only
    flagged: a violation does not stop the evolution.
    """
    system = QwkgSystem(state.grid, coeffs, order)
    if state.hess_v is not None and state.hess_w is not None:
        system.vtt, system.wtt = state.hess_v[0, 0], state.hess_w[0, 0]
    else:
        system.vtt, system.wtt = system.solve_accel(state.data)
    out = system.rhs(state.t, state.data)
    ratio = smallness_ratio(system._Q(state.data), state.grid, state.t)
    h = state.grid.h
    v, w, dv, dw = state.data
    new = QwkgState(state.grid, state.t, out,
                    hessian(v, dv, out[2], h, order), hessian(w, dw, out[3], h, order))
    return new, {"gate_ratio": ratio, "gate_ok": ratio < 1.0}


def qwkg_levels(cfg: RunConfig, grid: Grid | None = None, state: QwkgState | None = None):
    cfg.validate()
    state = state or initial_data_qwkg(cfg, grid)
    system = QwkgSystem(state.grid, Coeffs.from_config(cfg), cfg.order)
    return system, evolve(system, state.data, state.t, cfg.dt, cfg.t_final)


def run_qwkg(cfg: RunConfig, out_dir=None, threads: int | None = None):
    from .archive import run_system

    return run_system("qwkg", cfg, out_dir=out_dir, threads=threads)


def quasilinear_energy(slice_, coeffs: Coeffs, order: int = 2):
    """Energy of the quasilinear system on one hyperboloid slice.

    Returns an :class:`~hyperfoil.hyperboloid.EnergyReport` whose ``terms``
    hold ``E1(s, v)``, ``E(s, w)`` and each cross term separately.
    """
    from .hyperboloid import EnergyReport, energy_m

    ev = energy_m(slice_, "v", 1, order)
    ew = energy_m(slice_, "w", 0, order)
    sl = slice_
    x = (sl.grid.x1, sl.grid.x2)
    t = sl.t
    V, W = sl.comps["v"], sl.comps["w"]
    dv = [V["d0"], V["d1"], V["d2"]]
    dw = [W["d0"], W["d1"], W["d2"]]
    Q = coeffs.Q(V["value"], dv)
    valid = sl.valid
    dens = {
        "Q0b dv dtw": sum(Q[0, b] * dv[b] for b in range(3)) * dw[0],
        "Q0b dw dtv": sum(Q[0, b] * dw[b] for b in range(3)) * dv[0],
        "-Qab dv dw": -sum(Q[a, b] * dv[a] * dw[b] for a in range(3) for b in range(3)),
        "-(xa/t) Qab terms": -sum((x[a - 1] / t) * sum(Q[a, b] * dv[b] * dw[0] + Q[a, b] * dw[b] * dv[0] for b in range(3))
                                  for a in (1, 2)),
    }
    terms = {"E1(s,v)": ev.total, "E(s,w)": ew.total}
    for name, d in dens.items():
        terms[name] = integrate(np.where(valid, d, 0.0), sl.grid.h)
    total = sum(terms.values())
    rep = EnergyReport(s=sl.s, component="v,w", m=-1, total=total, expr1=total, expr2=float("nan"),
                       expr3=float("nan"), terms=terms)
    return rep
