"""Reduced Klein-Gordon-Zakharov system in the variables ``(E1, E2, nDelta)``.

With ``n = Laplacian(nDelta)`` the evolved equations are::

    d_t^2 E^a    = Lap E^a - E^a + Lap(nDelta) E^a
    d_t^2 nDelta = Lap nDelta + (E^1)^2 + (E^2)^2

so the Zakharov source ``Lap |E|^2`` never has to be differentiated.
Data are prescribed at ``t0 = 2`` and supported in the unit disc.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, RunConfig
from .grid import Field, Grid, apply_cone_mask, ensure_finite, integrate, laplacian, laplacian_array
from .runner import Level, evolve, rk4_step

COMPONENTS = ("E1", "E2", "nDelta")

# same object, named for the system it configures
KgzConfig = RunConfig


def bump(r: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """``exp(1 - 1/(1 - (r/radius)^2))`` inside ``r < radius``, else 0; peak value 1."""
    q = np.asarray(r, dtype=float) / radius
    out = np.zeros(np.shape(q))
    inside = q < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - q[inside] ** 2))
    return out


def data_profiles(grid: Grid, eps: float, seed: int = 0, radius: float = 1.0,
                  names=("E1_0", "E2_0", "nDelta_0", "E1_1", "E2_1", "nDelta_1")) -> dict[str, np.ndarray]:
    """Seeded variants of the default bump.

    The first profile is exactly ``eps * bump``; the others get a seeded
    amplitude in ``[0.5, 1]`` (random sign) and a smooth linear tilt, which
    keeps them supported in the same disc.
    """
    if radius > 1.0:
        raise ValueError(f"profile radius {radius} leaves the unit ball")
    rng = np.random.default_rng(seed)
    base = bump(grid.r, radius)
    out = {}
    for i, name in enumerate(names):
        if i == 0:
            out[name] = eps * base
            continue
        amp = rng.uniform(0.5, 1.0) * rng.choice((-1.0, 1.0))
        b1, b2 = rng.uniform(-0.3, 0.3, size=2)
        out[name] = eps * amp * base * (1.0 + b1 * grid.x1 + b2 * grid.x2)
    return out


@dataclass
class KgzState:
    grid: Grid
    t: float
    data: np.ndarray  # (6, nx, ny): E1, E2, nDelta, dE1, dE2, dnDelta

    @property
    def E1(self) -> Field:
        return Field(self.grid, self.data[0])

    @property
    def E2(self) -> Field:
        return Field(self.grid, self.data[1])

    @property
    def nDelta(self) -> Field:
        return Field(self.grid, self.data[2])

    @property
    def dE1(self) -> Field:
        return Field(self.grid, self.data[3])

    @property
    def dE2(self) -> Field:
        return Field(self.grid, self.data[4])

    @property
    def dnDelta(self) -> Field:
        return Field(self.grid, self.data[5])

    @classmethod
    def from_fields(cls, grid: Grid, t: float, E1, E2, nDelta, dE1, dE2, dnDelta) -> "KgzState":
        arrs = [f.data if isinstance(f, Field) else np.broadcast_to(f, grid.shape) for f in (E1, E2, nDelta, dE1, dE2, dnDelta)]
        return cls(grid, t, np.stack(arrs).astype(float))


def make_grid(cfg: RunConfig) -> Grid:
    return Grid(cfg.nx, cfg.nx, cfg.h)


def initial_data_kgz(cfg: RunConfig, grid: Grid | None = None) -> KgzState:
    grid = grid or make_grid(cfg)
    if cfg.radius > 1.0:
        raise ConfigError(f"data radius {cfg.radius} violates support in the unit ball")
    p = data_profiles(grid, cfg.eps, cfg.seed, cfg.radius)
    data = np.stack([p["E1_0"], p["E2_0"], p["nDelta_0"], p["E1_1"], p["E2_1"], p["nDelta_1"]])
    return KgzState(grid, cfg.t0, data)


def _rhs_array(U: np.ndarray, h: float, order: int, t: float | None = None) -> np.ndarray:
    E1, E2, nD = U[0], U[1], U[2]
    n = laplacian_array(nD, h, order)
    out = np.empty_like(U)
    out[:3] = U[3:]
    out[3] = laplacian_array(E1, h, order) - E1 + n * E1
    out[4] = laplacian_array(E2, h, order) - E2 + n * E2
    out[5] = n + E1 * E1 + E2 * E2
    ensure_finite(out, t=t, what="KGZ right-hand side")
    return out


def rhs_kgz(state: KgzState, order: int = 2) -> KgzState:
    """First-order-in-time right-hand side; ``-Box = d_t^2 - Lap``."""
    return KgzState(state.grid, state.t, _rhs_array(state.data, state.grid.h, order, state.t))


class KgzSystem:
    names = COMPONENTS

    def __init__(self, grid: Grid, order: int = 2):
        self.grid = grid
        self.order = order

    def rhs(self, t, U):
        return _rhs_array(U, self.grid.h, self.order, t)

    def accel(self, t, U, k1):
        return k1[3:]

    def accept(self, t, U):
        pass


def step_rk4(state: KgzState, dt: float, order: int = 2) -> KgzState:
    """One classical RK4 step followed by the cone mask."""
    sys_ = KgzSystem(state.grid, order)
    U = rk4_step(sys_, state.t, state.data, dt)
    t = state.t + dt
    U[:, state.grid.r > t - 1.0] = 0.0
    ensure_finite(U, t=t, what="KGZ state")
    return KgzState(state.grid, t, U)


def reconstruct_n(state: KgzState, order: int = 2) -> Field:
    """Wave component ``n = Laplacian(nDelta)``."""
    return laplacian(state.nDelta, order)


def flat_energy(grid: Grid, u: np.ndarray, ut: np.ndarray, m: float) -> float:
    """``sum(u_t^2 + |D+ u|^2 + m^2 u^2) h^2`` on a constant-t slice.

    Forward differences pair with the 5-point Laplacian, so this is exactly
    conserved by the semi-discrete free equation.
    """
    h = grid.h
    g1 = np.diff(u, axis=0, append=0.0) / h
    g2 = np.diff(u, axis=1, append=0.0) / h
    return integrate(ut * ut + g1 * g1 + g2 * g2 + m * m * u * u, h)


def kgz_levels(cfg: RunConfig, grid: Grid | None = None, state: KgzState | None = None):
    """Generator of accepted :class:`~hyperfoil.runner.Level` objects."""
    cfg.validate()
    state = state or initial_data_kgz(cfg, grid)
    system = KgzSystem(state.grid, cfg.order)
    return evolve(system, state.data, state.t, cfg.dt, cfg.t_final)


def unreduced_residual(prev: Level, cur: Level, nxt: Level, grid: Grid, order: int = 2) -> dict[str, float]:
    """Residuals of the original ``(E, n)`` equations on the reduced solution.

    Second time derivatives come from centred differences across the three
    levels, so the residual measures the O(dt^2) + O(h^2) consistency of
    the reduced evolution with ``-Box n = Lap |E|^2``.
    """
    h, dt = grid.h, cur.t - prev.t
    inside = grid.r <= cur.t - 1.5
    n = [laplacian_array(L.value[2], h, order) for L in (prev, cur, nxt)]
    n_tt = (n[2] - 2.0 * n[1] + n[0]) / dt**2
    E2sum = cur.value[0] ** 2 + cur.value[1] ** 2
    res_n = n_tt - laplacian_array(n[1], h, order) - laplacian_array(E2sum, h, order)
    out = {"n": float(np.abs(res_n[inside]).max()) if inside.any() else 0.0}
    for a in (0, 1):
        E_tt = (nxt.rate[a] - prev.rate[a]) / (2.0 * dt)
        res = E_tt - laplacian_array(cur.value[a], h, order) + cur.value[a] - n[1] * cur.value[a]
        out[f"E{a + 1}"] = float(np.abs(res[inside]).max()) if inside.any() else 0.0
    return out


def sup_over_interior(arr: np.ndarray, grid: Grid, t: float, margin: float = 1.5) -> float:
    inside = grid.r <= t - margin
    return float(np.abs(arr[inside]).max()) if inside.any() else 0.0


def run_kgz(cfg: RunConfig, out_dir=None, threads: int | None = None):
    """Evolve to ``t_final`` with all diagnostics attached.

    Returns a :class:`~hyperfoil.archive.RunArchive`; when ``out_dir`` is
    given every output file is written there as well.
    """
    from .archive import run_system

    return run_system("kgz", cfg, out_dir=out_dir, threads=threads)
