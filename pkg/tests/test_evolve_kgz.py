import numpy as np
import pytest

from hyperfoil.config import ConfigError, RunConfig
from hyperfoil.evolve_kgz import (
    KgzState,
    KgzSystem,
    bump,
    data_profiles,
    flat_energy,
    initial_data_kgz,
    kgz_levels,
    reconstruct_n,
    rhs_kgz,
    step_rk4,
    unreduced_residual,
)
from hyperfoil.grid import Grid, laplacian_array
from hyperfoil.runner import evolve


def small_cfg(**kw):
    base = dict(nx=49, h=0.25, dt=0.1, t_final=4.0, n_hyperboloids=0)
    base.update(kw)
    return RunConfig(**base)


def test_zero_data_is_stationary():
    g = Grid(32, 32, 0.25)
    st = KgzState(g, 2.0, np.zeros((6,) + g.shape))
    assert not rhs_kgz(st).data.any()


def test_initial_data_support_and_scaling():
    cfg = small_cfg(eps=0.01)
    st = initial_data_kgz(cfg)
    g = st.grid
    assert np.array_equal(st.E1.data, 0.01 * bump(g.r))
    assert not st.data[:, g.r >= 1.0].any()
    assert np.abs(st.data).max() <= 0.01 * 1.3 + 1e-15
    p1 = data_profiles(g, 0.01, seed=3)
    p2 = data_profiles(g, 0.02, seed=3)
    for k in p1:
        assert np.allclose(p2[k], 2 * p1[k])
    with pytest.raises(ValueError):
        data_profiles(g, 0.01, radius=1.5)


def test_nonlinearity_is_quadratic():
    g = Grid(48, 48, 0.1)
    st = initial_data_kgz(small_cfg(eps=0.3), g)

    def rhs(lam):
        return rhs_kgz(KgzState(g, 2.0, lam * st.data)).data

    n2 = rhs(2.0) - 2.0 * rhs(1.0)
    n3 = rhs(3.0) - 3.0 * rhs(1.0)
    big = np.abs(n2) > 1e-6 * np.abs(n2).max()
    assert np.allclose(n3[big] / n2[big], 3.0)


@pytest.mark.parametrize("order", [2, 4])
def test_discrete_klein_gordon_dispersion(order):
    h, k = 0.2, 1.3
    g = Grid(64, 64, h)
    U = np.zeros((6,) + g.shape)
    U[0] = np.cos(k * g.x1)
    out = KgzSystem(g, order).rhs(2.0, U)
    th = k * h
    if order == 2:
        symbol = -(4.0 / h**2) * np.sin(th / 2) ** 2
    else:
        symbol = (-2.0 * np.cos(2 * th) + 32.0 * np.cos(th) - 30.0) / (12.0 * h**2)
    inner = (slice(4, -4), slice(4, -4))
    assert np.allclose(out[3][inner], (symbol - 1.0) * U[0][inner], atol=1e-12)


def test_rk4_energy_drift_wide_bump():
    # Free KG regime: tiny amplitude, wide Gaussian well inside the cone.
    g = Grid.covering(24.0, 0.25)
    U = np.zeros((6,) + g.shape)
    U[0] = 1e-4 * np.exp(-(g.r / 3.0) ** 2)
    system = KgzSystem(g, 2)
    energies = [flat_energy(g, L.value[0], L.rate[0], 1.0) for L in evolve(system, U, 20.0, 0.05, 25.0)]
    drift = abs(energies[-1] - energies[0]) / energies[0]
    assert drift < 1e-6


def test_step_rk4_matches_evolve_and_masks():
    cfg = small_cfg(eps=0.05)
    st = initial_data_kgz(cfg)
    one = step_rk4(st, cfg.dt)
    levels = list(evolve(KgzSystem(st.grid, 2), st.data, st.t, cfg.dt, st.t + cfg.dt))
    assert np.array_equal(one.data[:3], levels[1].value)
    assert not one.data[:, st.grid.r > one.t - 1.0].any()


def test_reconstruct_n_is_laplacian():
    st = initial_data_kgz(small_cfg(eps=0.05))
    n = reconstruct_n(st, 4)
    assert np.array_equal(n.data, laplacian_array(st.data[2], st.grid.h, 4))


def test_unreduced_residual_shrinks_under_refinement():
    # smooth unmasked data: the residual involves fourth derivatives of nDelta
    out = []
    for h in (0.1, 0.05):
        g = Grid.covering(7.0, h)
        U = np.zeros((6,) + g.shape)
        U[0] = 0.05 * np.exp(-g.r**2)
        U[1] = 0.05 * np.exp(-((g.x1 - 0.3) ** 2) - g.x2**2)
        U[2] = 0.05 * np.exp(-(g.r**2) / 2)
        dt = 0.4 * h
        win = []
        for L in evolve(KgzSystem(g, 4), U, 2.0, dt, 2.0 + round(1.0 / dt) * dt, mask=False):
            win = (win + [L])[-3:]
        out.append(unreduced_residual(*win, g, 4))
    for key in ("n", "E1", "E2"):
        assert out[1][key] < out[0][key] / 3.0, (key, out)


def test_validate_rejects_cfl_and_domain():
    with pytest.raises(ConfigError):
        small_cfg(dt=0.2).validate()
    with pytest.raises(ConfigError):
        small_cfg(t_final=20.0).validate()
