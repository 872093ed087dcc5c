"""Acceptance criteria at desk scale, each at its stated tolerance.

The evolutions are expensive (about 15 minutes in total on one core), so they
are computed once per session.  Each test prints one PASS/FAIL line and the
terminal summary repeats them in criterion order.
"""
import dataclasses

import numpy as np
import pytest

from hyperfoil.archive import run_system
from hyperfoil.cli import identity_table
from hyperfoil.config import RunConfig
from hyperfoil.verify import (
    GROWTH_SLACK,
    InequalityLedger,
    archive_slices,
    check_sobolev,
    eps_linearity,
    ghost_ladder,
    ladder_passes,
    random_bump_slices,
    refinement_pair,
    run_checks,
    sobolev_constants,
    spread_shrink,
)

pytestmark = pytest.mark.acceptance

DESK = RunConfig(nx=512, h=0.25, dt=0.1, t_final=60.0, order=4, eps=0.01, n_hyperboloids=24, figures=False)
PAIR = dataclasses.replace(DESK, nx=2 * int(np.ceil(21 / 0.25)) + 1, t_final=20.0, n_hyperboloids=12)
QWKG = dataclasses.replace(DESK, order=2)


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    arch = run_system("kgz", DESK, out_dir=tmp_path_factory.mktemp("desk_kgz"))
    return arch, run_checks(arch)


@pytest.fixture(scope="session")
def pair():
    return refinement_pair(PAIR)


@pytest.fixture(scope="session", params=["a", "b", "c"])
def qwkg(request, tmp_path_factory):
    cfg = dataclasses.replace(QWKG, coeff_set=request.param)
    arch = run_system("qwkg", cfg, out_dir=tmp_path_factory.mktemp(f"qwkg_{request.param}"))
    return request.param, run_checks(arch, ["qwkg"])


def test_01_decay_of_E(desk, acceptance_record):
    e = desk[1]["decay_E"]
    ok = -1.15 <= e.exponent <= -0.85
    acceptance_record(1, "sup|E| decay exponent in [-1.15, -0.85]", ok, f"exponent {e.exponent:.3f}")
    assert ok


def test_02_decay_of_n(desk, acceptance_record):
    e, eh = desk[1]["decay_n_weighted"], desk[1]["decay_n_weighted_Hs"]
    ok = abs(e.exponent) <= 0.10
    acceptance_record(2, "sup|n| t^1/2 (t-r)^1/2 slope in [-0.10, 0.10]", ok,
                      f"slope {e.exponent:.3f} over t slices ({eh.exponent:.3f} over hyperboloids)")
    assert ok


def test_03_uniform_energy(desk, acceptance_record):
    e = desk[1]["uniform_energy_E"]
    ok = e.constant <= 0.10
    acceptance_record(3, "E1(s,E)^1/2 drift over s >= 3 at most 10%", ok, f"drift {e.constant:.3f}")
    assert ok


def test_04_energy_growth(desk, acceptance_record):
    e = desk[1]["energy_growth"]
    cap = DESK.delta + GROWTH_SLACK
    worst = max(e.detail["exponents"], key=e.detail["exponents"].get)
    ok = e.exponent <= cap
    acceptance_record(4, f"growth exponents at most {cap:.4f}", ok, f"max {e.exponent:.3f} ({worst})")
    assert ok


def test_05_energy_equivalence(desk, pair, acceptance_record):
    spread = desk[1]["energy_equivalence"].constant
    shrink = spread_shrink(*pair)
    ok_spread, ok_shrink = spread <= 1e-3, shrink["min_ratio"] >= 3.0
    acceptance_record(5, "three-expression spread at most 1e-3 and shrinks >= 3x", ok_spread and ok_shrink,
                      f"max spread {spread:.2e}; min shrink {shrink['min_ratio']:.2f} "
                      f"(max {shrink['max_spread_coarse']:.2e} -> {shrink['max_spread_fine']:.2e})")
    assert ok_spread and ok_shrink


def test_06_ghost(desk, acceptance_record):
    rows = ghost_ladder()
    margin = desk[1]["ghost_integrated"]
    ok = ladder_passes(rows) and margin.passed
    ratios = ", ".join(f"{r['ratio']:.2f}" for r in rows if "ratio" in r)
    acceptance_record(6, "ghost residual ratios in [3, 5] and integrated margin >= 0", ok,
                      f"ratios {ratios}; integrated margin {margin.margin_min:.3f}")
    assert ok


def test_07_commutator_identities(acceptance_record):
    rows = identity_table(0.5, [0.05, 0.025], order=4)
    fine = rows[-1]
    weight = max(fine["L1(t-r)^-g"], fine["L2(t-r)^-g"])
    orders = [fine["order:L1 s"], fine["order:L2 s"]]
    ok = weight <= 1e-6 and all(abs(o - 4) <= 0.5 for o in orders)
    acceptance_record(7, "L_a (t-r)^-g residual at most 1e-6 at h = 0.025; L_a s at truncation order", ok,
                      f"residual {weight:.2e}; L_a s orders {orders[0]:.2f}, {orders[1]:.2f}")
    assert ok


def test_08_sobolev_constants(pair, acceptance_record):
    L = InequalityLedger()
    bumps = check_sobolev(random_bump_slices(0.05, count=50), L, name="bumps",
                          reference=sobolev_constants(random_bump_slices(0.1, count=50)))
    coarse = sobolev_constants(archive_slices(pair[0], ("E1", "E2")))
    check_sobolev(archive_slices(pair[1], ("E1", "E2")), L, name="evolved", reference=coarse)
    changes = {n: max(L[n].detail["relative_change"].values()) for n in ("bumps", "evolved")}
    ok = L.passed
    acceptance_record(8, "Sobolev constants change at most 20% under refinement", ok,
                      f"bumps {changes['bumps']:.3f}, evolved slices {changes['evolved']:.3f} "
                      f"({len(bumps)} inequalities)")
    assert ok


def test_09_quasilinear(qwkg, acceptance_record):
    name, L = qwkg
    ok = L.passed
    detail = "; ".join(
        f"{e.name} {'ok' if e.passed else 'FAIL'}"
        + (f" {e.exponent:.3f}" if e.exponent is not None else "")
        + (f" [{e.margin_min:.3f}, {e.constant:.3f}]" if e.name == "quasilinear_equivalence" else "")
        for e in L.entries)
    acceptance_record(9, f"quasilinear system, coefficient set ({name})", ok, detail)
    assert ok


def test_10_eps_linearity(acceptance_record):
    res = eps_linearity(DESK)
    dev = res["max_relative_deviation"]
    ok = dev <= 0.05
    acceptance_record(10, "halving eps halves sup|E| within 5% on [2, 20]", ok, f"max deviation {dev:.4f}")
    assert ok
