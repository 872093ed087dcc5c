import numpy as np
import pytest
import sympy as sp

from hyperfoil.calculus import (
    Slab,
    UnsupportedOrderError,
    assemble_word,
    check_exact_weight_identities,
    frame_weight_bounds,
    iterated_vector_field,
    lorentz_boost,
    parse_word,
    required_partials,
    s_over_t,
    t_minus_r_pow,
    word_name,
    words_up_to,
)
from hyperfoil.grid import Grid

T, X1, X2 = sp.symbols("t x1 x2")
POLY = T**3 * X1 + T * X2**2 + X1**2 * X2 + 2 * T**2


def poly_partials(expr, t, x1, x2, max_order=3):
    out = {}
    for nt in range(max_order + 1):
        for n1 in range(max_order + 1 - nt):
            for n2 in range(max_order + 1 - nt - n1):
                d = expr
                for sym, n in ((T, nt), (X1, n1), (X2, n2)):
                    if n:
                        d = sp.diff(d, sym, n)
                f = sp.lambdify((T, X1, X2), d, "numpy")
                out[(nt, n1, n2)] = np.broadcast_to(f(t, x1, x2), np.shape(x1)).astype(float)
    return out


def test_parse_and_name():
    assert parse_word("L1L2") == ("L1", "L2")
    assert parse_word("d0 L1") == ("d0", "L1")
    assert word_name(()) == "id"
    with pytest.raises(ValueError):
        parse_word("L3")


def test_words_up_to_two():
    words = words_up_to(2)
    assert len(words) == 22
    assert words[0] == ()
    assert ("L1", "L2") in words and ("L2", "L1") in words
    assert ("d0", "d1") in words and ("d1", "d0") not in words
    assert ("d2", "L1") in words


def test_commutators_symbolically():
    rng = np.random.default_rng(0)
    t = rng.uniform(2, 5, 20)
    x1 = rng.uniform(-1, 1, 20)
    x2 = rng.uniform(-1, 1, 20)
    P = poly_partials(POLY, t, x1, x2)
    A = lambda w: assemble_word(w, P, t, x1, x2)  # noqa: E731
    # [d_t, L_a] = d_a and [d_b, L_a] = delta_ab d_t
    assert np.allclose(A(("d0", "L1")) - A(("L1", "d0")), A(("d1",)))
    assert np.allclose(A(("d1", "L1")) - A(("L1", "d1")), A(("d0",)))
    assert np.allclose(A(("d2", "L1")) - A(("L1", "d2")), 0.0)
    # [L_1, L_2] = x1 d2 - x2 d1 (rotation)
    rot = x1 * A(("d2",)) - x2 * A(("d1",))
    assert np.allclose(A(("L1", "L2")) - A(("L2", "L1")), rot)


def test_required_partials_cover_words():
    need = required_partials([("L1", "L2")], extra=0)
    assert (0, 1, 1) in need and (2, 0, 0) in need
    assert (1, 1, 1) not in need
    assert (1, 1, 1) in required_partials([("L1", "L2")], extra=1)


def _poly_slab(order, dt=0.05):
    g = Grid(40, 40, 0.1)
    f = sp.lambdify((T, X1, X2), POLY, "numpy")
    ft = sp.lambdify((T, X1, X2), sp.diff(POLY, T), "numpy")
    times = 3.0 + dt * np.arange(-2, 3)
    return g, Slab.sample(g, times, {"u": f}, rates={"u": ft}, order=order)


def test_lorentz_boost_matches_closed_form():
    g, slab = _poly_slab(4)
    L1 = lorentz_boost(slab, 1, "u", 2).data
    exact = sp.lambdify((T, X1, X2), X1 * sp.diff(POLY, T) + T * sp.diff(POLY, X1), "numpy")(3.0, g.x1, g.x2)
    inner = (slice(3, -3), slice(3, -3))
    assert np.allclose(L1[inner], exact[inner], atol=1e-9)


def test_iterated_boost_converges_in_dt():
    def err(dt):
        g, slab = _poly_slab(4, dt)
        L = lambda e, a: (X1 if a == 1 else X2) * sp.diff(e, T) + T * sp.diff(e, X1 if a == 1 else X2)  # noqa: E731
        exact = sp.lambdify((T, X1, X2), L(L(POLY, 1), 2), "numpy")(3.0, g.x1, g.x2)
        num = iterated_vector_field(slab, ("L2", "L1"), "u", 2).data
        inner = (slice(4, -4), slice(4, -4))
        return np.abs(num[inner] - exact[inner]).max() / np.abs(exact[inner]).max()

    e1, e2 = err(0.05), err(0.025)
    assert e1 < 1e-3
    assert 3.9 < e1 / e2 < 4.1


def test_word_length_limit():
    _, slab = _poly_slab(2)
    with pytest.raises(UnsupportedOrderError):
        iterated_vector_field(slab, ("L1", "L1", "L1"), "u", 2)


def test_weight_identities_at_fine_resolution():
    grid = Grid.covering(5.0, 0.025)
    rep = check_exact_weight_identities(grid, 4.0, 0.5, order=4)
    assert rep["L1(t-r)^-g"] <= 1e-6
    assert rep["L2(t-r)^-g"] <= 1e-6
    assert rep["L1 s"] < 1e-6
    assert rep["L1 t"] < 1e-12


def test_weight_identity_second_order_convergence():
    r1 = check_exact_weight_identities(Grid.covering(5.0, 0.1), 4.0, 0.5, order=2)
    r2 = check_exact_weight_identities(Grid.covering(5.0, 0.05), 4.0, 0.5, order=2)
    for k in ("L1(t-r)^-g", "L1L1(t-r)^-g", "L2L1(t-r)^-g", "L1 s"):
        assert 3.5 < r1[k] / r2[k] < 4.5


def test_weights_and_frame_bounds():
    g = Grid(41, 41, 0.25)
    st = s_over_t(g, 4.0).data
    assert st[20, 20] == pytest.approx(1.0)
    assert st.max() <= 1.0 and st[0, 0] == 0.0
    w = t_minus_r_pow(g, 4.0, 0.5).data
    assert w[20, 20] == pytest.approx(0.5)
    b = frame_weight_bounds(g, 4.0)
    assert all(np.isfinite(v) and v >= 0 for v in b.values())
