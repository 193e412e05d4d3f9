import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourwire.qcqp import EQ, LE, Affine, CAffine, ConstraintSystem, Quad


def small_system():
    s = ConstraintSystem()
    x = s.new_var("v", "x", init=1.0)
    y = s.new_var("v", "y", init=0.0)
    ax, ay = Affine.variable(x), Affine.variable(y)
    s.add(ax.times(ax) + ay.times(ay) - 1.0, EQ, ("circle",))
    return s


def test_empty_system_residuals():
    s = ConstraintSystem()
    assert s.eval_residuals(np.zeros(0)).size == 0


def test_unit_circle_residual():
    s = small_system()
    assert s.eval_residuals(np.array([1.0, 0.0]))[0] == pytest.approx(0.0, abs=1e-15)
    assert s.eval_residuals(np.array([1.0, 1.0]))[0] == pytest.approx(1.0)


def test_inequality_reports_violation_only():
    s = ConstraintSystem()
    x = s.new_var("v", "x")
    s.add(Affine.variable(x) - 1.0, LE, ("ub",))
    assert s.eval_residuals(np.array([0.5]))[0] == 0.0
    assert s.eval_residuals(np.array([1.5]))[0] == pytest.approx(0.5)


def test_linear_constraint_jacobian_constant():
    s = ConstraintSystem()
    x = s.new_var("v", "x")
    y = s.new_var("v", "y")
    s.add(Affine({x: 2.0, y: -3.0}, 1.0), EQ, ("lin",))
    j1 = s.eval_jacobian(np.array([0.0, 0.0])).toarray()
    j2 = s.eval_jacobian(np.array([5.0, -7.0])).toarray()
    assert np.array_equal(j1, j2)
    assert np.allclose(j1, [[2.0, -3.0]])


def test_product_jacobian_row():
    s = ConstraintSystem()
    x = s.new_var("v", "x")
    y = s.new_var("v", "y")
    s.add(Affine.variable(x).times(Affine.variable(y)), EQ, ("xy",))
    row = s.eval_jacobian(np.array([2.0, 3.0])).toarray()[0]
    assert np.allclose(row, [3.0, 2.0])


def _random_system(rng, n=6, m=4):
    s = ConstraintSystem()
    for k in range(n):
        s.new_var("v", f"x{k}")
    for k in range(m):
        q = {}
        for _ in range(5):
            i, j = sorted(rng.integers(0, n, size=2))
            q[(int(i), int(j))] = float(rng.normal())
        a = {int(i): float(rng.normal()) for i in rng.integers(0, n, size=3)}
        s.add(Quad(q, a, float(rng.normal())), EQ, ("r", k))
    return s


def test_jacobian_matches_finite_differences(rng):
    s = _random_system(rng)
    x = rng.normal(size=s.n_vars)
    J = s.eval_jacobian(x).toarray()
    h = 1e-6
    for j in range(s.n_vars):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        col = (s.constraint_values(xp) - s.constraint_values(xm)) / (2 * h)
        assert np.allclose(J[:, j], col, rtol=1e-6, atol=1e-6)


def test_hessian_independent_of_point(rng):
    s = _random_system(rng)
    mult = rng.normal(size=s.n_cons)
    h1 = s.eval_lagrangian_hessian(mult).toarray()
    h2 = s.eval_lagrangian_hessian(mult).toarray()
    assert np.array_equal(h1, h2)  # bitwise: no x anywhere in the path


def test_hessian_matches_finite_difference_of_jacobian(rng):
    s = _random_system(rng)
    mult = rng.normal(size=s.n_cons)
    H = s.eval_lagrangian_hessian(mult).toarray()
    x = rng.normal(size=s.n_vars)
    h = 1e-6

    def grad_lag(xv):
        return s.eval_jacobian(xv).T @ mult

    for j in range(s.n_vars):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        col = (grad_lag(xp) - grad_lag(xm)) / (2 * h)
        assert np.allclose(H[:, j], col, rtol=1e-6, atol=1e-6)


def test_hessian_zero_multipliers():
    s = small_system()
    H = s.eval_lagrangian_hessian(np.zeros(1)).toarray()
    assert not H.any()  # fixed sparsity pattern, all values zero


def test_hessian_single_constraint_is_2q():
    s = small_system()
    H = s.eval_lagrangian_hessian(np.array([1.0])).toarray()
    Q = s.constraints[0].Q_matrix(2).toarray()
    assert np.allclose(H, 2.0 * Q)


@settings(max_examples=50, deadline=None)
@given(exp=st.integers(min_value=-20, max_value=20))
def test_residual_scales_exactly_for_power_of_two(exp):
    # powers of two keep the scaling bitwise exact in floating point
    scale = 2.0**exp
    s = ConstraintSystem()
    x = s.new_var("v", "x", init=0.0)
    ax = Affine.variable(x)
    base = ax.times(ax) + ax.scaled(2.0) - 3.0
    s.add(base, EQ, ("base",))
    s.add(base.scaled(scale), EQ, ("scaled",))
    pt = np.array([1.7])
    r = s.constraint_values(pt)
    assert r[1] == scale * r[0]


@settings(max_examples=50, deadline=None)
@given(scale=st.floats(min_value=-100, max_value=100, allow_nan=False))
def test_residual_scales_with_constraint(scale):
    s = ConstraintSystem()
    x = s.new_var("v", "x", init=0.0)
    ax = Affine.variable(x)
    base = ax.times(ax) + ax.scaled(2.0) - 3.0
    s.add(base, EQ, ("base",))
    s.add(base.scaled(scale), EQ, ("scaled",))
    pt = np.array([1.7])
    r = s.constraint_values(pt)
    assert r[1] == pytest.approx(scale * r[0], rel=1e-14, abs=1e-12)


def test_fix_variables_substitutes_and_drops():
    s = ConstraintSystem()
    x = s.new_var("v", "x")
    y = s.new_var("v", "y")
    ax, ay = Affine.variable(x), Affine.variable(y)
    s.add(ax.times(ay) + ax - 1.0, EQ, ("t",))
    s.add_objective_term(x, 2.0)
    s2, index_map = s.fix_variables({x: 3.0})
    assert s2.n_vars == 1
    assert index_map[x] == -1 and index_map[y] == 0
    # 3*y + 3 - 1 at y = 2 -> 8
    assert s2.constraint_values(np.array([2.0]))[0] == pytest.approx(8.0)
    assert s2.objective_const == pytest.approx(6.0)


def test_duplicate_tag_rejected():
    s = ConstraintSystem()
    x = s.new_var("v", "x")
    s.add(Affine.variable(x), EQ, ("dup",))
    with pytest.raises(ValueError):
        s.add(Affine.variable(x), EQ, ("dup",))


def test_dump_text_deterministic():
    a = small_system().dump_text()
    b = small_system().dump_text()
    assert a == b
    assert "constraints 1" in a


def test_caffine_complex_product():
    s = ConstraintSystem()
    xr = s.new_var("v", "xr", init=1.0)
    xi = s.new_var("v", "xi", init=2.0)
    yr = s.new_var("v", "yr", init=-3.0)
    yi = s.new_var("v", "yi", init=0.5)
    cx = CAffine(Affine.variable(xr), Affine.variable(xi))
    cy = CAffine(Affine.variable(yr), Affine.variable(yi))
    re, im = cx.cmul(cy)
    pt = s.initial_point()
    want = complex(1, 2) * complex(-3, 0.5)
    assert re.value(pt) == pytest.approx(want.real)
    assert im.value(pt) == pytest.approx(want.imag)
    rot = cx.rotated(1j - 0.5)
    assert rot.value(pt) == pytest.approx(complex(1, 2) * (1j - 0.5))
    conj_re, conj_im = cx.conj().cmul(cx)
    assert conj_re.value(pt) == pytest.approx(5.0)
    assert conj_im.value(pt) == pytest.approx(0.0)
