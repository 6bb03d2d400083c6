import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bctoeplitz.control_ops import (
    apply_CT,
    ct_form_oracle,
    inner_product_outer,
    make_kappa,
    odd_extend,
    odd_extend_adjoint,
    odd_part,
    pairing,
    restrict,
    time_integrate,
)
from bctoeplitz.controls import Control, ExtendedControl
from bctoeplitz.errors import GridMismatch
from bctoeplitz.forward_solver import SimGrid, VelocityField


def smooth(rng, grid, modes=3):
    c = rng.standard_normal((modes, modes))

    def f(X, t):
        out = np.zeros_like(X)
        for p in range(modes):
            for q in range(modes):
                out += c[p, q] * np.sin((p + 1) * np.pi * X) * np.sin((q + 1) * np.pi * t / (2 * grid.T))
        return out

    return grid.control(f)


def ctrl(x, t, func, weight=None, cls=Control):
    return cls.from_function(func, x, t, weight)


X = np.linspace(0.0, 1.0, 11)
T1 = np.linspace(0.0, 1.0, 21)
T2 = np.linspace(0.0, 2.0, 41)


# -- inner products

def test_inner_product_constant():
    one = ctrl(X, T1, lambda x, t: np.ones_like(x))
    assert inner_product_outer(one, one) == pytest.approx(1.0, abs=1e-14)


def test_inner_product_disjoint_supports():
    f = ctrl(X, T1, lambda x, t: (t < 0.4).astype(float))
    g = ctrl(X, T1, lambda x, t: (t > 0.6).astype(float))
    assert inner_product_outer(f, g) == 0.0


def test_inner_product_weighted():
    one = ctrl(X, T1, lambda x, t: np.ones_like(x), weight=1 + X)
    assert inner_product_outer(one, one) == pytest.approx(1.5, abs=1e-14)
    assert pairing(one, one) == pytest.approx(1.0, abs=1e-14)


def test_inner_product_grid_mismatch():
    f = ctrl(X, T1, lambda x, t: x)
    g = ctrl(X, T2, lambda x, t: x)
    with pytest.raises(GridMismatch):
        inner_product_outer(f, g)
    with pytest.raises(GridMismatch):
        inner_product_outer(f, f, boundary_rho=np.ones(3))


# -- odd extension, integral, odd part, restriction

def test_odd_extend_one():
    e = odd_extend(ctrl(X, T1, lambda x, t: np.ones_like(x)))
    assert isinstance(e, ExtendedControl) and e.T == pytest.approx(1.0)
    assert np.all(e.values[:, :20] == 1.0) and np.all(e.values[:, 21:] == -1.0)
    assert np.all(e.values[:, 20] == 0.0)


def test_odd_extend_kappa_is_linear():
    e = odd_extend(ctrl(X, T1, lambda x, t: 1.0 - t))
    assert np.allclose(e.values, 1.0 - e.t[None, :], atol=1e-15)


def test_odd_extend_zero():
    assert not np.any(odd_extend(ctrl(X, T1, lambda x, t: 0 * x)).values)


def test_time_integrate():
    J = time_integrate(ctrl(X, T2, lambda x, t: np.ones_like(x), cls=ExtendedControl))
    assert np.max(np.abs(J.values - T2[None, :])) <= 1e-14
    assert not np.any(time_integrate(ctrl(X, T2, lambda x, t: 0 * x)).values)


def test_time_integrate_odd_one():
    J = time_integrate(odd_extend(ctrl(X, T1, lambda x, t: np.ones_like(x))))
    expect = np.where(T2 <= 1.0, T2, 2.0 - T2)
    # the midpoint value at T smooths the kink over one step
    far = np.abs(T2 - 1.0) > 0.06
    assert np.allclose(J.values[:, far], expect[far], atol=1e-14)


def test_odd_part_even_and_odd():
    even = ctrl(X, T2, lambda x, t: np.cos(np.pi * (t - 1.0)) * x, cls=ExtendedControl)
    odd = ctrl(X, T2, lambda x, t: np.sin(np.pi * (t - 1.0)) * x, cls=ExtendedControl)
    assert np.max(np.abs(odd_part(even).values)) <= 1e-15
    assert np.allclose(odd_part(odd).values, odd.values, atol=1e-15)


def test_odd_part_needs_even_interval_count():
    with pytest.raises(GridMismatch):
        odd_part(ctrl(X, np.linspace(0, 2, 40), lambda x, t: x, cls=ExtendedControl))


def test_restrict_inverts_extension():
    f = ctrl(X, T1, lambda x, t: np.sin(3 * t) * x)
    f = f.with_values(np.where(f.t[None, :] < 1.0, f.values, 0.0))
    r = restrict(odd_extend(f))
    assert np.array_equal(r.values[:, :-1], f.values[:, :-1]) and np.array_equal(r.t, f.t)
    assert not np.any(restrict(ctrl(X, T2, lambda x, t: 0 * x)).values)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_adjoint_identity(seed, n):
    rng = np.random.default_rng(seed)
    t1, t2 = np.linspace(0, 1, n + 1), np.linspace(0, 2, 2 * n + 1)
    f = Control(X, t1, rng.standard_normal((X.size, t1.size)))
    g = ExtendedControl(X, t2, rng.standard_normal((X.size, t2.size)))
    lhs, rhs = pairing(odd_extend(f), g), pairing(f, odd_extend_adjoint(g))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_odd_part_idempotent(seed):
    g = ExtendedControl(X, T2, np.random.default_rng(seed).standard_normal((X.size, T2.size)))
    p = odd_part(g)
    assert np.max(np.abs(odd_part(p).values - p.values)) <= 1e-14


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    f = ExtendedControl(X, T2, rng.standard_normal((X.size, T2.size)))
    g = ExtendedControl(X, T2, rng.standard_normal((X.size, T2.size)))
    for op in (odd_part, time_integrate, restrict):
        lhs = op(a * f + b * g).values
        rhs = a * op(f).values + b * op(g).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-14 * max(1.0, np.max(np.abs(lhs))) * 10
    f1, g1 = restrict(f), restrict(g)
    lhs = odd_extend(a * f1 + b * g1).values
    assert np.allclose(lhs, a * odd_extend(f1).values + b * odd_extend(g1).values, atol=1e-13)


# -- kappa

def test_kappa(grid):
    k = make_kappa(grid.T, grid)
    assert np.allclose(k.kappa.values[:, -1], 0.0, atol=1e-14)
    assert np.allclose(k.kappa.values[:, 0], grid.T)
    assert np.allclose(odd_extend(k.kappa).values, k.kappa_ext.values, atol=1e-14)
    with pytest.raises(ValueError):
        make_kappa(-1.0, grid)
    with pytest.raises(GridMismatch):
        make_kappa(0.5, grid)


# -- connecting operator

def test_apply_ct_zero(grid, rho1):
    assert not np.any(apply_CT(rho1, grid.control(), grid).values)
    assert ct_form_oracle(rho1, grid.control(), smooth(np.random.default_rng(0), grid), grid) == 0.0


def test_ct_symmetric_and_positive_gram(grid, rho1):
    rng = np.random.default_rng(1)
    fam = [smooth(rng, grid) for _ in range(4)]
    images = [apply_CT(rho1, f, grid) for f in fam]
    A = np.array([[pairing(cf, g) for g in fam] for cf in images])
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.max(np.abs(A))
    assert np.linalg.eigvalsh(0.5 * (A + A.T))[0] >= -1e-12 * np.max(np.abs(A))
    assert all(A[i, i] > 0 for i in range(4))


def test_ct_weighted_symmetry_variable_rho(grid, rho_anomaly):
    # with variable rho the discrete operator is symmetric in the weighted product up to O(h^2)
    rng = np.random.default_rng(2)
    f, g = smooth(rng, grid), smooth(rng, grid)
    w = rho_anomaly.boundary_rho(grid)
    cf, cg = apply_CT(rho_anomaly, f, grid), apply_CT(rho_anomaly, g, grid)
    a, b = inner_product_outer(cf, g, w), inner_product_outer(f, cg, w)
    scale = math.sqrt(inner_product_outer(cf, f, w) * inner_product_outer(cg, g, w))
    assert abs(a - b) / scale <= 5e-3


def test_oracle_positive(grid, rho1):
    f = smooth(np.random.default_rng(3), grid)
    assert ct_form_oracle(rho1, f, f, grid) > 0


def ct_discrepancy(grid, rng, n):
    rho = VelocityField.constant(grid)
    worst = 0.0
    for _ in range(n):
        f, g = smooth(rng, grid), smooth(rng, grid)
        off = ct_form_oracle(rho, f, g, grid)
        form = pairing(apply_CT(rho, f, grid), g)
        den = math.sqrt(ct_form_oracle(rho, f, f, grid) * ct_form_oracle(rho, g, g, grid))
        worst = max(worst, abs(off - form) / den)
    return worst


def test_ct_matches_oracle_and_converges():
    g = SimGrid.create((0.0, 1.0), 1.0, 0.05)
    coarse = ct_discrepancy(g, np.random.default_rng(4), 4)
    fine = ct_discrepancy(g.refined(), np.random.default_rng(4), 4)
    assert coarse <= 5e-2 and fine <= 5e-2
    assert coarse / fine >= 2.0
