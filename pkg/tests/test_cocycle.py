import math

import numpy as np
import pytest

from qpgaps import arithmetic as ar
from qpgaps.cocycle import (Cocycle, amo_potential, conjugate, degree_of, lyapunov,
                            rotation_number, rotation_number_counting,
                            schrodinger_cocycle, strip_growth, transfer)
from qpgaps.errors import DegreeError
from qpgaps.fourier import FourierMap, matrix_exp, mul


def rotation_map(scale=1.0, period=1):
    """x -> R_{scale x}, the rotation by angle 2 pi scale x."""
    up = 0.5 * np.array([[1.0, 1j], [-1j, 1.0]])
    dn = 0.5 * np.array([[1.0, -1j], [1j, 1.0]])
    return FourierMap.from_coeff_dict({1: up, -1: dn}, period=period, shape=(2, 2))


def const_rotation(theta):
    c, s = math.cos(2 * math.pi * theta), math.sin(2 * math.pi * theta)
    return FourierMap.constant(np.array([[c, -s], [s, c]]))


def test_transfer_single_step(golden, amo):
    c = schrodinger_cocycle(0.25, amo, 1.3, golden)
    M, ls = transfer(c, 1, 0.2)
    direct = c.A(0.2)
    assert np.abs(M * math.exp(ls) - direct).max() < 1e-14


def test_transfer_free_square(golden, amo):
    c = schrodinger_cocycle(0.0, amo, 2.0, golden)
    M, ls = transfer(c, 2, 0.71)
    assert np.allclose((M * math.exp(ls)).real, [[3, -2], [2, -1]], atol=1e-12)


def test_transfer_determinant_long_product(golden, amo):
    c = schrodinger_cocycle(0.25, amo, 1.0, golden)
    M, ls = transfer(c, 1000, 0.0)
    # det of the true product is det(M) e^{2 ls}
    assert abs(np.linalg.det(M) * math.exp(2 * ls) - 1.0) < 1e-10


def test_cocycle_composition_property(golden, amo):
    rng = np.random.default_rng(2)
    c = schrodinger_cocycle(0.25, amo, 0.9, golden)
    for _ in range(4):
        j = int(rng.integers(1, 100))
        k = int(rng.integers(1, 100))
        x = float(rng.uniform(0, 1))
        M1, l1 = transfer(c, j + k, x)
        Ma, la = transfer(c, j, x + k * c.alpha)
        Mb, lb = transfer(c, k, x)
        lhs = M1 * math.exp(l1)
        rhs = (Ma * math.exp(la)) @ (Mb * math.exp(lb))
        assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())


def test_lyapunov_free_elliptic(golden, amo):
    assert abs(lyapunov(schrodinger_cocycle(0.0, amo, 0.0, golden), 500)) < 1e-3


def test_lyapunov_free_hyperbolic(golden, amo):
    got = lyapunov(schrodinger_cocycle(0.0, amo, 3.0, golden), 2000)
    assert got == pytest.approx(math.log((3 + math.sqrt(5)) / 2), abs=1e-3)


def test_lyapunov_amo_critical_regression(golden, amo):
    # iteration-convergence plateau at lambda = 2 on the spectrum's center
    got = lyapunov(schrodinger_cocycle(2.0, amo, 0.0, golden), 3000, phases=96)
    assert got == pytest.approx(math.log(2.0), abs=5e-2)


def test_rotation_number_free_points(golden, amo):
    cases = [(0.0, 0.25), (-2.0, 0.5), (2 * math.cos(2 * math.pi * 0.3), 0.3)]
    for E, expect in cases:
        r = rotation_number(schrodinger_cocycle(0.0, amo, E, golden))
        assert r.value == pytest.approx(expect, abs=1e-6)
        assert r.error < 1e-6


def test_rotation_number_free_closed_form_grid(golden, amo):
    for E in np.linspace(-1.95, 1.95, 21):
        r = rotation_number(schrodinger_cocycle(0.0, amo, E, golden))
        assert r.value == pytest.approx(math.acos(E / 2) / (2 * math.pi), abs=1e-6)


def test_rotation_number_monotone_in_energy(golden, amo):
    vals = []
    for E in np.linspace(-2.6, 2.6, 27):
        r = rotation_number(schrodinger_cocycle(0.25, amo, float(E), golden),
                            target_err=1e-6)
        vals.append((r.value, r.error))
    for (v1, e1), (v2, e2) in zip(vals, vals[1:]):
        assert v2 <= v1 + e1 + e2 + 1e-9


def test_rotation_number_agrees_with_counting(golden, amo):
    for E in (-1.54, 0.33, 1.8376):
        c = schrodinger_cocycle(0.25, amo, E, golden)
        r1 = rotation_number(c, target_err=1e-7)
        r2 = rotation_number_counting(c, iterations=1 << 18)
        assert r1.value == pytest.approx(r2.value, abs=5e-5)


def test_conjugate_by_identity(golden, amo):
    c = schrodinger_cocycle(0.25, amo, 1.0, golden)
    cc = conjugate(c, FourierMap.identity())
    assert np.abs(cc.A.trim(1e-14).coeffs - c.A.coeffs).max() < 1e-14


def test_conjugate_by_constant_rotation_keeps_rho(golden, amo):
    c = schrodinger_cocycle(0.0, amo, 0.7, golden)
    r0 = rotation_number(c)
    cc = conjugate(c, const_rotation(0.2))
    r1 = rotation_number(cc)
    assert r1.value == pytest.approx(r0.value, abs=1e-7)


def _circle_residual(x):
    v = x % 1.0
    return min(v, 1.0 - v)


def test_degree_two_conjugation_shifts_rho(golden, amo):
    c = schrodinger_cocycle(0.0, amo, 2 * math.cos(2 * math.pi * 0.23), golden)
    rA = rotation_number(c)
    cB = conjugate(c, rotation_map())
    rB = rotation_number(cB)
    best = min(
        _circle_residual(s1 * 2 * rA.value - s2 * 2 * rB.value - 2 * golden.value)
        for s1 in (1, -1) for s2 in (1, -1)
    )
    assert best <= 3 * (rA.error + rB.error) + 1e-9


def test_degree_of_constants_and_rotations():
    assert degree_of(FourierMap.identity()) == 0
    assert degree_of(const_rotation(0.37)) == 0
    assert degree_of(rotation_map()) == 2
    assert degree_of(rotation_map(period=2)) == 1   # half winding per unit length


def test_degree_errors_on_singular_map():
    Z = FourierMap.constant(np.zeros((2, 2)))
    with pytest.raises(DegreeError):
        degree_of(Z)


def test_near_rotation_linear_response(golden):
    """|rho(alpha, A) - theta| scales linearly in the distance to R_theta.

    The first-order response is the mean rotational part of the generator, so
    the generator needs a constant component along [[0,-1],[1,0]].
    """
    theta = 0.21
    sym = np.array([[0.0, 1.0], [1.0, 0.0]])
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    gen = FourierMap.from_coeff_dict(
        {0: 0.7 * rot, 1: 0.5 * sym, -1: 0.5 * sym}, shape=(2, 2)
    )
    devs, dists = [], []
    for eps in (1e-2, 1e-3, 1e-4):
        A = mul(const_rotation(theta), matrix_exp(eps * gen))
        dist = float(np.abs(A.sample(512) - const_rotation(theta)(0.0)).max())
        r = rotation_number(Cocycle(golden, A), target_err=1e-10)
        devs.append(abs(r.value - theta))
        dists.append(dist)
    slope = np.polyfit(np.log(dists), np.log(devs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_strip_growth_elliptic_bounded(golden, amo):
    out = strip_growth(schrodinger_cocycle(0.0, amo, 1.0, golden), 0.0, 10000,
                       grid=64, points=10)
    assert all(v < 50.0 for _, v in out)


def test_strip_growth_identity_cocycle(golden):
    ident = Cocycle(golden, FourierMap.identity())
    out = strip_growth(ident, 0.0, 100, grid=8, points=4)
    assert all(v == pytest.approx(1.0, abs=1e-12) for _, v in out)


def test_strip_growth_hyperbolic_rate(golden, amo):
    out = strip_growth(schrodinger_cocycle(0.0, amo, 3.0, golden), 0.0, 200,
                       grid=16, points=5)
    k, v = out[-1]
    assert math.log(v) / k == pytest.approx(math.log((3 + math.sqrt(5)) / 2), abs=5e-3)
