import math
import random

import numpy as np
import pytest

from qpgaps.errors import StripDomainError
from qpgaps.fourier import (FourierMap, matmul, matrix_exp, mul, strip_norm)


def random_real_map(rng, band, period=1, scale=1.0):
    c = (rng.standard_normal(2 * band + 1) + 1j * rng.standard_normal(2 * band + 1))
    c = scale * 0.5 * (c + c[::-1].conj())
    return FourierMap(c, period)


def test_eval_cosine_off_axis():
    c = FourierMap.cosine()
    assert c(1j * 0.1) == pytest.approx(math.cosh(0.2 * math.pi), abs=1e-12)


def test_eval_zero_and_harmonic():
    assert FourierMap.zero(4)(0.37) == 0
    assert FourierMap.harmonic(1)(0.25) == pytest.approx(1j, abs=1e-12)


def test_strip_norm_cosine():
    c = FourierMap.cosine()
    assert strip_norm(c, 0.0).value == pytest.approx(1.0, abs=1e-12)
    h = 0.08
    assert strip_norm(c, h).value == pytest.approx(math.cosh(2 * math.pi * h), rel=1e-9)


def test_strip_norm_scaling_homogeneity():
    rng = np.random.default_rng(3)
    m = random_real_map(rng, 6)
    lam = 3.7
    a = strip_norm(m, 0.03, grid=512).value
    b = strip_norm(lam * m, 0.03, grid=512).value
    assert b == pytest.approx(lam * a, rel=1e-12)


def test_product_to_sum_identity():
    c = FourierMap.cosine()
    p = mul(c, c)
    n = p.band_limit
    assert p.coeffs[n] == pytest.approx(0.5)
    assert p.coeffs[n + 2] == pytest.approx(0.25)
    assert p.coeffs[n - 2] == pytest.approx(0.25)
    assert abs(p.coeffs[n + 1]) < 1e-15


def test_average():
    assert FourierMap.cosine().average() == 0
    assert FourierMap.constant(2.5).average() == 2.5


def test_shift_phase():
    h = FourierMap.harmonic(1)
    s = h.shift(0.3)
    assert s.coeff(1) == pytest.approx(np.exp(2j * math.pi * 0.3))


def test_shift_roundtrip_exact():
    rng = np.random.default_rng(5)
    m = random_real_map(rng, 12)
    back = m.shift(0.377).shift(-0.377)
    assert np.abs(back.coeffs - m.coeffs).max() < 1e-15


def test_real_flag_propagation():
    rng = np.random.default_rng(7)
    a = random_real_map(rng, 5)
    b = random_real_map(rng, 8)
    assert a.is_real() and b.is_real()
    assert (a + b).is_real()
    assert mul(a, b).is_real()
    assert a.shift(0.123).is_real()
    assert not FourierMap.harmonic(2).is_real()


def test_submultiplicativity_on_strip():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = random_real_map(rng, 6)
        b = random_real_map(rng, 4)
        d = 0.02
        lhs = strip_norm(mul(a, b), d, grid=512).value
        rhs = strip_norm(a, d, grid=512).value * strip_norm(b, d, grid=512).value
        assert lhs <= rhs * (1.0 + 1e-9)


def test_period_mixing_is_an_error():
    a = FourierMap.cosine(period=1)
    b = FourierMap.cosine(period=2)
    with pytest.raises(ValueError):
        mul(a, b)
    with pytest.raises(ValueError):
        a + b


def test_lift_collapse_roundtrip():
    c = FourierMap.cosine()
    l = c.lift2()
    assert l.period == 2
    assert l(0.4) == pytest.approx(c(0.4), abs=1e-14)
    back = l.collapse1()
    assert back.period == 1
    assert np.abs(back.coeffs - c.coeffs).max() < 1e-15


def test_collapse_rejects_genuinely_two_periodic():
    h = FourierMap.harmonic(1, period=2)          # e^{i pi x}
    with pytest.raises(ValueError):
        h.collapse1()


def test_matrix_product_and_adjugate():
    A = FourierMap.from_coeff_dict({0: np.array([[2.0, -1.0], [1.0, 0.0]])}, shape=(2, 2))
    sq = matmul(A, A)
    assert np.allclose(sq(0.0).real, [[3, -2], [2, -1]])
    inv = A.adjugate()
    assert np.allclose(matmul(inv, A)(0.2).real, np.eye(2), atol=1e-14)


def test_matrix_exp_matches_pointwise():
    import scipy.linalg
    base = np.array([[0.0, 1.0], [-0.3, 0.0]])
    m = FourierMap.from_coeff_dict(
        {1: 0.1 * base, -1: 0.1 * base}, shape=(2, 2)
    )
    E = matrix_exp(m)
    for x in (0.0, 0.21, 0.77):
        direct = scipy.linalg.expm(0.2 * math.cos(2 * math.pi * x) * base)
        assert np.abs(E(x) - direct).max() < 1e-13


def test_truncation_records_tail():
    rng = np.random.default_rng(13)
    a = random_real_map(rng, 10)
    b = random_real_map(rng, 10)
    p = mul(a, b, band_limit=5)
    assert p.band_limit == 5
    assert p.tail_l1 > 0.0


def test_strip_error_carries_tail_bound():
    m = FourierMap.from_function(lambda x: 1.0 / (2.0 + math.cos(2 * math.pi * x)), 24)
    with pytest.raises(StripDomainError) as err:
        m(1j * 1.5)
    assert err.value.tail_bound > 0.0
    # far inside the reliable strip it evaluates fine
    assert abs(m(1j * 0.02)) > 0.0


def test_entire_trig_polynomials_evaluate_anywhere():
    c = FourierMap.cosine()
    assert abs(c(1j * 2.0)) == pytest.approx(math.cosh(4 * math.pi), rel=1e-12)


def test_vector_and_matrix_vector_product():
    A = FourierMap.from_coeff_dict({0: np.array([[0.0, -1.0], [1.0, 0.0]])}, shape=(2, 2))
    v = FourierMap.from_coeff_dict({0: np.array([1.0, 2.0])}, shape=(2,))
    out = mul(A, v)
    assert np.allclose(out(0.1).real, [-2.0, 1.0])


def test_text_roundtrip_scalar_and_matrix():
    rng = np.random.default_rng(17)
    s = random_real_map(rng, 4)
    back = FourierMap.from_text(s.to_text())
    assert np.abs(back.coeffs - s.coeffs).max() == 0.0
    A = FourierMap.from_coeff_dict(
        {1: rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))},
        shape=(2, 2),
    )
    backA = FourierMap.from_text(A.to_text())
    assert np.abs(backA.coeffs - A.coeffs).max() == 0.0
    assert backA.period == A.period


def test_from_function_recovers_cosine_coefficients():
    f = FourierMap.from_function(lambda x: 2 * math.cos(2 * math.pi * x), 3)
    assert f.coeff(1) == pytest.approx(1.0, abs=1e-12)
    assert f.coeff(-1) == pytest.approx(1.0, abs=1e-12)
    assert abs(f.coeff(0)) < 1e-12
