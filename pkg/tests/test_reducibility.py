import math

import numpy as np
import pytest

from qpgaps import arithmetic as ar
from qpgaps import duality as du
from qpgaps import reducibility as red
from qpgaps import spectrum as sp
from qpgaps.cocycle import degree_of, schrodinger_cocycle
from qpgaps.errors import FrameError, SmallDivisorError
from qpgaps.fourier import FourierMap, matmul, mul


def random_real_scalar(rng, band, scale=1.0):
    c = rng.standard_normal(2 * band + 1) + 1j * rng.standard_normal(2 * band + 1)
    return FourierMap(scale * 0.5 * (c + c[::-1].conj()))


def random_real_matrix(rng, band, scale=1.0):
    c = rng.standard_normal((2 * band + 1, 2, 2)) + 1j * rng.standard_normal((2 * band + 1, 2, 2))
    return FourierMap(scale * 0.5 * (c + c[::-1].conj()))


# ---- scalar homological equation -------------------------------------------

def test_scalar_solve_constant_is_zero(golden):
    phi = red.solve_homological_scalar(FourierMap.constant(4.2), golden)
    assert np.abs(phi.coeffs).max() == 0.0


def test_scalar_solve_cosine_coefficients(golden):
    phi = red.solve_homological_scalar(FourierMap.cosine(), golden, sign=1)
    d = np.exp(2j * math.pi * golden.value) - 1.0
    assert phi.coeff(1) == pytest.approx(0.5 / d, abs=1e-14)
    assert phi.coeff(-1) == pytest.approx(np.conj(0.5 / d), abs=1e-14)


@pytest.mark.parametrize("sign", [1, -1])
def test_scalar_solve_random_residuals(golden, sign):
    rng = np.random.default_rng(42 + sign)
    xs = np.arange(2048) / 2048.0
    for _ in range(20):
        band = int(rng.integers(2, 17))
        nu = random_real_scalar(rng, band)
        phi = red.solve_homological_scalar(nu, golden, sign=sign)
        lhs = sign * (phi(xs + golden.value) - phi(xs)).real
        rhs = (nu(xs) - nu.average()).real
        sup = max(np.abs(nu(xs)).max(), 1e-300)
        assert np.abs(lhs - rhs).max() < 1e-9 * sup


def test_scalar_solve_names_breached_divisor():
    near_third = ar.expand_cf(1.0 / 3.0 + 1e-13, 3, dps=40)
    nu = FourierMap.from_coeff_dict({3: 0.5, -3: 0.5})
    with pytest.raises(SmallDivisorError) as err:
        red.solve_homological_scalar(nu, near_third, divisor_cutoff=1e-6)
    assert abs(err.value.k) == 3


def test_scalar_solve_requires_real_data(golden):
    with pytest.raises(ValueError):
        red.solve_homological_scalar(FourierMap.harmonic(2), golden)


# ---- parabolic homological equation -----------------------------------------

def test_parabolic_solve_zero(golden):
    P = red.ParabolicForm(1, 0.1)
    Y = red.solve_homological_parabolic(FourierMap.zero(3, shape=(2, 2)), P, golden)
    assert np.abs(Y.coeffs).max() == 0.0


def test_parabolic_mu_zero_decouples_to_scalar(golden):
    rng = np.random.default_rng(9)
    pert = random_real_matrix(rng, 6)
    P = red.ParabolicForm(1, 0.0)
    Y = red.solve_homological_parabolic(pert, P, golden)
    for i in range(2):
        for j in range(2):
            phi = red.solve_homological_scalar(pert.entry(i, j), golden, sign=1)
            assert np.abs(Y.entry(i, j).coeffs - phi.coeffs).max() < 1e-12


def test_parabolic_single_harmonic_squared_divisor(golden):
    mu = 0.1
    P = red.ParabolicForm(1, mu)
    c = np.zeros((3, 2, 2), dtype=complex)
    c[0, 1, 0] = 0.5
    c[2, 1, 0] = 0.5
    pert = FourierMap(c)
    Y = red.solve_homological_parabolic(pert, P, golden)
    d = np.exp(2j * math.pi * golden.value) - 1.0
    assert Y.entry(0, 0).coeff(1) == pytest.approx(mu * 0.5 / d**2, abs=1e-13)


@pytest.mark.parametrize("sign,mu", [(1, 0.1), (-1, -0.07)])
def test_parabolic_residual_random(golden, sign, mu):
    rng = np.random.default_rng(31)
    pert = random_real_matrix(rng, 8)
    P = red.ParabolicForm(sign, mu)
    Y = red.solve_homological_parabolic(pert, P, golden)
    xs = np.arange(2048) / 2048.0
    lhs = np.matmul(Y(xs + golden.value), P.matrix) - np.matmul(P.matrix, Y(xs))
    rhs = pert(xs) - pert.average()
    assert np.abs(lhs - rhs).max() < 1e-9 * np.abs(rhs).max()


def test_parabolic_breach_names_entry(golden):
    near_third = ar.expand_cf(1.0 / 3.0 + 1e-13, 3, dps=40)
    c = np.zeros((7, 2, 2), dtype=complex)
    c[0, 1, 0] = 0.5
    c[6, 1, 0] = 0.5
    pert = FourierMap(c)
    with pytest.raises(SmallDivisorError) as err:
        red.solve_homological_parabolic(pert, red.ParabolicForm(1, 0.1), near_third,
                                        divisor_cutoff=1e-6)
    assert abs(err.value.k) == 3
    assert err.value.entry is not None


# ---- averaging ---------------------------------------------------------------

def test_averaging_step_zero_pert(golden):
    P = red.ParabolicForm(1, 0.1)
    st = red.averaging_step(P, FourierMap.zero(2, shape=(2, 2)), 1e-2, golden, 0.05)
    assert st.report.norm_step_minus_id == 0.0
    assert np.allclose(st.const_next, P.matrix)
    assert st.report.norm_pert_next == 0.0


def test_averaging_step_constant_pert_is_exact(golden):
    P = red.ParabolicForm(1, 0.1)
    pert = FourierMap.constant(np.array([[0.3, -0.2], [0.1, -0.3]]))
    eps = 1e-2
    st = red.averaging_step(P, pert, eps, golden, 0.05)
    assert st.report.norm_step_minus_id == 0.0        # k = 0 mode gives Y = 0
    assert np.allclose(st.const_next, P.matrix + eps * pert(0.0).real)
    assert st.report.norm_pert_next < 1e-14


def test_averaging_step_eps_squared_law(golden):
    rng = np.random.default_rng(5)
    pert = random_real_matrix(rng, 8, scale=0.3)
    P = red.ParabolicForm(1, 0.1)
    resid = {}
    for eps in (1e-2, 1e-3):
        st = red.averaging_step(P, pert, eps, golden, 0.05)
        resid[eps] = eps**2 * st.report.norm_pert_next
    ratio = resid[1e-2] / resid[1e-3]
    assert 50.0 <= ratio <= 200.0


def test_double_step_eps_cubed_law(golden):
    rng = np.random.default_rng(5)
    pert = random_real_matrix(rng, 8, scale=0.3)
    P = red.ParabolicForm(1, 0.1)
    resid = {}
    for eps in (1e-2, 1e-3):
        d = red.double_step(P, pert, eps, golden, 0.05)
        resid[eps] = eps**3 * d.reports[1].norm_pert_next
    ratio = resid[1e-2] / resid[1e-3]
    assert 300.0 <= ratio <= 3000.0


def test_double_step_degree_preserved(golden):
    rng = np.random.default_rng(8)
    pert = random_real_matrix(rng, 6, scale=0.3)
    P = red.ParabolicForm(1, 0.1)
    d = red.double_step(P, pert, 1e-3, golden, 0.05)
    assert degree_of(d.composite_map) == 0


def test_averaging_step_admissibility_gate(golden):
    rng = np.random.default_rng(2)
    pert = random_real_matrix(rng, 6, scale=50.0)
    with pytest.raises(ArithmeticError):
        red.averaging_step(red.ParabolicForm(1, 0.1), pert, 0.5, golden, 0.05)


def test_first_order_log_term_matches_finite_difference(golden, amo):
    """Closed form of the first-order log piece against a central difference
    on the constant part of the double step, for perturbation data with the
    reduced-cocycle structure."""
    reduction, ident = _reduced_m1(golden, amo)
    pert = red.perturbation_matrix(reduction, 0.25, amo, _reduced_m1.energy, golden)
    P = reduction.parabolic
    closed = red.first_order_log_term(ident.averages, P.mu)
    h = 1e-3
    Ls = {}
    for e in (h, -h):
        d = red.double_step(P, pert, e, golden, 0.05)
        Ls[e] = red._log_2x2((P.sign * d.const_final)[None, :, :])[0]
    fd = (Ls[h] - Ls[-h]) / (2 * h)
    assert np.abs(fd - closed).max() < 1e-6


def _reduced_m1(golden, amo):
    if getattr(_reduced_m1, "cache", None) is None:
        bs = sp.band_structure(0.25, amo, (89, 144))
        rec = [r for r in sp.label_gaps(bs, golden, rho_skip_width=math.inf)
               if r.label == 1][0]
        sol = du.find_bloch(0.25, amo, golden, rec.e_plus, trunc=128,
                            side="above", floor=rec.midpoint())
        du.detect_resonance(sol, golden, n_max=16)
        du.snap_to_resonance(sol, 0.25, amo, golden)
        wave = du.assemble_wave(sol, 0.25, amo, golden)
        reduction = red.reduce_at_edge(sol.energy, wave, golden, 0.25, amo)
        ident = red.average_identities(reduction, golden)
        _reduced_m1.cache = (reduction, ident)
        _reduced_m1.energy = sol.energy
        _reduced_m1.record = rec
    return _reduced_m1.cache


# ---- frames ------------------------------------------------------------------

def test_build_frame_constant_vector():
    V = FourierMap.from_coeff_dict({0: np.array([1.0, 0.0])}, period=2, shape=(2,))
    R = red.build_frame(V)
    assert np.allclose(R(0.3).real, np.eye(2), atol=1e-12)


def test_build_frame_unit_determinant():
    V = FourierMap.from_coeff_dict(
        {0: np.array([1.3, 0.2]), 2: np.array([0.2, 0.1]), -2: np.array([0.2, 0.1])},
        period=2, shape=(2,),
    )
    R = red.build_frame(V)
    xs = np.arange(512) / 256.0
    dets = np.linalg.det(R(xs).real)
    assert np.abs(dets - 1.0).max() < 1e-10


def test_build_frame_norm_bound():
    V = FourierMap.from_coeff_dict(
        {0: np.array([1.1, 0.0]), 2: np.array([0.3, 0.0]), -2: np.array([0.3, 0.0])},
        period=2, shape=(2,),
    )
    R = red.build_frame(V)
    xs = np.arange(1024) / 512.0
    vals = V(xs).real
    norms = np.hypot(vals[:, 0], vals[:, 1])
    bound = norms.max() + 1.0 / norms.min()
    assert np.abs(R(xs)).max() <= bound + 1e-9


def test_build_frame_rejects_vanishing_vector():
    V = FourierMap.from_coeff_dict(
        {0: np.array([0.5, 0.0]), 1: np.array([0.25, 0.0]), -1: np.array([0.25, 0.0])},
        period=2, shape=(2,),
    )
    # V_1(x) = 0.5 + 0.5 cos(pi x) vanishes at x = 1
    with pytest.raises(FrameError):
        red.build_frame(V)


# ---- full reduction -----------------------------------------------------------

def test_reduce_free_edge_closed_form(golden, amo):
    sol = du.find_bloch(0.0, amo, golden, 2.0, trunc=16, theta_grid=16)
    du.detect_resonance(sol, golden, n_max=4)
    wave = du.assemble_wave(sol, 0.0, amo, golden)
    r = red.reduce_at_edge(sol.energy, wave, golden, 0.0, amo)
    assert r.parabolic.sign == 1
    assert r.parabolic.mu == pytest.approx(-1.0, abs=1e-9)
    assert r.off_normal_residual < 1e-9
    assert r.mu_iterate == pytest.approx(-1.0, abs=1e-9)


def test_reduce_m1_residuals_and_mu_cross_check(golden, amo):
    reduction, ident = _reduced_m1(golden, amo)
    assert reduction.off_normal_residual < 1e-10
    rel = abs(reduction.parabolic.mu - reduction.mu_iterate) / abs(reduction.parabolic.mu)
    assert rel < 1e-6
    assert reduction.parabolic.sign * reduction.parabolic.mu > 0
    assert reduction.diagnostics["frame_weight"] >= math.sqrt(2.0)


def test_average_identities_m1(golden, amo):
    reduction, ident = _reduced_m1(golden, amo)
    assert ident.shift_dev_21 < 1e-9
    assert ident.shift_dev_22 < 1e-9
    assert ident.wronskian_dev < 1e-9
    assert ident.symmetry_gap < 1e-9
    assert ident.lower_bound_ok
    assert ident.gram_det > 0.0
    # Cauchy-Schwarz
    assert ident.r11_r12**2 <= ident.r11_sq * ident.r12_sq + 1e-12


def test_perturbation_matrix_identity_probe(golden, amo):
    reduction, _ = _reduced_m1(golden, amo)
    pert = red.perturbation_matrix(reduction, 0.25, amo, _reduced_m1.energy, golden,
                                   probe_eps=1e-4, identity_tol=1e-8)
    # trace equals -mu R11^2 pointwise
    xs = np.arange(512) / 512.0
    R11 = reduction.conjugacy.R.entry(0, 0)
    tr = pert(xs)[:, 0, 0] + pert(xs)[:, 1, 1]
    expect = -reduction.parabolic.mu * (R11(xs).real**2)
    assert np.abs(tr.real - expect).max() < 1e-10


def test_perturbation_matrix_constant_frame():
    """Identity frame with mu = 0: the matrix reduces to [[0,0],[-1,0]]."""
    ident_R = FourierMap.identity()
    fake = red.Reduction(
        conjugacy=red.Conjugacy(R=ident_R, degree=0),
        parabolic=red.ParabolicForm(1, 0.0),
        nu=FourierMap.zero(), phi=FourierMap.zero(),
        off_normal_residual=0.0, mu_iterate=0.0, frame_choice="re", diagnostics={},
    )
    r11 = ident_R.entry(0, 0)
    top = mul((1.0 * ident_R.entry(0, 1)) - (0.0 * r11), r11)
    assert np.abs(top.coeffs).max() == 0.0


def test_gap_edge_epsilon_values():
    assert red.gap_edge_epsilon((1.0, 0.0, 1.0), red.ParabolicForm(1, 0.01)) == pytest.approx(-0.02)
    assert red.gap_edge_epsilon((1.0, 0.0, 1.0), red.ParabolicForm(1, 0.0)) == 0.0
    # negative-sign edge still steps downward
    assert red.gap_edge_epsilon((1.0, 0.0, 1.0), red.ParabolicForm(-1, -0.01)) == pytest.approx(-0.02)
    with pytest.raises(ArithmeticError):
        red.gap_edge_epsilon((1.0, 1.0, 1.0), red.ParabolicForm(1, 0.01))


def test_width_bounded_by_epsilon_m(golden, amo):
    reduction, ident = _reduced_m1(golden, amo)
    eps_m = red.gap_edge_epsilon(ident.averages, reduction.parabolic)
    assert eps_m < 0.0
    assert _reduced_m1.record.width <= abs(eps_m)


def test_elliptic_normalize_rotation_generator():
    Q, sd = red.elliptic_normalize(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert sd == pytest.approx(1.0)
    got = np.linalg.inv(Q) @ np.array([[0.0, -1.0], [1.0, 0.0]]) @ Q
    assert np.allclose(got, [[0.0, -1.0], [1.0, 0.0]], atol=1e-12)
    assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-12)


def test_elliptic_normalize_scaled():
    D = np.array([[0.0, -4.0], [1.0, 0.0]])
    Q, sd = red.elliptic_normalize(D)
    assert sd == pytest.approx(2.0)
    got = np.linalg.inv(Q) @ D @ Q
    assert np.allclose(got, [[0.0, -2.0], [2.0, 0.0]], atol=1e-12)


def test_elliptic_normalize_rejects_hyperbolic():
    with pytest.raises(ValueError):
        red.elliptic_normalize(np.array([[0.0, 4.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        red.elliptic_normalize(np.array([[2.0, -1.0], [1.0, -2.0]]))


def test_rotation_shift_check_collapsed_and_monotone(golden, amo):
    chk = red.rotation_shift_check(0.3, 0.0, golden, 0.0, amo)
    assert not chk.differs
    chk2 = red.rotation_shift_check(1.2, -0.3, golden, 0.0, amo)
    assert chk2.differs
    assert chk2.rho_shifted >= chk2.rho_edge      # rho non-increasing in E
