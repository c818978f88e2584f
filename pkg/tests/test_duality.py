import math

import numpy as np
import pytest

from qpgaps import duality as du
from qpgaps import spectrum as sp
from qpgaps.cocycle import rotation_number, schrodinger_cocycle
from qpgaps.errors import BlochError
from qpgaps.fourier import FourierMap


def test_dual_matrix_free_is_diagonal(golden, amo):
    H = du.dual_matrix(0.0, amo, golden, 0.17, 8)
    off = H - np.diag(np.diag(H))
    assert np.abs(off).max() == 0.0
    ns = np.arange(-8, 9)
    expect = 2 * np.cos(2 * math.pi * (0.17 + ns * golden.value))
    assert np.allclose(np.diag(H), expect)


def test_dual_matrix_amo_tridiagonal(golden, amo):
    lam = 0.25
    H = du.dual_matrix(lam, amo, golden, 0.3, 6)
    assert np.allclose(np.diag(H, 1), lam)
    assert np.allclose(np.diag(H, -1), lam)
    assert np.abs(np.triu(H, 2)).max() == 0.0


def test_dual_matrix_symmetric(golden, amo):
    H = du.dual_matrix(0.25, amo, golden, 0.11, 10)
    assert np.abs(H - H.T).max() == 0.0


def test_find_bloch_free_case(golden, amo):
    E = 2 * math.cos(2 * math.pi * 0.3)
    sol = du.find_bloch(0.0, amo, golden, E, trunc=32, theta_grid=32)
    assert sol.energy == pytest.approx(E, abs=1e-9)
    assert sol.theta == pytest.approx(0.3, abs=1e-8)
    assert sol.duality_residual < 1e-12
    # delta mass at the center
    mags = np.abs(sol.u_hat)
    assert mags[sol.trunc] == 1.0
    assert np.sort(mags)[-2] < 1e-9


def test_find_bloch_normalization_bound(golden, amo):
    bs = sp.band_structure(0.25, amo, (89, 144))
    rec = [r for r in sp.label_gaps(bs, golden, rho_skip_width=math.inf)
           if r.label == 1][0]
    sol = du.find_bloch(0.25, amo, golden, rec.e_plus, trunc=128,
                        side="above", floor=rec.midpoint())
    assert np.abs(sol.u_hat).max() <= 1.0 + 1e-9
    assert sol.u_hat[sol.trunc] == 1.0


def test_find_bloch_decay_stable_under_doubling(golden, amo):
    bs = sp.band_structure(0.25, amo, (89, 144))
    rec = [r for r in sp.label_gaps(bs, golden, rho_skip_width=math.inf)
           if r.label == 1][0]
    sols = [
        du.find_bloch(0.25, amo, golden, rec.e_plus, trunc=t, side="above",
                      floor=rec.midpoint(), max_trunc=t * 2)
        for t in (64, 128)
    ]
    rates = [s.decay_rate for s in sols]
    assert all(r < 0 for r in rates)
    assert rates[0] == pytest.approx(rates[1], rel=0.2)


def test_detect_resonance_trivial_cases(golden):
    sol = du.BlochSolution(energy=0.0, theta=(golden.value / 2.0) % 1.0,
                           u_hat=np.array([1.0 + 0j]), trunc=0)
    assert du.detect_resonance(sol, golden, n_max=4) == 1
    sol0 = du.BlochSolution(energy=0.0, theta=0.0,
                            u_hat=np.array([1.0 + 0j]), trunc=0)
    assert du.detect_resonance(sol0, golden, n_max=4) == 0


def test_detect_resonance_none_when_far(golden):
    sol = du.BlochSolution(energy=0.0, theta=0.123456, u_hat=np.array([1.0 + 0j]),
                           trunc=0)
    assert du.detect_resonance(sol, golden, n_max=3, tol=1e-8) is None
    assert sol.resonance_dist > 1e-8


def test_assemble_wave_free_constant(golden, amo):
    sol = du.find_bloch(0.0, amo, golden, 2.0, trunc=16, theta_grid=16)
    du.detect_resonance(sol, golden, n_max=4)
    assert sol.n_tilde == 0
    wave = du.assemble_wave(sol, 0.0, amo, golden)
    assert wave.sign == 1
    assert wave.residual < 1e-7
    assert wave.U.period == 1
    assert wave.U_hat.period == 2


def test_assembled_wave_periods_and_parity(golden, amo):
    bs = sp.band_structure(0.25, amo, (89, 144))
    rec = [r for r in sp.label_gaps(bs, golden, rho_skip_width=math.inf)
           if r.label == 1][0]
    sol = du.find_bloch(0.25, amo, golden, rec.e_plus, trunc=128,
                        side="above", floor=rec.midpoint())
    du.detect_resonance(sol, golden, n_max=16)
    du.snap_to_resonance(sol, 0.25, amo, golden)
    wave = du.assemble_wave(sol, 0.25, amo, golden)
    # support parity: U_hat coefficients live on indices with the parity of n
    ks = wave.U_hat.k_range()
    mags = np.abs(wave.U_hat.coeffs).max(axis=1)
    wrong = mags[(ks % 2) != (wave.n_tilde % 2)]
    assert wrong.max(initial=0.0) < 1e-14
    assert wave.sign == (-1) ** (wave.parity_integer % 2)


def test_real_imag_split_satisfies_relation(golden, amo):
    bs = sp.band_structure(0.25, amo, (89, 144))
    rec = [r for r in sp.label_gaps(bs, golden, rho_skip_width=math.inf)
           if r.label == 1][0]
    sol = du.find_bloch(0.25, amo, golden, rec.e_plus, trunc=128,
                        side="above", floor=rec.midpoint())
    du.detect_resonance(sol, golden, n_max=16)
    du.snap_to_resonance(sol, 0.25, amo, golden)
    wave = du.assemble_wave(sol, 0.25, amo, golden)
    A = schrodinger_cocycle(0.25, amo, sol.energy).A
    xs = np.arange(512) / 512.0
    for part in (wave.U_hat.real_part(), wave.U_hat.imag_part()):
        lhs = np.einsum("nij,nj->ni", A(xs).real, part(xs).real)
        rhs = wave.sign * part(xs + golden.value).real
        scale = max(np.abs(part.sample(512)).max(), 1e-30)
        assert np.abs(lhs - rhs).max() / scale < 1e-7


def test_dual_ids_matches_direct_rotation_number(golden, amo):
    lam = 0.25
    for E in (-1.2, 0.4):
        n_dual = du.dual_ids(lam, amo, golden, E, trunc=96, theta_samples=24)
        r = rotation_number(schrodinger_cocycle(lam, amo, E, golden), target_err=1e-6)
        n_direct = 1.0 - 2.0 * r.value
        assert n_dual == pytest.approx(n_direct, abs=2.0 / 193 + 0.02)


def test_find_bloch_deterministic(golden, amo):
    E = 2 * math.cos(2 * math.pi * 0.41)
    a = du.find_bloch(0.0, amo, golden, E, trunc=32, theta_grid=16)
    b = du.find_bloch(0.0, amo, golden, E, trunc=32, theta_grid=16)
    assert a.energy == b.energy
    assert a.theta == b.theta
    assert np.array_equal(a.u_hat, b.u_hat)
