import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from necrostrip.errors import TailNotCertified
from necrostrip.model import existence_threshold, flat_stationary, validate_params
from necrostrip.spectral import (bvp_oracle_lambda, classify_stability, curvature_weight,
                                 gamma_k, gamma_star, gamma_star_sensitivity, lambda_k,
                                 lambda_k_direct, mode_profiles, stiff_symbol)

# Richardson extrapolation (n = 8192, 16384) of bvp_oracle_lambda, P0, gamma = 1
LAMBDA_ORACLE_P0 = [
    0.9999999999136152, -0.5726065112415702, 5.396265677249754, 23.960044659497147,
    60.7283027096092, 121.58580737357998, 212.48962975015164, 339.4204428058705,
    508.3683216293867,
]
# same, P0 with nu = 0.5 and gamma = 0.7 (interface term switched on)
LAMBDA_ORACLE_NU05 = {0: 0.5000000000281547, 1: -0.8975047111057464, 2: 2.995907434350464,
                      4: 41.528302655268426, 8: 354.7683216833362}
# enumerated on P0 with K_max = 64 and 128
GAMMA_STAR_P0 = 1.5737894410518176


@pytest.mark.parametrize("k", range(9))
def test_lambda_matches_frozen_oracle(p0, fs0, k):
    assert lambda_k(p0, fs0, k, 1.0) == pytest.approx(LAMBDA_ORACLE_P0[k], rel=1e-7, abs=1e-8)


@pytest.mark.parametrize("k", sorted(LAMBDA_ORACLE_NU05))
def test_lambda_matches_oracle_with_interface_term(p0, k):
    p = replace(p0, nu=0.5)
    fs = flat_stationary(p)
    assert lambda_k(p, fs, k, 0.7) == pytest.approx(LAMBDA_ORACLE_NU05[k], rel=1e-7, abs=1e-8)


def test_lambda_zero_mode(p0, fs0):
    for g in (0.1, 1.0, 7.0):
        assert lambda_k(p0, fs0, 0, g) == p0.nu


def test_direct_transcription_and_parity(p0, fs0):
    for k in range(1, 20):
        ref = lambda_k(p0, fs0, k, 1.3)
        assert lambda_k_direct(p0, fs0, k, 1.3) == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert lambda_k_direct(p0, fs0, -k, 1.3) == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert lambda_k(p0, fs0, -k, 1.3) == ref


def test_identity_and_neutral_gamma(p0, fs0):
    for k in range(1, 65):
        lam = lambda_k(p0, fs0, k, 1.0)
        rhs = curvature_weight(k, fs0) * (1.0 - gamma_k(p0, fs0, k))
        assert abs(lam - rhs) <= 1e-12 * (1.0 + abs(lam))
    for k in range(1, 17):
        gk = gamma_k(p0, fs0, k)
        assert abs(lambda_k(p0, fs0, k, gk)) <= 1e-12 * curvature_weight(k, fs0) * max(1.0, gk)


def test_affine_in_gamma(p0, fs0):
    for k in (1, 5, 30):
        a, b, c = (lambda_k(p0, fs0, k, g) for g in (0.5, 1.0, 2.5))
        slope = curvature_weight(k, fs0)
        assert (b - a) / 0.5 == pytest.approx(slope, rel=1e-9)
        assert (c - b) / 1.5 == pytest.approx(slope, rel=1e-9)
    assert stiff_symbol([-3, 0, 3], fs0, 2.0)[0] == pytest.approx(2 * curvature_weight(3, fs0))


def test_large_k_no_overflow(p0, fs0):
    for k in (200, 1000, 5000):
        lam = lambda_k(p0, fs0, k, 1.0)
        assert math.isfinite(lam) and lam > 0
        assert math.isfinite(gamma_k(p0, fs0, k))


def test_tail_limit(p0, fs0):
    lim = p0.mu * (p0.sigma_bar - p0.sigma_tilde)
    w = lambda k: curvature_weight(k, fs0) * gamma_k(p0, fs0, k)
    # the approach is O(1/k): the gap to the limit behaves like mu sqrt(sb^2 - sh^2) / (2k)
    for k in (64, 256, 1024):
        assert (lim - w(k)) * 2 * k == pytest.approx(p0.mu * p0.root_term, rel=2e-2)
    assert abs(w(128) - lim) < 0.01 * lim
    assert gamma_k(p0, fs0, 64) < 1e-3 * gamma_k(p0, fs0, 1)
    assert all(gamma_k(p0, fs0, k) > 0 for k in range(1, 65))


def test_divergence(p0, fs0):
    lam = [lambda_k(p0, fs0, k, 1.0) for k in range(0, 65)]
    assert np.all(np.diff(lam[8:]) > 0)
    assert lam[64] > 10 * lam[8]


def test_gamma_star(p0, fs0):
    gs, arg, ok = gamma_star(p0, fs0, 64)
    assert ok and gs > 0
    assert gs == pytest.approx(GAMMA_STAR_P0, rel=1e-13)
    assert arg == (1,)
    assert gs == max(gamma_k(p0, fs0, k) for k in range(1, 65))
    assert gamma_star(p0, fs0, 128)[:2] == (gs, arg)
    k = arg[0]
    assert lambda_k(p0, fs0, k, gs - 1e-6) < 0 < lambda_k(p0, fs0, k, gs + 1e-6)


def test_gamma_star_needs_kmax(p0, fs0):
    with pytest.raises(ValueError):
        gamma_star(p0, fs0, 4)


def test_tail_not_certified():
    # sigma_tilde close to sigma_hat: every gamma_k up to k = 8 is tiny, so the tail
    # bound at K_max = 8 cannot exclude a larger gamma_k further out
    p = validate_params(1.0, 1.05, 1.01 * existence_threshold(1.0, 1.05), 1.0, 1.0, 1.0)
    fs = flat_stationary(p)
    assert not gamma_star(p, fs, 8, raise_on_uncertified=False)[2]
    with pytest.raises(TailNotCertified) as info:
        gamma_star(p, fs, 8)
    k_ok = info.value.suggested_k_max
    assert k_ok > 8
    gs, _, ok = gamma_star(p, fs, k_ok)
    assert ok and gs > 0


def test_classify(p0, fs0):
    gs = gamma_star(p0, fs0)[0]
    rep = classify_stability(p0, fs0, 2 * gs)
    assert rep.classification == "Stable" and rep.unstable_modes == ()
    lower = math.tanh(fs0.rho_s) * gs
    assert min(rep.lam[k] for k in range(1, 65)) >= lower - 1e-12
    assert rep.varpi == pytest.approx(min(p0.nu, lower))
    rep = classify_stability(p0, fs0, gs / 2)
    assert rep.classification == "Unstable" and 1 in rep.unstable_modes
    assert 0 not in rep.unstable_modes
    assert classify_stability(p0, fs0, gs).classification == "Marginal"


def test_mode_profiles(p0, fs0):
    s = p0.root_term
    for k in (0, 1, 3):
        mp_ = mode_profiles(p0, fs0, k, 1.0)
        assert mp_.a_k[0] == pytest.approx(0.0, abs=1e-14)
        assert mp_.a_k[-1] == pytest.approx(-s, rel=1e-13)
    assert mode_profiles(p0, fs0, 0, 1.0).d_k == pytest.approx(1.0, rel=1e-13)
    # d_1 from the printed coefficient, evaluated with mpmath (40 digits)
    assert mode_profiles(p0, fs0, 1, 1.0).d_k == pytest.approx(0.503604269401143, rel=1e-13)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_pressure_profile_ode_and_continuity(p0, k):
    p = replace(p0, nu=0.5)
    fs = flat_stationary(p)
    m = mode_profiles(p, fs, k, 1.2, n_samples=4097)
    up = m.y_b >= fs.eta_s
    yb, b = m.y_b[up], m.b_k[up]
    h = yb[1] - yb[0]
    d2 = (-b[4:] + 16 * b[3:-1] - 30 * b[2:-2] + 16 * b[1:-3] - b[:-4]) / (12 * h ** 2)
    q = math.sqrt(k * k + 1.0)
    a_mid = -p.root_term * np.sinh(q * (yb[2:-2] - fs.eta_s)) / np.sinh(q * fs.gap)
    res = d2 - k * k * b[2:-2] + p.mu * a_mid
    assert np.max(np.abs(res[5:-5])) < 1e-6
    # both branches meet at eta_s
    j = np.flatnonzero(up)[0]
    lo = np.polyval(np.polyfit(m.y_b[j - 3:j], m.b_k[j - 3:j], 2), fs.eta_s)
    hi = np.polyval(np.polyfit(m.y_b[j:j + 3], m.b_k[j:j + 3], 2), fs.eta_s)
    assert abs(lo - hi) < 1e-8
    # closed-form pressure profile reproduces lambda_k at the top
    top = (3 * b[-1] - 4 * b[-2] + b[-3]) / (2 * h) - p.mu * (p.sigma_bar - p.sigma_tilde)
    assert top == pytest.approx(lambda_k(p, fs, k, 1.2), rel=1e-5)


def test_bvp_oracle_convergence(p0, fs0):
    for k in (0, 1, 3, 8):
        exact = lambda_k(p0, fs0, k, 1.0)
        errs = [abs(bvp_oracle_lambda(p0, fs0, k, 1.0, n) - exact) for n in (512, 1024, 2048)]
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.9)
    assert bvp_oracle_lambda(p0, fs0, 0, 1.0, 4096) == pytest.approx(p0.nu, abs=1e-6)
    # relative errors measured against max(1, |lambda_k|)
    lam1 = lambda_k(p0, fs0, 1, 1.0)
    assert abs(bvp_oracle_lambda(p0, fs0, 1, 1.0, 2048) - lam1) <= 1e-5 * max(1.0, abs(lam1))
    lam3 = lambda_k(p0, fs0, 3, 1.0)
    assert abs(bvp_oracle_lambda(p0, fs0, 3, 1.0, 8192) - lam3) <= 1e-6 * abs(lam3)
    # Richardson extrapolation over 512/1024/2048 lands on the closed form
    v = [bvp_oracle_lambda(p0, fs0, 1, 1.0, n) for n in (512, 1024, 2048)]
    assert (4 * v[2] - v[1]) / 3 == pytest.approx(lam1, rel=1e-7)


def test_sensitivity_in_nu(p0, fs0):
    out = gamma_star_sensitivity(p0, fs0, [0.5, 1.0, 2.0])
    vals = [g for _, g in out]
    assert [n for n, _ in out] == [0.5, 1.0, 2.0]
    assert vals[0] >= vals[1] >= vals[2]
    assert gamma_star_sensitivity(p0, None, [1.0]) == [(1.0, GAMMA_STAR_P0)]


def test_gamma_k_decreasing_in_nu(p0, fs0):
    d = 1e-3
    fsd = flat_stationary(replace(p0, nu=p0.nu + d))
    pd = replace(p0, nu=p0.nu + d)
    for k in range(1, 9):
        a, b = gamma_k(p0, fs0, k), gamma_k(pd, fsd, k)
        if k <= 6:
            assert b < a
        else:
            # the change is ~1e-20 here, below double resolution of gamma_k
            assert b <= a


@given(k=st.integers(1, 64), g=st.floats(0.01, 10.0),
       nu=st.floats(0.2, 3.0), sb=st.floats(4.6, 20.0))
@settings(max_examples=60, deadline=None)
def test_identity_property(k, g, nu, sb):
    p = validate_params(1.0, 2.0, sb, 1.0, nu, g)
    fs = flat_stationary(p)
    lam = lambda_k(p, fs, k, g)
    rhs = curvature_weight(k, fs) * (g - gamma_k(p, fs, k))
    assert abs(lam - rhs) <= 1e-12 * (1.0 + abs(lam)) * max(1.0, g)
    assert lambda_k(p, fs, -k, g) == lam
