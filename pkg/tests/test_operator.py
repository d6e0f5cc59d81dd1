import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgscatter.basis import SampledFamily, make_basis, mult_op
from kgscatter.errors import NotPositive, NotSelfAdjoint
from kgscatter.operator import (frac_power_quadrature, power_difference_decay,
                                self_adjointness_defect, smoothing_order, sqrt_op,
                                weighted_power)


def _spd(rng, n, lo=1.0, hi=100.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    ev = np.geomspace(lo, hi, n)
    return (Q * ev) @ Q.conj().T


def _weight(K):
    b = make_basis(K, 2 * np.pi)
    return b, mult_op(b, 1.4 + 0.3 * np.cos(b.xs))


def test_sqrt_diagonal():
    k = np.arange(-5, 6)
    a = np.diag(k ** 2 + 1.0)
    np.testing.assert_allclose(sqrt_op(a, np.eye(11)), np.diag(np.sqrt(k ** 2 + 1.0)),
                               atol=1e-13)


def test_sqrt_random_spd(rng):
    a = _spd(rng, 6)
    e = sqrt_op(a, np.eye(6))
    assert np.linalg.norm(e @ e - a) <= 1e-12 * np.linalg.norm(a)


def test_sqrt_rejects_tiny_eigenvalue():
    with pytest.raises(NotPositive):
        sqrt_op(np.diag([1e-14, 1.0, 2.0]), np.eye(3))


def test_sqrt_rejects_non_self_adjoint(rng):
    a = _spd(rng, 4) + np.triu(np.ones((4, 4)), 1)
    with pytest.raises(NotSelfAdjoint):
        sqrt_op(a, np.eye(4))


@given(st.integers(0, 10_000), st.floats(1.0, 8.0))
@settings(max_examples=20, deadline=None)
def test_sqrt_squares_back_weighted(seed, log_cond):
    rng = np.random.default_rng(seed)
    b, W = _weight(5)
    n = b.N
    H = _spd(rng, n, 1.0, 10 ** log_cond)
    # a = W^-1 H is self-adjoint and positive for <u, W v>.
    a = np.linalg.solve(W, H)
    e = sqrt_op(a, W)
    assert np.linalg.norm(e @ e - a) <= 1e-10 * np.linalg.norm(a)
    assert self_adjointness_defect(e, W) <= 1e-9


def test_quadrature_scalar():
    out = frac_power_quadrature(4.0 * np.eye(3), np.eye(3), 0.5, 64)
    np.testing.assert_allclose(out, 2.0 * np.eye(3), atol=1e-8)


def test_quadrature_matches_sqrt_diag():
    k = np.arange(-32, 33)
    a = np.diag(k ** 2 + 1.0)
    ref = sqrt_op(a, np.eye(65))
    out = frac_power_quadrature(a, np.eye(65), 0.5, 128)
    assert np.linalg.norm(out - ref, 2) / np.linalg.norm(ref, 2) <= 1e-7


def test_quadrature_quarter_power(rng):
    a = _spd(rng, 6, 1.0, 50.0)
    r = frac_power_quadrature(a, np.eye(6), 0.25, 128)
    r4 = r @ r @ r @ r
    assert np.linalg.norm(r4 - a) / np.linalg.norm(a) <= 1e-6


@pytest.mark.parametrize("hi", [1e2, 1e3, 1e4])
def test_two_routes_agree_on_wide_spectra(rng, hi):
    b, W = _weight(8)
    a = np.linalg.solve(W, _spd(rng, b.N, 1.0, hi))
    e1 = weighted_power(a, W, 0.5)
    e2 = frac_power_quadrature(a, W, 0.5, 128)
    assert np.linalg.norm(e1 - e2, 2) / np.linalg.norm(e1, 2) <= 1e-6
    assert self_adjointness_defect(e2, W) <= 1e-9


def test_quadrature_rejects_bad_alpha():
    with pytest.raises(ValueError):
        frac_power_quadrature(np.eye(2), np.eye(2), 1.5)


def test_monotonicity_diagonal_pairs(rng):
    d2 = rng.uniform(1, 100, size=20)
    d1 = d2 + rng.uniform(0, 10, size=20)
    diff = sqrt_op(np.diag(d1), np.eye(20)) - sqrt_op(np.diag(d2), np.eye(20))
    assert np.min(np.linalg.eigvalsh(diff)) >= -1e-8


def test_smoothing_zero():
    b = make_basis(32, 2 * np.pi)
    rep = smoothing_order(np.zeros((b.N, b.N)), b)
    assert rep.s_norms == [0.0] * 5
    assert rep.p == np.inf and rep.smoothing


def test_smoothing_diagonal_power_eight():
    b = make_basis(64, 2 * np.pi)
    A = np.diag((1.0 + b.freqs ** 2) ** -4)
    rep = smoothing_order(A, b, window=(8, 32))
    assert max(rep.s_norms) <= 1.0 + 1e-12
    assert rep.p == pytest.approx(8.0, abs=0.5)
    assert rep.smoothing


def test_smoothing_identity():
    b = make_basis(32, 2 * np.pi)
    rep = smoothing_order(np.eye(b.N), b)
    top = (1 + 32.0 ** 2)
    for m, s in enumerate(rep.s_norms):
        assert s == pytest.approx(top ** m, rel=1e-12)
    assert rep.p == pytest.approx(0.0, abs=1e-9)
    assert not rep.smoothing


def _family(times, a2, profile):
    return SampledFamily(times, np.array([profile(t) * a2 for t in times]))


def test_power_difference_constant_family():
    a2 = np.diag([1.0, 4.0, 9.0])
    t = np.geomspace(5, 40, 8)
    W = SampledFamily(t, np.array([np.eye(3)] * len(t)))
    fit = power_difference_decay(_family(t, a2, lambda s: 1.0), a2, 0.5, W, np.eye(3))
    assert fit.sentinel == "exact"


def test_power_difference_scalar_rate():
    a2 = np.diag([1.0, 4.0, 9.0])
    t = np.geomspace(5, 40, 8)
    W = SampledFamily(t, np.array([np.eye(3)] * len(t)))
    fam = _family(t, a2, lambda s: 1.0 + 1.0 / (1 + s * s))
    fit = power_difference_decay(fam, a2, 0.5, W, np.eye(3))
    assert fit.gamma == pytest.approx(2.0, abs=0.05)
    # Prefactor from sqrt(1 + x) - 1 ~ x / 2 times ||a2^(1/2)|| = 3.
    assert fit.prefactor == pytest.approx(1.5, rel=0.05)


def test_power_difference_s1(s1_k8):
    m = s1_k8
    t = np.geomspace(5, 40, 8)
    mats = [m.at(s) for s in t]
    fa = SampledFamily(t, np.array([x[1] for x in mats]))
    fw = SampledFamily(t, np.array([x[0] for x in mats]))
    fit = power_difference_decay(fa, m.a_out, 0.5, fw, m.W_out)
    assert fit.gamma >= m.delta - 0.2
