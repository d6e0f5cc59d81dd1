import numpy as np
import pytest
import sympy as sp

from kgscatter.basis import weighted_adjoint
from kgscatter.diagonalization import NodeFrame  # noqa: F401  (import check)
from kgscatter.geometry import SpacetimeSpec
from kgscatter.riccati import (RiccatiSolution, enforce_gap, gap_min_ratio, initial_term,
                               residual_decay, riccati_iterate, riccati_node, riccati_residual)

from conftest import build_model, ultrastatic_spec


def commuting_spec():
    """h = exp(2 s), V = 1 + s: every a(t) is diagonal in the Fourier basis."""
    return SpacetimeSpec.from_dict({
        "h": {"family": "exp_step", "left": 0.0, "right": 1.0},
        "V": {"family": "step", "left": 1.0, "right": 2.0},
    })


@pytest.fixture(scope="module")
def commuting():
    return build_model(commuting_spec(), 4)


_t = sp.symbols("t", real=True)
_s = (1 + _t / sp.sqrt(1 + _t ** 2)) / 2
_r = sp.diff(_s, _t)


def scalar_iteration(k, n):
    """Per-mode Riccati iteration for a = exp(-2s) k^2 + 1 + s, r = s'."""
    eps = sp.sqrt(sp.exp(-2 * _s) * k ** 2 + 1 + _s)
    a0 = sp.I / 2 * (sp.diff(eps, _t) / eps + _r)
    c = a0
    for _ in range(n):
        c = a0 + (sp.I * sp.diff(c, _t) + sp.I * _r * c - c ** 2) / (2 * eps)
    b = eps + c
    res = sp.I * sp.diff(b, _t) - b ** 2 + eps ** 2 + sp.I * _r * b
    return eps, b, res


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("t0", [-1.5, 0.7])
def test_commuting_family_matches_scalar_iteration(commuting, n, t0):
    node = riccati_node(commuting, t0, n_max=n, out_order=1)
    K = commuting.basis.K
    for k in (0, 1, 3):
        _, b, res = scalar_iteration(k, n)
        idx = K + k
        assert node.b_plus.value[idx, idx] == pytest.approx(complex(b.subs(_t, t0).evalf(30)),
                                                             abs=1e-9)
        assert node.rho_plus.value[idx, idx] == pytest.approx(
            complex(res.subs(_t, t0).evalf(30)), abs=1e-9)
    off = node.b_plus.value - np.diag(np.diag(node.b_plus.value))
    assert np.max(np.abs(off)) <= 1e-12


def test_initial_term_scalar_formula(commuting):
    a0 = initial_term(commuting)
    K = commuting.basis.K
    for i in (3, 20, 33):
        t0 = commuting.grid.nodes[i]
        for k in (0, 2):
            eps = sp.sqrt(sp.exp(-2 * _s) * k ** 2 + 1 + _s)
            ref = sp.I / 2 * (sp.diff(eps, _t) / eps + _r)
            assert a0.mats[i][K + k, K + k] == pytest.approx(
                complex(ref.subs(_t, t0).evalf(30)), abs=1e-12)


def test_eps_derivative_matches_analytic(commuting):
    K = commuting.basis.K
    t0 = 0.3
    node = riccati_node(commuting, t0, n_max=1, out_order=2)
    eps_dot = node.eps.derivative_values()[1]
    for k in (0, 4):
        eps = sp.sqrt(sp.exp(-2 * _s) * k ** 2 + 1 + _s)
        ref = float(sp.diff(eps, _t).subs(_t, t0).evalf(30))
        assert abs(eps_dot[K + k, K + k] - ref) <= 1e-8 * abs(ref)


def test_ultrastatic_trivial(ultra8):
    sol = riccati_iterate(ultra8, 4, keep_increments=True, times=[-3.0, 0.0, 5.0])
    eps = np.diag(np.sqrt(ultra8.basis.freqs ** 2 + 1))
    for nd in sol.nodes:
        np.testing.assert_allclose(nd.b_plus.value, eps, atol=1e-12)
        assert np.max(np.abs(nd.rho_plus.value)) <= 1e-10
        for inc in nd.increments:
            assert np.max(np.abs(inc)) <= 1e-12
    assert np.max(np.abs(initial_term(ultra8).mats)) <= 1e-12


def test_b_minus_is_minus_weighted_adjoint(s1_k8):
    for t in (-2.0, 0.0, 3.0):
        nd = riccati_node(s1_k8, t, 3)
        W = nd.W.value
        lhs = nd.b_minus.value
        rhs = -weighted_adjoint(nd.b_plus.value, W)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_residual_formula_consistent_with_jets(s1_k8):
    """The stored residual equals i b' - b^2 + a + i r b evaluated from the jets."""
    nd = riccati_node(s1_k8, 0.4, 4, out_order=2)
    b = nd.b_plus.value
    bdot = nd.b_plus.derivative_values()[1]
    W, a, r = s1_k8.at(0.4)
    direct = 1j * bdot - b @ b + a + 1j * r @ b
    scale = np.linalg.norm(a, 2)
    assert np.linalg.norm(direct - nd.rho_plus.value, 2) <= 1e-9 * scale


def test_gap_noop_on_ultrastatic(ultra8):
    sol = riccati_iterate(ultra8, 2, times=[0.0, 1.0])
    before = [nd.b_plus.value.copy() for nd in sol.nodes]
    enforce_gap(sol, ultra8, 0.1)
    assert not sol.clamp_active
    eps = np.diag(np.sqrt(ultra8.basis.freqs ** 2 + 1))
    for nd, b0 in zip(sol.nodes, before):
        np.testing.assert_array_equal(nd.b_plus.value, b0)
        np.testing.assert_allclose(nd.b_plus.value - nd.b_minus.value, 2 * eps, atol=1e-12)
    assert sol.gap_floor == pytest.approx(1.0)


def test_gap_clamp_on_planted_defect(ultra8):
    sol = riccati_iterate(ultra8, 1, times=[0.0])
    nd = sol.nodes[0]
    K = ultra8.basis.K
    nd.b_plus.c[0][K, K] = -0.5
    nd.b_minus.c[0][K, K] = 0.5
    other_p = nd.b_plus.value.copy()
    enforce_gap(sol, ultra8, 0.1)
    assert sol.clamp_active
    gap = nd.b_plus.value - nd.b_minus.value
    assert gap[K, K].real == pytest.approx(0.2, abs=1e-12)
    mask = np.ones_like(gap, bool)
    mask[K, K] = False
    assert np.max(np.abs(nd.b_plus.value[mask] - other_p[mask])) <= 1e-12
    assert sol.gap_floor == pytest.approx(0.1, abs=1e-12)


def test_gap_inactive_on_s1(s1_k8):
    sol = riccati_iterate(s1_k8, 4)
    enforce_gap(sol, s1_k8, 0.1)
    assert not sol.clamp_active
    assert min(gap_min_ratio(nd) for nd in sol.nodes) > 0.1


def test_residual_report_ultrastatic(ultra8):
    sol = riccati_iterate(ultra8, 4)
    rep = riccati_residual(sol, ultra8)
    assert rep.norms.max() <= 1e-10
    assert isinstance(sol, RiccatiSolution)


def test_residual_decay_s1(s1_k8):
    fit = residual_decay(s1_k8, np.geomspace(5, 40, 8), 4, (5, 40))
    assert fit.gamma >= 1 + s1_k8.delta - 0.3


def increment_envelopes(model, times, n_max=4):
    """Entrywise sup over ``times`` of ``|c_n - c_(n-1)|`` (index 0 is ``c_0``)."""
    env = None
    for t in times:
        nd = riccati_node(model, t, n_max, out_order=1, keep_increments=True)
        a = np.abs(np.array(nd.increments))
        env = a if env is None else np.maximum(env, a)
    return env


def test_increment_order_gain_s1():
    from conftest import s1_spec
    from kgscatter.basis import entry_decay_fit
    m = build_model(s1_spec(), 32, n_nodes=11)
    env = increment_envelopes(m, np.linspace(-4, 4, 5))
    p = [entry_decay_fit(e, (8, 16)).gamma for e in env]
    for n in range(1, 4):
        assert p[n] - p[n - 1] >= 0.8
    assert all(np.diff(p) >= -0.2)
