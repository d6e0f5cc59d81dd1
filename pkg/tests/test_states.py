import numpy as np
import pytest

from kgscatter.diagonalization import blocks, build_frame
from kgscatter.evolution import EvolutionOptions, evolve
from kgscatter.riccati import riccati_iterate
from kgscatter.states import (Covariances, ConvergenceTrace, build_Z, causal_propagator,
                              covariance_distance, frame_node_at, frame_projection,
                              hadamard_difference, reference_block_formula,
                              reference_covariances, scattering_covariances,
                              transport_covariances, two_point, vacuum_covariances,
                              validate_state, z_convergence)

OPTS = EvolutionOptions(rtol=1e-11)
SCAT = EvolutionOptions(rtol=1e-9)


class _OneMode:
    N = 1


def test_vacuum_single_mode_display():
    eps = 2.0
    c = vacuum_covariances(np.array([[eps ** 2]]), _OneMode(), np.eye(1))
    np.testing.assert_allclose(c.c_plus, 0.5 * np.array([[1, 1 / eps], [eps, 1]]), atol=1e-14)
    np.testing.assert_allclose(c.c_minus, 0.5 * np.array([[1, -1 / eps], [-eps, 1]]), atol=1e-14)


def test_vacuum_is_pure_state(s1_k8):
    W, a = s1_k8.asymptotic(1)
    c = vacuum_covariances(a, s1_k8.basis, W)
    rep = validate_state(c)
    assert rep["pass"]
    assert rep["residuals"]["idempotency"] <= 1e-10
    assert rep["residuals"]["min_eig_lambda_plus"] >= -1e-10


def test_vacuum_from_asymptotic_frame(s1_k8):
    """c_vac^+ = Z pi^+ Z^-1 with Z the asymptotic frame (no flow/lapse factors)."""
    z = build_Z(s1_k8)
    W, a = s1_k8.asymptotic(1)
    c = vacuum_covariances(a, s1_k8.basis, W)
    N = s1_k8.basis.N
    P = np.zeros((2 * N, 2 * N))
    P[:N, :N] = np.eye(N)
    Minv = np.linalg.inv(z.M_out)
    T_lim = Minv @ z.Z_out
    proj = T_lim @ P @ np.linalg.inv(T_lim)
    assert np.linalg.norm(proj - c.c_plus, 2) <= 1e-9


def test_reference_equals_vacuum_on_ultrastatic(ultra8):
    W, a = ultra8.asymptotic(1)
    vac = vacuum_covariances(a, ultra8.basis, W)
    for t in (-3.0, 0.0, 2.0):
        ref = reference_covariances(None, t, ultra8)
        assert covariance_distance(ref, vac) <= 1e-10


def test_reference_block_formula(s1_k8):
    for t in (-2.0, 0.5):
        nd = frame_node_at(s1_k8, t)
        assert np.linalg.norm(frame_projection(nd) - reference_block_formula(nd), 2) <= 1e-9


def test_reference_is_pure(s1_k8):
    rep = validate_state(reference_covariances(None, 0.0, s1_k8))
    assert rep["pass"]
    assert rep["residuals"]["idempotency"] <= 1e-8


def test_validation_negative_control(s1_k8):
    ref = reference_covariances(None, 0.0, s1_k8)
    I = np.eye(ref.c_plus.shape[0])
    cp = 0.5 * (ref.c_plus + I / 4)
    bad = Covariances(cp, I - cp, ref.W, "ref")
    rep = validate_state(bad)
    assert not rep["pass"]
    assert not rep["checks"]["idempotency"]


def test_reference_from_frame_lookup(s1_k8):
    frame = build_frame(riccati_iterate(s1_k8, 4, times=[0.0, 1.0]))
    c1 = reference_covariances(frame, 0.0)
    c2 = reference_covariances(None, 0.0, s1_k8)
    assert covariance_distance(c1, c2) <= 1e-12
    with pytest.raises(KeyError):
        reference_covariances(frame, 0.5)


def test_transport_preserves_state(s1_k8):
    ref = reference_covariances(None, 0.0, s1_k8)
    U = evolve(s1_k8, 2.0, 0.0, OPTS)
    moved = transport_covariances(U, ref, 2.0, s1_k8.at(2.0)[0])
    rep = validate_state(moved, tol=1e-7)
    assert rep["pass"]
    back = transport_covariances(evolve(s1_k8, 0.0, 2.0, OPTS), moved, 0.0, ref.W)
    assert covariance_distance(back, ref) <= 1e-7


def test_transport_stationary_on_ultrastatic(ultra8):
    ref = reference_covariances(None, 0.0, ultra8)
    U = evolve(ultra8, 3.0, 0.0, OPTS)
    moved = transport_covariances(U, ref, 3.0, ultra8.at(3.0)[0])
    assert covariance_distance(moved, ref) <= 1e-8


@pytest.mark.parametrize("eps", [0.7, 2.0])
def test_two_point_single_mode(eps):
    c = vacuum_covariances(np.array([[eps ** 2]]), _OneMode(), np.eye(1))
    H = np.array([[0, 1], [eps ** 2, 0]], dtype=complex)
    for t, s in ((1.0, -0.5), (0.3, 2.0)):
        lp, lm = two_point(c, evolve(H, t, 0.0, OPTS), evolve(H, 0.0, s, OPTS))
        assert lp[0, 0] == pytest.approx(np.exp(-1j * eps * (t - s)) / (2 * eps), abs=1e-9)
        assert lm[0, 0] == pytest.approx(np.exp(1j * eps * (t - s)) / (2 * eps), abs=1e-9)


def test_two_point_commutator_is_causal_propagator(s1_k8):
    ref = reference_covariances(None, 0.0, s1_k8)
    t, s = 1.2, -0.7
    Ut0, U0s = evolve(s1_k8, t, 0.0, OPTS), evolve(s1_k8, 0.0, s, OPTS)
    lp, lm = two_point(ref, Ut0, U0s)
    G = causal_propagator(evolve(s1_k8, t, s, OPTS))
    assert np.linalg.norm(lp - lm - 1j * G, 2) <= 1e-8 * np.linalg.norm(G, 2)


def test_causal_propagator_vanishes_at_equal_times(s1_k8):
    G = causal_propagator(evolve(s1_k8, 0.4, 0.4, OPTS))
    assert np.max(np.abs(G)) == 0.0


def test_causal_propagator_antisymmetry(s1_k8):
    """G(s, t) = -G(t, s)^* for a real field, with the adjoint in the weights of both times."""
    t, s = 1.0, -1.0
    Gts = causal_propagator(evolve(s1_k8, t, s, OPTS))
    Gst = causal_propagator(evolve(s1_k8, s, t, OPTS))
    Wt, Ws = s1_k8.at(t)[0], s1_k8.at(s)[0]
    lhs = Ws @ Gst
    rhs = -(Wt @ Gts).conj().T
    assert np.linalg.norm(lhs - rhs, 2) <= 1e-8 * np.linalg.norm(rhs, 2)


def test_hadamard_zero_difference(s1_k8):
    ref = reference_covariances(None, 0.0, s1_k8)
    rep = hadamard_difference(ref, ref, s1_k8.basis)
    assert rep.passed and rep.max_norm == 0.0
    assert all(r.fit.sentinel == "exact" for r in rep.blocks.values())


def test_hadamard_detects_non_smooth_difference(s1_k8):
    ref = reference_covariances(None, 0.0, s1_k8)
    W, a = s1_k8.asymptotic(1)
    wrong = vacuum_covariances(a * 1.5, s1_k8.basis, W)
    rep = hadamard_difference(wrong, ref, s1_k8.basis, window=(2, 8))
    assert not rep.passed


def test_hadamard_requires_common_anchor(s1_k8):
    c0 = reference_covariances(None, 0.0, s1_k8)
    c1 = reference_covariances(None, 1.0, s1_k8)
    with pytest.raises(ValueError):
        hadamard_difference(c0, c1, s1_k8.basis)


def test_ultrastatic_scattering_states_coincide(ultra8):
    W, a = ultra8.asymptotic(1)
    vac = vacuum_covariances(a, ultra8.basis, W)
    for direction in ("out", "in"):
        c, trace = scattering_covariances(ultra8, direction, [5.0, 10.0, 20.0], SCAT,
                                          n_source=41)
        assert covariance_distance(c, vac) <= 1e-8
        assert trace.fit.sentinel == "exact"


@pytest.fixture(scope="module")
def s1_out(s1_k8):
    return scattering_covariances(s1_k8, "out", [5.0, 7.0, 10.0, 14.0, 20.0], SCAT,
                                  n_source=161, keep_samples=True)


def test_scattering_out_is_pure_state(s1_out):
    c, trace = s1_out
    rep = validate_state(c)
    assert rep["pass"], rep
    assert trace.fit.gamma > 1


def test_limit_only_agrees_with_extrapolation(s1_k8, s1_out):
    c_lim, info = scattering_covariances(s1_k8, "out", [5.0, 20.0], SCAT, n_source=161,
                                         limit_only=True)
    assert info["t_far"] == 20.0 and np.isfinite(info["tail_bound"])
    d = covariance_distance(c_lim, s1_out[0])
    assert d <= max(10 * info["tail_bound"], 1e-7)


def test_frame_and_vacuum_schemes_agree(s1_k8, s1_out):
    """The literal vacuum transport converges (slowly, like t^-delta) to the same limit."""
    dist = []
    for hi in (20.0, 80.0):
        c_vac, _ = scattering_covariances(s1_k8, "out", np.geomspace(hi / 2.5, hi, 5), SCAT,
                                          scheme="vacuum")
        dist.append(covariance_distance(c_vac, s1_out[0]))
    assert dist[1] <= dist[0] / 4
    assert dist[1] <= 1e-3


def test_out_differs_from_in(s1_k8, s1_out):
    c_in, _ = scattering_covariances(s1_k8, "in", [5.0, 7.0, 10.0, 14.0, 20.0], SCAT,
                                    n_source=161)
    assert validate_state(c_in)["pass"]
    assert covariance_distance(c_in, s1_out[0]) >= 1e-4


def test_out_state_is_hadamard_relative_to_reference(s1_k16):
    out, _ = scattering_covariances(s1_k16, "out", [6.0, 12.0], SCAT, n_source=121,
                                    limit_only=True)
    ref = reference_covariances(None, 0.0, s1_k16)
    rep = hadamard_difference(out, ref, s1_k16.basis, window=(4, 14))
    assert rep.passed, rep.as_dict()


def test_convergence_trace_rejects_unsorted():
    from kgscatter.basis import DecayFit
    fit = DecayFit(1.0, 1.0, 1.0, (1, 2), 2)
    with pytest.raises(ValueError):
        ConvergenceTrace(np.array([5.0, 3.0]), np.array([1.0]), np.eye(2), fit)


@pytest.mark.parametrize("kwargs", [{"direction": "sideways"}, {"scheme": "magic"},
                                    {"t_samples": [5.0]}])
def test_scattering_argument_errors(ultra8, kwargs):
    with pytest.raises(ValueError):
        scattering_covariances(ultra8, **kwargs)


def test_z_converges(s1_k8):
    z = build_Z(s1_k8)
    fit = z_convergence(z, [4.0, 6.0, 9.0, 13.0, 20.0])
    assert fit.gamma >= 1.0 or fit.sentinel in ("exact", "superpolynomial")
