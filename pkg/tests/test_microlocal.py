import numpy as np
import pytest

from kgscatter.errors import BadPacket
from kgscatter.evolution import EvolutionOptions
from kgscatter.geometry import SpacetimeSpec
from kgscatter.microlocal import (PhasePoint, SpeedField, circular_distance, flow_jacobian_det,
                                  hamiltonian_flow, make_wavepacket, packet_center,
                                  propagation_test)
from kgscatter.states import reference_covariances

from conftest import TWO_PI, build_model, s1_spec, ultrastatic_spec


@pytest.fixture(scope="module")
def static_bump():
    """Static metric h = 1 + 0.3 cos x: the flow Hamiltonian is conserved."""
    spec = SpacetimeSpec.from_dict({"h": {"family": "cos_bump", "amplitude": 0.3, "mode": 1,
                                          "base": 1.0}})
    return build_model(spec, 16)


@pytest.fixture(scope="module")
def ultra32():
    return build_model(ultrastatic_spec(), 32)


@pytest.mark.parametrize("sign", [1, -1])
@pytest.mark.parametrize("k", [5.0, -7.0])
def test_free_flow(ultra8, sign, k):
    p = hamiltonian_flow(ultra8, PhasePoint(1.0, k), sign, 2.5, 0.5)
    assert p.x == pytest.approx(1.0 + sign * np.sign(k) * 2.0, abs=1e-9)
    assert p.k == pytest.approx(k, abs=1e-9)


def test_speed_field_matches_metric(static_bump):
    v = SpeedField(static_bump)
    for x in (0.0, 1.3, 4.0):
        val, dval = v(0.0, x)
        h = 1 + 0.3 * np.cos(x)
        assert val == pytest.approx(h ** -0.5, rel=1e-10)
        assert dval == pytest.approx(0.15 * np.sin(x) * h ** -1.5, rel=1e-8)


def test_hamiltonian_conserved_in_static_metric(static_bump):
    v = SpeedField(static_bump)
    p0 = PhasePoint(0.4, 9.0)
    p = hamiltonian_flow(static_bump, p0, 1, 5.0, 0.0)
    assert v(5.0, p.x)[0] * abs(p.k) == pytest.approx(v(0.0, p0.x)[0] * abs(p0.k), rel=1e-9)


def test_flow_reversal(s1_k8):
    p0 = PhasePoint(2.0, 6.0)
    p = hamiltonian_flow(s1_k8, p0, -1, 3.0, -1.0)
    q = hamiltonian_flow(s1_k8, p, -1, -1.0, 3.0)
    assert q.x == pytest.approx(p0.x, abs=1e-8)
    assert q.k == pytest.approx(p0.k, abs=1e-8)


def test_flow_is_symplectic(s1_k8):
    det = flow_jacobian_det(s1_k8, PhasePoint(1.0, 8.0), 1, 2.0, -2.0)
    assert det == pytest.approx(1.0, abs=1e-6)


def test_circular_distance():
    assert circular_distance(0.1, TWO_PI - 0.1, TWO_PI) == pytest.approx(0.2)
    assert circular_distance(3.0, 1.0, TWO_PI) == pytest.approx(2.0)


@pytest.fixture(scope="module")
def ref32(ultra32):
    return reference_covariances(None, 0.0, ultra32)


@pytest.mark.parametrize("sign", [1, -1])
def test_packet_properties(ultra32, ref32, sign):
    p0 = PhasePoint(2.0, 8.0)
    wp = make_wavepacket(ultra32.basis, p0, 0.5, sign, ref32)
    assert np.linalg.norm(wp.datum) == pytest.approx(1.0, abs=1e-12)
    assert wp.leakage <= 1e-10
    c = packet_center(ultra32.basis, wp.datum)
    assert circular_distance(c.x, 2.0, TWO_PI) <= 1e-6
    assert c.k == pytest.approx(8.0, abs=0.05)


@pytest.mark.parametrize("sigma,k", [(0.01, 8.0), (2.0, 8.0), (0.5, 2.0), (0.2, 30.0)])
def test_packet_rejections(ultra32, ref32, sigma, k):
    with pytest.raises(BadPacket):
        make_wavepacket(ultra32.basis, PhasePoint(1.0, k), sigma, 1, ref32)


@pytest.mark.parametrize("sign", [1, -1])
def test_propagation_ultrastatic(ultra32, ref32, sign):
    wp = make_wavepacket(ultra32.basis, PhasePoint(1.0, 8.0), 0.5, sign, ref32)
    rep = propagation_test(ultra32, wp, 2.0)
    assert rep.passed, rep.as_dict()
    control = propagation_test(ultra32, wp, 2.0, flow_sign=-sign)
    assert not control.passed
    assert control.dx >= 1.0


def test_propagation_curved():
    model = build_model(s1_spec(), 32)
    ref = reference_covariances(None, 0.0, model)
    wp = make_wavepacket(model.basis, PhasePoint(1.0, 8.0), 0.5, 1, ref)
    assert wp.leakage <= 0.2
    rep = propagation_test(model, wp, 1.5, EvolutionOptions(rtol=1e-9))
    assert rep.passed, rep.as_dict()
    assert len(rep.rows) == 6
