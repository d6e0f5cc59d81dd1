import numpy as np
import pytest

from kgscatter.basis import TimeGrid, make_basis
from kgscatter.geometry import SpacetimeSpec, check_positivity, flow_of_shift, reduce_to_model

TWO_PI = 2 * np.pi


def s1_spec(power=None, mu=2.0, amplitude=0.3, V=1.0):
    step = {"family": "exp_step", "left": 0.0, "right": 1.0}
    if power is not None:
        step["power"] = power
    bump = {"family": "cos_bump", "amplitude": amplitude, "mode": 1, "base": 1.0}
    return SpacetimeSpec.from_dict({"h": {"product": [step, bump]}, "V": V, "mu": mu})


def build_model(spec, K, t_max=8.0, n_nodes=41):
    basis = make_basis(K, TWO_PI)
    grid = TimeGrid(-t_max, t_max, n_nodes)
    model = reduce_to_model(spec, flow_of_shift(spec, grid, basis), basis, grid)
    check_positivity(spec, model)
    return model


def ultrastatic_spec(V=1.0):
    return SpacetimeSpec.from_dict({"c": 1.0, "b": 0.0, "h": 1.0, "V": V})


@pytest.fixture(scope="session")
def ultra8():
    return build_model(ultrastatic_spec(), 8)


@pytest.fixture(scope="session")
def s1_k8():
    return build_model(s1_spec(), 8)


@pytest.fixture(scope="session")
def s1_k16():
    return build_model(s1_spec(), 16, n_nodes=81)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    if not hasattr(request.config, "_acceptance_lines"):
        request.config._acceptance_lines = []
    return request.config._acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
