"""Wavepackets and the Hamiltonian flows ``Phi^+-`` of ``+-(h~^xx k^2)^(1/2)``.

A phase-space point ``(x, k)`` is represented on the grid by the Gaussian
packet ``exp(-(x - x0)^2 / (2 sigma^2)) exp(-i k0 x)``.  The sign of the
exponent is the covector convention matched to Cauchy data
``psi = (phi, -i d_t phi)``: the range of ``c^+`` evolves like
``exp(+i eps t)``, so a ``c^+`` packet written this way travels along the
flow of ``+(h~^xx)^(1/2) |k|``.

The flow is integrated in the model variables, where the speed is
``(h~^xx)^(1/2) = 1 / w`` with ``w = |h~|^(1/2)`` the volume density.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .basis import ModeBasis, to_grid, to_modes
from .errors import BadPacket, IntegrationFailure
from .evolution import EvolutionOptions, evolve_path
from .geometry import ModelCoefficients
from .states import Covariances


@dataclass(frozen=True)
class PhasePoint:
    x: float
    k: float


@dataclass
class Wavepacket:
    center: PhasePoint
    sigma: float
    datum: np.ndarray
    sign: int
    leakage: float
    t_launch: float = 0.0


class SpeedField:
    """``v(t, x) = 1 / w(t, x)`` and ``d_x v`` at arbitrary points, by
    trigonometric interpolation of the fine-grid samples of ``w``."""

    def __init__(self, model: ModelCoefficients):
        self.model = model
        self._t = None
        self._coef = None
        M = model.basis.n_fine
        self._kk = 2 * np.pi * np.fft.fftfreq(M, d=model.basis.L / M)

    def _coeffs(self, t):
        if self._t != t:
            _, w, _ = self.model.fine_jets(t, 0)
            self._coef = np.fft.fft(1.0 / np.real(w.value)) / len(self._kk)
            self._t = t
        return self._coef

    def __call__(self, t: float, x: float):
        c = self._coeffs(float(t))
        ph = np.exp(1j * self._kk * x)
        return float(np.real(ph @ c)), float(np.real(ph @ (1j * self._kk * c)))


def hamiltonian_flow(model: ModelCoefficients, p0: PhasePoint, sign: int, t: float,
                     s: float, rtol: float = 1e-11, atol: float = 1e-12) -> PhasePoint:
    """``Phi^sign(t, s) p0`` for ``H = sign * v(t, x) |k|``."""
    if t == s:
        return p0
    v = SpeedField(model)

    def rhs(tau, y):
        x, k = y
        vx, dvx = v(tau, x)
        return [sign * vx * np.sign(k), -sign * dvx * abs(k)]

    sol = solve_ivp(rhs, (s, t), [p0.x, p0.k], method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationFailure(f"Hamiltonian flow failed: {sol.message}")
    return PhasePoint(float(sol.y[0, -1]), float(sol.y[1, -1]))


def flow_jacobian_det(model: ModelCoefficients, p0: PhasePoint, sign: int, t: float,
                      s: float, h: float = 1e-5) -> float:
    """Determinant of the Jacobian of ``Phi(t, s)`` by central differences."""
    cols = []
    for dx, dk in ((h, 0.0), (0.0, h)):
        a = hamiltonian_flow(model, PhasePoint(p0.x + dx, p0.k + dk), sign, t, s)
        b = hamiltonian_flow(model, PhasePoint(p0.x - dx, p0.k - dk), sign, t, s)
        cols.append([(a.x - b.x) / (2 * h), (a.k - b.k) / (2 * h)])
    J = np.array(cols).T
    return float(np.linalg.det(J))


def _periodic_gaussian(xs, x0, sigma, L, images=3):
    out = np.zeros_like(xs)
    for n in range(-images, images + 1):
        out += np.exp(-((xs - x0 + n * L) ** 2) / (2 * sigma ** 2))
    return out


def make_wavepacket(basis: ModeBasis, p0: PhasePoint, sigma: float, sign: int,
                    c_ref: Covariances, t_launch: float = 0.0, k_min: float = 4.0) -> Wavepacket:
    """Gaussian packet at ``p0`` projected onto ``ran c^sign_ref`` and normalized.

    The raw datum is ``(phi, sign * eps phi)`` with ``eps`` read off from
    ``c_ref``; ``leakage`` is ``||c^(-sign) psi_raw|| / ||psi_raw||``.
    """
    L = basis.L
    lo, hi = 2 * np.pi / (4 * basis.K), L / 8
    if not lo <= sigma <= hi:
        raise BadPacket(f"width {sigma} outside [{lo:.4g}, {hi:.4g}]")
    if abs(p0.k) * L / (2 * np.pi) < k_min:
        raise BadPacket(f"|k| = {abs(p0.k)} is below {k_min} grid momenta")
    xs = basis.xs
    phi = _periodic_gaussian(xs, p0.x, sigma, L) * np.exp(-1j * p0.k * xs)
    coef = to_modes(basis, phi)
    high = np.abs(basis.ks) > basis.K / 2
    frac = float(np.sum(np.abs(coef[high]) ** 2) / np.sum(np.abs(coef) ** 2))
    if frac > 1e-6:
        raise BadPacket(f"packet leaves the resolved band (fraction {frac:.2e} above K/2)")
    N = basis.N
    c_same = c_ref.c_plus if sign > 0 else c_ref.c_minus
    c_other = c_ref.c_minus if sign > 0 else c_ref.c_plus
    # The (1, 0) block of c^+ is eps / 2 for the vacuum; use it as eps.
    eps = 2.0 * c_ref.c_plus[N:, :N]
    raw = np.concatenate([coef, sign * (eps @ coef)])
    leak = float(np.linalg.norm(c_other @ raw) / np.linalg.norm(raw))
    if leak > 0.2:
        raise BadPacket(f"frequency leakage {leak:.3f} exceeds 0.2")
    psi = c_same @ raw
    psi = psi / np.linalg.norm(psi)
    return Wavepacket(p0, float(sigma), psi, int(sign), leak, float(t_launch))


def packet_center(basis: ModeBasis, psi: np.ndarray) -> PhasePoint:
    """Circular mean position of ``|phi|^2`` and mean momentum (covector
    convention) of the first component of ``psi``."""
    N = basis.N
    coef = psi[:N]
    dens = np.abs(to_grid(basis, coef)) ** 2
    L = basis.L
    z = np.sum(dens * np.exp(2j * np.pi * basis.xs / L))
    x = (np.angle(z) * L / (2 * np.pi)) % L
    wk = np.abs(coef) ** 2
    k = float(-np.sum(wk * basis.freqs) / np.sum(wk))
    return PhasePoint(float(x), k)


def circular_distance(x1: float, x2: float, L: float) -> float:
    d = (x1 - x2) % L
    return float(min(d, L - d))


@dataclass
class PropagationReport:
    dx: float
    dk: float
    spread: float
    threshold_x: float
    threshold_k: float
    predicted: PhasePoint
    observed: PhasePoint
    rows: List[tuple] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.dx <= self.threshold_x and self.dk <= self.threshold_k

    def as_dict(self):
        return {"dx": self.dx, "dk": self.dk, "spread": self.spread,
                "threshold_x": self.threshold_x, "threshold_k": self.threshold_k,
                "predicted": [self.predicted.x, self.predicted.k],
                "observed": [self.observed.x, self.observed.k], "pass": self.passed}


def _spread(basis: ModeBasis, psi: np.ndarray) -> float:
    N = basis.N
    dens = np.abs(to_grid(basis, psi[:N])) ** 2
    z = np.sum(dens * np.exp(2j * np.pi * basis.xs / basis.L)) / np.sum(dens)
    R = min(abs(z), 1.0)
    return float(basis.L / (2 * np.pi) * np.sqrt(max(-2.0 * np.log(max(R, 1e-300)), 0.0)))


def propagation_test(model: ModelCoefficients, wp: Wavepacket, t_final: float,
                     opts: Optional[EvolutionOptions] = None, flow_sign: Optional[int] = None,
                     samples: int = 5, c_other_path=None) -> PropagationReport:
    """Evolve the packet to ``t_final`` and compare with the Hamiltonian flow.

    ``flow_sign`` defaults to the packet sign; passing the opposite sign is
    the negative control.  ``rows`` holds ``(t, x_center, k_mean, leakage)``
    at ``samples`` equally spaced times (leakage only if ``c_other_path``,
    a callable ``t -> c^(-sign)_ref(t)``, is given; otherwise NaN).
    """
    opts = opts or EvolutionOptions(rtol=1e-10)
    basis = model.basis
    s = wp.t_launch
    ts = list(np.linspace(s, t_final, samples + 1)[1:])
    path = evolve_path(model, s, ts, opts, Y0=wp.datum.reshape(-1, 1))
    rows = [(float(s), wp.center.x, wp.center.k, wp.leakage)]
    for t in ts:
        psi = path[float(t)][:, 0]
        c = packet_center(basis, psi)
        leak = float("nan")
        if c_other_path is not None:
            leak = float(np.linalg.norm(c_other_path(t) @ psi) / np.linalg.norm(psi))
        rows.append((float(t), c.x, c.k, leak))
    psi_end = path[float(ts[-1])][:, 0]
    obs = packet_center(basis, psi_end)
    pred = hamiltonian_flow(model, wp.center, wp.sign if flow_sign is None else flow_sign,
                            t_final, s)
    dx = circular_distance(obs.x, pred.x % basis.L, basis.L)
    dk = abs(obs.k - pred.k)
    elapsed = abs(t_final - s)
    thr_x = max(3 * wp.sigma, 5 * elapsed * wp.sigma ** 2 / basis.L)
    return PropagationReport(dx, dk, _spread(basis, psi_end), thr_x, 0.1 * abs(wp.center.k),
                             pred, obs, rows)
