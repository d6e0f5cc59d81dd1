"""Spacetime data, the shift flow and the reduction to the model operator.

The spacetime is ``R x S^1`` with metric
``-c^2 dt^2 + h (dy - b dt)^2`` (lapse ``c``, shift ``b``, spatial metric
``h``) and the Klein-Gordon operator ``-box_g + V``.  Following the flow of
the shift, ``d/dt y(t, x) = b(t, y(t, x))`` with ``y(0, x) = x``, removes
the shift; the pulled back data are ``c^ = c(t, y)``, ``V^ = V(t, y)`` and
``h^ = h(t, y) (d_x y)^2``.  In two spacetime dimensions the wave operator
is conformally covariant, so rescaling by ``c^`` gives the model operator

    d_t^2 + r(t) d_t + a(t),   a = -Laplacian(h~) + V~,

with ``h~ = h^ / c^^2``, ``V~ = c^^2 V^`` and ``r = w^-1 d_t w`` where
``w = |h~|^(1/2)`` is the density of the spatial volume form.

Discretization: with ``W = M(w)`` the weight (Gram) matrix, the quadratic
form of ``a`` is assembled as ``S = D^dagger M(1/w) D + M(V~ w)`` and
``a = W^-1 S``.  This makes ``W a`` Hermitian and ``W r = dW/dt`` exactly at
finite ``K``, so the discrete Cauchy evolution is exactly symplectic.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .basis import (DecayFit, ModeBasis, OpFamily, TimeGrid, fourier_coefficients,
                    time_decay_or_exact, toeplitz_from_coefficients)
from .errors import (InsufficientSamples, IntegrationFailure, InvalidGeometry,
                     PositivityViolated)
from .families import Coefficient, Constant, make_coefficient
from .jets import Jet, weighted_eig


@dataclass
class SpacetimeSpec:
    """Lapse ``c``, shift ``b``, metric ``h`` and potential ``V`` on ``R x S^1``.

    ``mu`` bounds the decay of ``c, h, V`` towards their limits, ``mu_prime``
    the decay of the shift.  The asymptotic data are the ``t -> +-inf``
    limits of the families.
    """

    c: Coefficient
    b: Coefficient
    h: Coefficient
    V: Coefficient
    L: float = 2 * np.pi
    mu: float = 2.0
    mu_prime: float = np.inf
    dimension: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "SpacetimeSpec":
        L = float(d.get("L", 2 * np.pi))
        get = lambda k, default: make_coefficient(d.get(k, default), L)
        return cls(get("c", 1.0), get("b", 0.0), get("h", 1.0), get("V", 1.0), L,
                   float(d.get("mu", 2.0)), float(d.get("mu_prime", np.inf)))

    @property
    def delta(self) -> float:
        """Decay rate ``min(mu, mu' - 1)`` of the reduced coefficients."""
        return float(min(self.mu, self.mu_prime - 1.0))

    def asymptotic(self, sign: int, x) -> Dict[str, np.ndarray]:
        """Limits ``c, h, V`` (as functions of ``x``) at ``t -> sign * inf``."""
        return {k: getattr(self, k).limit(sign, x) for k in ("c", "h", "V")}

    @property
    def shift_vanishes(self) -> bool:
        return isinstance(self.b, Constant) and self.b.value == 0.0


def _periodic_derivative(f: np.ndarray, L: float) -> np.ndarray:
    """Spectral derivative along the last axis of periodic samples."""
    M = f.shape[-1]
    k = 2 * np.pi * np.fft.fftfreq(M, d=L / M)
    if M % 2 == 0:
        k[M // 2] = 0.0
    return np.fft.ifft(1j * k * np.fft.fft(f, axis=-1), axis=-1)


@dataclass
class ShiftFlow:
    """Flow of the shift on the fine grid of a basis.

    ``y(t)`` returns the flow map ``x -> y(t, x)`` sampled on
    ``basis.xs_fine``; beyond the integrated span ``[-T_flow, T_flow]`` the
    asymptotic maps ``y_out`` / ``y_in`` are used.
    """

    spec: SpacetimeSpec
    basis: ModeBasis
    T_flow: float
    _sol_fwd: object = None
    _sol_bwd: object = None
    y_out: Optional[np.ndarray] = None
    y_in: Optional[np.ndarray] = None

    @property
    def xs(self) -> np.ndarray:
        return self.basis.xs_fine

    @property
    def trivial(self) -> bool:
        return self._sol_fwd is None

    def y(self, t: float) -> np.ndarray:
        if self.trivial:
            return self.xs.copy()
        if t >= 0:
            return self.y_out.copy() if t > self.T_flow else self._sol_fwd.sol(t)
        return self.y_in.copy() if t < -self.T_flow else self._sol_bwd.sol(t)

    def y_jet(self, t0: float, order: int) -> Jet:
        """Taylor coefficients of ``t -> y(t, x)`` at ``t0`` from the flow
        equation: ``y[m + 1] = b(t, y)[m] / (m + 1)``."""
        y0 = self.y(t0)
        c = np.zeros((order + 1, len(y0)))
        c[0] = y0
        if self.trivial:
            return Jet(c)
        t = Jet.variable(t0, order)
        for m in range(order):
            bj = self.spec.b.jet(t.truncate(m), Jet(c[:m + 1]))
            c[m + 1] = np.real(bj.c[m]) / (m + 1)
        return Jet(c)

    def dydx(self, y: np.ndarray) -> np.ndarray:
        """Spatial derivative of a flow map (or of one Taylor order of it)."""
        return 1.0 + np.real(_periodic_derivative(y - self.xs, self.basis.L))

    def inverse(self, t: float) -> np.ndarray:
        """Samples of the inverse map ``y(t, .)^-1`` on the fine grid."""
        y = self.y(t)
        L = self.basis.L
        # Lift, then invert the monotone map by interpolation plus Newton polish.
        xs = self.xs
        ext_y = np.concatenate([y - L, y, y + L])
        ext_x = np.concatenate([xs - L, xs, xs + L])
        guess = np.interp(xs, ext_y, ext_x)
        yhat = np.fft.fft(y - xs) / len(xs)
        kk = np.fft.fftfreq(len(xs), d=1.0 / len(xs))
        for _ in range(20):
            ph = np.exp(2j * np.pi * np.outer(guess, kk) / L)
            val = guess + np.real(ph @ yhat) - xs
            der = 1.0 + np.real(ph @ (2j * np.pi * kk / L * yhat))
            step = val / der
            guess = guess - step
            if np.max(np.abs(step)) < 1e-15 * L:
                break
        return guess


def flow_of_shift(spec: SpacetimeSpec, grid: TimeGrid, basis: ModeBasis,
                  rtol: float = 1e-12, atol: float = 1e-13) -> ShiftFlow:
    """Integrate the shift flow on the fine grid out to
    ``T_flow = 4 max(|t_min|, |t_max|)`` and estimate the asymptotic maps."""
    T_flow = 4.0 * max(abs(grid.t_min), abs(grid.t_max))
    flow = ShiftFlow(spec, basis, T_flow)
    if spec.shift_vanishes:
        flow.y_out = basis.xs_fine.copy()
        flow.y_in = basis.xs_fine.copy()
        return flow

    def rhs(t, y):
        return np.real(spec.b(t, y))

    x0 = basis.xs_fine.copy()
    sols = []
    for T in (T_flow, -T_flow):
        sol = solve_ivp(rhs, (0.0, T), x0, method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True)
        if not sol.success:
            raise IntegrationFailure(f"shift flow failed: {sol.message}")
        sols.append(sol)
    flow._sol_fwd, flow._sol_bwd = sols

    for sign, sol in ((1, sols[0]), (-1, sols[1])):
        T = sign * T_flow
        yT = sol.sol(T)
        v_end = rhs(T, yT)
        v_mid = rhs(T / 2, sol.sol(T / 2))
        tail = np.zeros_like(yT)
        ok = (np.abs(v_end) > 0) & (np.abs(v_mid) > 0)
        rate = np.zeros_like(yT)
        # Fit |b| ~ C <t>^-p from the two samples and sum C s^-p beyond T.
        jT, jH = np.sqrt(1 + T * T), np.sqrt(1 + T * T / 4)
        rate[ok] = np.log(np.abs(v_mid[ok]) / np.abs(v_end[ok])) / np.log(jT / jH)
        use = ok & (rate > 1.05)
        p = rate[use]
        tail[use] = v_end[use] * (jT / abs(T)) ** p * abs(T) / (p - 1.0)
        if sign > 0:
            flow.y_out = yT + tail
        else:
            flow.y_in = yT - tail
    return flow


@dataclass
class ModelJets:
    """Taylor jets at one time of the weight ``W``, the form ``S``, ``a``
    and ``r``."""

    t0: float
    W: Jet
    S: Jet
    a: Jet
    r: Jet


@dataclass
class ModelCoefficients:
    """Reduced model data ``(W(t), a(t), r(t))`` and their asymptotics.

    Node families are computed lazily; :meth:`at` and :meth:`jets` evaluate
    at arbitrary times.
    """

    spec: SpacetimeSpec
    basis: ModeBasis
    grid: TimeGrid
    flow: ShiftFlow
    W_out: np.ndarray = None
    W_in: np.ndarray = None
    a_out: np.ndarray = None
    a_in: np.ndarray = None
    m2: float = None
    use_flow: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def delta(self) -> float:
        return self.spec.delta

    # -- pointwise data on the fine grid ---------------------------------
    def fine_jets(self, t0: float, order: int):
        """Jets of ``c^``, ``w = |h~|^(1/2)`` and ``V~`` on the fine grid."""
        t = Jet.variable(float(t0), order)
        xs = self.basis.xs_fine
        if self.use_flow and not self.flow.trivial:
            y = self.flow.y_jet(float(t0), order)
            yx = Jet(np.stack([self.flow.dydx(y.c[0])] +
                              [np.real(_periodic_derivative(y.c[m], self.basis.L))
                               for m in range(1, order + 1)]))
            x_arg = y
        else:
            x_arg = xs
            yx = None
        c = self.spec.c.jet(t, x_arg)
        h = self.spec.h.jet(t, x_arg)
        V = self.spec.V.jet(t, x_arg)
        if yx is not None:
            h = h * yx * yx
        if np.any(np.real(c.value) <= 0) or np.any(np.real(h.value) <= 0):
            raise InvalidGeometry(f"non-positive lapse or metric at t={t0}")
        w = h.sqrt() / c
        Vt = c * c * V
        return c, w, Vt

    def _assemble(self, w: Jet, Vt: Jet):
        K = self.basis.K
        coef = lambda f: toeplitz_from_coefficients(fourier_coefficients(f, 2 * K), K)
        W = Jet(coef(w.c.astype(complex)))
        winv = 1.0 / w
        Mi = coef(winv.c.astype(complex))
        dk = self.basis.freqs
        S = Jet(Mi * np.outer(dk, dk)[None] + coef((Vt * w).c.astype(complex)))
        return W, S

    def jets(self, t0: float, order: int) -> ModelJets:
        """Exact Taylor jets of order ``order`` of ``W``, ``S``, ``a``, ``r``."""
        key = ("jets", float(t0), order)
        if key in self._cache:
            return self._cache[key]
        _, w, Vt = self.fine_jets(t0, order + 1)
        W, S = self._assemble(w, Vt)
        Winv = W.inv()
        S = S.truncate(order)
        a = Winv.truncate(order) @ S
        r = Winv.truncate(order) @ W.deriv()
        out = ModelJets(float(t0), W.truncate(order), S, a, r)
        if len(self._cache) < 8:
            self._cache[key] = out
        return out

    def at(self, t: float):
        """``(W, a, r)`` at time ``t``."""
        j = self.jets(t, 0)
        return j.W.value, j.a.value, j.r.value

    def generator(self, t: float) -> np.ndarray:
        """Block generator ``H = [[0, I], [a, i r]]`` with ``d/dt psi = i H psi``."""
        _, a, r = self.at(t)
        N = self.basis.N
        H = np.zeros((2 * N, 2 * N), dtype=complex)
        H[:N, N:] = np.eye(N)
        H[N:, :N] = a
        H[N:, N:] = 1j * r
        return H

    # -- node families ---------------------------------------------------
    def _nodes(self):
        if "nodes" not in self._cache:
            data = [self.at(t) for t in self.grid.nodes]
            self._cache["nodes"] = tuple(np.array(x) for x in zip(*data))
        return self._cache["nodes"]

    @property
    def W(self) -> OpFamily:
        return OpFamily(self.grid, self._nodes()[0])

    @property
    def a(self) -> OpFamily:
        return OpFamily(self.grid, self._nodes()[1])

    @property
    def r(self) -> OpFamily:
        return OpFamily(self.grid, self._nodes()[2])

    def asymptotic(self, sign: int):
        """``(W, a)`` of the limiting static model at ``t -> sign * inf``."""
        return (self.W_out, self.a_out) if sign > 0 else (self.W_in, self.a_in)


def _asymptotic_model(spec: SpacetimeSpec, basis: ModeBasis, flow: ShiftFlow, sign: int,
                      use_flow: bool = True):
    xs = basis.xs_fine
    if use_flow and not flow.trivial:
        y = flow.y_out if sign > 0 else flow.y_in
        yx = flow.dydx(y)
    else:
        y, yx = xs, np.ones_like(xs)
    lim = spec.asymptotic(sign, y)
    c, h, V = lim["c"], lim["h"] * yx ** 2, lim["V"]
    if np.any(c <= 0) or np.any(h <= 0):
        raise InvalidGeometry("non-positive asymptotic lapse or metric")
    w = np.sqrt(h) / c
    Vt = c * c * V
    K = basis.K
    coef = lambda f: toeplitz_from_coefficients(fourier_coefficients(f.astype(complex), 2 * K), K)
    W = coef(w)
    S = coef(1.0 / w) * np.outer(basis.freqs, basis.freqs) + coef(Vt * w)
    return W, np.linalg.solve(W, S)


def reduce_to_model(spec: SpacetimeSpec, flow: ShiftFlow, basis: ModeBasis,
                    grid: TimeGrid, use_flow: bool = True) -> ModelCoefficients:
    """Assemble the reduced model coefficients (see the module docstring)."""
    model = ModelCoefficients(spec, basis, grid, flow, use_flow=use_flow)
    model.W_out, model.a_out = _asymptotic_model(spec, basis, flow, +1, use_flow)
    model.W_in, model.a_in = _asymptotic_model(spec, basis, flow, -1, use_flow)
    # Touch one node so that invalid data fail here rather than downstream.
    model.fine_jets(grid.nodes[0], 0)
    return model


def weighted_min_eig(A: np.ndarray, W: np.ndarray) -> float:
    """Smallest eigenvalue of a ``W``-self-adjoint matrix."""
    ev, _, _ = weighted_eig(A, W)
    return float(ev[0])


def check_positivity(spec: SpacetimeSpec, model: ModelCoefficients) -> float:
    """Largest ``m^2`` bounding the asymptotic operators from below.

    Raises :class:`PositivityViolated` if either limit is not massive.
    """
    lows = {}
    for name, W, a in (("out", model.W_out, model.a_out), ("in", model.W_in, model.a_in)):
        lows[name] = weighted_min_eig(a, W)
    m2 = min(lows.values())
    if m2 <= 0:
        bad = min(lows, key=lows.get)
        raise PositivityViolated(f"a_{bad} has eigenvalue {lows[bad]:.6g} <= 0",
                                 eigenvalue=lows[bad])
    model.m2 = m2
    return m2


def verify_td_decay(model: ModelCoefficients, window=(5.0, 40.0), n_samples: int = 12,
                    slack: float = 0.2) -> Dict[str, object]:
    """Fit the time decay of ``||a(t) - a_out/in||`` and ``||r(t)||``.

    Samples are geometric in ``window`` on both sides.  The report holds the
    four :class:`DecayFit` objects and whether ``delta_a >= delta - slack``
    and ``delta_r >= 1 + delta - slack``.
    """
    lo, hi = window
    if not (0 < lo < hi) or hi / lo < 2:
        raise InsufficientSamples("the decay window must span at least a factor of two")
    ts = np.geomspace(lo, hi, n_samples)
    out = {}
    delta = model.delta
    ok = True
    for sign, tag in ((1, "out"), (-1, "in")):
        W_lim, a_lim = model.asymptotic(sign)
        da, dr = [], []
        for t in sign * ts:
            _, a, r = model.at(t)
            da.append(np.linalg.norm(a - a_lim, 2))
            dr.append(np.linalg.norm(r, 2))
        fa = time_decay_or_exact(sign * ts, da, window)
        fr = time_decay_or_exact(sign * ts, dr, window)
        out[f"a_{tag}"], out[f"r_{tag}"] = fa, fr
        ok &= (fa.gamma >= delta - slack) and (fr.gamma >= 1 + delta - slack)
    out["pass"] = bool(ok)
    return out
