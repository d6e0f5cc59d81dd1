"""Cauchy evolutions as matrix ODEs.

``U(t, s)`` solves ``d_t U = i H(t) U`` with ``U(s, s) = 1``.  Generators
are supplied as objects with a ``matrix(t)`` method and, optionally, an
``apply(t, Y)`` method computing ``H(t) Y`` cheaply:

* :class:`ModelGenerator` evaluates the exact model generator
  ``[[0, I], [a, i r]]`` from the coefficient families, using
  ``a = W^-1 S`` and ``r = W^-1 dW/dt`` without forming either matrix;
* :class:`HermiteGenerator` interpolates node values and exact node
  derivatives (for ``H^ad`` and ``H^d``) with cubic Hermite polynomials;
* :class:`ConstantGenerator` wraps a fixed matrix.

Time independent generators are exponentiated exactly.

Only anchored paths ``U(., s)`` are integrated; other pairs follow from the
group law and from the symplectic inverse
``U(s, t) = q W^_s^-1 U(t, s)^dagger W^_t q``.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm, lu_factor, lu_solve

from .basis import fourier_coefficients, toeplitz_from_coefficients
from .diagonalization import (DiagFrame, block_weight, blocks, q_matrix)
from .errors import IntegrationFailure
from .geometry import ModelCoefficients
from .operator import SmoothingReport, smoothing_order


@dataclass
class EvolutionOptions:
    """Integrator settings: adaptive ``DOP853`` (``rtol``/``atol``) or fixed
    step ``rk4`` (``dt``)."""

    method: str = "DOP853"
    rtol: float = 1e-10
    atol: Optional[float] = None
    dt: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("DOP853", "RK45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.rtol <= 0 or (self.atol is not None and self.atol <= 0):
            raise ValueError("tolerances must be positive")
        if self.method == "rk4" and (self.dt is None or self.dt <= 0):
            raise ValueError("rk4 needs a positive dt")

    @property
    def abs_tol(self) -> float:
        return self.rtol * 1e-2 if self.atol is None else self.atol


class ConstantGenerator:
    def __init__(self, H: np.ndarray):
        self.H = np.asarray(H, dtype=complex)
        self.dim = self.H.shape[0]

    @property
    def static_matrix(self):
        return self.H

    def matrix(self, t):
        return self.H

    def apply(self, t, Y):
        return self.H @ Y

    def apply_right(self, t, Y):
        return Y @ self.H


class ModelGenerator:
    """Exact generator of the reduced model."""

    def __init__(self, model: ModelCoefficients):
        self.model = model
        self.N = model.basis.N
        self.dim = 2 * self.N
        self._static = (model.spec.c.is_static and model.spec.h.is_static
                        and model.spec.V.is_static and model.spec.shift_vanishes)
        self._cache_t = None
        self._cache = None

    def parts(self, t: float):
        """``W``, ``S``, ``dW/dt`` and the lower block row ``[a, i r]`` of ``H`` at ``t``."""
        if self._static and self._cache is not None:
            return self._cache
        if self._cache_t == t:
            return self._cache
        m = self.model
        K = m.basis.K
        _, w, Vt = m.fine_jets(t, 1)
        stack = np.stack([w.c[0], w.c[1], 1.0 / w.c[0], (Vt.c[0] * w.c[0])]).astype(complex)
        mats = toeplitz_from_coefficients(fourier_coefficients(stack, 2 * K), K)
        fr = m.basis.freqs
        W, Wd = mats[0], mats[1]
        S = mats[2] * np.outer(fr, fr) + mats[3]
        row = np.ascontiguousarray(lu_solve(lu_factor(W), np.hstack([S, 1j * Wd])))
        self._cache_t, self._cache = t, (row, S, Wd, W)
        return self._cache

    def apply(self, t, Y):
        row = self.parts(t)[0]
        N = self.N
        out = np.empty(Y.shape, dtype=complex)
        out[:N] = Y[N:]
        out[N:] = row @ Y
        return out

    def apply_right(self, t, Y):
        """``Y H(t)``: only the right block column of ``Y`` meets ``[a, i r]``."""
        row = self.parts(t)[0]
        N = self.N
        out = Y[:, N:] @ row
        out[:, N:] += Y[:, :N]
        return out

    def matrix(self, t):
        return self.model.generator(t)

    @property
    def static_matrix(self):
        """The constant generator of a static model, otherwise ``None``."""
        return self.model.generator(0.0) if self._static else None

    def weight(self, t):
        return self.parts(t)[3]


class HermiteGenerator:
    """Piecewise cubic Hermite interpolation of a matrix family."""

    def __init__(self, times: Sequence[float], values: np.ndarray, derivs: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("node times must be increasing")
        self.values = np.asarray(values)
        self.derivs = np.asarray(derivs)
        self.dim = self.values.shape[-1]

    @classmethod
    def from_frame(cls, frame: DiagFrame, which: str = "H_ad") -> "HermiteGenerator":
        vals = np.array([getattr(nd, which) for nd in frame.nodes])
        ders = np.array([getattr(nd, "d" + which) for nd in frame.nodes])
        return cls(frame.times, vals, ders)

    def matrix(self, t):
        ts = self.times
        if t <= ts[0]:
            return self.values[0] + (t - ts[0]) * self.derivs[0]
        if t >= ts[-1]:
            return self.values[-1] + (t - ts[-1]) * self.derivs[-1]
        i = int(np.searchsorted(ts, t) - 1)
        i = min(max(i, 0), len(ts) - 2)
        h = ts[i + 1] - ts[i]
        u = (t - ts[i]) / h
        h00 = 2 * u ** 3 - 3 * u ** 2 + 1
        h10 = u ** 3 - 2 * u ** 2 + u
        h01 = -2 * u ** 3 + 3 * u ** 2
        h11 = u ** 3 - u ** 2
        return (h00 * self.values[i] + h10 * h * self.derivs[i]
                + h01 * self.values[i + 1] + h11 * h * self.derivs[i + 1])

    def apply(self, t, Y):
        return self.matrix(t) @ Y

    def apply_right(self, t, Y):
        return Y @ self.matrix(t)


def as_generator(H):
    if isinstance(H, ModelCoefficients):
        return ModelGenerator(H)
    if isinstance(H, np.ndarray):
        return ConstantGenerator(H)
    return H


def _rk4(gen, t, s, Y0, dt):
    n = max(1, int(np.ceil(abs(t - s) / dt)))
    h = (t - s) / n
    Y = Y0.copy()
    tau = s
    f = lambda tt, YY: 1j * gen.apply(tt, YY)
    for _ in range(n):
        k1 = f(tau, Y)
        k2 = f(tau + h / 2, Y + h / 2 * k1)
        k3 = f(tau + h / 2, Y + h / 2 * k2)
        k4 = f(tau + h, Y + h * k3)
        Y = Y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tau += h
    return Y


def evolve_path(H, s: float, times: Sequence[float], opts: EvolutionOptions = None,
                Y0: Optional[np.ndarray] = None) -> Dict[float, np.ndarray]:
    """``U(t, s) Y0`` for every ``t`` in ``times`` (all on one side of ``s``
    or equal to it).  ``Y0`` defaults to the identity."""
    opts = opts or EvolutionOptions()
    gen = as_generator(H)
    dim = gen.dim
    Y0 = np.eye(dim, dtype=complex) if Y0 is None else np.asarray(Y0, dtype=complex)
    times = [float(t) for t in times]
    out = {}
    fwd = sorted(t for t in times if t > s)
    bwd = sorted((t for t in times if t < s), reverse=True)
    for t in times:
        if t == s:
            out[t] = Y0.copy()
    shape = Y0.shape
    H_static = getattr(gen, "static_matrix", None)
    if H_static is not None and opts.method != "rk4":
        # time independent generator: U(t, s) = exp(i H (t - s)) exactly
        for t in fwd + bwd:
            out[t] = expm(1j * (t - s) * H_static) @ Y0
        return out
    for seq in (fwd, bwd):
        if not seq:
            continue
        if opts.method == "rk4":
            Y, tau = Y0, s
            for t in seq:
                Y = _rk4(gen, t, tau, Y, opts.dt)
                tau = t
                out[t] = Y
            continue

        def rhs(tt, y):
            return (1j * gen.apply(tt, y.reshape(shape))).ravel()

        sol = solve_ivp(rhs, (s, seq[-1]), Y0.ravel(), method=opts.method, t_eval=seq,
                        rtol=opts.rtol, atol=opts.abs_tol)
        if not sol.success:
            raise IntegrationFailure(f"evolution failed: {sol.message}")
        for j, t in enumerate(seq):
            out[t] = sol.y[:, j].reshape(shape)
    return out


def evolve(H, t: float, s: float, opts: EvolutionOptions = None) -> np.ndarray:
    """``U(t, s)``."""
    return evolve_path(H, s, [t], opts)[float(t)]


def evolve_diag(H_d, t: float, s: float, opts: EvolutionOptions = None,
                check: bool = True) -> np.ndarray:
    """Evolution of a block diagonal generator; verifies that the result
    stays block diagonal to ``10 * rtol``."""
    opts = opts or EvolutionOptions()
    U = evolve(H_d, t, s, opts)
    if check:
        _, B, C, _ = blocks(U)
        off = max(np.abs(B).max(), np.abs(C).max())
        if off > 10 * max(opts.rtol, 1e-14) * max(1.0, np.abs(U).max()):
            raise IntegrationFailure(f"diagonal evolution developed off-diagonal blocks ({off:.2e})")
    return U


def symplectic_inverse(U: np.ndarray, W_t: np.ndarray, W_s: np.ndarray) -> np.ndarray:
    """``U(s, t)`` from ``U(t, s)`` using ``U^dagger W^_t q U = W^_s q``."""
    N = U.shape[0] // 2
    q = q_matrix(N)
    return q @ np.linalg.solve(block_weight(W_s), U.conj().T @ block_weight(W_t)) @ q


def check_symplectic(U: np.ndarray, q: np.ndarray, W_t: np.ndarray, W_s: np.ndarray) -> float:
    """Relative defect of ``U^dagger (W_t + W_t) q U = (W_s + W_s) q``."""
    ref = block_weight(W_s) @ q
    lhs = U.conj().T @ block_weight(W_t) @ q @ U
    return float(np.linalg.norm(lhs - ref, 2) / np.linalg.norm(ref, 2))


@dataclass
class GapReport:
    """Smoothing of ``D(t, s) = U(t, s) - T(t) U^d(t, s) T(s)^-1``."""

    pairs: list
    reports: list
    norms: list

    @property
    def passed(self) -> bool:
        return all(r.fit.gamma >= 4 and (r.fit.r_squared >= 0.9 or r.fit.sentinel)
                   for r in self.reports)


def interaction_gap(model: ModelCoefficients, frame: DiagFrame, pairs, opts=None,
                    window=None) -> GapReport:
    """Compare the true evolution with the frame-conjugated diagonal one."""
    opts = opts or EvolutionOptions()
    gen_d = HermiteGenerator.from_frame(frame, "H_d")
    reps, norms = [], []
    for t, s in pairs:
        U = evolve(model, t, s, opts)
        Ud = evolve(gen_d, t, s, opts)
        nt, ns = frame.node_at(t), frame.node_at(s)
        D = U - nt.T @ Ud @ ns.T_inv
        norms.append(float(np.linalg.norm(D, 2)))
        N = model.basis.N
        worst = max((b for b in blocks(D)), key=lambda b: np.abs(b).max())
        reps.append(smoothing_order(worst, model.basis, window=window, p_threshold=4.0))
    return GapReport(list(pairs), reps, norms)


def split_evolution(U_t0_s: np.ndarray, U_t_t0: np.ndarray, c_plus_t0: np.ndarray):
    """``U^+-(t, s) = U(t, t0) c^+-(t0) U(t0, s)``."""
    I = np.eye(c_plus_t0.shape[0])
    Up = U_t_t0 @ c_plus_t0 @ U_t0_s
    Um = U_t_t0 @ (I - c_plus_t0) @ U_t0_s
    return Up, Um
