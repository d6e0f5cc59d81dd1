"""Functional calculus for weighted self-adjoint matrices.

Two independent routes compute fractional powers ``a^alpha`` of an operator
that is self-adjoint for the inner product ``<u, W v>``:

* :func:`weighted_power` / :func:`sqrt_op` diagonalize the symmetrized
  matrix ``W^(1/2) a W^(-1/2)``;
* :func:`frac_power_quadrature` evaluates the Balakrishnan integral
  ``a^alpha = sin(pi alpha)/pi * int_0^inf s^(alpha-1) (a + s)^-1 a ds``
  with resolvent solves only.

The module also provides the smoothing diagnostics used to decide whether
an operator is "numerically smoothing" and the time-decay measurement for
differences of powers.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import roots_jacobi

from .basis import (DecayFit, ModeBasis, entry_decay_fit, sobolev_weight,
                    time_decay_or_exact)
from .errors import NotPositive, NotSelfAdjoint, SingularResolvent
from .jets import weighted_eig


def self_adjointness_defect(a: np.ndarray, W: np.ndarray) -> float:
    """Relative size of ``W a - (W a)^dagger``."""
    Wa = W @ a
    return float(np.linalg.norm(Wa - Wa.conj().T) / max(np.linalg.norm(Wa), 1e-300))


def weighted_power(a: np.ndarray, W: np.ndarray, alpha: float, floor: float = 1e-10,
                   sa_tol: float = 1e-8) -> np.ndarray:
    """``a^alpha`` for ``a`` self-adjoint and positive w.r.t. ``W``."""
    if self_adjointness_defect(a, W) > sa_tol:
        raise NotSelfAdjoint("operator is not self-adjoint for the given weight")
    ev, V, Vinv = weighted_eig(a, W)
    if ev[0] < floor:
        raise NotPositive(f"smallest eigenvalue {ev[0]:.3g} is below the floor {floor:.3g}",
                          eigenvalue=float(ev[0]))
    return (V * ev ** alpha) @ Vinv


def sqrt_op(a: np.ndarray, W: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Weighted square root ``eps`` with ``eps^2 = a`` and ``eps`` W-self-adjoint."""
    return weighted_power(a, W, 0.5, floor)


def frac_power_quadrature(a: np.ndarray, W: np.ndarray, alpha: float, n_quad: int = 128,
                          scale: Optional[float] = None, floor: float = 1e-10) -> np.ndarray:
    """``a^alpha`` (``0 < alpha < 1``) from the Balakrishnan integral.

    The substitution ``s = s0 u / (1 - u)`` maps the half line to ``(0, 1)``
    and turns ``s^(alpha-1) ds`` into ``s0^alpha u^(alpha-1) (1-u)^(-alpha-1) du``.
    The two endpoint powers are absorbed into a Gauss-Jacobi rule with
    ``n_quad`` nodes, leaving the smooth factor
    ``s0^alpha (1-u)^-1 (a + s)^-1 a = s0^alpha ((1-u) a + s0 u)^-1 a``.
    By default ``s0`` is the geometric mean of the spectral bounds, which
    places the bulk of the spectrum in the middle of the interval.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if self_adjointness_defect(a, W) > 1e-8:
        raise NotSelfAdjoint("operator is not self-adjoint for the given weight")
    if scale is None:
        ev, _, _ = weighted_eig(a, W)
        lo, hi = ev[0], ev[-1]
        if lo < floor:
            raise NotPositive(f"smallest eigenvalue {lo:.3g} is below the floor")
        scale = float(np.sqrt(lo * hi))
    with np.errstate(invalid="ignore", divide="ignore"):
        x, w = roots_jacobi(n_quad, -alpha, alpha - 1.0)
    u = 0.5 * (x + 1.0)
    N = a.shape[0]
    I = np.eye(N)
    acc = np.zeros((N, N), dtype=complex)
    for ui, wi in zip(u, w):
        M = (1.0 - ui) * a + scale * ui * I
        try:
            acc += wi * np.linalg.solve(M, a)
        except np.linalg.LinAlgError as exc:
            raise SingularResolvent(f"resolvent singular at s-node u={ui}") from exc
    return np.sin(np.pi * alpha) / np.pi * scale ** alpha * acc


@dataclass
class SmoothingReport:
    """Amplified norms ``s_m = ||D^m A D^m||`` and the entry decay fit."""

    s_norms: List[float]
    fit: DecayFit
    p_threshold: float
    r2_min: float

    @property
    def p(self) -> float:
        return self.fit.gamma

    @property
    def smoothing(self) -> bool:
        if self.fit.sentinel in ("exact", "superpolynomial"):
            return self.fit.gamma >= self.p_threshold
        return self.fit.gamma >= self.p_threshold and self.fit.r_squared >= self.r2_min

    def as_dict(self):
        return {"s_norms": self.s_norms, "p": self.fit.gamma, "r_squared": self.fit.r_squared,
                "window": list(self.fit.window), "sentinel": self.fit.sentinel,
                "smoothing": self.smoothing}


def default_window(K: int) -> Tuple[int, int]:
    lo = max(1, K // 4)
    hi = min(K, max(K // 2, lo + 3))
    return lo, hi


def smoothing_order(A: np.ndarray, basis: ModeBasis, m_max: int = 4,
                    window: Optional[Tuple[int, int]] = None, p_threshold: float = 6.0,
                    r2_min: float = 0.9, zero_floor: float = 0.0) -> SmoothingReport:
    """Smoothing diagnostics of a matrix in the Fourier basis."""
    D = np.diag(sobolev_weight(basis, 1.0)).real
    s = []
    for m in range(m_max + 1):
        w = D ** m
        s.append(float(np.linalg.norm(w[:, None] * A * w[None, :], 2)))
    fit = entry_decay_fit(A, window or default_window(basis.K), zero_floor=zero_floor)
    return SmoothingReport(s, fit, p_threshold, r2_min)


def power_difference_decay(a1, a2_const: np.ndarray, alpha: float, W, W2=None,
                           window=None, floor: float = 1e-10) -> DecayFit:
    """Fit the time decay of ``||a1(t)^alpha - a2^alpha||``.

    ``a1`` and ``W`` are families (anything with ``times`` and ``mats``);
    ``W2`` is the weight of ``a2`` (defaults to the last weight of ``W``).
    """
    W2 = W.mats[-1] if W2 is None else W2
    p2 = weighted_power(a2_const, W2, alpha, floor)
    norms = [np.linalg.norm(weighted_power(A, Wt, alpha, floor) - p2, 2)
             for A, Wt in zip(a1.mats, W.mats)]
    return time_decay_or_exact(a1.times, norms, window)
