"""Fourier discretization of the circle and shared numerical utilities.

Functions on the circle of circumference ``L`` are represented by their
Fourier coefficients on the modes ``k = -K, ..., K`` (``N = 2K + 1`` of them),
ordered from ``-K`` to ``K``.  Operators are dense ``N x N`` complex matrices
acting on these coefficient vectors.  Time dependent operators are stored as
:class:`OpFamily` objects on a uniform :class:`TimeGrid`.

Besides the basis itself this module hosts the decay fits that turn
statements such as "decays like <t>^-gamma" or "is smoothing" into measured
exponents.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import IllConditionedWeight, InsufficientSamples, InvalidConfig, InvalidData

#: Reported exponent when the entry decay is faster than any fitted power.
P_MAX = 32.0


@dataclass(frozen=True)
class ModeBasis:
    """Fourier basis ``e_k(x) = exp(2 pi i k x / L)`` with ``|k| <= K``."""

    K: int
    L: float

    @property
    def N(self) -> int:
        return 2 * self.K + 1

    @property
    def xs(self) -> np.ndarray:
        """Collocation grid of ``N`` equispaced points on ``[0, L)``."""
        return self.L * np.arange(self.N) / self.N

    @property
    def ks(self) -> np.ndarray:
        """Integer mode labels ``-K, ..., K``."""
        return np.arange(-self.K, self.K + 1)

    @property
    def freqs(self) -> np.ndarray:
        """Angular wave numbers ``2 pi k / L``."""
        return 2 * np.pi * self.ks / self.L

    @property
    def n_fine(self) -> int:
        """Size of the zero-padded grid used to assemble products."""
        return 4 * self.N

    @property
    def xs_fine(self) -> np.ndarray:
        return self.L * np.arange(self.n_fine) / self.n_fine


def make_basis(K: int, L: float) -> ModeBasis:
    """Build a :class:`ModeBasis` after validating the cutoff and length."""
    if int(K) != K or K < 1:
        raise InvalidConfig(f"mode cutoff K must be an integer >= 1, got {K!r}")
    if not np.isfinite(L) or L <= 0:
        raise InvalidConfig(f"circumference L must be positive, got {L!r}")
    return ModeBasis(int(K), float(L))


def to_modes(basis: ModeBasis, samples: np.ndarray) -> np.ndarray:
    """Fourier coefficients (ordered ``-K..K``) of grid samples on ``basis.xs``.

    Leading axes are treated as batch dimensions.
    """
    samples = np.asarray(samples)
    if samples.shape[-1] != basis.N:
        raise InvalidData(f"expected {basis.N} samples, got {samples.shape[-1]}")
    return np.fft.fftshift(np.fft.fft(samples, axis=-1), axes=-1) / basis.N


def to_grid(basis: ModeBasis, coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_modes`."""
    coeffs = np.asarray(coeffs)
    return np.fft.ifft(np.fft.ifftshift(coeffs, axes=-1), axis=-1) * basis.N


def fourier_coefficients(samples: np.ndarray, n_modes: int) -> np.ndarray:
    """Coefficients ``f_hat(m)`` for ``m = -n_modes..n_modes`` of samples on a
    uniform grid covering one period (last axis)."""
    samples = np.asarray(samples)
    M = samples.shape[-1]
    if M < 2 * n_modes + 1:
        raise InvalidData(f"{M} samples cannot resolve {n_modes} modes")
    c = np.fft.fft(samples, axis=-1) / M
    idx = np.arange(-n_modes, n_modes + 1) % M
    return c[..., idx]


def toeplitz_from_coefficients(fhat: np.ndarray, K: int) -> np.ndarray:
    """Convolution matrix ``M_jk = fhat(j - k)`` from coefficients on ``-2K..2K``.

    ``fhat`` may carry leading batch axes.
    """
    fhat = np.asarray(fhat)
    N = 2 * K + 1
    j = np.arange(N)
    offs = j[:, None] - j[None, :] + 2 * K
    return np.ascontiguousarray(fhat[..., offs])


def mult_op(basis: ModeBasis, f: Union[Callable, np.ndarray]) -> np.ndarray:
    """Matrix of multiplication by a periodic function.

    ``f`` may be a callable of ``x`` (evaluated on the zero-padded grid,
    which gives the exact Fourier coefficients of smooth data up to aliasing
    far beyond ``2K``), samples on ``basis.xs`` (interpreted as the band
    limited trigonometric interpolant) or samples on ``basis.xs_fine``.
    """
    K = basis.K
    if callable(f):
        vals = np.asarray(f(basis.xs_fine), dtype=complex)
        vals = np.broadcast_to(vals, (basis.n_fine,))
        return toeplitz_from_coefficients(fourier_coefficients(vals, 2 * K), K)
    vals = np.asarray(f)
    if vals.shape[-1] == basis.N:
        c = to_modes(basis, vals)
        fhat = np.zeros(vals.shape[:-1] + (4 * K + 1,), dtype=complex)
        fhat[..., K:3 * K + 1] = c
        return toeplitz_from_coefficients(fhat, K)
    if vals.shape[-1] == basis.n_fine:
        return toeplitz_from_coefficients(fourier_coefficients(vals, 2 * K), K)
    raise InvalidData(
        f"sample length {vals.shape[-1]} matches neither N={basis.N} nor the fine grid")


def derivative_op(basis: ModeBasis) -> np.ndarray:
    """Spectral derivative: ``diag(2 pi i k / L)``."""
    return np.diag(1j * basis.freqs)


def sobolev_weight(basis: ModeBasis, m: float) -> np.ndarray:
    """Diagonal weight ``<k>^m = (1 + (2 pi k / L)^2)^(m/2)``."""
    return np.diag((1.0 + basis.freqs ** 2) ** (m / 2)).astype(complex)


def weighted_adjoint(A: np.ndarray, W: np.ndarray, rcond: float = 1e-13) -> np.ndarray:
    """Adjoint ``W^-1 A^dagger W`` for the inner product ``<u, W v>``.

    Works on stacks of matrices.  Raises :class:`IllConditionedWeight` if
    ``W`` is numerically singular.
    """
    A = np.asarray(A)
    W = np.asarray(W)
    s = np.linalg.svd(W, compute_uv=False)
    if np.min(s) <= rcond * np.max(s):
        raise IllConditionedWeight("weight matrix is singular to working precision")
    Ah = np.conj(np.swapaxes(A, -1, -2))
    return np.linalg.solve(W, Ah @ W)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid with at least nine nodes."""

    t_min: float
    t_max: float
    n_nodes: int

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise InvalidConfig("time grid needs t_min < t_max")
        if self.n_nodes < 9:
            raise InvalidConfig("time grid needs at least 9 nodes")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_nodes)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_nodes - 1)


def fd_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """Fourth order finite-difference derivative along axis 0.

    Central stencils on interior nodes and one-sided fourth order stencils
    at the two nodes nearest each end.
    """
    f = np.asarray(values)
    n = f.shape[0]
    if n < 5:
        raise InsufficientSamples("fourth order differences need 5 nodes")
    d = np.empty_like(f, dtype=np.result_type(f, float))
    d[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * dt)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * dt)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * dt)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * dt)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * dt)
    return d


@dataclass
class OpFamily:
    """Operator family sampled on the nodes of a :class:`TimeGrid`.

    ``mats`` has shape ``(n_nodes, N, N)``.  When exact time derivatives are
    known (for instance from Taylor arithmetic) they can be attached in
    ``exact_derivatives``; :meth:`derivative` then uses them instead of
    finite differences.
    """

    grid: TimeGrid
    mats: np.ndarray
    exact_derivatives: list = field(default_factory=list)

    def __post_init__(self):
        self.mats = np.asarray(self.mats)
        if self.mats.shape[0] != self.grid.n_nodes:
            raise InvalidData("one matrix per node is required")
        if self.mats.shape[-1] != self.mats.shape[-2]:
            raise InvalidData("family members must be square")

    def __len__(self):
        return self.mats.shape[0]

    def __getitem__(self, i):
        return self.mats[i]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def derivative(self, order: int = 1, exact: bool = True) -> "OpFamily":
        """Time derivative of the family (exact if available, else finite differences)."""
        if exact and len(self.exact_derivatives) >= order:
            return OpFamily(self.grid, self.exact_derivatives[order - 1],
                            self.exact_derivatives[order:])
        out = self.mats
        for _ in range(order):
            out = fd_derivative(out, self.grid.dt)
        return OpFamily(self.grid, out)

    def norms(self, ord=2) -> np.ndarray:
        return np.array([np.linalg.norm(m, ord) for m in self.mats])


@dataclass(frozen=True)
class DecayFit:
    """Power-law fit ``g ~ C x^-gamma``.

    ``sentinel`` is ``None`` for an ordinary fit, ``"exact"`` when the data
    vanish identically (``gamma = inf``) and ``"superpolynomial"`` when the
    decay accelerates beyond any power over the window.
    """

    gamma: float
    prefactor: float
    r_squared: float
    window: Tuple[float, float]
    n_samples: int
    sentinel: Optional[str] = None

    def as_dict(self):
        return {"gamma": self.gamma, "prefactor": self.prefactor,
                "r_squared": self.r_squared, "window": list(self.window),
                "n_samples": self.n_samples, "sentinel": self.sentinel}


def _loglog_fit(x, y):
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - np.sum(resid ** 2) / ss_tot)
    return slope, intercept, r2


def fit_time_decay(times: Sequence[float], values: Sequence[float],
                   window: Optional[Tuple[float, float]] = None) -> DecayFit:
    """Least squares fit of ``log g`` against ``log <t>``.

    ``window`` restricts the fit to ``lo <= |t| <= hi``.  Returns the decay
    exponent ``gamma`` (so that ``g ~ C <t>^-gamma``).
    """
    t = np.asarray(times, dtype=float)
    g = np.asarray(values, dtype=float)
    if window is not None:
        lo, hi = window
        sel = (np.abs(t) >= lo) & (np.abs(t) <= hi)
        t, g = t[sel], g[sel]
    else:
        lo, hi = (float(np.min(np.abs(t))), float(np.max(np.abs(t)))) if len(t) else (0.0, 0.0)
    if len(t) < 4:
        raise InsufficientSamples(f"need at least 4 samples in the window, got {len(t)}")
    if np.any(~np.isfinite(g)) or np.any(g <= 0):
        raise InvalidData("decay fits need strictly positive finite values")
    slope, intercept, r2 = _loglog_fit(np.sqrt(1 + t ** 2), g)
    return DecayFit(float(-slope), float(np.exp(intercept)), float(r2),
                    (float(lo), float(hi)), int(len(t)))


def time_decay_or_exact(times, values, window=None, floor=1e-12) -> DecayFit:
    """Like :func:`fit_time_decay` but returns the ``"exact"`` sentinel when
    every value in the window is below ``floor``."""
    t = np.asarray(times, dtype=float)
    g = np.asarray(values, dtype=float)
    sel = np.ones(len(t), bool) if window is None else (
        (np.abs(t) >= window[0]) & (np.abs(t) <= window[1]))
    if np.all(g[sel] <= floor):
        w = tuple(window) if window is not None else (float(t.min()), float(t.max()))
        return DecayFit(np.inf, 0.0, 1.0, w, int(sel.sum()), "exact")
    return fit_time_decay(t, g, window)


def shell_envelope(A: np.ndarray, lo: int, hi: int):
    """Largest ``|A_jk|`` on each shell ``max(|j|, |k|) = rho`` for
    ``lo <= rho <= hi`` together with ``1 + |j| + |k|`` at the maximizer."""
    A = np.abs(np.asarray(A))
    N = A.shape[0]
    K = (N - 1) // 2
    ks = np.arange(-K, K + 1)
    J, Kk = np.meshgrid(ks, ks, indexing="ij")
    rho = np.maximum(np.abs(J), np.abs(Kk))
    rhos, env, absc = [], [], []
    for r in range(lo, hi + 1):
        mask = rho == r
        vals = A[mask]
        i = int(np.argmax(vals))
        rhos.append(r)
        env.append(vals[i])
        absc.append(1 + abs(J[mask][i]) + abs(Kk[mask][i]))
    return np.array(rhos), np.array(env), np.array(absc, dtype=float)


def entry_decay_fit(A: np.ndarray, annulus: Tuple[int, int], zero_floor: float = 0.0) -> DecayFit:
    """Fit ``|A_jk| <~ C (1 + |j| + |k|)^-p`` over the shells in ``annulus``.

    The envelope is the maximum modulus on each square shell
    ``max(|j|, |k|) = rho``.  Returns ``p`` in the ``gamma`` field.  An all
    zero window gives ``p = inf`` (sentinel ``"exact"``).  When the log-log
    data bend downwards (local slope on the outer half exceeding the inner
    half by more than one and by a quarter) the decay is classified as faster
    than polynomial and ``p`` is reported as :data:`P_MAX`.
    """
    lo, hi = int(annulus[0]), int(annulus[1])
    N = np.asarray(A).shape[0]
    K = (N - 1) // 2
    if lo < 0 or hi > K or hi - lo + 1 < 4:
        raise InsufficientSamples(f"annulus {annulus} invalid for K={K}")
    _, env, absc = shell_envelope(A, lo, hi)
    keep = env > zero_floor
    if not np.any(keep):
        return DecayFit(np.inf, 0.0, 1.0, (lo, hi), int(len(env)), "exact")
    if keep.sum() < 4:
        # Entries vanish on most of the window; the decay is at least as
        # fast as the truncation can show.
        return DecayFit(P_MAX, float(np.max(env)), 0.0, (lo, hi), int(keep.sum()),
                        "superpolynomial")
    x, y = absc[keep], env[keep]
    slope, intercept, r2 = _loglog_fit(x, y)
    p = -slope
    half = len(x) // 2
    sentinel = None
    if half >= 2 and len(x) - half >= 2:
        p_in = -np.polyfit(np.log(x[:half + 1]), np.log(y[:half + 1]), 1)[0]
        p_out = -np.polyfit(np.log(x[half:]), np.log(y[half:]), 1)[0]
        if p_out > p_in + 1.0 and p_out > 1.25 * max(p_in, 0.0) and p_out > 2.0:
            sentinel = "superpolynomial"
            p = max(P_MAX, p)
    return DecayFit(float(p), float(np.exp(intercept)), float(r2), (lo, hi),
                    int(len(x)), sentinel)


@dataclass
class SampledFamily:
    """Operator family on arbitrary (not necessarily uniform) sample times."""

    times: np.ndarray
    mats: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mats = np.asarray(self.mats)
        if len(self.times) != self.mats.shape[0]:
            raise InvalidData("one matrix per sample time is required")

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i):
        return self.mats[i]
