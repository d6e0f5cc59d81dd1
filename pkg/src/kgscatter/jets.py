"""Truncated Taylor series in time ("jets").

A :class:`Jet` stores the normalized Taylor coefficients
``u(t0 + h) = sum_m u[m] h^m`` of a scalar field, a vector or a matrix
valued function of time.  Axis 0 is the Taylor order.  Arithmetic is exact
up to the truncation order, which lets us differentiate coefficient
families and the Riccati iterates repeatedly without the noise that finite
differences would introduce.

Elementwise operations (``*``, ``/``, ``exp``, ``**`` ...) act pointwise on
the trailing axes, ``@`` is the matrix product of matrix valued jets.
"""

import numpy as np


def _as_jet(x, like):
    if isinstance(x, Jet):
        return x
    c = np.zeros((like.order + 1,) + np.shape(x), dtype=np.result_type(x, like.c))
    c[0] = x
    return Jet(c)


class Jet:
    """Truncated Taylor expansion with coefficients ``c[0..order]``."""

    __array_priority__ = 100

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs)

    # -- construction -------------------------------------------------
    @classmethod
    def constant(cls, value, order):
        value = np.asarray(value)
        c = np.zeros((order + 1,) + value.shape, dtype=np.result_type(value, float))
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, t0, order):
        """The identity function ``t`` expanded at ``t0``."""
        c = np.zeros(order + 1)
        c[0] = t0
        if order >= 1:
            c[1] = 1.0
        return cls(c)

    @property
    def order(self):
        return self.c.shape[0] - 1

    @property
    def value(self):
        return self.c[0]

    @property
    def shape(self):
        return self.c.shape[1:]

    def truncate(self, order):
        return Jet(self.c[:order + 1])

    def derivative_values(self):
        """Actual derivatives ``u^(m)(t0) = m! u[m]``."""
        fact = np.cumprod(np.r_[1.0, np.arange(1, self.order + 1)])
        return self.c * fact.reshape((-1,) + (1,) * (self.c.ndim - 1))

    def deriv(self):
        """Jet of the time derivative (one order lower)."""
        m = np.arange(1, self.order + 1).reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(self.c[1:] * m)

    # -- elementwise algebra -----------------------------------------
    def _binary(self, other):
        other = _as_jet(other, self)
        n = min(self.order, other.order)
        a, b = self.c[:n + 1], other.c[:n + 1]
        if a.ndim < b.ndim:
            a = a.reshape(a.shape[:1] + (1,) * (b.ndim - a.ndim) + a.shape[1:])
        elif b.ndim < a.ndim:
            b = b.reshape(b.shape[:1] + (1,) * (a.ndim - b.ndim) + b.shape[1:])
        return a, b

    def __add__(self, other):
        a, b = self._binary(other)
        return Jet(a + b)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self._binary(other)
        return Jet(a - b)

    def __rsub__(self, other):
        a, b = self._binary(other)
        return Jet(b - a)

    def __neg__(self):
        return Jet(-self.c)

    def __mul__(self, other):
        if np.isscalar(other):
            return Jet(self.c * other)
        a, b = self._binary(other)
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape), np.result_type(a, b))
        for m in range(a.shape[0]):
            for i in range(m + 1):
                out[m] += a[i] * b[m - i]
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return Jet(self.c / other)
        u, w = self._binary(other)
        v = np.zeros(np.broadcast_shapes(u.shape, w.shape), np.result_type(u, w, float))
        for m in range(u.shape[0]):
            acc = u[m].copy() if np.ndim(u[m]) else u[m]
            for i in range(1, m + 1):
                acc = acc - w[i] * v[m - i]
            v[m] = acc / w[0]
        return Jet(v)

    def __rtruediv__(self, other):
        return _as_jet(other, self) / self

    def __pow__(self, alpha):
        """Real power via ``v' u = alpha u' v`` (requires ``u[0] != 0``)."""
        u = self.c
        v = np.zeros_like(u, dtype=np.result_type(u, float))
        v[0] = u[0] ** alpha
        for m in range(1, u.shape[0]):
            acc = 0
            for k in range(1, m + 1):
                acc = acc + (alpha * k - (m - k)) * u[k] * v[m - k]
            v[m] = acc / (m * u[0])
        return Jet(v)

    def sqrt(self):
        return self ** 0.5

    def exp(self):
        u = self.c
        v = np.zeros_like(u, dtype=np.result_type(u, float))
        v[0] = np.exp(u[0])
        for m in range(1, u.shape[0]):
            acc = 0
            for k in range(1, m + 1):
                acc = acc + k * u[k] * v[m - k]
            v[m] = acc / m
        return Jet(v)

    def cos_sin(self):
        """Jets of ``cos u`` and ``sin u``."""
        u = self.c
        dt = np.result_type(u, float)
        c = np.zeros_like(u, dtype=dt)
        s = np.zeros_like(u, dtype=dt)
        c[0], s[0] = np.cos(u[0]), np.sin(u[0])
        for m in range(1, u.shape[0]):
            ac, as_ = 0, 0
            for k in range(1, m + 1):
                ac = ac + k * u[k] * s[m - k]
                as_ = as_ + k * u[k] * c[m - k]
            c[m] = -ac / m
            s[m] = as_ / m
        return Jet(c), Jet(s)

    def cos(self):
        return self.cos_sin()[0]

    def sin(self):
        return self.cos_sin()[1]

    def conj(self):
        return Jet(np.conj(self.c))

    # -- matrix algebra -----------------------------------------------
    def __matmul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c @ np.asarray(other))
        a, b = self.c, other.c
        n = min(a.shape[0], b.shape[0])
        out = np.zeros((n,) + (a[0] @ b[0]).shape, dtype=np.result_type(a, b))
        for m in range(n):
            for i in range(m + 1):
                out[m] += a[i] @ b[m - i]
        return Jet(out)

    def __rmatmul__(self, other):
        return Jet(np.asarray(other) @ self.c)

    def H(self):
        """Conjugate transpose of a matrix jet (orderwise)."""
        return Jet(np.ascontiguousarray(np.conj(np.swapaxes(self.c, -1, -2))))

    def inv(self, inv0=None):
        """Inverse of a matrix jet, optionally reusing a known ``inv(c[0])``."""
        X0 = np.linalg.inv(self.c[0]) if inv0 is None else inv0
        out = np.zeros_like(self.c, dtype=np.result_type(self.c, X0))
        out[0] = X0
        for m in range(1, self.order + 1):
            acc = np.zeros_like(X0)
            for i in range(1, m + 1):
                acc += self.c[i] @ out[m - i]
            out[m] = -X0 @ acc
        return Jet(out)

    def __repr__(self):
        return f"Jet(order={self.order}, shape={self.shape})"


def sylvester_sqrt(A, evals, V, Vinv):
    """Principal square root jet of a matrix jet ``A``.

    ``A[0] = V diag(evals) V^-1`` with ``evals > 0``.  The higher orders
    solve ``X0 X_m + X_m X0 = A_m - sum_{0<i<m} X_i X_{m-i}`` in the
    eigenbasis of ``A[0]``.
    """
    lam = np.sqrt(evals)
    denom = lam[:, None] + lam[None, :]
    out = np.zeros_like(A.c, dtype=complex)
    out[0] = (V * lam) @ Vinv
    for m in range(1, A.order + 1):
        rhs = A.c[m].astype(complex)
        for i in range(1, m):
            rhs = rhs - out[i] @ out[m - i]
        out[m] = V @ ((Vinv @ rhs @ V) / denom) @ Vinv
    return Jet(out)


def weighted_eig(A0, W0):
    """Eigen-decomposition of a ``W0``-self-adjoint matrix.

    Returns ``(evals, V, Vinv)`` with ``A0 = V diag(evals) V^-1``; the
    decomposition symmetrizes with the Hermitian square root of ``W0``.
    """
    wv, wU = np.linalg.eigh(0.5 * (W0 + W0.conj().T))
    if np.min(wv) <= 0:
        from .errors import IllConditionedWeight
        raise IllConditionedWeight("weight is not positive definite")
    Wh = (wU * np.sqrt(wv)) @ wU.conj().T
    Whi = (wU / np.sqrt(wv)) @ wU.conj().T
    Af = Wh @ A0 @ Whi
    Af = 0.5 * (Af + Af.conj().T)
    ev, U = np.linalg.eigh(Af)
    return ev, Whi @ U, U.conj().T @ Wh
