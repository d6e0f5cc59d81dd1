"""Parametric coefficient families for the spacetime data ``c, b, h, V``.

Each family is a smooth function ``f(t, x)`` periodic in ``x`` that can be
evaluated on Taylor jets in ``t`` (and in ``x``, which is needed when the
coefficient is pulled back along the shift flow).  Families also know their
limits as ``t -> +-inf``.

Built-in families (configuration ids):

``constant{value}``
    ``f = value``.
``cos_bump{amplitude, mode, time_profile, base=0}``
    ``f = base + amplitude * tau(t) * cos(2 pi mode x / L)`` where ``tau`` is
    ``step`` (the switch ``sigma_p`` below, ``power`` defaults to 2),
    ``inverse_power`` (``<t>^-delta``) or ``static`` (1).
``step{left, right, power=2}``
    ``s(t) = left + (right - left) sigma_p(t)``.  For ``power = 2`` this is
    ``left + (right - left)(1 + t/<t>)/2``; in general
    ``sigma_p = w_+^(p/2) / (w_+^(p/2) + w_-^(p/2))`` with
    ``w_+- = (1 +- t/<t>)/2``, whose distance to the limits decays like
    ``<t>^-p``.
``exp_step{left, right, power=2, factor=2}``
    ``exp(factor * s(t))`` with ``s`` as in ``step``.

A specification may also be ``{product = [spec, ...]}`` or
``{sum = [spec, ...]}``.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidConfig
from .jets import Jet


def _japanese(t: Jet) -> Jet:
    return (t * t + 1.0) ** 0.5


def switch_weights(t: Jet):
    """Jets of ``w_+ = (1 + t/<t>)/2`` and ``w_- = (1 - t/<t>)/2``.

    The factor that is close to zero is evaluated in a cancellation free
    form.
    """
    jt = _japanese(t)
    if float(np.real(t.value)) >= 0:
        big = (jt + t) / (jt * 2.0)
        small = 1.0 / ((jt + t) * jt * 2.0)
        return big, small
    big = (jt - t) / (jt * 2.0)
    small = 1.0 / ((jt - t) * jt * 2.0)
    return small, big


def switch(t: Jet, power: float = 2.0) -> Jet:
    """Smooth switch from 0 (``t -> -inf``) to 1 (``t -> +inf``)."""
    wp, wm = switch_weights(t)
    if power == 2.0:
        return wp
    a, b = wp ** (power / 2), wm ** (power / 2)
    return a / (a + b)


class Coefficient:
    """Base class: subclasses implement :meth:`jet` and :meth:`limit`."""

    L = 2 * np.pi

    def jet(self, t: Jet, x) -> Jet:
        raise NotImplementedError

    def limit(self, sign: int, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t: float, x) -> np.ndarray:
        return np.real_if_close(self.jet(Jet.variable(float(t), 0), x).value)

    @property
    def is_static(self) -> bool:
        return False


def _xvalue(x):
    return x.value if isinstance(x, Jet) else np.asarray(x, dtype=float)


def _broadcast(value: Jet, x, order):
    shape = np.shape(_xvalue(x))
    c = np.zeros((order + 1,) + shape, dtype=value.c.dtype)
    c[...] = value.c.reshape((-1,) + (1,) * len(shape))[:order + 1]
    return Jet(c)


@dataclass
class Constant(Coefficient):
    value: float

    def jet(self, t, x):
        return Jet.constant(np.full(np.shape(_xvalue(x)), float(self.value)), t.order)

    def limit(self, sign, x):
        return np.full(np.shape(x), float(self.value))

    @property
    def is_static(self):
        return True


@dataclass
class Step(Coefficient):
    left: float
    right: float
    power: float = 2.0

    def scalar(self, t: Jet) -> Jet:
        return switch(t, self.power) * (self.right - self.left) + self.left

    def jet(self, t, x):
        return _broadcast(self.scalar(t), x, t.order)

    def limit(self, sign, x):
        return np.full(np.shape(x), float(self.right if sign > 0 else self.left))


@dataclass
class ExpStep(Coefficient):
    left: float
    right: float
    power: float = 2.0
    factor: float = 2.0

    def jet(self, t, x):
        s = Step(self.left, self.right, self.power).scalar(t)
        return _broadcast((s * self.factor).exp(), x, t.order)

    def limit(self, sign, x):
        s = self.right if sign > 0 else self.left
        return np.full(np.shape(x), float(np.exp(self.factor * s)))


@dataclass
class CosBump(Coefficient):
    amplitude: float
    mode: int
    time_profile: str = "static"
    delta: float = 2.0
    power: float = 2.0
    base: float = 0.0
    L: float = 2 * np.pi

    def profile(self, t: Jet) -> Jet:
        if self.time_profile == "static":
            return Jet.constant(1.0, t.order)
        if self.time_profile == "step":
            return switch(t, self.power)
        if self.time_profile == "inverse_power":
            return _japanese(t) ** (-self.delta)
        raise InvalidConfig(f"unknown time_profile {self.time_profile!r}")

    def jet(self, t, x):
        k = 2 * np.pi * self.mode / self.L
        if isinstance(x, Jet):
            cx = (x * k).cos()
        else:
            cx = Jet.constant(np.cos(k * np.asarray(x, dtype=float)), t.order)
        tau = _broadcast(self.profile(t), x, t.order)
        return tau * cx * self.amplitude + self.base

    def limit(self, sign, x):
        if self.time_profile == "static":
            tau = 1.0
        elif self.time_profile == "step":
            tau = 1.0 if sign > 0 else 0.0
        else:
            tau = 0.0
        k = 2 * np.pi * self.mode / self.L
        return self.base + self.amplitude * tau * np.cos(k * np.asarray(x, dtype=float))

    @property
    def is_static(self):
        return self.time_profile == "static"


@dataclass
class Product(Coefficient):
    factors: Sequence[Coefficient]

    def jet(self, t, x):
        out = self.factors[0].jet(t, x)
        for f in self.factors[1:]:
            out = out * f.jet(t, x)
        return out

    def limit(self, sign, x):
        out = np.ones(np.shape(x))
        for f in self.factors:
            out = out * f.limit(sign, x)
        return out

    @property
    def is_static(self):
        return all(f.is_static for f in self.factors)


@dataclass
class Sum(Coefficient):
    terms: Sequence[Coefficient]

    def jet(self, t, x):
        out = self.terms[0].jet(t, x)
        for f in self.terms[1:]:
            out = out + f.jet(t, x)
        return out

    def limit(self, sign, x):
        return sum(f.limit(sign, x) for f in self.terms)

    @property
    def is_static(self):
        return all(f.is_static for f in self.terms)


_KNOWN = {"constant", "cos_bump", "step", "exp_step"}


def make_coefficient(spec, L: float) -> Coefficient:
    """Build a coefficient from its configuration table (or a bare number)."""
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    if not isinstance(spec, dict):
        raise InvalidConfig(f"coefficient must be a number or a table, got {spec!r}")
    if "product" in spec:
        return Product([make_coefficient(s, L) for s in spec["product"]])
    if "sum" in spec:
        return Sum([make_coefficient(s, L) for s in spec["sum"]])
    fam = spec.get("family")
    if fam not in _KNOWN:
        raise InvalidConfig(f"unknown coefficient family {fam!r}; expected one of {sorted(_KNOWN)}")
    p = {k: v for k, v in spec.items() if k != "family"}
    try:
        if fam == "constant":
            return Constant(float(p["value"]))
        if fam == "step":
            return Step(float(p["left"]), float(p["right"]), float(p.get("power", 2.0)))
        if fam == "exp_step":
            return ExpStep(float(p["left"]), float(p["right"]), float(p.get("power", 2.0)),
                           float(p.get("factor", 2.0)))
        prof = p.get("time_profile", "static")
        delta = float(p.get("delta", 2.0))
        if isinstance(prof, dict):
            ((name, sub),) = prof.items()
            prof = name
            if isinstance(sub, dict):
                delta = float(sub.get("delta", delta))
            elif sub is not None:
                delta = float(sub)
        return CosBump(float(p["amplitude"]), int(p["mode"]), str(prof), delta,
                       float(p.get("power", 2.0)), float(p.get("base", 0.0)), float(L))
    except KeyError as exc:
        raise InvalidConfig(f"family {fam!r} is missing parameter {exc.args[0]!r}") from exc
