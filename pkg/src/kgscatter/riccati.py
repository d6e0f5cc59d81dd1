"""Approximate solutions of the operator Riccati equation.

We look for ``b(t)`` with

    i d_t b - b^2 + a + i r b = r_-inf        (r_-inf small and smoothing)

by the fixed point scheme ``b = eps + c_n`` where ``eps = a^(1/2)``,

    c_0 = a_0 = (i/2) (eps^-1 d_t eps + eps^-1 r eps),
    c_n = a_0 + F(c_{n-1}),
    F(c) = (1/2) eps^-1 (i d_t c + [eps, c] + i r c - c^2).

Each step costs one time derivative.  All time derivatives are taken in
exact Taylor arithmetic at every node (see :mod:`kgscatter.jets`), so the
iteration is carried out independently per time node; the only truncation
is the number of iterations.  The second solution is ``b^- = -b^*`` (adjoint
for the weight ``W(t)``) and its residual is the adjoint of the residual of
``b^+``.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .basis import DecayFit, OpFamily, SampledFamily, time_decay_or_exact
from .errors import GapRepairFailed, IterationDiverged
from .geometry import ModelCoefficients
from .jets import Jet, sylvester_sqrt, weighted_eig
from .operator import SmoothingReport, smoothing_order


def weighted_adjoint_jet(A: Jet, W: Jet, Winv: Jet) -> Jet:
    """Jet of ``W^-1 A^dagger W`` for time dependent ``W``."""
    n = min(A.order, W.order)
    return Winv.truncate(n) @ A.truncate(n).H() @ W.truncate(n)


@dataclass
class NodeRiccati:
    """Riccati data at a single time ``t`` (jets in ``t``)."""

    t: float
    W: Jet
    a: Jet
    r: Jet
    eps: Jet
    b_plus: Jet
    b_minus: Jet
    rho_plus: Jet
    rho_minus: Jet
    increments: List[np.ndarray] = field(default_factory=list)
    clamp: Optional[np.ndarray] = None


def eps_jet(a: Jet, W: Jet, floor: float = 1e-10):
    """Jets of ``eps = a^(1/2)`` and ``eps^-1``."""
    ev, V, Vinv = weighted_eig(a.value, W.value)
    if ev[0] < floor:
        from .errors import NotPositive
        raise NotPositive(f"a(t) has eigenvalue {ev[0]:.3g} below the floor")
    eps = sylvester_sqrt(a, ev, V, Vinv)
    eps_inv = eps.inv((V / np.sqrt(ev)) @ Vinv)
    return eps, eps_inv


def initial_term_jet(eps: Jet, eps_inv: Jet, r: Jet) -> Jet:
    """``a_0 = (i/2)(eps^-1 eps' + eps^-1 r eps)``."""
    n = eps.order - 1
    e_inv = eps_inv.truncate(n)
    return (e_inv @ eps.deriv() + e_inv @ r.truncate(n) @ eps.truncate(n)) * 0.5j


def riccati_node(model: ModelCoefficients, t: float, n_max: int = 4, out_order: int = 2,
                 tol: float = 0.0, keep_increments: bool = False,
                 floor: float = 1e-10) -> NodeRiccati:
    """Run the Riccati iteration at one time, returning jets of order ``out_order``."""
    J = n_max + out_order + 1
    mj = model.jets(t, J)
    W, a, r = mj.W, mj.a, mj.r
    eps, eps_inv = eps_jet(a, W, floor)
    a0 = initial_term_jet(eps, eps_inv, r)
    c = a0
    eps_norm = np.linalg.norm(eps.value, 2)
    incs = [c.value.copy()] if keep_increments else []
    for n in range(1, n_max + 1):
        m = c.order - 1
        e = eps.truncate(m)
        ct = c.truncate(m)
        inner = c.deriv() * 1j + (e @ ct - ct @ e) + r.truncate(m) @ ct * 1j - ct @ ct
        c_new = a0.truncate(m) + eps_inv.truncate(m) @ inner * 0.5
        prev, new = np.linalg.norm(c.value, 2), np.linalg.norm(c_new.value, 2)
        if new > 10 * max(prev, 1e-6 * eps_norm):
            raise IterationDiverged(f"Riccati iterate grew from {prev:.3g} to {new:.3g} at t={t}")
        diff = c_new.value - c.value
        if keep_increments:
            incs.append(diff)
        c = c_new
        if tol > 0 and np.linalg.norm(diff, 2) <= tol:
            break
    k = out_order
    c = c.truncate(k)
    e = eps.truncate(k)
    b = e + c
    Wk, Winv = W.truncate(k + 1), W.truncate(k + 1).inv()
    b_minus = -weighted_adjoint_jet(b, Wk, Winv)
    # Residual of b = eps + c using eps^2 = a exactly:
    # i eps' + i r eps - (eps c + c eps) + i c' - c^2 + i r c.
    m = k - 1
    em, cm, rm = e.truncate(m), c.truncate(m), r.truncate(m)
    rho = (e.deriv() * 1j + rm @ em * 1j - (em @ cm + cm @ em)
           + c.deriv() * 1j - cm @ cm + rm @ cm * 1j)
    rho_minus = weighted_adjoint_jet(rho, Wk, Winv)
    return NodeRiccati(float(t), W.truncate(k), a.truncate(k), r.truncate(k), e, b, b_minus,
                       rho, rho_minus, incs)


@dataclass
class RiccatiSolution:
    """Riccati data on the nodes of the model grid."""

    model: ModelCoefficients
    nodes: List[NodeRiccati]
    n_iter: int
    gap_floor: float = 0.0
    clamp_active: bool = False
    clamp_reports: list = field(default_factory=list)

    def _family(self, get, order=0):
        mats = np.array([get(nd).c[order] for nd in self.nodes])
        return OpFamily(self.model.grid, mats)

    def _with_derivs(self, get):
        fam = self._family(get)
        orders = get(self.nodes[0]).order
        fam.exact_derivatives = [np.array([get(nd).derivative_values()[m] for nd in self.nodes])
                                 for m in range(1, orders + 1)]
        return fam

    @property
    def times(self):
        return np.array([nd.t for nd in self.nodes])

    @property
    def eps(self) -> OpFamily:
        return self._with_derivs(lambda nd: nd.eps)

    @property
    def b(self) -> OpFamily:
        return self._with_derivs(lambda nd: nd.b_plus)

    b_plus = b

    @property
    def b_minus(self) -> OpFamily:
        return self._with_derivs(lambda nd: nd.b_minus)

    @property
    def residual_plus(self) -> OpFamily:
        return self._family(lambda nd: nd.rho_plus)

    @property
    def residual_minus(self) -> OpFamily:
        return self._family(lambda nd: nd.rho_minus)

    def increments(self, n: int) -> OpFamily:
        """``c_n - c_{n-1}`` (``c_0`` for ``n = 0``) on the nodes."""
        return OpFamily(self.model.grid, np.array([nd.increments[n] for nd in self.nodes]))


def initial_term(model: ModelCoefficients, floor: float = 1e-10) -> OpFamily:
    """``a_0`` on the model grid nodes."""
    mats = []
    for t in model.grid.nodes:
        mj = model.jets(t, 1)
        eps, eps_inv = eps_jet(mj.a, mj.W, floor)
        mats.append(initial_term_jet(eps, eps_inv, mj.r).value)
    return OpFamily(model.grid, np.array(mats))


def riccati_iterate(model: ModelCoefficients, n_max: int = 4, tol: float = 0.0,
                    keep_increments: bool = False, times: Optional[Sequence[float]] = None,
                    floor: float = 1e-10) -> RiccatiSolution:
    """Run the iteration at every grid node (or at ``times`` if given)."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    ts = model.grid.nodes if times is None else np.asarray(times, dtype=float)
    nodes = [riccati_node(model, t, n_max, tol=tol, keep_increments=keep_increments,
                          floor=floor) for t in ts]
    return RiccatiSolution(model, nodes, n_max)


def gap_min_ratio(node: NodeRiccati) -> float:
    """``min eig(b+ - b-) / min eig(2 eps)`` in the weighted sense."""
    W = node.W.value
    ev_gap, _, _ = weighted_eig(node.b_plus.value - node.b_minus.value, W)
    ev_eps, _, _ = weighted_eig(node.eps.value, W)
    return float(ev_gap[0] / (2 * ev_eps[0]))


def clamp_node(node: NodeRiccati, floor: float) -> Optional[np.ndarray]:
    """Clamp the spectrum of ``b+ - b-`` from below at ``floor * min eig(2 eps)``.

    Returns the correction ``Delta`` (or ``None`` if the clamp is inactive)
    and adjusts ``b^+`` by ``Delta/2`` and ``b^-`` by ``-Delta/2``.
    """
    W = node.W.value
    D = node.b_plus.value - node.b_minus.value
    ev, V, Vinv = weighted_eig(D, W)
    ev_eps, _, _ = weighted_eig(node.eps.value, W)
    thr = floor * 2 * ev_eps[0]
    if ev[0] >= thr:
        return None
    delta = (V * (np.maximum(ev, thr) - ev)) @ Vinv
    node.b_plus.c[0] = node.b_plus.c[0] + 0.5 * delta
    node.b_minus.c[0] = node.b_minus.c[0] - 0.5 * delta
    node.clamp = delta
    return delta


def enforce_gap(sol: RiccatiSolution, model: ModelCoefficients, floor: float = 0.1,
                p_min: float = 4.0) -> RiccatiSolution:
    """Make ``b+ - b-`` uniformly positive by a spectral clamp.

    The clamp acts only on the eigenvectors whose eigenvalues fall below
    ``floor * min eig(2 eps)``; each correction must pass the smoothing
    diagnostic with ``p >= p_min`` or :class:`GapRepairFailed` is raised.
    """
    for node in sol.nodes:
        delta = clamp_node(node, floor)
        if delta is None:
            continue
        rep = smoothing_order(delta, model.basis, m_max=2, p_threshold=p_min)
        sol.clamp_reports.append((node.t, rep))
        sol.clamp_active = True
        if rep.p < p_min:
            raise GapRepairFailed(f"gap correction at t={node.t} is not smoothing (p={rep.p:.2f})")
    sol.gap_floor = min(gap_min_ratio(nd) for nd in sol.nodes)
    return sol


@dataclass
class ResidualReport:
    """Riccati residuals ``r_-inf^+-`` with diagnostics."""

    plus: OpFamily
    minus: OpFamily
    norms: np.ndarray
    smoothing: Optional[SmoothingReport]
    decay: Optional[DecayFit]


def riccati_residual(sol: RiccatiSolution, model: ModelCoefficients,
                     window=None) -> ResidualReport:
    """Collect the residual families, their worst-node smoothing report and,
    if ``window`` is given and the grid covers it, their time decay."""
    plus, minus = sol.residual_plus, sol.residual_minus
    norms = plus.norms(2)
    worst = int(np.argmax(norms))
    sm = smoothing_order(plus.mats[worst], model.basis) if model.basis.K >= 8 else None
    decay = None
    if window is not None:
        decay = time_decay_or_exact(sol.times, norms, window)
    return ResidualReport(plus, minus, norms, sm, decay)


def residual_decay(model: ModelCoefficients, times: Sequence[float], n_max: int = 4,
                   window=None) -> DecayFit:
    """Fit the decay of ``||r_-inf(t)||`` over arbitrary sample times."""
    norms = [np.linalg.norm(riccati_node(model, t, n_max, out_order=1).rho_plus.value, 2)
             for t in times]
    return time_decay_or_exact(times, norms, window)
