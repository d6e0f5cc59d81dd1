"""Quasi-free states on Cauchy data: covariances, their validation and
the scattering (in/out) limits.

A state at time ``t`` is described by covariances ``c^+-`` acting on Cauchy
data ``psi = (phi, -i d_t phi)``.  With the block weight ``W^ = diag(W, W)``
and the pairing ``q = [[0, 1], [1, 0]]`` the associated Hermitian forms are
``lambda^+- = +-W^ q c^+-``; a pair ``c^+-`` defines a state when
``c^+ + c^- = 1`` and ``lambda^+- >= 0``, and a pure one when moreover the
``c^+-`` are projections.

The out covariances at time 0 are the limits ``t -> +inf`` of
``U(0, t) c_vac U(t, 0)``.  Two numerical schemes are available:

``"vacuum"``
    the literal transport of the asymptotic vacuum (mapped to the model
    variables at time ``t``) back to time 0;
``"frame"`` (default)
    the transport of the instantaneous frame projection
    ``c_ad(t) = T(t) pi^+ T(t)^-1``, which has the same limit.  Since
    ``d_t c_ad - i [H, c_ad] = G`` with ``G = -i T [H^ad, pi^+] T^-1`` built
    from the Riccati residuals only, the deviation
    ``F(t) = U(0, t) c_ad(t) U(t, 0) - c_ref(0)`` is the integral of a small,
    smoothing source.  It is obtained from one backward solve of
    ``E' = i [H, E] - G`` with ``E(t_far) = 0``, and never involves the
    fast oscillations of ``U`` against ``O(1)`` data.
"""

import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh

from .basis import DecayFit, ModeBasis, mult_op, time_decay_or_exact
from .diagonalization import (DiagFrame, NodeFrame, block, block_weight, blocks,
                              frame_node, q_matrix)
from .errors import IntegrationFailure, NoConvergence
from .evolution import EvolutionOptions, ModelGenerator, evolve_path, symplectic_inverse
from .geometry import ModelCoefficients
from .operator import SmoothingReport, smoothing_order, weighted_power
from .riccati import riccati_node

TOL_PURE = 1e-8
TOL_LIMIT = 1e-6


@dataclass
class Covariances:
    """Covariances ``c^+-`` at time ``t_anchor`` with the weight ``W`` of that time."""

    c_plus: np.ndarray
    c_minus: np.ndarray
    W: np.ndarray
    tag: str
    t_anchor: float = 0.0

    @property
    def N(self) -> int:
        return self.W.shape[0]

    @property
    def lambda_plus(self) -> np.ndarray:
        return block_weight(self.W) @ q_matrix(self.N) @ self.c_plus

    @property
    def lambda_minus(self) -> np.ndarray:
        return -block_weight(self.W) @ q_matrix(self.N) @ self.c_minus


@dataclass
class ConvergenceTrace:
    """Samples ``c^{+,t_j}(0)`` of the scattering limit and their increments."""

    times: np.ndarray
    increments: np.ndarray
    limit: np.ndarray
    fit: DecayFit
    samples: List[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if np.any(np.diff(np.abs(self.times)) <= 0):
            raise ValueError("sample times must increase in magnitude")

    def rows(self):
        """``(t_j, ||c^{t_j} - c^{t_{j-1}}||)`` for CSV output."""
        return [(float(t), float(d)) for t, d in zip(self.times[1:], self.increments)]


# -- constructions ------------------------------------------------------------
def vacuum_covariances(a_out: np.ndarray, basis: ModeBasis, W: np.ndarray,
                       tag: str = "vac") -> Covariances:
    """``c^{+-,vac} = 1/2 [[1, +-a^(-1/2)], [+-a^(1/2), 1]]``."""
    eps = weighted_power(a_out, W, 0.5)
    eps_inv = weighted_power(a_out, W, -0.5)
    I = np.eye(basis.N)
    cp = 0.5 * block(I, eps_inv, eps, I)
    cm = 0.5 * block(I, -eps_inv, -eps, I)
    return Covariances(cp, cm, W, tag)


def _pi_plus(N: int) -> np.ndarray:
    Z, I = np.zeros((N, N)), np.eye(N)
    return block(I, Z, Z, Z)


def frame_projection(node: NodeFrame) -> np.ndarray:
    """``c_ad = T pi^+ T^-1`` at a frame node."""
    N = node.W.shape[0]
    return node.T @ _pi_plus(N) @ node.T_inv


def reference_block_formula(node: NodeFrame) -> np.ndarray:
    """``c^+_ref`` from its explicit blocks
    ``[[-D^-1 b^-, D^-1], [-b^+ D^-1 b^-, b^+ D^-1]]`` with ``D = b^+ - b^-``."""
    Di = np.linalg.inv(node.b_plus - node.b_minus)
    bp, bm = node.b_plus, node.b_minus
    return block(-Di @ bm, Di, -bp @ Di @ bm, bp @ Di)


def frame_node_at(model: ModelCoefficients, t: float, n_max: int = 4,
                  with_derivative: bool = False) -> NodeFrame:
    """Frame data at an arbitrary time (one Riccati node); time derivatives
    of ``H^ad`` and ``H^d`` only if ``with_derivative``."""
    return frame_node(riccati_node(model, t, n_max, out_order=2 if with_derivative else 1))


def reference_covariances(frame, t0: float = 0.0, model: ModelCoefficients = None,
                          n_max: int = 4) -> Covariances:
    """``c^+-_ref(t0) = T(t0) pi^+- T(t0)^-1``.

    ``frame`` is a :class:`DiagFrame` holding a node at ``t0``, a single
    :class:`NodeFrame`, or ``None`` (then the node is computed from ``model``).
    """
    if isinstance(frame, NodeFrame):
        node = frame
    elif frame is not None:
        try:
            node = frame.node_at(t0)
        except KeyError:
            if model is None:
                raise
            node = frame_node_at(model, t0, n_max)
    else:
        node = frame_node_at(model, t0, n_max)
    cp = frame_projection(node)
    return Covariances(cp, np.eye(cp.shape[0]) - cp, node.W, "ref", float(node.t))


def conjugate(U: np.ndarray, c: np.ndarray, U_inv: Optional[np.ndarray] = None) -> np.ndarray:
    """``U c U^-1``."""
    if U_inv is not None:
        return U @ c @ U_inv
    return np.linalg.solve(U.T, (U @ c).T).T


def transport_covariances(U: np.ndarray, c: Covariances, to_t: float,
                          W_to: np.ndarray) -> Covariances:
    """``c^+-(to_t) = U(to_t, t_anchor) c^+- U(t_anchor, to_t)``; ``U`` is
    ``U(to_t, c.t_anchor)`` and ``W_to`` the weight at ``to_t``."""
    Ui = symplectic_inverse(U, W_to, c.W)
    return Covariances(U @ c.c_plus @ Ui, U @ c.c_minus @ Ui, W_to, c.tag, float(to_t))


# -- the map to the original variables ----------------------------------------
def composition_matrix(basis: ModeBasis, y_inv: np.ndarray) -> np.ndarray:
    """Matrix of ``v -> v o y^-1`` on the modes, from samples of ``y^-1`` on
    the fine grid (trigonometric interpolation followed by projection)."""
    M = basis.n_fine
    E = np.exp(1j * np.outer(y_inv, basis.freqs))
    F = np.exp(-1j * np.outer(basis.freqs, basis.xs_fine)) / M
    return F @ E


@dataclass
class ZFamily:
    """``Z(t) = (chi_t^*)^-1 R(t) T(t)`` and its limits.

    ``R(t) = diag(1, c^(t))`` converts the model time derivative
    ``c^^-1 d_t`` back to the coordinate time derivative.
    """

    model: ModelCoefficients
    n_max: int = 4
    Z_out: np.ndarray = None
    Z_in: np.ndarray = None
    M_out: np.ndarray = None
    M_in: np.ndarray = None

    def M(self, t: float) -> np.ndarray:
        """The Cauchy data map ``(chi_t^*)^-1 R(t)`` from model to original variables."""
        m = self.model
        basis = m.basis
        c, _, _ = m.fine_jets(t, 0)
        Rc = mult_op(basis, np.real(c.value))
        C = self._composition(t)
        I = np.eye(basis.N)
        Z0 = np.zeros_like(I)
        return block(C, Z0, Z0, C) @ block(I, Z0, Z0, Rc)

    def _composition(self, t: float) -> np.ndarray:
        m = self.model
        if not m.use_flow or m.flow.trivial:
            return np.eye(m.basis.N, dtype=complex)
        return composition_matrix(m.basis, m.flow.inverse(t))

    def T(self, t: float) -> np.ndarray:
        return frame_node_at(self.model, t, self.n_max).T

    def __call__(self, t: float) -> np.ndarray:
        return self.M(t) @ self.T(t)

    def vacuum_in_model(self, t: float, sign: int = 1) -> np.ndarray:
        """The asymptotic vacuum projection expressed in model variables at
        time ``t``: ``M(t)^-1 Z_lim pi^+ Z_lim^-1 M(t)``."""
        Zl = self.Z_out if sign > 0 else self.Z_in
        Mt = self.M(t)
        N = self.model.basis.N
        P = Zl @ _pi_plus(N) @ np.linalg.inv(Zl)
        return np.linalg.solve(Mt, P @ Mt)


def asymptotic_frame(a_lim: np.ndarray, W_lim: np.ndarray) -> np.ndarray:
    """``T`` for ``b^+- = +-a^(1/2)``: ``Gamma = (2 eps)^(-1/2)``."""
    eps = weighted_power(a_lim, W_lim, 0.5)
    g = weighted_power(a_lim, W_lim, -0.25) / np.sqrt(2.0)
    return -1j * block(g, -g, eps @ g, eps @ g)


def build_Z(model: ModelCoefficients, n_max: int = 4) -> ZFamily:
    """Assemble ``Z(t)`` and ``Z_out/in = (chi_out/in^*)^-1 R_out/in T_out/in``."""
    z = ZFamily(model, n_max)
    basis = model.basis
    I = np.eye(basis.N)
    Z0 = np.zeros_like(I)
    for sign in (1, -1):
        W_lim, a_lim = model.asymptotic(sign)
        c_lim = model.spec.c.limit(sign, _limit_points(model, sign))
        Rc = mult_op(basis, np.broadcast_to(np.real(c_lim), (basis.n_fine,)).astype(float))
        if not model.use_flow or model.flow.trivial:
            C = np.eye(basis.N, dtype=complex)
        else:
            C = composition_matrix(basis, model.flow.inverse(sign * np.inf))
        M = block(C, Z0, Z0, C) @ block(I, Z0, Z0, Rc)
        Zl = M @ asymptotic_frame(a_lim, W_lim)
        if sign > 0:
            z.M_out, z.Z_out = M, Zl
        else:
            z.M_in, z.Z_in = M, Zl
    return z


def _limit_points(model: ModelCoefficients, sign: int) -> np.ndarray:
    flow = model.flow
    if not model.use_flow or flow.trivial:
        return model.basis.xs_fine
    return flow.y_out if sign > 0 else flow.y_in


def z_convergence(z: ZFamily, times: Sequence[float], window=None, sign: int = 1) -> DecayFit:
    """Decay of ``||Z(t)^-1 Z_out - 1||`` (or ``Z_in`` for ``sign < 0``)."""
    Zl = z.Z_out if sign > 0 else z.Z_in
    I = np.eye(Zl.shape[0])
    norms = [np.linalg.norm(np.linalg.solve(z(t), Zl) - I, 2) for t in times]
    return time_decay_or_exact(np.abs(times), norms, window)


# -- scattering limits -----------------------------------------------------------
def _g_source(node: NodeFrame) -> np.ndarray:
    """``G = -i T [H^ad, pi^+] T^-1``; only the off-diagonal blocks of ``H^ad``
    (the residual terms) contribute."""
    h00, h01, h10, h11 = blocks(node.H_ad)
    Z = np.zeros_like(h00)
    comm = block(Z, -h01, h10, Z)
    return -1j * node.T @ comm @ node.T_inv


def _backward_deviation(model: ModelCoefficients, sign: int, t_far: float,
                        stops: Sequence[float], n_max: int, n_source: int,
                        rtol: float):
    """Solve ``E' = i [H, E] - G`` from ``sign * t_far`` (``E = 0``) to 0 and
    return ``E`` at ``sign * stops`` and at 0, plus the frame node at 0."""
    us = np.linspace(0.0, np.arcsinh(t_far), n_source)
    nodes = [frame_node_at(model, sign * np.sinh(u), n_max) for u in us]
    Gs = np.array([_g_source(nd) for nd in nodes])
    shape = Gs.shape[1:]
    spline = CubicSpline(us, Gs.reshape(len(us), -1))
    env = np.abs(Gs).max(axis=0).ravel()
    gmax = float(env.max()) if env.size else 0.0
    stops = np.asarray(stops, dtype=float)
    if gmax == 0.0:
        E = {float(s): np.zeros(shape, complex) for s in stops}
        return E, np.zeros(shape, complex), nodes[0], (np.sinh(us), np.zeros(len(us)))
    atol = rtol * 1e-3 * np.maximum(env, 1e-8 * gmax)
    gen = ModelGenerator(model)

    def rhs(tau, y):
        E = y.reshape(shape)
        G = spline(np.arcsinh(abs(tau))).reshape(shape)
        return (1j * (gen.apply(tau, E) - gen.apply_right(tau, E)) - G).ravel()

    t_eval = sorted(set([float(sign * s) for s in stops if s < t_far] + [0.0]),
                    key=lambda x: -abs(x))
    sol = solve_ivp(rhs, (sign * t_far, 0.0), np.zeros(np.prod(shape), complex),
                    method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval)
    if not sol.success:
        raise IntegrationFailure(f"deviation solve failed: {sol.message}")
    out = {float(abs(t)): sol.y[:, j].reshape(shape) for j, t in enumerate(sol.t)}
    E0 = out.pop(0.0)
    out[float(t_far)] = np.zeros(shape, complex)
    gnorm = np.array([np.linalg.norm(G, 2) for G in Gs])
    return out, E0, nodes[0], (np.sinh(us), gnorm)


def _tail_bound(t: np.ndarray, g: np.ndarray) -> float:
    """``int_T^inf ||G||`` for ``||G|| ~ C t^-p`` fitted on the last third."""
    sel = slice(2 * len(t) // 3, None)
    tt, gg = t[sel], g[sel]
    if gg[-1] == 0.0:
        return 0.0
    ok = gg > 0
    p = -np.polyfit(np.log(tt[ok]), np.log(gg[ok]), 1)[0]
    if p <= 1.0:
        return float("inf")
    return float(gg[-1] * tt[-1] / (p - 1.0))


def scattering_covariances(model: ModelCoefficients, direction: str = "out",
                           t_samples: Optional[Sequence[float]] = None,
                           opts: Optional[EvolutionOptions] = None, scheme: str = "frame",
                           n_max: int = 4, n_source: int = 241, window=None,
                           z: Optional[ZFamily] = None, keep_samples: bool = False,
                           limit_only: bool = False):
    """Time-0 covariances of the out (``direction="out"``) or in state.

    ``t_samples`` are positive magnitudes; the samples are taken at
    ``+t_j`` for out and ``-t_j`` for in.  Returns ``(Covariances,
    ConvergenceTrace)``; the increments between consecutive samples are
    fitted with a power law and the limit is extrapolated by summing the
    geometric tail implied by the fit.

    With ``limit_only=True`` (frame scheme only) a single backward solve from
    ``max(t_samples)`` gives ``c^{+,t_far}(0)`` without evolving ``U`` to the
    samples; no extrapolation is done and the second return value is a dict
    with ``t_far`` and ``tail_bound``, an estimate of
    ``int_{t_far}^inf ||G||`` from a power-law fit of the source norm.
    """
    if direction not in ("out", "in"):
        raise ValueError("direction must be 'out' or 'in'")
    if scheme not in ("frame", "vacuum"):
        raise ValueError("scheme must be 'frame' or 'vacuum'")
    sign = 1 if direction == "out" else -1
    opts = opts or EvolutionOptions(rtol=1e-9)
    ts = np.sort(np.abs(np.asarray(t_samples if t_samples is not None
                                   else np.geomspace(5, 40, 12), dtype=float)))
    if len(ts) < 2 or ts[0] <= 0:
        raise ValueError("need at least two positive sample times")
    N = model.basis.N
    W0 = model.at(0.0)[0]
    if limit_only:
        if scheme != "frame":
            raise ValueError("limit_only needs the frame scheme")
        _, E0, node0, (gt, gn) = _backward_deviation(model, sign, ts[-1], [], n_max,
                                                     n_source, opts.rtol)
        c = frame_projection(node0) + E0
        return (Covariances(c, np.eye(2 * N) - c, W0, direction, 0.0),
                {"t_far": float(ts[-1]), "tail_bound": _tail_bound(gt, gn)})
    path = evolve_path(model, 0.0, sign * ts, opts)

    samples = []
    if scheme == "frame":
        E, E0, node0, _ = _backward_deviation(model, sign, ts[-1], ts, n_max, n_source,
                                              opts.rtol)
        c_ref0 = frame_projection(node0)
        for t in ts:
            U = path[float(sign * t)]
            Ui = symplectic_inverse(U, model.at(sign * t)[0], W0)
            samples.append(c_ref0 + E0 - Ui @ E[float(t)] @ U)
    else:
        z = z or build_Z(model, n_max)
        for t in ts:
            U = path[float(sign * t)]
            Wt = model.at(sign * t)[0]
            Ui = symplectic_inverse(U, Wt, W0)
            samples.append(Ui @ z.vacuum_in_model(sign * t, sign) @ U)

    inc = np.array([np.linalg.norm(samples[j + 1] - samples[j], 2) for j in range(len(ts) - 1)])
    mids = np.sqrt(ts[1:] * ts[:-1])
    fit = time_decay_or_exact(mids, inc, window)
    limit = samples[-1].copy()
    if fit.sentinel != "exact":
        if not fit.gamma > 0.05:
            raise NoConvergence(f"scattering increments do not decay (gamma={fit.gamma:.3g})")
        qf = (ts[-1] / ts[-2]) ** (-fit.gamma)
        limit = limit + (samples[-1] - samples[-2]) * qf / (1.0 - qf)
    cov = Covariances(limit, np.eye(2 * N) - limit, W0, direction, 0.0)
    trace = ConvergenceTrace(ts, inc, limit, fit, samples if keep_samples else [])
    return cov, trace


# -- validation -------------------------------------------------------------------
def _min_weighted_eig(lam: np.ndarray, W: np.ndarray) -> float:
    Wb = block_weight(W)
    Wb = 0.5 * (Wb + Wb.conj().T)
    L = 0.5 * (lam + lam.conj().T)
    return float(eigh(L, Wb, eigvals_only=True)[0])


def validate_state(c: Covariances, tol: Optional[float] = None) -> Dict[str, object]:
    """Residuals of the state conditions and their verdicts.

    Tolerances: ``1e-8`` for ``vac``/``ref`` and ``1e-6`` for the
    extrapolated ``in``/``out`` covariances unless ``tol`` is given.
    """
    if tol is None:
        tol = TOL_PURE if c.tag in ("vac", "ref") else TOL_LIMIT
    I = np.eye(c.c_plus.shape[0])
    scale = max(np.linalg.norm(c.c_plus, 2), 1.0)
    comp = float(np.linalg.norm(c.c_plus + c.c_minus - I, 2))
    idem = float(max(np.linalg.norm(c.c_plus @ c.c_plus - c.c_plus, 2),
                     np.linalg.norm(c.c_minus @ c.c_minus - c.c_minus, 2)) / scale)
    lp, lm = c.lambda_plus, c.lambda_minus
    herm = float(max(np.linalg.norm(lp - lp.conj().T, 2), np.linalg.norm(lm - lm.conj().T, 2))
                 / max(np.linalg.norm(lp, 2), 1e-300))
    ep, em = _min_weighted_eig(lp, c.W), _min_weighted_eig(lm, c.W)
    checks = {
        "complementarity": comp <= tol,
        "idempotency": idem <= tol,
        "positivity": min(ep, em) >= -tol,
    }
    return {
        "tag": c.tag,
        "tolerance": tol,
        "residuals": {"complementarity": comp, "idempotency": idem, "hermiticity": herm,
                      "min_eig_lambda_plus": ep, "min_eig_lambda_minus": em},
        "checks": checks,
        "pass": all(checks.values()),
    }


def covariance_distance(c1: Covariances, c2: Covariances) -> float:
    return float(max(np.linalg.norm(c1.c_plus - c2.c_plus, 2),
                     np.linalg.norm(c1.c_minus - c2.c_minus, 2)))


# -- two-point functions ------------------------------------------------------------
def _pi0(N):
    return np.hstack([np.eye(N), np.zeros((N, N))])


def _pi1_star(N):
    return np.vstack([np.zeros((N, N)), np.eye(N)])


def causal_propagator(U_ts: np.ndarray) -> np.ndarray:
    """``G(t, s) = i pi_0 U(t, s) pi_1^*``."""
    N = U_ts.shape[0] // 2
    return 1j * U_ts[:N, N:]


def two_point(c: Covariances, U_t0: np.ndarray, U_0s: np.ndarray):
    """``Lambda^+-(t, s) = -+ pi_0 U(t, 0) c^-+ U(0, s) pi_1^*``.

    ``U_t0 = U(t, 0)`` and ``U_0s = U(0, s)``.  The positive frequency
    kernel is built from the projection onto the negative spectral subspace
    of ``H``: with ``i^-1 d_t psi = H psi`` that subspace carries the
    ``exp(-i eps t)`` modes, so that ``Lambda^+ >= 0`` and
    ``Lambda^+ - Lambda^- = i G``.
    """
    N = c.N
    P0, P1 = _pi0(N), _pi1_star(N)
    lp = -P0 @ U_t0 @ c.c_minus @ U_0s @ P1
    lm = P0 @ U_t0 @ c.c_plus @ U_0s @ P1
    return lp, lm


# -- Hadamard proxy -------------------------------------------------------------------
@dataclass
class HadamardReport:
    blocks: Dict[str, SmoothingReport]
    max_norm: float

    @property
    def passed(self) -> bool:
        return all(r.smoothing for r in self.blocks.values())

    def as_dict(self):
        return {"p_per_block": {k: r.p for k, r in self.blocks.items()},
                "r_squared": {k: r.fit.r_squared for k, r in self.blocks.items()},
                "window": list(next(iter(self.blocks.values())).fit.window),
                "max_norm": self.max_norm, "pass": self.passed}


def hadamard_difference(c_state: Covariances, c_ref: Covariances, basis: ModeBasis,
                        window=None, p_threshold: float = 6.0, r2_min: float = 0.9,
                        zero_floor: float = 1e-13) -> HadamardReport:
    """Smoothing diagnostics of the four blocks of ``c^+_state - c^+_ref``."""
    if abs(c_state.t_anchor - c_ref.t_anchor) > 1e-12:
        raise ValueError("covariances must share the anchor time")
    D = c_state.c_plus - c_ref.c_plus
    names = ("00", "01", "10", "11")
    reps = {n: smoothing_order(b, basis, m_max=2, window=window, p_threshold=p_threshold,
                               r2_min=r2_min, zero_floor=zero_floor)
            for n, b in zip(names, blocks(D))}
    return HadamardReport(reps, float(np.linalg.norm(D, 2)))


# -- output -------------------------------------------------------------------------
def state_report(scenario: str, c: Covariances, validation: dict,
                 trace: Optional[ConvergenceTrace] = None,
                 hadamard: Optional[HadamardReport] = None) -> dict:
    rep = {"scenario": scenario, "tag": c.tag, "residuals": validation["residuals"],
           "pass": validation["pass"]}
    if trace is not None:
        rep["convergence"] = {"gamma": trace.fit.gamma, "r_squared": trace.fit.r_squared,
                              "samples": len(trace.times)}
    if hadamard is not None:
        rep["smoothing"] = hadamard.as_dict()
    return rep


def matrix_csv(A: np.ndarray) -> str:
    """Row-major CSV with complex entries as ``re,im`` pairs."""
    buf = io.StringIO()
    for row in np.atleast_2d(A):
        buf.write(",".join(f"{z.real:.17g},{z.imag:.17g}" for z in row))
        buf.write("\n")
    return buf.getvalue()
