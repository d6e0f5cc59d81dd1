"""The diagonalizing frame of the Cauchy evolution.

With ``b^+-`` from the Riccati step and ``Gamma = (b^+ - b^-)^(-1/2)`` the
frame is

    T = i^-1 [[Gamma, -Gamma], [b^+ Gamma, -b^- Gamma]],
    T^-1 = i Gamma [[-b^-, 1], [-b^+, 1]],

and it conjugates the generator ``H`` of ``d_t psi = i H psi`` into

    H^ad = T^-1 H T + i T^-1 d_t T
         = [[Gamma^-1 b^+ Gamma + i Gamma^-1 Gamma' + Gamma rho^+ Gamma, -Gamma rho^- Gamma],
            [Gamma rho^+ Gamma, Gamma^-1 b^- Gamma + i Gamma^-1 Gamma' - Gamma rho^- Gamma]],

where ``rho^+-`` are the Riccati residuals, so the off-diagonal part of
``H^ad`` is as small and as smoothing as the residuals.  The diagonal part
``H^d`` is obtained by symmetrizing the diagonal blocks in the ``W(t)``
inner product and adding back ``(i/2) W^-1 dW/dt``, the anti-symmetric part
forced by the time dependence of the weight (``H^d - (i/2) W^-1 dW/dt`` is
``q^ad``-symmetric and ``U^d`` conserves ``W^(t) q^ad``).  With the block weight ``W^ = diag(W, W)`` and
``q = [[0, 1], [1, 0]]`` the frame satisfies ``T^dagger W^ q T = W^ q^ad``
with ``q^ad = diag(1, -1)``.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .basis import OpFamily, sobolev_weight
from .geometry import ModelCoefficients
from .jets import Jet, sylvester_sqrt, weighted_eig
from .riccati import NodeRiccati, RiccatiSolution, weighted_adjoint_jet


def block(A, B, C, D) -> np.ndarray:
    return np.block([[A, B], [C, D]])


def blocks(M: np.ndarray):
    """Split a ``2N x 2N`` matrix (or stack) into its four ``N x N`` blocks."""
    N = M.shape[-1] // 2
    return M[..., :N, :N], M[..., :N, N:], M[..., N:, :N], M[..., N:, N:]


def q_matrix(N: int) -> np.ndarray:
    """Symplectic pairing ``q = [[0, I], [I, 0]]``."""
    Z, I = np.zeros((N, N)), np.eye(N)
    return block(Z, I, I, Z).astype(complex)


def q_ad_matrix(N: int) -> np.ndarray:
    """Charge form ``q^ad = diag(I, -I)``."""
    Z, I = np.zeros((N, N)), np.eye(N)
    return block(I, Z, Z, -I).astype(complex)


def block_weight(W: np.ndarray) -> np.ndarray:
    Z = np.zeros_like(W)
    return block(W, Z, Z, W)


def block_adjoint(A: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Adjoint in the ``W + W`` inner product."""
    Wb = block_weight(W)
    return np.linalg.solve(Wb, A.conj().T @ Wb)


def _sym(X: Jet, W: Jet, Winv: Jet) -> Jet:
    return (X + weighted_adjoint_jet(X, W, Winv)) * 0.5


@dataclass
class NodeFrame:
    """Frame data at one time; ``dH_ad`` and ``dH_d`` are time derivatives."""

    t: float
    W: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray
    H_ad: np.ndarray
    dH_ad: np.ndarray
    H_d: np.ndarray
    dH_d: np.ndarray
    Gamma: np.ndarray
    b_plus: np.ndarray
    b_minus: np.ndarray


def frame_node(node: NodeRiccati) -> NodeFrame:
    """Assemble ``T``, ``T^-1``, ``H^ad`` and ``H^d`` at a Riccati node."""
    W, Winv = node.W, node.W.inv()
    bp, bm = node.b_plus, node.b_minus
    D = bp - bm
    ev, V, Vinv = weighted_eig(D.value, W.value)
    Dh = sylvester_sqrt(D, ev, V, Vinv)
    G = Dh.inv((V / np.sqrt(ev)) @ Vinv)
    n = 1
    Gn, Dhn = G.truncate(n), Dh.truncate(n)
    rp, rm = node.rho_plus.truncate(n), node.rho_minus.truncate(n)
    iGdG = (Dhn @ G.deriv()) * 1j
    h00 = Dhn @ bp.truncate(n) @ Gn + iGdG + Gn @ rp @ Gn
    h11 = Dhn @ bm.truncate(n) @ Gn + iGdG - Gn @ rm @ Gn
    h01 = -(Gn @ rm @ Gn)
    h10 = Gn @ rp @ Gn
    Wn, Winvn = W.truncate(n), Winv.truncate(n)
    # H^ad conserves the charge form of the time dependent weight, so its
    # diagonal blocks carry the anti-symmetric part (i/2) W^-1 W' exactly;
    # it is kept in H^d so that V^ad = H^ad - H^d is smoothing.
    half_r = (Winv @ W.deriv()) * 0.5j
    d00 = _sym(h00, Wn, Winvn) + half_r
    d11 = _sym(h11, Wn, Winvn) + half_r
    Z = np.zeros_like(h00.c)
    Had = np.block([[h00.c, h01.c], [h10.c, h11.c]])
    Hd = np.block([[d00.c, Z], [Z, d11.c]])
    g, b0p, b0m = G.value, bp.value, bm.value
    T = -1j * block(g, -g, b0p @ g, -b0m @ g)
    T_inv = 1j * block(-g @ b0m, g, -g @ b0p, g)
    dHad = Had[1] if len(Had) > 1 else None
    dHd = Hd[1] if len(Hd) > 1 else None
    return NodeFrame(node.t, W.value, T, T_inv, Had[0], dHad, Hd[0], dHd, g, b0p, b0m)


@dataclass
class DiagFrame:
    """Frame data on the nodes of a Riccati solution."""

    nodes: List[NodeFrame]
    grid: object = None

    @property
    def times(self) -> np.ndarray:
        return np.array([nd.t for nd in self.nodes])

    def _fam(self, name):
        mats = np.array([getattr(nd, name) for nd in self.nodes])
        return OpFamily(self.grid, mats) if self.grid is not None else mats

    @property
    def T(self):
        return self._fam("T")

    @property
    def T_inv(self):
        return self._fam("T_inv")

    @property
    def H_ad(self):
        return self._fam("H_ad")

    @property
    def H_d(self):
        return self._fam("H_d")

    @property
    def V_ad(self):
        return np.array([nd.H_ad - nd.H_d for nd in self.nodes])

    @property
    def eps_plus(self):
        return np.array([blocks(nd.H_d)[0] for nd in self.nodes])

    @property
    def eps_minus(self):
        return np.array([blocks(nd.H_d)[3] for nd in self.nodes])

    @property
    def r_b_minus(self):
        """``r_b^-`` defined by ``eps^+ = -b^- + r_b^-``."""
        return np.array([blocks(nd.H_d)[0] + nd.b_minus for nd in self.nodes])

    @property
    def r_b_plus(self):
        """``r_b^+`` defined by ``eps^- = -b^+ + r_b^+``."""
        return np.array([blocks(nd.H_d)[3] + nd.b_plus for nd in self.nodes])

    @property
    def S(self):
        out = []
        for nd in self.nodes:
            I = np.eye(nd.W.shape[0])
            out.append(block(I, -I, nd.b_plus, -nd.b_minus))
        return np.array(out)

    @property
    def S_inv(self):
        out = []
        for nd in self.nodes:
            Di = nd.Gamma @ nd.Gamma
            out.append(block(-Di @ nd.b_minus, Di, -Di @ nd.b_plus, Di))
        return np.array(out)

    def node_at(self, t: float) -> NodeFrame:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"no frame node at t={t}")
        return self.nodes[i]


def build_frame(sol: RiccatiSolution, model: Optional[ModelCoefficients] = None) -> DiagFrame:
    """Frame at every node of ``sol``."""
    grid = model.grid if model is not None and len(sol.nodes) == model.grid.n_nodes else None
    return DiagFrame([frame_node(nd) for nd in sol.nodes], grid)


def hamon_residual(nf: NodeFrame) -> float:
    """``|| T^* q T - q^ad ||`` with ``*`` the ``W + W`` adjoint."""
    N = nf.W.shape[0]
    lhs = block_adjoint(nf.T, nf.W) @ q_matrix(N) @ nf.T
    return float(np.linalg.norm(lhs - q_ad_matrix(N), 2))


def check_symplectic_frame(frame: DiagFrame, q=None, W=None) -> float:
    """Maximum over nodes of :func:`hamon_residual`."""
    return max(hamon_residual(nd) for nd in frame.nodes)


def direct_H_ad(model: ModelCoefficients, node: NodeRiccati) -> np.ndarray:
    """``T^-1 H T + i T^-1 dT/dt`` computed directly (cross-check of the
    closed form used in :func:`frame_node`)."""
    W, bp, bm = node.W, node.b_plus, node.b_minus
    D = bp - bm
    ev, V, Vinv = weighted_eig(D.value, W.value)
    G = sylvester_sqrt(D, ev, V, Vinv).inv((V / np.sqrt(ev)) @ Vinv)
    T0 = -1j * block(G.c[0], -G.c[0], (bp @ G).c[0], -(bm @ G).c[0])
    T1 = -1j * block(G.c[1], -G.c[1], (bp @ G).c[1], -(bm @ G).c[1])
    T0i = np.linalg.inv(T0)
    H = model.generator(node.t)
    return T0i @ H @ T0 + 1j * T0i @ T1


def check_factorization(sol: RiccatiSolution, model: ModelCoefficients, probes: int = 4,
                        seed: int = 0) -> float:
    """Check the approximate factorization of the model operator.

    For ``u(t) = u0 + u1 h + u2 h^2`` (random band-limited ``u0, u1, u2``)
    the identity ``(d_t + i b + r)(d_t - i b) u - (d_t^2 + r d_t + a) u
    = -rho u`` (with ``b = b^+-`` and ``rho = rho^+-``) is evaluated in Taylor
    arithmetic at every node.  Returns the largest relative discrepancy.
    """
    rng = np.random.default_rng(seed)
    N = model.basis.N
    worst = 0.0
    for nd in sol.nodes:
        for b, rho in ((nd.b_plus, nd.rho_plus), (nd.b_minus, nd.rho_minus)):
            for _ in range(probes):
                u = Jet(rng.normal(size=(3, N)) + 1j * rng.normal(size=(3, N)))
                v = u.deriv() - (b.truncate(1) @ u.truncate(1)) * 1j
                lhs = v.deriv() + (b.truncate(0) @ v.truncate(0)) * 1j + nd.r.truncate(0) @ v.truncate(0)
                kg = u.deriv().deriv() + nd.r.truncate(0) @ u.deriv().truncate(0) + nd.a.truncate(0) @ u.truncate(0)
                expect = -(rho.truncate(0) @ u.truncate(0))
                diff = lhs.value - kg.value - expect.value
                scale = max(np.linalg.norm(kg.value), np.linalg.norm(lhs.value), 1e-300)
                worst = max(worst, float(np.linalg.norm(diff) / scale))
    return worst


def frame_sobolev_bound(frame: DiagFrame, basis) -> float:
    """``sup_t || diag(<k>^(1/2), <k>^(-1/2)) T(t) ||``: boundedness of the
    frame from ``L^2 + L^2`` into the charge space ``H^(1/2) + H^(-1/2)``."""
    wp = np.diag(sobolev_weight(basis, 0.5))
    wm = np.diag(sobolev_weight(basis, -0.5))
    d = np.concatenate([wp, wm])
    return float(max(np.linalg.norm(d[:, None] * nd.T, 2) for nd in frame.nodes))
