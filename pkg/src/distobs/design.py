"""Luenberger gains, coupling gains and complete observer banks.

Every agent runs an observer whose internal state is ``w_i = [u-part; z_d-part]``:

* strategy 1: ``w_i = [zhat_u; zhat_d]`` and ``xhat_i = Q_i w_i``;
* strategy 2: ``w_i = [xhat_u; zhat_d]`` and ``xhat_i = R_i [xhat_u; S_d zhat_d]``.

In both cases ``xhat_i = w_i[rec_i]`` for a fixed recomposition index ``rec_i``,
so the neighbour exchange ``[I 0] P_i^T xhat_j`` is a pure gather from ``w_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .canon import (AugmentedForm, DetectabilityForm, build_augmented_form,
                    build_detectability_form)
from .classify import MiniblockClassification
from .model import AgentOutputs, BlockIndex, SensorNetwork, SystemModel
from .solvability import SolvabilityReport, schur_radius

STABILITY_MARGIN = 0.01
DEFAULT_RADIUS = 0.2
KRYLOV_TOL = 1e-9


class DesignError(ValueError):
    pass


class GainError(DesignError):
    pass


class InfeasibleGain(GainError):
    """No admissible coupling gain exists for some miniblock."""


# --------------------------------------------------------------------------
# Luenberger placement

def default_poles(n: int, radius: float = DEFAULT_RADIUS) -> np.ndarray:
    """``n`` distinct real poles equispaced on ``[-radius, radius]`` (0 when ``n == 1``)."""
    if n == 1:
        return np.zeros(1)
    return np.linspace(-radius, radius, n)


def _observable_basis(F, H, tol=KRYLOV_TOL):
    """Orthonormal basis of the observable subspace of ``(F, H)`` (block Krylov on ``F^T``)."""
    n = F.shape[0]
    scale = max(1.0, np.linalg.norm(F, 2), np.linalg.norm(H, 2) if H.size else 0.0)
    V = np.zeros((n, 0))
    block = H.T.copy()
    while V.shape[1] < n and block.size:
        block = block - V @ (V.T @ block)
        block = block - V @ (V.T @ block)
        if not block.size:
            break
        U, s, _ = np.linalg.svd(block, full_matrices=False)
        r = int(np.sum(s > tol * scale))
        if r == 0:
            break
        V = np.hstack([V, U[:, :r]])
        block = F.T @ U[:, :r]
    return V


def _complement(V, n):
    if V.shape[1] == 0:
        return np.eye(n)
    U, _, _ = np.linalg.svd(V, full_matrices=True)
    return U[:, V.shape[1]:]


def _ackermann(F, h, poles):
    """Single-output gain ``l`` with ``sigma(F - l h) = poles`` for observable ``(F, h)``."""
    n = F.shape[0]
    O = np.empty((n, n))
    row = h.copy()
    for k in range(n):
        O[k] = row
        row = row @ F
    P = np.eye(n)
    for p in poles:
        P = P @ (F - p * np.eye(n))
    e = np.zeros(n)
    e[-1] = 1.0
    return P @ np.linalg.solve(O, e)


def _place(F, H, poles):
    """Recursive single-output reduction; unobservable residue is returned untouched."""
    n, p = F.shape[0], H.shape[0]
    L = np.zeros((n, p))
    if n == 0:
        return L
    for j in range(p):
        Vo = _observable_basis(F, H[j:j + 1])
        no = Vo.shape[1]
        if no == 0:
            continue
        l_o = _ackermann(Vo.T @ F @ Vo, H[j] @ Vo, poles[:no])
        L[:, j] = Vo @ l_o
        Vn = _complement(Vo, n)
        rest = [q for q in range(p) if q != j]
        if Vn.shape[1] and rest:
            L2 = _place(Vn.T @ F @ Vn, H[rest] @ Vn, poles[no:])
            L[:, rest] = Vn @ L2
        return L
    return L


def place_luenberger(F_d, H_d, poles=None, radius: float = DEFAULT_RADIUS,
                     L_d=None, stability_margin: float = STABILITY_MARGIN) -> np.ndarray:
    """Gain ``L_d`` with ``F_d - L_d H_d`` Schur.

    Parameters
    ----------
    F_d, H_d
        Detectable pair.
    poles
        Desired eigenvalues for the observable part; defaults to
        ``default_poles(n_o, radius)``.
    L_d
        User-supplied gain; only checked, never modified.
    stability_margin
        Required gap between the closed-loop spectral radius and 1.

    Raises
    ------
    DesignError
        If an unobservable mode has modulus >= 1, or the result misses the margin.
    """
    F = np.asarray(F_d, dtype=float)
    n = F.shape[0]
    H = np.asarray(H_d, dtype=float).reshape(-1, n) if n else np.asarray(H_d, dtype=float)
    if L_d is not None:
        L = np.asarray(L_d, dtype=float)
        if L.shape != (n, H.shape[0]):
            raise DesignError(f"L_d has shape {L.shape}, expected {(n, H.shape[0])}")
    elif n == 0:
        L = np.zeros((0, H.shape[0]))
    else:
        Vo = _observable_basis(F, H)
        no = Vo.shape[1]
        Vn = _complement(Vo, n)
        if Vn.shape[1]:
            rho = schur_radius(Vn.T @ F @ Vn)
            if rho >= 1:
                raise DesignError(f"pair is not detectable: unobservable mode of modulus {rho:.6g}")
        poles = default_poles(no, radius) if poles is None else np.asarray(poles, dtype=float)
        if len(poles) != no:
            raise DesignError(f"{len(poles)} poles given for an observable part of size {no}")
        L = _place(F, H, poles)
    rho = schur_radius(F - L @ H) if n else 0.0
    if rho >= 1 - stability_margin:
        raise DesignError(f"closed-loop spectral radius {rho:.6g} violates the margin "
                          f"{stability_margin}")
    return L


# --------------------------------------------------------------------------
# coupling gains

def pick_gains(report: SolvabilityReport, strategy: int, overrides=None,
               policy: str = "midpoint") -> dict:
    """One coupling gain per miniblock that needs one.

    The default policy takes the interval midpoint when both ends are finite,
    ``lo + 1`` when only ``lo`` is, and ``hi - 1`` when only ``hi`` is.
    Overrides are validated against the open interval.
    """
    if policy != "midpoint":
        raise ValueError(f"unknown gain policy {policy!r}")
    overrides = {BlockIndex(*b): float(k) for b, k in (overrides or {}).items()}
    known = {b.block for b in report.gain_blocks()}
    extra = set(overrides) - known
    if extra:
        raise GainError(f"gain given for blocks that need none: {sorted(map(str, extra))}")
    gains = {}
    for br in report.gain_blocks():
        iv = br.interval(strategy)
        spectrum = br.sigma_s1 if strategy == 1 else br.sigma_L
        if iv.empty:
            vals = ", ".join(f"{complex(v):.4g}" for v in spectrum)
            note = f" ({iv.note})" if iv.note else ""
            raise InfeasibleGain(f"block {br.block}: no feasible gain for strategy {strategy}{note}; "
                            f"spectrum [{vals}]")
        if br.block in overrides:
            k = overrides[br.block]
            if k not in iv:
                raise GainError(f"block {br.block}: gain {k} outside ({iv.lo:.6g}, {iv.hi:.6g})")
        elif math.isfinite(iv.lo) and math.isfinite(iv.hi):
            k = iv.midpoint
        elif math.isfinite(iv.lo):
            k = iv.lo + 1.0
        elif math.isfinite(iv.hi):
            k = iv.hi - 1.0
        else:
            k = 0.0
        gains[br.block] = k
    return gains


# --------------------------------------------------------------------------
# observer bank

@dataclass(frozen=True)
class AgentObserver:
    agent: int
    dform: DetectabilityForm
    aform: AugmentedForm | None
    u_index: np.ndarray     # original state index of every u-part entry
    d_index: np.ndarray     # original state index of every z_d entry
    rec: np.ndarray         # xhat_i = w_i[rec]
    F_u: np.ndarray
    F_star: np.ndarray      # zero for strategy 2
    G_u: np.ndarray
    L_d: np.ndarray
    k_u: np.ndarray         # diagonal of K_i

    @property
    def n_u(self) -> int:
        return self.u_index.size

    @property
    def n_d(self) -> int:
        return self.d_index.size

    @property
    def order(self) -> int:
        return self.n_u + self.n_d

    @property
    def K(self) -> np.ndarray:
        return np.diag(self.k_u)

    @property
    def luenberger_matrix(self) -> np.ndarray:
        return self.dform.F_d - self.L_d @ self.dform.H_d


@dataclass(frozen=True)
class ObserverBank:
    strategy: int
    agents: tuple[AgentObserver, ...]
    gains: dict
    adjacency: np.ndarray
    neighbor_maps: dict = field(default_factory=dict)   # (i, j) -> positions in w_j

    @property
    def N(self) -> int:
        return len(self.agents)

    def __getitem__(self, i: int) -> AgentObserver:
        return self.agents[i - 1]

    def summary(self) -> dict:
        M = closed_loop_error_matrix(self)
        return {
            "strategy": self.strategy,
            "gains": {f"{b.ell},{b.h}": k for b, k in sorted(self.gains.items())},
            "orders": {str(a.agent): a.order for a in self.agents},
            "luenberger_radius": {str(a.agent): schur_radius(a.luenberger_matrix)
                                  for a in self.agents},
            "closed_loop_radius": schur_radius(M.matrix),
        }


def _observer_for(system, outputs, cls, i, strategy, gains, L_d):
    dform = build_detectability_form(system, outputs, cls, i)
    d_index = dform.zd_index_map
    if strategy == 1:
        aform = None
        u_index = dform.zu_index_map
        F_u, F_star, G_u = dform.F_u, dform.F_star, dform.G_u
        rec = np.empty(system.n, dtype=int)
        rec[dform.Q] = np.arange(system.n)
        owners = dform.block_of_u()
    else:
        aform = build_augmented_form(system, outputs, cls, i)
        u_index = aform.R[:aform.n_u]
        F_u, G_u = aform.A_u, aform.B_u
        F_star = np.zeros((aform.n_u, dform.n_d))
        rec = np.empty(system.n, dtype=int)
        rec[aform.R[:aform.n_u]] = np.arange(aform.n_u)
        rec[aform.R[aform.n_u:]] = aform.n_u + aform.sd_index
        owners = aform.block_of_u()
    k_u = np.array([gains[b] for b in owners], dtype=float)
    return AgentObserver(i, dform, aform, np.asarray(u_index, dtype=int),
                         np.asarray(d_index, dtype=int), rec, F_u, F_star, G_u, L_d, k_u)


def build_observers(system: SystemModel, outputs: AgentOutputs, net: SensorNetwork,
                    cls: MiniblockClassification, strategy: int, gains: dict,
                    L_overrides=None, poles=None, radius: float = DEFAULT_RADIUS
                    ) -> ObserverBank:
    """Assemble every agent's observer for ``strategy`` (1 or 2).

    ``L_overrides`` maps agent labels to user-supplied ``L_d``; other agents
    get ``place_luenberger``.  ``gains`` must cover every miniblock that some
    agent estimates by consensus.
    """
    if strategy not in (1, 2):
        raise ValueError(f"strategy must be 1 or 2, got {strategy!r}")
    L_overrides = {int(i): v for i, v in (L_overrides or {}).items()}
    gains = {BlockIndex(*b): float(k) for b, k in gains.items()}
    needed = {b for b in cls.blocks if cls.undetected(b)}
    missing = needed - set(gains)
    if missing:
        raise GainError(f"no gain for blocks {sorted(map(str, missing))}")
    agents = []
    for i in range(1, outputs.N + 1):
        dform = build_detectability_form(system, outputs, cls, i)
        L_d = place_luenberger(dform.F_d, dform.H_d, poles=None if poles is None else poles.get(i),
                               radius=radius, L_d=L_overrides.get(i))
        agents.append(_observer_for(system, outputs, cls, i, strategy, gains, L_d))
    nmaps = {}
    for a in agents:
        for j in net.neighbors(a.agent):
            nmaps[(a.agent, j)] = agents[j - 1].rec[a.u_index]
    return ObserverBank(strategy, tuple(agents), gains, np.array(net.adjacency), nmaps)


# --------------------------------------------------------------------------
# end-to-end error dynamics

@dataclass(frozen=True)
class ErrorMatrix:
    """Stacked error map ``[eta_u; eta_d](t+1) = M [eta_u; eta_d](t)``.

    ``rows[r] = (agent, part, position)`` with ``part`` in ``{"u", "d"}``;
    ``n_u`` is the size of the leading undetectable block.
    """

    matrix: np.ndarray
    rows: tuple
    n_u: int
    u_offsets: dict
    d_offsets: dict

    @property
    def gamma_u(self) -> np.ndarray:
        return self.matrix[:self.n_u, :self.n_u]

    @property
    def gamma_d(self) -> np.ndarray:
        return self.matrix[self.n_u:, self.n_u:]

    @property
    def gamma_star(self) -> np.ndarray:
        return self.matrix[:self.n_u, self.n_u:]


def _offsets(bank):
    u_off, d_off, pos = {}, {}, 0
    for a in bank.agents:
        u_off[a.agent] = pos
        pos += a.n_u
    n_u = pos
    for a in bank.agents:
        d_off[a.agent] = pos
        pos += a.n_d
    return u_off, d_off, n_u, pos


def closed_loop_error_matrix(bank: ObserverBank) -> ErrorMatrix:
    """Assemble the block-triangular error matrix from the per-agent update laws.

    The error of agent ``i`` is ``eta_i = [x[u_index] - w_u; x[d_index] - w_d]``;
    by construction ``x - xhat_i = eta_i[rec_i]``.
    """
    u_off, d_off, n_u, total = _offsets(bank)
    M = np.zeros((total, total))

    def glob(a, local):
        local = np.asarray(local)
        return np.where(local < a.n_u, u_off[a.agent] + local, d_off[a.agent] + local - a.n_u)

    W = bank.adjacency
    rows = []
    for a in bank.agents:
        i = a.agent
        ru = np.arange(u_off[i], u_off[i] + a.n_u)
        rd = np.arange(d_off[i], d_off[i] + a.n_d)
        M[np.ix_(rd, rd)] = a.luenberger_matrix
        if a.n_u:
            KF = a.k_u[:, None] * a.F_u
            deg = W[i - 1].sum()
            M[np.ix_(ru, ru)] += a.F_u - deg * KF
            M[np.ix_(ru, rd)] += a.F_star
            for j in np.flatnonzero(W[i - 1] > 0) + 1:
                cols = glob(bank[j], bank.neighbor_maps[(i, j)])
                np.add.at(M, (ru[:, None], cols[None, :]), W[i - 1, j - 1] * KF)
    for a in bank.agents:
        rows += [(a.agent, "u", p) for p in range(a.n_u)]
    for a in bank.agents:
        rows += [(a.agent, "d", p) for p in range(a.n_d)]
    return ErrorMatrix(M, tuple(rows), n_u, u_off, d_off)


def stacked_error(bank: ObserverBank, x, states) -> np.ndarray:
    """Stacked ``[eta_u; eta_d]`` from the plant state and every agent's ``w_i``."""
    x = np.asarray(x, dtype=float)
    us, ds = [], []
    for a, w in zip(bank.agents, states):
        us.append(x[a.u_index] - w[:a.n_u])
        ds.append(x[a.d_index] - w[a.n_u:])
    return np.concatenate(us + ds)

