"""Per-agent permutations of the Jordan form.

Two reorderings are produced for every agent:

``DetectabilityForm``
    ``Q^T A Q = [[F_u, F_star], [0, F_d]]`` and ``C Q = [0, H_d]``.  The
    undetectable coordinates ``z_u`` are the unobservable miniblocks followed
    by the heads of the partly observable ones; ``z_d`` holds the observable
    tails, the observable miniblocks and every stable miniblock.

``AugmentedForm``
    ``R^T A R = diag(A_u, A_d)``.  Partly observable miniblocks are kept whole
    in ``x_u``; ``x_d`` holds the observable and stable miniblocks only.

Permutations are index arrays ``perm`` with ``(P^T x) == x[perm]``; inside a
class, miniblocks are listed by ascending ``ell`` and then ascending ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classify import MiniblockClassification, RANK_TOL, fingerprint, numerical_rank
from .model import AgentOutputs, BlockIndex, SystemModel


class StaleClassification(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """A run of consecutive entries of one miniblock inside a permuted vector."""

    block: BlockIndex
    first: int          # 0-based position inside the miniblock
    length: int
    start: int          # position inside the permuted vector


@dataclass(frozen=True)
class DetectabilityForm:
    agent: int
    Q: np.ndarray
    n_u: int
    n_d: int
    F_u: np.ndarray
    F_star: np.ndarray
    F_d: np.ndarray
    G_u: np.ndarray
    G_d: np.ndarray
    H_d: np.ndarray
    u_segments: tuple = field(default=())
    d_segments: tuple = field(default=())
    n_2o: int = 0       # leading entries of z_d that are observable tails
    n_1: int = 0        # leading entries of z_u from unobservable miniblocks

    @property
    def dims(self) -> tuple[int, int]:
        return self.n_u, self.n_d

    @property
    def zu_index_map(self) -> np.ndarray:
        return self.Q[:self.n_u]

    @property
    def zd_index_map(self) -> np.ndarray:
        return self.Q[self.n_u:]

    def block_of_u(self) -> list[BlockIndex]:
        """Owning miniblock of every entry of ``z_u``."""
        return [s.block for s in self.u_segments for _ in range(s.length)]


@dataclass(frozen=True)
class AugmentedForm:
    agent: int
    R: np.ndarray
    n_u: int
    n_d: int
    A_u: np.ndarray
    A_d: np.ndarray
    B_u: np.ndarray
    B_d: np.ndarray
    C_u: np.ndarray
    C_d: np.ndarray
    sd_index: np.ndarray    # positions of x_d inside the detectable estimate z_d
    nz_d: int               # length of z_d
    u_segments: tuple = field(default=())
    d_segments: tuple = field(default=())
    n_1: int = 0

    @property
    def dims(self) -> tuple[int, int]:
        return self.n_u, self.n_d

    @property
    def selection_S_d(self) -> np.ndarray:
        """Dense ``[0 I]`` selector with ``x_d = S_d z_d``."""
        S = np.zeros((self.n_d, self.nz_d))
        S[np.arange(self.n_d), self.sd_index] = 1.0
        return S

    @property
    def order(self) -> int:
        """State dimension of the augmented observer, ``dim(z_d) + dim(x_u)``."""
        return self.nz_d + self.n_u

    def block_of_u(self) -> list[BlockIndex]:
        return [s.block for s in self.u_segments for _ in range(s.length)]


def _check_fresh(system, outputs, cls):
    if cls.source != fingerprint(system, outputs):
        raise StaleClassification("classification does not match the given system/outputs")


def _classes(system, cls, i):
    """Unstable miniblocks of agent ``i`` grouped by class, ascending (ell, h)."""
    groups = {1: [], 2: [], 3: []}
    for mb in system.jordan.unstable_miniblocks():
        groups[cls.cls_of(i, mb.index)].append(mb)
    return groups


def _lay_out(parts):
    """``parts``: list of (miniblock, first, length) -> (index array, segments)."""
    idx, segs, pos = [], [], 0
    for mb, first, length in parts:
        if length == 0:
            continue
        idx.extend(range(mb.offset + first, mb.offset + first + length))
        segs.append(Segment(mb.index, first, length, pos))
        pos += length
    return idx, segs


def build_detectability_form(system: SystemModel, outputs: AgentOutputs,
                             cls: MiniblockClassification, i: int) -> DetectabilityForm:
    _check_fresh(system, outputs, cls)
    groups = _classes(system, cls, i)
    stable = [mb for mb in system.jordan.miniblocks() if not mb.unstable]
    heads = [(mb, 0, cls.t[(i, mb.index)] - 1) for mb in groups[2]]
    tails = [(mb, cls.t[(i, mb.index)] - 1, mb.dim - cls.t[(i, mb.index)] + 1)
             for mb in groups[2]]
    u_idx, u_segs = _lay_out([(mb, 0, mb.dim) for mb in groups[1]] + heads)
    o_idx, o_segs = _lay_out(tails)
    r_idx, r_segs = _lay_out([(mb, 0, mb.dim) for mb in groups[3]]
                             + [(mb, 0, mb.dim) for mb in stable])
    n_u = len(u_idx)
    d_segs = o_segs + [Segment(s.block, s.first, s.length, s.start + len(o_idx))
                       for s in r_segs]
    Q = np.array(u_idx + o_idx + r_idx, dtype=int)
    A = system.A
    AQ = A[np.ix_(Q, Q)]
    CQ = outputs[i][:, Q]
    BQ = system.B[Q]
    return DetectabilityForm(
        agent=i, Q=Q, n_u=n_u, n_d=len(Q) - n_u,
        F_u=AQ[:n_u, :n_u], F_star=AQ[:n_u, n_u:], F_d=AQ[n_u:, n_u:],
        G_u=BQ[:n_u], G_d=BQ[n_u:], H_d=CQ[:, n_u:],
        u_segments=tuple(u_segs), d_segments=tuple(d_segs), n_2o=len(o_idx),
        n_1=sum(mb.dim for mb in groups[1]),
    )


def build_augmented_form(system: SystemModel, outputs: AgentOutputs,
                         cls: MiniblockClassification, i: int) -> AugmentedForm:
    _check_fresh(system, outputs, cls)
    groups = _classes(system, cls, i)
    stable = [mb for mb in system.jordan.miniblocks() if not mb.unstable]
    u_idx, u_segs = _lay_out([(mb, 0, mb.dim) for mb in groups[1] + groups[2]])
    d_idx, d_segs = _lay_out([(mb, 0, mb.dim) for mb in groups[3] + stable])
    n_2o = sum(mb.dim - cls.t[(i, mb.index)] + 1 for mb in groups[2])
    R = np.array(u_idx + d_idx, dtype=int)
    n_u = len(u_idx)
    A = system.A
    AR = A[np.ix_(R, R)]
    CR = outputs[i][:, R]
    BR = system.B[R]
    return AugmentedForm(
        agent=i, R=R, n_u=n_u, n_d=len(d_idx),
        A_u=AR[:n_u, :n_u], A_d=AR[n_u:, n_u:], B_u=BR[:n_u], B_d=BR[n_u:],
        C_u=CR[:, :n_u], C_d=CR[:, n_u:],
        sd_index=np.arange(n_2o, n_2o + len(d_idx)), nz_d=n_2o + len(d_idx),
        u_segments=tuple(u_segs), d_segments=tuple(d_segs),
        n_1=sum(mb.dim for mb in groups[1]),
    )


@dataclass(frozen=True)
class FormCheck:
    ok: bool
    problems: tuple = ()

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "ok" if self.ok else "; ".join(self.problems)


def _mismatch(name, got, want):
    got, want = np.asarray(got), np.asarray(want)
    if got.shape != want.shape:
        return f"{name}: shape {got.shape} != {want.shape}"
    bad = np.argwhere(got != want)
    if bad.size:
        return f"{name}: first mismatch at {tuple(int(v) for v in bad[0])}"
    return None


def verify_form(form, system: SystemModel, outputs: AgentOutputs, i: int) -> FormCheck:
    """Re-derive the permuted matrices with a dense permutation and compare exactly."""
    perm = form.Q if isinstance(form, DetectabilityForm) else form.R
    n = system.n
    problems = []
    if sorted(perm.tolist()) != list(range(n)):
        return FormCheck(False, ("permutation is not a bijection on the state indices",))
    P = np.zeros((n, n))
    P[perm, np.arange(n)] = 1.0
    A, C, B = system.A, outputs[i], system.B
    PAP = P.T @ A @ P
    CP = C @ P
    PB = P.T @ B
    nu = form.n_u
    if isinstance(form, DetectabilityForm):
        checks = [("F_u", PAP[:nu, :nu], form.F_u), ("F_star", PAP[:nu, nu:], form.F_star),
                  ("F_d", PAP[nu:, nu:], form.F_d), ("H_d", CP[:, nu:], form.H_d),
                  ("G_u", PB[:nu], form.G_u), ("G_d", PB[nu:], form.G_d)]
        if np.any(PAP[nu:, :nu] != 0):
            problems.append("lower-left block of Q^T A Q is not zero")
        n1 = form.n_1
        if np.any(PAP[:n1, n1:nu] != 0) or np.any(PAP[n1:nu, :n1] != 0):
            problems.append("F_u is not block diagonal between unobservable blocks and heads")
        if np.any(PAP[:n1, nu:] != 0):
            problems.append("unobservable miniblocks couple to the detectable part")
        if np.any(CP[:, :nu] != 0):
            problems.append("C Q is not zero on the undetectable coordinates")
    else:
        checks = [("A_u", PAP[:nu, :nu], form.A_u), ("A_d", PAP[nu:, nu:], form.A_d),
                  ("C_u", CP[:, :nu], form.C_u), ("C_d", CP[:, nu:], form.C_d),
                  ("B_u", PB[:nu], form.B_u), ("B_d", PB[nu:], form.B_d)]
        if np.any(PAP[nu:, :nu] != 0) or np.any(PAP[:nu, nu:] != 0):
            problems.append("R^T A R is not block diagonal")
        n1 = form.n_1
        if np.any(CP[:, :n1] != 0):
            problems.append("C R is not zero on the unobservable miniblocks")
    for name, got, want in checks:
        msg = _mismatch(name, got, want)
        if msg:
            problems.append(msg)
    return FormCheck(not problems, tuple(problems))


def pbh_detectable(F, H, rank_tol: float = RANK_TOL) -> bool:
    """PBH detectability: ``[lam I - F; H]`` has full column rank at every ``|lam| >= 1``.

    For triangular ``F`` the diagonal gives the eigenvalues exactly, which keeps
    the rank test sharp on defective Jordan structure.
    """
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float).reshape(-1, F.shape[0]) if F.size else np.zeros((0, 0))
    n = F.shape[0]
    if n == 0:
        return True
    if not np.any(np.tril(F, -1)) or not np.any(np.triu(F, 1)):
        eigs = np.unique(np.diag(F))
    else:
        eigs = np.unique(np.round(np.linalg.eigvals(F), 8))
    for lam in eigs:
        if abs(lam) < 1:
            continue
        M = np.vstack([lam * np.eye(n) - F, H]).astype(complex)
        s = np.linalg.svd(M, compute_uv=False)
        scale = max(1.0, np.linalg.norm(F, 2), np.linalg.norm(H, 2) if H.size else 0.0)
        if np.sum(s > rank_tol * scale) < n:
            return False
    return True


__all__ = [
    "AugmentedForm", "DetectabilityForm", "FormCheck", "Segment", "StaleClassification",
    "build_augmented_form", "build_detectability_form", "pbh_detectable", "verify_form",
    "numerical_rank",
]
