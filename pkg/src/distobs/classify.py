"""Per-agent observability classes of the unstable Jordan miniblocks.

For agent ``i`` and miniblock ``(ell, h)`` the output block ``C_i^{ell,h}``
decides the class:

* ``1`` -- the block is zero (miniblock unobservable),
* ``2`` -- the first nonzero column is ``t > 1`` (only the tail is observable),
* ``3`` -- the first column is nonzero (miniblock observable).

``G[(i, ell, k)]`` is the set of miniblocks ``h`` of class ``k`` for agent
``i``; ``V[(block, k)]`` is the set of agents for which ``block`` has class
``k``.  Stable eigenvalues are not classified.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .model import AgentOutputs, BlockIndex, SystemModel, ensure_valid

RANK_TOL = 1e-9


def fingerprint(system: SystemModel, outputs: AgentOutputs) -> str:
    """Digest of the data a classification depends on."""
    hsh = hashlib.sha256()
    for eb in system.jordan.eigens:
        hsh.update(repr((float(eb.lam), tuple(int(d) for d in eb.dims))).encode())
    for Ci in outputs.C:
        hsh.update(repr(Ci.shape).encode())
        hsh.update(np.ascontiguousarray(Ci, dtype=float).tobytes())
    return hsh.hexdigest()


def first_obs_index(C_block, tol: float = 0.0) -> int | None:
    """1-based index of the first column of ``C_block`` that is nonzero.

    A column counts as zero when every entry has modulus ``<= tol``; with the
    default ``tol=0.0`` the test is exact.  Returns ``None`` for a zero block.
    """
    C_block = np.asarray(C_block, dtype=float)
    if C_block.size == 0:
        return None
    nonzero = np.any(np.abs(C_block) > tol, axis=0)
    hits = np.flatnonzero(nonzero)
    return int(hits[0]) + 1 if hits.size else None


@dataclass(frozen=True)
class MiniblockClassification:
    t: dict            # (i, BlockIndex) -> int, only for nonzero blocks
    G: dict            # (i, ell, k) -> frozenset of h
    V: dict            # (BlockIndex, k) -> frozenset of agents
    N: int
    blocks: tuple      # unstable BlockIndex labels, in state order
    dims: dict         # BlockIndex -> miniblock dimension
    source: str        # fingerprint of (system, outputs)
    structural_zero_tol: float = 0.0

    def cls_of(self, i: int, block: BlockIndex) -> int:
        for k in (1, 2, 3):
            if i in self.V[(block, k)]:
                return k
        raise KeyError((i, block))

    def undetected(self, block: BlockIndex) -> tuple[int, ...]:
        """Agents in V_1 or V_2 of ``block``, ascending."""
        return tuple(sorted(self.V[(block, 1)] | self.V[(block, 2)]))

    def rows_needed(self, i: int, block: BlockIndex) -> int:
        """How many leading entries of the miniblock agent ``i`` cannot detect."""
        k = self.cls_of(i, block)
        if k == 1:
            return self.dims[block]
        if k == 2:
            return self.t[(i, block)] - 1
        return 0

    def to_json(self) -> dict:
        def key(b):
            return f"{b.ell},{b.h}"
        return {
            "t": {f"{i};{key(b)}": v for (i, b), v in sorted(self.t.items())},
            "G": {f"{i};{ell};{k}": sorted(v) for (i, ell, k), v in sorted(self.G.items())},
            "V": {f"{key(b)};{k}": sorted(v) for (b, k), v in sorted(self.V.items())},
        }


def classify(system: SystemModel, outputs: AgentOutputs,
             structural_zero_tol: float = 0.0) -> MiniblockClassification:
    ensure_valid(system, outputs)
    jordan = system.jordan
    N = outputs.N
    t, G, V = {}, {}, {}
    unstable = jordan.unstable_miniblocks()
    for mb in unstable:
        for k in (1, 2, 3):
            V[(mb.index, k)] = set()
    for i in range(1, N + 1):
        for ell in range(1, jordan.r_u + 1):
            for k in (1, 2, 3):
                G[(i, ell, k)] = set()
    for mb in jordan.miniblocks():
        for i in range(1, N + 1):
            ti = first_obs_index(outputs.block(i, mb), structural_zero_tol)
            if ti is not None:
                t[(i, mb.index)] = ti
            if not mb.unstable:
                continue
            k = 1 if ti is None else (3 if ti == 1 else 2)
            G[(i, mb.index.ell, k)].add(mb.index.h)
            V[(mb.index, k)].add(i)
    return MiniblockClassification(
        t=t,
        G={key: frozenset(v) for key, v in G.items()},
        V={key: frozenset(v) for key, v in V.items()},
        N=N,
        blocks=tuple(mb.index for mb in unstable),
        dims={mb.index: mb.dim for mb in jordan.miniblocks()},
        source=fingerprint(system, outputs),
        structural_zero_tol=structural_zero_tol,
    )


def numerical_rank(M, rank_tol: float = RANK_TOL) -> int:
    """Rank with singular values below ``rank_tol * s_max`` treated as zero."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


@dataclass(frozen=True)
class AssumptionCheck:
    ok: bool
    witness: tuple | None = None
    detail: str = ""
    every_block_observed: bool | None = None

    def __bool__(self):
        return self.ok


def check_assumption1(system: SystemModel, outputs: AgentOutputs,
                      cls: MiniblockClassification,
                      rank_tol: float = RANK_TOL) -> AssumptionCheck:
    """Joint detectability of ``(A, col(C_1..C_N))`` by the Jordan PBH test.

    At an unstable eigenvalue ``lam_ell`` the PBH matrix has full column rank
    iff the stacked-output columns sitting at the first state of every
    miniblock of ``lam_ell`` are linearly independent.
    """
    jordan = system.jordan
    C = np.vstack(outputs.C)
    observed = all(cls.V[(b, 3)] for b in cls.blocks)
    for ell in range(1, jordan.r_u + 1):
        heads = [mb.offset for mb in jordan.miniblocks() if mb.index.ell == ell]
        rank = numerical_rank(C[:, heads], rank_tol)
        if rank < len(heads):
            return AssumptionCheck(
                False, (ell,),
                f"eigenvalue {ell} (lambda={jordan.lam(ell)}): PBH rank {rank} < {len(heads)}",
                observed)
    return AssumptionCheck(True, None, "", observed)


def check_assumption2(outputs: AgentOutputs, cls: MiniblockClassification,
                      rank_tol: float = RANK_TOL) -> AssumptionCheck:
    """Independence of the first observed output columns, per agent and eigenvalue."""
    by_ell: dict[int, list[BlockIndex]] = {}
    for b in cls.blocks:
        by_ell.setdefault(b.ell, []).append(b)
    offsets = _block_offsets(cls)
    for i in range(1, cls.N + 1):
        Ci = outputs[i]
        for ell, blocks in by_ell.items():
            cols = [offsets[b] + cls.t[(i, b)] - 1 for b in blocks if (i, b) in cls.t]
            if not cols:
                continue
            rank = numerical_rank(Ci[:, cols], rank_tol)
            if rank < len(cols):
                return AssumptionCheck(
                    False, (i, ell),
                    f"agent {i}, eigenvalue {ell}: first observed columns have rank "
                    f"{rank} < {len(cols)}")
    return AssumptionCheck(True)


def _block_offsets(cls: MiniblockClassification) -> dict:
    # dims is insertion-ordered by state position, so offsets follow from it
    offsets, pos = {}, 0
    for b, d in cls.dims.items():
        offsets[b] = pos
        pos += d
    return offsets
