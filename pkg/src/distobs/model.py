"""Plant, sensor outputs and communication graph.

Indexing convention: eigenvalue groups, miniblocks and agents carry the
1-based labels used throughout the theory (``ell``, ``h``, ``i``); array
positions are 0-based.  Every map exposed by this package (classification
sets, gains, reports) is keyed by labels, never by positions.
"""
from __future__ import annotations

from dataclasses import dataclass
from numbers import Real
from typing import Iterator, NamedTuple

import numpy as np


class ModelError(ValueError):
    """Raised when an operation receives inputs that fail validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class BlockIndex(NamedTuple):
    """Label ``(ell, h)`` of the ``h``-th miniblock of the ``ell``-th eigenvalue."""

    ell: int
    h: int

    def __str__(self):
        return f"({self.ell},{self.h})"


@dataclass(frozen=True)
class EigenBlock:
    lam: float
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))


@dataclass(frozen=True)
class Miniblock:
    """Placement of one Jordan miniblock inside the state vector."""

    index: BlockIndex
    lam: float
    dim: int
    offset: int

    @property
    def stop(self) -> int:
        return self.offset + self.dim

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.offset, self.stop)

    @property
    def unstable(self) -> bool:
        return abs(self.lam) >= 1


@dataclass(frozen=True)
class JordanSpec:
    eigens: tuple[EigenBlock, ...]

    def __post_init__(self):
        object.__setattr__(self, "eigens", tuple(self.eigens))

    @classmethod
    def from_pairs(cls, pairs) -> "JordanSpec":
        """Build from ``[(lam, [d1, d2, ...]), ...]``."""
        return cls(tuple(EigenBlock(lam, tuple(dims)) for lam, dims in pairs))

    def violations(self) -> list[str]:
        out = []
        if not self.eigens:
            out.append("jordan: no eigenvalues")
        lams = []
        for ell, eb in enumerate(self.eigens, start=1):
            if isinstance(eb.lam, complex) or not isinstance(eb.lam, Real):
                out.append(f"jordan: eigenvalue {ell} is not a real scalar")
                continue
            if not np.isfinite(eb.lam):
                out.append(f"jordan: eigenvalue {ell} is not finite")
            lams.append(float(eb.lam))
            if not eb.dims:
                out.append(f"jordan: eigenvalue {ell} has no miniblocks")
            for h, d in enumerate(eb.dims, start=1):
                if not isinstance(d, (int, np.integer)) or isinstance(d, bool) or d < 1:
                    out.append(f"jordan: miniblock ({ell},{h}) has invalid dimension {d!r}")
        if len(set(lams)) != len(lams):
            out.append("jordan: eigenvalues are not pairwise distinct")
        unstable = [abs(lam) >= 1 for lam in lams]
        if any(later and not earlier for earlier, later in zip(unstable, unstable[1:])):
            out.append("jordan: eigenvalues with |lambda| >= 1 must precede the stable ones")
        return out

    @property
    def n(self) -> int:
        return sum(sum(eb.dims) for eb in self.eigens)

    @property
    def r(self) -> int:
        return len(self.eigens)

    @property
    def r_u(self) -> int:
        return sum(1 for eb in self.eigens if abs(eb.lam) >= 1)

    def a(self, ell: int) -> int:
        return sum(self.eigens[ell - 1].dims)

    def g(self, ell: int) -> int:
        return len(self.eigens[ell - 1].dims)

    def lam(self, ell: int) -> float:
        return float(self.eigens[ell - 1].lam)

    def miniblocks(self) -> Iterator[Miniblock]:
        offset = 0
        for ell, eb in enumerate(self.eigens, start=1):
            for h, d in enumerate(eb.dims, start=1):
                yield Miniblock(BlockIndex(ell, h), float(eb.lam), int(d), offset)
                offset += d

    def unstable_miniblocks(self) -> list[Miniblock]:
        return [mb for mb in self.miniblocks() if mb.unstable]

    def miniblock(self, index: BlockIndex) -> Miniblock:
        for mb in self.miniblocks():
            if mb.index == tuple(index):
                return mb
        raise KeyError(f"no miniblock {tuple(index)}")

    def stable_states(self) -> np.ndarray:
        """State positions belonging to eigenvalues with modulus < 1, in order."""
        return np.array([k for mb in self.miniblocks() if not mb.unstable
                         for k in mb.states], dtype=int)


@dataclass(frozen=True)
class SystemModel:
    jordan: JordanSpec
    B: np.ndarray = None

    def __post_init__(self):
        n = self.jordan.n
        B = np.zeros((n, 0)) if self.B is None else np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.jordan.n

    @property
    def m(self) -> int:
        return self.B.shape[1] if self.B.ndim == 2 else 0

    @property
    def A(self) -> np.ndarray:
        return assemble_A(self.jordan)

    def violations(self) -> list[str]:
        out = self.jordan.violations()
        if out:
            return out
        if self.B.ndim != 2 or self.B.shape[0] != self.n:
            out.append(f"system: B must have {self.n} rows, got shape {self.B.shape}")
        elif not np.all(np.isfinite(self.B)):
            out.append("system: B has non-finite entries")
        return out


@dataclass(frozen=True)
class AgentOutputs:
    C: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = []
        for Ci in self.C:
            Ci = np.array(Ci, dtype=float)
            if Ci.ndim == 1:
                Ci = Ci.reshape(1, -1)
            Ci.setflags(write=False)
            mats.append(Ci)
        object.__setattr__(self, "C", tuple(mats))

    @property
    def N(self) -> int:
        return len(self.C)

    @property
    def p(self) -> list[int]:
        return [Ci.shape[0] for Ci in self.C]

    def __getitem__(self, i: int) -> np.ndarray:
        """Output matrix of agent ``i`` (1-based label)."""
        return self.C[i - 1]

    def block(self, i: int, mb: Miniblock) -> np.ndarray:
        return self.C[i - 1][:, mb.offset:mb.stop]

    def violations(self, n: int | None = None) -> list[str]:
        out = []
        for i, Ci in enumerate(self.C, start=1):
            if Ci.ndim != 2:
                out.append(f"agents[{i}]: C must be a matrix")
                continue
            if n is not None and Ci.shape[1] != n:
                out.append(f"agents[{i}]: output width mismatch ({Ci.shape[1]} columns, n={n})")
            if not np.all(np.isfinite(Ci)):
                out.append(f"agents[{i}]: C has non-finite entries")
        return out


@dataclass(frozen=True)
class SensorNetwork:
    adjacency: np.ndarray
    directed: bool = True

    def __post_init__(self):
        W = np.array(self.adjacency, dtype=float)
        W.setflags(write=False)
        object.__setattr__(self, "adjacency", W)

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> list[int]:
        """In-neighbours of agent ``i``: labels ``j`` with ``a_ij > 0``."""
        row = self.adjacency[i - 1]
        return [j + 1 for j in np.flatnonzero(row > 0)]

    def violations(self) -> list[str]:
        W = self.adjacency
        out = []
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            return [f"network: adjacency must be square, got shape {W.shape}"]
        if not np.all(np.isfinite(W)):
            return ["network: adjacency has non-finite entries"]
        if np.any(W < 0):
            out.append("network: adjacency has negative weights")
        for i in np.flatnonzero(np.diag(W) != 0):
            out.append(f"network: nonzero diagonal at agent {i + 1}")
        if not self.directed and not np.array_equal(W, W.T):
            out.append("network: undirected graph requires a symmetric adjacency")
        return out


def assemble_A(jordan: JordanSpec) -> np.ndarray:
    """Block-diagonal Jordan matrix; off-block entries are exact zeros."""
    n = jordan.n
    A = np.zeros((n, n))
    for mb in jordan.miniblocks():
        k = mb.states
        A[k, k] = mb.lam
        A[k[:-1], k[1:]] = 1.0
    return A


def laplacian(net: SensorNetwork) -> np.ndarray:
    W = net.adjacency
    return np.diag(W.sum(axis=1)) - W


def validate(system: SystemModel, outputs: AgentOutputs, net: SensorNetwork) -> list[str]:
    """All invariant and cross-consistency violations; empty iff the instance is valid."""
    out = system.violations()
    n = system.n if not system.jordan.violations() else None
    out += outputs.violations(n)
    out += net.violations()
    if outputs.N == 0:
        out.append("agents: at least one agent is required")
    if net.adjacency.ndim == 2 and net.N != outputs.N:
        out.append(f"network: {net.N} nodes but {outputs.N} agents")
    return out


def ensure_valid(system, outputs, net=None) -> None:
    if net is None:
        found = system.violations()
        if not found:
            found = outputs.violations(system.n)
    else:
        found = validate(system, outputs, net)
    if found:
        raise ModelError(found)
