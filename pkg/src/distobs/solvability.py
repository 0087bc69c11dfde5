"""Spectral feasibility of the consensus gains, and the Schur oracle behind it.

For every unstable miniblock ``(ell, h)`` that some agent cannot fully observe,
a real coupling gain ``k`` must make

    |1 - k mu| < 1 / |lam_ell|

for every ``mu`` in a spectrum that depends on the observer family:

* non-augmented observers (strategy 1): the union of the spectra of the
  nested principal submatrices ``L_sub[rows_r, rows_r]``, one per entry of
  the miniblock, where ``rows_r`` are the agents that cannot detect entry r;
* augmented observers (strategy 2): the spectrum of ``L_sub`` alone.

``L_sub`` is the graph Laplacian with the rows and columns of the agents that
fully observe the miniblock removed.  The dense Kronecker-structured matrices
whose Schur stability the conditions encode are assembled separately so the
two routes can be checked against each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .classify import MiniblockClassification
from .model import AgentOutputs, BlockIndex, SensorNetwork, SystemModel, laplacian

ZERO_EIG_TOL = 1e-10
SCHUR_TOL = 1e-9
SPANNING_FOREST_MSG = "zero Laplacian eigenvalue: no spanning forest rooted in V3"


# --------------------------------------------------------------------------
# selection structure

@dataclass(frozen=True)
class SelectionStack:
    """Which leading entries of one miniblock each undetecting agent must estimate.

    ``agents`` are the labels in ``V_1 | V_2`` (ascending) and ``rows[p]`` is
    how many leading entries agent ``agents[p]`` cannot detect (the full
    dimension for ``V_1``, ``t - 1`` for ``V_2``).
    """

    agents: tuple[int, ...]
    rows: tuple[int, ...]
    d: int

    def __post_init__(self):
        if len(self.agents) != len(self.rows):
            raise ValueError("agents and rows must have equal length")
        if any(not 1 <= n <= self.d for n in self.rows):
            raise ValueError(f"row counts must lie in [1, {self.d}], got {self.rows}")

    @classmethod
    def from_classification(cls, cl: MiniblockClassification, block: BlockIndex):
        agents = cl.undetected(block)
        return cls(agents, tuple(cl.rows_needed(i, block) for i in agents), cl.dims[block])

    @property
    def c(self) -> int:
        return len(self.agents)

    @property
    def r(self) -> tuple[int, ...]:
        """``r[q]`` = number of agents whose selection includes entry ``q + 1``."""
        return tuple(sum(1 for n in self.rows if n > q) for q in range(self.d))

    def tilde(self, q: int) -> np.ndarray:
        """Stack positions selected by the nested selector for entry ``q`` (1-based)."""
        return np.array([p for p, n in enumerate(self.rows) if n >= q], dtype=int)

    def tilde_matrix(self, q: int) -> np.ndarray:
        pos = self.tilde(q)
        S = np.zeros((pos.size, self.c))
        S[np.arange(pos.size), pos] = 1.0
        return S

    def state_rows(self) -> np.ndarray:
        """Rows of ``I_c (x) I_d`` kept by the block selector ``S = diag(S_i)``."""
        return np.array([p * self.d + q for p, n in enumerate(self.rows) for q in range(n)],
                        dtype=int)

    @property
    def S(self) -> np.ndarray:
        keep = self.state_rows()
        return np.eye(self.c * self.d)[keep]


# --------------------------------------------------------------------------
# spectra

def laplacian_submatrix(L, V3) -> tuple[np.ndarray, tuple[int, ...]]:
    """Principal submatrix of ``L`` on the agents outside ``V3`` (labels, 1-based)."""
    L = np.asarray(L, dtype=float)
    keep = tuple(i for i in range(1, L.shape[0] + 1) if i not in set(V3))
    idx = np.array(keep, dtype=int) - 1
    return L[np.ix_(idx, idx)], keep


def _eigvals(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(0, dtype=complex)
    return np.linalg.eigvals(M).astype(complex)


def strategy1_spectrum(L_sub, stack: SelectionStack) -> np.ndarray:
    """Multiset union of ``sigma(L_sub[T_q, T_q])`` over the entries ``q`` of the miniblock."""
    L_sub = np.asarray(L_sub, dtype=float)
    if L_sub.shape[0] != stack.c:
        raise ValueError(f"L_sub is {L_sub.shape}, stack has {stack.c} agents")
    parts = []
    for q in range(1, stack.d + 1):
        pos = stack.tilde(q)
        if pos.size:
            parts.append(_eigvals(L_sub[np.ix_(pos, pos)]))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=complex)


def distinct_values(values, tol: float = 1e-7) -> np.ndarray:
    """Collapse a multiset of eigenvalues into distinct values (within ``tol``)."""
    out: list[complex] = []
    for v in values:
        if not any(abs(v - w) <= tol * (1 + abs(w)) for w in out):
            out.append(complex(v))
    return np.array(out, dtype=complex)


def match_multisets(a, b, tol: float = 1e-7) -> tuple[bool, float]:
    """Greedy nearest pairing of two eigenvalue multisets.

    Returns ``(ok, worst)`` where ``worst`` is the largest paired distance and
    ``ok`` requires equal sizes and every distance ``<= tol * (1 + |value|)``.
    """
    a = list(np.asarray(a, dtype=complex))
    b = list(np.asarray(b, dtype=complex))
    if len(a) != len(b):
        return False, math.inf
    worst, ok = 0.0, True
    for x in sorted(a, key=lambda z: (z.real, z.imag)):
        j = min(range(len(b)), key=lambda m: abs(x - b[m]))
        dist = abs(x - b[j])
        worst = max(worst, dist)
        if dist > tol * (1 + abs(x)):
            ok = False
        b.pop(j)
    return ok, worst


# --------------------------------------------------------------------------
# gain intervals

@dataclass(frozen=True)
class GainInterval:
    """Open interval ``(lo, hi)`` of admissible coupling gains."""

    lo: float
    hi: float
    note: str = ""

    @property
    def empty(self) -> bool:
        return not self.lo < self.hi

    def __contains__(self, k) -> bool:
        return self.lo < k < self.hi

    def contains(self, k: float, margin: float = 0.0) -> bool:
        return self.lo + margin < k < self.hi - margin

    def near_boundary(self, k: float, margin: float) -> bool:
        return (not self.empty) and (abs(k - self.lo) <= margin or abs(k - self.hi) <= margin)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def to_json(self) -> dict:
        return {"lo": _jnum(self.lo), "hi": _jnum(self.hi), "empty": self.empty,
                **({"note": self.note} if self.note else {})}

    @classmethod
    def nothing(cls, note: str = "") -> "GainInterval":
        return cls(math.inf, -math.inf, note)

    @classmethod
    def everything(cls) -> "GainInterval":
        return cls(-math.inf, math.inf)


def _jnum(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def gain_interval_for(mu: complex, lam: float) -> GainInterval:
    """Real ``k`` with ``|1 - k mu| < 1/|lam|``.

    Squaring gives ``|mu|^2 k^2 - 2 Re(mu) k + c < 0`` with ``c = 1 - 1/lam^2``;
    the roots are computed in the cancellation-free pairing.
    """
    mu = complex(mu)
    c = 1.0 - 1.0 / (lam * lam)
    m2 = mu.real * mu.real + mu.imag * mu.imag
    re = mu.real
    if m2 == 0.0:
        return GainInterval.nothing(SPANNING_FOREST_MSG)
    disc = re * re - m2 * c
    if disc <= 0.0:
        return GainInterval.nothing()
    sq = math.sqrt(disc)
    if re > 0:
        hi = (re + sq) / m2
        lo = c / (m2 * hi)
    else:
        lo = (re - sq) / m2
        hi = c / (m2 * lo)
    return GainInterval(lo, hi)


def feasible_gain(spectrum, lam: float, zero_tol: float = ZERO_EIG_TOL) -> GainInterval:
    """Intersection over ``mu`` of the admissible gain intervals."""
    if abs(lam) < 1:
        raise ValueError("feasible_gain expects an eigenvalue with |lam| >= 1")
    spectrum = np.asarray(spectrum, dtype=complex)
    if spectrum.size == 0:
        return GainInterval.everything()
    scale = max(1.0, float(np.max(np.abs(spectrum))))
    if np.any(np.abs(spectrum) <= zero_tol * scale):
        return GainInterval.nothing(SPANNING_FOREST_MSG)
    lo, hi = -math.inf, math.inf
    for mu in spectrum:
        iv = gain_interval_for(mu, lam)
        lo, hi = max(lo, iv.lo), min(hi, iv.hi)
    if not lo < hi:
        return GainInterval.nothing("no gain satisfies every eigenvalue constraint")
    return GainInterval(lo, hi)


@dataclass(frozen=True)
class UndirectedFeasibility:
    ratio_ok: bool
    interval: GainInterval
    mu_min: float
    mu_max: float


def undirected_feasibility(L_sub, lam: float,
                           zero_tol: float = ZERO_EIG_TOL) -> UndirectedFeasibility:
    """Closed-form gain interval for a symmetric ``L_sub``.

    With ``0 < mu_min <= mu_max`` the admissible set is
    ``((1 - 1/|lam|)/mu_min, (1 + 1/|lam|)/mu_max)``, nonempty iff
    ``mu_max/mu_min < (|lam| + 1)/(|lam| - 1)``.
    """
    L_sub = np.asarray(L_sub, dtype=float)
    if L_sub.size and np.max(np.abs(L_sub - L_sub.T)) > 1e-12:
        raise ValueError("undirected_feasibility needs a symmetric matrix")
    if L_sub.size == 0:
        return UndirectedFeasibility(True, GainInterval.everything(), math.nan, math.nan)
    mus = np.linalg.eigvalsh(L_sub)
    mu_m, mu_M = float(mus[0]), float(mus[-1])
    a = abs(lam)
    if mu_m <= zero_tol * max(1.0, mu_M):
        return UndirectedFeasibility(False, GainInterval.nothing(SPANNING_FOREST_MSG), mu_m, mu_M)
    bound = math.inf if a == 1 else (a + 1) / (a - 1)
    ratio_ok = mu_M / mu_m < bound
    lo, hi = (1 - 1 / a) / mu_m, (1 + 1 / a) / mu_M
    iv = GainInterval(lo, hi) if lo < hi else GainInterval(lo, hi, "empty: ratio condition fails")
    return UndirectedFeasibility(ratio_ok, iv, mu_m, mu_M)


# --------------------------------------------------------------------------
# oracle side

def jordan_block(lam: float, d: int) -> np.ndarray:
    return lam * np.eye(d) + np.eye(d, k=1)


def eigvals_hp(M, dps: int = 40) -> np.ndarray:
    """Eigenvalues at extended precision; accurate on defective clusters."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(0, dtype=complex)
    if M.shape == (1, 1):
        return M.astype(complex).ravel()
    with mpmath.workdps(dps):
        ev = mpmath.eig(mpmath.matrix(M.tolist()), left=False, right=False)
        return np.array([complex(v) for v in ev], dtype=complex)


def schur_radius(M, refine_band: float = 1e-2, dps: int = 50) -> float:
    """Spectral radius; the matrix is Schur iff the result is ``< 1``.

    A dense LAPACK solve is used.  When the result falls within
    ``refine_band`` of 1 it is recomputed at extended precision, since the
    Jordan-structured matrices handled here have defective eigenvalues whose
    double-precision error scales like ``eps ** (1 / chain length)``.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    rho = float(np.max(np.abs(np.linalg.eigvals(M))))
    if refine_band and abs(rho - 1.0) < refine_band:
        rho = float(np.max(np.abs(eigvals_hp(M, dps))))
    return rho


def is_schur(M, tol: float = SCHUR_TOL) -> bool:
    """``schur_radius(M) < 1`` with radii within ``tol`` of 1 read as not Schur.

    Eigenvalues exactly on the unit circle (a zero Laplacian eigenvalue with
    ``|lam| = 1``) come back from any finite-precision solver as ``1 +- eps``;
    the band keeps that structural case on the unstable side.
    """
    return schur_radius(M) < 1.0 - tol


def assemble_error_matrix(strategy: int, L_sub, stack: SelectionStack, lam: float,
                          k: float) -> np.ndarray:
    """Per-miniblock estimation-error matrix.

    strategy 1: ``S ((I - k L_sub) (x) A) S^T``;  strategy 2: ``(I - k L_sub) (x) A``.
    """
    L_sub = np.asarray(L_sub, dtype=float)
    c = L_sub.shape[0]
    big = np.kron(np.eye(c) - k * L_sub, jordan_block(lam, stack.d))
    if strategy == 2:
        return big
    if strategy != 1:
        raise ValueError(f"strategy must be 1 or 2, got {strategy!r}")
    keep = stack.state_rows()
    return big[np.ix_(keep, keep)]


def split_spectrum(stack: SelectionStack, L_sub, lam: float, k: float) -> np.ndarray:
    """``union_q sigma(lam * T_q (I - k L_sub) T_q^T)`` as a multiset."""
    Gamma = np.eye(stack.c) - k * np.asarray(L_sub, dtype=float)
    parts = []
    for q in range(1, stack.d + 1):
        pos = stack.tilde(q)
        if pos.size:
            parts.append(_eigvals(lam * Gamma[np.ix_(pos, pos)]))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=complex)


def eig_match_tol(M) -> float:
    M = np.asarray(M)
    return 1e-7 * (1.0 + (np.max(np.abs(M)) if M.size else 0.0))


def spectrum_split_check(stack: SelectionStack, L_sub, lam: float, k: float,
                         tol: float | None = None) -> bool:
    """Eigenvalues of the strategy-1 error matrix equal the union of the diagonal-block spectra."""
    M = assemble_error_matrix(1, L_sub, stack, lam, k)
    tol = eig_match_tol(M) if tol is None else tol
    rhs = split_spectrum(stack, L_sub, lam, k)
    ok, _ = match_multisets(_eigvals(M), rhs, tol)
    if not ok:
        # double precision cannot resolve defective clusters to tol
        ok, _ = match_multisets(eigvals_hp(M), rhs, tol)
    return ok


@dataclass(frozen=True)
class BlockInstance:
    """One miniblock's consensus problem: graph, undetecting agents, eigenvalue."""

    L: np.ndarray           # full Laplacian
    V3: tuple[int, ...]
    stack: SelectionStack
    lam: float
    directed: bool

    @property
    def L_sub(self) -> np.ndarray:
        return laplacian_submatrix(self.L, self.V3)[0]

    def spectrum(self, strategy: int) -> np.ndarray:
        if strategy == 1:
            return strategy1_spectrum(self.L_sub, self.stack)
        return _eigvals(self.L_sub)

    def interval(self, strategy: int) -> GainInterval:
        return feasible_gain(self.spectrum(strategy), self.lam)


def random_block_instance(rng: np.random.Generator, max_agents: int = 5, max_d: int = 3,
                          directed: bool = True, weights=(0.1, 2.0),
                          p_edge: float = 0.5) -> BlockInstance:
    """Random graph, observability pattern and eigenvalue for one miniblock."""
    while True:
        N = int(rng.integers(1, max_agents + 1))
        d = int(rng.integers(1, max_d + 1))
        W = np.where(rng.random((N, N)) < p_edge, rng.uniform(*weights, (N, N)), 0.0)
        np.fill_diagonal(W, 0.0)
        if not directed:
            W = np.triu(W, 1)
            W = W + W.T
        in_v3 = rng.random(N) < 0.4
        if rng.random() < 0.1:
            in_v3[:] = False
        rest = [i + 1 for i in range(N) if not in_v3[i]]
        if not rest:
            continue
        rows = tuple(int(rng.integers(1, d + 1)) for _ in rest)
        mag = 1.0 if rng.random() < 0.3 else float(rng.uniform(1.0, 2.0))
        lam = mag if rng.random() < 0.7 else -mag
        L = np.diag(W.sum(axis=1)) - W
        V3 = tuple(i + 1 for i in range(N) if in_v3[i])
        return BlockInstance(L, V3, SelectionStack(tuple(rest), rows, d), lam, directed)


def sample_gain(rng: np.random.Generator, interval: GainInterval, lo: float = -0.5,
                hi: float = 2.5, margin: float = 1e-3, tries: int = 100) -> float | None:
    """Uniform ``k`` in ``[lo, hi]`` at least ``margin`` away from the interval ends."""
    for _ in range(tries):
        k = float(rng.uniform(lo, hi))
        if not interval.near_boundary(k, margin):
            return k
    return None


@dataclass(frozen=True)
class OracleCheck:
    strategy: int
    k: float
    spectral: bool
    oracle: bool
    rho: float

    @property
    def agree(self) -> bool:
        return self.spectral == self.oracle


def oracle_check(inst: BlockInstance, strategy: int, k: float) -> OracleCheck:
    """Spectral verdict against the Schur test of the assembled error matrix."""
    M = assemble_error_matrix(strategy, inst.L_sub, inst.stack, inst.lam, k)
    rho = schur_radius(M)
    return OracleCheck(strategy, k, k in inst.interval(strategy), is_schur(M), rho)


# --------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class BlockReport:
    block: BlockIndex
    lam: float
    d: int
    V: tuple                       # (V1, V2, V3) as sorted tuples
    stack: SelectionStack | None
    L_sub: np.ndarray
    sigma_L: np.ndarray            # strategy-2 spectrum
    sigma_s1: np.ndarray           # strategy-1 spectrum (multiset)
    interval1: GainInterval
    interval2: GainInterval
    undirected: UndirectedFeasibility | None = None
    unreachable: tuple = ()
    no_gain_needed: bool = False

    @property
    def feasible1(self) -> bool:
        return self.no_gain_needed or not self.interval1.empty

    @property
    def feasible2(self) -> bool:
        return self.no_gain_needed or not self.interval2.empty

    def interval(self, strategy: int) -> GainInterval:
        return self.interval1 if strategy == 1 else self.interval2

    def diagnostics(self) -> list[str]:
        out = []
        if self.unreachable:
            out.append(f"agents {list(self.unreachable)} are not reachable from "
                       f"V3={list(self.V[2])} (no directed spanning forest)")
        for name, iv in (("strategy1", self.interval1), ("strategy2", self.interval2)):
            if iv.note and iv.empty and not self.no_gain_needed:
                out.append(f"{name}: {iv.note}")
        return out

    def to_json(self) -> dict:
        out = {
            "block": [self.block.ell, self.block.h],
            "lambda": self.lam,
            "dim": self.d,
            "V1": list(self.V[0]), "V2": list(self.V[1]), "V3": list(self.V[2]),
            "no_gain_needed": self.no_gain_needed,
        }
        if self.no_gain_needed:
            return out
        out.update({
            "rows": dict(zip(map(str, self.stack.agents), self.stack.rows)),
            "laplacian_sub": self.L_sub.tolist(),
            "spectrum_strategy2": _spec_json(self.sigma_L),
            "spectrum_strategy1": _spec_json(self.sigma_s1),
            "interval_strategy1": self.interval1.to_json(),
            "interval_strategy2": self.interval2.to_json(),
            "feasible_strategy1": self.feasible1,
            "feasible_strategy2": self.feasible2,
            "diagnostics": self.diagnostics(),
        })
        if self.undirected is not None:
            u = self.undirected
            out["undirected"] = {"mu_min": u.mu_min, "mu_max": u.mu_max,
                                 "ratio_ok": u.ratio_ok, "interval": u.interval.to_json()}
        return out


def _spec_json(values) -> list:
    vals = sorted(np.asarray(values, dtype=complex), key=lambda z: (round(z.real, 12), z.imag))
    return [{"re": float(v.real), "im": float(v.imag)} for v in vals]


@dataclass(frozen=True)
class SolvabilityReport:
    blocks: tuple[BlockReport, ...]
    directed: bool
    notes: tuple = field(default=())

    @property
    def strategy1_feasible(self) -> bool:
        return all(b.feasible1 for b in self.blocks)

    @property
    def strategy2_feasible(self) -> bool:
        return all(b.feasible2 for b in self.blocks)

    def feasible(self, strategy: int) -> bool:
        return self.strategy1_feasible if strategy == 1 else self.strategy2_feasible

    def __getitem__(self, block) -> BlockReport:
        for b in self.blocks:
            if b.block == tuple(block):
                return b
        raise KeyError(block)

    def gain_blocks(self) -> list[BlockReport]:
        return [b for b in self.blocks if not b.no_gain_needed]

    def resolve_strategy(self, requested="auto") -> int | None:
        """Non-augmented observers when possible, else augmented, else ``None``."""
        if requested in (1, 2, "1", "2"):
            return int(requested)
        if self.strategy1_feasible:
            return 1
        if self.strategy2_feasible:
            return 2
        return None

    def to_json(self) -> dict:
        return {
            "directed": self.directed,
            "strategy1_feasible": self.strategy1_feasible,
            "strategy2_feasible": self.strategy2_feasible,
            "blocks": [b.to_json() for b in self.blocks],
            "notes": list(self.notes),
        }


def unreachable_from(adjacency, sources, targets) -> tuple[int, ...]:
    """Labels in ``targets`` with no directed path from any label in ``sources``.

    Edge ``j -> i`` exists when ``a_ij > 0`` (agent ``i`` listens to ``j``).
    """
    W = np.asarray(adjacency)
    seen = set(sources)
    frontier = list(sources)
    while frontier:
        j = frontier.pop()
        for i in np.flatnonzero(W[:, j - 1] > 0) + 1:
            if int(i) not in seen:
                seen.add(int(i))
                frontier.append(int(i))
    return tuple(i for i in targets if i not in seen)


def block_report(system: SystemModel, net: SensorNetwork, cls: MiniblockClassification,
                 block: BlockIndex, L=None) -> BlockReport:
    L = laplacian(net) if L is None else L
    lam = system.jordan.lam(block.ell)
    V = tuple(tuple(sorted(cls.V[(block, k)])) for k in (1, 2, 3))
    d = cls.dims[block]
    if not V[0] and not V[1]:
        empty = np.zeros(0, dtype=complex)
        return BlockReport(block, lam, d, V, None, np.zeros((0, 0)), empty, empty,
                           GainInterval.everything(), GainInterval.everything(),
                           no_gain_needed=True)
    L_sub, keep = laplacian_submatrix(L, V[2])
    stack = SelectionStack.from_classification(cls, block)
    assert keep == stack.agents
    sigma_L = _eigvals(L_sub)
    sigma_1 = strategy1_spectrum(L_sub, stack)
    und = None
    if not net.directed:
        und = undirected_feasibility(L_sub, lam)
    return BlockReport(
        block=block, lam=lam, d=d, V=V, stack=stack, L_sub=L_sub,
        sigma_L=sigma_L, sigma_s1=sigma_1,
        interval1=feasible_gain(sigma_1, lam), interval2=feasible_gain(sigma_L, lam),
        undirected=und,
        unreachable=unreachable_from(net.adjacency, V[2], stack.agents),
    )


def build_report(system: SystemModel, outputs: AgentOutputs, net: SensorNetwork,
                 cls: MiniblockClassification, check_assumptions: bool = True
                 ) -> SolvabilityReport:
    from .classify import check_assumption1, check_assumption2

    if check_assumptions:
        a1 = check_assumption1(system, outputs, cls)
        if not a1:
            raise AssumptionError(f"joint detectability fails: {a1.detail}")
        a2 = check_assumption2(outputs, cls)
        if not a2:
            raise AssumptionError(f"first observed columns are dependent: {a2.detail}")
    L = laplacian(net)
    blocks = tuple(block_report(system, net, cls, b, L) for b in cls.blocks)
    return SolvabilityReport(blocks, net.directed)


class AssumptionError(ValueError):
    pass
