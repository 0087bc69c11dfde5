"""Synchronous simulation of the plant and every agent's observer."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .design import ObserverBank
from .model import SystemModel

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, agent: int, t: int, value: float, trace=None):
        self.agent, self.t, self.value, self.trace = agent, t, value, trace
        super().__init__(f"estimation error of agent {agent} reached {value:.3g} at t={t}")


@dataclass(frozen=True)
class InputSignal:
    """Plant input ``u(t)``.

    kind ``"zero"``; ``"step"`` with ``value`` (m,); ``"sinusoid"`` with
    per-channel ``amplitude``, ``frequency`` (cycles per step) and ``phase``;
    ``"samples"`` with an explicit ``m x T`` array.
    """

    kind: str = "zero"
    value: tuple = ()
    amplitude: tuple = ()
    frequency: tuple = ()
    phase: tuple = ()
    samples: np.ndarray | None = None

    KINDS = ("zero", "step", "sinusoid", "samples")

    def check(self, m: int, T: int) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown input kind {self.kind!r}")
        if self.kind == "step" and len(self.value) != m:
            raise ValueError(f"step value has {len(self.value)} channels, m={m}")
        if self.kind == "sinusoid":
            for name in ("amplitude", "frequency", "phase"):
                if len(getattr(self, name)) != m:
                    raise ValueError(f"sinusoid {name} has {len(getattr(self, name))} channels, m={m}")
        if self.kind == "samples":
            S = np.asarray(self.samples, dtype=float)
            if S.ndim != 2 or S.shape[0] != m or S.shape[1] < T:
                raise ValueError(f"samples must be {m} x >={T}, got {S.shape}")

    def at(self, t: int, m: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(m)
        if self.kind == "step":
            return np.asarray(self.value, dtype=float)
        if self.kind == "sinusoid":
            a, f, p = (np.asarray(v, dtype=float) for v in
                       (self.amplitude, self.frequency, self.phase))
            return a * np.sin(2 * np.pi * f * t + p)
        return np.asarray(self.samples, dtype=float)[:, t]

    @classmethod
    def from_json(cls, doc) -> "InputSignal":
        doc = dict(doc or {"kind": "zero"})
        kind = doc.pop("kind", "zero")
        if "samples" in doc:
            doc["samples"] = np.asarray(doc["samples"], dtype=float)
        for key in ("value", "amplitude", "frequency", "phase"):
            if key in doc:
                doc[key] = tuple(float(v) for v in doc[key])
        return cls(kind=kind, **doc)


@dataclass
class SimulationTrace:
    T: int
    x: np.ndarray                  # n x (T+1)
    xhat: np.ndarray               # N x n x (T+1)
    err_norm: np.ndarray           # N x (T+1)
    states: list | None = None     # per agent: order_i x (T+1) internal observer state
    strategy: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.err_norm.shape[0]

    def error(self, i: int) -> np.ndarray:
        return self.x - self.xhat[i - 1]


def unit_sphere(n: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


def _initial_estimates(xhat0, N, n, x0):
    if xhat0 is None or (isinstance(xhat0, str) and xhat0 == "zero"):
        return [np.zeros(n) for _ in range(N)]
    if isinstance(xhat0, str) and xhat0 == "exact":
        return [np.array(x0, dtype=float) for _ in range(N)]
    arr = np.asarray(xhat0, dtype=float)
    if arr.shape == (n,):
        return [arr.copy() for _ in range(N)]
    if arr.shape == (N, n):
        return [row.copy() for row in arr]
    raise ValueError(f"xhat0 must be 'zero', 'exact', shape ({n},) or ({N}, {n})")


def simulate(system: SystemModel, outputs, bank: ObserverBank, x0, T: int,
             inputs: InputSignal | None = None, xhat0="zero",
             keep_states: bool = False, guard: float = DIVERGENCE_LIMIT) -> SimulationTrace:
    """Run the plant and the observer bank for ``T`` steps.

    All agents read their neighbours' estimates from time ``t`` before any of
    them advances.  Raises ``DivergenceError`` (with the partial trace
    attached) once an error norm exceeds ``guard``.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    inputs = inputs or InputSignal()
    n, m, N = system.n, system.m, bank.N
    inputs.check(m, T)
    A, B = system.A, system.B
    W = bank.adjacency
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},)")
    w = [np.concatenate([xh[a.u_index], xh[a.d_index]])
         for a, xh in zip(bank.agents, _initial_estimates(xhat0, N, n, x))]

    X = np.empty((n, T + 1))
    XH = np.empty((N, n, T + 1))
    E = np.empty((N, T + 1))
    S = [np.empty((a.order, T + 1)) for a in bank.agents] if keep_states else None

    def record(t):
        X[:, t] = x
        for p, a in enumerate(bank.agents):
            XH[p, :, t] = w[p][a.rec]
            E[p, t] = np.linalg.norm(x - XH[p, :, t])
            if S is not None:
                S[p][:, t] = w[p]

    def trace(upto):
        return SimulationTrace(upto, X[:, :upto + 1], XH[:, :, :upto + 1], E[:, :upto + 1],
                               None if S is None else [s[:, :upto + 1] for s in S],
                               bank.strategy)

    record(0)
    for t in range(T):
        u = inputs.at(t, m)
        new = []
        for p, a in enumerate(bank.agents):
            wi = w[p]
            zu, zd = wi[:a.n_u], wi[a.n_u:]
            df = a.dform
            y = outputs[a.agent] @ x
            zd_next = df.F_d @ zd + df.G_d @ u + a.L_d @ (y - df.H_d @ zd)
            if a.n_u:
                agree = np.zeros(a.n_u)
                for j in np.flatnonzero(W[p] > 0) + 1:
                    agree += W[p, j - 1] * (w[j - 1][bank.neighbor_maps[(a.agent, j)]] - zu)
                zu_next = (a.F_u @ zu + a.F_star @ zd + a.G_u @ u
                           + a.k_u * (a.F_u @ agree))
            else:
                zu_next = zu
            new.append(np.concatenate([zu_next, zd_next]))
        x = A @ x + B @ u
        w = new
        record(t + 1)
        worst = int(np.argmax(E[:, t + 1]))
        if not np.isfinite(E[worst, t + 1]) or E[worst, t + 1] > guard:
            raise DivergenceError(worst + 1, t + 1, float(E[worst, t + 1]), trace(t + 1))
    return trace(T)


@dataclass(frozen=True)
class AgentMetrics:
    converged: bool
    settling_time: int | None
    terminal_ratio: float

    def to_json(self) -> dict:
        return {"converged": self.converged, "settling_time": self.settling_time,
                "terminal_ratio": self.terminal_ratio}


def convergence_metrics(trace_or_norms, tol: float = 1e-3) -> dict:
    """Per-agent settling time and terminal ratio.

    ``settling_time`` is the first ``t`` with ``err(s) < tol * err(0)`` for every
    ``s >= t``; an agent whose initial error is zero counts as settled at 0.
    """
    E = np.atleast_2d(trace_or_norms.err_norm if hasattr(trace_or_norms, "err_norm")
                      else np.asarray(trace_or_norms, dtype=float))
    out = {}
    for p, e in enumerate(E, start=1):
        e0 = e[0]
        if e0 == 0:
            out[p] = AgentMetrics(True, 0, 0.0)
            continue
        ratio = float(e[-1] / e0)
        bad = np.flatnonzero(~(e < tol * e0))
        settle = 0 if bad.size == 0 else int(bad[-1]) + 1
        settle = settle if settle < e.size else None
        out[p] = AgentMetrics(settle is not None, settle, ratio)
    return out


# --------------------------------------------------------------------------
# CSV

def write_trace_csv(trace: SimulationTrace, path, wide: bool = False) -> None:
    N, n = trace.N, trace.x.shape[0]
    header = ["t"] + [f"err_norm_{i}" for i in range(1, N + 1)]
    if wide:
        header += [f"x_{k}" for k in range(1, n + 1)]
        header += [f"xhat_{i}_{k}" for i in range(1, N + 1) for k in range(1, n + 1)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for t in range(trace.T + 1):
            row = [str(t)] + [repr(float(v)) for v in trace.err_norm[:, t]]
            if wide:
                row += [repr(float(v)) for v in trace.x[:, t]]
                row += [repr(float(v)) for v in trace.xhat[:, :, t].ravel()]
            wr.writerow(row)


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as arrays keyed by header name (``t`` as int)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for c, name in enumerate(header):
        vals = [r[c] for r in body]
        cols[name] = np.array([int(v) for v in vals]) if name == "t" else np.array(
            [float(v) for v in vals])
    return cols
