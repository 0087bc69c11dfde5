"""Command-line pipeline: analyze, design, simulate, verify.

Exit codes: 0 ok, 1 input error, 2 infeasible, 3 divergence, 4 oracle mismatch.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .canon import verify_form
from .classify import check_assumption1, check_assumption2, classify
from .design import (DesignError, GainError, InfeasibleGain, build_observers,
                     closed_loop_error_matrix, pick_gains)
from .model import (AgentOutputs, BlockIndex, JordanSpec, ModelError, SensorNetwork,
                    SystemModel, laplacian, validate)
from .sim import (DivergenceError, InputSignal, convergence_metrics, simulate, unit_sphere,
                  write_trace_csv)
from .solvability import (AssumptionError, BlockInstance, assemble_error_matrix, build_report,
                          eigvals_hp, match_multisets, oracle_check, random_block_instance,
                          sample_gain, schur_radius, spectrum_split_check)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_DIVERGED, EXIT_ORACLE = 0, 1, 2, 3, 4
BOUNDARY_MARGIN = 1e-3
PROBE_GAINS = (-0.5, 0.0, 0.25, 0.5, 1.0, 1.5, 2.5)


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


@dataclass
class RunConfig:
    system: SystemModel
    outputs: AgentOutputs
    network: SensorNetwork
    strategy: str = "auto"
    gains: dict = field(default_factory=dict)
    L_d: dict = field(default_factory=dict)
    radius: float = 0.2
    T: int = 500
    tol: float = 1e-4
    seed: int = 0
    x0: np.ndarray | None = None
    xhat0: object = "zero"
    inputs: InputSignal = field(default_factory=InputSignal)


def bundled_example() -> Path:
    return Path(str(resources.files("distobs") / "data" / "six_agent_example.json"))


def _matrix(doc, pointer, ncols=None):
    try:
        M = np.array(doc, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(pointer, "expected a numeric matrix (array of rows)") from None
    if M.ndim != 2:
        raise ConfigError(pointer, "expected a numeric matrix (array of rows)")
    if ncols is not None and M.shape[1] != ncols:
        raise ConfigError(pointer, f"expected {ncols} columns, got {M.shape[1]}")
    return M


def _need(doc, key, pointer, kind=dict):
    if not isinstance(doc, dict) or key not in doc:
        raise ConfigError(pointer, f"missing key '{key}'")
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"{pointer}/{key}", f"expected {kind.__name__}")
    return val


def _scalar(val, pointer, kind=float):
    if isinstance(val, bool) or not isinstance(val, (int, float)) or (
            kind is int and float(val) != int(val)):
        raise ConfigError(pointer, f"expected {'an integer' if kind is int else 'a number'}")
    return kind(val)


def _flag(val, pointer):
    if not isinstance(val, bool):
        raise ConfigError(pointer, "expected true or false")
    return val


def _block_key(key, pointer):
    try:
        ell, h = (int(v) for v in str(key).split(","))
    except ValueError:
        raise ConfigError(pointer, f"gain key {key!r} must look like 'ell,h'") from None
    return BlockIndex(ell, h)


def parse_config(doc: dict) -> RunConfig:
    """Turn a JSON document into a validated ``RunConfig``; errors carry a key pointer."""
    if not isinstance(doc, dict):
        raise ConfigError("", "top level must be an object")
    sysdoc = _need(doc, "system", "")
    eigens = _need(sysdoc, "eigens", "/system", list)
    pairs = []
    for ell, e in enumerate(eigens):
        ptr = f"/system/eigens/{ell}"
        lam = _need(e, "lambda", ptr, None)
        dims = _need(e, "dims", ptr, list)
        if isinstance(lam, bool) or not isinstance(lam, (int, float)):
            raise ConfigError(f"{ptr}/lambda", "eigenvalue must be a real number")
        pairs.append((float(lam), tuple(dims)))
    jordan = JordanSpec.from_pairs(pairs)
    bad = jordan.violations()
    if bad:
        raise ConfigError("/system/eigens", "; ".join(bad))
    n = jordan.n
    B = _matrix(sysdoc["B"], "/system/B") if "B" in sysdoc else np.zeros((n, 0))
    if B.shape[0] != n:
        raise ConfigError("/system/B", f"expected {n} rows, got {B.shape[0]}")
    system = SystemModel(jordan, B)
    agents = _need(doc, "agents", "", list)
    C = tuple(_matrix(_need(a, "C", f"/agents/{p}", list), f"/agents/{p}/C", n)
              for p, a in enumerate(agents))
    outputs = AgentOutputs(C)
    netdoc = _need(doc, "network", "")
    net = SensorNetwork(_matrix(_need(netdoc, "adjacency", "/network", list), "/network/adjacency"),
                        _flag(netdoc.get("directed", True), "/network/directed"))
    found = validate(system, outputs, net)
    if found:
        raise ConfigError("/network" if found[0].startswith("network") else "/agents",
                          "; ".join(found))
    cfg = RunConfig(system, outputs, net)
    cfg.strategy = str(doc.get("strategy", "auto"))
    if cfg.strategy not in ("1", "2", "auto"):
        raise ConfigError("/strategy", "must be 1, 2 or 'auto'")
    cfg.gains = {_block_key(k, "/gains"): _scalar(v, f"/gains/{k}")
                 for k, v in doc.get("gains", {}).items()}
    for key, L in doc.get("L_d", {}).items():
        try:
            i = int(key)
        except ValueError:
            raise ConfigError("/L_d", f"agent key {key!r} is not an integer") from None
        if not 1 <= i <= outputs.N:
            raise ConfigError(f"/L_d/{key}", f"no agent {i}")
        cfg.L_d[i] = _matrix(L, f"/L_d/{key}")
    cfg.radius = _scalar(doc.get("radius", 0.2), "/radius")
    simdoc = doc.get("simulation", {})
    cfg.T = _scalar(simdoc.get("T", cfg.T), "/simulation/T", int)
    if cfg.T < 0:
        raise ConfigError("/simulation/T", "must be nonnegative")
    cfg.tol = _scalar(simdoc.get("tol", cfg.tol), "/simulation/tol")
    cfg.seed = _scalar(simdoc.get("seed", cfg.seed), "/simulation/seed", int)
    if "x0" in simdoc:
        try:
            cfg.x0 = np.asarray(simdoc["x0"], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("/simulation/x0", "expected a numeric vector") from None
        if cfg.x0.shape != (n,):
            raise ConfigError("/simulation/x0", f"expected {n} entries")
    cfg.xhat0 = simdoc.get("xhat0", "zero")
    if isinstance(cfg.xhat0, str):
        if cfg.xhat0 not in ("zero", "exact"):
            raise ConfigError("/simulation/xhat0", "must be 'zero', 'exact' or numeric")
    else:
        try:
            cfg.xhat0 = np.asarray(cfg.xhat0, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("/simulation/xhat0", "expected numeric values") from None
        if cfg.xhat0.shape not in ((n,), (outputs.N, n)):
            raise ConfigError("/simulation/xhat0", f"expected shape ({n},) or ({outputs.N}, {n})")
    try:
        cfg.inputs = InputSignal.from_json(simdoc.get("input"))
        cfg.inputs.check(system.m, cfg.T)
    except (TypeError, ValueError) as exc:
        raise ConfigError("/simulation/input", str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return parse_config(doc)


# --------------------------------------------------------------------------
# pipeline pieces

def _analysis(cfg: RunConfig, strategy: str):
    cls = classify(cfg.system, cfg.outputs)
    a1 = check_assumption1(cfg.system, cfg.outputs, cls)
    a2 = check_assumption2(cfg.outputs, cls)
    doc = {
        "classification": cls.to_json(),
        "assumptions": {
            "joint_detectability": {"ok": a1.ok, "detail": a1.detail,
                                    "every_block_observed": a1.every_block_observed},
            "independent_first_columns": {"ok": a2.ok, "detail": a2.detail},
        },
    }
    if not (a1 and a2):
        raise AssumptionError(a1.detail or a2.detail)
    report = build_report(cfg.system, cfg.outputs, cfg.network, cls, check_assumptions=False)
    resolved = report.resolve_strategy(strategy)
    doc["solvability"] = report.to_json()
    doc["strategy"] = resolved
    doc["feasible"] = resolved is not None and report.feasible(resolved)
    return cls, report, resolved, doc


def _bank(cfg, cls, report, strategy):
    gains = pick_gains(report, strategy, cfg.gains)
    return build_observers(cfg.system, cfg.outputs, cfg.network, cls, strategy, gains,
                           cfg.L_d, radius=cfg.radius)


def _forms_json(cfg, cls, bank):
    out = {}
    for a in bank.agents:
        i = a.agent
        entry = {"Q": (a.dform.Q + 1).tolist(), "n_u": a.dform.n_u, "n_d": a.dform.n_d,
                 "form_check": str(verify_form(a.dform, cfg.system, cfg.outputs, i))}
        if a.aform is not None:
            entry.update({"R": (a.aform.R + 1).tolist(), "x_u": a.aform.n_u,
                          "x_d": a.aform.n_d,
                          "augmented_check": str(verify_form(a.aform, cfg.system, cfg.outputs, i))})
        entry["order"] = a.order
        entry["L_d"] = a.L_d.tolist()
        out[str(i)] = entry
    return out


def _emit(doc, out_dir, name):
    text = json.dumps(doc, indent=2) + "\n"
    if out_dir is None:
        sys.stdout.write(text)
    else:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text)


# --------------------------------------------------------------------------
# commands

def cmd_analyze(cfg: RunConfig, args) -> int:
    _, report, resolved, doc = _analysis(cfg, args.strategy)
    _emit(doc, args.out, "analysis.json")
    if doc["feasible"]:
        return EXIT_OK
    for br in report.gain_blocks():
        for line in br.diagnostics():
            print(f"block {br.block}: {line}", file=sys.stderr)
    return EXIT_INFEASIBLE


def cmd_design(cfg: RunConfig, args) -> int:
    cls, report, resolved, doc = _analysis(cfg, args.strategy)
    if not doc["feasible"]:
        _emit(doc, args.out, "design.json")
        return EXIT_INFEASIBLE
    bank = _bank(cfg, cls, report, resolved)
    doc["bank"] = bank.summary()
    doc["agents"] = _forms_json(cfg, cls, bank)
    _emit(doc, args.out, "design.json")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    cls, report, resolved, analysis = _analysis(cfg, args.strategy)
    if not analysis["feasible"]:
        _emit(analysis, args.out, "report.json")
        return EXIT_INFEASIBLE
    bank = _bank(cfg, cls, report, resolved)
    seed = cfg.seed if args.seed is None else args.seed
    x0 = cfg.x0 if cfg.x0 is not None else unit_sphere(cfg.system.n, seed)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    code, diverged = EXIT_OK, None
    try:
        trace = simulate(cfg.system, cfg.outputs, bank, x0, cfg.T, cfg.inputs, cfg.xhat0)
    except DivergenceError as exc:
        trace, code = exc.trace, EXIT_DIVERGED
        diverged = {"agent": exc.agent, "t": exc.t, "value": exc.value}
    write_trace_csv(trace, out_dir / "trace.csv", wide=args.wide)
    summary = bank.summary()
    metrics = convergence_metrics(trace, cfg.tol)
    doc = {
        "strategy": resolved,
        "seed": seed,
        "T": cfg.T,
        "tol": cfg.tol,
        "classification": analysis["classification"],
        "gains": summary["gains"],
        "orders": summary["orders"],
        "closed_loop_radius": summary["closed_loop_radius"],
        "luenberger_radius": summary["luenberger_radius"],
        "metrics": {str(i): m.to_json() for i, m in metrics.items()},
        "diverged": diverged,
    }
    _emit(doc, out_dir, "report.json")
    return code


def _verify_config(cfg: RunConfig):
    rows, skipped, problems = [], [], []
    cls, report, resolved, _ = _analysis(cfg, "auto")
    for br in report.gain_blocks():
        inst = BlockInstance(laplacian(cfg.network), br.V[2], br.stack, br.lam, cfg.network.directed)
        for s in (1, 2):
            iv = br.interval(s)
            ks = list(PROBE_GAINS)
            if br.block in cfg.gains:
                ks.insert(0, cfg.gains[br.block])
            elif not iv.empty and np.isfinite(iv.lo) and np.isfinite(iv.hi):
                ks.insert(0, iv.midpoint)
            for k in ks:
                tag = {"block": [br.block.ell, br.block.h], "strategy": s, "k": k}
                if iv.near_boundary(k, BOUNDARY_MARGIN):
                    skipped.append({**tag, "notice": "k within the boundary margin; skipped"})
                    continue
                c = oracle_check(inst, s, k)
                rows.append({**tag, "spectral": c.spectral, "oracle": c.oracle, "rho": c.rho,
                             "agree": c.agree})
                if s == 1:
                    ok = spectrum_split_check(br.stack, br.L_sub, br.lam, k)
                    rows.append({**tag, "check": "spectrum_split", "agree": ok})
    for s in (1, 2):
        if not report.feasible(s):
            continue
        try:
            bank = _bank(cfg, cls, report, s)
        except (GainError, DesignError) as exc:
            problems.append(f"strategy {s}: {exc}")
            continue
        M = closed_loop_error_matrix(bank)
        rho = schur_radius(M.matrix)
        rows.append({"check": "closed_loop", "strategy": s, "rho": rho, "agree": rho < 1})
        parts = [assemble_error_matrix(s, br.L_sub, br.stack, br.lam, bank.gains[br.block])
                 for br in report.gain_blocks()]
        want = np.concatenate([eigvals_hp(P) for P in parts]) if parts else np.zeros(0)
        got = eigvals_hp(M.gamma_u)
        scale = 1 + float(np.max(np.abs(M.gamma_u), initial=0.0))
        ok, worst = match_multisets(got, want, 1e-7 * scale)
        rows.append({"check": "undetectable_block_spectrum", "strategy": s,
                     "worst": worst, "agree": ok})
    return rows, skipped, problems


def _fuzz(n: int, seed: int):
    rng = np.random.default_rng(seed)
    counts = {"1": [0, 0], "2": [0, 0], "split": [0, 0]}
    skipped, failures = 0, []
    for it in range(n):
        inst = random_block_instance(rng, directed=bool(it % 2))
        for s in (1, 2):
            k = sample_gain(rng, inst.interval(s), margin=BOUNDARY_MARGIN)
            if k is None:
                skipped += 1
                continue
            c = oracle_check(inst, s, k)
            counts[str(s)][0] += c.agree
            counts[str(s)][1] += 1
            if not c.agree:
                failures.append({"iteration": it, "strategy": s, "k": k, "rho": c.rho,
                                 "spectral": c.spectral})
        k = float(rng.uniform(-0.5, 2.5))
        ok = spectrum_split_check(inst.stack, inst.L_sub, inst.lam, k)
        counts["split"][0] += ok
        counts["split"][1] += 1
        if not ok:
            failures.append({"iteration": it, "check": "spectrum_split", "k": k})
    return counts, skipped, failures


def cmd_verify(cfg: RunConfig | None, args) -> int:
    doc, bad = {}, False
    if cfg is not None:
        rows, skipped, problems = _verify_config(cfg)
        bad = bool(problems) or not all(r["agree"] for r in rows)
        doc["checks"] = rows
        doc["skipped"] = skipped
        doc["problems"] = problems
        doc["passed"] = sum(r["agree"] for r in rows)
        doc["total"] = len(rows)
    if args.fuzz:
        seed = 0 if args.seed is None else args.seed
        counts, skipped, failures = _fuzz(args.fuzz, seed)
        doc["fuzz"] = {"instances": args.fuzz, "seed": seed, "skipped": skipped,
                       "agreements": {k: f"{a}/{t}" for k, (a, t) in counts.items()},
                       "failures": failures}
        bad = bad or bool(failures)
    _emit(doc, args.out, "verify.json")
    return EXIT_ORACLE if bad else EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distobs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("analyze", "classification and spectral feasibility"),
                        ("design", "observer bank for the selected strategy"),
                        ("simulate", "run the networked estimation"),
                        ("verify", "cross-check the spectral conditions against the Schur oracle")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path,
                       help="JSON config (default: the bundled example)")
        s.add_argument("--strategy", choices=("1", "2", "auto"), default=None)
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--seed", type=int, default=None)
        if name == "simulate":
            s.add_argument("--wide", action="store_true", help="also write every state entry")
        if name == "verify":
            s.add_argument("--fuzz", type=int, default=0, metavar="N",
                           help="also run N random block instances")
    return p


COMMANDS = {"analyze": cmd_analyze, "design": cmd_design, "simulate": cmd_simulate,
            "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify" and args.fuzz and args.config is None:
            cfg = None
        else:
            cfg = load_config(args.config or bundled_example())
        if cfg is not None and args.strategy is None:
            args.strategy = cfg.strategy
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, AssumptionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleGain as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (GainError, DesignError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
