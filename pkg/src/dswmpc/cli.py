"""Command-line front end.

Commands::

    dswmpc run <config> --strategy dswmpc --out <dir>
    dswmpc sets <config> --out <dir>
    dswmpc compare <config> --strategies dswmpc,cswmpc,deswmpc --out <dir>
    dswmpc validate <config>

``<config>`` is a TOML experiment file or the name of a bundled example
(``example1``, ``example2``, ``example3``).  The tolerance profile can be
overridden with the ``DSWMPC_TOLERANCE_PROFILE`` environment variable.

Exit codes: 0 success, 1 audit failure of a feasible run, 2 configuration
error, 3 design-stage emptiness, 4 refusal, 5 runtime infeasibility.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import STRATEGIES, ConfigError, ExperimentConfig, load_config
from .controller import DesignError
from .geometry import boundary_loop
from .invariants import (
    InvariantSetError,
    ModeDynamics,
    NotConvergedError,
    switch_rci,
    switch_rci_violations,
)
from .orchestrator import (
    RunStatus,
    Strategy,
    audit_passed,
    audit_trace,
    design_dswmpc,
    execute,
)

EXIT_OK = 0
EXIT_AUDIT = 1
EXIT_CONFIG = 2
EXIT_DESIGN = 3
EXIT_REFUSED = 4
EXIT_INFEASIBLE = 5

STATUS_EXIT = {
    RunStatus.OK: EXIT_OK,
    RunStatus.DESIGN_FAILURE: EXIT_DESIGN,
    RunStatus.REFUSED: EXIT_REFUSED,
    RunStatus.INFEASIBLE: EXIT_INFEASIBLE,
}

log = logging.getLogger("dswmpc")


def trace_columns(n_x: int, n_u: int) -> list:
    return (
        ["t", "subsystem", "mode", "delta"]
        + [f"x[{k}]" for k in range(n_x)]
        + [f"u[{k}]" for k in range(n_u)]
        + [f"xhat[{k}]" for k in range(n_x)]
        + ["feasible", "cost", "solve_ms"]
    )


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def write_trace_csv(trace, path: Path) -> None:
    """One row per (t, subsystem); the final row of each subsystem carries
    only the terminal state."""
    n_x = max(v.shape[1] for v in trace.x.values())
    n_u = max(v.shape[1] for v in trace.u.values())
    cols = trace_columns(n_x, n_u)
    T = trace.T_sim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t in range(T + 1):
            for i in trace.indices:
                x = trace.x[i][t]
                last = t == T or t >= len(trace.modes)
                row = [t, i, "" if last else trace.modes[t], "" if last else trace.deltas[t]]
                row += [_num(x[k]) if k < len(x) else "" for k in range(n_x)]
                u = None if last else trace.u[i][t]
                xh = None if last else trace.xhat[i][t]
                row += ["" if u is None or k >= len(u) else _num(u[k]) for k in range(n_u)]
                row += ["" if xh is None or k >= len(xh) else _num(xh[k]) for k in range(n_x)]
                if last:
                    row += ["", "", ""]
                else:
                    row += [
                        int(trace.feasible[i][t]),
                        _num(trace.cost[i][t]),
                        f"{trace.solve_ms[i][t]:.3f}",
                    ]
                w.writerow(row)


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _status_record(result) -> dict:
    tr = result.trace
    code = STATUS_EXIT[tr.status]
    if code == EXIT_OK and result.audit is not None and not audit_passed(result.audit):
        code = EXIT_AUDIT
    return {
        "strategy": result.strategy.value,
        "status": tr.status.value,
        "cause": tr.cause,
        "detail": tr.detail,
        "failure_step": tr.failure_step,
        "initial_condition_ok": tr.initial_condition_ok,
        "exit_code": code,
        "wall_s": round(result.wall_s, 3),
    }


def _load(path) -> ExperimentConfig | None:
    try:
        return load_config(path)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return None


def _out_dir(cfg: ExperimentConfig, out) -> Path:
    p = Path(out or cfg.out_dir or f"results/{cfg.name}")
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_run(cfg: ExperimentConfig, strategy: str, out_dir) -> int:
    """Run one strategy and write ``<name>_<strategy>_{trace.csv, audit.json,
    sse.json, status.json}``."""
    out = _out_dir(cfg, out_dir)
    spec = cfg.to_spec()
    result = execute(spec, strategy, audit_tol=cfg.tolerances["audit_tol"])
    tr = result.trace
    stem = f"{cfg.name}_{result.strategy.value}"
    write_trace_csv(tr, out / f"{stem}_trace.csv")
    audit = result.audit
    if audit is None and tr.modes:
        audit = audit_trace(tr, spec, None, tol=cfg.tolerances["audit_tol"])
    _write_json(
        {k: v.as_dict() for k, v in (audit or {}).items()}, out / f"{stem}_audit.json"
    )
    _write_json(result.sse, out / f"{stem}_sse.json")
    record = _status_record(result)
    _write_json(record, out / f"{stem}_status.json")
    if result.sse is not None:
        print(f"{stem}: {record['status']} SSE={result.sse['total']:.4f}")
    else:
        print(f"{stem}: {record['status']} ({record['cause']}): {record['detail']}")
    if audit:
        for k, v in audit.items():
            flag = "skip" if v.skipped else ("pass" if v.passed else "FAIL")
            print(f"  {k:22s} {flag}" + ("" if v.passed else f" first at {v.first_violation}"))
    return record["exit_code"]


def _export(P, path: Path) -> None:
    path.write_text(P.to_text())
    if P.dim == 2 and not P.is_empty and P.is_bounded:
        np.savetxt(path.with_suffix(".boundary.csv"), boundary_loop(P), delimiter=",",
                   header="x,y", comments="", fmt="%.12g")


def cmd_sets(cfg: ExperimentConfig, out_dir) -> int:
    """Export Z, Xhat, Uhat, T and the maximal switch-RCI family C of every
    subsystem and mode, plus a certificate summary."""
    out = _out_dir(cfg, out_dir) / "sets"
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.to_spec()
    summary = {"status": "ok", "subsystems": {}}
    try:
        designs = design_dswmpc(spec)
    except (DesignError, NotConvergedError) as exc:
        summary["status"] = "design_failure"
        summary["error"] = {
            "subsystem": getattr(exc, "subsystem", None),
            "mode": getattr(exc, "mode", None),
            "set": getattr(exc, "set_name", None),
            "message": str(exc),
        }
        _write_json(summary, out / "certificates.json")
        print(f"design-stage emptiness: {exc}", file=sys.stderr)
        return EXIT_DESIGN
    all_ok = True
    for i, d in designs.items():
        sub = spec.network[i]
        dyns = {k: ModeDynamics(sub.A, sub.B, sub.X, sub.U) for k in d.sets}
        entry = {}
        try:
            C = switch_rci(dyns, d.graph, max_iter=spec.settings.max_iter)
            c_bad = switch_rci_violations(C, dyns, d.graph)
        except InvariantSetError as exc:
            C, c_bad = None, [("*", None, str(exc))]
        certs = d.certificates()
        for key, s in d.sets.items():
            stem = f"sub{i}_mode{key}"
            for name in ("Z", "Xhat", "Uhat", "T"):
                _export(getattr(s, name), out / f"{stem}_{name}.txt")
            if C is not None:
                _export(C.sets[key], out / f"{stem}_C.txt")
            c = dict(certs[key])
            c["C_switch_rci"] = C is not None and not any(b[0] == key for b in c_bad)
            if not d.coordinated:
                c.pop("state_budget")
                c.pop("input_budget")
            entry[str(key)] = c
            all_ok &= all(c.values())
        summary["subsystems"][str(i)] = entry
    summary["all_pass"] = bool(all_ok)
    _write_json(summary, out / "certificates.json")
    print(f"sets written to {out}; certificates {'pass' if all_ok else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_AUDIT


def cmd_compare(cfg: ExperimentConfig, strategies, out_dir) -> int:
    """Run several strategies and tabulate grand-sum square errors; failed
    or refused strategies show a dash."""
    out = _out_dir(cfg, out_dir)
    spec = cfg.to_spec()
    rows = []
    for s in strategies:
        result = execute(spec, s, audit_tol=cfg.tolerances["audit_tol"])
        rec = _status_record(result)
        rec["sse_total"] = None if result.trace.status != RunStatus.OK else result.sse["total"]
        rec["sse_per_subsystem"] = None if rec["sse_total"] is None else result.sse["per_subsystem"]
        rows.append(rec)
        write_trace_csv(result.trace, out / f"{cfg.name}_{result.strategy.value}_trace.csv")
    with open(out / f"{cfg.name}_compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "sse_total", "status", "cause"])
        for r in rows:
            total = "-" if r["sse_total"] is None else f"{r['sse_total']:.4f}"
            w.writerow([r["strategy"], total, r["status"], r["cause"] or ""])
    _write_json({"experiment": cfg.name, "rows": rows}, out / f"{cfg.name}_compare.json")
    print(format_table(cfg.name, rows))
    return EXIT_OK


def format_table(name: str, rows) -> str:
    head = f"{'strategy':10s} {'SSE':>10s}  status"
    lines = [f"[{name}]", head]
    for r in rows:
        total = "-" if r["sse_total"] is None else f"{r['sse_total']:.4f}"
        lines.append(f"{r['strategy']:10s} {total:>10s}  {r['status']}")
    return "\n".join(lines)


def cmd_validate(path) -> int:
    cfg = _load(path)
    if cfg is None:
        return EXIT_CONFIG
    print(
        f"{cfg.name}: ok ({len(cfg.network)} subsystems, {len(cfg.modes)} modes, "
        f"N={cfg.N}, dwell={sorted(set(cfg.dwell.values()))}, T_sim={cfg.T_sim})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dswmpc", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate one strategy")
    r.add_argument("config")
    r.add_argument("--strategy", choices=STRATEGIES, default=Strategy.DSWMPC.value)
    r.add_argument("--out")
    s = sub.add_parser("sets", help="export invariant sets and certificates")
    s.add_argument("config")
    s.add_argument("--out")
    c = sub.add_parser("compare", help="tabulate square errors of several strategies")
    c.add_argument("config")
    c.add_argument("--strategies", default=",".join(STRATEGIES))
    c.add_argument("--out")
    v = sub.add_parser("validate", help="check an experiment file")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return cmd_validate(args.config)
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    if args.command == "run":
        return cmd_run(cfg, args.strategy, args.out)
    if args.command == "sets":
        return cmd_sets(cfg, args.out)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        print(f"config error: unknown strategies {bad}", file=sys.stderr)
        return EXIT_CONFIG
    return cmd_compare(cfg, strategies, args.out)


if __name__ == "__main__":
    sys.exit(main())
