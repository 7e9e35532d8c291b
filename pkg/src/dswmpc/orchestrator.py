"""Closed-loop experiments: distributed, centralized and decentralized
switched MPC on an interconnected plant, with audits and square-error
reports."""

from __future__ import annotations

import dataclasses
import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .controller import (
    CentralDesign,
    DesignError,
    LocalOCPInfeasible,
    LocalSolution,
    ReferenceTrajectory,
    build_central_design,
    build_design,
    design_feedback_gain,
    control_input,
    project_onto,
    shift_reference,
    shift_stale_reference,
    solve_central_ocp,
    solve_local_ocp,
)
from .geometry import Polytope, affine_image, minkowski_sum, minkowski_sum_all
from .invariants import (
    NotConvergedError,
    SwitchGraph,
    SwitchRciResult,
    initial_condition_ok,
    pre_k,
)
from .model import (
    DwellState,
    ModeTopology,
    NetworkModel,
    SwitchingSignal,
    Visibility,
    interaction_disturbance_set,
    plant_step,
    remaining_dwell_update,
    validate_signal,
)

log = logging.getLogger(__name__)

WORST_CASE_KEY = "worst"


class Strategy(str, enum.Enum):
    DSWMPC = "dswmpc"
    CSWMPC = "cswmpc"
    DESWMPC = "deswmpc"


class RunStatus(str, enum.Enum):
    OK = "ok"
    INFEASIBLE = "infeasible"
    DESIGN_FAILURE = "design_failure"
    REFUSED = "refused"


class RefusalError(RuntimeError):
    """The strategy cannot be applied to this experiment."""


CAUSES = {
    RunStatus.INFEASIBLE: "runtime infeasibility",
    RunStatus.DESIGN_FAILURE: "design-stage emptiness",
    RunStatus.REFUSED: "modes not enumerable",
}


@dataclass
class ControllerSettings:
    """Tuning shared by all local controllers; per-subsystem overrides in
    ``Q``, ``R``, ``E``, ``Eu`` keyed by subsystem index."""

    N: int = 5
    dwell: int = 3
    Q: dict = field(default_factory=dict)
    R: dict = field(default_factory=dict)
    E: dict = field(default_factory=dict)
    Eu: dict = field(default_factory=dict)
    E_halfwidth: float = 0.1
    Eu_halfwidth: float = 0.05
    eps: float = 1e-3
    max_iter: int = 100
    initial_delta: int | None = None
    bootstrap_passes: int = 2


@dataclass
class ExperimentSpec:
    """Plant, topologies, switching signal and tuning of one experiment.

    ``allowable`` lists the possible neighbours of each subsystem; when the
    signal's visibility is not ``times_and_modes_known`` the local tubes are
    built for the worst case over these sets (defaulting to every declared
    coupling) and realized topologies are restricted to them.
    """

    network: NetworkModel
    topologies: dict
    signal: SwitchingSignal
    T_sim: int
    x0: dict
    settings: ControllerSettings = field(default_factory=ControllerSettings)
    allowable: dict | None = None
    name: str = "experiment"
    strategy_settings: dict = field(default_factory=dict)

    def __post_init__(self):
        for m, topo in self.topologies.items():
            topo.validate(self.network)
        for m in self.signal.graph.modes:
            if m not in self.topologies:
                raise ValueError(f"mode {m} has no topology")
        if self.allowable is not None:
            self.allowable = {int(i): frozenset(int(j) for j in js) for i, js in self.allowable.items()}

    def for_strategy(self, strategy: "Strategy | str") -> "ExperimentSpec":
        """Copy with the tuning overrides of ``strategy`` applied."""
        over = self.strategy_settings.get(Strategy(strategy).value)
        if not over:
            return self
        return dataclasses.replace(self, settings=dataclasses.replace(self.settings, **over))

    @property
    def visibility(self) -> Visibility:
        return self.signal.visibility

    @property
    def worst_case(self) -> bool:
        return self.visibility != Visibility.TIMES_AND_MODES_KNOWN

    def allowable_for(self, i: int) -> frozenset:
        if self.allowable is not None and i in self.allowable:
            return self.allowable[i]
        return frozenset(self.network[i].couplings)

    def topology(self, mode) -> ModeTopology:
        """Topology realized by the plant in ``mode``."""
        topo = self.topologies[mode]
        if self.worst_case and self.allowable is not None:
            return topo.restricted({i: self.allowable_for(i) for i in self.network.indices})
        return topo

    def initial_delta(self) -> int:
        if self.settings.initial_delta is not None:
            return int(self.settings.initial_delta)
        return int(self.signal.graph.dwell[self.signal.mode_at(0)])

    def E(self, i: int) -> Polytope:
        if i in self.settings.E:
            return self.settings.E[i]
        return Polytope.symmetric_box(self.settings.E_halfwidth, self.network[i].n_x)

    def Eu(self, i: int) -> Polytope:
        if i in self.settings.Eu:
            return self.settings.Eu[i]
        return Polytope.symmetric_box(self.settings.Eu_halfwidth, self.network[i].n_u)

    def weights(self, i: int):
        s = self.network[i]
        Q = self.settings.Q.get(i, np.eye(s.n_x))
        R = self.settings.R.get(i, np.eye(s.n_u))
        return np.atleast_2d(np.asarray(Q, float)), np.atleast_2d(np.asarray(R, float))

    def consumers(self, i: int) -> bool:
        """True if some subsystem may use the reference of ``i``."""
        for j in self.network.indices:
            if j == i:
                continue
            if self.worst_case:
                if i in self.allowable_for(j):
                    return True
            elif any(i in self.topology(m).neighbors(j) for m in self.signal.graph.modes):
                return True
        return False


@dataclass
class SimulationTrace:
    """Time-indexed record of one closed-loop run.

    ``x[i]`` has ``T_sim + 1`` rows; ``u``, ``xhat``, ``feasible``, ``cost``
    and ``solve_ms`` have ``T_sim`` rows.  ``refs[i][t]`` is the reference
    of subsystem ``i`` in force at ``t`` and ``plans[i][t]`` its solution
    (``None`` where infeasible or not applicable).
    """

    strategy: Strategy
    T_sim: int
    indices: list
    modes: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    x: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)
    xhat: dict = field(default_factory=dict)
    feasible: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    solve_ms: dict = field(default_factory=dict)
    refs: dict = field(default_factory=dict)
    plans: dict = field(default_factory=dict)
    status: RunStatus = RunStatus.OK
    cause: str | None = None
    detail: str | None = None
    failure_step: int | None = None
    initial_condition_ok: bool | None = None

    @property
    def ok(self) -> bool:
        return self.status == RunStatus.OK

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings."""
        return {
            "modes": list(self.modes),
            "deltas": list(self.deltas),
            "x": {i: v.copy() for i, v in self.x.items()},
            "u": {i: v.copy() for i, v in self.u.items()},
            "xhat": {i: v.copy() for i, v in self.xhat.items()},
            "feasible": {i: v.copy() for i, v in self.feasible.items()},
            "cost": {i: v.copy() for i, v in self.cost.items()},
            "status": self.status,
        }


def traces_equal(a: SimulationTrace, b: SimulationTrace, tol: float = 0.0,
                 fields=("x", "u")) -> bool:
    """Compare trajectories; ``tol = 0`` demands bit-identical arrays."""
    if a.modes != b.modes or a.status != b.status:
        return False
    for name in fields:
        da, db = getattr(a, name), getattr(b, name)
        if set(da) != set(db):
            return False
        for i in da:
            va, vb = da[i], db[i]
            if va.shape != vb.shape:
                return False
            if tol == 0.0:
                if not np.array_equal(va, vb, equal_nan=True):
                    return False
            elif not np.allclose(va, vb, atol=tol, rtol=0.0, equal_nan=True):
                return False
    return True


def _empty_trace(spec: ExperimentSpec, strategy: Strategy) -> SimulationTrace:
    net = spec.network
    T = spec.T_sim
    tr = SimulationTrace(strategy, T, net.indices)
    for i in net.indices:
        s = net[i]
        tr.x[i] = np.full((T + 1, s.n_x), np.nan)
        tr.x[i][0] = np.asarray(spec.x0[i], dtype=float)
        tr.u[i] = np.full((T, s.n_u), np.nan)
        tr.xhat[i] = np.full((T, s.n_x), np.nan)
        tr.feasible[i] = np.zeros(T, dtype=bool)
        tr.cost[i] = np.full(T, np.nan)
        tr.solve_ms[i] = np.zeros(T)
        tr.refs[i] = [None] * T
        tr.plans[i] = [None] * T
    return tr


def _fail(tr: SimulationTrace, status: RunStatus, detail: str, step=None) -> SimulationTrace:
    tr.status = status
    tr.cause = CAUSES[status]
    tr.detail = detail
    tr.failure_step = step
    return tr


# ---------------------------------------------------------------------------
# designs


def _local_families(spec: ExperimentSpec, i: int, W_of):
    """Disturbance sets, global-mode map and switch graph of subsystem ``i``."""
    graph = spec.signal.graph
    if spec.worst_case:
        W = {WORST_CASE_KEY: W_of(spec.allowable_for(i))}
        key = {m: WORST_CASE_KEY for m in graph.modes}
        dwell = min(graph.dwell.values())
        local = SwitchGraph((WORST_CASE_KEY,), {(WORST_CASE_KEY, WORST_CASE_KEY)},
                            {WORST_CASE_KEY: dwell})
        return W, key, local
    W = {m: W_of(spec.topology(m).neighbors(i)) for m in graph.modes}
    return W, {m: m for m in graph.modes}, graph


def design_dswmpc(spec: ExperimentSpec) -> dict:
    """Local controller designs with reference-deviation disturbance sets."""
    net = spec.network
    E = {i: spec.E(i) for i in net.indices}
    Eu = {i: spec.Eu(i) for i in net.indices}
    designs = {}
    for i in net.indices:
        s = net[i]
        W, key, graph = _local_families(
            spec, i, lambda nb, i=i: interaction_disturbance_set(net, i, nb, E, Eu)
        )
        Q, R = spec.weights(i)
        designs[i] = build_design(
            i, s.A, s.B, s.X, s.U, s.couplings, W, key, graph, spec.settings.N,
            Q=Q, R=R, E=E[i], Eu=Eu[i], eps=spec.settings.eps,
            coordinated=spec.consumers(i), max_iter=spec.settings.max_iter,
        )
    return designs


def constraint_disturbance_set(net: NetworkModel, i: int, neighbors) -> Polytope:
    """``sum over j of (A_ij X_j + B_ij U_j)``: coupling bounded by the
    neighbours' full constraint sets."""
    terms = []
    for j in sorted(neighbors):
        Aij, Bij = net.coupling(i, j)
        if np.any(Aij):
            terms.append(affine_image(net[j].X, Aij))
        if np.any(Bij):
            terms.append(affine_image(net[j].U, Bij))
    return minkowski_sum_all(terms, net[i].n_x)


def design_deswmpc(spec: ExperimentSpec) -> dict:
    """Decentralized designs: no references, coupling bounded by constraints."""
    net = spec.network
    designs = {}
    for i in net.indices:
        s = net[i]
        W, key, graph = _local_families(
            spec, i, lambda nb, i=i: constraint_disturbance_set(net, i, nb)
        )
        Q, R = spec.weights(i)
        n, m = s.n_x, s.n_u
        designs[i] = build_design(
            i, s.A, s.B, s.X, s.U, s.couplings, W, key, graph, spec.settings.N,
            Q=Q, R=R, E=Polytope.whole(n), Eu=Polytope.whole(m), eps=spec.settings.eps,
            coordinated=False, max_iter=spec.settings.max_iter,
        )
    return designs


def design_cswmpc(spec: ExperimentSpec) -> CentralDesign:
    if spec.visibility != Visibility.TIMES_AND_MODES_KNOWN:
        raise RefusalError(
            "centralized switched MPC needs the global modes in advance "
            f"(visibility is {spec.visibility.value})"
        )
    net = spec.network
    graph = spec.signal.graph
    models = {m: net.stacked(spec.topology(m)) for m in graph.modes}
    Ks, Qs, Rs = [], [], []
    for i in net.indices:
        Q, R = spec.weights(i)
        Ks.append(design_feedback_gain(net[i].A, net[i].B, Q, R))
        Qs.append(Q)
        Rs.append(R)
    return build_central_design(
        models, Ks, Qs, Rs, [net[i].X for i in net.indices], [net[i].U for i in net.indices],
        graph, spec.settings.N, max_iter=spec.settings.max_iter,
    )


# ---------------------------------------------------------------------------
# simulation loops


def _mode_and_delta(spec: ExperimentSpec, t: int, prev: DwellState | None) -> DwellState:
    mode = spec.signal.mode_at(t)
    if prev is None:
        return DwellState(spec.initial_delta(), mode)
    return remaining_dwell_update(prev, mode, spec.signal.graph.dwell)


def _initial_state_admissible(spec: ExperimentSpec, designs: Mapping) -> bool:
    """Initial-condition test on the terminal family of every subsystem.

    The tube lets the nominal start anywhere in ``x_i(0) - Z``, so the test
    set is ``Pre^delta0(T) + Z`` of the tightened dynamics.
    """
    mode0 = spec.signal.mode_at(0)
    delta0 = spec.initial_delta()
    ok = True
    for i, d in designs.items():
        key = d.mode_key[mode0]
        fam = SwitchRciResult({k: s.T for k, s in d.sets.items()}, 0, True)
        Z = d.sets[key].Z
        x0 = np.asarray(spec.x0[i], float)
        if Z.is_full_dimensional:
            start = minkowski_sum(pre_k(fam.sets[key], d.tightened_dynamics()[key], delta0), Z)
            ok &= start.contains(x0, tol=1e-9)
        else:
            ok &= initial_condition_ok(fam, d.tightened_dynamics(), x0, key, delta0)
    return bool(ok)


def run_dswmpc(spec: ExperimentSpec, designs: dict | None = None,
               coordinated: bool = True) -> SimulationTrace:
    """Distributed switched tube MPC with reference exchange.

    Per step: observe the mode and update the remaining dwell-time, exchange
    the references among current neighbours, solve every local problem,
    apply the implicit law, advance the plant and shift the references.
    """
    strategy = Strategy.DSWMPC if coordinated else Strategy.DESWMPC
    tr = _empty_trace(spec, strategy)
    net = spec.network
    if designs is None:
        try:
            designs = design_dswmpc(spec) if coordinated else design_deswmpc(spec)
        except (DesignError, NotConvergedError) as exc:
            return _fail(tr, RunStatus.DESIGN_FAILURE, str(exc))
    try:
        tr.initial_condition_ok = _initial_state_admissible(spec, designs)
    except Exception as exc:  # diagnostic only
        log.warning("initial-condition check failed to evaluate: %s", exc)
    if tr.initial_condition_ok is False:
        log.warning("initial state outside the certified initial-condition set")

    x = {i: tr.x[i][0].copy() for i in net.indices}
    dw = _mode_and_delta(spec, 0, None)
    N = spec.settings.N

    # At t = 0 no references exist yet.  A first pass solves every local
    # problem with zero neighbour references; each further pass predicts with
    # the neighbours' plans of the previous pass.  Consistency constraints are
    # off throughout and the final pass is the one applied at t = 0.
    refs = {i: None for i in net.indices}
    boot = {}
    if coordinated:
        for _ in range(max(spec.settings.bootstrap_passes, 1) - 1):
            nxt = {}
            for i in net.indices:
                nrefs = {j: boot[j] for j in sorted(spec.topology(dw.current_mode).neighbors(i))
                         if j in boot}
                try:
                    sol = solve_local_ocp(x[i], None, nrefs, dw.current_mode, dw.delta,
                                          designs[i], use_references=False)
                except LocalOCPInfeasible:
                    continue
                nxt[i] = ReferenceTrajectory(sol.nominal_states[:N], sol.nominal_inputs)
            boot = nxt
    for t in range(spec.T_sim):
        if t > 0:
            dw = _mode_and_delta(spec, t, dw)
        tr.modes.append(dw.current_mode)
        tr.deltas.append(dw.delta)
        topo = spec.topology(dw.current_mode)
        inputs, new_refs = {}, {}
        for i in net.indices:
            d = designs[i]
            tr.refs[i][t] = refs[i]
            first = refs[i] is None
            if not coordinated:
                nrefs = {}
            elif first:
                nrefs = {j: boot[j] for j in sorted(topo.neighbors(i)) if j in boot}
            else:
                nrefs = {j: refs[j] for j in sorted(topo.neighbors(i)) if refs[j] is not None}
            try:
                sol = solve_local_ocp(x[i], refs[i], nrefs, dw.current_mode, dw.delta, d,
                                      use_references=None if not first else False)
            except LocalOCPInfeasible as exc:
                if first:
                    inputs[i] = project_onto(net[i].U, d.K @ x[i])
                    new_refs[i] = None
                else:
                    fallback = refs[i].inputs[0] + d.K @ (x[i] - refs[i].states[0])
                    inputs[i] = project_onto(net[i].U, fallback)
                    new_refs[i] = shift_stale_reference(refs[i], d)
                if tr.status == RunStatus.OK:
                    _fail(tr, RunStatus.INFEASIBLE, f"subsystem {i}, t={t}: {exc}", step=t)
                continue
            inputs[i] = control_input(x[i], sol, d.K)
            new_refs[i] = shift_reference(sol, d) if coordinated else None
            tr.xhat[i][t] = sol.nominal_initial
            tr.feasible[i][t] = True
            tr.cost[i][t] = sol.cost
            tr.solve_ms[i][t] = sol.solve_ms
            tr.plans[i][t] = sol
        for i in net.indices:
            tr.u[i][t] = inputs[i]
        x = plant_step(net, x, inputs, topo)
        for i in net.indices:
            tr.x[i][t + 1] = x[i]
        refs = new_refs
    return tr


def run_deswmpc(spec: ExperimentSpec, designs: dict | None = None) -> SimulationTrace:
    """Decentralized baseline: local tube MPC without any exchange."""
    return run_dswmpc(spec, designs, coordinated=False)


def run_cswmpc(spec: ExperimentSpec, design: CentralDesign | None = None) -> SimulationTrace:
    """Centralized switched MPC on the stacked plant (first input applied)."""
    tr = _empty_trace(spec, Strategy.CSWMPC)
    net = spec.network
    if design is None:
        try:
            design = design_cswmpc(spec)
        except RefusalError as exc:
            return _fail(tr, RunStatus.REFUSED, str(exc))
        except (DesignError, NotConvergedError) as exc:
            return _fail(tr, RunStatus.DESIGN_FAILURE, str(exc))
    xo = np.cumsum([0] + [net[i].n_x for i in net.indices])
    uo = np.cumsum([0] + [net[i].n_u for i in net.indices])
    x = {i: tr.x[i][0].copy() for i in net.indices}
    dw = None
    for t in range(spec.T_sim):
        dw = _mode_and_delta(spec, t, dw)
        tr.modes.append(dw.current_mode)
        tr.deltas.append(dw.delta)
        topo = spec.topology(dw.current_mode)
        xg = np.concatenate([x[i] for i in net.indices])
        try:
            sol = solve_central_ocp(xg, dw.current_mode, dw.delta, design)
            ug = sol.nominal_inputs[0]
            feasible = True
        except LocalOCPInfeasible as exc:
            ug = project_onto(design.U, design.K @ xg)
            feasible = False
            sol = None
            if tr.status == RunStatus.OK:
                _fail(tr, RunStatus.INFEASIBLE, f"t={t}: {exc}", step=t)
        inputs = {}
        for k, i in enumerate(net.indices):
            inputs[i] = ug[uo[k] : uo[k + 1]]
            tr.u[i][t] = inputs[i]
            tr.xhat[i][t] = x[i]
            tr.feasible[i][t] = feasible
            if sol is not None:
                tr.cost[i][t] = sol.cost
                tr.solve_ms[i][t] = sol.solve_ms
                tr.plans[i][t] = LocalSolution(
                    x[i].copy(),
                    sol.nominal_states[:, xo[k] : xo[k + 1]],
                    sol.nominal_inputs[:, uo[k] : uo[k + 1]],
                    sol.cost,
                    True,
                    sol.solve_ms,
                )
        x = plant_step(net, x, inputs, topo)
        for i in net.indices:
            tr.x[i][t + 1] = x[i]
    return tr


def run_strategy(spec: ExperimentSpec, strategy: Strategy | str, designs=None) -> SimulationTrace:
    strategy = Strategy(strategy)
    if strategy == Strategy.DSWMPC:
        return run_dswmpc(spec, designs)
    if strategy == Strategy.DESWMPC:
        return run_deswmpc(spec, designs)
    return run_cswmpc(spec, designs)


# ---------------------------------------------------------------------------
# reports


def sse_report(trace: SimulationTrace) -> dict:
    """Sum over ``t = 0..T_sim`` of squared state components.

    Returns per-component sums, per-subsystem totals and the grand total.
    """
    per_state = {}
    per_sub = {}
    for i in trace.indices:
        X = trace.x[i]
        comp = np.nansum(X**2, axis=0)
        per_state[i] = [float(v) for v in comp]
        per_sub[i] = float(comp.sum())
    return {"per_state": per_state, "per_subsystem": per_sub, "total": float(sum(per_sub.values()))}


@dataclass
class CheckResult:
    passed: bool
    first_violation: tuple | None = None
    skipped: bool = False
    detail: str | None = None

    def as_dict(self) -> dict:
        return {
            "pass": self.passed,
            "first_violation": None if self.first_violation is None else list(self.first_violation),
            "skipped": self.skipped,
            "detail": self.detail,
        }


def audit_trace(trace: SimulationTrace, spec: ExperimentSpec, designs=None,
                tol: float = 1e-6) -> dict:
    """Per-step property checks of a recorded run.

    Checks state and input constraints, tube membership, reference fidelity,
    dwell-time validity of the realized signal and terminal membership of the
    nominal plans.  Properties that do not apply to the strategy are marked
    ``skipped``.
    """
    net = spec.network
    T = len(trace.modes)
    out = {}

    def first(pred_iter):
        for key in pred_iter:
            return key
        return None

    bad = first(
        (t, i)
        for t in range(T + 1)
        for i in trace.indices
        if not np.all(np.isnan(trace.x[i][t]))
        and not net[i].X.contains(trace.x[i][t], tol=tol)
    )
    out["state_constraints"] = CheckResult(bad is None, bad)
    bad = first(
        (t, i)
        for t in range(T)
        for i in trace.indices
        if not net[i].U.contains(trace.u[i][t], tol=tol)
    )
    out["input_constraints"] = CheckResult(bad is None, bad)

    local = designs is not None and trace.strategy != Strategy.CSWMPC
    if local:
        bad = first(
            (t, i)
            for t in range(T)
            for i in trace.indices
            if trace.feasible[i][t]
            and not designs[i].for_mode(trace.modes[t]).Z.contains(
                trace.x[i][t] - trace.xhat[i][t], tol=tol
            )
        )
        out["tube_membership"] = CheckResult(bad is None, bad)
    else:
        out["tube_membership"] = CheckResult(True, skipped=True, detail="no tube")

    if local and trace.strategy == Strategy.DSWMPC:
        viol = None
        for t in range(T):
            for i in trace.indices:
                ref = trace.refs[i][t]
                if ref is None or not designs[i].coordinated:
                    continue
                d = designs[i]
                if not (d.E.contains(trace.x[i][t] - ref.states[0], tol=tol)
                        and d.Eu.contains(trace.u[i][t] - ref.inputs[0], tol=tol)):
                    viol = (t, i)
                    break
            if viol:
                break
        out["reference_fidelity"] = CheckResult(viol is None, viol)
    else:
        out["reference_fidelity"] = CheckResult(True, skipped=True, detail="no references")

    chk = validate_signal(trace.modes, spec.signal.graph) if T else None
    out["dwell_time"] = CheckResult(
        chk is None or chk.valid,
        None if chk is None or chk.valid else (chk.index, chk.kind),
    )

    if designs is not None or trace.strategy == Strategy.CSWMPC:
        viol = None
        for t in range(T):
            for k, i in enumerate(trace.indices):
                plan = trace.plans[i][t]
                if plan is None or trace.strategy == Strategy.CSWMPC:
                    continue
                Tset = designs[i].for_mode(trace.modes[t]).T
                for kk in range(max(trace.deltas[t], 0), designs[i].N + 1):
                    if not Tset.contains(plan.nominal_states[kk], tol=tol):
                        viol = (t, i)
                        break
                if viol:
                    break
            if viol:
                break
        if trace.strategy == Strategy.CSWMPC and designs is not None:
            viol = _central_terminal_violation(trace, designs, tol)
        out["terminal_membership"] = CheckResult(viol is None, viol)
    else:
        out["terminal_membership"] = CheckResult(True, skipped=True, detail="no design given")

    return out


def _central_terminal_violation(trace, design: CentralDesign, tol):
    for t in range(len(trace.modes)):
        plans = [trace.plans[i][t] for i in trace.indices]
        if any(p is None for p in plans):
            continue
        states = np.hstack([p.nominal_states for p in plans])
        Tset = design.T[trace.modes[t]]
        for kk in range(max(trace.deltas[t], 0), design.N + 1):
            if not Tset.contains(states[kk], tol=tol):
                return (t, None)
    return None


def audit_passed(audit: Mapping) -> bool:
    return all(c.passed for c in audit.values())


@dataclass
class RunResult:
    strategy: Strategy
    trace: SimulationTrace
    designs: object = None
    audit: dict | None = None
    sse: dict | None = None
    wall_s: float = 0.0


def execute(spec: ExperimentSpec, strategy: Strategy | str,
            audit_tol: float = 1e-6) -> RunResult:
    """Design, simulate, audit and report one strategy.

    The decentralized baseline has no way to act when its tightened sets are
    empty, so for it design-stage emptiness is recorded as infeasibility at
    the first step.  For the other strategies it is a design failure.
    """
    strategy = Strategy(strategy)
    spec = spec.for_strategy(strategy)
    t0 = time.perf_counter()
    designs = None
    tr = _empty_trace(spec, strategy)
    try:
        if strategy == Strategy.DSWMPC:
            designs = design_dswmpc(spec)
        elif strategy == Strategy.DESWMPC:
            designs = design_deswmpc(spec)
        else:
            designs = design_cswmpc(spec)
    except RefusalError as exc:
        _fail(tr, RunStatus.REFUSED, str(exc))
    except (DesignError, NotConvergedError) as exc:
        if strategy == Strategy.DESWMPC:
            _fail(tr, RunStatus.INFEASIBLE, f"no feasible control action: {exc}", step=0)
        else:
            _fail(tr, RunStatus.DESIGN_FAILURE, str(exc))
    if tr.status != RunStatus.OK:
        return RunResult(strategy, tr, None, None, None, time.perf_counter() - t0)
    tr = run_strategy(spec, strategy, designs)
    audit = audit_trace(tr, spec, designs, tol=audit_tol)
    sse = sse_report(tr)
    return RunResult(strategy, tr, designs, audit, sse, time.perf_counter() - t0)
