import copy
import dataclasses

import numpy as np
import pytest

from dswmpc.config import load_config
from dswmpc.geometry import Polytope
from dswmpc.invariants import SwitchGraph
from dswmpc.model import ModeTopology, NetworkModel, Subsystem, SwitchingSignal, Visibility
from dswmpc.orchestrator import (
    ControllerSettings,
    ExperimentSpec,
    RunStatus,
    SimulationTrace,
    Strategy,
    audit_passed,
    audit_trace,
    design_dswmpc,
    execute,
    run_dswmpc,
    sse_report,
    traces_equal,
)

A_DI = [[1.0, 1.0], [0.0, 1.0]]
B_DI = [[0.5], [1.0]]
X = Polytope.box([-1.2, -1.2], [1.0, 1.0])
U = Polytope.symmetric_box(0.5, 1)


def small_spec(n_sub=1, couple=0.0, x0=None, T=10):
    subs = {}
    for i in range(1, n_sub + 1):
        cpl = {}
        if couple and n_sub > 1:
            cpl = {j: (couple * np.eye(2), None) for j in range(1, n_sub + 1) if j != i}
        subs[i] = Subsystem(i, A_DI, B_DI, X, U, cpl)
    net = NetworkModel(subs)
    nbrs = {i: sorted(net[i].couplings) for i in net.indices}
    graph = SwitchGraph.cycle([1], 3)
    x0 = x0 or {i: np.array([-0.55, 0.9]) * (0.8 ** (i - 1)) for i in net.indices}
    return ExperimentSpec(net, {1: ModeTopology(1, nbrs)}, SwitchingSignal([(0, 1)], graph),
                          T, x0, ControllerSettings(N=5, Eu_halfwidth=0.1), name="small")


@pytest.fixture(scope="module")
def ex1():
    return load_config("example1").to_spec()


@pytest.fixture(scope="module")
def ex1_run(ex1):
    return execute(ex1, Strategy.DSWMPC)


# ------------------------------------------------------------------ reductions


def test_single_subsystem_strategies_coincide():
    spec = small_spec()
    runs = {s: execute(spec, s) for s in Strategy}
    for r in runs.values():
        assert r.trace.ok and audit_passed(r.audit)
    base = runs[Strategy.DSWMPC].trace
    for s in (Strategy.CSWMPC, Strategy.DESWMPC):
        assert traces_equal(base, runs[s].trace, tol=1e-8)


def test_decoupled_network_local_strategies_coincide():
    spec = small_spec(n_sub=2)
    a = execute(spec, Strategy.DSWMPC).trace
    b = execute(spec, Strategy.DESWMPC).trace
    assert a.ok and b.ok
    assert traces_equal(a, b, tol=1e-12)


def test_zero_initial_state_stays_at_origin(ex1):
    spec = dataclasses.replace(ex1, x0={i: np.zeros(2) for i in ex1.network.indices})
    tr = execute(spec, Strategy.DSWMPC).trace
    assert tr.ok
    for i in tr.indices:
        assert np.max(np.abs(tr.x[i])) <= 1e-12
        assert np.max(np.abs(tr.u[i])) <= 1e-12


# ------------------------------------------------------------------ bundled experiment


def test_bundled_run_is_feasible_and_passes_audit(ex1_run):
    tr = ex1_run.trace
    assert tr.ok and tr.initial_condition_ok
    assert all(tr.feasible[i].all() for i in tr.indices)
    assert audit_passed(ex1_run.audit)
    assert tr.modes == [1] * 5 + [2] * 5 + [3] * 5
    for i in tr.indices:
        assert tr.x[i].shape == (16, 2) and tr.u[i].shape == (15, 1)


def test_run_is_deterministic(ex1, ex1_run):
    again = execute(ex1, Strategy.DSWMPC).trace
    assert traces_equal(ex1_run.trace, again, tol=0.0, fields=("x", "u", "xhat", "cost"))


def test_forged_input_violation_is_flagged(ex1, ex1_run):
    tr = copy.deepcopy(ex1_run.trace)
    tr.u[1][3] = [0.6]
    audit = audit_trace(tr, ex1, ex1_run.designs)
    assert not audit["input_constraints"].passed
    assert audit["input_constraints"].first_violation == (3, 1)
    assert not audit_passed(audit)


def test_forged_state_violation_is_flagged(ex1, ex1_run):
    tr = copy.deepcopy(ex1_run.trace)
    tr.x[2][7] = [1.5, 0.0]
    audit = audit_trace(tr, ex1, ex1_run.designs)
    assert audit["state_constraints"].first_violation == (7, 2)
    assert not audit["tube_membership"].passed


def test_forged_dwell_violation_is_flagged(ex1, ex1_run):
    tr = copy.deepcopy(ex1_run.trace)
    tr.modes = [1, 1, 2] + tr.modes[3:]
    audit = audit_trace(tr, ex1, None)
    assert not audit["dwell_time"].passed
    assert audit["dwell_time"].first_violation == (2, "dwell")


def test_audit_skips_inapplicable_checks(ex1):
    spec = small_spec()
    r = execute(spec, Strategy.CSWMPC)
    assert r.audit["tube_membership"].skipped
    assert r.audit["reference_fidelity"].skipped


# ------------------------------------------------------------------ failures


def test_central_controller_refuses_without_known_modes():
    cfg = load_config("example3")
    r = execute(cfg.to_spec(), Strategy.CSWMPC)
    assert r.trace.status == RunStatus.REFUSED
    assert r.trace.cause == "modes not enumerable"


def test_decentralized_emptiness_is_runtime_infeasibility():
    cfg = load_config("example3")
    r = execute(cfg.to_spec(), Strategy.DESWMPC)
    assert r.trace.status == RunStatus.INFEASIBLE
    assert r.trace.failure_step == 0
    assert "no feasible control action" in r.trace.detail


def test_oversized_tube_is_a_design_failure():
    spec = small_spec(n_sub=2, couple=0.3)
    spec.settings = dataclasses.replace(spec.settings, E_halfwidth=1.0, Eu_halfwidth=0.5)
    r = execute(spec, Strategy.DSWMPC)
    assert r.trace.status == RunStatus.DESIGN_FAILURE
    assert r.trace.cause == "design-stage emptiness"


# ------------------------------------------------------------------ experiment helpers


def test_worst_case_designs_share_one_bundle():
    spec = load_config("example2").to_spec()
    assert spec.visibility == Visibility.MODES_RESTRICTED and spec.worst_case
    designs = design_dswmpc(spec.for_strategy(Strategy.DSWMPC))
    for d in designs.values():
        assert len(d.sets) == 1
        assert d.for_mode(1) is d.for_mode(3)
    # realized topology of mode 2 respects the allowable sets
    topo = spec.topology(2)
    for i in spec.network.indices:
        assert topo.neighbors(i) <= spec.allowable_for(i)


def test_strategy_overrides_apply_only_to_their_strategy():
    spec = load_config("example1").to_spec()
    de = spec.for_strategy(Strategy.DESWMPC)
    assert np.allclose(de.weights(1)[1], [[3.0]])
    assert np.allclose(spec.for_strategy(Strategy.DSWMPC).weights(1)[1], [[1.0]])


def test_consumers():
    assert not small_spec().consumers(1)
    assert small_spec(n_sub=2, couple=0.05).consumers(1)
    assert not small_spec(n_sub=2).consumers(2)


def test_run_without_designs_builds_them():
    tr = run_dswmpc(small_spec(T=3))
    assert tr.ok and len(tr.modes) == 3


# ------------------------------------------------------------------ SSE


def test_sse_by_hand():
    tr = SimulationTrace(Strategy.CSWMPC, 2, [1, 2])
    tr.x = {1: np.array([[-0.55, 0.9], [0.1, -0.2], [0.0, 0.0]]),
            2: np.array([[1.0, 0.0], [np.nan, np.nan], [np.nan, np.nan]])}
    rep = sse_report(tr)
    assert np.allclose(rep["per_state"][1], [0.3025 + 0.01, 0.81 + 0.04])
    assert np.isclose(rep["per_subsystem"][2], 1.0)
    assert np.isclose(rep["total"], 0.3125 + 0.85 + 1.0)


def test_sse_counts_initial_state(ex1_run):
    rep = ex1_run.sse
    first = ex1_run.trace.x[1][0]
    assert np.allclose(first, [-0.55, 0.9])
    assert rep["per_state"][1][0] >= 0.3025 and rep["per_state"][1][1] >= 0.81
