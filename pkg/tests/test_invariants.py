import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dswmpc.geometry import Polytope, equals, is_subset, support
from dswmpc.invariants import (
    EmptyInvariantSetError,
    InvariantSetError,
    ModeDynamics,
    SwitchGraph,
    initial_condition_ok,
    max_control_invariant,
    mrpi_approx,
    pre_k,
    pre_set,
    rpi_certificate,
    switch_rci,
    switch_rci_violations,
)
from oracles import pre_k_member_lp, pre_membership_scalar_input, switched_viability_1d

BOX1 = Polytope.symmetric_box(1.0, 1)


def scalar(a, b=1.0, x=1.0, u=0.5):
    return ModeDynamics([[a]], [[b]], Polytope.symmetric_box(x, 1), Polytope.symmetric_box(u, 1))


def interval(P):
    return -support(P, [-1.0]), support(P, [1.0])


def check_against_grid(P, truth, pts, tol=1e-7):
    for x, t in zip(pts, truth):
        if t:
            assert P.contains(x, tol=tol), x
        else:
            assert not P.contains(x, tol=-tol), x


# ------------------------------------------------------------------ Pre


def test_pre_with_identity_and_no_input_is_intersection():
    X = Polytope.symmetric_box(2.0, 2)
    S = Polytope.box([-1, 0], [0.5, 3])
    dyn = ModeDynamics(np.eye(2), np.zeros((2, 1)), X, Polytope.symmetric_box(1.0, 1))
    assert equals(pre_set(S, dyn), S & X)


def test_pre_of_integrator_is_widened_target():
    dyn = ModeDynamics([[1.0]], [[1.0]], Polytope.symmetric_box(5.0, 1), Polytope.symmetric_box(1.0, 1))
    P = pre_set(Polytope.box([0.0], [0.0]), dyn)
    assert np.allclose(interval(P), (-1.0, 1.0))


def test_pre_double_integrator_matches_grid_oracle():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5], [1.0]])
    X = Polytope.symmetric_box(1.0, 2)
    T = Polytope.symmetric_box(0.4, 2)
    dyn = ModeDynamics(A, B, X, Polytope.symmetric_box(0.3, 1))
    P = pre_set(T, dyn)
    g = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.01), 10)
    pts = np.array([(x1, x2) for x1 in g for x2 in g])
    truth = pre_membership_scalar_input(A, B, (X.A, X.b), (-0.3, 0.3), (T.A, T.b), pts)
    assert truth.any() and not truth.all()
    check_against_grid(P, truth, pts)


def test_pre_k_two_steps_matches_lp_oracle():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5], [1.0]])
    X = Polytope.symmetric_box(1.0, 2)
    U = Polytope.symmetric_box(0.3, 1)
    T = Polytope.symmetric_box(0.2, 2)
    P = pre_k(T, ModeDynamics(A, B, X, U), 2)
    g = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.05), 10)
    pts = np.array([(x1, x2) for x1 in g for x2 in g])
    truth = np.array([pre_k_member_lp(A, B, (X.A, X.b), (U.A, U.b), (T.A, T.b), x, 2) for x in pts])
    assert truth.any() and not truth.all()
    check_against_grid(P, truth, pts, tol=1e-6)


def test_pre_k_one_step_equals_pre():
    dyn = scalar(1.3)
    S = Polytope.box([-0.2], [0.6])
    assert equals(pre_k(S, dyn, 1), pre_set(S, dyn))


def test_pre_k_zero_steps_is_target():
    dyn = scalar(1.3)
    S = Polytope.box([-0.2], [3.0])
    assert equals(pre_k(S, dyn, 0), S)
    with pytest.raises(ValueError):
        pre_k(S, dyn, -1)


def test_closed_loop_pre_uses_fixed_gain():
    dyn = scalar(2.0).with_gain([[-1.5]])
    P = pre_set(Polytope.symmetric_box(0.2, 1), dyn)
    # (2 - 1.5) x in [-0.2, 0.2] and |1.5 x| <= 0.5
    assert np.allclose(interval(P), (-1 / 3, 1 / 3))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-2.0, 2.0), lo=st.floats(-0.9, 0.0), hi=st.floats(0.0, 0.9),
       grow=st.floats(0.0, 0.5))
def test_pre_is_monotone(a, lo, hi, grow):
    dyn = scalar(a)
    S = Polytope.box([lo], [hi])
    S2 = Polytope.box([lo - grow], [hi + grow])
    assert is_subset(pre_set(S, dyn), pre_set(S2, dyn), tol=1e-9)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-2.0, 2.0), lo=st.floats(-0.9, 0.0), hi=st.floats(0.0, 0.9))
def test_pre_matches_scalar_oracle(a, lo, hi):
    dyn = scalar(a)
    P = pre_set(Polytope.box([lo], [hi]), dyn)
    pts = np.linspace(-1, 1, 81)[:, None]
    truth = pre_membership_scalar_input([[a]], [1.0], (dyn.X.A, dyn.X.b), (-0.5, 0.5),
                                        (np.array([[1.0], [-1.0]]), np.array([hi, -lo])), pts)
    check_against_grid(P, truth, pts)


# ------------------------------------------------------------------ mRPI


def test_mrpi_zero_dynamics_returns_disturbance():
    W = Polytope.box([-0.1, -0.3], [0.2, 0.1])
    Z = mrpi_approx(np.zeros((2, 2)), W)
    assert equals(Z, W, tol=1e-5)


def test_mrpi_scalar_within_eps_of_exact():
    Z = mrpi_approx([[0.5]], BOX1, eps=0.01)
    lo, hi = interval(Z)
    assert lo <= -2.0 + 1e-9 and hi >= 2.0 - 1e-9
    assert hi <= 2.02 and lo >= -2.02


def test_mrpi_certificate_on_random_stable_systems(rng):
    for _ in range(10):
        M = rng.normal(size=(2, 2))
        F = 0.8 * M / max(abs(np.linalg.eigvals(M)))
        W = Polytope.box(-rng.uniform(0.05, 0.2, 2), rng.uniform(0.05, 0.2, 2))
        Z = mrpi_approx(F, W, eps=1e-3)
        assert rpi_certificate(Z, F, W, tol=1e-7)
        assert is_subset(W, Z, tol=1e-9)


def test_mrpi_flat_disturbance_is_still_invariant():
    W = Polytope.box([-0.1, 0.0], [0.1, 0.0])
    F = np.array([[0.5, 0.2], [0.1, 0.4]])
    Z = mrpi_approx(F, W)
    assert rpi_certificate(Z, F, W, tol=1e-7)


def test_mrpi_rejects_bad_inputs():
    with pytest.raises(InvariantSetError):
        mrpi_approx([[1.2]], BOX1)
    with pytest.raises(InvariantSetError):
        mrpi_approx([[0.5]], Polytope.box([0.1], [0.3]))
    with pytest.raises(ValueError):
        mrpi_approx([[0.5]], BOX1, eps=0.0)


def test_mrpi_of_origin_is_origin():
    Z = mrpi_approx(np.eye(2) * 0.3, Polytope.origin(2))
    assert np.allclose(Z.vertices(), 0.0)


# ------------------------------------------------------------------ control invariance


@pytest.mark.parametrize("a, expected", [(1.0, 1.0), (2.0, 0.5), (1.5, 1.0)])
def test_max_control_invariant_scalar(a, expected):
    C = max_control_invariant(scalar(a))
    assert np.allclose(interval(C), (-expected, expected), atol=1e-9)


def test_max_control_invariant_is_invariant():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    dyn = ModeDynamics(A, [[0.5], [1.0]], Polytope.symmetric_box(1.0, 2), Polytope.symmetric_box(0.3, 1))
    C = max_control_invariant(dyn)
    assert is_subset(C, pre_set(C, dyn), tol=1e-8)
    assert is_subset(C, dyn.X)


# ------------------------------------------------------------------ switch-RCI


def test_single_mode_family_equals_max_control_invariant():
    dyn = scalar(2.0)
    res = switch_rci({1: dyn}, SwitchGraph.cycle([1], 1))
    assert res.converged
    assert equals(res.sets[1], max_control_invariant(dyn))


def test_identical_modes_share_the_single_mode_set():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    dyn = ModeDynamics(A, [[0.5], [1.0]], Polytope.symmetric_box(1.0, 2), Polytope.symmetric_box(0.3, 1))
    res = switch_rci({1: dyn, 2: dyn}, SwitchGraph.complete([1, 2], 1))
    C = max_control_invariant(dyn)
    assert equals(res.sets[1], C, tol=1e-7) and equals(res.sets[2], C, tol=1e-7)


def test_two_scalar_modes_match_viability_oracle():
    dyns = {1: scalar(1.0), 2: scalar(2.0)}
    graph = SwitchGraph.complete([1, 2], 1)
    res = switch_rci(dyns, graph, keep_history=True)
    for m in (1, 2):
        assert np.allclose(interval(res.sets[m]), (-0.5, 0.5), atol=1e-9)
    xs, V = switched_viability_1d({1: 1.0, 2: 2.0}, (-1, 1), (-0.5, 0.5), graph.edges)
    for m in (1, 2):
        check_against_grid(res.sets[m], V[m], xs[:, None])
    # iterates only shrink
    for prev, cur in zip(res.history, res.history[1:]):
        for m in (1, 2):
            assert is_subset(cur[m], prev[m], tol=1e-9)
    assert switch_rci_violations(res, dyns, graph) == []


def test_longer_dwell_enlarges_transition_preimage():
    dyns = {1: scalar(1.0), 2: scalar(1.2, u=0.2)}
    short = switch_rci(dyns, SwitchGraph.complete([1, 2], 1))
    long = switch_rci(dyns, SwitchGraph.complete([1, 2], 3))
    assert switch_rci_violations(long, dyns, SwitchGraph.complete([1, 2], 3)) == []
    assert is_subset(short.sets[1], long.sets[1], tol=1e-9)


def test_empty_family_is_reported_with_mode():
    dyns = {1: scalar(1.0), 2: scalar(3.0, u=0.01)}
    seeds = {1: BOX1, 2: Polytope.box([0.5], [1.0])}
    with pytest.raises(EmptyInvariantSetError) as err:
        switch_rci(dyns, SwitchGraph.complete([1, 2], 1), seeds=seeds)
    assert err.value.mode in (1, 2)


def test_switch_graph_rejects_bad_input():
    with pytest.raises(ValueError):
        SwitchGraph((1, 2), {(1, 3)}, {1: 1, 2: 1})
    with pytest.raises(ValueError):
        SwitchGraph((1,), {(1, 1)}, {1: 0})


# ------------------------------------------------------------------ initial condition


@pytest.fixture(scope="module")
def two_mode_family():
    dyns = {1: scalar(1.0), 2: scalar(2.0)}
    return switch_rci(dyns, SwitchGraph.complete([1, 2], 1)), dyns


@pytest.mark.parametrize("x0, mode, delta, expected", [
    (0.4, 1, 0, True),
    (0.7, 1, 1, True),
    (0.7, 2, 1, False),
    (0.7, 2, 0, False),
    (0.45, 2, 1, True),
])
def test_initial_condition_membership(two_mode_family, x0, mode, delta, expected):
    C, dyns = two_mode_family
    assert initial_condition_ok(C, dyns, [x0], mode, delta) is expected
