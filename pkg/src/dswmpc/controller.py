"""Tube-based switched MPC for one subsystem, plus the centralized baseline.

Offline, each subsystem gets a stabilizing gain, a terminal weight and, per
mode, an RPI tube ``Z``, tightened sets and a terminal set from the switch-RCI
iteration.  Online, a condensed QP over the free initial nominal state and the
nominal inputs yields the implicit law ``u = u_hat + K (x - x_hat)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.linalg import solve_discrete_are, solve_discrete_lyapunov
from scipy.optimize import linprog

from .geometry import (
    SET_TOL,
    Polytope,
    affine_image,
    canonicalize,
    cartesian_product,
    is_subset,
    minkowski_sum,
    pontryagin_diff,
)
from .invariants import (
    ModeDynamics,
    SwitchGraph,
    is_schur,
    max_control_invariant,
    mrpi_approx,
    rpi_certificate,
    switch_rci,
    switch_rci_violations,
)
from .qp import QPError, QPInfeasibleError, solve_qp


class DesignError(RuntimeError):
    """Offline design produced an empty or invalid set."""

    def __init__(self, message: str, subsystem=None, mode=None, set_name=None):
        super().__init__(message)
        self.subsystem = subsystem
        self.mode = mode
        self.set_name = set_name


class LocalOCPInfeasible(RuntimeError):
    """The local optimal control problem has no solution.

    ``family`` names the constraint family whose addition made the problem
    infeasible (families are added in :data:`CONSTRAINT_FAMILIES` order).
    """

    def __init__(self, message: str, family: str | None = None):
        super().__init__(message)
        self.family = family


CONSTRAINT_FAMILIES = (
    "tube",
    "tightened_state",
    "tightened_input",
    "terminal",
    "consistency_state",
    "consistency_input",
)


# ---------------------------------------------------------------------------
# gains and weights


def design_feedback_gain(A, B, Q, R) -> np.ndarray:
    """Infinite-horizon LQ gain with the convention ``u = K x``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not np.any(B):
        if is_schur(A):
            return np.zeros((B.shape[1], A.shape[0]))
        raise DesignError("pair (A, B) is not stabilizable: B = 0 and A is not Schur")
    try:
        P = solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DesignError(f"Riccati equation failed: {exc}") from exc
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if not is_schur(A + B @ K):
        raise DesignError("LQ gain does not stabilize the pair (A, B)")
    return K


def terminal_weight(F, Q, R, K) -> np.ndarray:
    """``P`` solving ``F' P F - P = -(Q + K' R K)``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if not is_schur(F):
        raise DesignError("closed-loop matrix is not Schur")
    P = solve_discrete_lyapunov(F.T, Q + K.T @ R @ K)
    return 0.5 * (P + P.T)


# ---------------------------------------------------------------------------
# per-mode sets


@dataclass
class ModeSets:
    W: Polytope
    Z: Polytope
    KZ: Polytope
    Xhat: Polytope
    Uhat: Polytope
    dE: Polytope
    dU: Polytope
    seed: Polytope | None = None
    T: Polytope | None = None


def compute_mode_sets(A, B, K, X: Polytope, U: Polytope, W: Polytope,
                      E: Polytope, Eu: Polytope, eps: float = 1e-3,
                      subsystem=None, mode=None) -> ModeSets:
    """RPI tube for disturbance ``W`` and the sets tightened by it."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    F = A + B @ K
    Z = mrpi_approx(F, W, eps)
    KZ = affine_image(Z, K)
    sets = ModeSets(
        W=W,
        Z=Z,
        KZ=KZ,
        Xhat=pontryagin_diff(X, Z),
        Uhat=pontryagin_diff(U, KZ),
        dE=pontryagin_diff(E, Z),
        dU=pontryagin_diff(Eu, KZ),
    )
    for name in ("Xhat", "Uhat", "dE", "dU"):
        if getattr(sets, name).is_empty:
            raise DesignError(
                f"tightened set {name} is empty (subsystem {subsystem}, mode {mode})",
                subsystem=subsystem,
                mode=mode,
                set_name=name,
            )
    return sets


def terminal_region_seed(A, B, K, Xhat: Polytope, Uhat: Polytope,
                         max_iter: int = 100) -> Polytope:
    """Maximal invariant set of ``x+ = (A + B K) x`` in ``Xhat`` with ``K x`` in ``Uhat``."""
    dyn = ModeDynamics(A, B, Xhat, Uhat, K)
    seed = max_control_invariant(dyn, max_iter=max_iter)
    if seed.is_empty:
        raise DesignError("terminal region seed is empty", set_name="seed")
    return seed


def terminal_switch_sets(seeds: Mapping, dyns: Mapping, graph: SwitchGraph,
                         max_iter: int = 100) -> dict:
    """Switch-RCI family started from the terminal seeds."""
    result = switch_rci(dyns, graph, seeds, max_iter=max_iter)
    return dict(result.sets)


# ---------------------------------------------------------------------------
# design bundle


@dataclass
class ControllerDesign:
    """Gains, weights and mode-indexed sets of one local controller.

    ``mode_key`` maps a global mode to the key of its set bundle in ``sets``;
    with worst-case disturbance sets every global mode shares one bundle.
    """

    index: int
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N: int
    X: Polytope
    U: Polytope
    E: Polytope
    Eu: Polytope
    couplings: dict
    sets: dict
    mode_key: dict
    graph: SwitchGraph
    coordinated: bool = True

    @property
    def F(self) -> np.ndarray:
        return self.A + self.B @ self.K

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def for_mode(self, mode) -> ModeSets:
        return self.sets[self.mode_key[mode]]

    def certificates(self, tol: float = SET_TOL) -> dict:
        """Tube and tightening certificates per set bundle."""
        out = {}
        for key, s in self.sets.items():
            out[key] = {
                "rpi": rpi_certificate(s.Z, self.F, s.W, tol),
                "state_budget": is_subset(minkowski_sum(s.dE, s.Z), self.E, tol),
                "input_budget": is_subset(minkowski_sum(s.dU, s.KZ), self.Eu, tol),
                "terminal_in_Xhat": s.T is not None and is_subset(s.T, s.Xhat, tol),
            }
        dyns = self.tightened_dynamics()
        from .invariants import SwitchRciResult

        fam = SwitchRciResult({k: s.T for k, s in self.sets.items()}, 0, True)
        bad = switch_rci_violations(fam, dyns, self.graph, tol)
        for key in self.sets:
            out[key]["switch_rci"] = not any(b[0] == key for b in bad)
        return out

    def tightened_dynamics(self) -> dict:
        return {
            k: ModeDynamics(self.A, self.B, s.Xhat, s.Uhat) for k, s in self.sets.items()
        }


def build_design(index: int, A, B, X: Polytope, U: Polytope, couplings: Mapping,
                 disturbance_sets: Mapping, mode_key: Mapping, graph: SwitchGraph,
                 N: int, Q=None, R=None, E: Polytope | None = None,
                 Eu: Polytope | None = None, eps: float = 1e-3,
                 coordinated: bool = True, max_iter: int = 100) -> ControllerDesign:
    """Full offline design of one local controller.

    ``disturbance_sets`` maps each set-bundle key (the nodes of ``graph``) to
    its disturbance set ``W``; ``mode_key`` maps global modes to those keys.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = A.shape[0], B.shape[1]
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.eye(m) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    K = design_feedback_gain(A, B, Q, R)
    P = terminal_weight(A + B @ K, Q, R, K)
    E = Polytope.symmetric_box(0.1, n) if E is None else E
    Eu = Polytope.symmetric_box(0.05, m) if Eu is None else Eu
    sets = {}
    for key in graph.modes:
        try:
            sets[key] = compute_mode_sets(
                A, B, K, X, U, disturbance_sets[key], E, Eu, eps, subsystem=index, mode=key
            )
            sets[key].seed = terminal_region_seed(A, B, K, sets[key].Xhat, sets[key].Uhat, max_iter)
        except DesignError as exc:
            exc.subsystem, exc.mode = index, key
            raise
    dyns = {k: ModeDynamics(A, B, s.Xhat, s.Uhat) for k, s in sets.items()}
    try:
        T = terminal_switch_sets({k: s.seed for k, s in sets.items()}, dyns, graph, max_iter)
    except Exception as exc:  # empty family or no convergence
        raise DesignError(f"terminal switch sets of subsystem {index}: {exc}",
                          subsystem=index, set_name="T") from exc
    for k in sets:
        sets[k].T = T[k]
    return ControllerDesign(
        index=index, A=A, B=B, K=K, Q=Q, R=R, P=P, N=int(N), X=X, U=U, E=E, Eu=Eu,
        couplings=dict(couplings), sets=sets, mode_key=dict(mode_key), graph=graph,
        coordinated=coordinated,
    )


# ---------------------------------------------------------------------------
# online problem


@dataclass
class ReferenceTrajectory:
    """Broadcast plan: ``states[k]`` and ``inputs[k]`` refer to time ``t + k``."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(len(self.states), -1)
        if len(self.states) != len(self.inputs):
            raise ValueError("reference states and inputs differ in length")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.inputs))):
            raise ValueError("reference contains non-finite entries")

    @classmethod
    def zeros(cls, N: int, n_x: int, n_u: int) -> "ReferenceTrajectory":
        return cls(np.zeros((N, n_x)), np.zeros((N, n_u)))

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class LocalSolution:
    nominal_initial: np.ndarray
    nominal_states: np.ndarray
    nominal_inputs: np.ndarray
    cost: float
    feasible: bool
    solve_ms: float = 0.0
    iterations: int = 0


def _prediction_maps(A, B, N, offsets):
    """``x_hat[k] = Phi[k] z + phi[k]`` with ``z = (x_hat0, u_0..u_{N-1})``."""
    n, m = B.shape
    nz = n + m * N
    Phi = np.zeros((N + 1, n, nz))
    phi = np.zeros((N + 1, n))
    Phi[0, :, :n] = np.eye(n)
    for k in range(N):
        Phi[k + 1] = A @ Phi[k]
        Phi[k + 1][:, n + k * m : n + (k + 1) * m] += B
        phi[k + 1] = A @ phi[k] + offsets[k]
    return Phi, phi


def _injection(design: ControllerDesign, neighbor_refs: Mapping, N: int) -> np.ndarray:
    c = np.zeros((N, design.n_x))
    for j in sorted(neighbor_refs):
        Aij, Bij = design.couplings[j]
        ref = neighbor_refs[j]
        for k in range(N):
            if Aij is not None:
                c[k] += Aij @ ref.states[k]
            if Bij is not None:
                c[k] += Bij @ ref.inputs[k]
    return c


def _families(design, sets: ModeSets, x, own_ref, delta, Phi, phi, use_refs):
    """Constraint rows ``G z <= h`` grouped by family."""
    n, m, N = design.n_x, design.n_u, design.N
    nz = n + m * N
    sel_u = [np.zeros((m, nz)) for _ in range(N)]
    for k in range(N):
        sel_u[k][:, n + k * m : n + (k + 1) * m] = np.eye(m)
    fam = {}
    Z = sets.Z
    fam["tube"] = (-Z.A @ Phi[0], Z.b - Z.A @ x)
    fam["tightened_state"] = (
        np.vstack([sets.Xhat.A @ Phi[k] for k in range(N)]),
        np.concatenate([sets.Xhat.b - sets.Xhat.A @ phi[k] for k in range(N)]),
    )
    fam["tightened_input"] = (
        np.vstack([sets.Uhat.A @ sel_u[k] for k in range(N)]),
        np.concatenate([sets.Uhat.b for _ in range(N)]),
    )
    ks = range(max(int(delta), 0), N + 1)
    T = sets.T
    fam["terminal"] = (
        np.vstack([T.A @ Phi[k] for k in ks]).reshape(-1, nz),
        np.concatenate([T.b - T.A @ phi[k] for k in ks]),
    )
    if use_refs:
        dE, dU = sets.dE, sets.dU
        fam["consistency_state"] = (
            np.vstack([dE.A @ Phi[k] for k in range(N)]),
            np.concatenate([dE.b - dE.A @ (phi[k] - own_ref.states[k]) for k in range(N)]),
        )
        fam["consistency_input"] = (
            np.vstack([dU.A @ sel_u[k] for k in range(N)]),
            np.concatenate([dU.b + dU.A @ own_ref.inputs[k] for k in range(N)]),
        )
    return fam


def _feasible(G, h) -> bool:
    if len(h) == 0:
        return True
    res = linprog(np.zeros(G.shape[1]), A_ub=G, b_ub=h, bounds=(None, None), method="highs")
    return res.status == 0


def _diagnose(fam: dict) -> str:
    rows, offs = [], []
    for name in CONSTRAINT_FAMILIES:
        if name not in fam:
            continue
        rows.append(fam[name][0])
        offs.append(fam[name][1])
        if not _feasible(np.vstack(rows), np.concatenate(offs)):
            return name
    return "numerical"


def solve_local_ocp(x, own_ref: ReferenceTrajectory | None, neighbor_refs: Mapping,
                    mode, delta: int, design: ControllerDesign,
                    use_references: bool | None = None) -> LocalSolution:
    """Solve the local tube MPC problem for the current state and mode.

    Decision variables are the initial nominal state and the nominal inputs
    over the horizon.  ``neighbor_refs`` must hold exactly the references of
    the active neighbours; their effect enters the nominal prediction.
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float).reshape(design.n_x)
    N, n, m = design.N, design.n_x, design.n_u
    use_refs = design.coordinated if use_references is None else use_references
    if use_refs and own_ref is None:
        raise ValueError("own reference required when consistency constraints are active")
    for j, ref in neighbor_refs.items():
        if len(ref) < N:
            raise ValueError(f"reference of neighbour {j} is shorter than the horizon")
    if use_refs and len(own_ref) < N:
        raise ValueError("own reference is shorter than the horizon")
    sets = design.for_mode(mode)
    c = _injection(design, neighbor_refs, N)
    Phi, phi = _prediction_maps(design.A, design.B, N, c)

    nz = n + m * N
    H = np.zeros((nz, nz))
    f = np.zeros(nz)
    const = 0.0
    for k in range(N + 1):
        W = design.P if k == N else design.Q
        H += 2.0 * Phi[k].T @ W @ Phi[k]
        f += 2.0 * Phi[k].T @ W @ phi[k]
        const += float(phi[k] @ W @ phi[k])
    for k in range(N):
        idx = slice(n + k * m, n + (k + 1) * m)
        H[idx, idx] += 2.0 * design.R

    fam = _families(design, sets, x, own_ref, delta, Phi, phi, use_refs)
    names = [k for k in CONSTRAINT_FAMILIES if k in fam]
    G = np.vstack([fam[k][0] for k in names])
    h = np.concatenate([fam[k][1] for k in names])
    try:
        res = solve_qp(H, f, G, h)
    except QPInfeasibleError:
        family = _diagnose(fam)
        raise LocalOCPInfeasible(
            f"local problem of subsystem {design.index} infeasible at constraint family "
            f"'{family}'",
            family=family,
        ) from None
    except QPError as exc:
        raise LocalOCPInfeasible(f"solver failure: {exc}", family="numerical") from exc
    z = res.x
    states = np.array([Phi[k] @ z + phi[k] for k in range(N + 1)])
    inputs = z[n:].reshape(N, m)
    return LocalSolution(
        nominal_initial=states[0].copy(),
        nominal_states=states,
        nominal_inputs=inputs,
        cost=float(res.objective + const),
        feasible=True,
        solve_ms=1e3 * (time.perf_counter() - t0),
        iterations=res.iterations,
    )


def control_input(x, solution: LocalSolution, K) -> np.ndarray:
    """Implicit tube law ``u = u_hat(0) + K (x - x_hat(0))``."""
    x = np.asarray(x, dtype=float)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return solution.nominal_inputs[0] + K @ (x - solution.nominal_initial)


def shift_reference(solution: LocalSolution, design: ControllerDesign,
                    mode=None) -> ReferenceTrajectory:
    """Reference for the next step: drop the first sample and append the
    terminal feedback continuation ``u = K x_hat(N)``."""
    xs = solution.nominal_states
    us = solution.nominal_inputs
    N = design.N
    states = xs[1 : N + 1]
    inputs = np.vstack([us[1:], (design.K @ xs[N])[None, :]])
    return ReferenceTrajectory(states.copy(), inputs)


def shift_stale_reference(ref: ReferenceTrajectory, design: ControllerDesign) -> ReferenceTrajectory:
    """Advance an old reference by one step with the feedback continuation."""
    last = ref.states[-1]
    states = np.vstack([ref.states[1:], (design.F @ last)[None, :]])
    inputs = np.vstack([ref.inputs[1:], (design.K @ states[-1])[None, :]])
    return ReferenceTrajectory(states, inputs)


def project_onto(P: Polytope, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``P``."""
    v = np.asarray(v, dtype=float)
    P = canonicalize(P)
    if P.contains(v, tol=0.0):
        return v.copy()
    res = solve_qp(np.eye(len(v)), -v, P.A, P.b)
    return res.x


# ---------------------------------------------------------------------------
# centralized baseline


@dataclass
class CentralDesign:
    """Stacked-plant switched MPC: one model and terminal set per global mode."""

    A: dict
    B: dict
    K: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: dict
    N: int
    X: Polytope
    U: Polytope
    T: dict
    graph: SwitchGraph
    iterations: int = 0


def build_central_design(models: Mapping, Ks, Qs, Rs, Xs, Us, graph: SwitchGraph,
                         N: int, max_iter: int = 100) -> CentralDesign:
    """Centralized design from per-mode stacked ``(A, B)`` models.

    The stacked gain is block diagonal in the local gains; terminal sets
    are the switch-RCI family of the closed loop ``u = K x``.
    """
    from scipy.linalg import block_diag

    K = block_diag(*Ks)
    Q = block_diag(*Qs)
    R = block_diag(*Rs)
    X = cartesian_product(Xs)
    U = cartesian_product(Us)
    A = {m: np.asarray(models[m][0], float) for m in graph.modes}
    B = {m: np.asarray(models[m][1], float) for m in graph.modes}
    P = {}
    dyns = {}
    for mnode in graph.modes:
        F = A[mnode] + B[mnode] @ K
        if not is_schur(F):
            raise DesignError(f"stacked closed loop of mode {mnode} is not Schur", mode=mnode)
        P[mnode] = terminal_weight(F, Q, R, K)
        dyns[mnode] = ModeDynamics(A[mnode], B[mnode], X, U, K)
    try:
        res = switch_rci(dyns, graph, None, max_iter=max_iter)
    except Exception as exc:
        raise DesignError(f"centralized terminal sets: {exc}", set_name="T") from exc
    return CentralDesign(A, B, K, Q, R, P, int(N), X, U, dict(res.sets), graph, res.iterations)


def solve_central_ocp(x, mode, delta: int, design: CentralDesign) -> LocalSolution:
    """Monolithic finite-horizon problem with the mode held over the horizon."""
    t0 = time.perf_counter()
    A, B = design.A[mode], design.B[mode]
    n, m = B.shape
    N = design.N
    x = np.asarray(x, dtype=float).reshape(n)
    nz = m * N
    Phi = np.zeros((N + 1, n, nz))
    phi = np.zeros((N + 1, n))
    phi[0] = x
    for k in range(N):
        Phi[k + 1] = A @ Phi[k]
        Phi[k + 1][:, k * m : (k + 1) * m] += B
        phi[k + 1] = A @ phi[k]
    H = np.zeros((nz, nz))
    f = np.zeros(nz)
    const = 0.0
    for k in range(N + 1):
        Wk = design.P[mode] if k == N else design.Q
        H += 2.0 * Phi[k].T @ Wk @ Phi[k]
        f += 2.0 * Phi[k].T @ Wk @ phi[k]
        const += float(phi[k] @ Wk @ phi[k])
    H += 2.0 * np.kron(np.eye(N), design.R)
    rows, offs = [], []
    for k in range(N):
        rows.append(design.X.A @ Phi[k])
        offs.append(design.X.b - design.X.A @ phi[k])
    for k in range(N):
        sel = np.zeros((m, nz))
        sel[:, k * m : (k + 1) * m] = np.eye(m)
        rows.append(design.U.A @ sel)
        offs.append(design.U.b)
    T = design.T[mode]
    for k in range(max(int(delta), 0), N + 1):
        rows.append(T.A @ Phi[k])
        offs.append(T.b - T.A @ phi[k])
    try:
        res = solve_qp(H, f, np.vstack(rows), np.concatenate(offs))
    except QPError as exc:
        raise LocalOCPInfeasible(f"centralized problem infeasible: {exc}", family="central") from None
    z = res.x
    states = np.array([Phi[k] @ z + phi[k] for k in range(N + 1)])
    return LocalSolution(
        nominal_initial=x.copy(),
        nominal_states=states,
        nominal_inputs=z.reshape(N, m),
        cost=float(res.objective + const),
        feasible=True,
        solve_ms=1e3 * (time.perf_counter() - t0),
        iterations=res.iterations,
    )
