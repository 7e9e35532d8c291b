"""Invariant-set engine: Pre operators, RPI approximation, control-invariant
and switch-RCI fixed points for switched linear dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .geometry import (
    SET_TOL,
    DimensionError,
    GeometryError,
    Polytope,
    affine_image,
    affine_preimage,
    canonicalize,
    equals,
    intersect_all,
    is_subset,
    minkowski_sum,
    project_out,
    support_many,
)

SCHUR_MARGIN = 1e-9


class InvariantSetError(GeometryError):
    pass


class NotConvergedError(InvariantSetError):
    """Fixed-point iteration hit its cap; ``last`` holds the final iterate."""

    def __init__(self, message: str, last=None, iterations: int = 0):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


class EmptyInvariantSetError(InvariantSetError):
    def __init__(self, message: str, mode=None, iterations: int = 0):
        super().__init__(message)
        self.mode = mode
        self.iterations = iterations


def is_schur(F, margin: float = SCHUR_MARGIN) -> bool:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return bool(np.max(np.abs(np.linalg.eigvals(F)), initial=0.0) < 1.0 - margin)


@dataclass(frozen=True)
class ModeDynamics:
    """Linear dynamics ``x+ = A x + B u`` with state and input constraints.

    If ``K`` is given, the input is fixed to ``u = K x`` and the Pre operator
    becomes the closed-loop preimage ``{x in X : (A + B K) x in S, K x in U}``.
    """

    A: np.ndarray
    B: np.ndarray
    X: Polytope
    U: Polytope
    K: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        if self.X.dim != n:
            raise DimensionError(f"X has dim {self.X.dim}, expected {n}")
        if self.U.dim != B.shape[1]:
            raise DimensionError(f"U has dim {self.U.dim}, expected {B.shape[1]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.K is not None:
            K = np.atleast_2d(np.asarray(self.K, dtype=float))
            if K.shape != (B.shape[1], n):
                raise DimensionError(f"K has shape {K.shape}, expected {(B.shape[1], n)}")
            object.__setattr__(self, "K", K)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def with_gain(self, K) -> "ModeDynamics":
        return ModeDynamics(self.A, self.B, self.X, self.U, K)

    def with_constraints(self, X: Polytope, U: Polytope) -> "ModeDynamics":
        return ModeDynamics(self.A, self.B, X, U, self.K)


def pre_set(target: Polytope, dyn: ModeDynamics) -> Polytope:
    """States of ``X`` that some admissible input steers into ``target``."""
    n, m = dyn.n_x, dyn.n_u
    if target.dim != n:
        raise DimensionError(f"target has dim {target.dim}, dynamics have {n}")
    if dyn.U.is_empty:
        raise InvariantSetError("input constraint set is empty")
    if target.is_empty or dyn.X.is_empty:
        return Polytope.empty(n)
    if dyn.K is not None:
        F = dyn.A + dyn.B @ dyn.K
        return intersect_all(
            [dyn.X, affine_preimage(target, F), affine_preimage(dyn.U, dyn.K)]
        )
    T = canonicalize(target)
    rows = np.vstack(
        [
            T.A @ np.hstack([dyn.A, dyn.B]),
            np.hstack([np.zeros((dyn.U.n_rows, n)), dyn.U.A]),
        ]
    )
    offs = np.concatenate([T.b, dyn.U.b])
    lifted = Polytope(rows, offs)
    return intersect_all([project_out(lifted, range(n, n + m)), dyn.X])


def pre_k(target: Polytope, dyn: ModeDynamics, k: int) -> Polytope:
    """k-fold Pre; order zero returns the target itself."""
    if k < 0:
        raise ValueError("pre_k order must be nonnegative")
    S = canonicalize(target)
    for _ in range(k):
        S = pre_set(S, dyn)
        if S.is_empty:
            break
    return S


def _radius_bound(F: np.ndarray, W: Polytope, s: int) -> float:
    n = F.shape[0]
    D = np.vstack([np.eye(n), -np.eye(n)])
    total = np.zeros(2 * n)
    Fk = np.eye(n)
    for _ in range(s):
        total += support_many(W, D @ Fk)
        Fk = F @ Fk
    return float(total.max())


def mrpi_approx(F, W: Polytope, eps: float = 1e-3, max_terms: int = 500,
                inflate: float = 1e-6) -> Polytope:
    """Outer approximation of the minimal RPI set of ``x+ = F x + w``.

    Picks the smallest ``s`` with ``F^s W`` inside ``alpha W`` where ``alpha``
    is small enough that the result lies within ``eps`` of the minimal set,
    then returns ``(1 - alpha)^-1 (W + F W + ... + F^(s-1) W)``.

    A disturbance set without interior is first inflated by a box of
    half-width ``inflate``; the result is still invariant for the original.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    if W.dim != n:
        raise DimensionError(f"W has dim {W.dim}, F is {n}x{n}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not is_schur(F):
        raise InvariantSetError("F is not Schur stable")
    if W.is_empty or not W.is_bounded:
        raise InvariantSetError("W must be nonempty and bounded")
    W = canonicalize(W)
    if not W.contains(np.zeros(n)):
        raise InvariantSetError("W must contain the origin")
    if equals(W, Polytope.origin(n), tol=1e-12):
        return Polytope.origin(n)
    if np.any(W.b <= 1e-12) or not W.is_full_dimensional:
        W = minkowski_sum(W, Polytope.symmetric_box(inflate, n))
    Fs = np.eye(n)
    for s in range(1, max_terms + 1):
        Fs = F @ Fs
        alpha = float(np.max(support_many(W, W.A @ Fs) / W.b))
        if alpha < 1.0 and alpha <= eps / (eps + _radius_bound(F, W, s)):
            break
    else:
        raise NotConvergedError(f"no admissible truncation within {max_terms} terms")
    # Horner form W + F(W + F(W + ...)) avoids the thin sets F^k W
    acc = W
    for _ in range(1, s):
        acc = minkowski_sum(W, affine_image(acc, F))
    return acc.scaled(1.0 / (1.0 - alpha))


def rpi_certificate(Z: Polytope, F, W: Polytope, tol: float = SET_TOL) -> bool:
    """``F Z + W`` inside ``Z``."""
    return is_subset(minkowski_sum(affine_image(Z, F), W), Z, tol)


def max_control_invariant(dyn: ModeDynamics, max_iter: int = 100,
                          tol: float = SET_TOL, start: Polytope | None = None) -> Polytope:
    """Fixed point of ``Omega <- Omega & Pre(Omega)`` started from ``X``."""
    if not dyn.X.is_bounded:
        raise InvariantSetError("state constraint set must be bounded")
    omega = canonicalize(dyn.X if start is None else start)
    for k in range(1, max_iter + 1):
        nxt = intersect_all([omega, pre_set(omega, dyn)])
        if nxt.is_empty:
            return nxt
        if equals(nxt, omega, tol):
            return nxt
        omega = nxt
    raise NotConvergedError(
        f"control-invariant iteration did not converge in {max_iter} steps",
        last=omega,
        iterations=max_iter,
    )


@dataclass
class SwitchGraph:
    """Mode set, allowed transitions and per-mode dwell-times."""

    modes: tuple
    edges: frozenset
    dwell: dict

    def __post_init__(self):
        self.modes = tuple(self.modes)
        self.edges = frozenset((a, b) for a, b in self.edges)
        self.dwell = dict(self.dwell)
        declared = set(self.modes)
        for a, b in self.edges:
            if a not in declared or b not in declared:
                raise ValueError(f"edge ({a}, {b}) uses an undeclared mode")
        for m in self.modes:
            if m not in self.dwell:
                raise ValueError(f"mode {m} has no dwell-time")
            if int(self.dwell[m]) < 1:
                raise ValueError(f"dwell-time of mode {m} must be at least 1")

    @classmethod
    def cycle(cls, modes, dwell) -> "SwitchGraph":
        modes = tuple(modes)
        edges = {(modes[k], modes[(k + 1) % len(modes)]) for k in range(len(modes))}
        if len(modes) == 1:
            edges = {(modes[0], modes[0])}
        return cls(modes, frozenset(edges), _dwell_map(modes, dwell))

    @classmethod
    def complete(cls, modes, dwell, self_loops: bool = False) -> "SwitchGraph":
        modes = tuple(modes)
        edges = {(a, b) for a in modes for b in modes if self_loops or a != b}
        if len(modes) == 1:
            edges = {(modes[0], modes[0])}
        return cls(modes, frozenset(edges), _dwell_map(modes, dwell))

    @classmethod
    def chain(cls, modes, dwell) -> "SwitchGraph":
        """Path ``m1 -> m2 -> ... -> mk`` with a self-loop on the last mode."""
        modes = tuple(modes)
        edges = {(modes[k], modes[k + 1]) for k in range(len(modes) - 1)}
        edges.add((modes[-1], modes[-1]))
        return cls(modes, frozenset(edges), _dwell_map(modes, dwell))

    def successors(self, mode) -> list:
        return [b for a, b in sorted(self.edges, key=repr) if a == mode]

    def allows(self, a, b) -> bool:
        return (a, b) in self.edges


def _dwell_map(modes, dwell) -> dict:
    if isinstance(dwell, Mapping):
        return {m: int(dwell[m]) for m in modes}
    return {m: int(dwell) for m in modes}


@dataclass
class SwitchRciResult:
    sets: dict
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def switch_rci(dyns: Mapping[Hashable, ModeDynamics], graph: SwitchGraph,
               seeds: Mapping[Hashable, Polytope] | None = None,
               max_iter: int = 100, tol: float = SET_TOL,
               keep_history: bool = False) -> SwitchRciResult:
    """Maximal switch-RCI family contained in the seeds.

    Every iteration updates all modes from the previous iterates::

        Omega_i <- Omega_i & Pre_i(Omega_i) & Pre_j^{d_j}(Omega_j) for (i, j) in E

    until no set changes (up to ``tol``).
    """
    for m in graph.modes:
        if m not in dyns:
            raise ValueError(f"mode {m} has no dynamics")
    omega = {}
    for m in graph.modes:
        seed = dyns[m].X if seeds is None else seeds[m]
        if seed.dim != dyns[m].n_x:
            raise DimensionError(f"seed of mode {m} has the wrong dimension")
        omega[m] = canonicalize(seed)
    history = [dict(omega)] if keep_history else []
    for k in range(1, max_iter + 1):
        nxt = {}
        for i in graph.modes:
            parts = [omega[i], pre_set(omega[i], dyns[i])]
            for j in graph.successors(i):
                parts.append(pre_k(omega[j], dyns[j], graph.dwell[j]))
            nxt[i] = intersect_all(parts)
            if nxt[i].is_empty:
                raise EmptyInvariantSetError(
                    f"switch-RCI iterate of mode {i} became empty", mode=i, iterations=k
                )
        if keep_history:
            history.append(dict(nxt))
        done = all(equals(nxt[m], omega[m], tol) for m in graph.modes)
        omega = nxt
        if done:
            return SwitchRciResult(omega, k, True, history)
    raise NotConvergedError(
        f"switch-RCI iteration did not converge in {max_iter} steps",
        last=SwitchRciResult(omega, max_iter, False, history),
        iterations=max_iter,
    )


def switch_rci_violations(result: SwitchRciResult, dyns, graph: SwitchGraph,
                          tol: float = SET_TOL) -> list:
    """Definition checks that fail: self invariance and dwell reachability."""
    bad = []
    for i in graph.modes:
        C = result.sets[i]
        if not is_subset(C, pre_set(C, dyns[i]), tol):
            bad.append((i, i, "invariance"))
        for j in graph.successors(i):
            if not is_subset(C, pre_k(result.sets[j], dyns[j], graph.dwell[j]), tol):
                bad.append((i, j, "transition"))
    return bad


def initial_condition_ok(C: SwitchRciResult, dyns, x0, mode0, delta0: int,
                         tol: float = 1e-9) -> bool:
    """``x0`` inside the ``delta0``-step Pre of the mode's invariant set."""
    if mode0 not in C.sets:
        raise ValueError(f"mode {mode0} is not part of the family")
    S = pre_k(C.sets[mode0], dyns[mode0], int(delta0))
    if S.is_empty:
        return False
    return S.contains(np.asarray(x0, dtype=float), tol=tol)
