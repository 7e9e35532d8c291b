"""Interconnected switched plant: subsystems, topologies, switching signals and
dwell-time bookkeeping."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import Polytope, affine_image, minkowski_sum_all
from .invariants import SwitchGraph


class ModelError(ValueError):
    pass


def _matrix(M, rows: int | None = None, cols: int | None = None, name: str = "matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rows is not None and M.shape[0] != rows:
        raise ModelError(f"{name} has {M.shape[0]} rows, expected {rows}")
    if cols is not None and M.shape[1] != cols:
        raise ModelError(f"{name} has {M.shape[1]} columns, expected {cols}")
    return M


@dataclass
class Subsystem:
    """One LTI subsystem ``x+ = A x + B u + sum_j (A_ij x_j + B_ij u_j)``.

    ``couplings`` maps a neighbour index ``j`` to the pair ``(A_ij, B_ij)``;
    either entry may be ``None`` for a zero block.
    """

    index: int
    A: np.ndarray
    B: np.ndarray
    X: Polytope
    U: Polytope
    couplings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = _matrix(self.A, name=f"A[{self.index}]")
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ModelError(f"A[{self.index}] must be square")
        B = np.asarray(self.B, dtype=float)
        self.B = B.reshape(n, -1) if B.ndim < 2 else _matrix(B, rows=n, name=f"B[{self.index}]")
        if self.X.dim != n:
            raise ModelError(f"X[{self.index}] has dim {self.X.dim}, expected {n}")
        if self.U.dim != self.B.shape[1]:
            raise ModelError(f"U[{self.index}] has dim {self.U.dim}, expected {self.B.shape[1]}")
        for S, name in ((self.X, "X"), (self.U, "U")):
            if S.is_empty or not S.is_bounded:
                raise ModelError(f"{name}[{self.index}] must be nonempty and bounded")
            if not S.contains(np.zeros(S.dim), tol=-1e-12):
                raise ModelError(f"{name}[{self.index}] must contain the origin in its interior")
        clean = {}
        for j, pair in dict(self.couplings).items():
            j = int(j)
            if j == self.index:
                raise ModelError(f"subsystem {self.index} cannot couple to itself")
            Aij, Bij = pair
            clean[j] = (
                None if Aij is None else _matrix(Aij, rows=n, name=f"A[{self.index},{j}]"),
                None if Bij is None else _matrix(Bij, rows=n, name=f"B[{self.index},{j}]"),
            )
        self.couplings = clean

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def coupling(self, j: int, n_xj: int, n_uj: int):
        """``(A_ij, B_ij)`` with zero blocks filled in."""
        if j not in self.couplings:
            raise ModelError(f"subsystem {self.index} declares no coupling to {j}")
        Aij, Bij = self.couplings[j]
        Aij = np.zeros((self.n_x, n_xj)) if Aij is None else Aij
        Bij = np.zeros((self.n_x, n_uj)) if Bij is None else Bij
        return Aij, Bij


@dataclass
class NetworkModel:
    subsystems: dict

    def __post_init__(self):
        self.subsystems = {int(i): s for i, s in sorted(dict(self.subsystems).items())}
        errors = []
        for i, s in self.subsystems.items():
            if s.index != i:
                errors.append(f"subsystem keyed {i} has index {s.index}")
            for j, (Aij, Bij) in s.couplings.items():
                if j not in self.subsystems:
                    errors.append(f"subsystem {i} couples to unknown subsystem {j}")
                    continue
                other = self.subsystems[j]
                if Aij is not None and Aij.shape != (s.n_x, other.n_x):
                    errors.append(
                        f"A[{i},{j}] has shape {Aij.shape}, expected {(s.n_x, other.n_x)}"
                    )
                if Bij is not None and Bij.shape != (s.n_x, other.n_u):
                    errors.append(
                        f"B[{i},{j}] has shape {Bij.shape}, expected {(s.n_x, other.n_u)}"
                    )
        if errors:
            raise ModelError("; ".join(errors))

    @property
    def indices(self) -> list:
        return list(self.subsystems)

    def __getitem__(self, i: int) -> Subsystem:
        return self.subsystems[i]

    def __len__(self) -> int:
        return len(self.subsystems)

    def coupling(self, i: int, j: int):
        o = self.subsystems[j]
        return self.subsystems[i].coupling(j, o.n_x, o.n_u)

    @property
    def n_x(self) -> int:
        return sum(s.n_x for s in self.subsystems.values())

    @property
    def n_u(self) -> int:
        return sum(s.n_u for s in self.subsystems.values())

    def stacked(self, topo: "ModeTopology"):
        """Global ``(A, B)`` of the assembled network under one topology."""
        xo = np.cumsum([0] + [s.n_x for s in self.subsystems.values()])
        uo = np.cumsum([0] + [s.n_u for s in self.subsystems.values()])
        pos = {i: k for k, i in enumerate(self.subsystems)}
        A = np.zeros((self.n_x, self.n_x))
        B = np.zeros((self.n_x, self.n_u))
        for i, s in self.subsystems.items():
            r = slice(xo[pos[i]], xo[pos[i] + 1])
            A[r, r] = s.A
            B[r, uo[pos[i]] : uo[pos[i] + 1]] = s.B
            for j in topo.neighbors(i):
                Aij, Bij = self.coupling(i, j)
                A[r, xo[pos[j]] : xo[pos[j] + 1]] += Aij
                B[r, uo[pos[j]] : uo[pos[j] + 1]] += Bij
        return A, B

    def decoupled(self) -> bool:
        return all(not s.couplings for s in self.subsystems.values())


@dataclass(frozen=True)
class ModeTopology:
    """Neighbour sets ``N_i`` active in one mode."""

    mode: object
    neighbor_sets: Mapping

    def __post_init__(self):
        sets = {int(i): frozenset(int(j) for j in js) for i, js in dict(self.neighbor_sets).items()}
        object.__setattr__(self, "neighbor_sets", sets)

    def neighbors(self, i: int) -> frozenset:
        return self.neighbor_sets.get(i, frozenset())

    def validate(self, network: NetworkModel) -> None:
        for i, js in self.neighbor_sets.items():
            if i not in network.subsystems:
                raise ModelError(f"topology {self.mode} names unknown subsystem {i}")
            missing = sorted(j for j in js if j not in network[i].couplings)
            if missing:
                raise ModelError(
                    f"topology {self.mode}: subsystem {i} has no coupling matrices for {missing}"
                )

    def restricted(self, allowable: Mapping, mode=None) -> "ModeTopology":
        """Intersection with allowable neighbour sets."""
        return ModeTopology(
            self.mode if mode is None else mode,
            {i: js & frozenset(allowable.get(i, ())) for i, js in self.neighbor_sets.items()},
        )


def plant_step(network: NetworkModel, states: Mapping, inputs: Mapping,
               topo: ModeTopology) -> dict:
    """Advance every subsystem one step from the same pre-step values."""
    out = {}
    for i, s in network.subsystems.items():
        x = np.asarray(states[i], dtype=float).reshape(s.n_x)
        u = np.asarray(inputs[i], dtype=float).reshape(s.n_u)
        nxt = s.A @ x + s.B @ u
        for j in sorted(topo.neighbors(i)):
            Aij, Bij = network.coupling(i, j)
            nxt = nxt + Aij @ np.asarray(states[j], dtype=float) + Bij @ np.asarray(
                inputs[j], dtype=float
            )
        out[i] = nxt
    return out


def interaction_disturbance_set(network: NetworkModel, i: int, neighbors,
                                E: Mapping, Eu: Mapping) -> Polytope:
    """``W_i = sum over j of (A_ij E_j + B_ij Eu_j)`` for the given neighbours.

    ``neighbors`` may be a :class:`ModeTopology` or an iterable of indices.
    """
    if isinstance(neighbors, ModeTopology):
        neighbors = neighbors.neighbors(i)
    s = network[i]
    terms = []
    for j in sorted(set(int(j) for j in neighbors)):
        Aij, Bij = network.coupling(i, j)
        if np.any(Aij):
            terms.append(affine_image(E[j], Aij))
        if np.any(Bij):
            terms.append(affine_image(Eu[j], Bij))
    return minkowski_sum_all(terms, s.n_x)


def worst_case_disturbance_set(network: NetworkModel, i: int, allowable,
                               E: Mapping, Eu: Mapping) -> Polytope:
    """Disturbance set with every allowable neighbour active at once."""
    allowable = set(int(j) for j in allowable)
    undeclared = sorted(allowable - set(network[i].couplings))
    if undeclared:
        raise ModelError(f"subsystem {i} has no coupling matrices for {undeclared}")
    return interaction_disturbance_set(network, i, allowable, E, Eu)


@dataclass(frozen=True)
class DwellState:
    delta: int
    current_mode: object


def remaining_dwell_update(state: DwellState, next_mode, dwell: Mapping) -> DwellState:
    """Remaining dwell-time after one step.

    Staying in the mode counts down (clamped at zero); a switch restarts the
    count at the dwell-time of the new mode.
    """
    if next_mode == state.current_mode:
        return DwellState(max(state.delta - 1, 0), next_mode)
    return DwellState(int(dwell[next_mode]), next_mode)


class Visibility(str, enum.Enum):
    TIMES_AND_MODES_KNOWN = "times_and_modes_known"
    MODES_RESTRICTED = "modes_restricted"
    FULLY_UNKNOWN = "fully_unknown"


@dataclass(frozen=True)
class SignalCheck:
    valid: bool
    index: int | None = None
    kind: str | None = None

    def __bool__(self) -> bool:
        return self.valid


def validate_signal(seq: Sequence, graph: SwitchGraph) -> SignalCheck:
    """Check dwell-time and transition restrictions of a mode sequence.

    Every maximal constant run must last at least the dwell-time of its mode,
    except the final run, which the end of the sequence may cut short.  The
    reported index is the first sample of the offending new mode.
    """
    seq = list(seq)
    if not seq:
        raise ModelError("empty mode sequence")
    declared = set(graph.modes)
    for t, m in enumerate(seq):
        if m not in declared:
            raise ModelError(f"undeclared mode {m!r} at index {t}")
    start = 0
    for t in range(1, len(seq)):
        if seq[t] == seq[t - 1]:
            continue
        prev = seq[t - 1]
        if t - start < graph.dwell[prev]:
            return SignalCheck(False, t, "dwell")
        if not graph.allows(prev, seq[t]):
            return SignalCheck(False, t, "transition")
        start = t
    return SignalCheck(True)


@dataclass
class SwitchingSignal:
    """Mode schedule ``[(t0, m0), (t1, m1), ...]`` with ``t0 == 0``.

    ``mode_at(t)`` returns the mode of the last change at or before ``t``.
    """

    schedule: list
    graph: SwitchGraph
    visibility: Visibility = Visibility.TIMES_AND_MODES_KNOWN

    def __post_init__(self):
        self.schedule = sorted((int(t), m) for t, m in self.schedule)
        self.visibility = Visibility(self.visibility)
        if not self.schedule or self.schedule[0][0] != 0:
            raise ModelError("schedule must start with a mode at t = 0")

    def mode_at(self, t: int):
        mode = self.schedule[0][1]
        for tk, m in self.schedule:
            if tk <= t:
                mode = m
        return mode

    def sequence(self, length: int) -> list:
        return [self.mode_at(t) for t in range(length)]

    def validate(self, length: int) -> SignalCheck:
        return validate_signal(self.sequence(length), self.graph)

    @classmethod
    def from_sequence(cls, seq: Sequence, graph: SwitchGraph,
                      visibility=Visibility.TIMES_AND_MODES_KNOWN) -> "SwitchingSignal":
        sched = [(0, seq[0])] + [(t, seq[t]) for t in range(1, len(seq)) if seq[t] != seq[t - 1]]
        return cls(sched, graph, visibility)


def random_signal_sequence(graph: SwitchGraph, length: int, rng: np.random.Generator,
                           start=None, switch_prob: float = 0.5) -> list:
    """Random member of the admissible signal set of ``graph``."""
    mode = graph.modes[rng.integers(len(graph.modes))] if start is None else start
    seq = [mode]
    run = 1
    while len(seq) < length:
        succ = [m for m in graph.successors(mode) if m != mode]
        if run >= graph.dwell[mode] and succ and rng.random() < switch_prob:
            mode = succ[rng.integers(len(succ))]
            run = 1
        else:
            run += 1
        seq.append(mode)
    return seq
