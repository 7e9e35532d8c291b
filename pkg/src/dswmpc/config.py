"""Experiment files: TOML parsing, validation and canonical output.

An experiment file has the top-level key ``name`` and the tables
``run``, ``controller``, ``signal``, ``strategy.<name>`` (optional tuning
overrides), ``[[topology]]`` and ``[[subsystem]]`` (with nested
``[[subsystem.coupling]]``).  Matrices are row-major arrays of arrays and
constraint sets are either ``{lower = [...], upper = [...]}`` boxes or
``{A = [[...]], b = [...]}`` halfspace descriptions.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .geometry import Polytope
from .invariants import SwitchGraph
from .model import ModelError, ModeTopology, NetworkModel, Subsystem, SwitchingSignal, Visibility

TOLERANCE_ENV = "DSWMPC_TOLERANCE_PROFILE"

TOLERANCE_PROFILES = {
    "default": {"eps": 1e-3, "audit_tol": 1e-6},
    "strict": {"eps": 1e-4, "audit_tol": 1e-8},
    "loose": {"eps": 1e-2, "audit_tol": 1e-5},
}

STRATEGIES = ("dswmpc", "cswmpc", "deswmpc")
BUNDLED = ("example1", "example2", "example3")

_CONTROLLER_DEFAULTS = {
    "N": 5,
    "dwell": 3,
    "E_halfwidth": 0.1,
    "Eu_halfwidth": 0.05,
    "max_iter": 100,
    "bootstrap_passes": 2,
    "tolerance_profile": "default",
}
_OVERRIDABLE = {"Q", "R", "E_halfwidth", "Eu_halfwidth", "N", "bootstrap_passes"}


class ConfigError(ValueError):
    """Invalid experiment file; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def tolerance_profile(name: str | None = None) -> dict:
    """Tolerances of the named profile; the environment variable wins."""
    name = os.environ.get(TOLERANCE_ENV) or name or "default"
    if name not in TOLERANCE_PROFILES:
        raise ConfigError([f"{TOLERANCE_ENV}: unknown tolerance profile {name!r}"])
    return dict(TOLERANCE_PROFILES[name], name=name)


def bundled_path(name: str) -> Path:
    """Path of a bundled example configuration (``example1`` .. ``example3``)."""
    return Path(str(resources.files("dswmpc") / "data" / f"{name}.toml"))


# ---------------------------------------------------------------------------
# field-level helpers; each appends to ``errs`` and returns None on failure


def _mat(value, path, errs, rows=None, cols=None):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        errs.append(f"{path}: not a numeric matrix")
        return None
    if M.ndim != 2:
        errs.append(f"{path}: expected an array of rows, got {M.ndim}-d data")
        return None
    if not np.all(np.isfinite(M)):
        errs.append(f"{path}: non-finite entries")
        return None
    if (rows is not None and M.shape[0] != rows) or (cols is not None and M.shape[1] != cols):
        want = (rows if rows is not None else M.shape[0], cols if cols is not None else M.shape[1])
        errs.append(f"{path}: shape {M.shape}, expected {want}")
        return None
    return M


def _vec(value, path, errs, size=None):
    try:
        v = np.array(value, dtype=float)
    except (TypeError, ValueError):
        errs.append(f"{path}: not a numeric vector")
        return None
    if v.ndim != 1 or (size is not None and v.size != size):
        errs.append(f"{path}: expected a vector of length {size}")
        return None
    return v


def _set(value, path, errs, dim):
    if not isinstance(value, dict):
        errs.append(f"{path}: expected a table with lower/upper or A/b")
        return None
    if "lower" in value or "upper" in value:
        lo = _vec(value.get("lower"), f"{path}.lower", errs, dim)
        hi = _vec(value.get("upper"), f"{path}.upper", errs, dim)
        if lo is None or hi is None:
            return None
        if np.any(lo > hi):
            errs.append(f"{path}: lower exceeds upper")
            return None
        return Polytope.box(lo, hi)
    A = _mat(value.get("A"), f"{path}.A", errs, cols=dim)
    if A is None:
        return None
    b = _vec(value.get("b"), f"{path}.b", errs, A.shape[0])
    return None if b is None else Polytope(A, b)


def _int(value, path, errs, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        errs.append(f"{path}: expected an integer")
        return None
    if minimum is not None and value < minimum:
        errs.append(f"{path}: must be >= {minimum}, got {value}")
        return None
    return value


def _pos(value, path, errs):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        errs.append(f"{path}: expected a positive number")
        return None
    return float(value)


def _index_map(table, path, errs):
    out = {}
    if not isinstance(table, dict):
        errs.append(f"{path}: expected a table keyed by subsystem index")
        return out
    for k, v in table.items():
        try:
            i = int(k)
        except ValueError:
            errs.append(f"{path}.{k}: key is not a subsystem index")
            continue
        if not isinstance(v, list) or not all(isinstance(j, int) for j in v):
            errs.append(f"{path}.{k}: expected a list of subsystem indices")
            continue
        out[i] = sorted(set(v))
    return out


# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Validated experiment file.

    ``data`` is the normalized key-value tree (what :func:`dump_config`
    writes); the ``network``, ``topologies``, ``graph`` and ``signal``
    attributes are the objects built from it.
    """

    data: dict
    network: NetworkModel
    topologies: dict
    graph: SwitchGraph
    signal: SwitchingSignal
    source: str | None = None

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.data == other.data

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def T_sim(self) -> int:
        return self.data["run"]["T_sim"]

    @property
    def N(self) -> int:
        return self.data["controller"]["N"]

    @property
    def dwell(self) -> dict:
        return dict(self.graph.dwell)

    @property
    def modes(self) -> tuple:
        return self.graph.modes

    @property
    def strategies(self) -> list:
        return list(self.data["run"].get("strategies", STRATEGIES))

    @property
    def out_dir(self) -> str | None:
        return self.data["run"].get("out")

    @property
    def seed(self) -> int:
        return self.data["run"].get("seed", 0)

    @property
    def x0(self) -> dict:
        return {s["index"]: np.array(s["x0"], dtype=float) for s in self.data["subsystem"]}

    @property
    def tolerances(self) -> dict:
        return tolerance_profile(self.data["controller"].get("tolerance_profile"))

    def to_spec(self):
        """Experiment specification for the simulation engine."""
        from .orchestrator import ControllerSettings, ExperimentSpec

        c = self.data["controller"]
        tol = self.tolerances
        Q, R, E, Eu = {}, {}, {}, {}
        for s in self.data["subsystem"]:
            i = s["index"]
            sub = self.network[i]
            if "Q" in s or "Q" in c:
                Q[i] = np.array(s.get("Q", c.get("Q")), dtype=float)
            if "R" in s or "R" in c:
                R[i] = np.array(s.get("R", c.get("R")), dtype=float)
            if "E_halfwidth" in s:
                E[i] = Polytope.symmetric_box(s["E_halfwidth"], sub.n_x)
            if "Eu_halfwidth" in s:
                Eu[i] = Polytope.symmetric_box(s["Eu_halfwidth"], sub.n_u)
        settings = ControllerSettings(
            N=c["N"],
            dwell=min(self.graph.dwell.values()),
            Q=Q,
            R=R,
            E=E,
            Eu=Eu,
            E_halfwidth=c["E_halfwidth"],
            Eu_halfwidth=c["Eu_halfwidth"],
            eps=c.get("eps", tol["eps"]),
            max_iter=c["max_iter"],
            initial_delta=c.get("initial_delta"),
            bootstrap_passes=c["bootstrap_passes"],
        )
        overrides = {}
        for name, over in self.data.get("strategy", {}).items():
            o = {}
            for key, val in over.items():
                if key in ("Q", "R"):
                    o[key] = {i: np.array(val, dtype=float) for i in self.network.indices}
                else:
                    o[key] = val
            overrides[name] = o
        allow = self.data["signal"].get("allowable")
        return ExperimentSpec(
            network=self.network,
            topologies=self.topologies,
            signal=self.signal,
            T_sim=self.T_sim,
            x0=self.x0,
            settings=settings,
            allowable=None if allow is None else {int(k): set(v) for k, v in allow.items()},
            name=self.name,
            strategy_settings=overrides,
        )


def _normalize(raw: dict, errs: list) -> dict:
    """Defaults filled in, integer keys as strings, plain Python values."""
    data = copy.deepcopy(raw)
    known = {"name", "run", "controller", "signal", "strategy", "topology", "subsystem"}
    for k in sorted(set(data) - known):
        errs.append(f"{k}: unknown top-level key")
    data.setdefault("name", "experiment")
    if not isinstance(data["name"], str):
        errs.append("name: expected a string")
    run = data.setdefault("run", {})
    ctl = data.setdefault("controller", {})
    for k, v in _CONTROLLER_DEFAULTS.items():
        ctl.setdefault(k, v)
    data.setdefault("signal", {})
    data.setdefault("topology", [])
    data.setdefault("subsystem", [])
    if not isinstance(run, dict) or not isinstance(ctl, dict):
        errs.append("run/controller: expected tables")
    return data


def validate_config(raw: dict, source: str | None = None) -> ExperimentConfig:
    """Build and validate an experiment; raises :class:`ConfigError` listing
    every problem found."""
    errs: list[str] = []
    data = _normalize(raw, errs)
    run, ctl, sig = data["run"], data["controller"], data["signal"]

    T_sim = _int(run.get("T_sim"), "run.T_sim", errs, minimum=1)
    for k, s in enumerate(run.get("strategies", [])):
        if s not in STRATEGIES:
            errs.append(f"run.strategies[{k}]: unknown strategy {s!r}")
    _int(run.get("seed", 0), "run.seed", errs)
    _int(ctl["N"], "controller.N", errs, minimum=1)
    _int(ctl["max_iter"], "controller.max_iter", errs, minimum=1)
    _int(ctl["bootstrap_passes"], "controller.bootstrap_passes", errs, minimum=1)
    _pos(ctl["E_halfwidth"], "controller.E_halfwidth", errs)
    _pos(ctl["Eu_halfwidth"], "controller.Eu_halfwidth", errs)
    if "eps" in ctl:
        _pos(ctl["eps"], "controller.eps", errs)
    if ctl["tolerance_profile"] not in TOLERANCE_PROFILES:
        errs.append(f"controller.tolerance_profile: unknown profile {ctl['tolerance_profile']!r}")
    if "initial_delta" in ctl:
        _int(ctl["initial_delta"], "controller.initial_delta", errs, minimum=0)

    # subsystems
    subs: dict[int, Subsystem] = {}
    dims = {}
    entries = data["subsystem"]
    if not isinstance(entries, list) or not entries:
        errs.append("subsystem: at least one [[subsystem]] block is required")
        entries = []
    for k, s in enumerate(entries):
        idx = s.get("index")
        path = f"subsystem[{idx if isinstance(idx, int) else k}]"
        if _int(idx, f"{path}.index", errs) is None:
            continue
        if idx in dims:
            errs.append(f"{path}: duplicate subsystem index")
            continue
        A = _mat(s.get("A"), f"{path}.A", errs)
        if A is None:
            continue
        if A.shape[0] != A.shape[1]:
            errs.append(f"{path}.A: must be square, got {A.shape}")
            continue
        n = A.shape[0]
        B = _mat(s.get("B"), f"{path}.B", errs, rows=n)
        if B is None:
            continue
        dims[idx] = (n, B.shape[1])
    for k, s in enumerate(entries):
        idx = s.get("index")
        if idx not in dims:
            continue
        path = f"subsystem[{idx}]"
        n, m = dims[idx]
        X = _set(s.get("X"), f"{path}.X", errs, n)
        U = _set(s.get("U"), f"{path}.U", errs, m)
        x0 = _vec(s.get("x0"), f"{path}.x0", errs, n)
        couplings = {}
        for c in s.get("coupling", []):
            j = c.get("neighbor")
            cpath = f"{path}.coupling[{j}]"
            if j not in dims:
                errs.append(f"{cpath}: unknown neighbour subsystem {j}")
                continue
            if j == idx:
                errs.append(f"{cpath}: subsystem {idx} cannot couple to itself")
                continue
            nj, mj = dims[j]
            Aij = Bij = None
            if "A" in c:
                Aij = _mat(c["A"], f"{cpath}.A", errs)
                if Aij is not None and Aij.shape != (n, nj):
                    errs.append(
                        f"{cpath}.A: coupling of subsystem {idx} to subsystem {j} has shape "
                        f"{Aij.shape}, expected {(n, nj)}"
                    )
                    Aij = None
                    continue
            if "B" in c:
                Bij = _mat(c["B"], f"{cpath}.B", errs)
                if Bij is not None and Bij.shape != (n, mj):
                    errs.append(
                        f"{cpath}.B: coupling of subsystem {idx} to subsystem {j} has shape "
                        f"{Bij.shape}, expected {(n, mj)}"
                    )
                    continue
            couplings[j] = (Aij, Bij)
        for key, size in (("Q", n), ("R", m)):
            if key in s:
                M = _mat(s[key], f"{path}.{key}", errs, size, size)
                if M is not None and np.any(np.linalg.eigvalsh(0.5 * (M + M.T)) <= 0):
                    errs.append(f"{path}.{key}: must be positive definite")
        for key in ("E_halfwidth", "Eu_halfwidth"):
            if key in s:
                _pos(s[key], f"{path}.{key}", errs)
        if X is None or U is None:
            continue
        try:
            subs[idx] = Subsystem(idx, _mat(s["A"], "", []), _mat(s["B"], "", []), X, U, couplings)
        except ModelError as exc:
            errs.append(f"{path}: {exc}")
            continue
        if x0 is not None and not X.contains(x0, tol=1e-9):
            errs.append(f"{path}.x0: initial state outside X")
    for key, size_of in (("Q", 0), ("R", 1)):
        if key in ctl:
            for i, (n, m) in dims.items():
                size = (n, m)[size_of]
                _mat(ctl[key], f"controller.{key}", errs, size, size)

    # modes, dwell, graph
    modes = sig.get("modes")
    if not isinstance(modes, list) or not modes or not all(isinstance(m, int) for m in modes):
        errs.append("signal.modes: expected a nonempty list of integer mode labels")
        modes = []
    dwell_raw = ctl["dwell"]
    dwell = {}
    if isinstance(dwell_raw, dict):
        for k, v in dwell_raw.items():
            if _int(v, f"controller.dwell.{k}", errs, minimum=1) is not None:
                dwell[int(k)] = v
        for m in modes:
            if m not in dwell:
                errs.append(f"controller.dwell: no dwell-time for mode {m}")
    elif _int(dwell_raw, "controller.dwell", errs, minimum=1) is not None:
        dwell = {m: dwell_raw for m in modes}
    graph = None
    trans = sig.get("transitions", "cycle")
    if modes and len(dwell) >= len(modes):
        if trans == "cycle":
            graph = SwitchGraph.cycle(modes, dwell)
        elif trans == "complete":
            graph = SwitchGraph.complete(modes, dwell)
        elif trans == "chain":
            graph = SwitchGraph.chain(modes, dwell)
        elif isinstance(trans, list):
            edges = set()
            for k, e in enumerate(trans):
                if not (isinstance(e, list) and len(e) == 2 and all(m in modes for m in e)):
                    errs.append(f"signal.transitions[{k}]: expected a pair of declared modes")
                    continue
                edges.add((e[0], e[1]))
            graph = SwitchGraph(tuple(modes), frozenset(edges), {m: dwell[m] for m in modes})
        else:
            errs.append(f"signal.transitions: unknown value {trans!r}")

    # topologies
    topologies = {}
    for k, t in enumerate(data["topology"]):
        m = t.get("mode")
        path = f"topology[{m if isinstance(m, int) else k}]"
        if m not in modes:
            errs.append(f"{path}.mode: undeclared mode {m!r}")
            continue
        nb = _index_map(t.get("neighbors", {}), f"{path}.neighbors", errs)
        for i, js in nb.items():
            if i not in dims:
                errs.append(f"{path}.neighbors.{i}: unknown subsystem")
            for j in js:
                if j == i:
                    errs.append(f"{path}.neighbors.{i}: subsystem lists itself")
                elif i in subs and j not in subs[i].couplings:
                    errs.append(f"{path}.neighbors.{i}: no coupling block to subsystem {j}")
        topologies[m] = ModeTopology(m, {i: js for i, js in nb.items() if i not in js})
    for m in modes:
        if m not in topologies:
            errs.append(f"topology: mode {m} has no [[topology]] block")

    # signal
    visibility = sig.get("visibility", Visibility.TIMES_AND_MODES_KNOWN.value)
    try:
        visibility = Visibility(visibility)
    except ValueError:
        errs.append(f"signal.visibility: unknown value {visibility!r}")
        visibility = None
    if "allowable" in sig:
        allow = _index_map(sig["allowable"], "signal.allowable", errs)
        for i, js in allow.items():
            if i not in dims:
                errs.append(f"signal.allowable.{i}: unknown subsystem")
            for j in js:
                if i in subs and j not in subs[i].couplings:
                    errs.append(f"signal.allowable.{i}: no coupling block to subsystem {j}")
    elif visibility == Visibility.MODES_RESTRICTED:
        errs.append("signal.allowable: required when visibility is modes_restricted")
    signal = None
    sched = sig.get("schedule")
    if not isinstance(sched, list) or not sched:
        errs.append("signal.schedule: expected a list of [time, mode] pairs")
    elif graph is not None and T_sim is not None:
        ok = True
        for k, e in enumerate(sched):
            if not (isinstance(e, list) and len(e) == 2 and isinstance(e[0], int)
                    and e[1] in modes):
                errs.append(f"signal.schedule[{k}]: expected [time, declared mode]")
                ok = False
        if ok:
            try:
                signal = SwitchingSignal([tuple(e) for e in sched], graph,
                                         visibility or Visibility.TIMES_AND_MODES_KNOWN)
                chk = signal.validate(T_sim)
                if not chk:
                    errs.append(
                        f"signal.schedule: {chk.kind} violation at t={chk.index} "
                        f"(schedule not admissible under the dwell-times and transitions)"
                    )
            except ModelError as exc:
                errs.append(f"signal.schedule: {exc}")

    for name, over in data.get("strategy", {}).items():
        if name not in STRATEGIES:
            errs.append(f"strategy.{name}: unknown strategy")
            continue
        for key in over:
            if key not in _OVERRIDABLE:
                errs.append(f"strategy.{name}.{key}: not an overridable setting")

    network = None
    if not errs:
        try:
            network = NetworkModel(subs)
        except ModelError as exc:
            errs.append(f"subsystem: {exc}")
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(data, network, topologies, graph, signal, source)


def load_config(path) -> ExperimentConfig:
    """Read and validate an experiment file.

    A bundled example may be named directly (``example1``).  Raises
    :class:`ConfigError` with every problem found; parse errors carry the
    line and column.
    """
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        p = bundled_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from None
    return loads_config(text, source=str(p))


def loads_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"{source or '<string>'}: parse error: {exc}"]) from None
    return validate_config(raw, source)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical TOML text of a validated experiment."""
    return tomli_w.dumps(_sorted(cfg.data))


def _sorted(obj):
    if isinstance(obj, dict):
        return {k: _sorted(obj[k]) for k in sorted(obj, key=str)}
    if isinstance(obj, list):
        return [_sorted(v) for v in obj]
    return obj
