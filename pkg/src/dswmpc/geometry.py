"""Halfspace-representation polytopes and the set algebra used by the controllers.

A :class:`Polytope` is the set ``{x : A x <= b}``.  Every operation in this
module returns a *canonical* polytope: rows normalized to unit length, no
redundant rows, and emptiness resolved.  All set operations reduce to linear
programs (support functions, redundancy checks) or to Fourier-Motzkin
elimination, so they work in any (small) dimension and on flat sets.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError, cKDTree

# Redundancy / emptiness threshold on LP slacks.
REDUNDANCY_TOL = 1e-9
# Support-gap tolerance for set equality and inclusion.
SET_TOL = 1e-7

_ZERO_ROW = 1e-12
_FULL_DIM_RADIUS = 1e-7
_DUAL_HULL_MAX_DIM = 4


class GeometryError(ValueError):
    """Base class for polytope errors."""


class DimensionError(GeometryError):
    pass


class UnboundedError(GeometryError):
    """An operation needed a bounded set (or bounded direction) and got none."""


class EmptySetError(GeometryError):
    pass


def _lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None):
    return linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(None, None),
        method="highs",
    )


class Polytope:
    """Convex polyhedron ``{x : A x <= b}`` in halfspace representation.

    Instances are immutable.  Use :func:`canonicalize` (or any set operation)
    to obtain the normalized, redundancy-free form.  A polytope with zero rows
    is the whole space; the canonical empty polytope is the single row
    ``0 x <= -1``.
    """

    __slots__ = ("A", "b", "_canonical", "_cache")

    def __init__(self, A, b, *, _canonical: bool = False):
        A = np.array(A, dtype=float, copy=True)
        b = np.array(b, dtype=float, copy=True).reshape(-1)
        if A.ndim == 1:
            if b.size != 1:
                raise DimensionError("a single row A needs a single offset")
            A = A.reshape(1, -1)
        if A.ndim != 2:
            raise DimensionError(f"A must be a matrix, got shape {A.shape}")
        if A.shape[0] != b.size:
            raise DimensionError(
                f"A has {A.shape[0]} rows but b has {b.size} entries"
            )
        if A.shape[1] < 1:
            raise DimensionError("polytope dimension must be positive")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise GeometryError("non-finite polytope coefficients")
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b
        self._canonical = _canonical
        self._cache = {}

    # ----------------------------------------------------------- constructors
    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise DimensionError("box bounds differ in shape")
        n = lower.size
        eye = np.eye(n)
        return canonicalize(cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower])))

    @classmethod
    def symmetric_box(cls, halfwidth, dim: int | None = None) -> "Polytope":
        h = np.atleast_1d(np.asarray(halfwidth, dtype=float))
        if dim is not None and h.size == 1:
            h = np.full(dim, h[0])
        return cls.box(-h, h)

    @classmethod
    def origin(cls, dim: int) -> "Polytope":
        return cls.box(np.zeros(dim), np.zeros(dim))

    @classmethod
    def whole(cls, dim: int) -> "Polytope":
        return cls(np.zeros((0, dim)), np.zeros(0), _canonical=True)

    @classmethod
    def empty(cls, dim: int) -> "Polytope":
        P = cls(np.zeros((1, dim)), np.array([-1.0]), _canonical=True)
        P._cache["empty"] = True
        return P

    # ------------------------------------------------------------- properties
    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def is_canonical(self) -> bool:
        return self._canonical

    @property
    def is_whole_space(self) -> bool:
        return canonicalize(self).n_rows == 0

    @property
    def is_empty(self) -> bool:
        if "empty" not in self._cache:
            norms = np.linalg.norm(self.A, axis=1)
            if np.any(self.b[norms <= _ZERO_ROW] < -REDUNDANCY_TOL):
                self._cache["empty"] = True
            elif self.n_rows == 0:
                self._cache["empty"] = False
            else:
                _, r = self.chebyshev
                self._cache["empty"] = r < -REDUNDANCY_TOL
        return self._cache["empty"]

    @property
    def chebyshev(self) -> tuple[np.ndarray, float]:
        """Center and radius of the largest inscribed ball (radius capped at 1)."""
        if "cheb" not in self._cache:
            if self._cache.get("empty"):
                self._cache["cheb"] = (np.full(self.dim, np.nan), -np.inf)
            elif self.n_rows == 0:
                self._cache["cheb"] = (np.zeros(self.dim), 1.0)
            else:
                self._cache["cheb"] = _chebyshev(*_normalized_rows(self.A, self.b))
        return self._cache["cheb"]

    @property
    def is_full_dimensional(self) -> bool:
        return not self.is_empty and self.chebyshev[1] > _FULL_DIM_RADIUS

    @property
    def is_bounded(self) -> bool:
        if "bounded" not in self._cache:
            P = canonicalize(self)
            if P.is_empty:
                bounded = True
            elif P.n_rows <= self.dim or np.linalg.matrix_rank(P.A) < self.dim:
                bounded = False
            else:
                # bounded iff rows positively span: some y >= 1 with A^T y = 0
                m = P.n_rows
                res = linprog(
                    np.zeros(m),
                    A_eq=P.A.T,
                    b_eq=np.zeros(self.dim),
                    bounds=[(1.0, None)] * m,
                    method="highs",
                )
                bounded = res.status == 0
            self._cache["bounded"] = bounded
        return self._cache["bounded"]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise DimensionError(f"point has size {x.size}, polytope dim {self.dim}")
        if self.is_empty:
            return False
        return bool(np.all(self.A @ x <= self.b + tol))

    def vertices(self) -> np.ndarray:
        """Vertices of a bounded polytope of dimension at most 3."""
        if "vertices" not in self._cache:
            self._cache["vertices"] = _vertices(canonicalize(self))
        return self._cache["vertices"]

    # ------------------------------------------------------------- operators
    def __add__(self, other: "Polytope") -> "Polytope":
        return minkowski_sum(self, other)

    def __sub__(self, other: "Polytope") -> "Polytope":
        return pontryagin_diff(self, other)

    def __and__(self, other: "Polytope") -> "Polytope":
        return intersect(self, other)

    def __le__(self, other: "Polytope") -> bool:
        return is_subset(self, other)

    def __repr__(self) -> str:
        state = "empty" if self._cache.get("empty") else f"{self.n_rows} rows"
        return f"Polytope(dim={self.dim}, {state})"

    def scaled(self, factor: float) -> "Polytope":
        """The set ``factor * P`` for ``factor > 0``."""
        if factor <= 0:
            raise GeometryError("scaling factor must be positive")
        return canonicalize(Polytope(self.A, self.b * factor))

    def translated(self, v) -> "Polytope":
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.dim:
            raise DimensionError("translation vector has the wrong size")
        if self.is_empty:
            return Polytope.empty(self.dim)
        return canonicalize(Polytope(self.A, self.b + self.A @ v))

    # ------------------------------------------------------------ text export
    def to_text(self) -> str:
        P = canonicalize(self)
        lines = [f"{P.dim} {P.n_rows}"]
        for a, beta in zip(P.A, P.b):
            lines.append(" ".join(f"{v:.17g}" for v in (*a, beta)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Polytope":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        dim, k = int(rows[0][0]), int(rows[0][1])
        data = np.array([[float(v) for v in r] for r in rows[1 : 1 + k]]).reshape(k, dim + 1)
        return canonicalize(cls(data[:, :dim], data[:, dim]))


# ---------------------------------------------------------------------------
# low-level helpers


def _normalized_rows(A: np.ndarray, b: np.ndarray):
    norms = np.linalg.norm(A, axis=1)
    keep = norms > _ZERO_ROW
    return A[keep] / norms[keep, None], b[keep] / norms[keep]


def _chebyshev(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Chebyshev center of ``{A x <= b}`` with unit rows; radius capped at 1.

    A negative radius is the largest uniform violation, i.e. the set is empty.
    """
    m, n = A.shape
    if m == 0:
        return np.zeros(n), 1.0
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((m, 1))])
    cap = np.zeros((1, n + 1))
    cap[0, -1] = 1.0
    res = _lp(c, np.vstack([A_ub, cap]), np.concatenate([b, [1.0]]))
    if res.status != 0:
        raise GeometryError(f"Chebyshev LP failed: {res.message}")
    return res.x[:n], float(res.x[-1])


def _dedupe(A: np.ndarray, b: np.ndarray):
    """Collapse rows with identical normals, keeping the tightest offset."""
    if A.shape[0] < 2:
        return A, b
    keys = np.round(A, 12)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    groups = {}
    for k, g in enumerate(inverse):
        if g not in groups or b[k] < b[groups[g]]:
            groups[g] = k
    idx = np.array(sorted(groups.values()))
    return A[idx], b[idx]


def _ray_certified(A: np.ndarray, b: np.ndarray, center: np.ndarray, n_rays: int) -> np.ndarray:
    """Rows certified non-redundant by shooting rays from an interior point."""
    m, n = A.shape
    rng = np.random.default_rng(12345)
    dirs = np.vstack([A, rng.standard_normal((n_rays, n))])
    slack = b - A @ center  # > 0
    proj = dirs @ A.T  # (rays, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(proj > 1e-12, slack[None, :] / proj, np.inf)
    certified = np.zeros(m, dtype=bool)
    order = np.argsort(t, axis=1)
    first = order[:, 0]
    t_first = t[np.arange(len(dirs)), first]
    if m > 1:
        t_second = t[np.arange(len(dirs)), order[:, 1]]
    else:
        t_second = np.full(len(dirs), np.inf)
    with np.errstate(invalid="ignore"):
        unique_hit = np.isfinite(t_first) & (t_second - t_first > 1e-9 * (1 + t_first))
    certified[first[unique_hit]] = True
    return certified


def _irredundant_lp(A: np.ndarray, b: np.ndarray, certified: np.ndarray) -> np.ndarray:
    m = A.shape[0]
    keep = np.ones(m, dtype=bool)
    for k in range(m):
        if certified[k]:
            continue
        others = keep.copy()
        others[k] = False
        A_ub = np.vstack([A[others], A[k : k + 1]])
        b_ub = np.concatenate([b[others], [b[k] + 1.0]])
        res = _lp(-A[k], A_ub, b_ub)
        if res.status == 0 and -res.fun <= b[k] + REDUNDANCY_TOL:
            keep[k] = False
    return keep


def _irredundant_dual_hull(A: np.ndarray, b: np.ndarray, center: np.ndarray):
    """Non-redundant rows of a bounded full-dimensional polytope, or None."""
    m, n = A.shape
    if m <= n:
        return None
    pts = A / (b - A @ center)[:, None]
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    # origin strictly inside the dual hull <=> primal bounded
    if np.any(hull.equations[:, -1] > -1e-12):
        return None
    keep = np.zeros(m, dtype=bool)
    keep[hull.vertices] = True
    return keep


def canonicalize(P: Polytope) -> Polytope:
    """Row-normalized, redundancy-free representation of the same set."""
    if P._canonical:
        return P
    n = P.dim
    norms = np.linalg.norm(P.A, axis=1)
    zero = norms <= _ZERO_ROW
    if np.any(P.b[zero] < -REDUNDANCY_TOL):
        return Polytope.empty(n)
    A = P.A[~zero] / norms[~zero, None]
    b = P.b[~zero] / norms[~zero]
    A, b = _dedupe(A, b)
    if A.shape[0] == 0:
        return Polytope.whole(n)
    center, r = _chebyshev(A, b)
    if r < -REDUNDANCY_TOL:
        return Polytope.empty(n)

    if n == 1:
        upper = b[A[:, 0] > 0]
        lower = -b[A[:, 0] < 0]
        rows, offs = [], []
        if upper.size:
            rows.append([1.0])
            offs.append(upper.min())
        if lower.size:
            rows.append([-1.0])
            offs.append(-lower.max())
        out = Polytope(np.array(rows), np.array(offs), _canonical=True)
    else:
        keep = None
        if r > _FULL_DIM_RADIUS and n <= _DUAL_HULL_MAX_DIM:
            keep = _irredundant_dual_hull(A, b, center)
        if keep is None:
            if r > _FULL_DIM_RADIUS:
                certified = _ray_certified(A, b, center, n_rays=20 * n)
            else:
                certified = np.zeros(A.shape[0], dtype=bool)
            keep = _irredundant_lp(A, b, certified)
        out = Polytope(A[keep], b[keep], _canonical=True)
    out._cache["empty"] = False
    out._cache["cheb"] = (center, r)
    return out


def _check_dims(*sets: Polytope) -> None:
    dims = {S.dim for S in sets}
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")


def _vertices(P: Polytope) -> np.ndarray:
    n = P.dim
    if P.is_empty:
        return np.zeros((0, n))
    if not P.is_bounded:
        raise UnboundedError("vertices of an unbounded polytope")
    if n > 3:
        raise GeometryError("vertex enumeration is limited to dimension <= 3")
    if n == 1:
        hi = P.b[P.A[:, 0] > 0].min()
        lo = -P.b[P.A[:, 0] < 0].min()
        pts = np.array([[lo], [hi]]) if hi - lo > 1e-12 else np.array([[lo]])
        return pts
    center, r = P.chebyshev
    if r > _FULL_DIM_RADIUS:
        hs = HalfspaceIntersection(np.hstack([P.A, -P.b[:, None]]), center)
        pts = hs.intersections
    else:
        # flat set: brute-force intersections of n-row subsets
        found = []
        for idx in itertools.combinations(range(P.n_rows), n):
            M = P.A[list(idx)]
            if abs(np.linalg.det(M)) < 1e-10:
                continue
            v = np.linalg.solve(M, P.b[list(idx)])
            if np.all(P.A @ v <= P.b + 1e-9):
                found.append(v)
        pts = np.array(found).reshape(-1, n)
    return _unique_points(pts, n)


def _unique_points(pts: np.ndarray, n: int) -> np.ndarray:
    if len(pts) == 0:
        return pts.reshape(0, n)
    drop = {j for _, j in cKDTree(pts).query_pairs(1e-9, p=np.inf)}
    out = pts[[k for k in range(len(pts)) if k not in drop]]
    if n == 2 and len(out) > 2:
        c = out.mean(axis=0)
        out = out[np.argsort(np.arctan2(out[:, 1] - c[1], out[:, 0] - c[0]))]
    return out


def _hull_from_points(pts: np.ndarray) -> Polytope:
    """H-representation of the convex hull of points, flat hulls included."""
    n = pts.shape[1]
    if n == 1:
        return Polytope.box([pts.min()], [pts.max()])
    c = pts.mean(axis=0)
    _, sv, Vt = np.linalg.svd(pts - c, full_matrices=True)
    scale = max(1.0, float(np.abs(pts).max()))
    r = int(np.sum(sv > 1e-9 * scale))
    if r == n:
        hull = ConvexHull(pts)
        return canonicalize(Polytope(hull.equations[:, :n], -hull.equations[:, n]))
    # flat hull: pin the orthogonal complement, take the hull inside the span
    basis, perp = Vt[:r], Vt[r:]
    rows = [perp, -perp]
    offs = [perp @ c, -(perp @ c)]
    if r > 0:
        local = (pts - c) @ basis.T
        inner = _hull_from_points(local)
        rows.append(inner.A @ basis)
        offs.append(inner.b + inner.A @ (basis @ c))
    return canonicalize(Polytope(np.vstack(rows), np.concatenate(offs)))


# ---------------------------------------------------------------------------
# support functions and predicates


def support(P: Polytope, d, method: str = "auto") -> float:
    """``max d.x`` over ``P``.

    Raises :class:`EmptySetError` for an empty ``P`` and
    :class:`UnboundedError` when ``P`` is unbounded along ``d``.
    """
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size != P.dim:
        raise DimensionError(f"direction has size {d.size}, polytope dim {P.dim}")
    return float(support_many(P, d[None, :], method=method)[0])


def support_many(P: Polytope, D, method: str = "auto") -> np.ndarray:
    """Support function evaluated on each row of ``D``."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape[1] != P.dim:
        raise DimensionError("direction matrix has the wrong width")
    if P.is_empty:
        raise EmptySetError("support function of an empty set")
    if len(D) == 0:
        return np.zeros(0)
    P = canonicalize(P)
    if method == "auto" and P.dim <= 3 and P.is_bounded:
        V = P.vertices()
        if len(V):
            return (D @ V.T).max(axis=1)
    out = np.empty(len(D))
    for k, d in enumerate(D):
        if not np.any(d):
            out[k] = 0.0
            continue
        res = _lp(-d, P.A if P.n_rows else None, P.b if P.n_rows else None)
        if res.status == 3:
            raise UnboundedError(f"polytope unbounded in direction {d}")
        if res.status == 2:
            raise EmptySetError("support function of an empty set")
        if res.status != 0:
            raise GeometryError(f"support LP failed: {res.message}")
        out[k] = -res.fun
    return out


def is_subset(P: Polytope, Q: Polytope, tol: float = SET_TOL) -> bool:
    """True iff ``P`` is contained in ``Q`` up to a support gap of ``tol``."""
    _check_dims(P, Q)
    if P.is_empty:
        return True
    Q = canonicalize(Q)
    if Q.n_rows == 0:
        return True
    if Q.is_empty:
        return False
    try:
        h = support_many(P, Q.A)
    except UnboundedError:
        return False
    return bool(np.max(h - Q.b) <= tol)


def equals(P: Polytope, Q: Polytope, tol: float = SET_TOL) -> bool:
    return is_subset(P, Q, tol) and is_subset(Q, P, tol)


def hausdorff_upper(P: Polytope, Q: Polytope, n_dirs: int = 720) -> float:
    """Max support gap over sampled unit directions (2-D) or facet normals."""
    _check_dims(P, Q)
    if P.dim == 2:
        th = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
        D = np.column_stack([np.cos(th), np.sin(th)])
    else:
        D = np.vstack([np.eye(P.dim), -np.eye(P.dim)])
    D = np.vstack([D, canonicalize(P).A, canonicalize(Q).A])
    return float(np.max(np.abs(support_many(P, D) - support_many(Q, D))))


# ---------------------------------------------------------------------------
# set algebra


def intersect(P: Polytope, Q: Polytope) -> Polytope:
    _check_dims(P, Q)
    if P.is_empty or Q.is_empty:
        return Polytope.empty(P.dim)
    return canonicalize(Polytope(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b])))


def intersect_all(sets: Iterable[Polytope]) -> Polytope:
    sets = list(sets)
    _check_dims(*sets)
    if any(S.is_empty for S in sets):
        return Polytope.empty(sets[0].dim)
    return canonicalize(
        Polytope(np.vstack([S.A for S in sets]), np.concatenate([S.b for S in sets]))
    )


def _fme_step(A: np.ndarray, b: np.ndarray, j: int):
    """Eliminate column ``j`` from ``A x <= b`` (one Fourier-Motzkin step)."""
    col = A[:, j]
    pos = np.flatnonzero(col > _ZERO_ROW)
    neg = np.flatnonzero(col < -_ZERO_ROW)
    zer = np.flatnonzero(np.abs(col) <= _ZERO_ROW)
    rest = np.delete(np.arange(A.shape[1]), j)
    rows = [A[zer][:, rest]]
    offs = [b[zer]]
    if len(pos) and len(neg):
        Ap = A[pos] / col[pos, None]
        bp = b[pos] / col[pos]
        An = A[neg] / -col[neg, None]
        bn = b[neg] / -col[neg]
        combo = (Ap[:, None, :] + An[None, :, :]).reshape(-1, A.shape[1])
        rows.append(combo[:, rest])
        offs.append((bp[:, None] + bn[None, :]).reshape(-1))
    return np.vstack(rows), np.concatenate(offs)


def project_out(P: Polytope, coords: Sequence[int]) -> Polytope:
    """Orthogonal projection eliminating the coordinates ``coords``.

    Sequential Fourier-Motzkin elimination with redundancy pruning after
    each step.
    """
    coords = sorted(set(int(c) for c in coords))
    n = P.dim
    if any(c < 0 or c >= n for c in coords):
        raise DimensionError(f"coordinates {coords} out of range for dim {n}")
    if len(coords) >= n:
        raise DimensionError("cannot project out every coordinate")
    if not coords:
        return canonicalize(P)
    if P.is_empty:
        return Polytope.empty(n - len(coords))
    Q = canonicalize(P)
    remaining = list(range(n))
    for c in reversed(coords):
        j = remaining.index(c)
        A, b = _fme_step(Q.A, Q.b, j)
        remaining.pop(j)
        Q = canonicalize(Polytope(A.reshape(-1, len(remaining)), b))
    return Q


def affine_image(P: Polytope, M, method: str = "auto") -> Polytope:
    """``{M x : x in P}`` via lifting ``y = M x`` and eliminating ``x``.

    The equality ``y = M x`` is resolved with an SVD: on the row space of
    ``M`` the preimage is explicit, the null-space component of ``x`` is
    eliminated, and the image is pinned to the column space of ``M``.
    With ``method="auto"`` a bounded set of dimension at most three is
    instead mapped through its vertices.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise DimensionError(f"map has {M.shape[1]} columns, polytope dim {P.dim}")
    p = M.shape[0]
    if P.is_empty:
        return Polytope.empty(p)
    P = canonicalize(P)
    if method == "auto" and P.dim <= 3 and p <= 3 and P.is_bounded:
        V = P.vertices()
        if len(V):
            return _hull_from_points(V @ M.T)
    U, s, Vt = np.linalg.svd(M)
    r = int(np.sum(s > 1e-9 * max(1.0, s.max(initial=0.0))))
    if r == 0:
        return Polytope.origin(p)
    pinv_part = Vt[:r].T @ np.diag(1.0 / s[:r]) @ U[:, :r].T  # n x p
    null = Vt[r:].T  # n x (n-r)
    perp = U[:, r:]  # p x (p-r)
    k = null.shape[1]
    rows = [np.hstack([P.A @ pinv_part, P.A @ null])]
    offs = [P.b]
    if perp.shape[1]:
        eq = np.hstack([perp.T, np.zeros((perp.shape[1], k))])
        rows += [eq, -eq]
        offs += [np.zeros(perp.shape[1])] * 2
    lifted = Polytope(np.vstack(rows), np.concatenate(offs))
    if k == 0:
        return canonicalize(lifted)
    return project_out(lifted, range(p, p + k))


def affine_preimage(P: Polytope, M) -> Polytope:
    """``{x : M x in P}``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != P.dim:
        raise DimensionError("map output size differs from polytope dim")
    if P.is_empty:
        return Polytope.empty(M.shape[1])
    return canonicalize(Polytope(P.A @ M, P.b))


def minkowski_sum(P: Polytope, Q: Polytope, method: str = "auto") -> Polytope:
    """``{p + q : p in P, q in Q}`` for bounded operands.

    ``method="project"`` forces the lift-and-project route
    ``{(x, p) : x - p in Q, p in P}``.  With ``"auto"``, sets in one or two
    dimensions are summed by adding support values on the union of the
    operands' facet normals.
    """
    _check_dims(P, Q)
    n = P.dim
    if P.is_empty or Q.is_empty:
        return Polytope.empty(n)
    P, Q = canonicalize(P), canonicalize(Q)
    if not (P.is_bounded and Q.is_bounded):
        raise UnboundedError("Minkowski sum needs bounded operands")
    if method == "auto" and n <= 2:
        # in the plane every edge normal of the sum is an edge normal of an operand
        D = np.vstack([P.A, Q.A])
        h = support_many(P, D) + support_many(Q, D)
        return canonicalize(Polytope(D, h))
    rows = np.vstack(
        [
            np.hstack([Q.A, -Q.A]),
            np.hstack([np.zeros((P.n_rows, n)), P.A]),
        ]
    )
    offs = np.concatenate([Q.b, P.b])
    return project_out(Polytope(rows, offs), range(n, 2 * n))


def minkowski_sum_all(sets: Sequence[Polytope], dim: int) -> Polytope:
    out = Polytope.origin(dim)
    for S in sets:
        out = minkowski_sum(out, S)
    return out


def pontryagin_diff(P: Polytope, Q: Polytope) -> Polytope:
    """``{x : x + q in P for all q in Q}``; rows shifted by the support of Q."""
    _check_dims(P, Q)
    n = P.dim
    if Q.is_empty:
        return Polytope.whole(n)
    if P.is_empty:
        return Polytope.empty(n)
    P = canonicalize(P)
    if P.n_rows == 0:
        return P
    if not Q.is_bounded:
        raise UnboundedError("Pontryagin difference needs a bounded subtrahend")
    h = support_many(Q, P.A)
    return canonicalize(Polytope(P.A, P.b - h))


def cartesian_product(sets: Sequence[Polytope]) -> Polytope:
    dims = [S.dim for S in sets]
    total = sum(dims)
    rows, offs = [], []
    col = 0
    for S in sets:
        S = canonicalize(S)
        if S.is_empty:
            return Polytope.empty(total)
        block = np.zeros((S.n_rows, total))
        block[:, col : col + S.dim] = S.A
        rows.append(block)
        offs.append(S.b)
        col += S.dim
    return canonicalize(Polytope(np.vstack(rows), np.concatenate(offs)))


def boundary_loop(P: Polytope) -> np.ndarray:
    """Closed vertex loop of a 2-D polytope (first vertex repeated)."""
    if P.dim != 2:
        raise DimensionError("boundary loops are defined for 2-D sets only")
    V = P.vertices()
    if len(V) == 0:
        return V
    return np.vstack([V, V[:1]])
