"""Discrete mixing measures and exact Wasserstein distances between them.

A mixing measure ``G = sum_i p_i delta_{theta_i}`` is stored as a ``(k, d)``
atom array and a length-``k`` weight vector.  Distances are computed by
solving the transportation linear program exactly with a small network
simplex, which is cheap at the sizes that occur here (``k`` rarely above 10).
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

MERGE_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-12
READ_WEIGHT_SUM_TOL = 1e-6


class MeasureError(ValueError):
    """Raised for malformed mixing measures or incompatible measure pairs."""


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned compact box holding the component parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise MeasureError("box bounds must be 1-d vectors of equal length >= 1")
        if not np.all(lower < upper):
            raise MeasureError(f"box needs lower < upper in every coordinate, got {lower} / {upper}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, atoms, atol: float = 0.0) -> bool:
        atoms = np.atleast_2d(atoms)
        return bool(np.all(atoms >= self.lower - atol) and np.all(atoms <= self.upper + atol))

    def clip(self, atoms) -> np.ndarray:
        return np.clip(atoms, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class MixingMeasure:
    """Finite discrete probability measure on the parameter space.

    Parameters
    ----------
    atoms : array-like of shape (k, d) or (k,)
        Support points; a 1-d input is read as ``k`` scalar atoms.
    weights : array-like of shape (k,)
        Nonnegative masses summing to one (within ``1e-12``).
    box : ParameterBox, optional
        When given, every atom must lie inside it.
    """

    atoms: np.ndarray
    weights: np.ndarray
    box: Optional[ParameterBox] = field(default=None, compare=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        atoms = atoms.copy()
        weights = np.asarray(self.weights, dtype=float).ravel().copy()
        if atoms.ndim != 2 or atoms.shape[0] != weights.size or weights.size == 0:
            raise MeasureError(
                f"atoms of shape {atoms.shape} do not match {weights.size} weights"
            )
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise MeasureError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise MeasureError("weights must be nonnegative")
        if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
            raise MeasureError(f"weights sum to {math.fsum(weights)!r}, expected 1")
        if self.box is not None:
            if self.box.dim != atoms.shape[1]:
                raise MeasureError("box dimension does not match atom dimension")
            if not self.box.contains(atoms):
                raise MeasureError("atom outside parameter box")
        atoms.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    def __eq__(self, other):
        # exact, order-sensitive comparison; the box is ignored
        if not isinstance(other, MixingMeasure):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(self.weights, other.weights)

    __hash__ = None

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def with_box(self, box: Optional[ParameterBox]) -> "MixingMeasure":
        return MixingMeasure(self.atoms, self.weights, box)

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict, box: Optional[ParameterBox] = None) -> "MixingMeasure":
        """Read ``{"atoms": [[...]], "weights": [...]}``, tolerating a 1e-6 weight-sum error."""
        try:
            atoms = np.asarray(obj["atoms"], dtype=float)
            weights = np.asarray(obj["weights"], dtype=float)
        except (KeyError, TypeError) as exc:
            raise MeasureError(f"malformed measure object: {exc}") from exc
        return canonicalize(atoms, weights, box=box, sum_tol=READ_WEIGHT_SUM_TOL)

    @classmethod
    def from_json(cls, text: str, box: Optional[ParameterBox] = None) -> "MixingMeasure":
        return cls.from_dict(json.loads(text), box=box)

    def __repr__(self) -> str:
        parts = ", ".join(
            f"{w:.4g}@{tuple(np.round(a, 4).tolist())}" for a, w in zip(self.atoms, self.weights)
        )
        return f"MixingMeasure({parts})"


def dirac(atom, box: Optional[ParameterBox] = None) -> MixingMeasure:
    return MixingMeasure(np.atleast_2d(np.asarray(atom, dtype=float)), [1.0], box)


def _as_pair(G_or_atoms, weights):
    if isinstance(G_or_atoms, MixingMeasure):
        return np.array(G_or_atoms.atoms), np.array(G_or_atoms.weights), G_or_atoms.box
    atoms = np.asarray(G_or_atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    return atoms, np.asarray(weights, dtype=float).ravel(), None


def canonicalize(G_or_atoms, weights=None, box: Optional[ParameterBox] = None,
                 sum_tol: float = READ_WEIGHT_SUM_TOL) -> MixingMeasure:
    """Return the canonical form of a discrete measure.

    Atoms closer than ``1e-10`` (l2) are merged onto the lexicographically
    first member of their cluster with summed weight, zero-weight atoms are
    dropped, weights are renormalized and atoms are sorted
    lexicographically.  Accepts either a ``MixingMeasure`` or raw
    ``(atoms, weights)``.
    """
    atoms, w, own_box = _as_pair(G_or_atoms, weights)
    box = box if box is not None else own_box
    if atoms.shape[0] != w.size or w.size == 0:
        raise MeasureError("atoms and weights disagree in length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise MeasureError("weights must be finite and nonnegative")
    total = math.fsum(w)
    if total == 0.0:
        raise MeasureError("all weights are zero")
    if abs(total - 1.0) > sum_tol:
        raise MeasureError(f"weights sum to {total!r}, outside tolerance {sum_tol}")

    keep = w > 0
    atoms, w = atoms[keep], w[keep]
    order = np.lexsort(atoms.T[::-1])
    atoms, w = atoms[order], w[order]

    k = w.size
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(k):
        for j in range(i + 1, k):
            if np.linalg.norm(atoms[i] - atoms[j]) < MERGE_TOL:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = sorted({find(i) for i in range(k)})
    if len(roots) < k:
        merged_w = np.array([math.fsum(w[[i for i in range(k) if find(i) == r]]) for r in roots])
        atoms, w = atoms[roots], merged_w

    # already-normalized input is left bit-for-bit alone so that the map is idempotent
    if abs(math.fsum(w) - 1.0) > 1e-15:
        w = w / math.fsum(w)
    return MixingMeasure(atoms, w, box)


def min_mass_separation(G: MixingMeasure) -> tuple[float, float]:
    """Smallest weight and smallest pairwise atom distance (``inf`` for one atom)."""
    if not isinstance(G, MixingMeasure):
        raise MeasureError("expected a MixingMeasure")
    min_mass = float(np.min(G.weights))
    if G.k < 2:
        return min_mass, math.inf
    diff = G.atoms[:, None, :] - G.atoms[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(G.k, 1)
    return min_mass, float(np.min(dist[iu]))


@dataclass(frozen=True)
class Coupling:
    """Joint distribution between the weights of two measures."""

    q: np.ndarray

    def check(self, a, b, tol: float = 1e-9) -> bool:
        return bool(
            np.all(self.q >= -tol)
            and np.allclose(self.q.sum(axis=1), a, atol=tol, rtol=0)
            and np.allclose(self.q.sum(axis=0), b, atol=tol, rtol=0)
        )


def cost_matrix(A: np.ndarray, B: np.ndarray, r: int = 1) -> np.ndarray:
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1)) ** r


def _northwest_corner(a, b):
    k, l = a.size, b.size
    x = np.zeros((k, l))
    s, d = a.copy(), b.copy()
    basis = []
    i = j = 0
    while True:
        amt = max(min(s[i], d[j]), 0.0)
        x[i, j] = amt
        s[i] -= amt
        d[j] -= amt
        basis.append((i, j))
        if i == k - 1 and j == l - 1:
            break
        if j == l - 1 or (i < k - 1 and s[i] <= d[j]):
            i += 1
        else:
            j += 1
    return x, basis


def _tree_path(basis, k, row, col):
    """Cells on the basis-tree path from column node ``col`` to row node ``row``."""
    adj: dict = {}
    for cell in basis:
        i, j = cell
        adj.setdefault(("r", i), []).append((("c", j), cell))
        adj.setdefault(("c", j), []).append((("r", i), cell))
    start, goal = ("c", col), ("r", row)
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    if goal not in prev:
        raise RuntimeError("basis is not a spanning tree")
    path = []
    node = goal
    while prev[node] is not None:
        node, cell = prev[node]
        path.append(cell)
    return path[::-1]


def transport_lp(a, b, C, max_iter: int = 10_000) -> tuple[float, np.ndarray]:
    """Exact transportation simplex (northwest-corner start, Bland pivoting).

    Returns the optimal cost and an optimal plan.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    k, l = a.size, b.size
    if k == 1:
        return float(np.dot(b, C[0])), b[None, :].copy()
    if l == 1:
        return float(np.dot(a, C[:, 0])), a[:, None].copy()

    x, basis = _northwest_corner(a, b)
    tol = 1e-13 * (1.0 + np.max(np.abs(C)))
    for _ in range(max_iter):
        u = np.full(k, np.nan)
        v = np.full(l, np.nan)
        u[0] = 0.0
        pending = list(basis)
        while pending:
            rest = []
            for i, j in pending:
                if not np.isnan(u[i]) and np.isnan(v[j]):
                    v[j] = C[i, j] - u[i]
                elif np.isnan(u[i]) and not np.isnan(v[j]):
                    u[i] = C[i, j] - v[j]
                elif np.isnan(u[i]) and np.isnan(v[j]):
                    rest.append((i, j))
            if len(rest) == len(pending):
                raise RuntimeError("disconnected transportation basis")
            pending = rest
        reduced = C - u[:, None] - v[None, :]
        in_basis = set(basis)
        entering = None
        for i, j in product(range(k), range(l)):
            if (i, j) not in in_basis and reduced[i, j] < -tol:
                entering = (i, j)
                break
        if entering is None:
            return float(np.sum(x * C)), x
        path = _tree_path(basis, k, entering[0], entering[1])
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[c] for c in minus)
        leaving = min(c for c in minus if x[c] <= theta)
        x[entering] += theta
        for c in plus:
            x[c] += theta
        for c in minus:
            x[c] -= theta
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append(entering)
    raise RuntimeError("transportation simplex did not terminate")


def _check_pair(G1, G2):
    if not isinstance(G1, MixingMeasure) or not isinstance(G2, MixingMeasure):
        raise MeasureError("wasserstein expects two MixingMeasure instances")
    if G1.dim != G2.dim:
        raise MeasureError(f"dimension mismatch: {G1.dim} vs {G2.dim}")


def optimal_coupling(G1: MixingMeasure, G2: MixingMeasure, r: int = 1) -> tuple[float, Coupling]:
    """``W_r`` together with an optimal coupling."""
    _check_pair(G1, G2)
    if int(r) != r or r < 1:
        raise MeasureError("r must be an integer >= 1")
    C = cost_matrix(G1.atoms, G2.atoms, int(r))
    cost, plan = transport_lp(G1.weights, G2.weights, C)
    return max(cost, 0.0) ** (1.0 / r), Coupling(plan)


def wasserstein(G1: MixingMeasure, G2: MixingMeasure, r: int = 1) -> float:
    """Order-``r`` Wasserstein distance with l2 ground cost on atoms."""
    return optimal_coupling(G1, G2, r)[0]


def measure_from_lists(atoms: Sequence, weights: Sequence) -> MixingMeasure:
    return canonicalize(np.asarray(atoms, dtype=float), np.asarray(weights, dtype=float))
