"""Nested Latin hypercube designs on the unit cube.

Level 1 is the largest design (lowest fidelity); every level is a Latin
hypercube of its own size and contains all points of the next level.
"""
import csv
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ._accel import HAVE_NUMBA, njit


@dataclass(frozen=True)
class NestedDesign:
    """``points`` holds the level-1 design; level s is ``points[:sizes[s]]``.

    Ordering the rows so that each level is a prefix makes the nesting hold
    by construction.
    """

    points: np.ndarray
    sizes: Tuple[int, ...]

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        check_sizes(self.sizes)
        if pts.shape[0] != self.sizes[0]:
            raise ValueError("the first level must contain every point")

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def S(self) -> int:
        return len(self.sizes)

    def level(self, s: int) -> np.ndarray:
        """Points of level ``s`` (0-based, 0 = largest)."""
        return self.points[: self.sizes[s]]

    def tiers(self) -> np.ndarray:
        """Deepest level (0-based) each point belongs to."""
        tier = np.zeros(self.sizes[0], dtype=np.int64)
        for s, n in enumerate(self.sizes):
            tier[:n] = s
        return tier

    def scaled(self, bounds) -> List[np.ndarray]:
        """Per-level points mapped affinely onto ``prod [a_k, b_k]``."""
        b = np.asarray(bounds, dtype=float)
        return [b[:, 0] + self.level(s) * (b[:, 1] - b[:, 0]) for s in range(self.S)]


def check_sizes(sizes: Sequence[int]) -> None:
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise ValueError("design sizes must be positive")
    for big, small in zip(sizes[:-1], sizes[1:]):
        if not big > small or big % small:
            raise ValueError(f"sizes {tuple(sizes)} must strictly decrease with exact divisibility")


def is_lhs(points: np.ndarray) -> bool:
    """Each dimension has exactly one point per stratum of width 1/n."""
    n = points.shape[0]
    if np.any(points < 0) or np.any(points >= 1):
        return False
    strata = np.floor(points * n).astype(int)
    return all(np.unique(strata[:, k]).size == n for k in range(points.shape[1]))


def is_nested(levels: Sequence[np.ndarray]) -> bool:
    for big, small in zip(levels[:-1], levels[1:]):
        rows = {tuple(r) for r in big}
        if any(tuple(r) not in rows for r in small):
            return False
    return True


def generate_nlhs(d: int, sizes: Sequence[int], rng: np.random.Generator) -> NestedDesign:
    """Bottom-up nested LHS.

    Start from an LHS of the smallest size; at each coarser level refine the
    strata, keep the existing points and put the new points in the empty
    fine strata, one random permutation per dimension.
    """
    sizes = tuple(int(s) for s in sizes)
    check_sizes(sizes)
    if d < 1:
        raise ValueError("d must be >= 1")
    n = sizes[-1]
    pts = _in_strata(np.stack([rng.permutation(n) for _ in range(d)], axis=1), rng.uniform(size=(n, d)), n)
    # appending keeps every level a prefix of the coarser ones
    for n_fine in reversed(sizes[:-1]):
        n_new = n_fine - pts.shape[0]
        new = np.empty((n_new, d))
        for k in range(d):
            taken = np.floor(pts[:, k] * n_fine).astype(int)
            free = np.setdiff1d(np.arange(n_fine), taken)
            new[:, k] = _in_strata(rng.permutation(free), rng.uniform(size=n_new), n_fine)
        pts = np.vstack([pts, new])
    return NestedDesign(pts, sizes)


def _in_strata(cells, u, n):
    """Points ``(cells + u) / n``, pulled back inside their cell if rounding escaped."""
    val = (cells + u) / n
    escaped = np.floor(val * n) != cells
    return np.where(escaped, (cells + 0.5) / n, val)


# --- maximin ------------------------------------------------------------------

@njit(cache=True)
def _two_smallest(dist):
    n = dist.shape[0]
    m1 = np.inf
    m2 = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            v = dist[i, j]
            if v < m1:
                m2 = m1
                m1 = v
            elif v < m2:
                m2 = v
    return m1, m2


def _maximin_loops(pts, tiers, n_fine, kinds, idx_a, idx_b, dims, unif):
    """Greedy maximin on pre-drawn moves.

    ``kinds[it] == 0``: redraw coordinate ``dims[it]`` of point ``idx_a[it]``
    inside its finest stratum. ``kinds[it] == 1``: swap that coordinate
    between ``idx_a[it]`` and ``idx_b[it]`` if both sit in the same tier.
    """
    n, d = pts.shape
    dist = np.empty((n, n))
    for i in range(n):
        dist[i, i] = np.inf
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                diff = pts[i, k] - pts[j, k]
                s += diff * diff
            dist[i, j] = np.sqrt(s)
            dist[j, i] = dist[i, j]
    best1, best2 = _two_smallest(dist)
    row_a = np.empty(n)
    row_b = np.empty(n)
    accepted = 0
    for it in range(kinds.shape[0]):
        a = idx_a[it]
        b = idx_b[it]
        k = dims[it]
        old_a = pts[a, k]
        old_b = pts[b, k]
        if kinds[it] == 0:
            cell = np.floor(old_a * n_fine)
            val = (cell + unif[it]) / n_fine
            if np.floor(val * n_fine) != cell:
                continue
            pts[a, k] = val
        else:
            if a == b or tiers[a] != tiers[b]:
                continue
            pts[a, k] = old_b
            pts[b, k] = old_a
        for i in range(n):
            row_a[i] = dist[a, i]
            row_b[i] = dist[b, i]
        for i in range(n):
            if i != a:
                s = 0.0
                for kk in range(d):
                    diff = pts[a, kk] - pts[i, kk]
                    s += diff * diff
                dist[a, i] = np.sqrt(s)
                dist[i, a] = dist[a, i]
        if kinds[it] == 1:
            for i in range(n):
                if i != b:
                    s = 0.0
                    for kk in range(d):
                        diff = pts[b, kk] - pts[i, kk]
                        s += diff * diff
                    dist[b, i] = np.sqrt(s)
                    dist[i, b] = dist[b, i]
        m1, m2 = _two_smallest(dist)
        if m1 > best1 or (m1 == best1 and m2 > best2):
            best1 = m1
            best2 = m2
            accepted += 1
        else:
            pts[a, k] = old_a
            pts[b, k] = old_b
            for i in range(n):
                dist[a, i] = row_a[i]
                dist[i, a] = row_a[i]
            for i in range(n):
                dist[b, i] = row_b[i]
                dist[i, b] = row_b[i]
            dist[a, a] = np.inf
            dist[b, b] = np.inf
    return accepted


def _maximin_numpy(pts, tiers, n_fine, kinds, idx_a, idx_b, dims, unif):
    """Vectorized twin of the loop kernel; same moves, same decisions."""
    n = pts.shape[0]
    iu = np.triu_indices(n, 1)

    def rows(p, i):
        diff = p[i] - p
        return np.sqrt(np.sum(diff * diff, axis=-1))

    dist = np.sqrt(np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1))
    np.fill_diagonal(dist, np.inf)

    def two(dm):
        m = np.partition(dm[iu], 1)
        return m[0], m[1]

    best1, best2 = two(dist)
    accepted = 0
    for it in range(kinds.shape[0]):
        a, b, k = idx_a[it], idx_b[it], dims[it]
        old_a, old_b = pts[a, k], pts[b, k]
        if kinds[it] == 0:
            cell = np.floor(old_a * n_fine)
            val = (cell + unif[it]) / n_fine
            if np.floor(val * n_fine) != cell:
                continue
            pts[a, k] = val
        else:
            if a == b or tiers[a] != tiers[b]:
                continue
            pts[a, k], pts[b, k] = old_b, old_a
        row_a, row_b = dist[a].copy(), dist[b].copy()
        moved = (a,) if kinds[it] == 0 else (a, b)
        for i in moved:
            r = rows(pts, i)
            r[i] = np.inf
            dist[i, :] = r
            dist[:, i] = r
        m1, m2 = two(dist)
        if m1 > best1 or (m1 == best1 and m2 > best2):
            best1, best2 = m1, m2
            accepted += 1
        else:
            pts[a, k], pts[b, k] = old_a, old_b
            dist[a, :] = row_a
            dist[:, a] = row_a
            dist[b, :] = row_b
            dist[:, b] = row_b
    return accepted


maximin_numpy_kernel = _maximin_numpy
if HAVE_NUMBA:
    maximin_numba_kernel = njit(cache=True)(_maximin_loops)
    _maximin_kernel = maximin_numba_kernel
else:
    maximin_numba_kernel = None
    _maximin_kernel = _maximin_numpy


def min_distances(points: np.ndarray) -> Tuple[float, float]:
    """Smallest and second-smallest pairwise Euclidean distances."""
    n = points.shape[0]
    if n < 2:
        return np.inf, np.inf
    diff = points[:, None, :] - points[None, :, :]
    dd = np.sqrt(np.sum(diff * diff, axis=-1))[np.triu_indices(n, 1)]
    if dd.size == 1:
        return float(dd[0]), np.inf
    two = np.partition(dd, 1)[:2]
    return float(two[0]), float(two[1])


def maximin_improve(design: NestedDesign, iterations: int, rng: np.random.Generator) -> NestedDesign:
    """Greedy maximin improvement of the level-1 design.

    Moves preserve both the nesting and the per-level Latin property: a
    coordinate is redrawn only inside its finest stratum, and coordinates
    are swapped only between points that belong to the same set of levels.
    A move is kept only if it increases the minimum distance (ties broken by
    the second-smallest distance).
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    n, d = design.points.shape
    if iterations == 0 or n < 2:
        return design
    kinds = rng.integers(0, 2, size=iterations)
    idx_a = rng.integers(0, n, size=iterations)
    idx_b = rng.integers(0, n, size=iterations)
    dims = rng.integers(0, d, size=iterations)
    unif = rng.uniform(size=iterations)
    pts = np.ascontiguousarray(design.points.copy())
    _maximin_kernel(pts, design.tiers(), float(n), kinds, idx_a, idx_b, dims, unif)
    return NestedDesign(pts, design.sizes)


def write_design_csv(path, design: NestedDesign) -> None:
    """One row per (level, point); points listed under every level they belong to."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", *[f"x_{k + 1}" for k in range(design.d)]])
        for s in range(design.S):
            for row in design.level(s):
                w.writerow([s + 1, *(repr(float(v)) for v in row)])


def read_design_csv(path) -> NestedDesign:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "level":
        raise ValueError("design CSV must start with a 'level' column")
    lev = np.array([int(r[0]) for r in body])
    pts = np.array([[float(v) for v in r[1:]] for r in body])
    S = int(lev.max())
    levels = [pts[lev == s + 1] for s in range(S)]
    if not is_nested(levels):
        raise ValueError("design CSV is not nested")
    for s in range(1, S):
        if not np.array_equal(levels[0][: len(levels[s])], levels[s]):
            raise ValueError("design CSV rows are not prefix-ordered")
    return NestedDesign(levels[0], tuple(len(l) for l in levels))
