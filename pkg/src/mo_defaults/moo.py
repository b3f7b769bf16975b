"""Multi-objective primitives over finite point sets (all objectives minimized)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def _as_points(ps, allow_empty: bool = False) -> np.ndarray:
    arr = np.asarray(ps, dtype=float)
    if arr.size == 0:
        if not allow_empty:
            raise ValueError("empty point set")
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def dominates(p: Sequence[float], q: Sequence[float]) -> bool:
    """True when ``p`` is no worse than ``q`` everywhere and strictly better somewhere."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return bool(np.all(p <= q) and np.any(p < q))


def _dominated_mask(arr: np.ndarray) -> np.ndarray:
    le = np.all(arr[:, None, :] <= arr[None, :, :], axis=2)
    lt = np.any(arr[:, None, :] < arr[None, :, :], axis=2)
    # dom[i, j]: point i dominates point j
    dom = le & lt
    return dom.any(axis=0)


def pareto_front(ps) -> list[int]:
    """Indices (ascending) of the non-dominated points; duplicates are all kept."""
    arr = _as_points(ps)
    return np.flatnonzero(~_dominated_mask(arr)).tolist()


def quantile_normalize(values: Sequence[float]) -> np.ndarray:
    """Map values to ``(rank - 0.5) / N`` with average ranks for ties."""
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("expected a nonempty 1-D sequence")
    if not np.all(np.isfinite(vals)):
        raise ValueError("values must be finite")
    return (rankdata(vals, method="average") - 0.5) / vals.size


def quantile_normalize_columns(points) -> np.ndarray:
    arr = _as_points(points)
    return np.column_stack([quantile_normalize(arr[:, k]) for k in range(arr.shape[1])])


def _hv_sorted(pts: np.ndarray, ref: np.ndarray) -> float:
    # pts: strictly inside the reference box, mutually non-dominated, no duplicates
    m = pts.shape[1]
    if m == 1:
        return float(ref[0] - pts[:, 0].min())
    if m == 2:
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        total, prev_y = 0.0, ref[1]
        for x, y in pts[order]:
            if y < prev_y:
                total += (ref[0] - x) * (prev_y - y)
                prev_y = y
        return total
    # slice along the last axis; each slab is bounded by consecutive distinct levels
    order = np.argsort(pts[:, -1], kind="stable")
    pts = pts[order]
    levels = pts[:, -1]
    total = 0.0
    for i in range(len(pts)):
        upper = levels[i + 1] if i + 1 < len(pts) else ref[-1]
        depth = upper - levels[i]
        if depth <= 0:
            continue
        total += depth * _hv_sorted(_nondominated_unique(pts[: i + 1, :-1]), ref[:-1])
    return total


def _nondominated_unique(arr: np.ndarray) -> np.ndarray:
    arr = np.unique(arr, axis=0)
    return arr[~_dominated_mask(arr)] if len(arr) > 1 else arr


def hypervolume(ps, ref: Sequence[float] | None = None) -> float:
    """Exact Lebesgue measure of the region dominated by ``ps`` and bounded by ``ref``.

    Points that are not strictly below the reference point in every
    coordinate dominate a set of zero measure and are ignored. Two objectives
    use a sweep; more objectives slice recursively along the last axis.
    """
    arr = np.asarray(ps, dtype=float)
    if arr.size == 0:
        return 0.0
    arr = _as_points(arr)
    ref = np.ones(arr.shape[1]) if ref is None else np.asarray(ref, dtype=float)
    if ref.shape != (arr.shape[1],):
        raise ValueError(f"dimension mismatch: points have m={arr.shape[1]}, reference {ref.shape}")
    arr = arr[np.all(arr < ref, axis=1)]
    if len(arr) == 0:
        return 0.0
    return float(_hv_sorted(_nondominated_unique(arr), ref))


def hypervolume_error(selected, all_points, ref: Sequence[float] | None = None) -> float:
    """Hypervolume of the front of ``all_points`` minus that of ``selected``."""
    full = _as_points(all_points)
    sel = np.asarray(selected, dtype=float)
    if sel.size and sel.reshape(len(sel), -1).shape[1] != full.shape[1]:
        raise ValueError("dimension mismatch between selected and all points")
    front = full[pareto_front(full)]
    return hypervolume(front, ref) - hypervolume(sel.reshape(-1, full.shape[1]), ref)


def epsilon_net_order(ps, first: int = 0) -> list[int]:
    """Greedy farthest-point ordering starting from ``first``.

    Each next point maximizes its minimum Euclidean distance to the points
    already chosen; ties go to the smallest index.
    """
    arr = _as_points(ps)
    n = len(arr)
    if not 0 <= first < n:
        raise IndexError(f"first index {first} out of range for {n} points")
    order = [first]
    chosen = np.zeros(n, dtype=bool)
    chosen[first] = True
    min_dist = np.linalg.norm(arr - arr[first], axis=1)
    for _ in range(n - 1):
        cand = np.where(chosen, -np.inf, min_dist)
        nxt = int(np.argmax(cand))
        order.append(nxt)
        chosen[nxt] = True
        np.minimum(min_dist, np.linalg.norm(arr - arr[nxt], axis=1), out=min_dist)
    return order


@dataclass(frozen=True)
class LayeredOrder:
    order: tuple[int, ...]
    layer_boundaries: tuple[int, ...]

    def layers(self) -> list[list[int]]:
        starts = (0,) + self.layer_boundaries[:-1]
        return [list(self.order[a:b]) for a, b in zip(starts, self.layer_boundaries)]


def non_dominated_sort(ps, seed: int | np.random.Generator | None = 0) -> LayeredOrder:
    """Peel Pareto layers and order each layer as an epsilon-net.

    The first element of each layer is drawn uniformly from ``seed``'s
    generator; the layer partition itself does not depend on the seed.
    """
    arr = _as_points(ps)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    remaining = np.arange(len(arr))
    order: list[int] = []
    bounds: list[int] = []
    while remaining.size:
        sub = arr[remaining]
        layer = remaining[~_dominated_mask(sub)]
        start = int(rng.integers(len(layer)))
        local = epsilon_net_order(arr[layer], start)
        order.extend(int(layer[i]) for i in local)
        bounds.append(len(order))
        remaining = np.setdiff1d(remaining, layer, assume_unique=True)
    return LayeredOrder(tuple(order), tuple(bounds))
