"""Point clouds carrying typed features, and exact fixed-radius neighbor search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diff import Var
from .repr import RepSpec, Rotation, act_field


@dataclass(frozen=True)
class PointSet:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)

    def rotated(self, rot: Rotation, center=(0.0, 0.0)) -> "PointSet":
        c = np.asarray(center, dtype=float)
        return PointSet((self.positions - c) @ rot.matrix().T + c)

    def translated(self, shift) -> "PointSet":
        return PointSet(self.positions + np.asarray(shift, dtype=float))


@dataclass(frozen=True)
class FeatureField:
    """Per-point feature rows; ``values`` may be an ndarray or a tape :class:`Var`."""

    points: PointSet
    spec: RepSpec
    values: object

    def __post_init__(self):
        shape = np.shape(self.data)
        if shape != (len(self.points), self.spec.dim):
            raise ValueError(f"values shape {shape} != ({len(self.points)}, {self.spec.dim})")

    @property
    def data(self) -> np.ndarray:
        return self.values.value if isinstance(self.values, Var) else np.asarray(self.values, dtype=float)

    def rotated(self, rot: Rotation, center=(0.0, 0.0)) -> "FeatureField":
        return FeatureField(self.points.rotated(rot, center), self.spec, act_field(rot, self.spec, self.data))

    def translated(self, shift) -> "FeatureField":
        return FeatureField(self.points.translated(shift), self.spec, self.data)


@dataclass(frozen=True)
class NeighborList:
    """Flat pair arrays sorted by (query, source); ``dx = x_source - x_query``."""

    query: np.ndarray
    source: np.ndarray
    dx: np.ndarray
    dist: np.ndarray
    n_queries: int

    def __len__(self):
        return len(self.query)

    def for_query(self, i: int):
        sel = self.query == i
        return list(zip(self.source[sel].tolist(), self.dx[sel], self.dist[sel].tolist()))

    def pairs(self) -> set:
        return set(zip(self.query.tolist(), self.source.tolist()))


def _finish(q, s, src, qry, R, n_queries):
    dx = src[s] - qry[q]
    dist = np.hypot(dx[:, 0], dx[:, 1])
    keep = dist <= R
    q, s, dx, dist = q[keep], s[keep], dx[keep], dist[keep]
    order = np.lexsort((s, q))
    return NeighborList(q[order], s[order], dx[order], dist[order], n_queries)


def brute_force_neighbors(sources: PointSet, queries: PointSet, R: float) -> NeighborList:
    """O(n·m) reference search; used as the oracle for :func:`radius_neighbors`."""
    if not R > 0:
        raise ValueError("radius must be positive")
    src, qry = sources.positions, queries.positions
    q, s = np.meshgrid(np.arange(len(qry)), np.arange(len(src)), indexing="ij")
    return _finish(q.ravel(), s.ravel(), src, qry, R, len(qry))


def radius_neighbors(sources: PointSet, queries: PointSet, R: float) -> NeighborList:
    """All (query, source) pairs with distance <= R, via a uniform hash grid of cell size R.

    Self pairs are kept. Pairs at exactly distance R are included.
    """
    if not R > 0:
        raise ValueError("radius must be positive")
    src, qry = sources.positions, queries.positions
    if len(src) == 0 or len(qry) == 0:
        empty = np.zeros(0, dtype=int)
        return NeighborList(empty, empty, np.zeros((0, 2)), np.zeros(0), len(qry))
    origin = np.minimum(src.min(axis=0), qry.min(axis=0))
    scell = np.floor((src - origin) / R).astype(np.int64)
    qcell = np.floor((qry - origin) / R).astype(np.int64)
    width = int(max(scell[:, 1].max(), qcell[:, 1].max())) + 3
    skey = scell[:, 0] * width + scell[:, 1]
    order = np.argsort(skey, kind="stable")
    sorted_keys = skey[order]
    qs, ss = [], []
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            key = (qcell[:, 0] + ox) * width + (qcell[:, 1] + oy)
            lo = np.searchsorted(sorted_keys, key, side="left")
            hi = np.searchsorted(sorted_keys, key, side="right")
            counts = hi - lo
            total = counts.sum()
            if total == 0:
                continue
            qi = np.repeat(np.arange(len(qry)), counts)
            start = np.repeat(lo - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
            ss.append(order[start + np.arange(total)])
            qs.append(qi)
    if not qs:
        empty = np.zeros(0, dtype=int)
        return NeighborList(empty, empty, np.zeros((0, 2)), np.zeros(0), len(qry))
    return _finish(np.concatenate(qs), np.concatenate(ss), src, qry, R, len(qry))


def grouped_radius_neighbors(sources: PointSet, queries: PointSet, R: float, source_groups, query_groups) -> NeighborList:
    """Radius search restricted to pairs sharing a group label.

    Groups are laid side by side with a gap wider than R so one hash-grid
    pass serves all of them; offsets and distances are then recomputed from
    the original coordinates, so results match a per-group search exactly.
    """
    if not R > 0:
        raise ValueError("radius must be positive")
    src, qry = sources.positions, queries.positions
    sg, qg = np.asarray(source_groups), np.asarray(query_groups)
    if len(sg) != len(src) or len(qg) != len(qry):
        raise ValueError("group labels must match point counts")
    labels = np.unique(np.concatenate([sg, qg]))
    shift = np.zeros((len(labels), 2))
    x = 0.0
    for i, g in enumerate(labels):
        pts = np.concatenate([src[sg == g], qry[qg == g]])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        shift[i] = (x - lo[0], -lo[1])
        x += hi[0] - lo[0] + 2.0 * R + 1.0
    s_shift = src + shift[np.searchsorted(labels, sg)]
    q_shift = qry + shift[np.searchsorted(labels, qg)]
    nb = radius_neighbors(PointSet(s_shift), PointSet(q_shift), R * (1 + 1e-9))
    q, s = nb.query, nb.source
    same = sg[s] == qg[q]
    q, s = q[same], s[same]
    dx = src[s] - qry[q]
    dist = np.hypot(dx[:, 0], dx[:, 1])
    keep = dist <= R
    return NeighborList(q[keep], s[keep], dx[keep], dist[keep], len(qry))
