"""Equivariant layers: continuous convolution, per-particle maps, nonlinearity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import diff
from .equilinear import DenseLinear, EquiLinear
from .field import FeatureField, PointSet, grouped_radius_neighbors, radius_neighbors
from .kernel import BILINEAR, PolarGridSpec, node_weights

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class AttentionWindow:
    """Compactly supported radial weight a(r) = (1 - (r/R)²)² on [0, R]."""

    R: float

    def __call__(self, r):
        x = np.asarray(r, dtype=float) / self.R
        return np.where(x <= 1.0, (1.0 - x * x) ** 2, 0.0)


@dataclass
class ConvGeometry:
    """Sparse gather operators for one (sources, queries) geometry.

    Only (query, grid node) pairs that receive any source weight are kept.
    ``gather`` maps source features to those pairs, ordered by node and then
    query; ``segments`` lists ``(node, start, stop)`` row ranges sharing a
    node; ``place`` adds each row into its query. ``bull`` maps source
    features to per-query bullseye sums. The attention window and any source
    mask are already folded into ``gather`` and ``bull``.
    """

    gather: sp.csr_matrix
    place: sp.csr_matrix
    segments: tuple
    bull: sp.csr_matrix
    n_queries: int
    n_nodes: int

    @classmethod
    def from_neighbors(cls, nbrs: NeighborList, grid: PolarGridSpec, window: AttentionWindow, n_sources: int,
                       mode: str = BILINEAR, source_weight=None):
        a = window(nbrs.dist)
        if source_weight is not None:
            a = a * np.asarray(source_weight, dtype=float)[nbrs.source]
        nodes, w, bull = node_weights(grid, nbrs.dx, mode)
        G, nq = grid.n_nodes, nbrs.n_queries
        keys = (nodes * nq + nbrs.query[:, None]).ravel()
        cols = np.repeat(nbrs.source, 4)
        vals = (w * a[:, None]).ravel()
        keep = vals != 0.0
        rows, inv = np.unique(keys[keep], return_inverse=True)
        gather = sp.csr_matrix((vals[keep], (inv, cols[keep])), shape=(len(rows), n_sources))
        node_of, query_of = rows // nq, rows % nq
        place = sp.csr_matrix((np.ones(len(rows)), (query_of, np.arange(len(rows)))), shape=(nq, len(rows)))
        cuts = np.flatnonzero(np.diff(node_of)) + 1
        starts = np.concatenate([[0], cuts]).astype(int) if len(rows) else np.zeros(0, dtype=int)
        stops = np.concatenate([cuts, [len(rows)]]).astype(int) if len(rows) else np.zeros(0, dtype=int)
        segments = tuple((int(node_of[a0]), int(a0), int(b0)) for a0, b0 in zip(starts, stops))
        bvals = np.where(bull, a, 0.0)
        kb = bvals != 0.0
        bmat = sp.csr_matrix((bvals[kb], (nbrs.query[kb], nbrs.source[kb])), shape=(nq, n_sources))
        return cls(gather, place, segments, bmat, nq, G)

    @classmethod
    def build(cls, sources: PointSet, queries: PointSet, grid: PolarGridSpec, window: AttentionWindow,
              mode: str = BILINEAR, source_weight=None, source_groups=None, query_groups=None):
        """Geometry for one point cloud, or for several disjoint clouds given group labels."""
        if window.R != grid.R:
            raise ValueError("attention window and kernel grid must share the cutoff radius")
        if source_groups is None:
            nbrs = radius_neighbors(sources, queries, grid.R)
            return cls.from_neighbors(nbrs, grid, window, len(sources), mode, source_weight)
        nbrs = grouped_radius_neighbors(sources, queries, grid.R, source_groups, query_groups)
        return cls.from_neighbors(nbrs, grid, window, len(sources), mode, source_weight)


def conv_apply(K, geom: ConvGeometry, values, grid_tensor=None):
    """Tape-level continuous convolution of feature rows ``values`` (n_src × in_dim).

    ``grid_tensor`` lets callers reuse one materialized kernel across calls.
    Work is proportional to the number of occupied (query, node) pairs.
    """
    qw = K.in_spec.quadrature_weights()
    fq = diff.mul(values, qw[None, :])
    kg = K.grid_tensor() if grid_tensor is None else grid_tensor
    d, c = K.in_spec.dim, K.out_spec.dim
    out = None
    if geom.segments:
        k_nodes = diff.transpose(kg, (0, 1, 3, 2)).reshape(geom.n_nodes, d, c)
        s = diff.spmm(geom.gather, fq)
        out = diff.spmm(geom.place, diff.segment_matmul(s, k_nodes, geom.segments))
    if geom.bull.nnz:
        b = diff.matmul(diff.spmm(geom.bull, fq), diff.transpose(K.bullseye_matrix()))
        out = b if out is None else diff.add(out, b)
    if out is None:
        out = diff.const(np.zeros((geom.n_queries, c)))
    return out


def cts_conv(K, window: AttentionWindow, sources: FeatureField, queries: PointSet, mode: str = BILINEAR,
             source_weight=None) -> FeatureField:
    """g_i = Σ_j a(‖x_j - x_i‖) K(x_j - x_i) · f_j, with ρ_reg inputs integrated over the circle."""
    if sources.spec != K.in_spec:
        raise ValueError("source representation does not match kernel input spec")
    geom = ConvGeometry.build(sources.points, queries, K.grid, window, mode, source_weight)
    out = conv_apply(K, geom, sources.values)
    return FeatureField(queries, K.out_spec, out)


def equi_linear(L, f: FeatureField) -> FeatureField:
    if f.spec != L.in_spec:
        raise ValueError("feature spec does not match linear map input spec")
    return FeatureField(f.points, L.out_spec, L.apply(f.values))


def leaky_relu_field(values, slope: float = LEAKY_SLOPE):
    return diff.leaky_relu(values, slope)


def pointwise_nonlinearity(f: FeatureField, slope: float = LEAKY_SLOPE) -> FeatureField:
    """Leaky rectifier on every ρ_reg sample; refuses fields containing ρ1 blocks."""
    if not f.spec.only_rhoreg:
        raise ValueError("pointwise nonlinearity is only equivariant on ρ_reg blocks")
    return FeatureField(f.points, f.spec, diff.leaky_relu(f.values, slope))


def naive_cts_conv(K, window: AttentionWindow, sources: FeatureField, queries: PointSet, mode: str = BILINEAR) -> np.ndarray:
    """Direct double loop over (query, source) pairs; reference for tests."""
    from .kernel import eval_kernel

    qw = K.in_spec.quadrature_weights()
    f = sources.data
    out = np.zeros((len(queries), K.out_spec.dim))
    for i, xi in enumerate(queries.positions):
        for j, xj in enumerate(sources.points.positions):
            dx = xj - xi
            r = float(np.hypot(*dx))
            if r > K.grid.R:
                continue
            out[i] += float(window(r)) * eval_kernel(K, dx, mode=mode) @ (qw * f[j])
    return out


__all__ = [
    "AttentionWindow",
    "ConvGeometry",
    "EquiLinear",
    "DenseLinear",
    "conv_apply",
    "cts_conv",
    "equi_linear",
    "pointwise_nonlinearity",
    "naive_cts_conv",
]
