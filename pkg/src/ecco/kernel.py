"""Polar-grid convolution kernels with orbit/stabilizer weight sharing.

Trainable weights live on the fundamental domain (the ray θ = 0): one
``out_dim × in_dim`` matrix per radial ring. The matrix at slice ``s`` is the
conjugate ``ρ_out(θ_s) K(0, r) ρ_in(-θ_s)``; the bullseye disk holds an
equivariant per-particle map. For ρ_reg blocks the conjugation is a
simultaneous cyclic shift of both torus indices, which is exact whenever
``k_reg`` is a multiple of ``k_theta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diff
from .diff import Parameter
from .equilinear import DenseLinear, EquiLinear
from .repr import TWO_PI, RegFunction, RepSpec, rep_matrix

BILINEAR = "bilinear"
NEAREST = "nearest"


@dataclass(frozen=True)
class PolarGridSpec:
    k_theta: int
    k_r: int
    R: float
    R_e: float | None = None

    def __post_init__(self):
        if self.k_theta < 1 or self.k_r < 1:
            raise ValueError("k_theta and k_r must be >= 1")
        if self.R_e is None:
            object.__setattr__(self, "R_e", self.R / (self.k_r + 1))
        if not 0 < self.R_e < self.R:
            raise ValueError("need 0 < R_e < R")

    @property
    def n_nodes(self) -> int:
        return self.k_theta * self.k_r

    @property
    def alpha(self) -> float:
        return TWO_PI / self.k_theta

    @property
    def ring_width(self) -> float:
        return (self.R - self.R_e) / self.k_r

    def ring_centers(self) -> np.ndarray:
        return self.R_e + (np.arange(self.k_r) + 0.5) * self.ring_width

    def slice_angles(self) -> np.ndarray:
        return self.alpha * np.arange(self.k_theta)


def node_weights(grid: PolarGridSpec, dx, mode: str = BILINEAR):
    """Interpolation stencil of displacements ``dx`` (P × 2) on the polar grid.

    Returns ``(nodes, weights, bullseye)``: node indices ``s·k_r + m`` and
    weights, both (P × 4), and a boolean mask of displacements inside the
    bullseye (whose stencil weights are zero).
    """
    dx = np.asarray(dx, dtype=float).reshape(-1, 2)
    r = np.hypot(dx[:, 0], dx[:, 1])
    theta = np.arctan2(dx[:, 1], dx[:, 0]) % TWO_PI
    bull = r <= grid.R_e
    p = theta / grid.alpha
    u = np.clip((r - grid.ring_centers()[0]) / grid.ring_width, 0.0, grid.k_r - 1)
    if mode == NEAREST:
        s = np.rint(p).astype(int) % grid.k_theta
        m = np.rint(u).astype(int)
        nodes = np.repeat((s * grid.k_r + m)[:, None], 4, axis=1)
        w = np.zeros((len(dx), 4))
        w[:, 0] = 1.0
    elif mode == BILINEAR:
        s0 = np.floor(p).astype(int)
        ts = p - s0
        s0 %= grid.k_theta
        s1 = (s0 + 1) % grid.k_theta
        if grid.k_r > 1:
            m0 = np.minimum(np.floor(u).astype(int), grid.k_r - 2)
        else:
            m0 = np.zeros(len(dx), dtype=int)
        tr = u - m0
        m1 = np.minimum(m0 + 1, grid.k_r - 1)
        nodes = np.stack([s0 * grid.k_r + m0, s0 * grid.k_r + m1, s1 * grid.k_r + m0, s1 * grid.k_r + m1], axis=1)
        w = np.stack([(1 - ts) * (1 - tr), (1 - ts) * tr, ts * (1 - tr), ts * tr], axis=1)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    w[bull] = 0.0
    return nodes, w, bull


def conjugation_stacks(grid: PolarGridSpec, in_spec: RepSpec, out_spec: RepSpec):
    """ρ_out(θ_s) and ρ_in(-θ_s) for every slice angle."""
    angles = grid.slice_angles()
    rout = np.stack([rep_matrix(out_spec, a) for a in angles])
    rin = np.stack([rep_matrix(in_spec, -a) for a in angles])
    return rout, rin


class PolarKernel:
    """Equivariant polar kernel: ring weights on the fundamental domain plus a bullseye map."""

    equivariant = True

    def __init__(self, grid: PolarGridSpec, in_spec: RepSpec, out_spec: RepSpec, rng=None, scale: float | None = None,
                 window_mass: float = 4.0, name: str = "conv", init: str = "uniform"):
        if in_spec.k_reg != out_spec.k_reg:
            raise ValueError("k_reg must agree between input and output specs")
        has_reg = any(k == "rhoreg" for k, _ in in_spec.blocks + out_spec.blocks)
        if has_reg and in_spec.k_reg % grid.k_theta:
            raise ValueError("k_reg must be a multiple of k_theta")
        self.grid, self.in_spec, self.out_spec, self.name = grid, in_spec, out_spec, name
        rng = np.random.default_rng(0) if rng is None else rng
        if scale is None:
            scale = math.sqrt(3.0 / (in_spec.dim * window_mass))
        shape = (grid.k_r, out_spec.dim, in_spec.dim)
        rings = np.zeros(shape) if init == "zero" else rng.uniform(-scale, scale, size=shape)
        self.ring_weights = Parameter(rings, f"{name}.rings")
        self.bullseye = EquiLinear(in_spec, out_spec, rng=rng, scale=scale, name=f"{name}.bull", init=init)
        self._conj = conjugation_stacks(grid, in_spec, out_spec)

    @property
    def params(self) -> dict:
        return {self.ring_weights.name: self.ring_weights, **self.bullseye.params}

    def num_parameters(self) -> int:
        return self.ring_weights.value.size + self.bullseye.num_parameters()

    def grid_tensor(self):
        """Materialized (k_theta, k_r, out, in) kernel as a tape expression."""
        rout, rin = self._conj
        t = diff.bmatmul(rout[:, None], diff.reshape(self.ring_weights, (1,) + self.ring_weights.value.shape))
        return diff.bmatmul(t, rin[:, None])

    def bullseye_matrix(self):
        return self.bullseye.matrix()


class FreePolarKernel:
    """Non-equivariant ablation: every (θ, r) cell and the bullseye are independent weights."""

    equivariant = False

    def __init__(self, grid: PolarGridSpec, in_spec: RepSpec, out_spec: RepSpec, rng=None, scale: float | None = None,
                 window_mass: float = 4.0, name: str = "conv", init: str = "uniform"):
        self.grid, self.in_spec, self.out_spec, self.name = grid, in_spec, out_spec, name
        rng = np.random.default_rng(0) if rng is None else rng
        if scale is None:
            scale = math.sqrt(3.0 / (in_spec.dim * window_mass))
        shape = (grid.k_theta, grid.k_r, out_spec.dim, in_spec.dim)
        cells = np.zeros(shape) if init == "zero" else rng.uniform(-scale, scale, size=shape)
        self.cell_weights = Parameter(cells, f"{name}.cells")
        self.bullseye = DenseLinear(in_spec, out_spec, rng=rng, scale=scale, name=f"{name}.bull", init=init)

    @property
    def params(self) -> dict:
        return {self.cell_weights.name: self.cell_weights, **self.bullseye.params}

    def num_parameters(self) -> int:
        return self.cell_weights.value.size + self.bullseye.num_parameters()

    def grid_tensor(self):
        return self.cell_weights

    def bullseye_matrix(self):
        return self.bullseye.matrix()


def materialize_grid(K) -> np.ndarray:
    """All slice/ring kernel matrices, shape (k_theta, k_r, out_dim, in_dim)."""
    return K.grid_tensor().value


def node_matrix_from_scratch(K: PolarKernel, s: int, m: int) -> np.ndarray:
    theta = s * K.grid.alpha
    return rep_matrix(K.out_spec, theta) @ K.ring_weights.value[m] @ rep_matrix(K.in_spec, -theta)


def eval_kernel(K, dx, cache: np.ndarray | None = None, mode: str = BILINEAR) -> np.ndarray:
    """Kernel integrand matrix at displacement ``dx`` (requires ‖dx‖ <= R).

    ``cache`` is the output of :func:`materialize_grid`; without it the node
    matrices are conjugated on the fly from the ring weights.
    """
    dx = np.asarray(dx, dtype=float).reshape(2)
    r = math.hypot(dx[0], dx[1])
    if r > K.grid.R * (1 + 1e-12):
        raise ValueError(f"displacement {r} outside cutoff {K.grid.R}")
    if r <= K.grid.R_e:
        return K.bullseye_matrix().value
    nodes, w, _ = node_weights(K.grid, dx[None, :], mode)
    out = np.zeros((K.out_spec.dim, K.in_spec.dim))
    for g, wg in zip(nodes[0], w[0]):
        if wg == 0.0:
            continue
        s, m = divmod(int(g), K.grid.k_r)
        if cache is not None:
            mat = cache[s, m]
        elif isinstance(K, PolarKernel):
            mat = node_matrix_from_scratch(K, s, m)
        else:
            mat = K.cell_weights.value[s, m]
        out += wg * mat
    return out


def torus_apply(M, f) -> RegFunction:
    """Riemann-sum integral transform: out(φ2) = (2π/k) Σ_φ1 M(φ2, φ1) f(φ1)."""
    samples = np.asarray(f.samples if isinstance(f, RegFunction) else f, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.shape != (len(samples), len(samples)):
        raise ValueError(f"torus matrix {M.shape} does not match k_reg={len(samples)}")
    return RegFunction((TWO_PI / len(samples)) * (M @ samples))


def count_parameters(K) -> int:
    return K.num_parameters()
