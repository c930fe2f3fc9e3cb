"""SO(2) group elements and the two representations used for feature fields.

Feature vectors are stored flat; a :class:`RepSpec` says how the flat vector
splits into copies of the standard representation (2-vectors) and copies of
the discretized regular representation (functions on the circle sampled at
``k_reg`` equally spaced angles).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

RHO1 = "rho1"
RHOREG = "rhoreg"


@dataclass(frozen=True)
class Rotation:
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(self.theta + other.theta)

    def inverse(self) -> "Rotation":
        return Rotation(-self.theta)

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class RepSpec:
    """Ordered blocks of (kind, copies) plus the shared ρ_reg sample count."""

    blocks: tuple[tuple[str, int], ...]
    k_reg: int = 16

    def __post_init__(self):
        blocks = tuple((str(kind), int(n)) for kind, n in self.blocks)
        for kind, n in blocks:
            if kind not in (RHO1, RHOREG):
                raise ValueError(f"unknown representation kind {kind!r}")
            if n <= 0:
                raise ValueError("block copies must be positive")
        if self.k_reg <= 0:
            raise ValueError("k_reg must be positive")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def rho1(cls, copies: int, k_reg: int = 16) -> "RepSpec":
        return cls(((RHO1, copies),), k_reg)

    @classmethod
    def rhoreg(cls, copies: int, k_reg: int = 16) -> "RepSpec":
        return cls(((RHOREG, copies),), k_reg)

    def block_dim(self, kind: str) -> int:
        return 2 if kind == RHO1 else self.k_reg

    @property
    def dim(self) -> int:
        return sum(self.block_dim(kind) * n for kind, n in self.blocks)

    @property
    def only_rhoreg(self) -> bool:
        return all(kind == RHOREG for kind, _ in self.blocks)

    def slices(self):
        """Yield ``(kind, copies, start, stop)`` for every block."""
        start = 0
        for kind, n in self.blocks:
            stop = start + self.block_dim(kind) * n
            yield kind, n, start, stop
            start = stop

    def quadrature_weights(self) -> np.ndarray:
        """Per-entry integration weights: 1 on ρ1 entries, 2π/k_reg on ρ_reg samples."""
        w = np.ones(self.dim)
        for kind, _, a, b in self.slices():
            if kind == RHOREG:
                w[a:b] = TWO_PI / self.k_reg
        return w


@dataclass(frozen=True)
class RegFunction:
    """A function on the circle stored by its values at angles 2πi/k."""

    samples: np.ndarray

    @property
    def k_reg(self) -> int:
        return len(self.samples)

    def __call__(self, angle):
        return circular_interp(np.asarray(self.samples, dtype=float), angle)


def circular_interp(samples: np.ndarray, angle):
    """Linear interpolation of circle samples at arbitrary angle(s), wrapping around."""
    k = samples.shape[-1]
    pos = (np.asarray(angle, dtype=float) % TWO_PI) * (k / TWO_PI)
    i0 = np.floor(pos).astype(int)
    t = pos - i0
    i0 %= k
    i1 = (i0 + 1) % k
    return (1.0 - t) * samples[..., i0] + t * samples[..., i1]


def act_rho1(rot: Rotation, v) -> np.ndarray:
    return rot.matrix() @ np.asarray(v, dtype=float)


def regular_matrix(theta: float, k_reg: int) -> np.ndarray:
    """Matrix of ρ_reg(Rot θ) on k_reg samples: out[i] = f(2πi/k - θ) interpolated.

    At multiples of 2π/k_reg this is an exact cyclic permutation matrix.
    """
    shift = (float(theta) % TWO_PI) * k_reg / TWO_PI
    whole = math.floor(shift)
    frac = shift - whole
    if abs(frac - 1.0) < 1e-9:
        whole, frac = whole + 1, 0.0
    elif frac < 1e-9:
        frac = 0.0
    m = np.zeros((k_reg, k_reg))
    rows = np.arange(k_reg)
    # f(2πi/k - θ) sits at fractional index i - shift = (i - whole - 1) + (1 - frac)
    m[rows, (rows - whole) % k_reg] += 1.0 - frac
    if frac:
        m[rows, (rows - whole - 1) % k_reg] += frac
    return m


def act_rhoreg(rot: Rotation, f: RegFunction) -> RegFunction:
    samples = np.asarray(f.samples, dtype=float)
    return RegFunction(regular_matrix(rot.theta, len(samples)) @ samples)


def rep_matrix(spec: RepSpec, theta: float) -> np.ndarray:
    """Dense block-diagonal matrix of the representation ``spec`` at angle θ."""
    return _rep_matrix_cached(spec, float(theta) % TWO_PI)


@lru_cache(maxsize=4096)
def _rep_matrix_cached(spec: RepSpec, theta: float) -> np.ndarray:
    out = np.zeros((spec.dim, spec.dim))
    r1 = rot2(theta)
    rr = regular_matrix(theta, spec.k_reg)
    for kind, n, a, _ in spec.slices():
        d = spec.block_dim(kind)
        blk = r1 if kind == RHO1 else rr
        for c in range(n):
            s = a + c * d
            out[s : s + d, s : s + d] = blk
    out.setflags(write=False)
    return out


def act_field(rot: Rotation, spec: RepSpec, v) -> np.ndarray:
    """Apply the representation to a flat feature vector, or to the rows of an array."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != spec.dim:
        raise ValueError(f"feature length {v.shape[-1]} does not match spec dim {spec.dim}")
    return v @ rep_matrix(spec, rot.theta).T


def grid_shift_exact(theta: float, k: int, tol: float = 1e-9) -> bool:
    """True when θ is (numerically) an integer multiple of 2π/k."""
    x = (theta % TWO_PI) * k / TWO_PI
    return abs(x - round(x)) < tol


def concat_specs(specs: Sequence[RepSpec]) -> RepSpec:
    k = {s.k_reg for s in specs}
    if len(k) != 1:
        raise ValueError("cannot concatenate specs with different k_reg")
    blocks = []
    for s in specs:
        blocks.extend(s.blocks)
    return RepSpec(tuple(blocks), k.pop())
