"""Equivariant per-particle linear maps between ρ1 and ρ_reg copies.

By Schur's lemma the only equivariant maps are:

* ρ1 → ρ1:      (a, b) ↦ c·(a, b)
* ρ1 → ρ_reg:   (a, b) ↦ φ ↦ c·a·cos φ + c·b·sin φ
* ρ_reg → ρ1:   f ↦ c·(∫ f cos, ∫ f sin)
* ρ_reg → ρ_reg: f ↦ ∫ κ(φ - ψ) f(ψ) dψ

The matrix built here holds the *integrand* (torus-kernel) entries; the
2π/k_reg quadrature weight of ρ_reg inputs is applied to the input vector
by whoever multiplies with it (see :meth:`RepSpec.quadrature_weights`).
"""
from __future__ import annotations

import numpy as np

from . import diff
from .diff import Parameter
from .repr import RHO1, RHOREG, TWO_PI, RepSpec


def circle_basis(k: int) -> np.ndarray:
    """(k, 2) array of (cos φ_j, sin φ_j) at the sample angles."""
    ang = TWO_PI * np.arange(k) / k
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def circulant_index(k: int) -> np.ndarray:
    j = np.arange(k)
    return (j[:, None] - j[None, :]) % k


def block_param_shape(out_kind, n_out, in_kind, n_in, k):
    if out_kind == RHOREG and in_kind == RHOREG:
        return (n_out, n_in, k)
    return (n_out, n_in)


def block_matrix(out_kind, in_kind, p, k):
    """Integrand matrix for one (out block, in block) pair as a tape expression."""
    n_out, n_in = p.shape[0], p.shape[1]
    if out_kind == RHO1 and in_kind == RHO1:
        m = diff.einsum("oi,xy->oxiy", p, np.eye(2))
        return m.reshape(2 * n_out, 2 * n_in)
    if out_kind == RHOREG and in_kind == RHO1:
        m = diff.einsum("oi,jx->ojix", p, circle_basis(k))
        return m.reshape(k * n_out, 2 * n_in)
    if out_kind == RHO1 and in_kind == RHOREG:
        m = diff.einsum("oi,jx->oxij", p, circle_basis(k))
        return m.reshape(2 * n_out, k * n_in)
    m = diff.take(p, circulant_index(k), axis=2)  # (o, i, j, l)
    return diff.transpose(m, (0, 2, 1, 3)).reshape(k * n_out, k * n_in)


class EquiLinear:
    """Trainable equivariant map ``in_spec -> out_spec``; one parameter tensor per block pair."""

    def __init__(self, in_spec: RepSpec, out_spec: RepSpec, rng=None, scale: float | None = None, name: str = "lin", init: str = "uniform"):
        if in_spec.k_reg != out_spec.k_reg:
            raise ValueError("k_reg must agree between input and output specs")
        self.in_spec, self.out_spec = in_spec, out_spec
        self.name = name
        k = in_spec.k_reg
        rng = np.random.default_rng(0) if rng is None else rng
        if scale is None:
            scale = np.sqrt(3.0 / in_spec.dim)
        self.params: dict[str, Parameter] = {}
        for bo, (ko, no) in enumerate(out_spec.blocks):
            for bi, (ki, ni) in enumerate(in_spec.blocks):
                shape = block_param_shape(ko, no, ki, ni, k)
                if init == "zero":
                    val = np.zeros(shape)
                else:
                    val = rng.uniform(-scale, scale, size=shape)
                key = f"{name}.b{bo}_{bi}"
                self.params[key] = Parameter(val, key)

    def matrix(self):
        """(out_dim, in_dim) integrand matrix as a tape expression."""
        k = self.in_spec.k_reg
        rows = []
        for bo, (ko, _) in enumerate(self.out_spec.blocks):
            cols = []
            for bi, (ki, _) in enumerate(self.in_spec.blocks):
                cols.append(block_matrix(ko, ki, self.params[f"{self.name}.b{bo}_{bi}"], k))
            rows.append(cols[0] if len(cols) == 1 else diff.concat(cols, axis=1))
        return rows[0] if len(rows) == 1 else diff.concat(rows, axis=0)

    def matrix_value(self) -> np.ndarray:
        return self.matrix().value

    def effective_matrix(self) -> np.ndarray:
        """Matrix acting directly on feature vectors (quadrature folded in)."""
        return self.matrix_value() * self.in_spec.quadrature_weights()[None, :]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def apply(self, values):
        """Apply to feature rows ``(n, in_dim)``; returns a tape expression."""
        w = self.in_spec.quadrature_weights()
        return diff.matmul(diff.mul(values, w[None, :]), diff.transpose(self.matrix()))


class DenseLinear:
    """Unconstrained per-particle linear map (non-equivariant ablation)."""

    def __init__(self, in_spec: RepSpec, out_spec: RepSpec, rng=None, scale: float | None = None, name: str = "lin", init: str = "uniform"):
        self.in_spec, self.out_spec = in_spec, out_spec
        self.name = name
        rng = np.random.default_rng(0) if rng is None else rng
        if scale is None:
            scale = np.sqrt(3.0 / in_spec.dim)
        shape = (out_spec.dim, in_spec.dim)
        val = np.zeros(shape) if init == "zero" else rng.uniform(-scale, scale, size=shape)
        self.params = {f"{name}.w": Parameter(val, f"{name}.w")}

    def matrix(self):
        return self.params[f"{self.name}.w"]

    def matrix_value(self) -> np.ndarray:
        return self.params[f"{self.name}.w"].value

    def effective_matrix(self) -> np.ndarray:
        return self.matrix_value() * self.in_spec.quadrature_weights()[None, :]

    def num_parameters(self) -> int:
        return self.params[f"{self.name}.w"].value.size

    def apply(self, values):
        w = self.in_spec.quadrature_weights()
        return diff.matmul(diff.mul(values, w[None, :]), diff.transpose(self.matrix()))
