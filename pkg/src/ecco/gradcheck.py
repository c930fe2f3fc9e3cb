"""Finite-difference checks for every differentiable operation of the model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diff
from .diff import Parameter, check_gradients
from .equilinear import EquiLinear
from .field import PointSet
from .kernel import PolarGridSpec, PolarKernel, node_weights
from .model import ECCOModel, Frame, MapField, ModelConfig, _masked_sq_loss, extrapolate_history
from .ops import AttentionWindow, ConvGeometry, conv_apply
from .repr import RepSpec

TOLERANCE = 1e-4


def _projection(rng, shape):
    return rng.normal(size=shape)


def _mixed(k=8):
    return RepSpec((("rho1", 1), ("rhoreg", 2)), k)


def case_eval_kernel(seed):
    rng = np.random.default_rng(seed)
    grid = PolarGridSpec(8, 3, 2.0)
    K = PolarKernel(grid, _mixed(), RepSpec.rhoreg(1, 8), rng=rng)
    dx = rng.uniform(-1.4, 1.4, size=(6, 2))
    nodes, w, _ = node_weights(grid, dx)
    proj = _projection(rng, (6, K.out_spec.dim, K.in_spec.dim))

    def loss():
        g = diff.reshape(K.grid_tensor(), (grid.n_nodes, K.out_spec.dim, K.in_spec.dim))
        picked = diff.take(g, nodes.ravel(), axis=0).reshape(6, 4, K.out_spec.dim, K.in_spec.dim)
        mats = diff.einsum("pnab,pn->pab", picked, w)
        return diff.total(diff.mul(mats, proj))

    return loss, [K.ring_weights]


def case_torus_apply(seed):
    rng = np.random.default_rng(seed)
    spec = RepSpec.rhoreg(2, 8)
    L = EquiLinear(spec, spec, rng=rng)
    f = Parameter(rng.normal(size=(5, spec.dim)), "f")
    proj = _projection(rng, (5, spec.dim))
    return (lambda: diff.total(diff.mul(L.apply(f), proj))), [*L.params.values(), f]


def case_equi_linear(seed):
    rng = np.random.default_rng(seed)
    a, b = _mixed(), RepSpec((("rhoreg", 1), ("rho1", 2)), 8)
    L = EquiLinear(a, b, rng=rng)
    f = Parameter(rng.normal(size=(4, a.dim)), "f")
    proj = _projection(rng, (4, b.dim))
    return (lambda: diff.total(diff.mul(L.apply(f), proj))), [*L.params.values(), f]


def case_cts_conv(seed):
    """‖cts_conv output‖² on a three-point cloud."""
    rng = np.random.default_rng(seed)
    grid = PolarGridSpec(8, 2, 3.0)
    spec_in, spec_out = _mixed(), RepSpec((("rhoreg", 1), ("rho1", 1)), 8)
    K = PolarKernel(grid, spec_in, spec_out, rng=rng)
    pts = PointSet(rng.uniform(-1.2, 1.2, size=(3, 2)))
    geom = ConvGeometry.build(pts, pts, grid, AttentionWindow(grid.R))
    f = Parameter(rng.normal(size=(3, spec_in.dim)), "f")
    return (lambda: diff.total(diff.square(conv_apply(K, geom, f)))), [*K.params.values(), f]


def case_nonlinearity(seed):
    rng = np.random.default_rng(seed)
    x = Parameter(rng.normal(size=(4, 16)), "x")
    proj = _projection(rng, (4, 16))
    return (lambda: diff.total(diff.mul(diff.leaky_relu(x), proj))), [x]


def case_extrapolation(seed):
    rng = np.random.default_rng(seed)
    hist = Parameter(rng.normal(size=(4, 5, 2)), "history")
    mask = np.ones((4, 5), dtype=bool)
    mask[1, -3] = False
    mask[2, -1] = False
    proj = _projection(rng, (4, 2))
    return (lambda: diff.total(diff.mul(extrapolate_history(hist, mask), proj))), [hist]


def case_loss(seed):
    rng = np.random.default_rng(seed)
    preds = [Parameter(rng.normal(size=(3, 2)), f"p{i}") for i in range(2)]
    truths = [rng.normal(size=(3, 2)) for _ in range(2)]
    masks = [np.array([True, False, True]), np.array([True, True, True])]
    return (lambda: _masked_sq_loss(preds, truths, masks)), preds


def case_model_step(seed):
    """One prediction step of a small model, checked on a sample of its parameters."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(t_in=3, t_out=1, k_theta=4, k_r=2, k_reg=4, R=3.0, encode_channels=(1, 1),
                      predict_channels=(1,), seed=seed)
    model = ECCOModel(cfg)
    hist = np.cumsum(rng.normal(scale=0.4, size=(3, 3, 2)), axis=1)
    mp_pos = rng.uniform(-1.5, 1.5, size=(2, 2))
    ang = rng.uniform(0, 2 * np.pi, 2)
    fr = Frame(hist, np.ones((3, 3), dtype=bool), MapField(mp_pos, np.stack([np.cos(ang), np.sin(ang)], 1)))
    target = rng.normal(size=(3, 2))
    params = list(model.params.values())
    picked = [params[i] for i in sorted(rng.choice(len(params), 4, replace=False))]
    return (lambda: diff.total(diff.square(diff.sub(model.step_positions([fr])[0], target)))), picked


CASES = {
    "eval_kernel": case_eval_kernel,
    "torus_apply": case_torus_apply,
    "equi_linear": case_equi_linear,
    "cts_conv": case_cts_conv,
    "nonlinearity": case_nonlinearity,
    "extrapolation": case_extrapolation,
    "loss": case_loss,
    "model_step": case_model_step,
}


@dataclass
class GradcheckRow:
    op: str
    seeds: int
    worst_rel_err: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < TOLERANCE


def run_gradchecks(ops=None, seeds: int = 20, h: float = 1e-5, max_entries: int = 32) -> list:
    rows = []
    for name in ops or CASES:
        worst = 0.0
        for s in range(seeds):
            loss, params = CASES[name](s)
            worst = max(worst, check_gradients(loss, params, h=h, max_entries=max_entries,
                                               rng=np.random.default_rng(s)))
        rows.append(GradcheckRow(name, seeds, worst))
    return rows
