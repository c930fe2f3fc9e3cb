"""The ECCO trajectory model: velocity encoder, map fusion, ρ_reg hidden stack,
residual prediction on top of a kinematic extrapolation, autoregressive rollout.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import dataclass, fields

import numpy as np

from . import diff
from .diff import AdamState, Parameter, Tape, adam_step, full_grads
from .equilinear import DenseLinear, EquiLinear
from .field import FeatureField, PointSet
from .kernel import BILINEAR, FreePolarKernel, PolarGridSpec, PolarKernel
from .ops import AttentionWindow, ConvGeometry, LEAKY_SLOPE, conv_apply
from .repr import RepSpec, Rotation

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    t_in: int = 20
    t_out: int = 30
    dt: float = 0.1
    k_theta: int = 16
    k_r: int = 3
    k_reg: int = 16
    R: float = 40.0
    encode_channels: tuple = (8, 16)
    predict_channels: tuple = (8, 8)
    use_map: bool = True
    seed: int = 0
    equivariant: bool = True
    interp: str = BILINEAR
    window_mass: float = 4.0
    velocity_scale: float = 1.0
    init: str = "uniform"
    head_init: str = "uniform"
    crop_map: bool = True

    def __post_init__(self):
        self.encode_channels = tuple(int(c) for c in self.encode_channels)
        self.predict_channels = tuple(int(c) for c in self.predict_channels)
        if not self.encode_channels or not self.predict_channels:
            raise ValueError("channel lists must be non-empty")
        if len(self.encode_channels) != 2:
            raise ValueError("encode_channels holds the two widths of the three encoder convolutions")
        if self.k_reg % self.k_theta:
            raise ValueError("k_reg must be a multiple of k_theta")
        if self.t_in < 1 or self.t_out < 1:
            raise ValueError("t_in and t_out must be positive")


@dataclass
class MapField:
    positions: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.directions = np.asarray(self.directions, dtype=float).reshape(-1, 2)
        if self.positions.shape != self.directions.shape:
            raise ValueError("map positions and directions must have the same shape")
        norms = np.hypot(self.directions[:, 0], self.directions[:, 1])
        if len(norms) and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("map direction vectors must have unit norm")

    def __len__(self):
        return len(self.positions)

    def rotated(self, rot: Rotation) -> "MapField":
        m = rot.matrix()
        return MapField(self.positions @ m.T, self.directions @ m.T)

    def translated(self, shift) -> "MapField":
        return MapField(self.positions + np.asarray(shift, dtype=float), self.directions)


@dataclass
class AgentState:
    """Position histories (n × T × 2) with a per-frame validity mask.

    Velocities and accelerations are always derived from positions.
    """

    positions: np.ndarray
    mask: np.ndarray | None = None
    dt: float = 0.1

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("positions must have shape (n, T, 2)")
        if self.mask is None:
            self.mask = np.ones(self.positions.shape[:2], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def velocities(self) -> np.ndarray:
        v = np.diff(self.positions, axis=1) / self.dt
        return v * (self.mask[:, 1:] & self.mask[:, :-1])[..., None]

    @property
    def accelerations(self) -> np.ndarray:
        v = self.velocities
        ok = self.mask[:, 2:] & self.mask[:, 1:-1] & self.mask[:, :-2]
        return np.diff(v, axis=1) / self.dt * ok[..., None]

    def rotated(self, rot: Rotation) -> "AgentState":
        return AgentState(self.positions @ rot.matrix().T, self.mask, self.dt)

    def translated(self, shift) -> "AgentState":
        return AgentState(self.positions + np.asarray(shift, dtype=float), self.mask, self.dt)

    def permuted(self, perm) -> "AgentState":
        return AgentState(self.positions[perm], self.mask[perm], self.dt)


# --- kinematics ---------------------------------------------------------------------


def extrapolate_history(history, mask: np.ndarray):
    """x̃ = x_t + v_t·dt + ½·a_t·dt² in position form; tape-friendly.

    Falls back to velocity-only without three valid frames and to holding
    the last position without two.
    """
    hv = history.value if isinstance(history, diff.Var) else np.asarray(history)
    T = hv.shape[1]
    p_t = diff.getitem(history, (slice(None), T - 1))
    if T < 2:
        return p_t
    m1 = (mask[:, T - 1] & mask[:, T - 2]).astype(float)[:, None]
    p_1 = diff.getitem(history, (slice(None), T - 2))
    step = diff.sub(p_t, p_1)
    out = diff.add(p_t, diff.mul(step, m1))
    if T >= 3:
        m2 = (m1[:, 0] * mask[:, T - 3]).astype(float)[:, None]
        p_2 = diff.getitem(history, (slice(None), T - 3))
        acc = diff.add(diff.sub(step, p_1), p_2)  # p_t - 2 p_{t-1} + p_{t-2}
        out = diff.add(out, diff.mul(acc, 0.5 * m2))
    return out


def extrapolate(agents: AgentState, dt: float | None = None) -> np.ndarray:
    """Kinematic next-position guess for every agent from its history."""
    return diff.const(extrapolate_history(agents.positions, agents.mask)).value


def velocity_features(history, mask: np.ndarray, dt: float, t_in: int, scale: float = 1.0):
    """Stacked velocities, newest first, as ``t_in`` copies of ρ1 (zeros where unavailable)."""
    hv = history.value if isinstance(history, diff.Var) else np.asarray(history)
    n, T, _ = hv.shape
    if T != t_in:
        raise ValueError(f"expected {t_in} history frames, got {T}")
    if T < 2:
        return np.zeros((n, 2 * t_in))
    ok = (mask[:, 1:] & mask[:, :-1]).astype(float)[..., None] * (scale / dt)
    later = diff.getitem(history, (slice(None), slice(1, None)))
    earlier = diff.getitem(history, (slice(None), slice(None, -1)))
    v = diff.mul(diff.sub(later, earlier), ok)  # (n, T-1, 2), oldest first
    v = diff.take(v, np.arange(T - 2, -1, -1), axis=1)
    v = diff.concat([v, np.zeros((n, 1, 2))], axis=1)
    return v.reshape(n, 2 * t_in)


# --- network ------------------------------------------------------------------------


@dataclass
class Frame:
    """One scene snapshot to predict from: agent histories plus static map."""

    history: object
    mask: np.ndarray
    map: MapField | None = None


class Block:
    """cts_conv → per-particle linear map → bias → leaky rectifier (bias/nonlinearity optional)."""

    def __init__(self, name, grid, in_spec, out_spec, cfg: ModelConfig, rng, init, with_linear=True, nonlinear=True):
        kernel_cls = PolarKernel if cfg.equivariant else FreePolarKernel
        linear_cls = EquiLinear if cfg.equivariant else DenseLinear
        self.name = name
        self.in_spec, self.out_spec = in_spec, out_spec
        self.conv = kernel_cls(grid, in_spec, out_spec, rng=rng, window_mass=cfg.window_mass, name=f"{name}.conv", init=init)
        self.linear = linear_cls(out_spec, out_spec, rng=rng, name=f"{name}.lin", init=init) if with_linear else None
        self.nonlinear = nonlinear
        self.bias = None
        if nonlinear:
            if not out_spec.only_rhoreg:
                raise ValueError("nonlinear blocks need ρ_reg outputs")
            n = out_spec.dim if not cfg.equivariant else out_spec.dim // out_spec.k_reg
            self.bias = Parameter(np.zeros(n), f"{name}.bias")
            self._bias_index = np.repeat(np.arange(n), out_spec.k_reg) if cfg.equivariant else np.arange(n)

    @property
    def params(self) -> dict:
        p = dict(self.conv.params)
        if self.linear is not None:
            p.update(self.linear.params)
        if self.bias is not None:
            p[self.bias.name] = self.bias
        return p

    def __call__(self, geom, values, grid_tensor=None):
        h = conv_apply(self.conv, geom, values, grid_tensor)
        if self.linear is not None:
            h = self.linear.apply(h)
        if self.bias is not None:
            h = diff.add(h, diff.take(self.bias, self._bias_index, axis=0)[None, :])
        if self.nonlinear:
            h = diff.leaky_relu(h, LEAKY_SLOPE)
        return h


class ECCOModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        k = cfg.k_reg
        self.grid = PolarGridSpec(cfg.k_theta, cfg.k_r, cfg.R)
        self.window = AttentionWindow(cfg.R)
        self.in_spec = RepSpec.rho1(cfg.t_in, k)
        c1, c2 = cfg.encode_channels
        specs = [self.in_spec, RepSpec.rhoreg(c1, k), RepSpec.rhoreg(c2, k), RepSpec.rhoreg(c2, k)]
        self.encoder = [
            Block(f"enc{i}", self.grid, specs[i], specs[i + 1], cfg, rng, cfg.init) for i in range(3)
        ]
        self.hidden_spec = specs[-1]
        self.predictor = []
        prev = self.hidden_spec
        for i, c in enumerate(cfg.predict_channels):
            nxt = RepSpec.rhoreg(c, k)
            self.predictor.append(Block(f"pred{i}", self.grid, prev, nxt, cfg, rng, cfg.init))
            prev = nxt
        self.head = Block("head", self.grid, prev, RepSpec.rho1(1, k), cfg, rng, cfg.head_init,
                          with_linear=False, nonlinear=False)

    @property
    def blocks(self):
        return [*self.encoder, *self.predictor, self.head]

    @property
    def params(self) -> dict:
        out = {}
        for b in self.blocks:
            out.update(b.params)
        return out

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def kernels(self):
        """Materialize every block's polar grid once (per parameter update)."""
        return [b.conv.grid_tensor() for b in self.blocks]

    # -- batched core -----------------------------------------------------------

    def forward(self, frames, kernels=None):
        """Residual displacement Δx̃ for all agents of all frames, stacked (N × 2)."""
        kernels = self.kernels() if kernels is None else kernels
        h, agent_pts, weights, groups = self._encode_frames(frames, kernels)
        return self._predict(h, agent_pts, weights, groups, kernels[len(self.encoder):])

    def _encode_frames(self, frames, kernels):
        cfg = self.cfg
        pos_l, feat_l, w_l, agent_idx_l = [], [], [], []
        group_l, agent_group_l = [], []
        n_pts = 0
        for g, fr in enumerate(frames):
            hv = fr.history.value if isinstance(fr.history, diff.Var) else np.asarray(fr.history, dtype=float)
            mask = np.asarray(fr.mask, dtype=bool)
            now, valid = hv[:, -1], mask[:, -1]
            na = len(now)
            feat_l.append(velocity_features(fr.history, mask, cfg.dt, cfg.t_in, cfg.velocity_scale))
            pos_l.append(now)
            w_l.append(valid.astype(float))
            agent_idx_l.append(n_pts + np.arange(na))
            agent_group_l.append(np.full(na, g))
            group_l.append(np.full(na, g))
            n_pts += na
            if cfg.use_map and fr.map is not None and len(fr.map):
                mp, md = fr.map.positions, fr.map.directions
                mf = np.zeros((len(mp), 2 * cfg.t_in))
                mf[:, :2] = md * cfg.velocity_scale
                feat_l.append(mf)
                pos_l.append(mp)
                w_l.append(np.ones(len(mp)))
                group_l.append(np.full(len(mp), g))
                n_pts += len(mp)
        points = PointSet(np.concatenate(pos_l))
        groups = np.concatenate(group_l)
        weights = np.concatenate(w_l)
        agent_idx = np.concatenate(agent_idx_l)
        agent_groups = np.concatenate(agent_group_l)
        h = diff.concat(feat_l, axis=0) if len(feat_l) > 1 else diff.const(feat_l[0])

        L = len(self.encoder)
        if cfg.crop_map:
            # a point only matters to layer l if it lies within the remaining
            # receptive field (L - l)·R of some agent; pruning is exact
            reach = self._agent_distance(points.positions, groups, agent_idx)
            active = [np.flatnonzero(reach <= (L - l) * cfg.R * (1 + 1e-9)) for l in range(L)]
            active = [np.union1d(a, agent_idx) for a in active] + [agent_idx]
            if len(active[0]) < len(points):
                h = diff.take(h, active[0], axis=0)
        else:
            full = np.arange(len(points))
            active = [full] * L + [agent_idx]
        for l, (blk, kg) in enumerate(zip(self.encoder, kernels)):
            src, qry = active[l], active[l + 1]
            geom = ConvGeometry.build(PointSet(points.positions[src]), PointSet(points.positions[qry]), self.grid,
                                      self.window, cfg.interp, weights[src], groups[src], groups[qry])
            h = blk(geom, h, kg)
        return h, PointSet(points.positions[agent_idx]), weights[agent_idx], agent_groups

    @staticmethod
    def _agent_distance(positions, groups, agent_idx):
        """Distance from every point to the nearest agent of its own frame."""
        out = np.full(len(positions), np.inf)
        ag = groups[agent_idx]
        for g in np.unique(groups):
            pts = np.flatnonzero(groups == g)
            a = agent_idx[ag == g]
            if len(a):
                d2 = ((positions[pts, None, :] - positions[None, a, :]) ** 2).sum(-1)
                out[pts] = np.sqrt(d2.min(axis=1))
        return out

    def _predict(self, h, agent_pts, weights, groups, kernels):
        cfg = self.cfg
        geom = ConvGeometry.build(agent_pts, agent_pts, self.grid, self.window, cfg.interp, weights, groups, groups)
        for blk, kg in zip(self.predictor + [self.head], kernels):
            h = blk(geom, h, kg)
        return h

    # -- single-scene API ----------------------------------------------------------

    def encode(self, agents: AgentState, map: MapField | None = None) -> FeatureField:
        """ρ_reg hidden field on the agents' current positions."""
        cfg = self.cfg
        if agents.positions.shape[1] != cfg.t_in:
            raise ValueError(f"expected {cfg.t_in} history frames, got {agents.positions.shape[1]}")
        fr = Frame(agents.positions, agents.mask, map)
        h, pts, _, _ = self._encode_frames([fr], self.kernels())
        return FeatureField(pts, self.hidden_spec, h)

    def predict_step(self, hidden: FeatureField, agents: AgentState) -> np.ndarray:
        """Residual Δx̃ (n × 2) from a hidden field on agent points."""
        kernels = self.kernels()[len(self.encoder):]
        w = agents.mask[:, -1].astype(float)
        out = self._predict(hidden.values, hidden.points, w, np.zeros(len(w), dtype=int), kernels)
        return diff.const(out).value

    def step_positions(self, frames, kernels=None):
        """x̂ = x̃ + Δx̃ for every frame; returns a list of (n_f × 2) tape expressions."""
        delta = self.forward(frames, kernels)
        out, start = [], 0
        for fr in frames:
            n = fr.mask.shape[0]
            xt = extrapolate_history(fr.history, fr.mask)
            out.append(diff.add(xt, diff.getitem(delta, slice(start, start + n))))
            start += n
        return out

    def rollout(self, agents: AgentState, map: MapField | None = None, t_out: int | None = None) -> np.ndarray:
        return self.rollout_batch([(agents, map)], t_out)[0]

    def rollout_batch(self, items, t_out: int | None = None, kernels=None):
        """Autoregressive prediction for several scenes at once (values only)."""
        t_out = self.cfg.t_out if t_out is None else t_out
        kernels = self.kernels() if kernels is None else kernels
        preds = _rollout(self, items, t_out, kernels)
        return [np.stack([p.value if isinstance(p, diff.Var) else p for p in seq], axis=1) for seq in preds]


def _rollout(model: ECCOModel, items, t_out: int, kernels):
    """Shared autoregressive loop; keeps tape expressions so training can differentiate it."""
    t_in = model.cfg.t_in
    hist = [[*(a.positions[:, i] for i in range(a.positions.shape[1]))] for a, _ in items]
    masks = [a.mask.copy() for a, _ in items]
    preds = [[] for _ in items]
    for _ in range(t_out):
        frames = []
        for (a, mp), h, m in zip(items, hist, masks):
            window = h[-t_in:]
            if any(isinstance(x, diff.Var) for x in window):
                stacked = diff.stack(window, axis=1)
            else:
                stacked = np.stack(window, axis=1)
            frames.append(Frame(stacked, m[:, -t_in:], mp))
        nxt = model.step_positions(frames, kernels)
        for i, x in enumerate(nxt):
            hist[i].append(x)
            preds[i].append(x)
            masks[i] = np.concatenate([masks[i], masks[i][:, -1:]], axis=1)
    return preds


# --- module-level wrappers -----------------------------------------------------------


def encode(model: ECCOModel, agents: AgentState, map: MapField | None = None) -> FeatureField:
    return model.encode(agents, map)


def predict_step(model: ECCOModel, hidden: FeatureField, agents: AgentState) -> np.ndarray:
    return model.predict_step(hidden, agents)


def rollout(model: ECCOModel, agents: AgentState, map: MapField | None = None, t_out: int | None = None) -> np.ndarray:
    return model.rollout(agents, map, t_out)


# --- training ------------------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 15000
    batch_size: int = 16
    base_lr: float = 1e-3
    gamma: float = 0.95
    decay_interval: int = 300
    teacher_forcing: float = 0.5
    tf_steps: int = 0
    free_steps: int = 0
    val_every: int = 100
    val_scenes: int = 32
    seed: int = 0


def scene_arrays(scene, t_in: int):
    """History AgentState, future truth (n × t_out × 2) and future mask of a scene."""
    pos = np.stack([a.positions for a in scene.agents])
    mask = np.stack([a.mask for a in scene.agents])
    hist = AgentState(pos[:, :t_in], mask[:, :t_in], scene.dt)
    return hist, pos[:, t_in:], mask[:, t_in:] & mask[:, t_in - 1 : t_in]


def _masked_sq_loss(preds, truths, masks):
    """Mean over valid (agent, step, coord) of squared displacement, as one tape scalar."""
    terms, count = [], 0
    for p, t, m in zip(preds, truths, masks):
        w = m.astype(float)[:, None]
        d = diff.sub(p, t)
        terms.append(diff.total(diff.mul(diff.square(d), w)))
        count += 2 * int(m.sum())
    loss = terms[0]
    for t in terms[1:]:
        loss = diff.add(loss, t)
    return diff.mul(loss, 1.0 / max(count, 1))


def training_loss(model: ECCOModel, scenes, teacher: bool, rng, tcfg: TrainConfig):
    cfg = model.cfg
    kernels = model.kernels()
    if teacher:
        frames, truths, masks = [], [], []
        for sc in scenes:
            pos = np.stack([a.positions for a in sc.agents])
            mk = np.stack([a.mask for a in sc.agents])
            steps = np.arange(cfg.t_out)
            if tcfg.tf_steps and tcfg.tf_steps < cfg.t_out:
                steps = np.sort(rng.choice(cfg.t_out, tcfg.tf_steps, replace=False))
            for k in steps:
                frames.append(Frame(pos[:, k : k + cfg.t_in], mk[:, k : k + cfg.t_in], sc.map))
                truths.append(pos[:, cfg.t_in + k])
                masks.append(mk[:, cfg.t_in + k] & mk[:, cfg.t_in + k - 1])
        preds = model.step_positions(frames, kernels)
        return _masked_sq_loss(preds, truths, masks)
    horizon = tcfg.free_steps or cfg.t_out
    items, truths, masks = [], [], []
    for sc in scenes:
        hist, fut, fm = scene_arrays(sc, cfg.t_in)
        items.append((hist, sc.map))
        truths.append(fut[:, :horizon])
        masks.append(fm[:, :horizon])
    seqs = _rollout(model, items, horizon, kernels)
    preds, tr, mk = [], [], []
    for seq, fut, fm in zip(seqs, truths, masks):
        for k, p in enumerate(seq):
            preds.append(p)
            tr.append(fut[:, k])
            mk.append(fm[:, k])
    return _masked_sq_loss(preds, tr, mk)


def check_timestep(scenes, dt: float) -> None:
    for sc in scenes:
        if abs(sc.dt - dt) > 1e-9 * max(1.0, dt):
            raise ValueError(f"scene {sc.scene_id} has dt={sc.dt}, model expects {dt}")


def evaluate_predictions(model: ECCOModel, scenes, batch: int = 16):
    """Rollout predictions, truths and masks for a list of scenes."""
    cfg = model.cfg
    check_timestep(scenes, cfg.dt)
    kernels = model.kernels()
    preds, truths, masks = [], [], []
    for i in range(0, len(scenes), batch):
        chunk = scenes[i : i + batch]
        items = []
        for sc in chunk:
            hist, fut, fm = scene_arrays(sc, cfg.t_in)
            items.append((hist, sc.map))
            truths.append(fut[:, : cfg.t_out])
            masks.append(fm[:, : cfg.t_out])
        preds.extend(model.rollout_batch(items, cfg.t_out, kernels))
    return preds, truths, masks


def evaluate_scenes(model: ECCOModel, scenes, batch: int = 16, horizons=None):
    from .data import compute_metrics

    preds, truths, masks = evaluate_predictions(model, scenes, batch)
    return compute_metrics(preds, truths, masks, horizons)


def train(dataset, cfg: ModelConfig, tcfg: TrainConfig | None = None, val_set=None, callback=None):
    """Fit a model by Adam on mean squared rollout displacement.

    Teacher forcing (ground-truth histories) is used for the first
    ``tcfg.teacher_forcing`` fraction of iterations, free-running rollouts
    afterwards. Returns ``(model, checkpoint_dict, log_rows)``.
    """
    tcfg = TrainConfig() if tcfg is None else tcfg
    if not dataset:
        raise ValueError("empty dataset")
    check_timestep(dataset, cfg.dt)
    if val_set:
        check_timestep(val_set, cfg.dt)
    model = ECCOModel(cfg)
    params = model.params
    state = AdamState(base_lr=tcfg.base_lr, gamma=tcfg.gamma, decay_interval=tcfg.decay_interval)
    rng = np.random.default_rng(tcfg.seed)
    rows = []
    tf_iters = int(round(tcfg.teacher_forcing * tcfg.iterations))
    for it in range(tcfg.iterations):
        idx = rng.choice(len(dataset), size=min(tcfg.batch_size, len(dataset)), replace=False)
        batch = [dataset[i] for i in np.sort(idx)]
        teacher = it < tf_iters
        with Tape() as tape:
            loss = training_loss(model, batch, teacher, rng, tcfg)
        grads = tape.backward(loss)
        lr = state.lr()
        adam_step(state, params, full_grads(params, grads))
        row = {"iteration": it + 1, "loss": float(loss.value), "lr": lr, "teacher": int(teacher)}
        if val_set and tcfg.val_every and ((it + 1) % tcfg.val_every == 0 or it + 1 == tcfg.iterations):
            rep = evaluate_scenes(model, val_set[: tcfg.val_scenes])
            row["val_ade"], row["val_fde"] = rep.ade, rep.fde
        rows.append(row)
        if callback is not None:
            callback(row)
        log.debug("iter %d loss %.5f", it + 1, row["loss"])
    ckpt = make_checkpoint(model, state, rng)
    return model, ckpt, rows


# --- checkpoints ----------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def make_checkpoint(model: ECCOModel, state: AdamState | None = None, rng=None) -> dict:
    ck = {
        "format": "ecco-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(model.cfg),
        "params": {n: _encode_array(p.value) for n, p in model.params.items()},
    }
    if state is not None:
        ck["optimizer"] = {
            "base_lr": state.base_lr,
            "gamma": state.gamma,
            "decay_interval": state.decay_interval,
            "step": state.step,
            "m": {n: _encode_array(v) for n, v in sorted(state.m.items())},
            "v": {n: _encode_array(v) for n, v in sorted(state.v.items())},
        }
    if rng is not None:
        ck["rng"] = rng.bit_generator.state
    return ck


def dumps_checkpoint(ck: dict) -> str:
    return json.dumps(ck, sort_keys=True, separators=(",", ":"))


def save_checkpoint(ck: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_checkpoint(ck))


def load_checkpoint(path):
    """Returns ``(model, checkpoint_dict)``."""
    with open(path) as fh:
        ck = json.load(fh)
    if ck.get("format") != "ecco-checkpoint" or ck.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a supported checkpoint")
    return model_from_checkpoint(ck), ck


def model_from_checkpoint(ck: dict) -> ECCOModel:
    cfg = ModelConfig(**ck["config"])
    model = ECCOModel(cfg)
    params = model.params
    for n, d in ck["params"].items():
        params[n].value = _decode_array(d)
    return model


def checkpoint_hash(ck: dict) -> str:
    return hashlib.sha256(dumps_checkpoint(ck).encode()).hexdigest()


__all__ = [
    "ModelConfig",
    "TrainConfig",
    "AgentState",
    "MapField",
    "ECCOModel",
    "Frame",
    "encode",
    "predict_step",
    "extrapolate",
    "rollout",
    "train",
    "evaluate_scenes",
    "evaluate_predictions",
]
