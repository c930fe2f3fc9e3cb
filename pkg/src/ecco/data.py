"""Synthetic scenes, the line-delimited scene file format, metrics and closed-form baselines."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import AgentState, MapField
from .repr import TWO_PI, rot2

SCENE_HEADER = "ecco-scenes v1"
FAMILIES = ("cv", "arc", "intersection")


@dataclass
class AgentTrack:
    agent_id: int
    positions: np.ndarray
    mask: np.ndarray


@dataclass
class Scene:
    scene_id: str
    dt: float
    agents: list
    map: MapField | None = None
    split: str = "train"
    rotation: float = 0.0
    family: str = ""

    @property
    def T(self) -> int:
        return len(self.agents[0].positions) if self.agents else 0

    def positions(self) -> np.ndarray:
        return np.stack([a.positions for a in self.agents])

    def masks(self) -> np.ndarray:
        return np.stack([a.mask for a in self.agents])

    def agent_state(self, t_in: int) -> AgentState:
        return AgentState(self.positions()[:, :t_in], self.masks()[:, :t_in], self.dt)

    def rotated(self, theta: float, center=(0.0, 0.0)) -> "Scene":
        m = rot2(theta)
        c = np.asarray(center, dtype=float)
        agents = [AgentTrack(a.agent_id, (a.positions - c) @ m.T + c, a.mask.copy()) for a in self.agents]
        mp = None
        if self.map is not None:
            mp = MapField((self.map.positions - c) @ m.T + c, self.map.directions @ m.T)
        return Scene(self.scene_id, self.dt, agents, mp, self.split, (self.rotation + theta) % TWO_PI, self.family)


@dataclass
class GeneratorConfig:
    family: str = "mixed"
    n_scenes: int = 100
    t_in: int = 20
    t_out: int = 30
    dt: float = 0.1
    noise: float = 0.05
    agents_min: int = 2
    agents_max: int = 6
    speed_min: float = 3.0
    speed_max: float = 10.0
    turn_rate_min: float = 0.1
    turn_rate_max: float = 0.6
    box: float = 40.0
    lane_width: float = 3.5
    arm_length: float = 40.0
    node_spacing: float = 4.0
    augment_rotations: bool = False
    split: str = "train"
    seed: int = 0

    def validate(self):
        if self.family not in FAMILIES + ("mixed",):
            raise ValueError(f"unknown family {self.family!r}")
        if self.n_scenes < 0 or self.t_in < 1 or self.t_out < 0 or self.dt <= 0:
            raise ValueError("invalid scene counts or timing")
        if not 1 <= self.agents_min <= self.agents_max:
            raise ValueError("invalid agent count range")
        if self.noise < 0 or self.speed_min <= 0 or self.speed_max < self.speed_min:
            raise ValueError("invalid noise or speed range")
        if self.turn_rate_min <= 0 or self.turn_rate_max < self.turn_rate_min:
            raise ValueError("invalid turn-rate range")


# --- trajectory families ----------------------------------------------------------------


def _cv_tracks(cfg: GeneratorConfig, rng, T):
    n = rng.integers(cfg.agents_min, cfg.agents_max + 1)
    t = np.arange(T) * cfg.dt
    out = []
    for _ in range(n):
        p0 = rng.uniform(-cfg.box / 2, cfg.box / 2, size=2)
        heading = rng.uniform(0, TWO_PI)
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        v = speed * np.array([math.cos(heading), math.sin(heading)])
        out.append(p0 + t[:, None] * v)
    return out, None


def arc_positions(center, radius, phase0, omega, t):
    """Points on a circle traversed at angular rate ``omega`` (sign = turn direction)."""
    ang = phase0 + omega * t
    return np.asarray(center) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _arc_tracks(cfg: GeneratorConfig, rng, T):
    n = rng.integers(cfg.agents_min, cfg.agents_max + 1)
    t = np.arange(T) * cfg.dt
    out = []
    for i in range(n):
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        omega = rng.uniform(cfg.turn_rate_min, cfg.turn_rate_max) * (1 if i % 2 == 0 else -1)
        center = rng.uniform(-cfg.box / 2, cfg.box / 2, size=2)
        out.append(arc_positions(center, speed / abs(omega), rng.uniform(0, TWO_PI), omega, t))
    rng.shuffle(out)
    return out, None


def _bezier(p0, d0, p1, d1, n=64):
    h = 0.55 * np.linalg.norm(p1 - p0)
    c0, c1 = p0 + h * d0, p1 - h * d1
    s = np.linspace(0, 1, n)[:, None]
    return (1 - s) ** 3 * p0 + 3 * (1 - s) ** 2 * s * c0 + 3 * (1 - s) * s**2 * c1 + s**3 * p1


def _resample(poly, spacing):
    seg = np.hypot(*np.diff(poly, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.arange(0.0, cum[-1] + 1e-9, spacing)
    pts = np.stack([np.interp(s, cum, poly[:, 0]), np.interp(s, cum, poly[:, 1])], axis=1)
    tang = np.diff(poly, axis=0) / seg[:, None]
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(tang) - 1)
    return pts, tang[k]


def intersection_layout(cfg: GeneratorConfig):
    """Four-arm crossing with right-hand traffic.

    Each arm has an inner inbound lane (turns left), an outer inbound lane
    (turns right) and one outbound lane. Returns the map and the list of
    turn paths as dense polylines.
    """
    w, L = cfg.lane_width, cfg.arm_length
    S = 2.0 * w
    arms = [np.array([math.cos(k * math.pi / 2), math.sin(k * math.pi / 2)]) for k in range(4)]
    pos, dirs, paths = [], [], []

    def left(v):
        return np.array([-v[1], v[0]])

    for u in arms:
        n = left(u)
        for off in (0.5 * w, 1.5 * w):
            a, b = S * u + off * n, L * u + off * n
            poly = np.stack([b, a])
            p, d = _resample(poly, cfg.node_spacing)
            pos.append(p)
            dirs.append(d)
        a, b = S * u - 0.5 * w * n, L * u - 0.5 * w * n
        p, d = _resample(np.stack([a, b]), cfg.node_spacing)
        pos.append(p)
        dirs.append(d)
    for u in arms:
        n = left(u)
        d0 = -u
        for off, turn in ((0.5 * w, 1), (1.5 * w, -1)):
            ub = left(d0) if turn == 1 else -left(d0)
            nb = left(ub)
            entry = S * u + off * n
            exit_ = S * ub - 0.5 * w * nb
            curve = _bezier(entry, d0, exit_, ub)
            p, d = _resample(curve, cfg.node_spacing)
            pos.append(p[1:])
            dirs.append(d[1:])
            path = np.concatenate([np.stack([L * u + off * n, entry]), curve[1:], np.stack([L * ub - 0.5 * w * nb])])
            paths.append(path)
    mp = MapField(np.concatenate(pos), np.concatenate(dirs) / np.linalg.norm(np.concatenate(dirs), axis=1, keepdims=True))
    return mp, paths


def _path_positions(path, s_values):
    seg = np.hypot(*np.diff(path, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.clip(s_values, 0, cum[-1])
    return np.stack([np.interp(s, cum, path[:, 0]), np.interp(s, cum, path[:, 1])], axis=1), cum[-1]


def _intersection_tracks(cfg: GeneratorConfig, rng, T):
    mp, paths = intersection_layout(cfg)
    n = rng.integers(cfg.agents_min, cfg.agents_max + 1)
    t = np.arange(T) * cfg.dt
    entry_s = cfg.arm_length - 2.0 * cfg.lane_width
    out = []
    for _ in range(n):
        path = paths[rng.integers(len(paths))]
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        # position at the last observed frame: from well before the stop line to inside the turn
        s_now = entry_s + rng.uniform(-0.6 * entry_s, 10.0)
        s = s_now + speed * (t - t[cfg.t_in - 1])
        p, _ = _path_positions(path, s)
        out.append(p)
    return out, mp


_FAMILY_FN = {"cv": _cv_tracks, "arc": _arc_tracks, "intersection": _intersection_tracks}


def generate_synthetic(cfg: GeneratorConfig, seed: int | None = None) -> list:
    """Reproducible synthetic scenes; every scene has ``t_in + t_out`` frames."""
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    T = cfg.t_in + cfg.t_out
    scenes = []
    for i in range(cfg.n_scenes):
        fam = cfg.family if cfg.family != "mixed" else FAMILIES[int(rng.integers(3))]
        tracks, mp = _FAMILY_FN[fam](cfg, rng, T)
        agents = []
        for j, p in enumerate(tracks):
            if cfg.noise:
                p = p + rng.normal(0.0, cfg.noise, size=p.shape)
            agents.append(AgentTrack(j, p, np.ones(T, dtype=bool)))
        sc = Scene(f"{cfg.split}-{seed}-{i:06d}", cfg.dt, agents, mp, cfg.split, 0.0, fam)
        if cfg.augment_rotations:
            theta = float(rng.uniform(0.0, TWO_PI))
            sc = sc.rotated(theta)
        scenes.append(sc)
    return scenes


# --- scene files ----------------------------------------------------------------------------


def _flat(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def scene_to_record(sc: Scene) -> dict:
    rec = {
        "scene_id": sc.scene_id,
        "dt": float(sc.dt),
        "agents": [
            {"id": int(a.agent_id), "positions": _flat(a.positions), "mask": [int(m) for m in a.mask]}
            for a in sc.agents
        ],
    }
    if sc.map is not None:
        rec["map"] = {"positions": _flat(sc.map.positions), "directions": _flat(sc.map.directions)}
    rec["split"] = sc.split
    return rec


def record_to_scene(rec: dict) -> Scene:
    agents = [
        AgentTrack(int(a["id"]), np.asarray(a["positions"], dtype=float).reshape(-1, 2), np.asarray(a["mask"], dtype=bool))
        for a in rec["agents"]
    ]
    mp = None
    if rec.get("map") is not None:
        mp = MapField(np.asarray(rec["map"]["positions"]).reshape(-1, 2), np.asarray(rec["map"]["directions"]).reshape(-1, 2))
    return Scene(rec["scene_id"], float(rec["dt"]), agents, mp, rec.get("split", "train"))


def dumps_scenes(scenes) -> str:
    lines = [SCENE_HEADER]
    lines += [json.dumps(scene_to_record(sc), separators=(",", ":")) for sc in scenes]
    return "\n".join(lines) + "\n"


def write_scenes(scenes, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_scenes(scenes))


def read_scenes(path) -> list:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != SCENE_HEADER:
            raise ValueError(f"unexpected scene file header {header!r}")
        return [record_to_scene(json.loads(line)) for line in fh if line.strip()]


# --- metrics ------------------------------------------------------------------------------


@dataclass
class MetricReport:
    ade: float
    fde: float
    de: dict = field(default_factory=dict)
    per_scene: list = field(default_factory=list)

    def row(self) -> dict:
        out = {"ade": self.ade, "fde": self.fde}
        out.update({f"de@{k}": v for k, v in sorted(self.de.items())})
        return out


def _as_list(x):
    if isinstance(x, np.ndarray) and x.ndim == 3:
        return [x]
    return list(x)


def compute_metrics(pred, truth, mask=None, horizons=None) -> MetricReport:
    """ADE over valid agent-steps, FDE at the final step, DE@t at requested step indices.

    ``pred``/``truth`` are (n × T × 2) arrays or lists of them (one per scene);
    ``mask`` marks valid (agent, step) entries.
    """
    preds, truths = _as_list(pred), _as_list(truth)
    masks = [None] * len(preds) if mask is None else _as_list(mask) if not (isinstance(mask, np.ndarray) and mask.ndim == 2) else [mask]
    if len(preds) != len(truths) or len(masks) != len(preds):
        raise ValueError("prediction/truth/mask counts differ")
    tot, cnt = 0.0, 0
    T = None
    horizons = [] if horizons is None else [int(h) for h in horizons]
    de_sum = {h: 0.0 for h in horizons}
    de_cnt = {h: 0 for h in horizons}
    f_sum, f_cnt = 0.0, 0
    per_scene = []
    for p, t, m in zip(preds, truths, masks):
        p, t = np.asarray(p, dtype=float), np.asarray(t, dtype=float)
        if p.shape != t.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
        m = np.ones(p.shape[:2], dtype=bool) if m is None else np.asarray(m, dtype=bool)
        if m.shape != p.shape[:2]:
            raise ValueError("mask shape mismatch")
        T = p.shape[1] if T is None else T
        err = np.hypot(*(p - t).transpose(2, 0, 1))
        tot += err[m].sum()
        cnt += int(m.sum())
        f_sum += err[:, -1][m[:, -1]].sum()
        f_cnt += int(m[:, -1].sum())
        for h in horizons:
            if h >= p.shape[1] or h < -p.shape[1]:
                raise ValueError(f"horizon {h} outside prediction length")
            de_sum[h] += err[:, h][m[:, h]].sum()
            de_cnt[h] += int(m[:, h].sum())
        s_ade = float(err[m].mean()) if m.any() else float("nan")
        s_fde = float(err[:, -1][m[:, -1]].mean()) if m[:, -1].any() else float("nan")
        per_scene.append((s_ade, s_fde))
    ade = tot / cnt if cnt else float("nan")
    fde = f_sum / f_cnt if f_cnt else float("nan")
    de = {h: (de_sum[h] / de_cnt[h] if de_cnt[h] else float("nan")) for h in horizons}
    return MetricReport(float(ade), float(fde), de, per_scene)


# --- baselines ------------------------------------------------------------------------------


def _history(obj, t_in):
    if isinstance(obj, Scene):
        return obj.positions()[:, :t_in], obj.dt
    return obj.positions, obj.dt


def baseline_constant_velocity(scene, t_in: int, t_out: int) -> np.ndarray:
    """x̂_{t+k} = x_t + k·dt·v_t with v_t from the last two observed frames."""
    hist, dt = _history(scene, t_in)
    if hist.shape[1] < 2:
        raise ValueError("constant velocity needs at least two past frames")
    x_t = hist[:, -1]
    v_t = (hist[:, -1] - hist[:, -2]) / dt
    k = np.arange(1, t_out + 1)
    return x_t[:, None, :] + (k * dt)[None, :, None] * v_t[:, None, :]


@dataclass
class NearestNeighborIndex:
    histories: np.ndarray  # (N, t_in, 2), translated to start at the origin
    futures: np.ndarray  # (N, t_out, 2), same translation

    @classmethod
    def from_scenes(cls, scenes, t_in: int, t_out: int) -> "NearestNeighborIndex":
        hs, fs = [], []
        for sc in scenes:
            for a in sc.agents:
                if a.mask[: t_in + t_out].all() and len(a.positions) >= t_in + t_out:
                    o = a.positions[0]
                    hs.append(a.positions[:t_in] - o)
                    fs.append(a.positions[t_in : t_in + t_out] - o)
        if not hs:
            raise ValueError("empty reference set")
        return cls(np.stack(hs), np.stack(fs))

    def query(self, histories: np.ndarray) -> np.ndarray:
        """Index of the closest reference per query history (summed per-step L2)."""
        q = histories - histories[:, :1]
        d = np.hypot(*(q[:, None] - self.histories[None]).transpose(3, 0, 1, 2)).sum(axis=2)
        return np.argmin(d, axis=1)


def baseline_nearest_neighbor(reference, scene, t_in: int, t_out: int) -> np.ndarray:
    if not isinstance(reference, NearestNeighborIndex):
        reference = NearestNeighborIndex.from_scenes(reference, t_in, t_out)
    hist, _ = _history(scene, t_in)
    idx = reference.query(hist)
    return reference.futures[idx] + hist[:, None, 0, :]
