"""Desk-scale training experiments: rotated-test generalization and sample efficiency.

Both compare the equivariant model with the ablation that drops weight
sharing, trained on canonical-orientation intersection scenes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass


from .data import GeneratorConfig, generate_synthetic
from .model import ModelConfig, TrainConfig, evaluate_scenes, train


@dataclass
class DeskSetup:
    t_in: int = 6
    t_out: int = 10
    dt: float = 0.2
    R: float = 10.0
    k_theta: int = 16
    k_reg: int = 16
    encode_channels: tuple = (2, 4)
    predict_channels: tuple = (2,)
    velocity_scale: float = 0.1
    agents_min: int = 2
    agents_max: int = 4
    noise: float = 0.05
    iterations: int = 800
    batch_size: int = 8
    tf_steps: int = 3
    free_steps: int = 10
    teacher_forcing: float = 0.25
    base_lr: float = 3e-3
    decay_interval: int = 200
    val_scenes: int = 60

    def model_config(self, equivariant: bool, seed: int = 0) -> ModelConfig:
        return ModelConfig(t_in=self.t_in, t_out=self.t_out, dt=self.dt, k_theta=self.k_theta, k_reg=self.k_reg,
                           R=self.R, encode_channels=self.encode_channels, predict_channels=self.predict_channels,
                           velocity_scale=self.velocity_scale, equivariant=equivariant, seed=seed)

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, batch_size=self.batch_size, tf_steps=self.tf_steps,
                           free_steps=self.free_steps, teacher_forcing=self.teacher_forcing, base_lr=self.base_lr,
                           decay_interval=self.decay_interval, val_every=0, seed=seed)

    def scenes(self, n: int, seed: int, split: str = "train", augment: bool = False) -> list:
        g = GeneratorConfig(family="intersection", n_scenes=n, t_in=self.t_in, t_out=self.t_out, dt=self.dt,
                            noise=self.noise, agents_min=self.agents_min, agents_max=self.agents_max,
                            augment_rotations=augment, split=split, seed=seed)
        return generate_synthetic(g)


MODELS = (("ecco", True), ("ctsconv-nonequi", False))


def _fit(setup: DeskSetup, data, equivariant: bool, seed: int):
    t0 = time.perf_counter()
    model, _, _ = train(data, setup.model_config(equivariant, seed), setup.train_config(seed))
    return model, time.perf_counter() - t0


def generalization(setup: DeskSetup | None = None, n_train: int = 2000, angle_deg: float = 160.0, seed: int = 0,
                   data_seed: int = 1, val_seed: int = 2) -> list:
    """Unrotated vs rotated validation error for both models; one dict per model."""
    setup = DeskSetup() if setup is None else setup
    data = setup.scenes(n_train, data_seed)
    val = setup.scenes(setup.val_scenes, val_seed, "val")
    turned = [sc.rotated(math.radians(angle_deg)) for sc in val]
    rows = []
    for name, eq in MODELS:
        model, secs = _fit(setup, data, eq, seed)
        a, b = evaluate_scenes(model, val), evaluate_scenes(model, turned)
        rows.append({"model": name, "n_train": n_train, "angle_deg": angle_deg, "seed": seed,
                     "params": model.num_parameters(), "ade": a.ade, "fde": a.fde, "rot_ade": b.ade,
                     "rot_fde": b.fde, "degradation": b.ade / a.ade - 1.0, "train_seconds": secs})
    return rows


def sample_efficiency(setup: DeskSetup | None = None, budgets=(250, 500, 1000, 2000), seeds=(0, 1, 2),
                      val_seed: int = 2, any_heading: bool = True) -> list:
    """Validation FDE per (seed, budget, model).

    Each seed draws its own training pool (budgets are nested prefixes of it)
    and its own initialization; the validation split is shared. With
    ``any_heading`` scenes carry uniformly random global orientations, as
    recorded driving data does.
    """
    setup = DeskSetup() if setup is None else setup
    val = setup.scenes(setup.val_scenes, val_seed, "val", any_heading)
    rows = []
    for s in seeds:
        pool = setup.scenes(max(budgets), 100 + s, augment=any_heading)
        for n in budgets:
            for name, eq in MODELS:
                model, secs = _fit(setup, pool[:n], eq, s)
                rep = evaluate_scenes(model, val)
                rows.append({"model": name, "n_train": n, "seed": s, "ade": rep.ade, "fde": rep.fde,
                             "train_seconds": secs})
    return rows


def budget_wins(rows) -> dict:
    """Per seed: number of budgets at which the equivariant model's FDE is ≤ the ablation's."""
    fde = {(r["seed"], r["n_train"], r["model"]): r["fde"] for r in rows}
    out = {}
    for s, n, m in fde:
        if m != "ecco":
            continue
        out.setdefault(s, 0)
        out[s] += int(fde[(s, n, "ecco")] <= fde[(s, n, "ctsconv-nonequi")])
    return out

