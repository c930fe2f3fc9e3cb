"""Command-line entry point: synth, train, eval, lab, gradcheck, bench.

Exit codes: 0 success, 2 configuration error, 3 failed check.
"""
from __future__ import annotations

import os

_threads = os.environ.get("ECCO_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from collections import Counter  # noqa: E402
from dataclasses import replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import config as cfgmod  # noqa: E402
from .config import ConfigError, RunConfig  # noqa: E402

log = logging.getLogger("ecco")

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3


class CheckFailed(RuntimeError):
    pass


# --- output helpers ----------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def write_manifest(out: Path, cfg: RunConfig, files, extra=None) -> Path:
    """Serialized run config plus checksums of every artifact; no timestamps."""
    (out / "run_config.txt").write_text(cfgmod.to_text(cfg))
    man = {
        "command": cfg.command,
        "config_file": "run_config.txt",
        "files": {Path(f).name: sha256_file(f) for f in files},
    }
    if extra:
        man.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def write_rows(path, rows, columns=None) -> None:
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def _read_dataset(path, what="dataset"):
    from .data import read_scenes

    if not path:
        raise ConfigError(f"no {what} given")
    if not Path(path).is_file():
        raise ConfigError(f"{what} {path} does not exist")
    try:
        return read_scenes(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot parse {what} {path}: {exc}") from exc


# --- commands ----------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    from .data import generate_synthetic, write_scenes

    out = _out_dir(cfg)
    try:
        scenes = generate_synthetic(cfg.gen)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    path = out / f"{cfg.gen.split}.jsonl"
    write_scenes(scenes, path)
    extra = {
        "seed": cfg.gen.seed,
        "scenes": len(scenes),
        "agents": int(sum(len(s.agents) for s in scenes)),
        "family_mix": dict(sorted(Counter(s.family for s in scenes).items())),
    }
    if cfg.gen.augment_rotations:
        extra["rotations"] = {s.scene_id: s.rotation for s in scenes}
    write_manifest(out, cfg, [path], extra)
    print(f"wrote {len(scenes)} scenes to {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    from .model import dumps_checkpoint, train

    dataset = _read_dataset(cfg.dataset)
    val = _read_dataset(cfg.val, "validation set") if cfg.val else None
    if not dataset:
        raise ConfigError("dataset is empty")
    out = _out_dir(cfg)
    log_path = out / "train_log.csv"
    rows = []

    def report(row):
        rows.append(row)
        if "val_ade" in row:
            print(f"iter {row['iteration']:>6d}  loss {row['loss']:.5f}  val ADE {row['val_ade']:.4f}  FDE {row['val_fde']:.4f}")

    try:
        _, ck, _ = train(dataset, cfg.model, cfg.train, val, report)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ck_path = out / "checkpoint.json"
    ck_path.write_text(dumps_checkpoint(ck))
    cols = ["iteration", "loss", "lr", "teacher", "val_ade", "val_fde"]
    write_rows(log_path, rows, cols)
    write_manifest(out, cfg, [ck_path, log_path], {"iterations": cfg.train.iterations,
                                                   "equivariant": cfg.model.equivariant})
    print(f"checkpoint written to {ck_path}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    from .data import NearestNeighborIndex, baseline_constant_velocity, baseline_nearest_neighbor, compute_metrics
    from .model import evaluate_predictions, load_checkpoint

    scenes = _read_dataset(cfg.dataset)
    if cfg.eval.rotate_test:
        theta = math.radians(cfg.eval.rotate_test)
        scenes = [s.rotated(theta) for s in scenes]
    out = _out_dir(cfg)
    rows = []
    t_in = cfg.model.t_in
    t_out = cfg.model.t_out
    if cfg.checkpoint:
        if not Path(cfg.checkpoint).is_file():
            raise ConfigError(f"checkpoint {cfg.checkpoint} does not exist")
        model, _ = load_checkpoint(cfg.checkpoint)
        t_in, t_out = model.cfg.t_in, model.cfg.t_out
        try:
            preds, truths, masks = evaluate_predictions(model, scenes, cfg.eval.batch)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        name = "ecco" if model.cfg.equivariant else "ctsconv-nonequi"
        rows.append(_metric_row(name, compute_metrics(preds, truths, masks, cfg.eval.horizons)))
    truths = [s.positions()[:, t_in : t_in + t_out] for s in scenes]
    masks = [s.masks()[:, t_in : t_in + t_out] & s.masks()[:, t_in - 1 : t_in] for s in scenes]
    cv = [baseline_constant_velocity(s, t_in, t_out) for s in scenes]
    rows.append(_metric_row("constant_velocity", compute_metrics(cv, truths, masks, cfg.eval.horizons)))
    if cfg.reference:
        index = NearestNeighborIndex.from_scenes(_read_dataset(cfg.reference, "reference set"), t_in, t_out)
        nn = [baseline_nearest_neighbor(index, s, t_in, t_out) for s in scenes]
        rows.append(_metric_row("nearest_neighbor", compute_metrics(nn, truths, masks, cfg.eval.horizons)))
    path = out / "metrics.csv"
    write_rows(path, rows)
    write_manifest(out, cfg, [path], {"rotate_test_deg": cfg.eval.rotate_test, "scenes": len(scenes)})
    for r in rows:
        print(f"{r['model']:<20s} ADE {r['ade']:.4f}  FDE {r['fde']:.4f}")
    return EXIT_OK


def _metric_row(name, rep) -> dict:
    return {"model": name, **rep.row()}


def cmd_lab(cfg: RunConfig) -> int:
    from .lab import ee_sweep, loglog_slope, proposition_check, write_csv

    lc = cfg.lab
    out = _out_dir(cfg)
    sweep = ee_sweep(lc.k_theta, trials=lc.trials, seed=cfg.seed, mode=lc.mode)
    sweep_path = out / "ee_sweep.csv"
    write_csv(sweep, sweep_path)
    curve_thetas = np.linspace(0.0, 2 * 2 * np.pi / lc.curve_k_theta, lc.curve_points)
    curve = ee_sweep([lc.curve_k_theta], thetas=curve_thetas, trials=lc.curve_trials, seed=cfg.seed, mode=lc.mode)
    curve_path = out / "ee_theta.csv"
    write_csv(curve, curve_path)
    slope = loglog_slope([r["k_theta"] for r in sweep], [r["mean_ee"] for r in sweep]) if len(sweep) > 1 else float("nan")
    prop_rows, ok = [], True
    for k in lc.k_theta:
        rep = proposition_check(int(k), trials=lc.trials, n_thetas=lc.n_thetas, seed=cfg.seed)
        ok &= rep.mean_ok
        for r in rep.rows:
            prop_rows.append({"k_theta": int(k), "theta": r.theta, "theta_hat": r.theta_hat, "mean_ee": r.mean_ee,
                              "mean_bound": r.mean_bound, "k_bound": r.k_bound, "max_ee": r.max_ee,
                              "per_draw_bound": r.per_draw_bound, "violations": r.violations,
                              "jump_draws": r.jump_draws, "jump_free_violations": r.jump_free_violations,
                              "trials": r.trials})
        print(f"k_theta={k:<3d} mean bound {'ok' if rep.mean_ok else 'VIOLATED'}; per-draw exceedances "
              f"{rep.violations} (all from slice jumps: {rep.jump_free_violations == 0})")
    prop_path = out / "proposition.csv"
    write_rows(prop_path, prop_rows)
    write_manifest(out, cfg, [sweep_path, curve_path, prop_path], {"loglog_slope": slope})
    print(f"log-log slope of mean EE vs k_theta: {slope:.3f}")
    if not ok:
        raise CheckFailed("expected-error bound violated")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, seeds: int = 20) -> int:
    from .gradcheck import TOLERANCE, run_gradchecks

    out = _out_dir(cfg)
    rows = run_gradchecks(seeds=seeds)
    path = out / "gradcheck.csv"
    write_rows(path, [{"op": r.op, "seeds": r.seeds, "worst_rel_err": r.worst_rel_err, "passed": int(r.passed)} for r in rows])
    write_manifest(out, cfg, [path])
    for r in rows:
        print(f"{r.op:<14s} {'PASS' if r.passed else 'FAIL'}  worst rel err {r.worst_rel_err:.2e} (< {TOLERANCE:g})")
    if not all(r.passed for r in rows):
        raise CheckFailed("gradient check failed")
    return EXIT_OK


def bench_conv(n: int, density: float, channels: int, repeats: int, seed: int = 0, R: float = 4.0) -> float:
    """Best-of-``repeats`` wall time of one ρ_reg → ρ_reg convolution (geometry included)."""
    from .field import FeatureField, PointSet
    from .kernel import PolarGridSpec, PolarKernel
    from .ops import AttentionWindow, conv_apply, ConvGeometry
    from .repr import RepSpec

    rng = np.random.default_rng([seed, n])
    side = math.sqrt(n / density)
    pts = PointSet(rng.uniform(0.0, side, size=(n, 2)))
    spec = RepSpec.rhoreg(channels, 16)
    grid = PolarGridSpec(16, 3, R)
    K = PolarKernel(grid, spec, spec, rng=rng)
    f = FeatureField(pts, spec, rng.normal(size=(n, spec.dim)))
    kg = K.grid_tensor()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        geom = ConvGeometry.build(pts, pts, grid, AttentionWindow(R))
        conv_apply(K, geom, f.data, kg)
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(cfg: RunConfig) -> int:
    bc = cfg.bench
    out = _out_dir(cfg)
    ns = sorted(int(n) for n in bc.n)
    times = [bench_conv(n, bc.density, bc.channels, bc.repeats, cfg.seed) for n in ns]
    rows = []
    for i, (n, t) in enumerate(zip(ns, times)):
        ratio = t / times[i - 1] if i else float("nan")
        rows.append({"n": n, "seconds": t, "ratio_to_previous": ratio})
        print(f"n={n:<6d} {t * 1e3:8.2f} ms  ratio {ratio:.2f}")
    path = out / "bench.csv"
    write_rows(path, rows)
    # timings are machine dependent, so the bench manifest records only the config
    write_manifest(out, cfg, [])
    worst = max((r["ratio_to_previous"] for r in rows[1:]), default=0.0)
    if worst > bc.max_ratio:
        raise CheckFailed(f"time grew {worst:.2f}x on doubling n (limit {bc.max_ratio})")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------------


def _csv_ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecco", description="Rotation-equivariant continuous-convolution trajectory toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for generation, initialization and training")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene file")
    s.add_argument("--family", choices=["cv", "arc", "intersection", "mixed"])
    s.add_argument("--scenes", type=int)
    s.add_argument("--split")
    s.add_argument("--augment-rotations", action="store_true", default=None)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data")
    t.add_argument("--val")
    t.add_argument("--iterations", type=int)
    t.add_argument("--baseline", choices=["ctsconv-nonequi"])

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint and the closed-form baselines")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--reference", help="training scenes for the nearest-neighbour baseline")
    e.add_argument("--rotate-test", type=float, metavar="DEGREES")

    lab = sub.add_parser("lab", parents=[common], help="equivariance-error sweeps and bound check")
    lab.add_argument("--ktheta", type=_csv_ints)
    lab.add_argument("--trials", type=int)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    g.add_argument("--seeds", type=int, default=20)

    b = sub.add_parser("bench", parents=[common], help="convolution scaling benchmark")
    b.add_argument("--n", type=_csv_ints)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = cfgmod.load(args.config, cfg)
    flags = []
    if args.seed is not None:
        flags += [f"run.seed={args.seed}", f"gen.seed={args.seed}", f"model.seed={args.seed}", f"train.seed={args.seed}"]
    if args.out:
        flags.append(f"paths.out={json.dumps(args.out)}")
    c = args.command
    opt = lambda name: getattr(args, name, None)  # noqa: E731
    if c == "synth":
        if opt("family"):
            flags.append(f"gen.family={json.dumps(args.family)}")
        if opt("scenes") is not None:
            flags.append(f"gen.n_scenes={args.scenes}")
        if opt("split"):
            flags.append(f"gen.split={json.dumps(args.split)}")
        if opt("augment_rotations"):
            flags.append("gen.augment_rotations=true")
    if c in ("train", "eval") and opt("data"):
        flags.append(f"paths.dataset={json.dumps(args.data)}")
    if c == "train":
        if opt("val"):
            flags.append(f"paths.val={json.dumps(args.val)}")
        if opt("iterations") is not None:
            flags.append(f"train.iterations={args.iterations}")
        if opt("baseline"):
            flags += [f"run.baseline={json.dumps(args.baseline)}", "model.equivariant=false"]
    if c == "eval":
        if opt("checkpoint"):
            flags.append(f"paths.checkpoint={json.dumps(args.checkpoint)}")
        if opt("reference"):
            flags.append(f"paths.reference={json.dumps(args.reference)}")
        if opt("rotate_test") is not None:
            flags.append(f"eval.rotate_test={args.rotate_test}")
    if c == "lab":
        if opt("ktheta"):
            flags.append(f"lab.k_theta={json.dumps(list(args.ktheta))}")
        if opt("trials") is not None:
            flags.append(f"lab.trials={args.trials}")
    if c == "bench" and opt("n"):
        flags.append(f"bench.n={json.dumps(list(args.n))}")
    cfg = cfgmod.apply_overrides(cfg, flags + list(args.set))
    cfg = replace(cfg, command=c)
    if cfg.baseline and cfg.baseline != "ctsconv-nonequi":
        raise ConfigError(f"unknown baseline {cfg.baseline!r}")
    if cfg.baseline == "ctsconv-nonequi" and cfg.model.equivariant:
        cfg = replace(cfg, model=replace(cfg.model, equivariant=False))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if cfg.command == "synth":
            return cmd_synth(cfg)
        if cfg.command == "train":
            return cmd_train(cfg)
        if cfg.command == "eval":
            return cmd_eval(cfg)
        if cfg.command == "lab":
            return cmd_lab(cfg)
        if cfg.command == "gradcheck":
            return cmd_gradcheck(cfg, args.seeds)
        return cmd_bench(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
