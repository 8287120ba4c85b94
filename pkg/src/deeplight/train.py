"""Training loop: run configuration, batching, logging, checkpoints, eval.

The loop is deterministic given the run seed.  Batches are drawn from a
per-step generator keyed by (seed, step), so resuming from a checkpoint
replays the exact batch sequence of an uninterrupted run.  The JSONL log is
flushed every step; a non-finite loss saves the last finite state and stops.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .checkpoint import read_checkpoint, write_checkpoint
from .data import read_bundle, read_manifest
from .engine import Tensor, no_grad
from .engine.optim import Adam
from .errors import ConfigError, DataError
from .losses import LossConfig, composite_loss
from .metrics import MetricsReport, aggregate, evaluate_pair

LOG_NAME = "train_log.jsonl"
LAST_CKPT = "last.dlck"
BEST_CKPT = "best.dlck"


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("optimizer.lr must be positive")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ConfigError("optimizer.betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("optimizer.eps must be positive")


@dataclass(frozen=True)
class RunConfig:
    model: M.ModelConfig = field(default_factory=M.ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    steps: int = 2000
    batch_size: int = 2
    seed: int = 0
    data_dir: str = ""
    eval_every: int = 500

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    def to_flat(self) -> dict[str, str]:
        flat = {f"model.{k}": v for k, v in self.model.to_dict().items()}
        flat["loss.alpha"] = str(self.loss.alpha)
        flat["loss.betas"] = ",".join(str(b) for b in self.loss.betas)
        flat["loss.bce_epsilon"] = str(self.loss.bce_epsilon)
        flat["optimizer.lr"] = str(self.optimizer.lr)
        flat["optimizer.betas"] = ",".join(str(b) for b in self.optimizer.betas)
        flat["optimizer.eps"] = str(self.optimizer.eps)
        for k in ("steps", "batch_size", "seed", "data_dir", "eval_every"):
            flat[k] = str(getattr(self, k))
        return flat

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "RunConfig":
        flat = dict(flat)
        if "ablation" in flat:  # accepted shorthand for model.ablation
            flat["model.ablation"] = flat.pop("ablation")

        def pop(key, default, conv):
            raw = flat.pop(key, None)
            if raw is None:
                return default
            try:
                return conv(raw)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for '{key}': {raw}") from e

        def floats(raw):
            return tuple(float(x) for x in raw.split(","))

        model_d = M.ModelConfig().to_dict()
        for k in list(flat):
            if k.startswith("model."):
                model_d[k[len("model."):]] = flat.pop(k)
        model = M.ModelConfig.from_dict(model_d)
        loss = LossConfig(
            alpha=pop("loss.alpha", 0.8, float),
            betas=pop("loss.betas", (0.2, 0.3, 0.5), floats),
            bce_epsilon=pop("loss.bce_epsilon", 1e-6, float),
        )
        optim = OptimConfig(
            lr=pop("optimizer.lr", 1e-3, float),
            betas=pop("optimizer.betas", (0.9, 0.999), floats),
            eps=pop("optimizer.eps", 1e-8, float),
        )
        cfg = cls(model=model, loss=loss, optimizer=optim,
                  steps=pop("steps", 2000, int),
                  batch_size=pop("batch_size", 2, int),
                  seed=pop("seed", 0, int),
                  data_dir=pop("data_dir", "", str),
                  eval_every=pop("eval_every", 500, int))
        if flat:
            raise ConfigError(f"unknown config key '{sorted(flat)[0]}'")
        return cfg


@dataclass
class SceneData:
    """One scene's arrays shaped for the model (leading channel axis)."""
    lr: np.ndarray
    dmo: np.ndarray
    dem: np.ndarray
    hr: np.ndarray
    isp: np.ndarray
    tile_id: str


def load_split(data_dir, split: str) -> list[SceneData]:
    manifest = read_manifest(data_dir)
    if split not in manifest.splits:
        raise DataError(f"unknown split '{split}'")
    ids = manifest.splits[split]
    scenes = []
    for i in ids:
        b = read_bundle(manifest.scene_dir(data_dir, i))
        scenes.append(SceneData(
            lr=b.lr_ntl[None], dmo=b.dmo, dem=b.dem[None],
            hr=b.hr_ntl[None], isp=b.isp[None].astype(np.float32),
            tile_id=f"scene_{i:04d}"))
    return scenes


def _geometry_from_data(cfg: RunConfig, scenes: list[SceneData]) -> M.ModelConfig:
    """Model geometry (lr size, scale, pyramid depth) follows the dataset."""
    lr_h, lr_w = scenes[0].lr.shape[1:]
    hr_h = scenes[0].hr.shape[1]
    r = hr_h // lr_h
    m = round(math.log2(r))
    if 2 ** m != r:
        raise ConfigError(f"dataset scale factor {r} is not a power of two")
    return dataclasses.replace(cfg.model, lr_size=(lr_h, lr_w), scale_r=r,
                               num_scales_m=m)


_DEFAULT_BETAS = (0.2, 0.3, 0.5)


def _reconcile_betas(loss: LossConfig, model_cfg: M.ModelConfig) -> LossConfig:
    """Match per-scale weights to the number of scales the model emits.

    Explicitly configured betas must match; the stock default adapts by
    keeping its finest entries (padding the coarse end for deep pyramids)
    and renormalizing, so the (1.0,)-weight single-scale case falls out.
    """
    levels = 1 if model_cfg.ablation == "no-aer" else model_cfg.num_scales_m
    if len(loss.betas) == levels:
        return loss
    if tuple(loss.betas) != _DEFAULT_BETAS:
        raise ConfigError(
            f"loss.betas has {len(loss.betas)} entries but the model emits "
            f"{levels} scales")
    base = list(_DEFAULT_BETAS)
    while len(base) < levels:
        base.insert(0, base[0])
    base = base[-levels:]
    total = sum(base)
    return dataclasses.replace(loss, betas=tuple(b / total for b in base))


def _batch(scenes: list[SceneData], idx) -> dict[str, Tensor]:
    return {
        "lr": Tensor(np.stack([scenes[i].lr for i in idx])),
        "dmo": Tensor(np.stack([scenes[i].dmo for i in idx])),
        "dem": Tensor(np.stack([scenes[i].dem for i in idx])),
        "hr": Tensor(np.stack([scenes[i].hr for i in idx])),
        "isp": Tensor(np.stack([scenes[i].isp for i in idx])),
    }


def predict_scene(state: M.ModelState, scene: SceneData) -> np.ndarray:
    """Super-resolved prediction for one scene, clipped to [0, 1]."""
    with no_grad():
        out = M.forward(state, Tensor(scene.lr[None]),
                        Tensor(scene.dmo[None]), Tensor(scene.dem[None]))
    return np.clip(out.sr_pyramid[-1].data[0, 0], 0.0, 1.0)


def evaluate_scenes(state: M.ModelState, scenes: list[SceneData],
                    workers: int = 1) -> tuple[list[MetricsReport], dict]:
    """Per-tile metric reports plus their aggregate.

    Tiles are independent, so with workers > 1 they are scored on a thread
    pool; results keep the input order either way.
    """
    def one(sc: SceneData) -> MetricsReport:
        return evaluate_pair(predict_scene(state, sc), sc.hr[0],
                             tile_id=sc.tile_id)

    if workers > 1 and len(scenes) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, scenes))
    else:
        reports = [one(sc) for sc in scenes]
    return reports, aggregate(reports)


@dataclass
class TrainResult:
    status: str  # "ok" or "numeric_failure"
    final_step: int
    best_val_psnr: float
    last_ckpt: Path
    best_ckpt: Path
    log_path: Path


def _save(path, state: M.ModelState, opt: Adam, cfg: RunConfig, step: int,
          best: float) -> None:
    arrays = dict(state.arrays())
    arrays.update(opt.state_arrays())
    meta = cfg.to_flat()
    meta["step"] = str(step)
    meta["optimizer_t"] = str(opt.t)
    meta["best_val_psnr"] = repr(best)
    write_checkpoint(path, arrays, meta)


def load_for_inference(ckpt_path) -> tuple[M.ModelState, RunConfig]:
    meta, records = read_checkpoint(ckpt_path)
    run_keys = {k: v for k, v in meta.items()
                if k not in ("step", "optimizer_t", "best_val_psnr")}
    cfg = RunConfig.from_flat(run_keys)
    state = M.build(cfg.model, seed=cfg.seed)
    params = {k: v for k, v in records.items() if not k.startswith("opt.")}
    state.load_arrays(params)
    return state, cfg


def train(cfg: RunConfig, out_dir, resume=None, echo=None) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_scenes = load_split(cfg.data_dir, "train")
    if not train_scenes:
        raise DataError(f"train split of {cfg.data_dir} is empty")
    val_scenes = load_split(cfg.data_dir, "val")
    model_cfg = _geometry_from_data(cfg, train_scenes)
    cfg = dataclasses.replace(cfg, model=model_cfg,
                              loss=_reconcile_betas(cfg.loss, model_cfg))

    state = M.build(model_cfg, seed=cfg.seed)
    opt = Adam(state.params, lr=cfg.optimizer.lr, betas=cfg.optimizer.betas,
               eps=cfg.optimizer.eps)
    start_step = 0
    best = -math.inf
    if resume is not None:
        meta, records = read_checkpoint(resume)
        if meta.get("model.ablation") != model_cfg.ablation:
            raise DataError(
                f"checkpoint ablation '{meta.get('model.ablation')}' does not "
                f"match run ablation '{model_cfg.ablation}'")
        state.load_arrays(
            {k: v for k, v in records.items() if not k.startswith("opt.")})
        opt.load_state_arrays(
            {k: v for k, v in records.items() if k.startswith("opt.")},
            t=int(meta["optimizer_t"]))
        start_step = int(meta["step"])
        best = float(meta.get("best_val_psnr", "-inf"))

    log_path = out / LOG_NAME
    mode = "a" if resume is not None else "w"
    n = len(train_scenes)

    def run_eval(step, log):
        if not val_scenes:
            return None
        _, agg = evaluate_scenes(state, val_scenes)
        log.write(json.dumps({"step": step, "eval": agg}) + "\n")
        log.flush()
        return agg

    with open(log_path, mode, encoding="utf-8") as log:
        for step in range(start_step, cfg.steps):
            t0 = time.perf_counter()
            idx = np.random.default_rng([cfg.seed, step]).integers(
                0, n, cfg.batch_size)
            batch = _batch(train_scenes, idx)
            outp = M.forward(state, batch["lr"], batch["dmo"], batch["dem"])
            loss = composite_loss(outp.sr_pyramid, outp.isp_logits,
                                  batch["hr"], batch["isp"], cfg.loss)
            total = float(loss["total"].data)
            if not math.isfinite(total):
                _save(out / LAST_CKPT, state, opt, cfg, step, best)
                log.write(json.dumps(
                    {"step": step, "event": "numeric_failure",
                     "total": total}) + "\n")
                log.flush()
                return TrainResult("numeric_failure", step, best,
                                   out / LAST_CKPT, out / BEST_CKPT, log_path)
            loss["total"].backward()
            opt.step()
            row = {
                "step": step,
                "total": total,
                "l1": float(loss["l1"].data),
                "bce": (float(loss["bce"].data)
                        if loss["bce"] is not None else None),
                "scale_l1": [float(p.data) for p in loss["scale_l1"]],
                "alpha_used": loss["alpha_used"],
                "wall_s": time.perf_counter() - t0,
            }
            log.write(json.dumps(row) + "\n")
            log.flush()
            if echo is not None:
                echo(row)
            done = step + 1
            if done % cfg.eval_every == 0 or done == cfg.steps:
                agg = run_eval(done, log)
                if agg is not None and math.isfinite(agg["psnr"]) \
                        and agg["psnr"] > best:
                    best = agg["psnr"]
                    _save(out / BEST_CKPT, state, opt, cfg, done, best)

    _save(out / LAST_CKPT, state, opt, cfg, cfg.steps, best)
    if not (out / BEST_CKPT).exists():
        _save(out / BEST_CKPT, state, opt, cfg, cfg.steps, best)
    return TrainResult("ok", cfg.steps, best, out / LAST_CKPT,
                       out / BEST_CKPT, log_path)
