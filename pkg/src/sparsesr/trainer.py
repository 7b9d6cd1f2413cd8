"""Optimization loop: seeded batches, Adam with a stepped lr schedule,
checkpointing at epoch boundaries, and a fine-tune phase that swaps the
prior sharpness and enables the adversarial weight slot.

Reproducibility contract: every random draw in a run comes from a stream
derived from (seed, purpose, global step), so two runs with the same
config and seed are bit-identical, and a run resumed from an epoch
checkpoint continues the exact trajectory of an uninterrupted one.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError, NumericsError
from .imaging import bicubic_resize, degrade, dihedral
from .model import ModelConfig, SparseSRModel, assemble_residual, sample_coeffs
from .numerics import AdamState, Tensor, adam_step, clip_gradients
from .objective import LossWeights, PriorParams, kl_loss, recon_loss, total_loss
from .rng import derive


def default_lr_patch(scale: int) -> int:
    """LR-side crop width: 48 at x4, 32 at x8, 48 otherwise."""
    return 32 if scale == 8 else 48


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 100
    batch_size: int = 16
    lr_patch: int = 0  # 0 means: pick by scale via default_lr_patch
    crops_per_image: int = 32
    prior_alpha: float = 3.0
    prior_beta: float = 0.5
    lambda_coeff: float = 0.01
    lambda_adv: float = 0.0
    lambda_perceptual: float = 0.0
    grad_clip: float = 10.0
    seed: int = 0
    checkpoint_every: int = 100
    finetune_epochs: int = 100
    finetune_beta: float = 1.0
    finetune_lambda_adv: float = 0.1

    def __post_init__(self):
        problems = []
        if self.epochs <= 0:
            problems.append(f"epochs must be > 0, got {self.epochs}")
        if self.lr <= 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if not 0.0 < self.lr_decay <= 1.0:
            problems.append(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.lr_decay_every <= 0:
            problems.append(f"lr_decay_every must be > 0, got {self.lr_decay_every}")
        if self.batch_size <= 0:
            problems.append(f"batch_size must be > 0, got {self.batch_size}")
        if self.lr_patch < 0:
            problems.append(f"lr_patch must be >= 0, got {self.lr_patch}")
        if self.crops_per_image <= 0:
            problems.append(f"crops_per_image must be > 0, got {self.crops_per_image}")
        if self.prior_alpha <= 0 or self.prior_beta <= 0:
            problems.append("prior_alpha and prior_beta must be > 0")
        for name in ("lambda_coeff", "lambda_adv", "lambda_perceptual"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.grad_clip <= 0:
            problems.append(f"grad_clip must be > 0, got {self.grad_clip}")
        if self.checkpoint_every < 0:
            problems.append(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.finetune_epochs <= 0:
            problems.append(f"finetune_epochs must be > 0, got {self.finetune_epochs}")
        if self.finetune_beta <= 0:
            problems.append(f"finetune_beta must be > 0, got {self.finetune_beta}")
        if self.finetune_lambda_adv < 0:
            problems.append("finetune_lambda_adv must be >= 0")
        if problems:
            raise ConfigError("; ".join(problems))

    def patch_for(self, scale: int) -> int:
        return self.lr_patch if self.lr_patch else default_lr_patch(scale)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


class TrainLog:
    """Append-only per-step records plus epoch summaries.

    Records are JSON objects, one per line when a path is attached.  The
    step index must be strictly increasing; summaries carry wall-clock
    seconds, step records never do, so logs of identical runs differ only
    in their summary lines.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._last_step = -1
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append_step(self, *, step: int, epoch: int, recon: float,
                    coeff_penalty: float, total: float, lr: float,
                    grad_norm: float, clipped: bool) -> None:
        if step <= self._last_step:
            raise ConfigError(
                f"TrainLog: step {step} not greater than previous {self._last_step}")
        self._last_step = step
        self._write({
            "kind": "step", "step": step, "epoch": epoch, "recon": recon,
            "coeff_penalty": coeff_penalty, "total": total, "lr": lr,
            "grad_norm": grad_norm, "clipped": clipped,
        })

    def append_epoch(self, *, epoch: int, mean_total: float,
                     seconds: float) -> None:
        self._write({"kind": "epoch", "epoch": epoch,
                     "mean_total": mean_total, "seconds": seconds})

    def _write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def step_records(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "step"]


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Stepped schedule: lr * decay^(epoch // every), exact at boundaries."""
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


def steps_per_epoch(config: TrainConfig, num_images: int) -> int:
    return max(1, (num_images * config.crops_per_image) // config.batch_size)


def _degraded_cache(images: list[tuple[str, np.ndarray]], scale: int,
                    lr_patch: int) -> list[tuple[str, np.ndarray, np.ndarray]]:
    if not images:
        raise DataError("training dataset is empty")
    cache = []
    for name, hr in images:
        lr = degrade(hr, scale)
        if lr.shape[0] < lr_patch or lr.shape[1] < lr_patch:
            raise DataError(
                f"image {name!r}: LR {lr.shape[0]}x{lr.shape[1]} smaller than "
                f"patch {lr_patch}")
        cache.append((name, np.ascontiguousarray(hr, dtype=np.float64), lr))
    return cache


def _draw_batch(cache, scale: int, lr_patch: int, batch_size: int,
                rng: np.random.Generator):
    """Aligned LR/HR crops with a shared dihedral transform per pair.

    Returns channel-stacked arrays: LR (3B, 1, p, p) float32, HR and base
    (3B, sp, sp) float32.  The base is the bicubic upsample of each LR
    crop, computed in float64 and cast once.
    """
    lr_rows, hr_rows, base_rows = [], [], []
    hp = lr_patch * scale
    for _ in range(batch_size):
        idx = int(rng.integers(len(cache)))
        _, hr, lr = cache[idx]
        top = int(rng.integers(lr.shape[0] - lr_patch + 1))
        left = int(rng.integers(lr.shape[1] - lr_patch + 1))
        k = int(rng.integers(8))
        lp = dihedral(lr[top:top + lr_patch, left:left + lr_patch], k)
        hpatch = dihedral(
            hr[top * scale:top * scale + hp, left * scale:left * scale + hp], k)
        base = bicubic_resize(lp, hp, hp)
        for ch in range(3):
            lr_rows.append(lp[:, :, ch])
            hr_rows.append(hpatch[:, :, ch])
            base_rows.append(base[:, :, ch])
    lr_batch = np.stack(lr_rows).astype(np.float32)[:, None]
    hr_batch = np.stack(hr_rows).astype(np.float32)
    base_batch = np.stack(base_rows).astype(np.float32)
    return lr_batch, hr_batch, base_batch


def _dump_batch(out_dir: Path | None, step: int, lr_batch, hr_batch,
                base_batch, reason: str) -> Path:
    directory = out_dir if out_dir is not None else Path.cwd()
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"diagnostic_step{step:06d}.npz"
    np.savez(path, lr=lr_batch, hr=hr_batch, base=base_batch,
             step=np.array(step), reason=np.array(reason))
    return path


def _run_epochs(model: SparseSRModel, cache, config: TrainConfig,
                adam: AdamState, log: TrainLog, first_epoch: int,
                last_epoch: int, prior: PriorParams, weights: LossWeights,
                out_dir: Path | None) -> None:
    scale = model.config.scale
    lr_patch = config.patch_for(scale)
    spe = steps_per_epoch(config, len(cache))
    stochastic_atoms = model.config.stochastic_atoms
    s2 = scale * scale
    c = model.config.num_atoms

    for epoch in range(first_epoch, last_epoch):
        adam.lr = learning_rate(config, epoch)
        epoch_start = time.monotonic()
        totals = []
        for local_step in range(spe):
            step = epoch * spe + local_step
            data_rng = derive(config.seed, "data", step)
            noise_rng = derive(config.seed, "noise", step)
            lr_batch, hr_batch, base_batch = _draw_batch(
                cache, scale, lr_patch, config.batch_size, data_rng)
            n = lr_batch.shape[0]
            eps = noise_rng.standard_normal(
                (n, lr_patch * lr_patch, c), dtype=np.float32)

            try:
                x = Tensor(lr_batch)
                atom_noise = None
                if stochastic_atoms:
                    atom_noise = Tensor(noise_rng.standard_normal(
                        (n, s2, c), dtype=np.float32))
                z = model.basis_branch(x, atom_noise=atom_noise)
                dist = model.coeff_branch(x)
                if model.config.stochastic_coeffs:
                    omega = sample_coeffs(dist, eps)
                else:
                    omega = dist.mu
                residual = assemble_residual(
                    z, omega, (lr_patch, lr_patch), scale)
                recon = recon_loss(hr_batch, base_batch, residual)
                penalty = kl_loss(dist.mu, dist.sigma, prior)
                report = total_loss(recon, penalty, weights)
                if not math.isfinite(report.total):
                    raise NumericsError(f"loss is {report.total}")
                model.zero_grads()
                report.node.backward()
            except NumericsError as exc:
                path = _dump_batch(out_dir, step, lr_batch, hr_batch,
                                   base_batch, str(exc))
                raise NumericsError(
                    f"non-finite training step {step}: {exc}; offending "
                    f"batch saved to {path}") from exc

            grads = {name: p.grad for name, p in model.params.items()
                     if p.grad is not None}
            norm, clipped = clip_gradients(grads, config.grad_clip)
            adam_step(model.params, grads, adam)
            totals.append(report.total)
            log.append_step(step=step, epoch=epoch, recon=report.recon,
                            coeff_penalty=report.coeff_penalty,
                            total=report.total, lr=adam.lr,
                            grad_norm=norm, clipped=clipped)

        log.append_epoch(epoch=epoch, mean_total=float(np.mean(totals)),
                         seconds=time.monotonic() - epoch_start)
        done = epoch + 1
        if out_dir is not None:
            boundary = config.checkpoint_every and done % config.checkpoint_every == 0
            if boundary and done != last_epoch:
                save_checkpoint(out_dir / f"epoch_{done:04d}.ckpt", model,
                                adam=adam, epoch=done, step=done * spe)


def train(model: SparseSRModel, images: list[tuple[str, np.ndarray]],
          config: TrainConfig, out_dir: str | Path | None = None,
          adam: AdamState | None = None, start_epoch: int = 0,
          log: TrainLog | None = None) -> tuple[SparseSRModel, TrainLog]:
    """Optimize the model for ``config.epochs`` epochs from ``start_epoch``.

    ``images`` are (name, HR array) pairs as produced by load_dataset.
    Pass the optimizer state and epoch from a loaded checkpoint to resume;
    the continuation is bit-identical to a run that never stopped.
    """
    if model.config.base_mode == "external":
        raise ConfigError(
            "base_mode 'external' is inference-only; train with 'bicubic' or 'none'")
    if not 0 <= start_epoch <= config.epochs:
        raise ConfigError(
            f"start_epoch {start_epoch} outside [0, {config.epochs}]")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cache = _degraded_cache(images, model.config.scale,
                            config.patch_for(model.config.scale))
    if adam is None:
        adam = AdamState.init(model.params, lr=config.lr)
    if log is None:
        log = TrainLog(out / "train_log.jsonl" if out is not None else None)
    prior = PriorParams(config.prior_alpha, config.prior_beta)
    weights = LossWeights(coeff=config.lambda_coeff,
                          adversarial=config.lambda_adv,
                          perceptual=config.lambda_perceptual)
    _run_epochs(model, cache, config, adam, log, start_epoch, config.epochs,
                prior, weights, out)
    if out is not None:
        spe = steps_per_epoch(config, len(cache))
        save_checkpoint(out / "final.ckpt", model, adam=adam,
                        epoch=config.epochs, step=config.epochs * spe)
    return model, log


def fine_tune(model: SparseSRModel, images: list[tuple[str, np.ndarray]],
              config: TrainConfig, out_dir: str | Path | None = None,
              adam: AdamState | None = None,
              log: TrainLog | None = None) -> tuple[SparseSRModel, TrainLog]:
    """Continue a finished baseline with the sharper prior and adv slot.

    Epochs run from config.epochs to config.epochs + finetune_epochs, so
    the step counter and lr schedule continue globally rather than
    restarting.  The adversarial weight becomes active but has no network
    attached here, so its contribution stays zero until a hook is wired.
    """
    if model.config.base_mode == "external":
        raise ConfigError(
            "base_mode 'external' is inference-only; train with 'bicubic' or 'none'")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cache = _degraded_cache(images, model.config.scale,
                            config.patch_for(model.config.scale))
    if adam is None:
        adam = AdamState.init(model.params, lr=config.lr)
    if log is None:
        log = TrainLog(out / "finetune_log.jsonl" if out is not None else None)
    prior = PriorParams(config.prior_alpha, config.finetune_beta)
    weights = LossWeights(coeff=config.lambda_coeff,
                          adversarial=config.finetune_lambda_adv,
                          perceptual=config.lambda_perceptual)
    first = config.epochs
    last = config.epochs + config.finetune_epochs
    _run_epochs(model, cache, config, adam, log, first, last, prior,
                weights, out)
    if out is not None:
        spe = steps_per_epoch(config, len(cache))
        save_checkpoint(out / "finetuned.ckpt", model, adam=adam,
                        epoch=last, step=last * spe)
    return model, log


def desk_preset() -> tuple[ModelConfig, TrainConfig]:
    """Small single-core setup: 16 images, 64 atoms, 4 blocks, 40 epochs.

    Sized so a full train plus evaluation finishes in minutes on one CPU
    core while still producing visibly diverse, LR-consistent samples.
    """
    model = ModelConfig(scale=4, num_atoms=64, num_blocks=4, width=16,
                        coeff_depth=3)
    train_cfg = TrainConfig(epochs=40, lr=2e-3, lr_decay_every=100,
                            batch_size=8, lr_patch=12, crops_per_image=16,
                            lambda_coeff=1e-5, checkpoint_every=20, seed=0)
    return model, train_cfg
