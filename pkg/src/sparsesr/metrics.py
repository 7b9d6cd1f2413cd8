"""Evaluation: PSNR, LR-side PSNR, a seeded random-feature perceptual
proxy with per-pixel maps, and the sample-diversity score built on them.

The perceptual proxy (RFD, random-feature distance) runs both images
through a fixed, untrained three-stage conv pyramid and compares unit
normalized activations.  The kernels are drawn once from a published
seed constant and averaged over their four 90-degree rotations, so the
distance is exactly invariant to jointly rotating both inputs (up to
pooling truncation on odd sizes).  Nothing here is learned; every
installation derives the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeMismatchError
from .imaging import bilinear_resize, degrade
from .model import SparseSRModel, super_resolve
from .rng import derive, derive_seed

RFD_SEED = 271828
_RFD_WIDTHS = (16, 32, 64)
_NORM_EPS = 1e-10


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) on [0, 1] images, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"psnr: shapes {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return 99.0
    return min(10.0 * np.log10(1.0 / mse), 99.0)


def lr_psnr(sr: np.ndarray, y: np.ndarray, scale: int) -> float:
    """PSNR between the degraded SR image and the LR input it came from."""
    sr = np.asarray(sr)
    y = np.asarray(y)
    if sr.shape[0] != y.shape[0] * scale or sr.shape[1] != y.shape[1] * scale:
        raise ShapeMismatchError(
            f"lr_psnr: SR {sr.shape[:2]} is not {scale}x the LR {y.shape[:2]}")
    return psnr(degrade(sr, scale), y)


# -- random-feature distance ------------------------------------------------

def _symmetrized_kernels(rng: np.random.Generator, width_out: int,
                         width_in: int) -> np.ndarray:
    w = rng.standard_normal((width_out, width_in, 3, 3))
    w = (w + np.rot90(w, 1, (2, 3)) + np.rot90(w, 2, (2, 3))
         + np.rot90(w, 3, (2, 3))) / 4.0
    return w / np.sqrt(9.0 * width_in)


def _rfd_kernels() -> list[np.ndarray]:
    rng = derive(RFD_SEED, "rfd-kernels")
    kernels = []
    width_in = 3
    for width_out in _RFD_WIDTHS:
        kernels.append(_symmetrized_kernels(rng, width_out, width_in))
        width_in = width_out
    return kernels


_KERNELS: list[np.ndarray] | None = None


def _kernels() -> list[np.ndarray]:
    global _KERNELS
    if _KERNELS is None:
        _KERNELS = _rfd_kernels()
    return _KERNELS


def _conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x: (C, H, W), w: (O, C, 3, 3); zero padding keeps H, W.
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(pad, (3, 3), axis=(1, 2))
    return np.einsum("chwij,ocij->ohw", windows, w, optimize=True)


def _pool2(x: np.ndarray) -> np.ndarray:
    # 2x2 mean pool, truncating odd trailing rows/columns.
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, :h2 * 2, :w2 * 2].reshape(c, h2, 2, w2, 2)
    return v.mean(axis=(2, 4))


def _unit_channels(f: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(f * f, axis=0, keepdims=True) + _NORM_EPS)
    return f / norm


def _features(img: np.ndarray) -> list[np.ndarray]:
    """Raw post-relu feature maps of the three stages, coarsest last."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None].repeat(3, axis=2)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeMismatchError(f"rfd: expected HxWx3 or HxW image, got {x.shape}")
    if min(x.shape[0], x.shape[1]) < 8:
        raise DataError(f"rfd: image {x.shape[:2]} too small; need at least 8x8")
    x = np.moveaxis(2.0 * x - 1.0, 2, 0)  # center to [-1, 1], CHW
    feats = []
    for i, w in enumerate(_kernels()):
        if i > 0:
            x = _pool2(x)
        x = np.maximum(_conv3x3(x, w), 0.0)
        feats.append(x)
    return feats


@dataclass(frozen=True)
class DistanceMap:
    values: np.ndarray  # (H, W), nonnegative

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeMismatchError("DistanceMap values must be 2-D")

    @property
    def scalar(self) -> float:
        return float(self.values.mean())


def proxy_perceptual(a: np.ndarray, b: np.ndarray) -> DistanceMap:
    """Per-pixel random-feature distance between two same-size images.

    Each stage contributes the channel mean of squared differences of
    unit-normalized activations, upsampled back to input resolution; the
    map is the average over stages.  Identical inputs give exactly zero.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"rfd: shapes {a.shape} vs {b.shape}")
    h, w = a.shape[0], a.shape[1]
    fa = _features(a)
    fb = _features(b)
    acc = np.zeros((h, w), dtype=np.float64)
    for sa, sb in zip(fa, fb):
        diff = _unit_channels(sa) - _unit_channels(sb)
        stage = np.mean(diff * diff, axis=0)
        if stage.shape != (h, w):
            stage = bilinear_resize(stage, h, w)
        acc += stage
    acc = np.maximum(acc / len(fa), 0.0)
    return DistanceMap(values=acc)


# -- diversity ----------------------------------------------------------------

def diversity_from_maps(maps: list[np.ndarray]) -> float:
    """Score 100 * (global_best - local_best) / global_best.

    global_best is the best single map's spatial mean; local_best is the
    spatial mean of the per-pixel minimum across maps.  One map (or a
    zero global best) scores 0 by definition.
    """
    if not maps:
        raise DataError("diversity: empty sample list")
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in maps])
    if stack.ndim != 3:
        raise ShapeMismatchError("diversity: maps must share one 2-D shape")
    if len(maps) < 2:
        return 0.0
    global_best = float(stack.mean(axis=(1, 2)).min())
    local_best = float(stack.min(axis=0).mean())
    if global_best <= 0.0:
        return 0.0
    return 100.0 * (global_best - local_best) / global_best


def diversity_score(samples: list[np.ndarray], ref: np.ndarray) -> float:
    """Diversity of a sample set against the reference image."""
    if not samples:
        raise DataError("diversity_score: empty sample list")
    return diversity_from_maps(
        [proxy_perceptual(s, ref).values for s in samples])


# -- evaluation harness -------------------------------------------------------

@dataclass(frozen=True)
class ImageResult:
    name: str
    proxy_perceptual: float  # mean over samples of the distance to HR
    lr_psnr: float           # mean over samples
    diversity: float
    n_samples: int


@dataclass(frozen=True)
class EvalReport:
    rows: list[ImageResult]
    proxy_perceptual: float
    lr_psnr: float
    diversity: float
    n_samples: int


def evaluate(model: SparseSRModel, images: list[tuple[str, np.ndarray]],
             n_samples: int, seed: int, cem_iters: int | None = None,
             map_dir: str | Path | None = None) -> EvalReport:
    """Sample the model on every (name, HR) pair and aggregate metrics.

    Each image gets its own derived sampling seed so results do not
    depend on evaluation order.  Aggregates are plain means of the
    per-image rows.  When ``map_dir`` is set, each sample's distance map
    is written there as a 16-bit grayscale heat map.
    """
    from . import imaging, trainer

    if trainer.degrade is not imaging.degrade:  # canonical-operator invariant
        raise ConfigError(
            "training and evaluation degradation operators have diverged")
    if not images:
        raise DataError("evaluate: empty dataset")
    if n_samples < 1:
        raise ConfigError(f"evaluate: n_samples must be >= 1, got {n_samples}")

    scale = model.config.scale
    rows = []
    for idx, (name, hr) in enumerate(images):
        y = degrade(hr, scale)
        out = super_resolve(model, y, count=n_samples,
                            seed=derive_seed(seed, "eval-image", idx),
                            cem_iters=cem_iters)
        maps = [proxy_perceptual(np.clip(s, 0.0, 1.0), hr) for s in out.samples]
        if map_dir is not None:
            _dump_maps(Path(map_dir), name, maps)
        rows.append(ImageResult(
            name=name,
            proxy_perceptual=float(np.mean([m.scalar for m in maps])),
            lr_psnr=float(np.mean([lr_psnr(s, y, scale) for s in out.samples])),
            diversity=diversity_from_maps([m.values for m in maps]),
            n_samples=n_samples,
        ))
    return EvalReport(
        rows=rows,
        proxy_perceptual=float(np.mean([r.proxy_perceptual for r in rows])),
        lr_psnr=float(np.mean([r.lr_psnr for r in rows])),
        diversity=float(np.mean([r.diversity for r in rows])),
        n_samples=n_samples,
    )


def _dump_maps(directory: Path, name: str, maps: list[DistanceMap]) -> None:
    import cv2

    directory.mkdir(parents=True, exist_ok=True)
    peak = max(m.values.max() for m in maps)
    scale = 65535.0 / peak if peak > 0 else 0.0
    for k, m in enumerate(maps):
        gray = (m.values * scale).astype(np.uint16)
        cv2.imwrite(str(directory / f"{name}_map_{k:03d}.png"), gray)


def format_report(report: EvalReport) -> str:
    """Deterministic text rendering: one row per image, aggregate last."""
    lines = [
        f"images={len(report.rows)} samples={report.n_samples}",
        "name proxy_perceptual lr_psnr diversity n",
    ]
    for r in report.rows:
        lines.append(f"{r.name} {r.proxy_perceptual:.10g} {r.lr_psnr:.10g} "
                     f"{r.diversity:.10g} {r.n_samples}")
    lines.append(f"aggregate {report.proxy_perceptual:.10g} "
                 f"{report.lr_psnr:.10g} {report.diversity:.10g} "
                 f"{report.n_samples}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8")
