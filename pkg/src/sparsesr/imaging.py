"""Image I/O, resampling, degradation, and training-pair extraction.

Images are float64 (H, W, 3) arrays in [0, 1] everywhere inside the
package; values are clamped only when written to disk.  There is exactly
one degradation operator, :func:`degrade`, and every consumer (pair
synthesis, consistency projection, LR fidelity metrics) goes through this
module-level function, so the operator used for training and the operator
used for evaluation cannot drift apart.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import DataError, ShapeMismatchError

_CATROM_A = -0.5


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_png(path) -> np.ndarray:
    """Load an 8- or 16-bit gray/RGB/RGBA PNG as float64 (H, W, 3) in [0, 1].

    Grayscale is replicated to three channels; alpha is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"cannot read image: {path} does not exist")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"cannot decode image file {path}")
    if raw.dtype == np.uint8:
        denom = 255.0
    elif raw.dtype == np.uint16:
        denom = 65535.0
    else:
        raise DataError(f"{path}: unsupported sample type {raw.dtype}")
    img = raw.astype(np.float64) / denom
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    elif img.ndim == 3 and img.shape[2] == 4:
        img = img[:, :, 2::-1]  # BGRA -> RGB
    elif img.ndim == 3 and img.shape[2] == 3:
        img = img[:, :, ::-1]  # BGR -> RGB
    else:
        raise DataError(f"{path}: unsupported channel layout {raw.shape}")
    return np.ascontiguousarray(img)


def save_png(img: np.ndarray, path) -> None:
    """Write a float image as 8-bit RGB PNG.

    Values are clamped to [0, 1] and quantized round-half-up; this is the
    single place where clamping happens.
    """
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatchError(f"save_png expects (H, W, 3), got {img.shape}")
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    ok = cv2.imwrite(str(path), q[:, :, ::-1])
    if not ok:
        raise DataError(f"failed to write PNG to {path}")


# ---------------------------------------------------------------------------
# separable resampling as a linear operator
# ---------------------------------------------------------------------------

def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic (a = -0.5)."""
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    a = _CATROM_A
    inner = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    outer = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, inner, np.where(t < 2.0, outer, 0.0))


def _linear_kernel(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    return np.maximum(0.0, 1.0 - t)


@functools.lru_cache(maxsize=256)
def _resample_matrix(n_in: int, n_out: int, kind: str) -> np.ndarray:
    """Dense (n_out, n_in) row-stochastic resampling matrix.

    Output sample j sits at input coordinate (j + 0.5) * n_in / n_out - 0.5.
    When downsampling, the kernel is widened by the scale factor
    (antialiasing); out-of-range taps are clamped to the border, i.e. their
    weight accumulates on the edge sample.  Rows are normalized so constants
    are preserved exactly.
    """
    if n_in < 1 or n_out < 1:
        raise ShapeMismatchError(f"resample sizes must be positive: {n_in} -> {n_out}")
    kernel, radius = {
        "cubic": (_cubic_kernel, 2.0),
        "linear": (_linear_kernel, 1.0),
    }[kind]
    scale = n_in / n_out
    support = max(scale, 1.0)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    for j, center in enumerate(centers):
        lo = int(np.floor(center - radius * support)) + 1
        hi = int(np.floor(center + radius * support))
        taps = np.arange(lo, hi + 1)
        weights = kernel((taps - center) / support)
        clamped = np.clip(taps, 0, n_in - 1)
        row = np.zeros(n_in, dtype=np.float64)
        np.add.at(row, clamped, weights)
        total = row.sum()
        mat[j] = row / total
    return mat


def _resize(img: np.ndarray, out_h: int, out_w: int, kind: str) -> np.ndarray:
    if img.ndim == 2:
        return _resize(img[:, :, None], out_h, out_w, kind)[:, :, 0]
    if img.ndim != 3:
        raise ShapeMismatchError(f"resize expects 2-D or 3-D input, got {img.shape}")
    h, w, _ = img.shape
    wr = _resample_matrix(h, out_h, kind)
    wc = _resample_matrix(w, out_w, kind)
    tmp = np.einsum("oi,iwc->owc", wr, img, optimize=True)
    return np.einsum("pj,ojc->opc", wc, tmp, optimize=True)


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Antialiased Catmull-Rom resampling to (out_h, out_w).

    Separable and purely linear in the pixel values: the output is
    W_rows @ img @ W_cols^T per channel, so resizing commutes with sums
    and scalar multiples exactly.  Same-size resize is the identity up to
    float rounding; downsampling widens the kernel by the scale factor.
    """
    return _resize(img, out_h, out_w, "cubic")


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Antialiased tent-kernel resampling (used by the metric pyramid)."""
    return _resize(img, out_h, out_w, "linear")


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """The one canonical HR -> LR operator: antialiased bicubic decimation.

    Dimensions must be divisible by ``scale``.
    """
    if scale < 1:
        raise ShapeMismatchError(f"degrade: scale must be >= 1, got {scale}")
    h, w = hr.shape[:2]
    if h % scale or w % scale:
        raise ShapeMismatchError(
            f"degrade: image {h}x{w} not divisible by scale {scale}"
        )
    return bicubic_resize(hr, h // scale, w // scale)


# ---------------------------------------------------------------------------
# datasets and training pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    """Where training images live and how pairs are cut from them."""

    directory: Path
    scale: int = 4
    lr_patch: int = 48
    augment: bool = True
    seed: int = 0


@dataclass(frozen=True)
class PatchPair:
    """One aligned LR/HR training crop; offset is in LR pixel units."""

    lr: np.ndarray
    hr: np.ndarray
    source_id: str
    offset: tuple[int, int]


def load_dataset(directory, scale: int) -> list[tuple[str, np.ndarray]]:
    """Load every PNG under ``directory``, sorted by name, sized for ``scale``.

    Images whose dimensions are not divisible by ``scale`` are center-cropped
    to the nearest multiple; anything unreadable raises.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DataError(f"no PNG files found in {directory}")
    out = []
    for p in paths:
        img = load_png(p)
        h, w = img.shape[:2]
        ch, cw = (h // scale) * scale, (w // scale) * scale
        if ch == 0 or cw == 0:
            raise DataError(f"{p}: image {h}x{w} smaller than scale {scale}")
        if (ch, cw) != (h, w):
            top, left = (h - ch) // 2, (w - cw) // 2
            img = img[top:top + ch, left:left + cw]
        out.append((p.name, img))
    return out


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """Apply one of the 8 square symmetries: rot90^(k%4), mirrored if k >= 4."""
    if not 0 <= k < 8:
        raise ShapeMismatchError(f"dihedral index must be in [0, 8), got {k}")
    out = np.fliplr(img) if k >= 4 else img
    return np.ascontiguousarray(np.rot90(out, k % 4))


def augment_pair(pair: PatchPair, rng: np.random.Generator) -> PatchPair:
    """Apply the same uniformly drawn dihedral transform to both crops."""
    k = int(rng.integers(8))
    return PatchPair(
        lr=dihedral(pair.lr, k),
        hr=dihedral(pair.hr, k),
        source_id=pair.source_id,
        offset=pair.offset,
    )


def random_pair(images: list[tuple[str, np.ndarray]], scale: int, lr_patch: int,
                rng: np.random.Generator, augment: bool = True) -> PatchPair | None:
    """Draw one aligned LR/HR crop from a random image.

    The crop is chosen on the LR grid so the HR window is exactly
    ``scale`` times larger and starts on a degradation-aligned boundary.
    Returns None when the drawn image is too small (caller may skip).
    """
    idx = int(rng.integers(len(images)))
    name, hr = images[idx]
    lr = degrade(hr, scale)
    lh, lw = lr.shape[:2]
    if lh < lr_patch or lw < lr_patch:
        warnings.warn(f"skipping {name}: LR {lh}x{lw} smaller than patch {lr_patch}")
        return None
    top = int(rng.integers(lh - lr_patch + 1))
    left = int(rng.integers(lw - lr_patch + 1))
    pair = PatchPair(
        lr=np.ascontiguousarray(lr[top:top + lr_patch, left:left + lr_patch]),
        hr=np.ascontiguousarray(
            hr[top * scale:(top + lr_patch) * scale,
               left * scale:(left + lr_patch) * scale]),
        source_id=name,
        offset=(top, left),
    )
    return augment_pair(pair, rng) if augment else pair


def crop_pairs(spec: DatasetSpec, count: int) -> list[PatchPair]:
    """Materialize ``count`` seeded training pairs from a dataset spec.

    Pair i is drawn from its own counter-derived stream, so the result is
    independent of iteration order and safe to shard across workers.
    """
    from .rng import derive

    images = load_dataset(spec.directory, spec.scale)
    pairs = []
    attempts = 0
    while len(pairs) < count:
        stream = derive(spec.seed, "crop-pair", attempts)
        attempts += 1
        if attempts > 100 * count:
            raise DataError("crop_pairs: dataset images too small for requested patch size")
        pair = random_pair(images, spec.scale, spec.lr_patch, stream, spec.augment)
        if pair is not None:
            pairs.append(pair)
    return pairs
