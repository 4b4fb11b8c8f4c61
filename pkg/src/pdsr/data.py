"""Image I/O, bicubic degradation, patch sampling, and dataset manifests."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .exceptions import ContractError, DimensionError, FormatError

__all__ = [
    "Sample",
    "DatasetManifest",
    "load_png",
    "save_png",
    "bicubic_resize",
    "save_manifest",
    "load_manifest",
    "load_samples",
    "extract_patch_pairs",
    "prepare_dataset",
    "split_manifest",
    "generate_synthetic_corpus",
]

_LOG = logging.getLogger("pdsr.data")

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass
class Sample:
    """One training example: an LR input and its HR reference."""

    sample_id: str
    lr: np.ndarray
    hr: np.ndarray


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered (sample-id, hr-path, lr-path) rows plus pairing metadata."""

    entries: tuple
    scale: int
    patch_size_lr: int
    split: str

    def __post_init__(self):
        ids = [sid for sid, _, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise FormatError("manifest sample ids are not unique")
        try:
            numeric = sorted(int(sid) for sid in ids)
        except ValueError as exc:
            raise FormatError(f"manifest sample ids must be numeric: {exc}") from exc
        if numeric != list(range(len(ids))):
            raise FormatError(f"manifest sample ids must be dense from 0, got {numeric}")


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------


def _check_png_header(path):
    with open(path, "rb") as fh:
        head = fh.read(26)
    if len(head) < 26 or head[:8] != _PNG_SIGNATURE:
        raise FormatError(f"{path} is not a PNG file")
    bit_depth = head[24]
    color_type = head[25]
    if bit_depth != 8 or color_type != 2:
        raise FormatError(
            f"{path} must be an 8-bit RGB PNG "
            f"(found bit depth {bit_depth}, color type {color_type})"
        )


def load_png(path):
    """Read an 8-bit RGB PNG as a float64 [3,H,W] array with values in [0,1]."""
    _check_png_header(path)
    with Image.open(path) as img:
        if img.format != "PNG" or img.mode != "RGB":
            raise FormatError(f"{path} must be an 8-bit RGB PNG (mode {img.mode})")
        arr = np.asarray(img, dtype=np.uint8)
    return arr.astype(np.float64).transpose(2, 0, 1) / 255.0


def save_png(path, image):
    """Write a [3,H,W] float image: clamp to [0,1], round half away from zero."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"save_png expects [3,H,W], got {img.shape}")
    clamped = np.clip(img, 0.0, 1.0)
    # Values are non-negative after the clamp, so half-away-from-zero
    # rounding is floor(x + 0.5).
    bytes_ = np.floor(clamped * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(bytes_.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------


def _cubic_kernel(t):
    """Cubic convolution kernel with a = -0.5 (vectorized)."""
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    tn = t[near]
    tf = t[far]
    out[near] = 1.5 * tn**3 - 2.5 * tn**2 + 1.0
    out[far] = -0.5 * tf**3 + 2.5 * tf**2 - 4.0 * tf + 2.0
    return out


def _reflect_index(idx, n):
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _resize_matrix(n_in, n_out):
    """Row-normalized resampling weights mapping length n_in to n_out."""
    scale_inv = n_in / n_out
    support_scale = max(1.0, scale_inv)  # antialias widening on downscale
    radius = 2.0 * support_scale
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale_inv - 0.5
    lo = np.ceil(src - radius).astype(np.int64)
    # A fixed per-row tap count (padded with zero-weight taps) keeps this
    # fully vectorized; out-of-support taps contribute exactly 0.
    taps = lo[:, None] + np.arange(int(math.ceil(2 * radius)) + 2)[None, :]
    weights = _cubic_kernel((taps - src[:, None]) / support_scale)
    weights /= weights.sum(axis=1, keepdims=True)
    cols = _reflect_index(taps, n_in)
    matrix = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps.shape[1])
    np.add.at(matrix, (rows, cols.ravel()), weights.ravel())
    return matrix


def bicubic_resize(image, out_h, out_w):
    """Separable cubic resampling (a = -0.5, antialiased, reflect boundary)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"bicubic_resize expects [C,H,W], got {img.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ContractError(f"output dims must be >= 1, got {out_h}x{out_w}")
    c, h, w = img.shape
    w_rows = _resize_matrix(h, out_h)
    w_cols = _resize_matrix(w, out_w)
    out = np.empty((c, out_h, out_w))
    for ch in range(c):
        out[ch] = w_rows @ img[ch] @ w_cols.T
    return out


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def save_manifest(manifest, path):
    """Write rows as `sample_id<TAB>hr_path<TAB>lr_path` (UTF-8, LF)."""
    rows = sorted(manifest.entries, key=lambda e: int(e[0]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, hr_path, lr_path in rows:
            fh.write(f"{sid}\t{hr_path}\t{lr_path}\n")


def load_manifest(path, scale, patch_size_lr=16, split="train"):
    """Read a manifest; paths are resolved relative to the manifest file."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{line_no}: expected 3 tab-separated fields")
            sid, hr_rel, lr_rel = parts
            hr_path = os.path.join(base, hr_rel)
            lr_path = os.path.join(base, lr_rel)
            for p in (hr_path, lr_path):
                if not os.path.exists(p):
                    raise FormatError(f"{path}:{line_no}: referenced file missing: {p}")
            entries.append((sid, hr_rel, lr_rel))
    return DatasetManifest(
        entries=tuple(entries), scale=int(scale),
        patch_size_lr=int(patch_size_lr), split=split,
    )


def load_samples(manifest, base_dir):
    """Load every manifest row as a Sample (paths relative to base_dir)."""
    samples = []
    for sid, hr_rel, lr_rel in manifest.entries:
        hr = load_png(os.path.join(base_dir, hr_rel))
        lr = load_png(os.path.join(base_dir, lr_rel))
        samples.append(Sample(sample_id=sid, lr=lr, hr=hr))
    return samples


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------


def extract_patch_pairs(samples, patch_size_lr, count, seed):
    """Uniformly sample aligned LR/HR patch pairs from loaded samples.

    Images whose LR side is smaller than the patch size are skipped (their
    number is logged as a warning). The HR patch covers exactly the
    scale-magnified footprint of the LR patch.
    """
    patch = int(patch_size_lr)
    count = int(count)
    if patch < 1:
        raise ContractError(f"patch size must be >= 1, got {patch}")
    if count < 0:
        raise ContractError(f"count must be >= 0, got {count}")
    eligible = []
    skipped = 0
    for s in samples:
        _, lh, lw = np.asarray(s.lr).shape
        _, hh, hw = np.asarray(s.hr).shape
        if lh < patch or lw < patch:
            skipped += 1
            continue
        if hh % lh or hw % lw or hh // lh != hw // lw:
            raise ContractError(
                f"sample {s.sample_id!r}: HR shape {(hh, hw)} is not an integer "
                f"multiple of LR shape {(lh, lw)}"
            )
        eligible.append(s)
    if skipped:
        _LOG.warning("%d of %d images smaller than patch size %d were skipped",
                     skipped, len(list(samples)), patch)
    if count == 0:
        return []
    if not eligible:
        raise ContractError("no image is large enough for the requested patch size")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        s = eligible[int(rng.integers(len(eligible)))]
        _, lh, lw = s.lr.shape
        scale = s.hr.shape[1] // lh
        y0 = int(rng.integers(lh - patch + 1))
        x0 = int(rng.integers(lw - patch + 1))
        lr_patch = s.lr[:, y0 : y0 + patch, x0 : x0 + patch].copy()
        hr_patch = s.hr[
            :, scale * y0 : scale * (y0 + patch), scale * x0 : scale * (x0 + patch)
        ].copy()
        pairs.append((lr_patch, hr_patch))
    return pairs


# ---------------------------------------------------------------------------
# dataset preparation
# ---------------------------------------------------------------------------


def prepare_dataset(hr_dir, out_dir, scale, *, patch_size_lr=16, split="train"):
    """Crop HR images, synthesize LR counterparts, and write a manifest.

    Every PNG in ``hr_dir`` (sorted by name) is cropped top-left to a
    multiple of scale*4 (two-level subband divisibility after downscaling),
    saved under ``out_dir/hr``, degraded by bicubic 1/scale into
    ``out_dir/lr``, and listed in ``out_dir/manifest.tsv``. Re-running
    produces byte-identical outputs.
    """
    scale = int(scale)
    if scale < 1:
        raise ContractError(f"scale must be >= 1, got {scale}")
    names = sorted(n for n in os.listdir(hr_dir) if n.lower().endswith(".png"))
    if not names:
        raise ContractError(f"no PNG files found in {hr_dir}")
    os.makedirs(os.path.join(out_dir, "hr"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "lr"), exist_ok=True)
    multiple = scale * 4
    entries = []
    for idx, name in enumerate(names):
        img = load_png(os.path.join(hr_dir, name))
        _, h, w = img.shape
        ch, cw = h - h % multiple, w - w % multiple
        if ch == 0 or cw == 0:
            raise ContractError(
                f"{name}: {h}x{w} is smaller than the required multiple {multiple}"
            )
        cropped = img[:, :ch, :cw]
        sid = f"{idx:04d}"
        hr_rel = os.path.join("hr", f"{sid}.png")
        lr_rel = os.path.join("lr", f"{sid}.png")
        save_png(os.path.join(out_dir, hr_rel), cropped)
        lr = bicubic_resize(cropped, ch // scale, cw // scale)
        save_png(os.path.join(out_dir, lr_rel), lr)
        entries.append((sid, hr_rel, lr_rel))
    manifest = DatasetManifest(
        entries=tuple(entries), scale=scale, patch_size_lr=patch_size_lr, split=split
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.tsv"))
    return manifest


def split_manifest(manifest, val_count):
    """Deterministic tail split: last ``val_count`` rows become validation."""
    val_count = int(val_count)
    n = len(manifest.entries)
    if not 0 <= val_count < n:
        raise ContractError(f"val_count must be in [0, {n - 1}], got {val_count}")
    rows = sorted(manifest.entries, key=lambda e: int(e[0]))
    train_rows = rows[: n - val_count]
    val_rows = [(str(i).zfill(4), hr, lr) for i, (_, hr, lr) in enumerate(rows[n - val_count :])]
    train = DatasetManifest(
        entries=tuple(train_rows), scale=manifest.scale,
        patch_size_lr=manifest.patch_size_lr, split="train",
    )
    val = DatasetManifest(
        entries=tuple(val_rows), scale=manifest.scale,
        patch_size_lr=manifest.patch_size_lr, split="val",
    )
    return train, val


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def generate_synthetic_corpus(out_dir, count, size, seed):
    """Write ``count`` deterministic synthetic texture PNGs of ``size``².

    Each image layers hard-edged rectangles over gentle sinusoidal shading,
    giving the corpus smooth regions plus genuine high-frequency edges that
    plain interpolation cannot reconstruct. Image i depends only on
    (seed, i), never on count.
    """
    count = int(count)
    size = int(size)
    if count < 1 or size < 8:
        raise ContractError(f"need count >= 1 and size >= 8, got {count}, {size}")
    os.makedirs(out_dir, exist_ok=True)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    paths = []
    for i in range(count):
        rng = np.random.default_rng([int(seed), i])
        img = np.full((3, size, size), 0.5)
        # Gentle sinusoidal shading with per-channel phase offsets.
        for _ in range(2):
            freq = rng.uniform(0.5, size / 12.0)
            theta = rng.uniform(0.0, math.pi)
            amp = rng.uniform(0.03, 0.1)
            phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
            carrier = 2.0 * math.pi * freq * (
                np.cos(theta) * yy + np.sin(theta) * xx
            ) / size
            for c in range(3):
                img[c] += amp * np.sin(carrier + phase[c])
        # Hard-edged rectangles. The channel deltas share a common base so
        # the edges survive in the luma channel instead of cancelling out.
        for _ in range(10):
            y0, x0 = rng.integers(0, size - 4, size=2)
            hgt = int(rng.integers(4, max(5, size // 3)))
            wid = int(rng.integers(4, max(5, size // 3)))
            delta = rng.uniform(-0.4, 0.4) + rng.uniform(-0.08, 0.08, size=3)
            img[:, y0 : y0 + hgt, x0 : x0 + wid] += delta[:, None, None]
        np.clip(img, 0.0, 1.0, out=img)
        path = os.path.join(out_dir, f"{i:04d}.png")
        save_png(path, img)
        paths.append(path)
    return paths
