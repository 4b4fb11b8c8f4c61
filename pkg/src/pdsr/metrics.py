"""Evaluation metrics and the interpolation trade-off curve.

All functions here operate on plain float64 numpy images ([3,H,W] or
[1,H,W], values nominally in [0,1]) and return Python floats; nothing in
this module participates in gradient graphs.

The perceptual proxy is a documented stand-in for learned perceptual
scores: it compares per-channel standard deviations of the three
high-frequency wavelet subbands, so a value of 1 means the high-frequency
statistics match the reference and lower values mean suppressed or
distorted texture. It is not a learned metric and is never presented as
one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DimensionError

__all__ = [
    "rgb_to_y",
    "psnr",
    "psnr_y",
    "ssim",
    "lf_mae",
    "perceptual_proxy",
    "interpolate_outputs",
    "crop_border",
    "mean_float",
    "score_sr_pair",
    "TradeoffPoint",
    "build_tradeoff_curve",
    "curve_csv_text",
]


def _as_image(arr, name, channels=None):
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3:
        raise DimensionError(f"{name} must be [C,H,W], got shape {a.shape}")
    if channels is not None and a.shape[0] != channels:
        raise DimensionError(f"{name} must have {channels} channels, got {a.shape[0]}")
    return a


def rgb_to_y(image):
    """BT.601 studio-swing luma: [3,H,W] in [0,1] -> [1,H,W] (clamps first)."""
    img = np.clip(_as_image(image, "image", channels=3), 0.0, 1.0)
    y = (16.0 + 65.481 * img[0] + 128.553 * img[1] + 24.966 * img[2]) / 255.0
    return y[None]


def psnr(a, b, peak=1.0):
    """10*log10(peak^2 / MSE); +inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    peak = float(peak)
    if peak <= 0:
        raise ContractError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_y(sr, gt):
    """PSNR between luma channels of two RGB images (both clamped)."""
    return psnr(rgb_to_y(sr), rgb_to_y(gt), peak=1.0)


def _gaussian_window(size=11, sigma=1.5):
    half = size // 2
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _window_means(x, kernel):
    kh, kw = kernel.shape
    h, w = x.shape
    sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(h - kh + 1, w - kw + 1, kh, kw), strides=(sh, sw, sh, sw), writeable=False
    )
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(a, b):
    """Single-scale structural similarity on one-channel images.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0,
    averaged over valid (unpadded) window positions.
    """
    a = _as_image(a, "a", channels=1)[0]
    b = _as_image(b, "b", channels=1)[0]
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise DimensionError(f"ssim needs H,W >= 11, got {a.shape}")
    kernel = _gaussian_window()
    c1 = 0.01**2
    c2 = 0.03**2
    mu_a = _window_means(a, kernel)
    mu_b = _window_means(b, kernel)
    sigma_a = _window_means(a * a, kernel) - mu_a * mu_a
    sigma_b = _window_means(b * b, kernel) - mu_b * mu_b
    sigma_ab = _window_means(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * sigma_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (sigma_a + sigma_b + c2)
    return float(np.mean(num / den))


def _ll_band(img):
    # Same block arithmetic as the differentiable low-frequency extractor.
    a = img[:, 0::2, 0::2]
    b = img[:, 0::2, 1::2]
    c = img[:, 1::2, 0::2]
    d = img[:, 1::2, 1::2]
    return (a + b + c + d) * 0.5


def _hf_bands(img):
    a = img[:, 0::2, 0::2]
    b = img[:, 0::2, 1::2]
    c = img[:, 1::2, 0::2]
    d = img[:, 1::2, 1::2]
    hl = (a - b + c - d) * 0.5
    lh = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return hl, lh, hh


def ssim_y(sr, gt):
    """Structural similarity between luma channels of two RGB images."""
    return ssim(rgb_to_y(sr), rgb_to_y(gt))


def ll_band(image):
    """Half-resolution low-frequency subband of a [C,H,W] image."""
    img = _as_image(image, "image")
    if img.shape[1] % 2 or img.shape[2] % 2:
        raise DimensionError(f"ll_band requires even spatial dims, got {img.shape[1:]}")
    return _ll_band(img)


def _check_even_pair(y, y_prime, op):
    y = np.asarray(y, dtype=np.float64)
    y_prime = np.asarray(y_prime, dtype=np.float64)
    if y.shape != y_prime.shape:
        raise DimensionError(f"{op}: shapes {y.shape} and {y_prime.shape} differ")
    if y.ndim != 3:
        raise DimensionError(f"{op} expects [C,H,W], got {y.shape}")
    if y.shape[1] % 2 or y.shape[2] % 2:
        raise DimensionError(f"{op} requires even spatial dims, got {y.shape[1:]}")
    return y, y_prime


def lf_mae(y, y_prime):
    """Mean absolute difference of the low-frequency (LL) bands."""
    y, y_prime = _check_even_pair(y, y_prime, "lf_mae")
    return float(np.mean(np.abs(_ll_band(y) - _ll_band(y_prime))))


def perceptual_proxy(y, y_hat):
    """Similarity of high-frequency statistics, in [0, 1], 1 = matched.

    Computes the standard deviation of each high-frequency subband (HL, LH,
    HH) per channel for both images and returns 1 minus the L1 distance
    between the two profiles normalized by the total profile mass. Two
    images with no high-frequency content at all compare as matched.
    """
    y, y_hat = _check_even_pair(y, y_hat, "perceptual_proxy")
    prof_y = np.array([band.std(axis=(1, 2)) for band in _hf_bands(y)]).ravel()
    prof_g = np.array([band.std(axis=(1, 2)) for band in _hf_bands(y_hat)]).ravel()
    dist = np.abs(prof_y - prof_g).sum() / (prof_y.sum() + prof_g.sum() + 1e-12)
    return float(1.0 - dist)


def interpolate_outputs(y_o, y_p, alpha):
    """Convex combination alpha*y_o + (1-alpha)*y_p; endpoints are exact copies."""
    y_o = np.asarray(y_o, dtype=np.float64)
    y_p = np.asarray(y_p, dtype=np.float64)
    if y_o.shape != y_p.shape:
        raise DimensionError(f"interpolate_outputs: shapes {y_o.shape} and {y_p.shape} differ")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0,1], got {alpha}")
    if alpha == 1.0:
        return y_o.copy()
    if alpha == 0.0:
        return y_p.copy()
    return alpha * y_o + (1.0 - alpha) * y_p


def crop_border(image, border):
    """Trim `border` pixels from every spatial edge of a [C,H,W] image."""
    border = int(border)
    if border < 0:
        raise ContractError(f"crop border must be >= 0, got {border}")
    if border == 0:
        return image
    img = _as_image(image, "image")
    if 2 * border >= img.shape[1] or 2 * border >= img.shape[2]:
        raise DimensionError(f"crop border {border} too large for image {img.shape[1:]}")
    return img[:, border:-border, border:-border]


def mean_float(values):
    """Fixed-order mean of a sequence of floats (deterministic reduction)."""
    values = list(values)
    if not values:
        raise ContractError("mean of an empty sequence")
    total = 0.0
    for v in values:
        total += float(v)
    return total / len(values)


@dataclass(frozen=True)
class TradeoffPoint:
    """One point on the objective/perceptual plane."""

    label: str
    alpha: float
    psnr_db: float
    perceptual_proxy: float


def build_tradeoff_curve(y_o_set, y_p_set, gt_set, alphas, label="curve"):
    """Score convex combinations of two models' outputs against ground truth.

    For each alpha, every image pair is interpolated, scored (luma PSNR and
    the high-frequency proxy against ground truth), and the per-image
    scores are averaged in a fixed order. alphas must be sorted ascending.
    """
    y_o_set, y_p_set, gt_set = list(y_o_set), list(y_p_set), list(gt_set)
    if not (len(y_o_set) == len(y_p_set) == len(gt_set)) or not y_o_set:
        raise ContractError(
            f"image sets must align and be non-empty, got sizes "
            f"{len(y_o_set)}/{len(y_p_set)}/{len(gt_set)}"
        )
    alphas = [float(a) for a in alphas]
    if alphas != sorted(alphas):
        raise ContractError(f"alphas must be sorted ascending, got {alphas}")
    points = []
    for alpha in alphas:
        psnrs = []
        proxies = []
        for y_o, y_p, gt in zip(y_o_set, y_p_set, gt_set):
            mixed = interpolate_outputs(y_o, y_p, alpha)
            p, x = score_sr_pair(mixed, gt)
            psnrs.append(p)
            proxies.append(x)
        points.append(
            TradeoffPoint(
                label=label,
                alpha=alpha,
                psnr_db=mean_float(psnrs),
                perceptual_proxy=mean_float(proxies),
            )
        )
    return points


def score_sr_pair(sr, gt):
    """(luma PSNR, high-frequency proxy) for one output/reference pair."""
    sr = np.asarray(sr, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return (
        psnr_y(sr, gt),
        perceptual_proxy(np.clip(sr, 0.0, 1.0), np.clip(gt, 0.0, 1.0)),
    )


def curve_csv_text(points, header_lines=()):
    """Serialize trade-off points as CSV (LF line endings, repr floats)."""
    lines = [f"# {line}" for line in header_lines]
    lines.append("label,alpha,psnr_db,perceptual_proxy")
    for p in points:
        lines.append(f"{p.label},{p.alpha!r},{p.psnr_db!r},{p.perceptual_proxy!r}")
    return "\n".join(lines) + "\n"
