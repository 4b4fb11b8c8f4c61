"""Orthonormal Haar wavelet transforms and low-pass operators.

The 2-D Haar step maps each non-overlapping 2x2 block [[a,b],[c,d]] to

    LL = (a+b+c+d)/2   HL = (a-b+c-d)/2
    LH = (a+b-c-d)/2   HH = (a-b-c+d)/2

The mixing matrix is symmetric and orthogonal, so the transform preserves
energy exactly, the inverse reuses the same formula, and the gradient of
either direction is the other direction applied to the gradients. Every
operator here is differentiable through the engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_node
from .exceptions import ContractError, DimensionError

__all__ = [
    "SubbandSet",
    "dwt2_haar",
    "idwt2_haar",
    "t_lf",
    "ll_multilevel",
    "gaussian_lowpass",
    "gaussian_kernel2d",
]


@dataclass
class SubbandSet:
    """Four half-resolution subbands of one Haar level."""

    ll: Tensor
    hl: Tensor
    lh: Tensor
    hh: Tensor

    def __post_init__(self):
        shape = self.ll.data.shape
        for name in ("hl", "lh", "hh"):
            band = getattr(self, name)
            if band.data.shape != shape:
                raise DimensionError(
                    f"subband {name} shape {band.data.shape} != ll shape {shape}"
                )

    def bands(self):
        return (self.ll, self.hl, self.lh, self.hh)

    def energy(self):
        return float(sum((band.data**2).sum() for band in self.bands()))


def _check_even_spatial(x, op):
    if x.data.ndim != 4:
        raise DimensionError(f"{op} expects [N,C,H,W], got {x.data.shape}")
    h, w = x.data.shape[2:]
    if h % 2 or w % 2:
        raise DimensionError(f"{op} requires even spatial dims, got {h}x{w}")


def _block_views(arr):
    a = arr[:, :, 0::2, 0::2]
    b = arr[:, :, 0::2, 1::2]
    c = arr[:, :, 1::2, 0::2]
    d = arr[:, :, 1::2, 1::2]
    return a, b, c, d


# Sign patterns of the four analysis rows over (a, b, c, d).
_BAND_SIGNS = {
    "ll": (1.0, 1.0, 1.0, 1.0),
    "hl": (1.0, -1.0, 1.0, -1.0),
    "lh": (1.0, 1.0, -1.0, -1.0),
    "hh": (1.0, -1.0, -1.0, 1.0),
}


def _band_node(x, signs):
    a, b, c, d = _block_views(x.data)
    sa, sb, sc, sd = signs
    out_data = (sa * a + sb * b + sc * c + sd * d) * 0.5

    def rule(g):
        buf = np.zeros_like(x.data)
        ga, gb, gc, gd = _block_views(buf)
        ga += sa * 0.5 * g
        gb += sb * 0.5 * g
        gc += sc * 0.5 * g
        gd += sd * 0.5 * g
        x.accumulate_grad(buf)

    return make_node(np.ascontiguousarray(out_data), (x,), rule)


def dwt2_haar(image):
    """One analysis level: [N,C,H,W] -> four [N,C,H/2,W/2] subbands."""
    _check_even_spatial(image, "dwt2_haar")
    return SubbandSet(
        ll=_band_node(image, _BAND_SIGNS["ll"]),
        hl=_band_node(image, _BAND_SIGNS["hl"]),
        lh=_band_node(image, _BAND_SIGNS["lh"]),
        hh=_band_node(image, _BAND_SIGNS["hh"]),
    )


def idwt2_haar(bands):
    """One synthesis level: exact inverse of :func:`dwt2_haar`."""
    if not isinstance(bands, SubbandSet):
        bands = SubbandSet(*bands)
    ll, hl, lh, hh = bands.bands()
    n, c, hh_, ww_ = ll.data.shape
    out_data = np.empty((n, c, hh_ * 2, ww_ * 2), dtype=np.float64)
    a, b, cc, d = _block_views(out_data)
    a[...] = (ll.data + hl.data + lh.data + hh.data) * 0.5
    b[...] = (ll.data - hl.data + lh.data - hh.data) * 0.5
    cc[...] = (ll.data + hl.data - lh.data - hh.data) * 0.5
    d[...] = (ll.data - hl.data - lh.data + hh.data) * 0.5

    def rule(g):
        ga, gb, gc, gd = _block_views(g)
        if ll.requires_grad:
            ll.accumulate_grad((ga + gb + gc + gd) * 0.5)
        if hl.requires_grad:
            hl.accumulate_grad((ga - gb + gc - gd) * 0.5)
        if lh.requires_grad:
            lh.accumulate_grad((ga + gb - gc - gd) * 0.5)
        if hh.requires_grad:
            hh.accumulate_grad((ga - gb - gc + gd) * 0.5)

    return make_node(out_data, (ll, hl, lh, hh), rule)


def t_lf(image):
    """Low-frequency map: the LL band of one Haar level.

    Arithmetic is identical to ``dwt2_haar(image).ll`` (bit-for-bit); this
    entry point just skips building the three high-frequency nodes.
    """
    _check_even_spatial(image, "t_lf")
    return _band_node(image, _BAND_SIGNS["ll"])


def ll_multilevel(image, levels):
    """LL band after ``levels`` analysis steps (each halves H and W)."""
    levels = int(levels)
    if levels < 1:
        raise ContractError(f"ll_multilevel requires levels >= 1, got {levels}")
    if image.data.ndim != 4:
        raise DimensionError(f"ll_multilevel expects [N,C,H,W], got {image.data.shape}")
    h, w = image.data.shape[2:]
    factor = 2**levels
    if h % factor or w % factor:
        raise DimensionError(
            f"ll_multilevel: spatial dims {h}x{w} not divisible by 2^{levels}"
        )
    out = image
    for _ in range(levels):
        out = t_lf(out)
    return out


def gaussian_kernel2d(ksize, sigma):
    """Normalized 2-D Gaussian kernel (sums to 1)."""
    ksize = int(ksize)
    sigma = float(sigma)
    if ksize % 2 == 0 or ksize < 1:
        raise ContractError(f"gaussian kernel size must be odd and positive, got {ksize}")
    if sigma <= 0:
        raise ContractError(f"gaussian sigma must be positive, got {sigma}")
    half = ksize // 2
    coords = np.arange(ksize, dtype=np.float64) - half
    g1 = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g1, g1)
    return kernel / kernel.sum()


def gaussian_lowpass(image, ksize, sigma):
    """Depthwise Gaussian blur with reflect padding; keeps spatial size."""
    if image.data.ndim != 4:
        raise DimensionError(f"gaussian_lowpass expects [N,C,H,W], got {image.data.shape}")
    kernel = gaussian_kernel2d(ksize, sigma)
    ksize = int(ksize)
    half = ksize // 2
    n, c, h, w = image.data.shape
    # Depthwise = per-channel: fold channels into the batch for a 1-channel conv.
    flat = ad.reshape(image, (n * c, 1, h, w))
    padded = ad.reflect_pad2d(flat, half)
    weight = make_node(kernel.reshape(1, 1, ksize, ksize), (), None, requires_grad=False)
    blurred = ad.conv2d(padded, weight, stride=1, pad=0)
    return ad.reshape(blurred, (n, c, h, w))
