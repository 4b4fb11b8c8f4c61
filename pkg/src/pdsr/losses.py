"""Training objectives for the two-stage pipeline.

Fidelity is plain mean-absolute error. The perceptual composite adds a
set-matching patch loss, a low-frequency L1 on multi-level LL bands, and a
generator adversarial term. The alternating trainer couples the two stages
with a scaled quadratic penalty; the baseline trainer instead adds an L1
low-frequency regularizer directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, DimensionError
from .wavelet import ll_multilevel, t_lf

__all__ = [
    "LossWeights",
    "CxConfig",
    "PerceptualTerms",
    "BaselineTerms",
    "l1_loss",
    "loss_objective",
    "contextual_loss",
    "adversarial_gen_loss",
    "adversarial_disc_loss",
    "loss_perceptual",
    "admm_penalty",
    "regularized_total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for every objective term."""

    lambda_cx: float = 0.1
    lambda_d: float = 1.0
    lambda_gen: float = 0.005
    lambda_o: float = 1.0
    lambda_p: float = 1.0
    lambda_r: float = 0.0

    def __post_init__(self):
        for name in ("lambda_cx", "lambda_d", "lambda_gen", "lambda_o", "lambda_p", "lambda_r"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class CxConfig:
    """Patch set-matching loss settings.

    Patch features are a fixed-seed random linear projection of
    patch_size x patch_size x 3 pixel windows down to feature_dim values;
    patch_stride thins the window grid (1 = dense).

    The epsilon default is deliberately large: projected features of small
    synthetic patches often contain near-duplicates, and the relative
    distance d/(d_min + eps) amplifies gradients by up to 1/eps when the
    best match is nearly exact.
    """

    bandwidth_h: float = 0.5
    epsilon: float = 1e-2
    feature_dim: int = 64
    patch_size: int = 5
    feature_seed: int = 0
    patch_stride: int = 1

    def __post_init__(self):
        if self.bandwidth_h <= 0:
            raise ContractError(f"bandwidth_h must be > 0, got {self.bandwidth_h}")
        if self.epsilon <= 0:
            raise ContractError(f"epsilon must be > 0, got {self.epsilon}")
        if self.patch_size < 1 or self.feature_dim < 1 or self.patch_stride < 1:
            raise ContractError("patch_size, feature_dim and patch_stride must be >= 1")


def l1_loss(a, b):
    """Mean absolute elementwise difference (sign subgradient, 0 at ties)."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"l1_loss: shapes {a.data.shape} and {b.data.shape} differ")
    return ad.mean(ad.abs_(ad.sub(a, b)))


def loss_objective(y_prime, y_hat):
    """Fidelity objective of the first stage: L1 against the reference."""
    return l1_loss(y_prime, y_hat)


def projection_weight(cfg):
    """Fixed-seed random patch-to-feature projection, as a conv weight."""
    rng = np.random.default_rng(cfg.feature_seed)
    fan_in = 3 * cfg.patch_size * cfg.patch_size
    w = rng.standard_normal((cfg.feature_dim, 3, cfg.patch_size, cfg.patch_size))
    return ad.constant(w / np.sqrt(fan_in))


def _patch_features(image, weight, cfg):
    """Dense patch features for one [1,3,H,W] image -> [P, F] rows."""
    feat = ad.conv2d(image, weight, stride=cfg.patch_stride, pad=0)
    _, f, ho, wo = feat.data.shape
    return ad.transpose2d(ad.reshape(feat, (f, ho * wo)))


def _contextual_loss_single(y_img, y_hat_img, weight, cfg):
    fy = _patch_features(y_img, weight, cfg)
    fg = _patch_features(y_hat_img, weight, cfg)
    p = fy.data.shape[0]
    if p < 2:
        raise DimensionError(
            f"contextual loss needs >= 2 patches, got {p} "
            f"(image {y_img.data.shape[2:]} with patch {cfg.patch_size}, stride {cfg.patch_stride})"
        )
    # Center both feature sets on the target mean.
    mu = ad.scale(ad.sum_axis(fg, axis=0, keepdims=True), 1.0 / p)
    mu_rep = ad.repeat_axis(mu, axis=0, reps=p)
    fy = ad.sub(fy, mu_rep)
    fg = ad.sub(fg, mu_rep)
    # Cosine distance matrix: rows = source patches, cols = target patches.
    dots = ad.matmul(fy, ad.transpose2d(fg))
    ny = ad.sqrt(ad.sum_axis(ad.mul(fy, fy), axis=1, keepdims=True))
    ng = ad.sqrt(ad.sum_axis(ad.mul(fg, fg), axis=1, keepdims=True))
    norm_prod = ad.add_scalar(ad.matmul(ny, ad.transpose2d(ng)), cfg.epsilon)
    dist = ad.add_scalar(ad.neg(ad.div(dots, norm_prod)), 1.0)
    # Relative distances, affinities, row-normalized matches.
    dmin = ad.add_scalar(ad.min_axis(dist, axis=1, keepdims=True), cfg.epsilon)
    rel = ad.div(dist, ad.repeat_axis(dmin, axis=1, reps=p))
    aff = ad.exp(ad.scale(ad.add_scalar(ad.neg(rel), 1.0), 1.0 / cfg.bandwidth_h))
    row_sum = ad.repeat_axis(ad.sum_axis(aff, axis=1, keepdims=True), axis=1, reps=p)
    cx = ad.div(aff, row_sum)
    best_per_target = ad.max_axis(cx, axis=0, keepdims=True)
    return ad.neg(ad.log(ad.mean(best_per_target)))


def contextual_loss(y, y_hat, cfg):
    """Set-matching distance between patch populations of y and y_hat.

    Returns -log of the mean best-match affinity; the aggregate inside the
    log lies in (0, 1], so the loss lives in [0, log P].
    """
    if y.data.shape != y_hat.data.shape:
        raise DimensionError(f"contextual_loss: shapes {y.data.shape} and {y_hat.data.shape} differ")
    if y.data.ndim != 4 or y.data.shape[1] != 3:
        raise DimensionError(f"contextual_loss expects [N,3,H,W], got {y.data.shape}")
    weight = projection_weight(cfg)
    n = y.data.shape[0]
    total = None
    for i in range(n):
        item = _contextual_loss_single(_slice_batch(y, i), _slice_batch(y_hat, i), weight, cfg)
        total = item if total is None else ad.add(total, item)
    return ad.scale(total, 1.0 / n)


def _slice_batch(x, i):
    """Differentiable view of one batch item as [1,C,H,W]."""
    out_data = np.ascontiguousarray(x.data[i : i + 1])

    def rule(g):
        buf = np.zeros_like(x.data)
        buf[i : i + 1] = g
        x.accumulate_grad(buf)

    return ad.make_node(out_data, (x,), rule)


def adversarial_gen_loss(fake_logit):
    """Mean binary cross-entropy of fake logits against the real label."""
    return ad.mean(ad.softplus(ad.neg(fake_logit)))


def adversarial_disc_loss(real_logit, fake_logit):
    """Mean BCE of real logits against 1 plus mean BCE of fake logits against 0."""
    return ad.add(ad.mean(ad.softplus(ad.neg(real_logit))), ad.mean(ad.softplus(fake_logit)))


@dataclass
class PerceptualTerms:
    """Weighted perceptual total with its raw component values."""

    total: Tensor
    cx: Tensor
    downsample: Tensor
    gen: Tensor


def loss_perceptual(y, y_hat, fake_logit, weights, cfg, levels):
    """lambda_cx * set-matching + lambda_d * low-frequency L1 + lambda_gen * adversarial.

    ``levels`` selects the analysis depth of the LL downsampler (2 for x4
    upscaling, 1 for x2).
    """
    cx = contextual_loss(y, y_hat, cfg)
    down = l1_loss(ll_multilevel(y, levels), ll_multilevel(y_hat, levels))
    gen = adversarial_gen_loss(fake_logit)
    total = ad.add(
        ad.add(ad.scale(cx, weights.lambda_cx), ad.scale(down, weights.lambda_d)),
        ad.scale(gen, weights.lambda_gen),
    )
    return PerceptualTerms(total=total, cx=cx, downsample=down, gen=gen)


def admm_penalty(lf_p, lf_o, s, rho):
    """Scaled quadratic coupling: (rho/2) * sum((lf_p - lf_o + s)^2) / batch."""
    rho = float(rho)
    if rho < 0:
        raise ContractError(f"rho must be >= 0, got {rho}")
    if lf_p.data.shape != lf_o.data.shape or lf_p.data.shape != s.data.shape:
        raise DimensionError(
            f"admm_penalty: shapes {lf_p.data.shape}, {lf_o.data.shape}, {s.data.shape} differ"
        )
    n_batch = lf_p.data.shape[0] if lf_p.data.ndim >= 1 and lf_p.data.shape else 1
    gap = ad.add(ad.sub(lf_p, lf_o), s)
    return ad.scale(ad.total_sum(ad.mul(gap, gap)), rho / (2.0 * n_batch))


@dataclass
class BaselineTerms:
    """Weighted single-objective total with its raw component values."""

    total: Tensor
    objective: Tensor
    perceptual: PerceptualTerms
    regularizer: Tensor


def regularized_total_loss(y, y_prime, y_hat, fake_logit, weights, cfg, levels):
    """Single-loss baseline: lambda_o * L1 + lambda_p * perceptual + lambda_r * LF gap.

    The low-frequency gap between the final and intermediate outputs enters
    as a mean L1, not squared.
    """
    obj = loss_objective(y_prime, y_hat)
    perc = loss_perceptual(y, y_hat, fake_logit, weights, cfg, levels)
    reg = l1_loss(t_lf(y), t_lf(y_prime))
    total = ad.add(
        ad.add(ad.scale(obj, weights.lambda_o), ad.scale(perc.total, weights.lambda_p)),
        ad.scale(reg, weights.lambda_r),
    )
    return BaselineTerms(total=total, objective=obj, perceptual=perc, regularizer=reg)
