"""Alternating two-stage trainer with per-sample low-frequency consensus.

Phase 1 jointly pretrains both generator stages with L1. Phase 2 runs
consensus rounds: a perceptual pass updating the second stage (and its
discriminator), a fidelity pass updating the first stage, then one dual
update per training sample. A single-objective baseline trainer with a
soft low-frequency regularizer shares the same schedule for paired
comparisons.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import metrics as mt
from . import models as md
from . import wavelet as wv
from .exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    StateError,
)

__all__ = [
    "AdmmConfig",
    "AdamState",
    "adam_step",
    "grads_of",
    "DualState",
    "dual_update",
    "lagrangian_scaled",
    "lagrangian_unscaled",
    "ModelBundle",
    "RoundRow",
    "TrainingReport",
    "report_csv_text",
    "write_report_csv",
    "pretrain",
    "admm_step_p",
    "admm_step_o",
    "train_pdadmm",
    "train_po_swap",
    "train_regularizer_baseline",
    "default_lr_schedule",
    "resolve_lr_schedule",
    "evaluate_stage_outputs",
]

_DIVERGE_LIMIT = 1e6

# Round fractions at which phase-2 learning rate drops to one eighth, and
# phase-1 fractions at which the pretraining rate drops to one tenth.
_PHASE2_LR_FRACTIONS = (0.1, 0.25, 0.35, 0.5, 0.7)
_PRETRAIN_LR_FRACTIONS = (0.6, 0.85)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmmConfig:
    """Schedule and coupling settings for the alternating trainer.

    ``rho`` is permitted to be exactly 0 (the penalty node is skipped
    entirely), which makes the documented equivalence with unconstrained
    perceptual training testable; positive values enable the consensus
    coupling.
    """

    rho: float = 1e-4
    inner_epochs_p: int = 1
    inner_epochs_o: int = 1
    pretrain_epochs: int = 50
    admm_rounds: int = 30
    lr_schedule: tuple = ()
    batch_size: int = 16
    seed: int = 0
    pretrain_lr: float = 1e-4
    base_lr: float = 5e-5

    def __post_init__(self):
        if not (isinstance(self.rho, (int, float)) and math.isfinite(self.rho) and self.rho >= 0):
            raise ConfigError(f"rho must be a finite value >= 0, got {self.rho}")
        for name in ("inner_epochs_p", "inner_epochs_o"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("pretrain_epochs", "admm_rounds", "seed"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("pretrain_lr", "base_lr"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v}")
        sched = tuple((int(r), float(lr)) for r, lr in self.lr_schedule)
        object.__setattr__(self, "lr_schedule", sched)
        if sched:
            if sched[0][0] != 0:
                raise ConfigError("lr_schedule must start at round 0")
            rounds = [r for r, _ in sched]
            if rounds != sorted(set(rounds)):
                raise ConfigError(f"lr_schedule rounds must be strictly increasing, got {rounds}")
            if any(lr <= 0 for _, lr in sched):
                raise ConfigError("lr_schedule rates must be positive")

    def to_dict(self):
        return {
            "rho": self.rho,
            "inner_epochs_p": self.inner_epochs_p,
            "inner_epochs_o": self.inner_epochs_o,
            "pretrain_epochs": self.pretrain_epochs,
            "admm_rounds": self.admm_rounds,
            "lr_schedule": [list(pair) for pair in self.lr_schedule],
            "batch_size": self.batch_size,
            "seed": self.seed,
            "pretrain_lr": self.pretrain_lr,
            "base_lr": self.base_lr,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown trainer config keys: {sorted(unknown)}")
        d = dict(d)
        if "lr_schedule" in d:
            d["lr_schedule"] = tuple(tuple(pair) for pair in d["lr_schedule"])
        return cls(**d)


def default_lr_schedule(rounds, base_lr):
    """Phase-2 schedule: one-eighth decay at fixed fractions of the run."""
    entries = [(0, float(base_lr))]
    lr = float(base_lr)
    milestones = sorted({int(f * rounds) for f in _PHASE2_LR_FRACTIONS})
    for m in milestones:
        if 0 < m < rounds:
            lr = lr / 8.0
            entries.append((m, lr))
    return tuple(entries)


def _pretrain_schedule(epochs, lr0):
    entries = [(0, float(lr0))]
    lr = float(lr0)
    for m in sorted({int(f * epochs) for f in _PRETRAIN_LR_FRACTIONS}):
        if 0 < m < epochs:
            lr = lr * 0.25
            entries.append((m, lr))
    return tuple(entries)


def resolve_lr_schedule(cfg):
    """The explicit schedule if given, otherwise the derived default."""
    if cfg.lr_schedule:
        return cfg.lr_schedule
    return default_lr_schedule(cfg.admm_rounds, cfg.base_lr)


def _lr_at(schedule, index):
    lr = schedule[0][1]
    for start, rate in schedule:
        if start <= index:
            lr = rate
    return lr


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        m = {name: np.zeros_like(p.data) for name, p in params.items()}
        v = {name: np.zeros_like(p.data) for name, p in params.items()}
        return cls(m=m, v=v, step=0, beta1=beta1, beta2=beta2, eps=eps)


def grads_of(params):
    """Collect parameter gradients after a backward pass (all must exist)."""
    out = {}
    for name, p in params.items():
        if p.grad is None:
            raise StateError(f"gradient for {name!r} has not been computed")
        out[name] = p.grad
    return out


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update over every parameter in the set."""
    lr = float(lr)
    if not lr > 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    correct1 = 1.0 - state.beta1**t
    correct2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if name not in grads:
            raise StateError(f"missing gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise StateError(
                f"gradient shape {g.shape} does not match parameter {name!r} {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correct1
        v_hat = v / correct2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# dual state
# ---------------------------------------------------------------------------


@dataclass
class DualState:
    """Per-sample scaled dual tensors plus the round counter."""

    entries: dict
    round: int = 0

    @classmethod
    def zeros(cls, sample_ids, shape):
        return cls(entries={sid: np.zeros(shape) for sid in sample_ids}, round=0)

    def norm(self):
        """Root-mean-square over every dual element (0 for an empty state)."""
        total = 0.0
        count = 0
        for sid in sorted(self.entries):
            e = self.entries[sid]
            total += float(np.sum(e * e))
            count += e.size
        if count == 0:
            return 0.0
        return math.sqrt(total / count)

    def copy(self):
        return DualState(
            entries={sid: e.copy() for sid, e in self.entries.items()}, round=self.round
        )


def dual_update(dual, lf_p_by_sample, lf_o_by_sample):
    """s <- s + (lf_p - lf_o) per sample; advances the round counter once."""
    if set(lf_p_by_sample) != set(lf_o_by_sample):
        raise StateError("lf_p and lf_o maps cover different sample ids")
    for sid in sorted(lf_p_by_sample):
        if sid not in dual.entries:
            raise StateError(f"no dual entry for sample {sid!r}")
        gap = np.asarray(lf_p_by_sample[sid]) - np.asarray(lf_o_by_sample[sid])
        if gap.shape != dual.entries[sid].shape:
            raise StateError(
                f"dual shape drift for sample {sid!r}: "
                f"{gap.shape} vs {dual.entries[sid].shape}"
            )
        dual.entries[sid] = dual.entries[sid] + gap
    dual.round += 1


# ---------------------------------------------------------------------------
# scaled / unscaled coupling forms
# ---------------------------------------------------------------------------


def lagrangian_scaled(lf_p, lf_o, s, rho):
    """(rho/2)||lf_p - lf_o + s||^2, batch-normalized (s is the scaled dual)."""
    return ls.admm_penalty(lf_p, lf_o, s, rho)


def lagrangian_unscaled(lf_p, lf_o, u, rho):
    """<u, lf_p - lf_o> + (rho/2)||lf_p - lf_o||^2, batch-normalized.

    With u = rho * s this differs from the scaled form only by a constant
    independent of the model outputs, so the two gradients agree.
    """
    rho = float(rho)
    if rho < 0:
        raise ContractError(f"rho must be >= 0, got {rho}")
    n_batch = lf_p.data.shape[0] if lf_p.data.ndim >= 1 and lf_p.data.shape else 1
    gap = ad.sub(lf_p, lf_o)
    inner = ad.total_sum(ad.mul(u, gap))
    quad = ad.scale(ad.total_sum(ad.mul(gap, gap)), rho / 2.0)
    return ad.scale(ad.add(inner, quad), 1.0 / n_batch)


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------


@dataclass
class ModelBundle:
    """Both generator stages plus the discriminator, as parameter sets."""

    cfg: md.ModelConfig
    go: ad.ParameterSet
    gp: ad.ParameterSet
    disc: ad.ParameterSet

    @classmethod
    def create(cls, cfg):
        return cls(
            cfg=cfg,
            go=md.init_go_params(cfg),
            gp=md.init_gp_params(cfg),
            disc=md.init_disc_params(cfg),
        )

    def flat_params(self):
        out = {}
        for pset in (self.go, self.gp, self.disc):
            out.update(pset.copy_values())
        return out

    def load_flat(self, values):
        for pset in (self.go, self.gp, self.disc):
            pset.load_values({name: values[name] for name in pset.names()})

    def clone(self):
        other = ModelBundle.create(self.cfg)
        other.load_flat(self.flat_params())
        return other

    def zero_grad(self):
        self.go.zero_grad()
        self.gp.zero_grad()
        self.disc.zero_grad()


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

_CSV_COLUMNS = (
    "round",
    "loss_o",
    "loss_cx",
    "loss_d",
    "loss_gen",
    "penalty",
    "primal_residual_l1",
    "dual_norm",
    "psnr_val",
    "lf_mae_val",
)


@dataclass(frozen=True)
class RoundRow:
    """One consensus round of logged scalars."""

    round: int
    loss_o: float
    loss_cx: float
    loss_d: float
    loss_gen: float
    penalty: float
    primal_residual_l1: float
    dual_norm: float
    psnr_val: float
    lf_mae_val: float


@dataclass
class TrainingReport:
    """Per-round log plus the phase-1 loss trace."""

    rows: list = field(default_factory=list)
    pretrain_losses: list = field(default_factory=list)


def report_csv_text(report, header_lines=()):
    """Serialize round rows as CSV (LF endings, repr floats, 'inf' markers)."""
    lines = [f"# {line}" for line in header_lines]
    lines.append(",".join(_CSV_COLUMNS))
    for row in report.rows:
        cells = [str(row.round)]
        cells += [repr(float(getattr(row, c))) for c in _CSV_COLUMNS[1:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_report_csv(report, path, header_lines=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_csv_text(report, header_lines))


# ---------------------------------------------------------------------------
# batching and constraint extractors
# ---------------------------------------------------------------------------


def _check_dataset(samples):
    samples = list(samples)
    if not samples:
        raise ContractError("dataset is empty")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate sample ids in dataset")
    lr_shape = np.asarray(samples[0].lr).shape
    hr_shape = np.asarray(samples[0].hr).shape
    for s in samples:
        if np.asarray(s.lr).shape != lr_shape or np.asarray(s.hr).shape != hr_shape:
            raise DimensionError(
                f"sample {s.sample_id!r} shape differs from the first sample; "
                "training requires uniform patch shapes"
            )
    return samples


def _batches(samples, batch_size, rng):
    order = rng.permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        x = np.stack([np.asarray(s.lr, dtype=np.float64) for s in chunk])
        hr = np.stack([np.asarray(s.hr, dtype=np.float64) for s in chunk])
        yield x, hr, [s.sample_id for s in chunk]


def _ordered_batches(samples, batch_size):
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = np.stack([np.asarray(s.lr, dtype=np.float64) for s in chunk])
        hr = np.stack([np.asarray(s.hr, dtype=np.float64) for s in chunk])
        yield x, hr, [s.sample_id for s in chunk]


def _make_extractor(kind, ksize, sigma):
    if kind == "dwt":
        return wv.t_lf
    if kind == "gaussian":
        return lambda img: wv.gaussian_lowpass(img, ksize, sigma)
    if kind == "hf":

        def hf_stack(img):
            bands = wv.dwt2_haar(img)
            return ad.concat_channels([bands.hl, bands.lh, bands.hh])

        return hf_stack
    raise ConfigError(f"unknown constraint extractor {kind!r}; expected dwt, gaussian, or hf")


def _extractor_shape(kind, hr_shape):
    c, h, w = hr_shape
    if kind == "dwt":
        return (c, h // 2, w // 2)
    if kind == "gaussian":
        return (c, h, w)
    if kind == "hf":
        return (3 * c, h // 2, w // 2)
    raise ConfigError(f"unknown constraint extractor {kind!r}")


def _stack_duals(dual, sample_ids):
    missing = [sid for sid in sample_ids if sid not in dual.entries]
    if missing:
        raise StateError(f"missing dual entries for samples {missing}")
    return np.stack([dual.entries[sid] for sid in sample_ids])


def _check_finite_loss(value, where, snapshot_fn):
    if math.isfinite(value) and abs(value) <= _DIVERGE_LIMIT:
        return
    path = snapshot_fn() if snapshot_fn is not None else None
    raise DivergenceError(
        f"non-finite or runaway loss ({value}) during {where}"
        + (f"; snapshot written to {path}" if path else ""),
        snapshot_path=path,
    )


# ---------------------------------------------------------------------------
# training steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepStats:
    """Scalar loss components of one optimizer step."""

    total: float
    loss_o: float = math.nan
    cx: float = math.nan
    downsample: float = math.nan
    gen: float = math.nan
    disc: float = math.nan
    penalty: float = 0.0


def _levels_for(model_cfg):
    return model_cfg.upscale_stages


def pretrain(samples, bundle, cfg, adam_go, adam_gp, rng, snapshot_fn=None):
    """Phase 1: joint L1 pretraining of both stages, one pass per epoch."""
    schedule = _pretrain_schedule(cfg.pretrain_epochs, cfg.pretrain_lr)
    losses = []
    for epoch in range(cfg.pretrain_epochs):
        lr = _lr_at(schedule, epoch)
        epoch_total = 0.0
        n_batches = 0
        for x, hr, _sids in _batches(samples, cfg.batch_size, rng):
            hr_t = ad.constant(hr)
            # First-stage step.
            bundle.zero_grad()
            y_prime = md.forward_go(ad.constant(x), bundle.go, bundle.cfg)
            loss_go = ls.l1_loss(y_prime, hr_t)
            ad.backward(loss_go)
            adam_step(bundle.go, grads_of(bundle.go), adam_go, lr)
            # Second-stage step on the pre-update intermediate output.
            bundle.zero_grad()
            y = md.forward_gp(ad.constant(y_prime.data), bundle.gp, bundle.cfg)
            loss_gp = ls.l1_loss(y, hr_t)
            ad.backward(loss_gp)
            adam_step(bundle.gp, grads_of(bundle.gp), adam_gp, lr)
            batch_total = loss_go.item() + loss_gp.item()
            _check_finite_loss(batch_total, f"pretrain epoch {epoch}", snapshot_fn)
            epoch_total += batch_total
            n_batches += 1
        losses.append(epoch_total / max(n_batches, 1))
    return losses


def admm_step_p(batch, bundle, dual, cfg, *, weights, cx, adam_gp, adam_disc, lr,
                extractor=wv.t_lf, snapshot_fn=None):
    """Perceptual sub-step: one discriminator step, one second-stage step.

    The intermediate output is a constant for this step; the dual tensors
    of the batch's samples are frozen. With rho == 0 the coupling term is
    omitted entirely, making the update identical to an unconstrained
    perceptual step.
    """
    x, hr, sids = batch
    levels = _levels_for(bundle.cfg)
    _stack_duals(dual, sids)  # validates entries exist even when rho == 0

    y_prime = md.forward_go(ad.constant(x), bundle.go, bundle.cfg)
    y_prime_const = ad.constant(y_prime.data)

    # Discriminator step on detached generator output. The second-stage
    # graph is built once; its parameters do not change during the
    # discriminator update, so the same node feeds the generator loss.
    bundle.zero_grad()
    y = md.forward_gp(y_prime_const, bundle.gp, bundle.cfg)
    real_logit = md.forward_disc(ad.constant(hr), bundle.disc, bundle.cfg)
    fake_logit_d = md.forward_disc(ad.constant(y.data), bundle.disc, bundle.cfg)
    disc_loss = ls.adversarial_disc_loss(real_logit, fake_logit_d)
    ad.backward(disc_loss)
    adam_step(bundle.disc, grads_of(bundle.disc), adam_disc, lr)

    # Generator step against the updated discriminator.
    bundle.zero_grad()
    fake_logit = md.forward_disc(y, bundle.disc, bundle.cfg)
    perc = ls.loss_perceptual(y, ad.constant(hr), fake_logit, weights, cx, levels)
    penalty_value = 0.0
    total = perc.total
    if cfg.rho > 0:
        lf_p = extractor(y)
        lf_o = ad.constant(extractor(y_prime_const).data)
        s_t = ad.constant(_stack_duals(dual, sids))
        pen = ls.admm_penalty(lf_p, lf_o, s_t, cfg.rho)
        total = ad.add(total, pen)
        penalty_value = pen.item()
    stats = StepStats(
        total=total.item(),
        cx=perc.cx.item(),
        downsample=perc.downsample.item(),
        gen=perc.gen.item(),
        disc=disc_loss.item(),
        penalty=penalty_value,
    )
    _check_finite_loss(stats.total, "perceptual sub-step", snapshot_fn)
    ad.backward(total)
    adam_step(bundle.gp, grads_of(bundle.gp), adam_gp, lr)
    return stats


def admm_step_o(batch, bundle, dual, cfg, *, adam_go, lr, extractor=wv.t_lf, snapshot_fn=None):
    """Fidelity sub-step: one first-stage step with the coupling term.

    The second stage's low-frequency output is evaluated with current
    parameters and frozen; gradients flow only into the first stage.
    """
    x, hr, sids = batch
    _stack_duals(dual, sids)

    bundle.zero_grad()
    y_prime = md.forward_go(ad.constant(x), bundle.go, bundle.cfg)
    loss_o = ls.loss_objective(y_prime, ad.constant(hr))
    total = loss_o
    penalty_value = 0.0
    if cfg.rho > 0:
        y = md.forward_gp(ad.constant(y_prime.data), bundle.gp, bundle.cfg)
        lf_p = ad.constant(extractor(ad.constant(y.data)).data)
        lf_o = extractor(y_prime)
        s_t = ad.constant(_stack_duals(dual, sids))
        pen = ls.admm_penalty(lf_p, lf_o, s_t, cfg.rho)
        total = ad.add(total, pen)
        penalty_value = pen.item()
    stats = StepStats(total=total.item(), loss_o=loss_o.item(), penalty=penalty_value)
    _check_finite_loss(stats.total, "fidelity sub-step", snapshot_fn)
    ad.backward(total)
    adam_step(bundle.go, grads_of(bundle.go), adam_go, lr)
    return stats


def _forward_pair_data(bundle, x):
    """Both stage outputs as plain arrays (no gradients kept)."""
    y_prime = md.forward_go(ad.constant(x), bundle.go, bundle.cfg)
    y = md.forward_gp(ad.constant(y_prime.data), bundle.gp, bundle.cfg)
    return y_prime.data, y.data


def _extract_data(extractor, arr):
    return extractor(ad.constant(arr)).data


def _dual_pass(samples, bundle, dual, cfg, extractor):
    """Evaluate both stages on every sample, update duals, measure the gap."""
    lf_p_map = {}
    lf_o_map = {}
    abs_sum = 0.0
    n_elems = 0
    for x, _hr, sids in _ordered_batches(samples, cfg.batch_size):
        y_prime_data, y_data = _forward_pair_data(bundle, x)
        lf_p = _extract_data(extractor, y_data)
        lf_o = _extract_data(extractor, y_prime_data)
        for i, sid in enumerate(sids):
            lf_p_map[sid] = lf_p[i]
            lf_o_map[sid] = lf_o[i]
        abs_sum += float(np.sum(np.abs(lf_p - lf_o)))
        n_elems += lf_p.size
    dual_update(dual, lf_p_map, lf_o_map)
    return abs_sum / n_elems


def _primal_gap(samples, bundle, cfg, extractor):
    """Mean |extractor(y) - extractor(y')| without touching any dual state."""
    abs_sum = 0.0
    n_elems = 0
    for x, _hr, _sids in _ordered_batches(samples, cfg.batch_size):
        y_prime_data, y_data = _forward_pair_data(bundle, x)
        gap = _extract_data(extractor, y_data) - _extract_data(extractor, y_prime_data)
        abs_sum += float(np.sum(np.abs(gap)))
        n_elems += gap.size
    return abs_sum / n_elems


def evaluate_stage_outputs(bundle, samples, batch_size=16, extractor=wv.t_lf):
    """(mean luma PSNR of the final output, mean LF gap between stages)."""
    samples = list(samples)
    if not samples:
        return math.nan, math.nan
    psnrs = []
    gaps = []
    for x, hr, _sids in _ordered_batches(samples, batch_size):
        y_prime_data, y_data = _forward_pair_data(bundle, x)
        lf_gap = np.abs(
            _extract_data(extractor, y_data) - _extract_data(extractor, y_prime_data)
        )
        for i in range(y_data.shape[0]):
            psnrs.append(mt.psnr_y(y_data[i], hr[i]))
            gaps.append(float(np.mean(lf_gap[i])))
    return mt.mean_float(psnrs), mt.mean_float(gaps)


def super_resolve_pair(bundle, x):
    """Both stage outputs for a [N,C,H,W] batch, as plain arrays."""
    return _forward_pair_data(bundle, np.asarray(x, dtype=np.float64))


def bundle_from_checkpoint(ckpt):
    """Inference-ready parameter sets restored from a loaded snapshot."""
    bundle = ModelBundle.create(ckpt.model_config)
    bundle.load_flat(ckpt.params)
    return bundle


# ---------------------------------------------------------------------------
# checkpoint plumbing
# ---------------------------------------------------------------------------


def _bundle_checkpoint(bundle, adams, dual, rng, epoch):
    m = {}
    v = {}
    steps = {}
    for tag, state in adams.items():
        steps[tag] = state.step
        m.update(state.m)
        v.update(state.v)
    adam_state = {"step": steps, "m": m, "v": v}
    dual_state = None
    if dual is not None:
        dual_state = {"round": dual.round, "entries": dual.entries}
    return md.Checkpoint(
        model_config=bundle.cfg,
        params=bundle.flat_params(),
        adam_state=adam_state,
        dual_state=dual_state,
        rng_state=rng.bit_generator.state,
        epoch=epoch,
    )


def _restore_from_checkpoint(ckpt, bundle, adams, dual, rng):
    if ckpt.model_config.to_dict() != bundle.cfg.to_dict():
        raise StateError(
            "checkpoint model configuration does not match the current model"
        )
    bundle.load_flat(ckpt.params)
    if ckpt.adam_state is not None:
        steps = ckpt.adam_state["step"]
        if not isinstance(steps, dict):
            raise StateError("checkpoint optimizer state lacks per-stage step counters")
        for tag, state in adams.items():
            names = set(state.m)
            state.step = int(steps.get(tag, 0))
            for name in names:
                if name in ckpt.adam_state["m"]:
                    state.m[name] = ckpt.adam_state["m"][name].copy()
                    state.v[name] = ckpt.adam_state["v"][name].copy()
    if dual is not None and ckpt.dual_state is not None:
        restored = ckpt.dual_state["entries"]
        if set(restored) != set(dual.entries):
            raise StateError("checkpoint dual state covers different sample ids")
        for sid, e in restored.items():
            if e.shape != dual.entries[sid].shape:
                raise StateError(f"checkpoint dual shape drift for sample {sid!r}")
            dual.entries[sid] = e.copy()
        dual.round = int(ckpt.dual_state["round"])
    if ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
    return int(ckpt.epoch)


def _snapshot_writer(checkpoint_dir, bundle, adams, dual, rng, epoch_ref):
    if checkpoint_dir is None:
        return None

    def write():
        os.makedirs(str(checkpoint_dir), exist_ok=True)
        path = os.path.join(str(checkpoint_dir), "divergence.ckpt")
        md.save_checkpoint(
            path, _bundle_checkpoint(bundle, adams, dual, rng, epoch_ref["epoch"])
        )
        return path

    return write


# ---------------------------------------------------------------------------
# full training loops
# ---------------------------------------------------------------------------


def _round_metrics(bundle, val_set, cfg, extractor):
    if not val_set:
        return math.nan, math.nan
    psnrs = []
    maes = []
    for x, hr, _sids in _ordered_batches(list(val_set), cfg.batch_size):
        y_prime_data, y_data = _forward_pair_data(bundle, x)
        lf_gap = np.abs(
            _extract_data(extractor, y_data) - _extract_data(extractor, y_prime_data)
        )
        for i in range(y_data.shape[0]):
            psnrs.append(mt.psnr_y(y_data[i], hr[i]))
            maes.append(float(np.mean(lf_gap[i])))
    return mt.mean_float(psnrs), mt.mean_float(maes)


def _save_round_checkpoint(checkpoint_dir, name, bundle, adams, dual, rng, epoch):
    if checkpoint_dir is None:
        return None
    os.makedirs(str(checkpoint_dir), exist_ok=True)
    path = os.path.join(str(checkpoint_dir), name)
    md.save_checkpoint(path, _bundle_checkpoint(bundle, adams, dual, rng, epoch))
    return path


def train_pdadmm(dataset, model, cfg, *, weights=None, cx=None, val_set=(),
                 extractor="dwt", gaussian_ksize=21, gaussian_sigma=3.0,
                 checkpoint_dir=None, resume_from=None):
    """Pretrain both stages, then alternate consensus rounds with dual updates.

    ``extractor`` selects the coupled statistic: "dwt" couples the
    low-frequency subband, "gaussian" couples a blurred full-resolution
    image. Returns the per-round report; the model is updated in place.
    """
    samples = _check_dataset(dataset)
    weights = weights or ls.LossWeights()
    cx = cx or ls.CxConfig()
    if extractor == "hf":
        raise ConfigError("the hf extractor belongs to the swapped-role trainer")
    extract = _make_extractor(extractor, gaussian_ksize, gaussian_sigma)
    hr_shape = np.asarray(samples[0].hr).shape
    dual = DualState.zeros([s.sample_id for s in samples], _extractor_shape(extractor, hr_shape))

    adams = {
        "go": AdamState.create(model.go),
        "gp": AdamState.create(model.gp),
        "d": AdamState.create(model.disc),
    }
    rng = np.random.default_rng([cfg.seed, 10])
    epoch_ref = {"epoch": 0}
    snapshot_fn = _snapshot_writer(checkpoint_dir, model, adams, dual, rng, epoch_ref)
    schedule = resolve_lr_schedule(cfg)
    report = TrainingReport()

    start_round = 0
    if resume_from is not None:
        ckpt = md.load_checkpoint(resume_from)
        start_round = _restore_from_checkpoint(ckpt, model, adams, dual, rng)
        epoch_ref["epoch"] = start_round
    else:
        report.pretrain_losses = pretrain(
            samples, model, cfg, adams["go"], adams["gp"], rng, snapshot_fn
        )
        _save_round_checkpoint(checkpoint_dir, "pretrain.ckpt", model, adams, dual, rng, 0)

    for rnd in range(start_round, cfg.admm_rounds):
        lr = _lr_at(schedule, rnd)
        p_stats = []
        for _ in range(cfg.inner_epochs_p):
            for batch in _batches(samples, cfg.batch_size, rng):
                p_stats.append(
                    admm_step_p(
                        batch, model, dual, cfg, weights=weights, cx=cx,
                        adam_gp=adams["gp"], adam_disc=adams["d"], lr=lr,
                        extractor=extract, snapshot_fn=snapshot_fn,
                    )
                )
        o_stats = []
        for _ in range(cfg.inner_epochs_o):
            for batch in _batches(samples, cfg.batch_size, rng):
                o_stats.append(
                    admm_step_o(
                        batch, model, dual, cfg, adam_go=adams["go"], lr=lr,
                        extractor=extract, snapshot_fn=snapshot_fn,
                    )
                )
        primal = _dual_pass(samples, model, dual, cfg, extract)
        psnr_val, lf_mae_val = _round_metrics(model, val_set, cfg, extract)
        report.rows.append(
            RoundRow(
                round=rnd + 1,
                loss_o=mt.mean_float([s.loss_o for s in o_stats]),
                loss_cx=mt.mean_float([s.cx for s in p_stats]),
                loss_d=mt.mean_float([s.disc for s in p_stats]),
                loss_gen=mt.mean_float([s.gen for s in p_stats]),
                penalty=mt.mean_float([s.penalty for s in p_stats]),
                primal_residual_l1=primal,
                dual_norm=dual.norm(),
                psnr_val=psnr_val,
                lf_mae_val=lf_mae_val,
            )
        )
        epoch_ref["epoch"] = rnd + 1
        _save_round_checkpoint(
            checkpoint_dir, f"round_{rnd + 1:04d}.ckpt", model, adams, dual, rng, rnd + 1
        )

    _save_round_checkpoint(
        checkpoint_dir, "final.ckpt", model, adams, dual, rng, max(start_round, cfg.admm_rounds)
    )
    return report


def train_po_swap(dataset, model, cfg, *, weights=None, cx=None, val_set=(),
                  checkpoint_dir=None, resume_from=None):
    """Swapped-role variant: the first stage carries the perceptual loss.

    The coupled statistic is the stack of high-frequency subbands, the
    perceptual sub-step updates the upscaling stage, and the fidelity
    sub-step updates the refinement stage.
    """
    samples = _check_dataset(dataset)
    weights = weights or ls.LossWeights()
    cx = cx or ls.CxConfig()
    extract = _make_extractor("hf", 0, 0.0)
    hr_shape = np.asarray(samples[0].hr).shape
    dual = DualState.zeros([s.sample_id for s in samples], _extractor_shape("hf", hr_shape))
    levels = _levels_for(model.cfg)

    adams = {
        "go": AdamState.create(model.go),
        "gp": AdamState.create(model.gp),
        "d": AdamState.create(model.disc),
    }
    rng = np.random.default_rng([cfg.seed, 10])
    epoch_ref = {"epoch": 0}
    snapshot_fn = _snapshot_writer(checkpoint_dir, model, adams, dual, rng, epoch_ref)
    schedule = resolve_lr_schedule(cfg)
    report = TrainingReport()

    start_round = 0
    if resume_from is not None:
        ckpt = md.load_checkpoint(resume_from)
        start_round = _restore_from_checkpoint(ckpt, model, adams, dual, rng)
        epoch_ref["epoch"] = start_round
    else:
        report.pretrain_losses = pretrain(
            samples, model, cfg, adams["go"], adams["gp"], rng, snapshot_fn
        )
        _save_round_checkpoint(checkpoint_dir, "pretrain.ckpt", model, adams, dual, rng, 0)

    for rnd in range(start_round, cfg.admm_rounds):
        lr = _lr_at(schedule, rnd)
        p_stats = []
        o_stats = []
        for _ in range(cfg.inner_epochs_p):
            for x, hr, sids in _batches(samples, cfg.batch_size, rng):
                _stack_duals(dual, sids)
                # Perceptual step on the first (upscaling) stage. Its graph
                # is reused for the generator loss after the discriminator
                # update, which leaves first-stage parameters untouched.
                model.zero_grad()
                y_prime = md.forward_go(ad.constant(x), model.go, model.cfg)
                real_logit = md.forward_disc(ad.constant(hr), model.disc, model.cfg)
                fake_logit_d = md.forward_disc(
                    ad.constant(y_prime.data), model.disc, model.cfg
                )
                disc_loss = ls.adversarial_disc_loss(real_logit, fake_logit_d)
                ad.backward(disc_loss)
                adam_step(model.disc, grads_of(model.disc), adams["d"], lr)

                model.zero_grad()
                fake_logit = md.forward_disc(y_prime, model.disc, model.cfg)
                perc = ls.loss_perceptual(
                    y_prime, ad.constant(hr), fake_logit, weights, cx, levels
                )
                total = perc.total
                penalty_value = 0.0
                if cfg.rho > 0:
                    y_const = md.forward_gp(
                        ad.constant(y_prime.data), model.gp, model.cfg
                    )
                    hf_1 = extract(y_prime)
                    hf_2 = ad.constant(_extract_data(extract, y_const.data))
                    s_t = ad.constant(_stack_duals(dual, sids))
                    pen = ls.admm_penalty(hf_1, hf_2, s_t, cfg.rho)
                    total = ad.add(total, pen)
                    penalty_value = pen.item()
                p_stats.append(
                    StepStats(
                        total=total.item(), cx=perc.cx.item(),
                        downsample=perc.downsample.item(), gen=perc.gen.item(),
                        disc=disc_loss.item(), penalty=penalty_value,
                    )
                )
                _check_finite_loss(p_stats[-1].total, "swapped perceptual sub-step", snapshot_fn)
                ad.backward(total)
                adam_step(model.go, grads_of(model.go), adams["go"], lr)
        for _ in range(cfg.inner_epochs_o):
            for x, hr, sids in _batches(samples, cfg.batch_size, rng):
                _stack_duals(dual, sids)
                model.zero_grad()
                y_prime = md.forward_go(ad.constant(x), model.go, model.cfg)
                y = md.forward_gp(ad.constant(y_prime.data), model.gp, model.cfg)
                loss_o = ls.loss_objective(y, ad.constant(hr))
                total = loss_o
                penalty_value = 0.0
                if cfg.rho > 0:
                    hf_1 = ad.constant(_extract_data(extract, y_prime.data))
                    hf_2 = extract(y)
                    s_t = ad.constant(_stack_duals(dual, sids))
                    pen = ls.admm_penalty(hf_1, hf_2, s_t, cfg.rho)
                    total = ad.add(total, pen)
                    penalty_value = pen.item()
                o_stats.append(
                    StepStats(total=total.item(), loss_o=loss_o.item(), penalty=penalty_value)
                )
                _check_finite_loss(o_stats[-1].total, "swapped fidelity sub-step", snapshot_fn)
                ad.backward(total)
                adam_step(model.gp, grads_of(model.gp), adams["gp"], lr)

        # Dual pass over the high-frequency gap (stage 1 minus stage 2).
        hf_1_map = {}
        hf_2_map = {}
        abs_sum = 0.0
        n_elems = 0
        for x, _hr, sids in _ordered_batches(samples, cfg.batch_size):
            y_prime_data, y_data = _forward_pair_data(model, x)
            hf_1 = _extract_data(extract, y_prime_data)
            hf_2 = _extract_data(extract, y_data)
            for i, sid in enumerate(sids):
                hf_1_map[sid] = hf_1[i]
                hf_2_map[sid] = hf_2[i]
            abs_sum += float(np.sum(np.abs(hf_1 - hf_2)))
            n_elems += hf_1.size
        dual_update(dual, hf_1_map, hf_2_map)
        primal = abs_sum / n_elems
        psnr_val, lf_mae_val = _round_metrics(model, val_set, cfg, extract)
        report.rows.append(
            RoundRow(
                round=rnd + 1,
                loss_o=mt.mean_float([s.loss_o for s in o_stats]),
                loss_cx=mt.mean_float([s.cx for s in p_stats]),
                loss_d=mt.mean_float([s.disc for s in p_stats]),
                loss_gen=mt.mean_float([s.gen for s in p_stats]),
                penalty=mt.mean_float([s.penalty for s in p_stats]),
                primal_residual_l1=primal,
                dual_norm=dual.norm(),
                psnr_val=psnr_val,
                lf_mae_val=lf_mae_val,
            )
        )
        epoch_ref["epoch"] = rnd + 1
        _save_round_checkpoint(
            checkpoint_dir, f"round_{rnd + 1:04d}.ckpt", model, adams, dual, rng, rnd + 1
        )

    _save_round_checkpoint(
        checkpoint_dir, "final.ckpt", model, adams, dual, rng, max(start_round, cfg.admm_rounds)
    )
    return report


def train_regularizer_baseline(dataset, model, lambda_r, cfg, *, weights=None, cx=None,
                               val_set=(), checkpoint_dir=None, resume_from=None):
    """Single joint objective with a soft low-frequency regularizer.

    Shares the pretraining phase and round schedule with the consensus
    trainer; each round runs one joint pass in which every batch updates
    the discriminator and both generator stages once, so per-stage
    optimizer steps per round match the consensus trainer's defaults.
    """
    samples = _check_dataset(dataset)
    weights = weights or ls.LossWeights()
    weights = ls.LossWeights(
        lambda_cx=weights.lambda_cx, lambda_d=weights.lambda_d,
        lambda_gen=weights.lambda_gen, lambda_o=weights.lambda_o,
        lambda_p=weights.lambda_p, lambda_r=float(lambda_r),
    )
    cx = cx or ls.CxConfig()
    levels = _levels_for(model.cfg)

    adams = {
        "go": AdamState.create(model.go),
        "gp": AdamState.create(model.gp),
        "d": AdamState.create(model.disc),
    }
    rng = np.random.default_rng([cfg.seed, 10])
    epoch_ref = {"epoch": 0}
    snapshot_fn = _snapshot_writer(checkpoint_dir, model, adams, None, rng, epoch_ref)
    schedule = resolve_lr_schedule(cfg)
    report = TrainingReport()

    start_round = 0
    if resume_from is not None:
        ckpt = md.load_checkpoint(resume_from)
        start_round = _restore_from_checkpoint(ckpt, model, adams, None, rng)
        epoch_ref["epoch"] = start_round
    else:
        report.pretrain_losses = pretrain(
            samples, model, cfg, adams["go"], adams["gp"], rng, snapshot_fn
        )
        _save_round_checkpoint(checkpoint_dir, "pretrain.ckpt", model, adams, None, rng, 0)

    for rnd in range(start_round, cfg.admm_rounds):
        lr = _lr_at(schedule, rnd)
        stats = []
        for _ in range(cfg.inner_epochs_p):
            for x, hr, _sids in _batches(samples, cfg.batch_size, rng):
                # Discriminator step on detached outputs.
                model.zero_grad()
                y_prime_probe = md.forward_go(ad.constant(x), model.go, model.cfg)
                y_probe = md.forward_gp(
                    ad.constant(y_prime_probe.data), model.gp, model.cfg
                )
                real_logit = md.forward_disc(ad.constant(hr), model.disc, model.cfg)
                fake_logit_d = md.forward_disc(
                    ad.constant(y_probe.data), model.disc, model.cfg
                )
                disc_loss = ls.adversarial_disc_loss(real_logit, fake_logit_d)
                ad.backward(disc_loss)
                adam_step(model.disc, grads_of(model.disc), adams["d"], lr)

                # Joint step on both stages.
                model.zero_grad()
                y_prime = md.forward_go(ad.constant(x), model.go, model.cfg)
                y = md.forward_gp(ad.constant(y_prime.data), model.gp, model.cfg)
                fake_logit = md.forward_disc(y, model.disc, model.cfg)
                terms = ls.regularized_total_loss(
                    y, y_prime, ad.constant(hr), fake_logit, weights, cx, levels
                )
                stats.append(
                    StepStats(
                        total=terms.total.item(),
                        loss_o=terms.objective.item(),
                        cx=terms.perceptual.cx.item(),
                        downsample=terms.perceptual.downsample.item(),
                        gen=terms.perceptual.gen.item(),
                        disc=disc_loss.item(),
                        penalty=weights.lambda_r * terms.regularizer.item(),
                    )
                )
                _check_finite_loss(stats[-1].total, "baseline joint step", snapshot_fn)
                ad.backward(terms.total)
                adam_step(model.go, grads_of(model.go), adams["go"], lr)
                adam_step(model.gp, grads_of(model.gp), adams["gp"], lr)

        primal = _primal_gap(samples, model, cfg, wv.t_lf)
        psnr_val, lf_mae_val = _round_metrics(model, val_set, cfg, wv.t_lf)
        report.rows.append(
            RoundRow(
                round=rnd + 1,
                loss_o=mt.mean_float([s.loss_o for s in stats]),
                loss_cx=mt.mean_float([s.cx for s in stats]),
                loss_d=mt.mean_float([s.disc for s in stats]),
                loss_gen=mt.mean_float([s.gen for s in stats]),
                penalty=mt.mean_float([s.penalty for s in stats]),
                primal_residual_l1=primal,
                dual_norm=0.0,
                psnr_val=psnr_val,
                lf_mae_val=lf_mae_val,
            )
        )
        epoch_ref["epoch"] = rnd + 1
        _save_round_checkpoint(
            checkpoint_dir, f"round_{rnd + 1:04d}.ckpt", model, adams, None, rng, rnd + 1
        )

    _save_round_checkpoint(
        checkpoint_dir, "final.ckpt", model, adams, None, rng, max(start_round, cfg.admm_rounds)
    )
    return report
