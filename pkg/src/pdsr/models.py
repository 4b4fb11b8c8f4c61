"""Two-stage upscaling network, discriminator, and checkpoint persistence.

The first stage maps the low-resolution input to a high-resolution estimate
through residual blocks and pixel-shuffle upscaling. The second stage
refines that estimate inside the wavelet domain: analyze into four
subbands, run residual blocks over the 12 stacked channels, synthesize
back, and add the input as a global skip. The last conv of every residual
block and the second stage's output projection start at zero, so the
second stage is exactly the identity map at initialization.

Checkpoints are a little-endian binary format: magic, u32 header length,
canonical JSON header, then the raw float64 payload of every array in
sorted key order. Saving a loaded checkpoint reproduces the file byte for
byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .exceptions import ContractError, DimensionError, FormatError
from .wavelet import SubbandSet, dwt2_haar, idwt2_haar

__all__ = [
    "ModelConfig",
    "Checkpoint",
    "LEAKY_SLOPE",
    "init_go_params",
    "init_gp_params",
    "init_disc_params",
    "forward_go",
    "forward_gp",
    "forward_disc",
    "param_count_go",
    "param_count_gp",
    "param_count_disc",
    "save_checkpoint",
    "load_checkpoint",
]

LEAKY_SLOPE = 0.2

_MAGIC = b"PDSRCKP1"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes for both generator stages and the discriminator."""

    go_blocks: int = 4
    gp_blocks: int = 4
    channels: int = 32
    scale: int = 4
    disc_channels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ContractError(f"scale must be 2 or 4, got {self.scale}")
        if self.go_blocks < 1 or self.gp_blocks < 1:
            raise ContractError("block counts must be >= 1")
        if self.channels < 4 or self.disc_channels < 4:
            raise ContractError("channel widths must be >= 4")
        if self.seed < 0:
            raise ContractError(f"seed must be >= 0, got {self.seed}")

    @property
    def upscale_stages(self):
        return self.scale.bit_length() - 1  # log2 for scale in {2, 4}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# initialization


def _he_conv(rng, out_ch, in_ch, k):
    fan_in = in_ch * k * k
    return rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(2.0 / fan_in)


def _add_conv(ps, rng, name, out_ch, in_ch, k, zero=False):
    w = np.zeros((out_ch, in_ch, k, k)) if zero else _he_conv(rng, out_ch, in_ch, k)
    ps.add(f"{name}.w", ad.parameter(w))
    ps.add(f"{name}.b", ad.parameter(np.zeros(out_ch)))


def _add_tap_conv(ps, rng, name, out_ch, in_ch, k, taps):
    """Convolution initialized as a channel-copy map plus low-amplitude noise.

    Each ``(row, col)`` tap places a unit weight at the kernel centre, so the
    layer starts out copying input channel ``col`` to output channel ``row``;
    the residual noise (5% of the usual He scale) breaks symmetry without
    drowning the copy.
    """
    fan_in = in_ch * k * k
    w = rng.standard_normal((out_ch, in_ch, k, k)) * (0.05 * np.sqrt(2.0 / fan_in))
    for row, col in taps:
        w[row, col, k // 2, k // 2] += 1.0
    ps.add(f"{name}.w", ad.parameter(w))
    ps.add(f"{name}.b", ad.parameter(np.zeros(out_ch)))


def _add_res_blocks(ps, rng, prefix, count, ch):
    for i in range(count):
        _add_conv(ps, rng, f"{prefix}.block{i:02d}.conv1", ch, ch, 3)
        # Zero last conv: each block starts as the identity.
        _add_conv(ps, rng, f"{prefix}.block{i:02d}.conv2", ch, ch, 3, zero=True)


def init_go_params(cfg):
    """Parameters of the upscaling stage, deterministically seeded.

    The head, sub-pixel, and tail convolutions start as near-exact channel
    copies (unit centre taps plus faint noise) and every residual block
    starts as the identity, so the freshly initialized stage computes
    approximately nearest-neighbour upsampling.  Training therefore only has
    to learn a correction on top of a sane baseline, which converges much
    faster than a fully random start.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    ps = ParameterSet()
    c = cfg.channels
    rgb = range(3)
    _add_tap_conv(ps, rng, "go.head", c, 3, 3, [(j, j) for j in rgb])
    _add_res_blocks(ps, rng, "go", cfg.go_blocks, c)
    for s in range(cfg.upscale_stages):
        # After depth-to-space, output channel j reads input channel 4*j+p,
        # so these taps make the stage replicate each pixel into its 2x2 block.
        taps = [(4 * j + p, j) for j in rgb for p in range(4)]
        _add_tap_conv(ps, rng, f"go.up{s}", 4 * c, c, 3, taps)
    _add_tap_conv(ps, rng, "go.tail", 3, c, 3, [(j, j) for j in rgb])
    return ps


def init_gp_params(cfg):
    """Parameters of the subband refinement stage; identity at init."""
    rng = np.random.default_rng([cfg.seed, 1])
    ps = ParameterSet()
    c = cfg.channels
    _add_conv(ps, rng, "gp.head", c, 12, 3)
    _add_res_blocks(ps, rng, "gp", cfg.gp_blocks, c)
    _add_conv(ps, rng, "gp.proj", 12, c, 3, zero=True)
    return ps


def init_disc_params(cfg):
    """Parameters of the strided-conv classifier."""
    rng = np.random.default_rng([cfg.seed, 2])
    ps = ParameterSet()
    d = cfg.disc_channels
    _add_conv(ps, rng, "d.conv0", d, 3, 3)
    _add_conv(ps, rng, "d.conv1", d, d, 3)
    _add_conv(ps, rng, "d.conv2", 2 * d, d, 3)
    _add_conv(ps, rng, "d.conv3", 2 * d, 2 * d, 3)
    ps.add("d.fc.w", ad.parameter(rng.standard_normal((2 * d, 1)) / np.sqrt(2 * d)))
    ps.add("d.fc.b", ad.parameter(np.zeros(1)))
    return ps


# ---------------------------------------------------------------------------
# closed-form parameter counts


def _conv_count(out_ch, in_ch, k):
    return out_ch * in_ch * k * k + out_ch


def param_count_go(cfg):
    c = cfg.channels
    blocks = cfg.go_blocks * 2 * _conv_count(c, c, 3)
    ups = cfg.upscale_stages * _conv_count(4 * c, c, 3)
    return _conv_count(c, 3, 3) + blocks + ups + _conv_count(3, c, 3)


def param_count_gp(cfg):
    c = cfg.channels
    blocks = cfg.gp_blocks * 2 * _conv_count(c, c, 3)
    return _conv_count(c, 12, 3) + blocks + _conv_count(12, c, 3)


def param_count_disc(cfg):
    d = cfg.disc_channels
    convs = (
        _conv_count(d, 3, 3)
        + _conv_count(d, d, 3)
        + _conv_count(2 * d, d, 3)
        + _conv_count(2 * d, 2 * d, 3)
    )
    return convs + 2 * d + 1


# ---------------------------------------------------------------------------
# forward passes


def _conv(x, params, name, stride=1, pad=1):
    return ad.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride, pad=pad)


def _res_block(x, params, prefix):
    h = ad.leaky_relu(_conv(x, params, f"{prefix}.conv1"), LEAKY_SLOPE)
    return ad.add(x, _conv(h, params, f"{prefix}.conv2"))


def _check_image(x, op, channels=3):
    if x.data.ndim != 4 or x.data.shape[1] != channels:
        raise DimensionError(f"{op} expects [N,{channels},H,W], got {x.data.shape}")


def forward_go(x, params, cfg):
    """Low-resolution [N,3,h,w] -> high-resolution estimate [N,3,h*scale,w*scale]."""
    _check_image(x, "forward_go")
    h = ad.leaky_relu(_conv(x, params, "go.head"), LEAKY_SLOPE)
    for i in range(cfg.go_blocks):
        h = _res_block(h, params, f"go.block{i:02d}")
    for s in range(cfg.upscale_stages):
        h = ad.leaky_relu(ad.pixel_shuffle(_conv(h, params, f"go.up{s}"), 2), LEAKY_SLOPE)
    return _conv(h, params, "go.tail")


def forward_gp(y_prime, params, cfg):
    """Refine a high-resolution estimate in the subband domain; same shape out."""
    _check_image(y_prime, "forward_gp")
    bands = dwt2_haar(y_prime)
    feat = ad.concat_channels(list(bands.bands()))
    h = ad.leaky_relu(_conv(feat, params, "gp.head"), LEAKY_SLOPE)
    for i in range(cfg.gp_blocks):
        h = _res_block(h, params, f"gp.block{i:02d}")
    proj = _conv(h, params, "gp.proj")
    residual = idwt2_haar(
        SubbandSet(
            ll=ad.narrow_channels(proj, 0, 3),
            hl=ad.narrow_channels(proj, 3, 3),
            lh=ad.narrow_channels(proj, 6, 3),
            hh=ad.narrow_channels(proj, 9, 3),
        )
    )
    return ad.add(y_prime, residual)


def forward_disc(y, params, cfg):
    """High-resolution image [N,3,H,W] -> one real/fake logit per sample."""
    _check_image(y, "forward_disc")
    n, _, hh, ww = y.data.shape
    if hh < 16 or ww < 16:
        raise DimensionError(f"forward_disc requires H,W >= 16, got {hh}x{ww}")
    h = ad.leaky_relu(_conv(y, params, "d.conv0"), LEAKY_SLOPE)
    h = ad.leaky_relu(_conv(h, params, "d.conv1", stride=2), LEAKY_SLOPE)
    h = ad.leaky_relu(_conv(h, params, "d.conv2", stride=2), LEAKY_SLOPE)
    h = ad.leaky_relu(_conv(h, params, "d.conv3", stride=2), LEAKY_SLOPE)
    n_, c_, hh_, ww_ = h.data.shape
    pooled = ad.scale(ad.sum_axis(ad.reshape(h, (n_, c_, hh_ * ww_)), axis=2, keepdims=False), 1.0 / (hh_ * ww_))
    return ad.add_bias(ad.matmul(pooled, params["d.fc.w"]), params["d.fc.b"])


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """Full training snapshot: parameters, optimizer, dual state, RNG, epoch."""

    model_config: ModelConfig
    params: dict  # name -> float64 ndarray (all three parameter sets, prefixed)
    adam_state: dict | None = None  # {"step": int, "m": {name: arr}, "v": {name: arr}}
    dual_state: dict | None = None  # {"round": int, "entries": {sample_id: arr}}
    rng_state: dict | None = None  # numpy bit-generator state dict
    epoch: int = 0
    version: int = _FORMAT_VERSION


def _flatten_arrays(ckpt):
    arrays = {}
    for name, arr in ckpt.params.items():
        arrays[f"p/{name}"] = arr
    if ckpt.adam_state is not None:
        for name, arr in ckpt.adam_state["m"].items():
            arrays[f"am/{name}"] = arr
        for name, arr in ckpt.adam_state["v"].items():
            arrays[f"av/{name}"] = arr
    if ckpt.dual_state is not None:
        for sid, arr in ckpt.dual_state["entries"].items():
            arrays[f"dual/{sid}"] = arr
    return arrays


def save_checkpoint(path, ckpt):
    """Write the snapshot; the same snapshot always produces the same bytes."""
    arrays = _flatten_arrays(ckpt)
    order = sorted(arrays)
    header = {
        "version": ckpt.version,
        "model_config": ckpt.model_config.to_dict(),
        "epoch": int(ckpt.epoch),
        "adam_step": None if ckpt.adam_state is None else ckpt.adam_state["step"],
        "dual_round": None if ckpt.dual_state is None else int(ckpt.dual_state["round"]),
        "rng_state": ckpt.rng_state,
        "arrays": [[key, list(arrays[key].shape)] for key in order],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array([len(blob)], dtype="<u4").tobytes())
        fh.write(blob)
        for key in order:
            fh.write(np.ascontiguousarray(arrays[key], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Parse a snapshot file; malformed input raises a format error."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_MAGIC) + 4:
        raise FormatError(f"checkpoint too short: {path}")
    if raw[: len(_MAGIC)] != _MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    hlen = int(np.frombuffer(raw, dtype="<u4", count=1, offset=len(_MAGIC))[0])
    body_off = len(_MAGIC) + 4
    if len(raw) < body_off + hlen:
        raise FormatError(f"truncated checkpoint header in {path}")
    try:
        header = json.loads(raw[body_off : body_off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable checkpoint header in {path}: {exc}") from exc
    if header.get("version") != _FORMAT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {header.get('version')!r} in {path} "
            f"(expected {_FORMAT_VERSION})"
        )
    offset = body_off + hlen
    arrays = {}
    for key, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise FormatError(f"truncated checkpoint payload at {key!r} in {path}")
        arrays[key] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"trailing bytes after checkpoint payload in {path}")

    params = {k[2:]: v for k, v in arrays.items() if k.startswith("p/")}
    adam_state = None
    if header["adam_step"] is not None:
        adam_state = {
            "step": header["adam_step"],
            "m": {k[3:]: v for k, v in arrays.items() if k.startswith("am/")},
            "v": {k[3:]: v for k, v in arrays.items() if k.startswith("av/")},
        }
    dual_state = None
    if header["dual_round"] is not None:
        dual_state = {
            "round": int(header["dual_round"]),
            "entries": {k[5:]: v for k, v in arrays.items() if k.startswith("dual/")},
        }
    return Checkpoint(
        model_config=ModelConfig.from_dict(header["model_config"]),
        params=params,
        adam_state=adam_state,
        dual_state=dual_state,
        rng_state=header["rng_state"],
        epoch=int(header["epoch"]),
        version=int(header["version"]),
    )
