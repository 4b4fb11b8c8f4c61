"""Strict JSON run configuration shared by every pipeline command.

A config file is a JSON object with up to five sections, each optional and
each an object:

* ``"admm"``  — trainer schedule (see :class:`pdsr.training.AdmmConfig`)
* ``"model"`` — architecture sizes (see :class:`pdsr.models.ModelConfig`)
* ``"loss"``  — objective weights (see :class:`pdsr.losses.LossWeights`)
* ``"cx"``    — patch set-matching settings (see :class:`pdsr.losses.CxConfig`)
* ``"run"``   — paths and pipeline flags (fields of :class:`RunConfig` below)

Any key absent from the file takes its documented default; any key that is
not recognized is rejected, never ignored. ``--set section.key=value``
overrides apply on top of the file, and the environment variable
``PDSR_SEED`` (an integer) overrides both the trainer seed (``admm.seed``)
and the initialization seed (``model.seed``) last of all.
"""

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

from . import losses as ls
from . import models as md
from .exceptions import ConfigError
from .training import AdmmConfig

_SECTIONS = ("admm", "model", "loss", "cx", "run")


@dataclass(frozen=True)
class RunConfig:
    """Complete, validated settings for one pipeline run.

    The ``run`` section fields and their defaults:

    * ``data_dir`` ("data") — directory holding ``manifest.tsv`` (and the
      optional ``manifest_val.tsv``) plus the image files it references.
    * ``out_dir`` ("out") — where reports and checkpoints are written.
    * ``val_count`` (0) — validation images split off the manifest tail
      when no ``manifest_val.tsv`` exists.
    * ``extractor`` ("dwt") — the statistic coupled across stages: the
      half-resolution low-frequency subband ("dwt") or a blurred
      full-resolution image ("gaussian").
    * ``gaussian_ksize`` (21) / ``gaussian_sigma`` (3.0) — blur settings
      used when ``extractor`` is "gaussian".
    * ``crop_border`` (0) — pixels cropped from each side before
      reference-based metrics.
    * ``save_images`` (False) — also write per-image outputs during eval.
    """

    admm: AdmmConfig = field(default_factory=AdmmConfig)
    model: md.ModelConfig = field(default_factory=md.ModelConfig)
    loss: ls.LossWeights = field(default_factory=ls.LossWeights)
    cx: ls.CxConfig = field(default_factory=ls.CxConfig)
    data_dir: str = "data"
    out_dir: str = "out"
    val_count: int = 0
    extractor: str = "dwt"
    gaussian_ksize: int = 21
    gaussian_sigma: float = 3.0
    crop_border: int = 0
    save_images: bool = False

    def __post_init__(self):
        for name in ("data_dir", "out_dir"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise ConfigError(f"run.{name} must be a non-empty string, got {value!r}")
        if int(self.val_count) < 0:
            raise ConfigError(f"run.val_count must be >= 0, got {self.val_count}")
        if self.extractor not in ("dwt", "gaussian"):
            raise ConfigError(
                f"run.extractor must be 'dwt' or 'gaussian', got {self.extractor!r}"
            )
        if int(self.gaussian_ksize) < 3 or int(self.gaussian_ksize) % 2 == 0:
            raise ConfigError(
                f"run.gaussian_ksize must be an odd value >= 3, got {self.gaussian_ksize}"
            )
        sigma = float(self.gaussian_sigma)
        if not (math.isfinite(sigma) and sigma > 0):
            raise ConfigError(f"run.gaussian_sigma must be positive, got {self.gaussian_sigma}")
        if int(self.crop_border) < 0:
            raise ConfigError(f"run.crop_border must be >= 0, got {self.crop_border}")
        if not isinstance(self.save_images, bool):
            raise ConfigError(f"run.save_images must be a boolean, got {self.save_images!r}")

    def to_dict(self):
        run = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in ("admm", "model", "loss", "cx")
        }
        return {
            "admm": self.admm.to_dict(),
            "model": self.model.to_dict(),
            "loss": asdict(self.loss),
            "cx": asdict(self.cx),
            "run": run,
        }

    @classmethod
    def from_dict(cls, tree):
        if not isinstance(tree, dict):
            raise ConfigError(f"config root must be a JSON object, got {type(tree).__name__}")
        unknown = set(tree) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for section in tree:
            if not isinstance(tree[section], dict):
                raise ConfigError(f"config section {section!r} must be a JSON object")
        run = dict(tree.get("run", {}))
        run_fields = {
            f.name for f in fields(cls) if f.name not in ("admm", "model", "loss", "cx")
        }
        unknown_run = set(run) - run_fields
        if unknown_run:
            raise ConfigError(f"unknown keys in 'run' section: {sorted(unknown_run)}")
        return cls(
            admm=AdmmConfig.from_dict(tree.get("admm", {})),
            model=_strict_section(md.ModelConfig, tree.get("model", {}), "model"),
            loss=_strict_section(ls.LossWeights, tree.get("loss", {}), "loss"),
            cx=_strict_section(ls.CxConfig, tree.get("cx", {}), "cx"),
            **run,
        )


def _strict_section(cls, payload, section):
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r} section: {sorted(unknown)}")
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def parse_override(text):
    """Split one ``section.key=value`` override; values parse as JSON first.

    A value that is not valid JSON is kept as a plain string, so
    ``run.extractor=gaussian`` and ``admm.rho=0.5`` both do what they say.
    """
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(tree, overrides):
    """Apply dotted-path overrides to a raw config tree (returns a copy)."""
    tree = copy.deepcopy(tree)
    for item in overrides:
        key, value = parse_override(item)
        parts = key.split(".")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object value")
        node[parts[-1]] = value
    return tree


def load_run_config(path, overrides=(), env=None):
    """Read, override, and validate a JSON run config.

    ``overrides`` are ``--set`` strings; ``env`` defaults to ``os.environ``
    and is consulted for ``PDSR_SEED``, which wins over both the file and
    the overrides.
    """
    env = os.environ if env is None else env
    with open(path, "r", encoding="utf-8") as fh:
        try:
            tree = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"config {path} must contain a JSON object at the top level")
    tree = apply_overrides(tree, overrides)
    seed_text = env.get("PDSR_SEED")
    if seed_text is not None:
        try:
            seed = int(seed_text)
        except ValueError:
            raise ConfigError(f"PDSR_SEED must be an integer, got {seed_text!r}") from None
        tree.setdefault("admm", {})["seed"] = seed
        tree.setdefault("model", {})["seed"] = seed
    return RunConfig.from_dict(tree)


def config_json(cfg):
    """One-line canonical JSON of the fully resolved config (for headers)."""
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
