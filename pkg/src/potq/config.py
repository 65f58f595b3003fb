"""Experiment configuration: versioned INI text with strict key checking.

Unknown sections or keys are rejected so a typo cannot silently change an
experiment. serialize(parse(text)) is canonical and idempotent.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, replace

import numpy as np

from .autograd import SgdConfig
from .data import Dataset, dataset_from_csv, dataset_from_idx, synthetic_blobs
from .models import Model, build_model, desk_arch
from .qat import QatConfig
from .quantizers import ApotScheme, FloatScheme, PotScheme, PruneConfig, Scheme, UniformScheme

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "serialize_config",
    "parse_scheme",
    "scheme_text",
    "CONFIG_VERSION",
]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def parse_scheme(text: str) -> Scheme:
    """'float', 'pot:4', 'uniform:8' or 'apot:4'."""
    text = text.strip().lower()
    if text == "float":
        return FloatScheme()
    if ":" not in text:
        raise ConfigError(f"bad scheme {text!r}; expected e.g. 'pot:4'")
    tag, _, bits = text.partition(":")
    try:
        b = int(bits)
    except ValueError:
        raise ConfigError(f"bad scheme bits in {text!r}") from None
    try:
        if tag == "pot":
            return PotScheme(b)
        if tag == "uniform":
            return UniformScheme(b)
        if tag == "apot":
            return ApotScheme(b)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    raise ConfigError(f"unknown scheme kind {tag!r}")


def scheme_text(scheme: Scheme) -> str:
    if isinstance(scheme, FloatScheme):
        return "float"
    return f"{scheme.tag()}:{scheme.bits}"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "desk"
    seed: int = 7
    output_dir: str = "runs/desk"

    # dataset
    data_format: str = "synthetic"  # synthetic | idx
    classes: int = 10
    train_samples: int = 600
    test_samples: int = 300
    image_size: int = 12
    noise: float = 0.4
    jitter: float = 1.2
    sigma: float = 1.6
    data_seed: int = 99
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""

    # model
    conv1_filters: int = 8
    conv2_filters: int = 16
    kernel: int = 3

    # sgd (QAT phase)
    epochs: int = 15
    base_lr: float = 0.001
    momentum: float = 0.9
    lr_step: int = 5
    lr_decay: float = 0.1
    batch_size: int = 32

    # float pretraining phase
    float_epochs: int = 20
    float_lr: float = 0.01
    float_weight_decay: float = 0.02

    # quant
    method: str = "ste"
    scheme: str = "pot:4"
    scheme_overrides: tuple[tuple[str, str], ...] = ()
    prune_factor: float = 0.0
    quantize_first_layer: bool = True
    quantize_last_layer: bool = True

    # mac
    mac_overflow: str = "wrap"

    def __post_init__(self) -> None:
        if self.data_format not in ("synthetic", "idx", "csv"):
            raise ConfigError(
                f"dataset format must be synthetic, idx or csv, got {self.data_format!r}"
            )
        if self.method not in ("ste", "alr"):
            raise ConfigError(f"method must be ste or alr, got {self.method!r}")
        if self.mac_overflow not in ("wrap", "saturate"):
            raise ConfigError(f"mac overflow must be wrap or saturate, got {self.mac_overflow!r}")
        parse_scheme(self.scheme)
        for _, s in self.scheme_overrides:
            parse_scheme(s)
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")

    # -- derived objects ----------------------------------------------------

    def sgd_config(self) -> SgdConfig:
        marks = tuple(
            (e, self.lr_decay) for e in range(self.lr_step, self.epochs, self.lr_step)
        ) if self.lr_step > 0 else ()
        return SgdConfig(self.base_lr, self.momentum, self.epochs, marks, self.seed)

    def float_sgd_config(self) -> SgdConfig:
        half, three_q = self.float_epochs // 2, (3 * self.float_epochs) // 4
        marks = tuple((e, self.lr_decay) for e in (half, three_q) if 0 < e < self.float_epochs)
        return SgdConfig(self.float_lr, self.momentum, self.float_epochs, marks, self.seed)

    def model_arch(self) -> list[dict]:
        return desk_arch(self.image_size, 1, self.classes,
                         self.conv1_filters, self.conv2_filters, self.kernel)

    def build_model(self) -> Model:
        return build_model(self.model_arch(), np.random.default_rng(self.seed))

    def schemes_for(self, model: Model) -> dict[str, Scheme]:
        overrides = dict(self.scheme_overrides)
        out = {}
        for layer in model.trainable():
            out[layer.name] = parse_scheme(overrides.get(layer.name, self.scheme))
        return out

    def qat_config(self, model: Model) -> QatConfig:
        return QatConfig(
            method=self.method,
            schemes=self.schemes_for(model),
            prune=PruneConfig(self.prune_factor),
            sgd=self.sgd_config(),
            batch_size=self.batch_size,
            quantize_first_layer=self.quantize_first_layer,
            quantize_last_layer=self.quantize_last_layer,
        )

    def load_datasets(self) -> tuple[Dataset, Dataset]:
        if self.data_format == "synthetic":
            train = synthetic_blobs(self.train_samples, self.classes, self.image_size,
                                    self.noise, self.jitter, self.sigma, self.data_seed)
            test = synthetic_blobs(self.test_samples, self.classes, self.image_size,
                                   self.noise, self.jitter, self.sigma, self.data_seed + 1)
            return train, test
        if self.data_format == "csv":
            paths = (self.train_csv, self.test_csv)
            if not all(paths):
                raise ConfigError("csv datasets need train_csv and test_csv paths")
        else:
            paths = (self.train_images, self.train_labels, self.test_images, self.test_labels)
            if not all(paths):
                raise ConfigError("idx datasets need train/test images and labels paths")
        for p in paths:
            if not os.path.exists(p):
                raise ConfigError(f"dataset path does not exist: {p}")
        if self.data_format == "csv":
            return dataset_from_csv(self.train_csv), dataset_from_csv(self.test_csv)
        return (
            dataset_from_idx(self.train_images, self.train_labels),
            dataset_from_idx(self.test_images, self.test_labels),
        )


_SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "version": (int, None),
        "name": (str, "name"),
        "seed": (int, "seed"),
        "output_dir": (str, "output_dir"),
    },
    "dataset": {
        "format": (str, "data_format"),
        "classes": (int, "classes"),
        "train_samples": (int, "train_samples"),
        "test_samples": (int, "test_samples"),
        "image_size": (int, "image_size"),
        "noise": (float, "noise"),
        "jitter": (float, "jitter"),
        "sigma": (float, "sigma"),
        "data_seed": (int, "data_seed"),
        "train_images": (str, "train_images"),
        "train_labels": (str, "train_labels"),
        "test_images": (str, "test_images"),
        "test_labels": (str, "test_labels"),
        "train_csv": (str, "train_csv"),
        "test_csv": (str, "test_csv"),
    },
    "model": {
        "conv1_filters": (int, "conv1_filters"),
        "conv2_filters": (int, "conv2_filters"),
        "kernel": (int, "kernel"),
    },
    "sgd": {
        "epochs": (int, "epochs"),
        "base_lr": (float, "base_lr"),
        "momentum": (float, "momentum"),
        "lr_step": (int, "lr_step"),
        "lr_decay": (float, "lr_decay"),
        "batch_size": (int, "batch_size"),
        "float_epochs": (int, "float_epochs"),
        "float_lr": (float, "float_lr"),
        "float_weight_decay": (float, "float_weight_decay"),
    },
    "quant": {
        "method": (str, "method"),
        "scheme": (str, "scheme"),
        "prune_factor": (float, "prune_factor"),
        "quantize_first_layer": (bool, "quantize_first_layer"),
        "quantize_last_layer": (bool, "quantize_last_layer"),
    },
    "mac": {
        "overflow": (str, "mac_overflow"),
    },
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax error: {e}") from None

    values: dict = {}
    overrides: list[tuple[str, str]] = []
    version_seen = None
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if section == "quant" and key.startswith("scheme."):
                overrides.append((key[len("scheme."):], raw.strip()))
                continue
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            typ, attr = _SCHEMA[section][key]
            try:
                if typ is bool:
                    val = _BOOL[raw.strip().lower()]
                else:
                    val = typ(raw.strip())
            except (ValueError, KeyError):
                raise ConfigError(f"bad value {raw!r} for {section}.{key}") from None
            if attr is None:
                version_seen = val
            else:
                values[attr] = val
    if version_seen is None:
        raise ConfigError("missing experiment.version")
    if version_seen != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version_seen}")
    values["scheme_overrides"] = tuple(sorted(overrides))
    try:
        return ExperimentConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def serialize_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, keys in _SCHEMA.items():
        cp.add_section(section)
        for key, (typ, attr) in keys.items():
            if attr is None:
                cp.set(section, key, str(CONFIG_VERSION))
                continue
            val = getattr(cfg, attr)
            cp.set(section, key, str(val).lower() if typ is bool else str(val))
    for layer, scheme in cfg.scheme_overrides:
        cp.set("quant", f"scheme.{layer}", scheme)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_config(path: str, **cli_overrides) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        cfg = parse_config(f.read())
    updates = {k: v for k, v in cli_overrides.items() if v is not None}
    env_out = os.environ.get("POTQ_OUTPUT_DIR")
    if env_out and "output_dir" not in updates:
        updates["output_dir"] = env_out
    if updates:
        try:
            cfg = replace(cfg, **updates)
        except (TypeError, ConfigError) as e:
            raise ConfigError(str(e)) from None
    return cfg
