"""Experiment configs and the end-to-end run path.

A config is a JSON object; unknown keys anywhere in it are rejected so a
typo cannot silently fall back to a default. Documented defaults:
activation b_init -1, momentum 0.9, weight_decay 1e-4, base_lr 0.1,
batch_size 128, lr decay factor 0.1.

    {
      "architecture": "lenetpp",          # smallnet | smallnet-mini | lenetpp | mini-resnet
      "activation": {"kind": "frelu", "b_init": -1.0},
      "use_bn": false,                    # smallnet variants only
      "dataset": {"id": "mnist", "train_images": "...", "train_labels": "...",
                  "test_images": "...", "test_labels": "...",
                  "train_subset": 4096, "test_subset": 2000, "subset_seed": 77},
      "seed": 1, "epochs": 20, "batch_size": 128,
      "base_lr": 0.08, "milestones": [12, 17],
      "out_dir": "runs/demo"
    }

The synthetic dataset id replaces the mnist path block with
{"id": "synthetic", "classes": 3, "per_class": 200, "per_class_test": 50,
 "dim": 12, "separation": 3.0, "data_seed": 7}.

For lenetpp the configured activation is the one on the 2-unit embedding
layer (everything else is ReLU); for mini-resnet, "block_variant" picks
the residual wiring. "conv_channels" overrides the conv stage widths for
desk-scale runs.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .activations import KINDS, ActivationSpec
from .data import LabeledDataset, load_mnist_idx, synthetic_gaussians
from .layers import BLOCK_VARIANTS
from .networks import (
    build_lenetpp,
    build_mini_resnet,
    build_smallnet,
    build_smallnet_mini,
)
from .training import LrSchedule, train_network

ARCHITECTURE_IDS = ("smallnet", "smallnet-mini", "lenetpp", "mini-resnet")


class ConfigError(ValueError):
    """Invalid or unresolvable experiment configuration."""


_TOP_KEYS = {"architecture", "activation", "use_bn", "dataset", "seed", "epochs",
             "batch_size", "base_lr", "milestones", "lr_factor", "momentum",
             "weight_decay", "out_dir", "block_variant", "conv_channels"}
_ACT_KEYS = {"kind", "b_init", "k_init", "alpha", "delta_init"}
_DATASET_KEYS = {
    "mnist": {"id", "train_images", "train_labels", "test_images", "test_labels",
              "train_subset", "test_subset", "subset_seed"},
    "synthetic": {"id", "classes", "per_class", "per_class_test", "dim",
                  "separation", "data_seed"},
}


def _reject_unknown(mapping, allowed, where):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {sorted(unknown)}")


@dataclass
class TrainConfig:
    architecture: str
    dataset: dict
    epochs: int
    activation: ActivationSpec = field(default_factory=lambda: ActivationSpec("relu"))
    use_bn: bool = False
    seed: int = 0
    batch_size: int = 128
    base_lr: float = 0.1
    milestones: tuple = ()
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    out_dir: str = None
    block_variant: str = "original"
    conv_channels: tuple = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURE_IDS:
            raise ConfigError(f"unknown architecture {self.architecture!r}, "
                              f"expected one of {ARCHITECTURE_IDS}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.block_variant not in BLOCK_VARIANTS:
            raise ConfigError(f"unknown block_variant {self.block_variant!r}")
        self.milestones = tuple(self.milestones)
        if self.conv_channels is not None:
            self.conv_channels = tuple(int(c) for c in self.conv_channels)

    def schedule(self):
        return LrSchedule(self.base_lr, self.milestones, self.lr_factor)


def parse_config(doc):
    """Validate a decoded JSON object and build a TrainConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "config")
    for key in ("architecture", "dataset", "epochs"):
        if key not in doc:
            raise ConfigError(f"config is missing required key {key!r}")

    act_doc = doc.get("activation", {"kind": "relu"})
    _reject_unknown(act_doc, _ACT_KEYS, "activation")
    kind = act_doc.get("kind", "relu")
    if kind not in KINDS:
        raise ConfigError(f"unknown activation kind {kind!r}, expected one of {KINDS}")
    try:
        act = ActivationSpec(kind, b=act_doc.get("b_init"), k=act_doc.get("k_init"),
                             alpha=act_doc.get("alpha"), delta=act_doc.get("delta_init"))
    except ValueError as err:
        raise ConfigError(str(err)) from err

    ds = doc["dataset"]
    if not isinstance(ds, dict) or "id" not in ds:
        raise ConfigError("dataset must be an object with an 'id' key")
    if ds["id"] not in _DATASET_KEYS:
        raise ConfigError(f"unknown dataset id {ds['id']!r}, expected one of "
                          f"{sorted(_DATASET_KEYS)}")
    _reject_unknown(ds, _DATASET_KEYS[ds["id"]], f"dataset[{ds['id']}]")

    try:
        return TrainConfig(
            architecture=doc["architecture"],
            dataset=ds,
            epochs=int(doc["epochs"]),
            activation=act,
            use_bn=bool(doc.get("use_bn", False)),
            seed=int(doc.get("seed", 0)),
            batch_size=int(doc.get("batch_size", 128)),
            base_lr=float(doc.get("base_lr", 0.1)),
            milestones=doc.get("milestones", ()),
            lr_factor=float(doc.get("lr_factor", 0.1)),
            momentum=float(doc.get("momentum", 0.9)),
            weight_decay=float(doc.get("weight_decay", 1e-4)),
            out_dir=doc.get("out_dir"),
            block_variant=doc.get("block_variant", "original"),
            conv_channels=doc.get("conv_channels"),
        )
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from err


def load_config(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(doc)


def resolve_datasets(config):
    """Materialize (train, test) datasets from the config's dataset block."""
    ds = config.dataset
    if ds["id"] == "mnist":
        for key in ("train_images", "train_labels"):
            if key not in ds:
                raise ConfigError(f"mnist dataset needs {key!r}")
        train = load_mnist_idx(ds["train_images"], ds["train_labels"])
        test = None
        if "test_images" in ds:
            test = load_mnist_idx(ds["test_images"], ds["test_labels"])
        subset_seed = int(ds.get("subset_seed", 0))
        train = train.sample(ds.get("train_subset"), seed=subset_seed)
        if test is not None:
            test = test.sample(ds.get("test_subset"), seed=subset_seed + 1)
        return train, test
    classes = int(ds.get("classes", 3))
    per_class = int(ds.get("per_class", 200))
    per_class_test = int(ds.get("per_class_test", max(1, per_class // 4)))
    dim = int(ds.get("dim", 12))
    separation = float(ds.get("separation", 3.0))
    data_seed = int(ds.get("data_seed", 0))
    train = synthetic_gaussians(classes, per_class, dim, seed=data_seed, separation=separation)
    test = synthetic_gaussians(classes, per_class_test, dim, seed=data_seed + 1,
                               separation=separation)
    return train, test


def build_network(config, train_ds):
    in_shape = train_ds.images.shape[1:]
    n_classes = train_ds.class_count
    act = config.activation
    if config.architecture == "smallnet":
        kwargs = {}
        if config.conv_channels:
            kwargs["conv_channels"] = config.conv_channels
        return build_smallnet(act, config.use_bn, n_classes, in_shape=in_shape, **kwargs)
    if config.architecture == "smallnet-mini":
        return build_smallnet_mini(act, config.use_bn, n_classes, in_shape=in_shape)
    if config.architecture == "lenetpp":
        kwargs = {}
        if config.conv_channels:
            kwargs["conv_channels"] = config.conv_channels
        return build_lenetpp(act, in_shape=in_shape, num_classes=n_classes, **kwargs)
    if config.architecture == "mini-resnet":
        return build_mini_resnet(config.block_variant, act, n_classes, in_shape=in_shape)
    raise AssertionError(config.architecture)


def _check_batch_norm_batches(config, net, train_ds):
    # BN train mode cannot normalize a single-sample batch, so the final
    # short batch must not have size 1.
    has_bn = (config.use_bn or config.architecture in ("mini-resnet", "lenetpp"))
    if has_bn and len(train_ds) % config.batch_size == 1:
        raise ConfigError(
            f"batch_size {config.batch_size} leaves a size-1 final batch over "
            f"{len(train_ds)} examples, which batch norm cannot process; "
            "adjust batch_size or the dataset size")
    if has_bn and config.batch_size == 1:
        raise ConfigError("batch norm needs batch_size >= 2")


def train(config, train_data=None, test_data=None):
    """Run one experiment from its config; returns the TrainReport."""
    if train_data is None:
        train_data, resolved_test = resolve_datasets(config)
        if test_data is None:
            test_data = resolved_test
    net = build_network(config, train_data)
    _check_batch_norm_batches(config, net, train_data)
    return train_network(
        net, train_data, test_data,
        seed=config.seed, epochs=config.epochs, batch_size=config.batch_size,
        schedule=config.schedule(), momentum=config.momentum,
        weight_decay=config.weight_decay)
