"""Experiment configuration (JSON, unknown keys rejected).

Example::

    {
      "dataset": {"source": "synthetic",
                  "synthetic": {"n_classes": 2, "dim": 64, "n_per_class": 250,
                                "separation": 10.0, "test_per_class": 100},
                  "seed": 0},
      "model": {"architecture": "mlp", "hidden": [16], "schemes": ["baseline", "acm"]},
      "device": {"bits": [2, 3], "nonlinearity": 0.0},
      "training": {"lr": 0.1, "epochs": 3, "batch_size": 32, "seeds": [0]},
      "eval": {"sigmas": [0.0, 0.15], "n_samples": 25},
      "output": {"directory": "runs/smoke", "formats": ["csv", "jsonl"]}
    }

``device.bits`` and ``device.nonlinearity`` may be lists; the run grid is
their product with ``model.schemes`` and ``training.seeds``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import Dataset, load_idx, subset, synthetic_blobs
from .device import DeviceModel
from .errors import ConfigError, XbarError
from .network import ARCHITECTURES, LayerSpec, TrainConfig, mlp, parse_mapping, small_cnn

SECTIONS = {
    "dataset": {"source", "idx", "synthetic", "train_subset", "test_subset", "seed"},
    "model": {"architecture", "hidden", "layers", "schemes"},
    "device": {"bits", "nonlinearity", "g_max", "variation_sigma", "activation_bits"},
    "training": {"lr", "epochs", "batch_size", "seed", "seeds"},
    "eval": {"sigmas", "n_samples"},
    "output": {"directory", "formats"},
}
IDX_KEYS = {"train_images", "train_labels", "test_images", "test_labels", "n_classes"}
SYNTHETIC_KEYS = {"n_classes", "dim", "n_per_class", "test_per_class", "separation"}
DEFAULT_SIGMAS = (0.0, 0.05, 0.10, 0.15, 0.20)
FORMATS = ("csv", "jsonl")


def _reject_unknown(d, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    for key in d:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown config key '{name}'")


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass(frozen=True)
class SweepPoint:
    scheme: str
    device: DeviceModel
    seed: int

    @property
    def tag(self) -> str:
        bits = "fp32" if self.device.bits is None else f"b{self.device.bits}"
        return f"{self.scheme}_{bits}_nu{self.device.nonlinearity:g}_seed{self.seed}"


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "ExperimentConfig":
        cfg = cls(raw, Path(base_dir) if base_dir is not None else Path.cwd())
        cfg.validate()
        return cfg

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    def validate(self) -> None:
        _reject_unknown(self.raw, SECTIONS, "")
        for name, keys in SECTIONS.items():
            _reject_unknown(self.section(name), keys, name)
        ds = self.section("dataset")
        source = ds.get("source", "synthetic")
        if source not in ("idx", "synthetic"):
            raise ConfigError(f"dataset.source must be 'idx' or 'synthetic', got {source!r}")
        _reject_unknown(ds.get("idx", {}), IDX_KEYS, "dataset.idx")
        _reject_unknown(ds.get("synthetic", {}), SYNTHETIC_KEYS, "dataset.synthetic")
        if source == "idx":
            missing = IDX_KEYS - {"n_classes"} - set(ds.get("idx", {}))
            if missing:
                raise ConfigError(f"dataset.idx is missing {sorted(missing)}")
        training = self.section("training")
        if "seed" in training and "seeds" in training:
            raise ConfigError("give either training.seed or training.seeds, not both")
        for fmt in self.formats:
            if fmt not in FORMATS:
                raise ConfigError(f"unknown output format {fmt!r}")
        try:
            self.schemes
            self.layer_specs()
            self.sweep()
            self.train_config(0)
            self.sigmas
        except ConfigError:
            raise
        except (XbarError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    # -- model -------------------------------------------------------------
    @property
    def schemes(self) -> list[str]:
        return [parse_mapping(s) for s in _as_list(self.section("model").get("schemes", ["acm"]))]

    def layer_specs(self) -> list[LayerSpec]:
        model = self.section("model")
        if "layers" in model:
            return [LayerSpec.from_dict(d) for d in model["layers"]]
        arch = model.get("architecture", "mlp")
        if arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {arch!r}; expected one of {sorted(ARCHITECTURES)}")
        n_features, n_classes, image_hw = self._data_shape()
        if arch == "mlp":
            return mlp([n_features, *model.get("hidden", [128]), n_classes])
        if image_hw is None:
            raise ConfigError("the cnn architecture needs image-shaped (IDX) data")
        return small_cnn(n_classes, image_hw)

    def _data_shape(self):
        ds = self.section("dataset")
        if ds.get("source", "synthetic") == "synthetic":
            syn = ds.get("synthetic", {})
            return syn.get("dim", 64), syn.get("n_classes", 2), None
        return 784, ds["idx"].get("n_classes", 10), (28, 28)

    # -- device / training ------------------------------------------------
    def devices(self) -> list[DeviceModel]:
        dev = self.section("device")
        fixed = {k: dev[k] for k in ("g_max", "variation_sigma", "activation_bits") if k in dev}
        return [
            DeviceModel(bits=b, nonlinearity=float(nu), **fixed)
            for b, nu in itertools.product(_as_list(dev.get("bits", None)),
                                           _as_list(dev.get("nonlinearity", 0.0)))
        ]

    @property
    def seeds(self) -> list[int]:
        training = self.section("training")
        seeds = _as_list(training.get("seeds", training.get("seed", 0)))
        if not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
            raise ConfigError("training seeds must be non-negative integers")
        return seeds

    def train_config(self, seed: int) -> TrainConfig:
        t = self.section("training")
        return TrainConfig(lr=t.get("lr", 0.1), epochs=t.get("epochs", 15),
                           batch_size=t.get("batch_size", 32), seed=seed)

    def sweep(self) -> list[SweepPoint]:
        return [
            SweepPoint(scheme, device, seed)
            for device in self.devices()
            for scheme in self.schemes
            for seed in self.seeds
        ]

    # -- eval / output ----------------------------------------------------
    @property
    def sigmas(self) -> list[float]:
        sigmas = [float(s) for s in self.section("eval").get("sigmas", DEFAULT_SIGMAS)]
        if any(s < 0 for s in sigmas):
            raise ConfigError("eval.sigmas must be non-negative")
        return sigmas

    @property
    def n_samples(self) -> int:
        return int(self.section("eval").get("n_samples", 25))

    @property
    def output_dir(self) -> Path:
        return self._resolve(self.section("output").get("directory", "runs/default"))

    @property
    def formats(self) -> list[str]:
        return list(self.section("output").get("formats", FORMATS))

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    # -- data -------------------------------------------------------------
    def datasets(self) -> tuple[Dataset, Dataset]:
        """(train, test) per the dataset section; deterministic."""
        ds = self.section("dataset")
        seed = ds.get("seed", 0)
        if ds.get("source", "synthetic") == "synthetic":
            syn = ds.get("synthetic", {})
            common = dict(n_classes=syn.get("n_classes", 2), dim=syn.get("dim", 64),
                          separation=syn.get("separation", 10.0))
            train = synthetic_blobs(n_per_class=syn.get("n_per_class", 250), seed=seed,
                                    split="train", **common)
            test = synthetic_blobs(n_per_class=syn.get("test_per_class", 100), seed=seed + 1,
                                   split="test", **common)
        else:
            idx = ds["idx"]
            n_classes = idx.get("n_classes", 10)
            train = load_idx(self._resolve(idx["train_images"]), self._resolve(idx["train_labels"]),
                             n_classes, "train")
            test = load_idx(self._resolve(idx["test_images"]), self._resolve(idx["test_labels"]),
                            n_classes, "test")
        if ds.get("train_subset") is not None:
            train = subset(train, ds["train_subset"], seed)
        if ds.get("test_subset") is not None:
            test = subset(test, ds["test_subset"], seed + 1)
        return train, test
