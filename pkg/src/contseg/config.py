"""Experiment configuration: one JSON file drives every command.

Validation is strict: unknown keys anywhere are rejected so a typo cannot
silently fall back to a default.  The canonical serialized form (sorted
keys, compact separators) is hashed and the hash is recorded in every
output a command writes, which makes any result traceable to the exact
configuration that produced it.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import backbone as bb
from .embeddings import EmbeddingProvider, load_embedding_file
from .engine import METHODS, TrainConfig
from .errors import ConfigError
from .phantoms import (PhantomSpec, StagePlan, default_spec, organ7_spec,
                       three_stage_plan, tumor_spec, two_stage_plan)

OUTPUT_ROOT_ENV = "CONTSEG_OUTPUT_ROOT"

SPEC_PRESETS = {"default": default_spec, "tumor": tumor_spec,
                "organ7": organ7_spec}
PLAN_PRESETS = {"two-stage": two_stage_plan, "three-stage": three_stage_plan}


def _check_keys(doc: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys {unknown} in {where}")


@dataclass
class DatasetConfig:
    plan: str = "two-stage"
    spec: str = "tumor"
    height: int = 64
    width: int = 64
    noise: float = 0.02
    seed: int = 0
    n_per_stage: int = 200
    n_val: int | None = None
    n_test: int | None = None
    n_eval: int = 32

    def build_plan(self) -> StagePlan:
        if self.plan not in PLAN_PRESETS:
            raise ConfigError(f"unknown plan preset {self.plan!r}, "
                              f"have {sorted(PLAN_PRESETS)}")
        return PLAN_PRESETS[self.plan]()

    def build_spec(self) -> PhantomSpec:
        if self.spec not in SPEC_PRESETS:
            raise ConfigError(f"unknown spec preset {self.spec!r}, "
                              f"have {sorted(SPEC_PRESETS)}")
        return SPEC_PRESETS[self.spec](self.height, self.width, self.noise)


@dataclass
class EmbeddingConfig:
    provider: str = "hash"
    dim: int = 32
    seed: int = 0
    file: str | None = None
    normalize: bool = True

    def build_provider(self) -> EmbeddingProvider:
        table = None
        if self.provider == "file":
            if not self.file:
                raise ConfigError("embedding provider 'file' needs a path")
            table = load_embedding_file(self.file)
        return EmbeddingProvider(self.provider, self.dim, seed=self.seed,
                                 table=table, normalize=self.normalize)


@dataclass
class ModelConfig:
    enc_channels: tuple[int, ...] = (16, 32, 64)
    enc_strides: tuple[int, ...] = (1, 2, 2)
    dec_channels: tuple[int, ...] = (32, 16)
    kernel: int = 3
    head_kernel: int = 1
    hyper_hidden: int = 128
    seed: int = 0
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def build_backbone_config(self) -> bb.BackboneConfig:
        return bb.BackboneConfig(
            in_channels=1, enc_channels=tuple(self.enc_channels),
            enc_strides=tuple(self.enc_strides),
            dec_channels=tuple(self.dec_channels), kernel=self.kernel)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    method: str = "ours"
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, "
                              f"have {sorted(METHODS)}")

    def resolved_output_dir(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def to_dict(self) -> dict:
        t = self.train
        return {
            "dataset": {k: getattr(self.dataset, k)
                        for k in DatasetConfig.__dataclass_fields__},
            "model": {
                "enc_channels": list(self.model.enc_channels),
                "enc_strides": list(self.model.enc_strides),
                "dec_channels": list(self.model.dec_channels),
                "kernel": self.model.kernel,
                "head_kernel": self.model.head_kernel,
                "hyper_hidden": self.model.hyper_hidden,
                "seed": self.model.seed,
                "embedding": {k: getattr(self.model.embedding, k)
                              for k in EmbeddingConfig.__dataclass_fields__},
            },
            "train": {"lr": t.lr, "weight_decay": t.weight_decay,
                      "epochs": t.epochs, "batch_size": t.batch_size,
                      "pseudo_mode": t.pseudo_mode, "threshold": t.threshold,
                      "seed": t.seed, "lwf_temperature": t.lwf_temperature,
                      "distill_weight": t.distill_weight,
                      "plop_scales": list(t.plop_scales)},
            "method": self.method,
            "output_dir": self.output_dir,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def config_from_dict(doc: dict) -> ExperimentConfig:
    _check_keys(doc, {"dataset", "model", "train", "method", "output_dir"},
                "config")
    ds_doc = dict(doc.get("dataset", {}))
    _check_keys(ds_doc, set(DatasetConfig.__dataclass_fields__),
                "config.dataset")
    model_doc = dict(doc.get("model", {}))
    _check_keys(model_doc, set(ModelConfig.__dataclass_fields__),
                "config.model")
    emb_doc = dict(model_doc.pop("embedding", {}))
    _check_keys(emb_doc, set(EmbeddingConfig.__dataclass_fields__),
                "config.model.embedding")
    train_doc = dict(doc.get("train", {}))
    _check_keys(train_doc, {"lr", "weight_decay", "epochs", "batch_size",
                            "pseudo_mode", "threshold", "seed",
                            "lwf_temperature", "distill_weight",
                            "plop_scales"}, "config.train")
    for key in ("enc_channels", "enc_strides", "dec_channels"):
        if key in model_doc:
            model_doc[key] = tuple(model_doc[key])
    if "plop_scales" in train_doc:
        train_doc["plop_scales"] = tuple(train_doc["plop_scales"])
    try:
        return ExperimentConfig(
            dataset=DatasetConfig(**ds_doc),
            model=ModelConfig(embedding=EmbeddingConfig(**emb_doc),
                              **model_doc),
            train=TrainConfig(**train_doc),
            method=doc.get("method", "ours"),
            output_dir=doc.get("output_dir", "runs/default"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(doc)
