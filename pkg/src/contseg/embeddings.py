"""Class-conditioning vectors and the class registry.

Three interchangeable providers produce the fixed-length vector attached to
each class: one-hot indicators, deterministic hash pseudo-embeddings (a
stand-in for a real text encoder during tests), and vectors ingested from a
JSON file produced offline by a text encoder.  Downstream code only sees
the registry, so providers can be swapped without touching the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .rng import SplitMix64, fold_name, mix64

PROMPT_TEMPLATE = "a computerized tomography of a {name}"

PROVIDERS = ("one-hot", "hash", "file")


def prompt_for_class(name: str) -> str:
    if not name:
        raise ValueError("class name must be nonempty")
    return PROMPT_TEMPLATE.format(name=name)


def one_hot_embedding(index: int, n: int) -> np.ndarray:
    if not 0 <= index < n:
        raise ValueError(f"index {index} out of range for size {n}")
    v = np.zeros(n, dtype=np.float64)
    v[index] = 1.0
    return v


def hash_embedding(name: str, dim: int, seed: int = 0) -> np.ndarray:
    """Unit vector drawn from a stream keyed by (name, seed).

    The direction is uniform on the sphere (normalized gaussian draws), so
    distinct names are nearly orthogonal at moderate dimension.
    """
    if dim < 2:
        raise ValueError("embedding dimension must be >= 2")
    stream = SplitMix64(fold_name(name) ^ mix64(seed))
    v = stream.normal((dim,))
    return v / np.linalg.norm(v)


def save_embedding_file(table: dict[str, np.ndarray], path) -> None:
    dims = {len(v) for v in table.values()}
    if len(dims) > 1:
        raise ValueError(f"inconsistent embedding lengths: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    doc = {"dim": dim,
           "classes": {name: [float(x) for x in vec]
                       for name, vec in table.items()}}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_embedding_file(path) -> dict[str, np.ndarray]:
    """Reads {"dim": E, "classes": {name: [floats]}}; validates lengths."""
    def reject_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                raise FormatError(f"duplicate name {key!r} in embedding file")
            seen[key] = value
        return seen

    try:
        doc = json.loads(Path(path).read_text(),
                         object_pairs_hook=reject_duplicates)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed embedding file: {exc}") from exc
    if not isinstance(doc, dict) or "dim" not in doc or "classes" not in doc:
        raise FormatError("embedding file needs 'dim' and 'classes' fields")
    dim = doc["dim"]
    table = {}
    for name, vec in doc["classes"].items():
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (dim,):
            raise FormatError(
                f"class {name!r} has length {arr.shape}, expected ({dim},)")
        table[name] = arr
    return table


@dataclass(frozen=True)
class ClassDescriptor:
    id: int
    name: str
    prompt: str
    embedding: np.ndarray
    stage_introduced: int


class EmbeddingProvider:
    """Resolves a class name (and its eventual id) to a vector."""

    def __init__(self, kind: str, dim: int, seed: int = 0,
                 table: dict[str, np.ndarray] | None = None,
                 normalize: bool = True):
        if kind not in PROVIDERS:
            raise ConfigError(f"unknown embedding provider {kind!r}")
        if kind == "file" and table is None:
            raise ConfigError("file provider needs a loaded table")
        self.kind = kind
        self.dim = dim
        self.seed = seed
        self.table = table or {}
        self.normalize = normalize

    def vector(self, name: str, class_id: int) -> np.ndarray:
        if self.kind == "one-hot":
            # ids start at 1; slot 0 of the one-hot space is id 1
            return one_hot_embedding(class_id - 1, self.dim)
        if self.kind == "hash":
            return hash_embedding(name, self.dim, self.seed)
        if name not in self.table:
            raise ConfigError(f"no embedding for class {name!r} in table")
        v = self.table[name]
        if self.normalize:
            norm = np.linalg.norm(v)
            if norm == 0:
                raise ConfigError(f"zero embedding for class {name!r}")
            v = v / norm
        return v


@dataclass(frozen=True)
class ClassRegistry:
    """Append-only catalog of classes.  Extension returns a new registry;
    existing descriptors are shared unchanged, so ids are never reused or
    reordered."""

    dim: int
    provider_kind: str
    classes: tuple[ClassDescriptor, ...] = ()

    def __len__(self):
        return len(self.classes)

    def ids(self) -> list[int]:
        return [c.id for c in self.classes]

    def get(self, class_id: int) -> ClassDescriptor:
        for c in self.classes:
            if c.id == class_id:
                return c
        raise KeyError(f"unknown class id {class_id}")

    def by_name(self, name: str) -> ClassDescriptor:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(f"unknown class {name!r}")

    def extend(self, names: list[str], stage: int,
               provider: EmbeddingProvider) -> "ClassRegistry":
        if provider.dim != self.dim or provider.kind != self.provider_kind:
            raise ConfigError("provider does not match registry dimensions")
        existing = {c.name for c in self.classes}
        new = list(self.classes)
        next_id = max((c.id for c in self.classes), default=0) + 1
        for name in names:
            if name in existing:
                raise ConfigError(f"class {name!r} already registered")
            existing.add(name)
            new.append(ClassDescriptor(
                id=next_id, name=name, prompt=prompt_for_class(name),
                embedding=np.asarray(provider.vector(name, next_id),
                                     dtype=np.float64),
                stage_introduced=stage))
            next_id += 1
        return ClassRegistry(self.dim, self.provider_kind, tuple(new))
