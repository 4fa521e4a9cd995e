"""Continual-learning trajectory: extension, pseudo-labels, training.

The model is a shared encoder-decoder plus one private hypernetwork per
registered class.  Adding classes never touches existing parameters, so
old-class outputs are bit-identical across an extension.  During stage t,
old classes are supervised by the previous model's own predictions (hard
thresholded or soft 8-bit probabilities), new classes by ground truth;
training minimizes the sum of per-class binary cross-entropies, optionally
plus one of the distillation baselines.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import distill
from .autodiff import Tensor
from .embeddings import ClassDescriptor, ClassRegistry
from .errors import ConfigError, ConsistencyError, FormatError, NumericError
from .heads import (HeadLayout, HypernetMLP, apply_head, bce_loss,
                    generate_head_params, head_param_layout, init_hypernet)
from .phantoms import MultiLabelMask, Sample, Volume
from .rng import SplitMix64, derive_seed

CHECKPOINT_MAGIC = b"CSEG"
CHECKPOINT_VERSION = 1
PSEUDO_FORMAT = "contseg-pseudo-labels"

METHODS = ("ours", "lwf", "ilt", "plop", "finetune")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 30
    batch_size: int = 8
    pseudo_mode: str = "hard"      # hard | soft
    threshold: float = 0.5
    seed: int = 0
    lwf_temperature: float = 2.0
    distill_weight: float | None = None   # None: per-method default
    plop_scales: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.pseudo_mode not in ("hard", "soft"):
            raise ConfigError(f"unknown pseudo-label mode {self.pseudo_mode!r}")


@dataclass
class SegModel:
    """Shared backbone + per-class hypernetworks + the class registry."""

    backbone: bb.BackboneParams
    registry: ClassRegistry
    hypernets: dict[int, HypernetMLP]
    layout: HeadLayout
    hyper_hidden: int
    stage_index: int = 0
    rng: SplitMix64 = field(default_factory=lambda: SplitMix64(0))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(self.backbone.named_parameters())
        for cid in sorted(self.hypernets):
            out += self.hypernets[cid].named_parameters(prefix=f"hyper{cid}.")
        return out

    def astype(self, dtype) -> "SegModel":
        return SegModel(
            backbone=self.backbone.astype(dtype),
            registry=self.registry,
            hypernets={c: h.astype(dtype) for c, h in self.hypernets.items()},
            layout=self.layout, hyper_hidden=self.hyper_hidden,
            stage_index=self.stage_index, rng=SplitMix64(self.rng.state))


def build_model(config: bb.BackboneConfig, embedding_dim: int,
                provider_kind: str, head_kernel: int = 1,
                hyper_hidden: int = 128, seed: int = 0) -> SegModel:
    rng = SplitMix64(seed)
    params = bb.init_backbone(config, rng.fork(1))
    layout = head_param_layout(config.decoder_out_channels, head_kernel)
    return SegModel(
        backbone=params,
        registry=ClassRegistry(dim=embedding_dim, provider_kind=provider_kind),
        hypernets={}, layout=layout, hyper_hidden=hyper_hidden,
        rng=rng.fork(2))


def clone_model(model: SegModel) -> SegModel:
    """Deep copy; cloned tensors are fresh trainable parameters."""
    cloned = SegModel(
        backbone=model.backbone.astype(model_dtype(model)),
        registry=model.registry,
        hypernets={c: h.astype(model_dtype(model))
                   for c, h in model.hypernets.items()},
        layout=model.layout, hyper_hidden=model.hyper_hidden,
        stage_index=model.stage_index, rng=SplitMix64(model.rng.state))
    return cloned


def model_dtype(model: SegModel):
    return model.backbone.enc[0][0].data.dtype if model.backbone.enc else np.float32


def extend_model(model: SegModel, new_classes: list[ClassDescriptor]) -> SegModel:
    """Registers classes and creates their fresh hypernetworks.

    The returned model shares the backbone and all existing hypernetworks
    with the input, so outputs for previously registered classes are
    bit-identical before and after the extension.
    """
    if not new_classes:
        return model
    existing = set(model.registry.ids())
    for desc in new_classes:
        if desc.id in existing:
            raise ConfigError(f"class id {desc.id} already registered")
        if len(desc.embedding) != model.registry.dim:
            raise ConfigError(
                f"class {desc.name!r} embedding length {len(desc.embedding)} "
                f"!= registry dim {model.registry.dim}")
        existing.add(desc.id)
    registry = ClassRegistry(model.registry.dim, model.registry.provider_kind,
                             model.registry.classes + tuple(new_classes))
    in_dim = model.backbone.config.encoder_out_channels + model.registry.dim
    hypernets = dict(model.hypernets)
    for desc in new_classes:
        hypernets[desc.id] = init_hypernet(
            in_dim, model.hyper_hidden, model.layout,
            model.rng.fork(desc.id), dtype=model_dtype(model))
    stage = max([model.stage_index] + [d.stage_introduced for d in new_classes])
    return SegModel(backbone=model.backbone, registry=registry,
                    hypernets=hypernets, layout=model.layout,
                    hyper_hidden=model.hyper_hidden, stage_index=stage,
                    rng=model.rng)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def forward_features(model: SegModel, x: Tensor) -> tuple[list[Tensor], Tensor, list[Tensor]]:
    """All intermediate feature maps: (encoder levels, global feature,
    decoder levels)."""
    cfg = model.backbone.config
    encs = []
    out = x
    for (w, b), stride in zip(model.backbone.enc, cfg.enc_strides):
        out = ad.silu(ad.conv2d(out, w, b, stride=stride))
        encs.append(out)
    f = bb.gap(out)
    decs = []
    for (w, b) in model.backbone.dec:
        out = ad.silu(ad.conv2d(ad.upsample2x(out), w, b, stride=1))
        decs.append(out)
    return encs, f, decs


def class_prob_tensors(model: SegModel, f: Tensor, dec: Tensor,
                       class_ids) -> dict[int, Tensor]:
    probs = {}
    for cid in class_ids:
        desc = model.registry.get(cid)
        theta = generate_head_params(f, desc.embedding, model.hypernets[cid])
        probs[cid] = apply_head(dec, theta, model.layout)
    return probs


def forward_all_classes(model: SegModel, x, class_ids=None) -> dict[int, np.ndarray]:
    """Per-class probability maps [H, W] for one volume, all from a single
    shared encoder/decoder pass."""
    if class_ids is None:
        class_ids = model.registry.ids()
    grid = x.intensities if isinstance(x, Volume) else np.asarray(x)
    with ad.no_grad():
        xt = bb.volume_tensor(grid, dtype=model_dtype(model))
        _, f, decs = forward_features(model, xt)
        dec = decs[-1] if decs else None
        if dec is None:
            raise ConfigError("model has no decoder levels")
        probs = class_prob_tensors(model, f, dec, class_ids)
    return {cid: p.data[0] for cid, p in probs.items()}


def predict(model: SegModel, x, mode: str = "multilabel",
            threshold: float = 0.5):
    """Segment one volume over all accumulated classes.

    multilabel: {class id: binary plane}, thresholded at `threshold`
    (ties count as foreground).  exclusive: one int32 label map; a pixel
    gets the argmax class if its best probability reaches the threshold,
    else 0 (background).  Probability ties go to the lowest class id.
    """
    if not len(model.registry):
        raise ConfigError("model has no registered classes")
    probs = forward_all_classes(model, x)
    if mode == "multilabel":
        return {cid: (p >= threshold).astype(np.uint8)
                for cid, p in probs.items()}
    if mode != "exclusive":
        raise ConfigError(f"unknown prediction mode {mode!r}")
    cids = sorted(probs)
    stack = np.stack([probs[c] for c in cids])
    best = stack.argmax(axis=0)
    labels = np.asarray(cids, dtype=np.int32)[best]
    labels[stack.max(axis=0) < threshold] = 0
    return labels


# ---------------------------------------------------------------------------
# pseudo labels
# ---------------------------------------------------------------------------

@dataclass
class PseudoLabelStore:
    """Old-class supervision for one stage's samples.

    hard mode keeps thresholded binary planes; soft mode keeps probabilities
    quantized to 8 bits (dequantization error at most 1/510).
    """

    mode: str = "hard"
    threshold: float = 0.5
    class_ids: tuple[int, ...] = ()
    provenance: str = ""
    planes: dict[str, dict[int, np.ndarray]] = field(default_factory=dict)

    def __len__(self):
        return len(self.planes)

    def entry(self, sample_id: str) -> dict[int, np.ndarray]:
        """Dequantized float32 target planes for one sample."""
        raw = self.planes[sample_id]
        if self.mode == "hard":
            return {c: p.astype(np.float32) for c, p in raw.items()}
        return {c: p.astype(np.float32) / 255.0 for c, p in raw.items()}


def quantize_probs(p: np.ndarray, mode: str, threshold: float = 0.5) -> np.ndarray:
    """hard: foreground where p >= threshold (ties included); soft: 8-bit
    probability quantization, round(p * 255)."""
    if mode == "hard":
        return (np.asarray(p) >= threshold).astype(np.uint8)
    if mode == "soft":
        return np.round(np.asarray(p) * 255.0).astype(np.uint8)
    raise ConfigError(f"unknown pseudo-label mode {mode!r}")


def precompute_pseudo_labels(old_model: SegModel | None, samples: list[Sample],
                             mode: str = "hard", threshold: float = 0.5,
                             batch_size: int = 16) -> PseudoLabelStore:
    """One pass of the previous-stage model over the new stage's samples.

    With no previous model (the first stage) the store is empty.
    """
    if mode not in ("hard", "soft"):
        raise ConfigError(f"unknown pseudo-label mode {mode!r}")
    if old_model is None or not len(old_model.registry):
        return PseudoLabelStore(mode=mode, threshold=threshold)
    cids = tuple(old_model.registry.ids())
    store = PseudoLabelStore(mode=mode, threshold=threshold, class_ids=cids,
                             provenance=model_hash(old_model))
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        with ad.no_grad():
            xt = bb.batch_tensor([s.volume.intensities for s in batch],
                                 dtype=model_dtype(old_model))
            _, f, decs = forward_features(old_model, xt)
            probs = class_prob_tensors(old_model, f, decs[-1], cids)
        for i, sample in enumerate(batch):
            store.planes[sample.sample_id] = {
                cid: quantize_probs(probs[cid].data[i], mode, threshold)
                for cid in cids}
    return store


def merge_pseudo_labels(gt_new: MultiLabelMask, pseudo_entry: dict[int, np.ndarray],
                        all_class_ids) -> dict[int, np.ndarray]:
    """Training target over all accumulated classes: ground truth for the
    new classes, stored pseudo labels for the old ones."""
    new_ids = set(gt_new.planes)
    old_ids = set(pseudo_entry)
    if new_ids & old_ids:
        raise ConsistencyError(
            f"classes {sorted(new_ids & old_ids)} are both new and old")
    expected = set(all_class_ids)
    if new_ids | old_ids != expected:
        raise ConsistencyError(
            f"planes cover {sorted(new_ids | old_ids)}, expected {sorted(expected)}")
    target = {cid: plane.astype(np.float32) for cid, plane in gt_new.planes.items()}
    for cid, plane in pseudo_entry.items():
        target[cid] = np.asarray(plane, dtype=np.float32)
    return target


def save_pseudo_store(store: PseudoLabelStore, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for sid in sorted(store.planes):
        rel = f"{sid}.u8"
        planes = [store.planes[sid][c] for c in sorted(store.planes[sid])]
        (root / rel).write_bytes(np.concatenate(planes).tobytes()
                                 if planes else b"")
        entries.append({"id": sid, "file": rel,
                        "classes": sorted(store.planes[sid])})
    manifest = {"format": PSEUDO_FORMAT, "version": 1, "mode": store.mode,
                "threshold": store.threshold,
                "class_ids": list(store.class_ids),
                "provenance": store.provenance, "samples": entries}
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_pseudo_store(path, height: int, width: int) -> PseudoLabelStore:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"no pseudo-label manifest under {root}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed pseudo-label manifest: {exc}") from exc
    if manifest.get("format") != PSEUDO_FORMAT:
        raise FormatError("bad pseudo-label store magic")
    store = PseudoLabelStore(
        mode=manifest["mode"], threshold=manifest["threshold"],
        class_ids=tuple(manifest["class_ids"]),
        provenance=manifest["provenance"])
    plane_size = height * width
    for entry in manifest["samples"]:
        raw = np.frombuffer((root / entry["file"]).read_bytes(), dtype=np.uint8)
        cids = entry["classes"]
        if raw.size != len(cids) * plane_size:
            raise FormatError(f"pseudo sample {entry['id']}: wrong buffer size")
        store.planes[entry["id"]] = {
            int(c): raw[i * plane_size:(i + 1) * plane_size]
            .reshape(height, width).copy()
            for i, c in enumerate(cids)}
    return store


# ---------------------------------------------------------------------------
# optimizer and training
# ---------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)


def cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 0:
        return base
    return base * 0.5 * (1.0 + np.cos(np.pi * step / total))


def _distill_default_weight(method: str, n_levels: int) -> float:
    if method == "plop":
        return 0.01 * n_levels
    return 1.0


def train_stage(model: SegModel, samples: list[Sample],
                pseudo: PseudoLabelStore, cfg: TrainConfig,
                method: str = "ours",
                teacher: SegModel | None = None,
                log_rows: list | None = None) -> SegModel:
    """Optimizes all shared parameters and all hypernetworks on one stage.

    ours/lwf/ilt/plop supervise every accumulated class (pseudo labels for
    the old ones); lwf/ilt/plop add their distillation term against the
    frozen teacher.  finetune drops old-class supervision entirely and
    trains only on the stage's ground-truth planes.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if method in ("lwf", "ilt", "plop") and len(pseudo) and teacher is None:
        raise ConfigError(f"method {method!r} needs the previous-stage model")
    if cfg.epochs == 0 or not samples:
        return model

    all_ids = model.registry.ids()
    targets: dict[str, dict[int, np.ndarray]] = {}
    for sample in samples:
        if method == "finetune" or not len(pseudo):
            targets[sample.sample_id] = {
                c: p.astype(np.float32) for c, p in sample.mask.planes.items()}
        else:
            targets[sample.sample_id] = merge_pseudo_labels(
                sample.mask, pseudo.entry(sample.sample_id), all_ids)
    train_ids = sorted(targets[samples[0].sample_id])
    old_ids = sorted(pseudo.class_ids) if len(pseudo) else []

    params = [t for _, t in model.named_parameters()]
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    steps_per_epoch = (len(samples) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    weight = (cfg.distill_weight if cfg.distill_weight is not None
              else _distill_default_weight(method, len(model.backbone.enc)
                                           + len(model.backbone.dec)))
    dtype = model_dtype(model)
    global_step = 0
    for epoch in range(cfg.epochs):
        order = SplitMix64(derive_seed(cfg.seed, model.stage_index * 1_000_003
                                       + epoch)).shuffle(len(samples))
        for start in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            xt = bb.batch_tensor([s.volume.intensities for s in batch],
                                 dtype=dtype)
            encs, f, decs = forward_features(model, xt)
            probs = class_prob_tensors(model, f, decs[-1], train_ids)
            bce_total = ad.add_n([
                bce_loss(probs[cid],
                         np.stack([targets[s.sample_id][cid] for s in batch]))
                for cid in train_ids])
            distill_term = None
            if method in ("lwf", "ilt", "plop") and teacher is not None:
                with ad.no_grad():
                    t_encs, t_f, t_decs = forward_features(teacher, xt)
                    if method == "lwf":
                        t_probs = class_prob_tensors(teacher, t_f, t_decs[-1],
                                                     old_ids)
                if method == "lwf":
                    distill_term = distill.lwf_loss(
                        {c: probs[c] for c in old_ids},
                        {c: t_probs[c].data for c in old_ids},
                        temperature=cfg.lwf_temperature)
                elif method == "ilt":
                    distill_term = distill.ilt_loss(decs[-1], t_decs[-1].data)
                else:
                    distill_term = distill.plop_loss(
                        encs + decs, [t.data for t in t_encs + t_decs],
                        scales=cfg.plop_scales)
            loss = (bce_total if distill_term is None
                    else ad.add(bce_total, ad.scale(distill_term, weight)))
            if not np.isfinite(loss.item()):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {global_step}: "
                    f"bce={bce_total.item()}, "
                    f"distill={None if distill_term is None else distill_term.item()}")
            lr_now = cosine_lr(cfg.lr, global_step, total_steps)
            opt.zero_grad()
            loss.backward()
            opt.step(lr_now)
            if log_rows is not None:
                log_rows.append({
                    "stage": model.stage_index, "epoch": epoch,
                    "step": global_step, "lr": lr_now,
                    "loss": loss.item(), "bce": bce_total.item(),
                    "distill": (0.0 if distill_term is None
                                else distill_term.item())})
            global_step += 1
    return model


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _registry_to_json(reg: ClassRegistry) -> dict:
    return {"dim": reg.dim, "provider_kind": reg.provider_kind,
            "classes": [{"id": c.id, "name": c.name, "prompt": c.prompt,
                         "embedding": [float(x) for x in c.embedding],
                         "stage_introduced": c.stage_introduced}
                        for c in reg.classes]}


def _registry_from_json(doc: dict) -> ClassRegistry:
    return ClassRegistry(
        dim=doc["dim"], provider_kind=doc["provider_kind"],
        classes=tuple(ClassDescriptor(
            id=c["id"], name=c["name"], prompt=c["prompt"],
            embedding=np.asarray(c["embedding"], dtype=np.float64),
            stage_introduced=c["stage_introduced"]) for c in doc["classes"]))


def model_hash(model: SegModel) -> str:
    h = hashlib.sha256()
    for name, t in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data.astype("<f4")).tobytes())
    h.update(json.dumps(_registry_to_json(model.registry),
                        sort_keys=True).encode())
    return h.hexdigest()


def save_checkpoint(model: SegModel, path, extra: dict | None = None) -> None:
    """Versioned binary: magic, JSON header, raw little-endian float32
    parameter buffers in declared order."""
    named = model.named_parameters()
    cfg = model.backbone.config
    header = {
        "version": CHECKPOINT_VERSION,
        "backbone": {"in_channels": cfg.in_channels,
                     "enc_channels": list(cfg.enc_channels),
                     "enc_strides": list(cfg.enc_strides),
                     "dec_channels": list(cfg.dec_channels),
                     "kernel": cfg.kernel},
        "layout": {"kernel": model.layout.kernel,
                   "in_channels": model.layout.in_channels,
                   "widths": list(model.layout.widths)},
        "hyper_hidden": model.hyper_hidden,
        "stage_index": model.stage_index,
        "rng_state": model.rng.state,
        "registry": _registry_to_json(model.registry),
        "buffers": [{"name": n, "shape": list(t.data.shape)} for n, t in named],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data.astype("<f4")).tobytes())


def load_checkpoint(path) -> SegModel:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(raw[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version "
                          f"{header.get('version')!r}")
    cfg = bb.BackboneConfig(
        in_channels=header["backbone"]["in_channels"],
        enc_channels=tuple(header["backbone"]["enc_channels"]),
        enc_strides=tuple(header["backbone"]["enc_strides"]),
        dec_channels=tuple(header["backbone"]["dec_channels"]),
        kernel=header["backbone"]["kernel"])
    layout = head_param_layout(header["layout"]["in_channels"],
                               header["layout"]["kernel"],
                               tuple(header["layout"]["widths"]))
    registry = _registry_from_json(header["registry"])
    model = SegModel(backbone=bb.BackboneParams(cfg), registry=registry,
                     hypernets={}, layout=layout,
                     hyper_hidden=header["hyper_hidden"],
                     stage_index=header["stage_index"],
                     rng=SplitMix64(header["rng_state"]))

    offset = 8 + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["buffers"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(raw):
            raise FormatError(f"truncated buffer {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype="<f4", count=int(np.prod(shape)), offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes in checkpoint")

    def take(name: str, expected: tuple[int, ...]) -> Tensor:
        if name not in arrays:
            raise FormatError(f"missing buffer {name!r}")
        arr = arrays.pop(name)
        if arr.shape != expected:
            raise FormatError(f"buffer {name!r} shape {arr.shape} "
                              f"!= expected {expected}")
        return ad.parameter(arr)

    k = cfg.kernel
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.enc_channels):
        model.backbone.enc.append((take(f"enc{i}.w", (k, k, cin, cout)),
                                   take(f"enc{i}.b", (cout,))))
        cin = cout
    for i, cout in enumerate(cfg.dec_channels):
        model.backbone.dec.append((take(f"dec{i}.w", (k, k, cin, cout)),
                                   take(f"dec{i}.b", (cout,))))
        cin = cout
    in_dim = cfg.encoder_out_channels + registry.dim
    hidden = model.hyper_hidden
    for cid in sorted(c.id for c in registry.classes):
        model.hypernets[cid] = HypernetMLP(
            take(f"hyper{cid}.w1", (in_dim, hidden)),
            take(f"hyper{cid}.b1", (hidden,)),
            take(f"hyper{cid}.w2", (hidden, layout.total)),
            take(f"hyper{cid}.b2", (layout.total,)))
    if arrays:
        raise FormatError(f"unexpected buffers {sorted(arrays)}")
    return model
