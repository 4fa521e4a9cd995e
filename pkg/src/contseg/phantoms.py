"""Synthetic staged segmentation datasets ("organ phantoms").

A phantom is a [0,1] intensity grid populated with simple shapes (disks,
annuli, blobs, and lesions inset into a host shape), one shape family per
class.  Masks are multi-label: a lesion pixel is foreground for both the
lesion class and its host class.

Staging mimics a continual trajectory: stage t training samples carry mask
planes only for the classes introduced at stage t, while one held-out
evaluation set is annotated for every class.  All generation is a pure
function of (spec, plan, seed); each sample draws from its own stream
derived from (seed, sample index), so samples could be generated in any
order or in parallel.

On disk a dataset is a directory: a JSON manifest plus one raw little-endian
float32 buffer per image and one raw uint8 buffer per mask (planes
concatenated in the order listed in the manifest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .rng import SplitMix64, derive_seed

FAMILIES = ("disk", "annulus", "blob", "inset-lesion")
HOSTABLE = ("disk", "blob")

MANIFEST_FORMAT = "contseg-phantom-dataset"
MANIFEST_VERSION = 1

_SPLIT_CODES = {"train": 1, "val": 2, "test": 3, "eval": 4}


@dataclass(frozen=True)
class Volume:
    """One intensity grid; values finite and in [0, 1]."""

    intensities: np.ndarray

    def __post_init__(self):
        a = self.intensities
        if a.ndim != 2 or a.shape[0] < 8 or a.shape[1] < 8:
            raise ValueError(f"volume must be at least 8x8, got {a.shape}")
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("intensities must be finite and in [0, 1]")

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


@dataclass(frozen=True)
class MultiLabelMask:
    """Per-class binary planes; planes may overlap (lesion inside host)."""

    planes: dict[int, np.ndarray]

    def class_ids(self) -> list[int]:
        return sorted(self.planes)

    def restricted(self, class_ids) -> "MultiLabelMask":
        keep = set(class_ids)
        return MultiLabelMask({c: p for c, p in self.planes.items() if c in keep})


@dataclass(frozen=True)
class ShapeSpec:
    name: str
    family: str
    band: tuple[float, float]
    size_range: tuple[float, float]
    count_range: tuple[int, int] = (1, 1)
    host: str | None = None


@dataclass(frozen=True)
class PhantomSpec:
    classes: tuple[ShapeSpec, ...]
    height: int = 64
    width: int = 64
    noise: float = 0.02
    background_band: tuple[float, float] = (0.0, 0.1)


def validate_spec(spec: PhantomSpec) -> None:
    if spec.height < 8 or spec.width < 8:
        raise ConfigError("image dims must be at least 8x8")
    if spec.noise < 0:
        raise ConfigError("noise level must be >= 0")
    seen: dict[str, int] = {}
    for idx, cls in enumerate(spec.classes):
        if cls.name in seen:
            raise ConfigError(f"duplicate class name {cls.name!r}")
        if cls.family not in FAMILIES:
            raise ConfigError(f"unknown shape family {cls.family!r}")
        for band in (cls.band, spec.background_band):
            if not (0.0 <= band[0] <= band[1] <= 1.0):
                raise ConfigError(f"intensity band {band} outside [0, 1]")
        if not (0 < cls.size_range[0] <= cls.size_range[1]):
            raise ConfigError(f"bad size range for {cls.name!r}")
        if not (0 <= cls.count_range[0] <= cls.count_range[1]):
            raise ConfigError(f"bad count range for {cls.name!r}")
        if cls.family == "inset-lesion":
            if cls.host is None:
                raise ConfigError(f"lesion class {cls.name!r} declares no host")
            if cls.host not in seen:
                raise ConfigError(
                    f"lesion class {cls.name!r} references host {cls.host!r} "
                    "which is not declared before it")
            host = spec.classes[seen[cls.host]]
            if host.family not in HOSTABLE:
                raise ConfigError(
                    f"host {cls.host!r} must be one of {HOSTABLE}")
        elif cls.host is not None:
            raise ConfigError(f"only inset-lesion classes take a host")
        seen[cls.name] = idx


def class_id_map(spec: PhantomSpec) -> dict[str, int]:
    """Stable ids: 1-based declaration order."""
    return {cls.name: i + 1 for i, cls in enumerate(spec.classes)}


def _disk(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def generate_phantom(spec: PhantomSpec, seed: int) -> tuple[Volume, MultiLabelMask]:
    """One fully annotated sample; deterministic in (spec, seed)."""
    validate_spec(spec)
    rng = SplitMix64(seed)
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    def paint(canvas, mask, band):
        lo, hi = band
        mid = 0.5 * (lo + hi)
        vals = mid + spec.noise * rng.normal((int(mask.sum()),))
        canvas[mask] = np.clip(vals, lo, hi)

    canvas = np.empty((h, w), dtype=np.float64)
    paint(canvas, np.ones((h, w), dtype=bool), spec.background_band)

    planes = {cid: np.zeros((h, w), dtype=np.uint8)
              for cid in class_id_map(spec).values()}
    # hostable instances seen so far: name -> list of (cy, cx, core radius)
    anchors: dict[str, list[tuple[float, float, float]]] = {}

    for cls, cid in zip(spec.classes, class_id_map(spec).values()):
        count = rng.integers(cls.count_range[0], cls.count_range[1])
        for _ in range(count):
            r = rng.uniform((), cls.size_range[0], cls.size_range[1])
            if cls.family == "inset-lesion":
                hosts = anchors.get(cls.host, [])
                if not hosts:
                    continue
                hy, hx, hr = hosts[rng.integers(0, len(hosts) - 1)]
                r = min(r, 0.7 * hr)
                dist = rng.uniform((), 0.0, hr - r)
                theta = rng.uniform((), 0.0, 2.0 * np.pi)
                cy, cx = hy + dist * np.sin(theta), hx + dist * np.cos(theta)
                region = _disk(yy, xx, cy, cx, r)
            else:
                margin = min(r, h / 2 - 1, w / 2 - 1)
                cy = rng.uniform((), margin, h - 1 - margin)
                cx = rng.uniform((), margin, w - 1 - margin)
                if cls.family == "disk":
                    region = _disk(yy, xx, cy, cx, r)
                elif cls.family == "annulus":
                    outer = _disk(yy, xx, cy, cx, r)
                    inner = _disk(yy, xx, cy, cx, 0.5 * r)
                    region = outer & ~inner
                else:  # blob: a core disk plus two offset satellites
                    region = _disk(yy, xx, cy, cx, r)
                    for _ in range(2):
                        ang = rng.uniform((), 0.0, 2.0 * np.pi)
                        region |= _disk(yy, xx, cy + 0.55 * r * np.sin(ang),
                                        cx + 0.55 * r * np.cos(ang), 0.65 * r)
                if cls.family in HOSTABLE:
                    anchors.setdefault(cls.name, []).append((cy, cx, r))
            paint(canvas, region, cls.band)
            planes[cid][region] = 1

    vol = Volume(np.clip(canvas, 0.0, 1.0).astype(np.float32))
    return vol, MultiLabelMask(planes)


# ---------------------------------------------------------------------------
# staged trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanStage:
    name: str
    new_classes: tuple[str, ...]


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[PlanStage, ...]

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("a plan needs at least one stage")
        seen: set[str] = set()
        for stage in self.stages:
            if not stage.new_classes:
                raise ConfigError(f"stage {stage.name!r} introduces no classes")
            for name in stage.new_classes:
                if name in seen:
                    raise ConfigError(
                        f"class {name!r} appears in more than one stage")
                seen.add(name)

    def all_classes(self) -> list[str]:
        return [n for s in self.stages for n in s.new_classes]

    def classes_through(self, step: int) -> list[str]:
        return [n for s in self.stages[:step] for n in s.new_classes]

    def stage_of(self, name: str) -> int:
        for i, stage in enumerate(self.stages, start=1):
            if name in stage.new_classes:
                return i
        raise KeyError(name)


def validate_plan(plan: StagePlan, spec: PhantomSpec) -> None:
    declared = {c.name: c for c in spec.classes}
    for name in plan.all_classes():
        if name not in declared:
            raise ConfigError(f"plan class {name!r} not declared in the spec")
    for name, cls in declared.items():
        if cls.family == "inset-lesion" and name in plan.all_classes():
            if cls.host not in plan.all_classes():
                continue
            if plan.stage_of(cls.host) > plan.stage_of(name):
                raise ConfigError(
                    f"lesion {name!r} appears before its host {cls.host!r}")


@dataclass
class Sample:
    sample_id: str
    volume: Volume
    mask: MultiLabelMask


@dataclass
class StageData:
    index: int
    name: str
    new_class_ids: tuple[int, ...]
    train: list[Sample] = field(default_factory=list)
    val: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)


@dataclass
class StagedDataset:
    spec: PhantomSpec
    plan: StagePlan
    seed: int
    n_per_stage: int
    class_ids: dict[str, int]
    stages: list[StageData]
    eval_set: list[Sample]

    def class_names(self) -> dict[int, str]:
        return {cid: name for name, cid in self.class_ids.items()}

    def groups(self) -> dict[str, list[int]]:
        """Class-id groups per plan stage, in introduction order."""
        return {s.name: [self.class_ids[n] for n in s.new_classes]
                for s in self.plan.stages}

    def group_steps(self) -> dict[str, int]:
        return {s.name: i for i, s in enumerate(self.plan.stages, start=1)}


def _sample_key(stage: int, split: str, index: int) -> int:
    return (stage << 32) | (_SPLIT_CODES[split] << 24) | index


def make_staged_dataset(plan: StagePlan, spec: PhantomSpec, n_per_stage: int,
                        seed: int, n_val: int | None = None,
                        n_test: int | None = None,
                        n_eval: int = 32) -> StagedDataset:
    """Builds the full continual trajectory dataset.

    Stage-t training/val/test masks are restricted to the classes that stage
    introduces; the evaluation set keeps every planned class.
    """
    validate_spec(spec)
    validate_plan(plan, spec)
    if n_per_stage < 1:
        raise ConfigError("n_per_stage must be >= 1")
    n_val = max(2, n_per_stage // 10) if n_val is None else n_val
    n_test = max(2, n_per_stage // 10) if n_test is None else n_test
    ids = class_id_map(spec)
    planned = [ids[n] for n in plan.all_classes()]

    def make_samples(stage: int, split: str, count: int, keep_ids) -> list[Sample]:
        out = []
        for i in range(count):
            vol, mask = generate_phantom(
                spec, derive_seed(seed, _sample_key(stage, split, i)))
            sid = f"s{stage}-{split}-{i:05d}"
            out.append(Sample(sid, vol, mask.restricted(keep_ids)))
        return out

    stages = []
    for t, stage in enumerate(plan.stages, start=1):
        new_ids = tuple(ids[n] for n in stage.new_classes)
        stages.append(StageData(
            index=t, name=stage.name, new_class_ids=new_ids,
            train=make_samples(t, "train", n_per_stage, new_ids),
            val=make_samples(t, "val", n_val, new_ids),
            test=make_samples(t, "test", n_test, new_ids)))
    eval_set = make_samples(0, "eval", n_eval, planned)
    return StagedDataset(spec=spec, plan=plan, seed=seed,
                         n_per_stage=n_per_stage, class_ids=ids,
                         stages=stages, eval_set=eval_set)


# ---------------------------------------------------------------------------
# default specs and plans
# ---------------------------------------------------------------------------

def default_spec(height: int = 64, width: int = 64, noise: float = 0.02) -> PhantomSpec:
    """Three organ-like classes: one disk, one blob, one annulus."""
    return PhantomSpec(classes=(
        ShapeSpec("liver", "blob", (0.55, 0.65), (10.0, 15.0)),
        ShapeSpec("spleen", "disk", (0.30, 0.40), (5.0, 9.0)),
        ShapeSpec("kidney", "annulus", (0.75, 0.85), (7.0, 10.0)),
    ), height=height, width=width, noise=noise)


def tumor_spec(height: int = 64, width: int = 64, noise: float = 0.02) -> PhantomSpec:
    """The default organs plus a dark lesion inset into the liver blob."""
    base = default_spec(height, width, noise)
    lesion = ShapeSpec("tumor", "inset-lesion", (0.13, 0.23), (3.0, 5.0),
                       host="liver")
    return replace(base, classes=base.classes + (lesion,))


def organ7_spec(height: int = 64, width: int = 64, noise: float = 0.02) -> PhantomSpec:
    """Seven classes grouped 3/2/2 across the three-stage plan."""
    base = default_spec(height, width, noise)
    extra = (
        ShapeSpec("stomach", "blob", (0.42, 0.52), (7.0, 11.0)),
        ShapeSpec("colon", "blob", (0.86, 0.96), (6.0, 9.0)),
        ShapeSpec("aorta", "disk", (0.93, 1.00), (2.0, 4.0)),
        ShapeSpec("vein", "annulus", (0.18, 0.28), (3.0, 5.0)),
    )
    return replace(base, classes=base.classes + extra)


def two_stage_plan() -> StagePlan:
    """Organs first, one tumor class second (public-data-like trajectory)."""
    return StagePlan((
        PlanStage("organs", ("liver", "spleen", "kidney")),
        PlanStage("tumor", ("tumor",)),
    ))


def three_stage_plan() -> StagePlan:
    """3/2/2 class groups across three stages."""
    return StagePlan((
        PlanStage("organs", ("liver", "spleen", "kidney")),
        PlanStage("gastro", ("stomach", "colon")),
        PlanStage("vessels", ("aorta", "vein")),
    ))


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def _spec_to_json(spec: PhantomSpec) -> dict:
    return {
        "height": spec.height, "width": spec.width, "noise": spec.noise,
        "background_band": list(spec.background_band),
        "classes": [{
            "name": c.name, "family": c.family, "band": list(c.band),
            "size_range": list(c.size_range),
            "count_range": list(c.count_range), "host": c.host,
        } for c in spec.classes],
    }


def _spec_from_json(doc: dict) -> PhantomSpec:
    return PhantomSpec(
        classes=tuple(ShapeSpec(
            name=c["name"], family=c["family"], band=tuple(c["band"]),
            size_range=tuple(c["size_range"]),
            count_range=tuple(c["count_range"]), host=c.get("host"))
            for c in doc["classes"]),
        height=doc["height"], width=doc["width"], noise=doc["noise"],
        background_band=tuple(doc["background_band"]))


def save_dataset(ds: StagedDataset, path) -> None:
    root = Path(path)
    (root / "samples").mkdir(parents=True, exist_ok=True)

    def write_sample(sample: Sample) -> dict:
        img_rel = f"samples/{sample.sample_id}.img.f32"
        mask_rel = f"samples/{sample.sample_id}.mask.u8"
        (root / img_rel).write_bytes(
            sample.volume.intensities.astype("<f4").tobytes())
        order = sample.mask.class_ids()
        planes = [sample.mask.planes[c].astype(np.uint8) for c in order]
        data = np.concatenate(planes).tobytes() if planes else b""
        (root / mask_rel).write_bytes(data)
        return {"id": sample.sample_id, "image": img_rel, "mask": mask_rel,
                "mask_classes": order}

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "seed": ds.seed,
        "n_per_stage": ds.n_per_stage,
        "spec": _spec_to_json(ds.spec),
        "plan": [{"name": s.name, "new_classes": list(s.new_classes)}
                 for s in ds.plan.stages],
        "class_ids": {name: cid for name, cid in ds.class_ids.items()},
        "stages": [{
            "index": st.index, "name": st.name,
            "new_class_ids": list(st.new_class_ids),
            "train": [write_sample(s) for s in st.train],
            "val": [write_sample(s) for s in st.val],
            "test": [write_sample(s) for s in st.test],
        } for st in ds.stages],
        "eval": [write_sample(s) for s in ds.eval_set],
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> StagedDataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(
            f"bad dataset magic: format={manifest.get('format')!r}")
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported version {manifest.get('version')!r}")
    spec = _spec_from_json(manifest["spec"])
    h, w = spec.height, spec.width

    def read_sample(entry: dict) -> Sample:
        img = np.frombuffer((root / entry["image"]).read_bytes(), dtype="<f4")
        if img.size != h * w:
            raise FormatError(
                f"image {entry['id']}: expected {h * w} floats, got {img.size}")
        order = entry["mask_classes"]
        raw = np.frombuffer((root / entry["mask"]).read_bytes(), dtype=np.uint8)
        if raw.size != len(order) * h * w:
            raise FormatError(
                f"mask {entry['id']}: expected {len(order)} planes of "
                f"{h * w} bytes, got {raw.size} bytes")
        planes = {}
        for i, cid in enumerate(order):
            planes[int(cid)] = raw[i * h * w:(i + 1) * h * w].reshape(h, w).copy()
        return Sample(entry["id"], Volume(img.reshape(h, w).copy()),
                      MultiLabelMask(planes))

    plan = StagePlan(tuple(PlanStage(s["name"], tuple(s["new_classes"]))
                           for s in manifest["plan"]))
    stages = [StageData(
        index=st["index"], name=st["name"],
        new_class_ids=tuple(st["new_class_ids"]),
        train=[read_sample(e) for e in st["train"]],
        val=[read_sample(e) for e in st["val"]],
        test=[read_sample(e) for e in st["test"]],
    ) for st in manifest["stages"]]
    return StagedDataset(
        spec=spec, plan=plan, seed=manifest["seed"],
        n_per_stage=manifest["n_per_stage"],
        class_ids={k: int(v) for k, v in manifest["class_ids"].items()},
        stages=stages, eval_set=[read_sample(e) for e in manifest["eval"]])


# ---------------------------------------------------------------------------
# equality helpers (numpy fields defeat dataclass ==)
# ---------------------------------------------------------------------------

def samples_equal(a: Sample, b: Sample) -> bool:
    return (a.sample_id == b.sample_id
            and np.array_equal(a.volume.intensities, b.volume.intensities)
            and a.mask.class_ids() == b.mask.class_ids()
            and all(np.array_equal(a.mask.planes[c], b.mask.planes[c])
                    for c in a.mask.class_ids()))


def datasets_equal(a: StagedDataset, b: StagedDataset) -> bool:
    if (a.spec != b.spec or a.plan != b.plan or a.seed != b.seed
            or a.n_per_stage != b.n_per_stage or a.class_ids != b.class_ids):
        return False
    if len(a.stages) != len(b.stages) or len(a.eval_set) != len(b.eval_set):
        return False
    for sa, sb in zip(a.stages, b.stages):
        if (sa.index, sa.name, sa.new_class_ids) != (sb.index, sb.name, sb.new_class_ids):
            return False
        for split in ("train", "val", "test"):
            la, lb = getattr(sa, split), getattr(sb, split)
            if len(la) != len(lb) or not all(map(samples_equal, la, lb)):
                return False
    return all(map(samples_equal, a.eval_set, b.eval_set))
