"""Synthetic reference/target pair datasets built from segmentation-annotated images.

Original images serve as target frames. The matching reference frame is the
same image with a filtered copy of one instance overlaid, either in place
(a correctly followed instruction) or displaced by half to one bounding-box
side per axis (an error). Alongside the composite reference, each sample
stores the virtual layer alone (the overlay on black), which is what the
server segments with a binary filter.

On-disk layout under a dataset root::

    sources/<source_id>.png          target frames, shared between samples
    labels/<source_id>.json          instance index for the oracle
    labels/<source_id>/<k>.png       instance masks (0/255)
    <split>/<index>_ref.png          composite reference frame
    <split>/<index>_virt.png         virtual layer
    <split>/<index>_refmask.png      ground-truth reference mask
    <split>.json                     manifest (relative paths, CRC-32 per file)
"""

from __future__ import annotations

import json
import threading
import zlib
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import (
    ChecksumMismatch,
    InstanceNotInImage,
    InsufficientSources,
    ManifestCorrupt,
    MissingFile,
    UnshiftableInstance,
)
from .geometry import Point2, sample_plane_points
from .imaging import Frame, Mask, load_frame, load_mask, save_frame, save_mask
from .segmentation import InstanceLabel
from .verification import iou

MANIFEST_SCHEMA = "mrverify.manifest/1"
SPLITS = ("val", "test")
MAX_SHIFT_ATTEMPTS = 16


@dataclass(frozen=True)
class AnnotatedImage:
    image: Frame
    instances: tuple[InstanceLabel, ...]
    source_id: str

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        for inst in self.instances:
            if inst.mask.size != self.image.size:
                raise InstanceNotInImage(
                    f"{self.source_id}: instance mask {inst.mask.size} vs image {self.image.size}"
                )


@dataclass(frozen=True)
class OverlayFilter:
    """Look of a rendered virtual object: tint blend, then desaturate, then brighten."""

    tint: tuple[int, int, int] = (64, 160, 255)
    tint_alpha: float = 0.6
    brightness_delta: int = 20
    saturation_scale: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.tint_alpha <= 1.0:
            raise ValueError("tint_alpha must be in [0, 1]")
        if not -128 <= self.brightness_delta <= 127:
            raise ValueError("brightness_delta must fit in a signed byte")
        if self.saturation_scale < 0:
            raise ValueError("saturation_scale must be non-negative")

    def apply(self, pixels: np.ndarray) -> np.ndarray:
        p = pixels.astype(np.float64)
        p = (1.0 - self.tint_alpha) * p + self.tint_alpha * np.asarray(self.tint, dtype=np.float64)
        gray = p.mean(axis=-1, keepdims=True)
        p = gray + self.saturation_scale * (p - gray)
        p = p + self.brightness_delta
        return np.clip(np.rint(p), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ShiftSpec:
    lo: float = 0.5
    hi: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.lo <= self.hi:
            raise ValueError("shift range must satisfy 0 < lo <= hi")


@dataclass
class SamplePair:
    reference: Frame
    target: Frame
    step_class: int
    step_index: int
    ground_truth: bool
    virtual_layer: Frame | None = None
    reference_mask: Mask | None = None
    alignment_points: tuple[list[Point2], list[Point2]] | None = None
    source_id: str = ""
    instance_index: int = -1
    shift: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.reference.size != self.target.size:
            raise ValueError("reference and target frames differ in size")
        if self.alignment_points is not None:
            ref, tgt = self.alignment_points
            if len(ref) != len(tgt) or len(ref) < 4:
                raise ValueError("alignment point sets must have equal length >= 4")


def _draw_axis_shift(pos: int, side: int, limit: int, spec: ShiftSpec, rng: np.random.Generator) -> int:
    need = spec.lo * side
    room = {1: limit - (pos + side), -1: pos}
    if max(room.values()) < need:
        raise UnshiftableInstance(f"no in-bounds shift of {need:g}px for a {side}px side at {pos}")
    for _ in range(MAX_SHIFT_ATTEMPTS):
        magnitude = rng.uniform(spec.lo * side, spec.hi * side)
        sign = 1 if rng.random() < 0.5 else -1
        for s in (sign, -sign):
            clamped = int(np.floor(min(magnitude, room[s])))
            if clamped >= need:
                return s * clamped
    raise UnshiftableInstance(f"no shift of at least {need:g}px found in {MAX_SHIFT_ATTEMPTS} draws")


def draw_shift(instance: InstanceLabel, width: int, height: int, spec: ShiftSpec,
               rng: np.random.Generator) -> tuple[int, int]:
    """Random signed displacement, each axis in [lo, hi] x bbox side, keeping the box in-bounds."""
    b = instance.bbox
    return (_draw_axis_shift(b.x, b.w, width, spec, rng), _draw_axis_shift(b.y, b.h, height, spec, rng))


def shift_mask(mask: Mask, dx: int, dy: int) -> Mask:
    bits = np.zeros_like(mask.bits)
    ys, xs = np.nonzero(mask.bits)
    bits[ys + dy, xs + dx] = 1
    return Mask(bits)


def _is_rectangle(inst: InstanceLabel) -> bool:
    return inst.mask.count() == inst.bbox.w * inst.bbox.h


def generate_pair(src: AnnotatedImage, instance: InstanceLabel, polarity: bool,
                  filter: OverlayFilter = OverlayFilter(), shift: ShiftSpec = ShiftSpec(),
                  rng_seed=0, step_index: int = 0, alignment_points: int = 0) -> SamplePair:
    """One reference/target pair for ``instance``.

    ``polarity`` True overlays the filtered instance where it is; False moves
    the overlay by a random shift drawn from ``shift``.
    """
    idx = next((k for k, inst in enumerate(src.instances) if inst is instance), None)
    if idx is None:
        idx = next((k for k, inst in enumerate(src.instances) if inst == instance), None)
    if idx is None:
        raise InstanceNotInImage(f"instance is not part of {src.source_id}")
    rng = np.random.default_rng(rng_seed)
    w, h = src.image.size
    dx, dy = (0, 0) if polarity else draw_shift(instance, w, h, shift, rng)

    ys, xs = np.nonzero(instance.mask.bits)
    processed = filter.apply(src.image.pixels[ys, xs])
    # a rendered object never has fully black pixels, or the binary filter would drop them
    processed[~processed.any(axis=1)] = 1
    reference = src.image.pixels.copy()
    reference[ys + dy, xs + dx] = processed
    layer = np.zeros_like(reference)
    layer[ys + dy, xs + dx] = processed
    ref_mask = shift_mask(instance.mask, dx, dy)

    if not polarity and _is_rectangle(instance):
        overlap = iou(ref_mask, instance.mask)
        if overlap > 1.0 / 3.0 + 1e-12:
            raise AssertionError(f"negative pair IoU {overlap:.4f} exceeds 1/3")

    points = None
    if alignment_points:
        pts = sample_plane_points(w, h, alignment_points)
        points = (pts, list(pts))
    return SamplePair(
        reference=Frame(reference), target=src.image, step_class=instance.class_id,
        step_index=step_index, ground_truth=bool(polarity), virtual_layer=Frame(layer),
        reference_mask=ref_mask, alignment_points=points, source_id=src.source_id,
        instance_index=idx, shift=(dx, dy),
    )


# ---------------------------------------------------------------- manifests

@dataclass
class SampleEntry:
    index: int
    reference: str
    virtual_layer: str
    reference_mask: str
    target: str
    source_id: str
    instance_index: int
    step_class: int
    step_index: int
    ground_truth: bool
    shift: tuple[int, int] = (0, 0)
    alignment_points: tuple[list[Point2], list[Point2]] | None = None

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["shift"] = list(self.shift)
        if self.alignment_points is not None:
            d["alignment_points"] = {"reference": [list(p) for p in self.alignment_points[0]],
                                     "target": [list(p) for p in self.alignment_points[1]]}
        return d

    @classmethod
    def from_json(cls, d: dict) -> SampleEntry:
        ap = d.get("alignment_points")
        if ap is not None:
            ap = ([Point2(*p) for p in ap["reference"]], [Point2(*p) for p in ap["target"]])
        return cls(
            index=int(d["index"]), reference=d["reference"], virtual_layer=d["virtual_layer"],
            reference_mask=d["reference_mask"], target=d["target"], source_id=d["source_id"],
            instance_index=int(d["instance_index"]), step_class=int(d["step_class"]),
            step_index=int(d["step_index"]), ground_truth=bool(d["ground_truth"]),
            shift=tuple(d.get("shift", (0, 0))), alignment_points=ap,
        )


class LabelStore:
    """Lazy, cached access to per-source instance labels; safe across threads."""

    def __init__(self, root: Path, sources: dict[str, dict]):
        self.root = root
        self.sources = sources
        self._cache: dict[str, list[InstanceLabel]] = {}
        self._lock = threading.Lock()

    def __getitem__(self, source_id: str) -> list[InstanceLabel]:
        with self._lock:
            if source_id not in self._cache:
                if source_id not in self.sources:
                    raise KeyError(source_id)
                index = json.loads((self.root / self.sources[source_id]["labels"]).read_text())
                self._cache[source_id] = [
                    InstanceLabel(int(e["class_id"]), load_mask(self.root / e["mask"]))
                    for e in index["instances"]
                ]
            return self._cache[source_id]


class _ByStep:
    """Mapping from step index to the labels of that sample's target frame."""

    def __init__(self, manifest: DatasetManifest):
        self._sources = {s.step_index: s.source_id for s in manifest.samples}
        self._store = manifest.labels

    def __getitem__(self, key):
        return self._store[self._sources[key]]

    def __contains__(self, key):
        return key in self._sources


@dataclass
class DatasetManifest:
    name: str
    split: str
    samples: list[SampleEntry]
    class_count: int
    seed: int
    root: Path = field(default_factory=Path)
    model_id: int = 0
    files: dict[str, dict] = field(default_factory=dict)
    sources: dict[str, dict] = field(default_factory=dict)
    _labels: LabelStore | None = field(default=None, repr=False, compare=False)
    _targets: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def positives(self) -> int:
        return sum(1 for s in self.samples if s.ground_truth)

    @property
    def negatives(self) -> int:
        return len(self.samples) - self.positives

    @property
    def labels(self) -> LabelStore:
        if self._labels is None:
            self._labels = LabelStore(self.root, self.sources)
        return self._labels

    def oracle_labels(self) -> _ByStep:
        return _ByStep(self)

    def load_frame(self, i: int, part: str) -> Frame:
        """One frame of sample ``i``: ``reference``, ``virtual_layer`` or ``target``.

        Target frames are shared source images, so they are decoded once and cached.
        """
        if part not in ("reference", "virtual_layer", "target"):
            raise ValueError(f"unknown frame part {part!r}")
        rel = getattr(self.samples[i], part)
        if part != "target":
            return load_frame(self.root / rel)
        frame = self._targets.get(rel)
        if frame is None:
            frame = self._targets[rel] = load_frame(self.root / rel)
        return frame

    def load_pair(self, i: int) -> SamplePair:
        e = self.samples[i]
        return SamplePair(
            reference=self.load_frame(i, "reference"), target=self.load_frame(i, "target"),
            step_class=e.step_class, step_index=e.step_index, ground_truth=e.ground_truth,
            virtual_layer=self.load_frame(i, "virtual_layer"),
            reference_mask=load_mask(self.root / e.reference_mask),
            alignment_points=e.alignment_points, source_id=e.source_id,
            instance_index=e.instance_index, shift=e.shift,
        )

    def to_json(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA, "name": self.name, "split": self.split, "seed": self.seed,
            "class_count": self.class_count, "model_id": self.model_id,
            "positives": self.positives, "negatives": self.negatives,
            "files": self.files, "sources": self.sources,
            "samples": [s.to_json() for s in self.samples],
        }

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / f"{self.split}.json"
        path.write_text(json.dumps(self.to_json(), indent=1))
        return path


def _crc32(path: Path) -> int:
    crc = 0
    with path.open("rb") as fh:
        while chunk := fh.read(1 << 20):
            crc = zlib.crc32(chunk, crc)
    return crc


def _file_record(root: Path, rel: str) -> dict:
    p = root / rel
    with Image.open(p) as img:
        w, h = img.size
    return {"crc32": _crc32(p), "width": w, "height": h}


def load_manifest(path, verify: bool = True) -> DatasetManifest:
    """Read a split manifest; with ``verify``, check every file's presence, size and CRC-32."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
        if d.get("schema") != MANIFEST_SCHEMA:
            raise ManifestCorrupt(f"{path}: unexpected schema {d.get('schema')!r}")
        samples = [SampleEntry.from_json(s) for s in d["samples"]]
        m = DatasetManifest(
            name=d["name"], split=d["split"], samples=samples, class_count=int(d["class_count"]),
            seed=int(d["seed"]), root=path.parent, model_id=int(d.get("model_id", 0)),
            files=d["files"], sources=d["sources"],
        )
    except ManifestCorrupt:
        raise
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestCorrupt(f"{path}: {exc}") from exc
    if verify:
        verify_files(m)
    return m


def verify_files(m: DatasetManifest) -> None:
    owners: dict[str, str] = {}
    for s in m.samples:
        for rel in (s.reference, s.virtual_layer, s.reference_mask, s.target):
            owners.setdefault(rel, f"sample {s.index}")
    for sid, src in m.sources.items():
        owners.setdefault(src["image"], f"source {sid}")
        owners.setdefault(src["labels"], f"source {sid}")
    for rel, owner in owners.items():
        if rel not in m.files:
            raise ManifestCorrupt(f"{owner}: {rel} has no checksum entry")
    for rel, rec in m.files.items():
        p = m.root / rel
        owner = owners.get(rel, "manifest")
        if not p.is_file():
            raise MissingFile(f"{owner}: missing file {rel}")
        if _crc32(p) != rec["crc32"]:
            raise ChecksumMismatch(f"{owner}: checksum mismatch for {rel}")
        if "width" in rec:
            with Image.open(p) as img:
                if img.size != (rec["width"], rec["height"]):
                    raise ChecksumMismatch(f"{owner}: {rel} is {img.size}, expected "
                                           f"{(rec['width'], rec['height'])}")


# ----------------------------------------------------------------- building

@dataclass(frozen=True)
class DatasetConfig:
    name: str = "desk"
    counts: dict = field(default_factory=lambda: {"val": 200, "test": 200})
    seed: int = 7
    filter: OverlayFilter = OverlayFilter()
    shift: ShiftSpec = ShiftSpec()
    model_id: int = 0
    alignment_points: int = 8
    split_sources: bool = True
    jobs: int = 1


def _sample_seed(seed: int, split: str, k: int) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(split.encode()), k]).generate_state(1)[0])


def _write_source(root: Path, src: AnnotatedImage) -> dict:
    img_rel = f"sources/{src.source_id}.png"
    (root / "sources").mkdir(exist_ok=True)
    save_frame(src.image, root / img_rel)
    (root / "labels" / src.source_id).mkdir(parents=True, exist_ok=True)
    entries = []
    for k, inst in enumerate(src.instances):
        rel = f"labels/{src.source_id}/{k}.png"
        save_mask(inst.mask, root / rel)
        b = inst.bbox
        entries.append({"class_id": inst.class_id, "mask": rel, "bbox": [b.x, b.y, b.w, b.h]})
    lab_rel = f"labels/{src.source_id}.json"
    (root / lab_rel).write_text(json.dumps({"source_id": src.source_id, "instances": entries}, indent=1))
    return {"image": img_rel, "labels": lab_rel, "mask_files": [e["mask"] for e in entries]}


def _plan_split(sources: Sequence[AnnotatedImage], count: int, seed: int, split: str,
                shift: ShiftSpec) -> list[tuple[int, int, bool]]:
    """Choose (source, instance, polarity) per sample, class-stratified and balanced."""
    pool: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for si, src in enumerate(sources):
        for ii, inst in enumerate(src.instances):
            pool[inst.class_id].append((si, ii))
    classes = sorted(pool)
    rng = np.random.default_rng([seed, zlib.crc32(split.encode()), 1 << 30])

    def shiftable(si, ii):
        src = sources[si]
        b = src.instances[ii].bbox
        w, h = src.image.size
        return (max(b.x, w - b.x - b.w) >= shift.lo * b.w) and (max(b.y, h - b.y - b.h) >= shift.lo * b.h)

    plan = []
    for k in range(count):
        cls = classes[(k // 2) % len(classes)]
        positive = k % 2 == 0
        options = [pool[cls][j] for j in rng.permutation(len(pool[cls]))]
        if not positive:
            good = [o for o in options if shiftable(*o)]
            if not good:
                good = [o for c in classes for o in pool[c] if shiftable(*o)]
            if not good:
                si, ii = options[0]
                b = sources[si].instances[ii].bbox
                raise UnshiftableInstance(
                    f"{sources[si].source_id} instance {ii} ({b.w}x{b.h}) cannot be shifted in-bounds, "
                    "and no other instance can either"
                )
            options = good
        plan.append((*options[0], positive))
    order = rng.permutation(count)
    return [plan[j] for j in order]


def _make_sample(args):
    root, split, k, src, ii, positive, seed, cfg = args
    pair = generate_pair(src, src.instances[ii], positive, cfg.filter, cfg.shift,
                         rng_seed=_sample_seed(seed, split, k), step_index=k,
                         alignment_points=cfg.alignment_points)
    stem = f"{split}/{k:05d}"
    rels = {"reference": f"{stem}_ref.png", "virtual_layer": f"{stem}_virt.png",
            "reference_mask": f"{stem}_refmask.png"}
    save_frame(pair.reference, root / rels["reference"])
    save_frame(pair.virtual_layer, root / rels["virtual_layer"])
    save_mask(pair.reference_mask, root / rels["reference_mask"])
    entry = SampleEntry(
        index=k, target=f"sources/{src.source_id}.png", source_id=src.source_id, instance_index=ii,
        step_class=pair.step_class, step_index=k, ground_truth=pair.ground_truth, shift=pair.shift,
        alignment_points=pair.alignment_points, **rels,
    )
    return entry, {rel: _file_record(root, rel) for rel in rels.values()}


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=8))


def build_dataset(sources: Sequence[AnnotatedImage], out_dir, config: DatasetConfig = DatasetConfig()
                  ) -> dict[str, DatasetManifest]:
    """Generate every requested split under ``out_dir`` and write one manifest per split."""
    sources = list(sources)
    total = sum(config.counts.values())
    if total > 0:
        if not sources:
            raise InsufficientSources("no annotated sources given")
        bare = [s.source_id for s in sources if not s.instances]
        if bare:
            raise InsufficientSources(f"sources without instances: {', '.join(bare[:5])}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    class_count = len({i.class_id for s in sources for i in s.instances})
    splits = [s for s in config.counts]
    if config.split_sources and len(sources) >= len(splits) and len(splits) > 1:
        assigned = {sp: sources[j::len(splits)] for j, sp in enumerate(splits)}
    else:
        assigned = {sp: sources for sp in splits}

    manifests = {}
    written: dict[str, dict] = {}
    for split in splits:
        count = int(config.counts[split])
        m = DatasetManifest(name=config.name, split=split, samples=[], class_count=class_count,
                            seed=config.seed, root=root, model_id=config.model_id)
        if count > 0:
            split_sources = assigned[split]
            plan = _plan_split(split_sources, count, config.seed, split, config.shift)
            (root / split).mkdir(exist_ok=True)
            used = sorted({split_sources[si].source_id: si for si, _, _ in plan}.items())
            for sid, si in used:
                if sid not in written:
                    written[sid] = _write_source(root, split_sources[si])
                rec = written[sid]
                m.sources[sid] = {"image": rec["image"], "labels": rec["labels"]}
                for rel in [rec["image"], rec["labels"], *rec["mask_files"]]:
                    m.files[rel] = _file_record(root, rel) if rel.endswith(".png") \
                        else {"crc32": _crc32(root / rel)}
            tasks = [(root, split, k, split_sources[si], ii, pos, config.seed, config)
                     for k, (si, ii, pos) in enumerate(plan)]
            for entry, files in _map(_make_sample, tasks, config.jobs):
                m.samples.append(entry)
                m.files.update(files)
        m.files = dict(sorted(m.files.items()))
        m.save()
        manifests[split] = m
    return manifests


# ---------------------------------------------------------------- ingestion

def rasterize_polygon(points, width: int, height: int) -> Mask:
    """Fill a polygon given in pixel coordinates (vertices are pixel centres)."""
    img = Image.new("L", (width, height), 0)
    ImageDraw.Draw(img).polygon([(float(x), float(y)) for x, y in points], fill=1, outline=1)
    return Mask(np.asarray(img))


def read_polygon_labels(path, width: int, height: int) -> list[InstanceLabel]:
    """Parse a YOLO-segmentation label file: ``class x1 y1 x2 y2 ...`` with coordinates in [0, 1]."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 7 or len(parts) % 2 == 0:
            raise ManifestCorrupt(f"{path}:{lineno}: expected a class id and at least 3 vertices")
        cls = int(parts[0])
        coords = np.array([float(v) for v in parts[1:]]).reshape(-1, 2)
        pts = coords * np.array([width, height])
        mask = rasterize_polygon(pts, width, height)
        if mask.count():
            out.append(InstanceLabel(cls, mask))
    return out


def write_polygon_labels(path, instances: Sequence[InstanceLabel]) -> None:
    """Write rectangle-shaped instances as 4-vertex polygons in the YOLO format."""
    lines = []
    for inst in instances:
        b = inst.bbox
        w, h = inst.mask.size
        x0, y0, x1, y1 = b.x, b.y, b.x + b.w - 1, b.y + b.h - 1
        verts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        lines.append(" ".join([str(inst.class_id)] + [f"{x / w!r} {y / h!r}" for x, y in verts]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_sources(directory) -> list[AnnotatedImage]:
    """Read ``images/*.png|jpg`` with matching ``labels/*.txt`` polygon files."""
    directory = Path(directory)
    img_dir = directory / "images"
    lab_dir = directory / "labels"
    if not img_dir.is_dir():
        raise InsufficientSources(f"{directory}: no images/ directory")
    out = []
    for img_path in sorted(p for p in img_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")):
        frame = load_frame(img_path)
        lab = lab_dir / f"{img_path.stem}.txt"
        instances = read_polygon_labels(lab, frame.width, frame.height) if lab.is_file() else []
        out.append(AnnotatedImage(frame, tuple(instances), img_path.stem))
    if not out:
        raise InsufficientSources(f"{directory}: no images found")
    return out


def write_sources(directory, sources: Sequence[AnnotatedImage]) -> None:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "labels").mkdir(parents=True, exist_ok=True)
    for src in sources:
        save_frame(src.image, directory / "images" / f"{src.source_id}.png")
        write_polygon_labels(directory / "labels" / f"{src.source_id}.txt", src.instances)
