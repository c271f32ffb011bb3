import json
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrverify.dataset import (
    AnnotatedImage,
    DatasetConfig,
    OverlayFilter,
    ShiftSpec,
    build_dataset,
    draw_shift,
    generate_pair,
    load_manifest,
    load_sources,
    read_polygon_labels,
    shift_mask,
    write_sources,
)
from mrverify.errors import (
    ChecksumMismatch,
    InstanceNotInImage,
    InsufficientSources,
    ManifestCorrupt,
    MissingFile,
    UnshiftableInstance,
)
from mrverify.imaging import Frame, Mask
from mrverify.segmentation import InstanceLabel
from mrverify.verification import iou


def rect_label(w, h, x, y, bw, bh, cls=0):
    bits = np.zeros((h, w), np.uint8)
    bits[y:y + bh, x:x + bw] = 1
    return InstanceLabel(cls, Mask(bits))


def source(w=400, h=300, labels=()):
    rng = np.random.default_rng(0)
    return AnnotatedImage(Frame(rng.integers(0, 256, (h, w, 3), dtype=np.uint8)), tuple(labels), "s")


def test_positive_pair_differs_exactly_on_instance():
    lab = rect_label(400, 300, 50, 40, 100, 60)
    src = source(labels=[lab])
    pair = generate_pair(src, lab, True, rng_seed=3)
    changed = np.any(pair.reference.pixels != pair.target.pixels, axis=2)
    assert np.array_equal(changed, lab.mask.bits.astype(bool))
    assert pair.target is src.image
    assert pair.reference_mask == lab.mask and iou(pair.reference_mask, lab.mask) == 1.0
    assert np.array_equal(pair.virtual_layer.pixels.any(axis=2), lab.mask.bits.astype(bool))


def test_negative_shift_magnitudes():
    lab = rect_label(400, 300, 150, 120, 100, 60)
    src = source(labels=[lab])
    for seed in range(50):
        pair = generate_pair(src, lab, False, rng_seed=seed)
        dx, dy = pair.shift
        assert 50 <= abs(dx) <= 100 and 30 <= abs(dy) <= 60
        assert pair.reference_mask == shift_mask(lab.mask, dx, dy)
        assert iou(pair.reference_mask, lab.mask) <= 1 / 7 + 1e-12
        assert not pair.ground_truth


def test_shift_clamps_toward_free_side():
    # against the left edge: only positive x shifts fit
    lab = rect_label(400, 300, 0, 100, 100, 60)
    for seed in range(20):
        dx, _ = draw_shift(lab, 400, 300, ShiftSpec(), np.random.default_rng(seed))
        assert dx >= 50


def test_pair_is_deterministic():
    lab = rect_label(400, 300, 150, 120, 100, 60)
    src = source(labels=[lab])
    a = generate_pair(src, lab, False, rng_seed=99)
    b = generate_pair(src, lab, False, rng_seed=99)
    assert a.reference == b.reference and a.shift == b.shift


def test_full_frame_instance_is_unshiftable(tmp_path):
    lab = rect_label(100, 80, 0, 0, 100, 80)
    src = source(100, 80, [lab])
    generate_pair(src, lab, True)
    with pytest.raises(UnshiftableInstance):
        generate_pair(src, lab, False)
    with pytest.raises(UnshiftableInstance):
        build_dataset([src], tmp_path, DatasetConfig(counts={"test": 2}))


def test_instance_must_belong_to_source():
    src = source(labels=[rect_label(400, 300, 0, 0, 10, 10)])
    with pytest.raises(InstanceNotInImage):
        generate_pair(src, rect_label(400, 300, 5, 5, 10, 10), True)


def test_overlay_filter_validation_and_effect():
    with pytest.raises(ValueError):
        OverlayFilter(tint_alpha=1.5)
    px = np.full((4, 3), 100, np.uint8)
    out = OverlayFilter().apply(px)
    assert out.shape == px.shape and out.dtype == np.uint8
    assert not np.array_equal(out, px)
    assert np.array_equal(OverlayFilter(tint_alpha=0, brightness_delta=0, saturation_scale=1).apply(px), px)


def test_small_dataset_balanced(small_dataset):
    for split, m in small_dataset.items():
        assert m.positives == m.negatives == len(m.samples) // 2
    val_sources = {s.source_id for s in small_dataset["val"].samples}
    test_sources = {s.source_id for s in small_dataset["test"].samples}
    assert not val_sources & test_sources


def test_dataset_pair_invariants(small_dataset, boards):
    by_id = {b.source_id: b for b in boards}
    m = small_dataset["test"]
    for i, e in enumerate(m.samples):
        pair = m.load_pair(i)
        src = by_id[e.source_id]
        inst = src.instances[e.instance_index]
        assert pair.target == src.image
        assert e.step_class == inst.class_id
        overlap = iou(pair.reference_mask, inst.mask)
        if e.ground_truth:
            assert overlap == 1.0
        else:
            assert overlap <= 1 / 3
        assert pair.alignment_points is not None and len(pair.alignment_points[0]) == 8


def test_dataset_classes_stratified(small_dataset):
    m = small_dataset["test"]
    counts = {}
    for e in m.samples:
        counts[e.step_class] = counts.get(e.step_class, 0) + 1
    assert max(counts.values()) - min(counts.values()) <= 2


def test_zero_samples(tmp_path, boards):
    ms = build_dataset(boards, tmp_path, DatasetConfig(counts={"test": 0}))
    assert ms["test"].samples == []
    assert sorted(p.name for p in tmp_path.iterdir()) == ["test.json"]


def test_no_sources(tmp_path):
    with pytest.raises(InsufficientSources):
        build_dataset([], tmp_path, DatasetConfig(counts={"test": 2}))
    with pytest.raises(InsufficientSources):
        build_dataset([source()], tmp_path, DatasetConfig(counts={"test": 2}))


def test_rebuild_is_identical(tmp_path, boards, small_dataset):
    again = build_dataset(boards, tmp_path, DatasetConfig(counts={"val": 16, "test": 20}, seed=5))
    for split in ("val", "test"):
        assert again[split].files == small_dataset[split].files
        assert [e.to_json() for e in again[split].samples] == [e.to_json() for e in small_dataset[split].samples]


def test_manifest_roundtrip(small_dataset):
    m = small_dataset["test"]
    back = load_manifest(m.root / "test.json")
    assert back == m


@pytest.fixture
def dataset_copy(tmp_path, small_dataset):
    root = tmp_path / "copy"
    shutil.copytree(small_dataset["test"].root, root)
    return root


def test_missing_file_names_sample(dataset_copy):
    m = load_manifest(dataset_copy / "test.json")
    (dataset_copy / m.samples[3].reference).unlink()
    with pytest.raises(MissingFile, match="sample 3"):
        load_manifest(dataset_copy / "test.json")


def test_flipped_byte_is_detected(dataset_copy):
    m = load_manifest(dataset_copy / "test.json")
    p = dataset_copy / m.samples[0].virtual_layer
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatch, match="sample 0"):
        load_manifest(dataset_copy / "test.json")


@pytest.mark.parametrize("mutate", [
    lambda d: "not json",
    lambda d: json.dumps({**d, "schema": "other/9"}),
    lambda d: json.dumps({k: v for k, v in d.items() if k != "samples"}),
])
def test_corrupt_manifest(dataset_copy, mutate):
    p = dataset_copy / "test.json"
    p.write_text(mutate(json.loads(p.read_text())))
    with pytest.raises(ManifestCorrupt):
        load_manifest(p)


def test_polygon_sources_roundtrip(tmp_path, boards):
    write_sources(tmp_path, boards[:3])
    back = load_sources(tmp_path)
    assert [b.source_id for b in back] == [b.source_id for b in boards[:3]]
    for a, b in zip(boards[:3], back):
        assert a.image == b.image
        assert [(i.class_id, i.mask) for i in a.instances] == [(i.class_id, i.mask) for i in b.instances]


def test_polygon_label_parsing(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text("2 0.1 0.1 0.5 0.1 0.5 0.5\n\n")
    labels = read_polygon_labels(p, 100, 100)
    assert len(labels) == 1 and labels[0].class_id == 2
    # right triangle with 40px legs, vertices at pixel centres, edges included
    assert abs(labels[0].mask.count() - (41 * 42) // 2) <= 41
    p.write_text("2 0.1 0.1 0.5\n")
    with pytest.raises(ManifestCorrupt):
        read_polygon_labels(p, 100, 100)


def test_load_sources_missing_dir(tmp_path):
    with pytest.raises(InsufficientSources):
        load_sources(tmp_path / "nope")


@given(st.integers(0, 2**32 - 1))
def test_negative_rectangles_respect_bound(seed):
    rng = np.random.default_rng(seed)
    w, h = 200, 150
    bw, bh = int(rng.integers(5, 60)), int(rng.integers(5, 60))
    x, y = int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh))
    lab = rect_label(w, h, x, y, bw, bh)
    src = source(w, h, [lab])
    try:
        pair = generate_pair(src, lab, False, rng_seed=seed)
    except UnshiftableInstance:
        return
    assert iou(pair.reference_mask, lab.mask) <= 1 / 3
