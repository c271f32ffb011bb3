import json
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrverify.errors import EmptyReferenceMask, SegmenterFailure, UnknownFrame
from mrverify.imaging import Frame, Mask
from mrverify.segmentation import (
    Candidate,
    ExternalSegmenter,
    InstanceLabel,
    OracleSegmenter,
    PerturbationSpec,
    dilate,
    erode,
    extract_reference_mask,
    perturb,
    read_mask_index,
    segment,
    write_mask_index,
)


def rect(w, h, x, y, bw, bh):
    bits = np.zeros((h, w), np.uint8)
    bits[y:y + bh, x:x + bw] = 1
    return Mask(bits)


LABELS = {
    "f0": [InstanceLabel(3, rect(40, 30, 2, 2, 5, 5)), InstanceLabel(1, rect(40, 30, 20, 4, 8, 6)),
           InstanceLabel(3, rect(40, 30, 25, 18, 6, 6))],
}


def test_instance_label_bbox_and_validation():
    lab = InstanceLabel(2, rect(40, 30, 5, 6, 7, 8))
    assert (lab.bbox.x, lab.bbox.y, lab.bbox.w, lab.bbox.h) == (5, 6, 7, 8)
    with pytest.raises(ValueError):
        InstanceLabel(2, Mask.zeros(4, 4))


def test_reference_mask_from_layer():
    with pytest.raises(EmptyReferenceMask):
        extract_reference_mask(Frame.blank(10, 10))
    px = np.zeros((10, 12, 3), np.uint8)
    px[2:5, 3:9] = (200, 10, 10)
    px[7, 7] = (1, 1, 1)
    m = extract_reference_mask(Frame(px))
    assert m.count() == int(np.count_nonzero(px.any(axis=2))) == 19


def test_oracle_returns_all_instances_of_class():
    out = segment("f0", 3, OracleSegmenter(LABELS))
    assert len(out) == 2
    assert out.masks == [LABELS["f0"][0].mask, LABELS["f0"][2].mask]
    assert all(c.confidence == 1.0 for c in out)


def test_oracle_absent_class_and_unknown_frame():
    seg = OracleSegmenter(LABELS)
    assert len(segment("f0", 7, seg)) == 0
    with pytest.raises(UnknownFrame):
        segment("nope", 3, seg)


def test_full_miss_rate_empties_output():
    seg = OracleSegmenter(LABELS, PerturbationSpec(miss_rate=1.0))
    assert len(segment("f0", 3, seg)) == 0


def test_oracle_resizes_to_query_frame():
    seg = OracleSegmenter(LABELS)
    out = segment("f0", 1, seg, Frame.blank(20, 15))
    assert out.masks[0].size == (20, 15)
    assert out.masks[0].count() == 4 * 3


def test_segment_filters_foreign_classes():
    class Noisy:
        def segment(self, frame_id, step_class, frame=None):
            from mrverify.segmentation import SegmentationOutput
            return SegmentationOutput([Candidate(1, rect(5, 5, 0, 0, 2, 2), 0.9),
                                       Candidate(2, rect(5, 5, 1, 1, 2, 2), 0.8)])

    out = segment("x", 2, Noisy())
    assert [c.class_id for c in out] == [2]


def test_identity_perturbation():
    m = LABELS["f0"][1].mask
    assert perturb(m, PerturbationSpec(), 0) == m


def test_dilate_radius_one_on_two_by_two():
    m = rect(30, 30, 14, 14, 2, 2)
    out = perturb(m, PerturbationSpec(dilate_erode_radius=1), 0)
    assert out.count() == 12


def test_erode_undoes_nothing_outside():
    m = rect(30, 30, 5, 5, 10, 8)
    assert erode(m, 1).count() == 8 * 6
    assert dilate(erode(m, 1), 1).count() <= m.count()
    assert perturb(rect(30, 30, 5, 5, 2, 2), PerturbationSpec(dilate_erode_radius=-1), 0) is None


def test_perturb_is_deterministic():
    spec = PerturbationSpec(dilate_erode_radius=2, jitter_sigma=3, miss_rate=0.3, seed=9)
    m = rect(60, 60, 20, 20, 10, 10)
    for k in range(10):
        assert perturb(m, spec, k, "a") == perturb(m, spec, k, "a")


@given(st.integers(0, 2**16), st.integers(0, 100), st.floats(0, 4))
def test_jitter_only_preserves_count(seed, k, sigma):
    m = rect(80, 80, 30, 30, 12, 9)
    out = perturb(m, PerturbationSpec(jitter_sigma=sigma, seed=seed), k)
    assert out.count() == m.count()


def test_jitter_is_clamped_in_bounds():
    m = rect(20, 20, 0, 0, 5, 5)
    for k in range(50):
        out = perturb(m, PerturbationSpec(jitter_sigma=30, seed=1), k)
        assert out.count() == 25


def test_spurious_candidate():
    seg = OracleSegmenter(LABELS, PerturbationSpec(spurious_rate=1.0))
    out = segment("f0", 1, seg, Frame.blank(40, 30))
    assert len(out) == 2 and out.candidates[-1].confidence == 0.5


def test_perturbation_parse():
    spec = PerturbationSpec.parse("radius=2,jitter=2,miss=0.05")
    assert spec == PerturbationSpec(2, 2.0, 0.05)
    with pytest.raises(ValueError):
        PerturbationSpec.parse("radius")
    with pytest.raises(ValueError):
        PerturbationSpec.parse("miss=2")


def test_mask_index_roundtrip(tmp_path):
    cands = [Candidate(4, rect(9, 7, 1, 1, 3, 2), 0.75), Candidate(5, rect(9, 7, 0, 0, 9, 7), 1.0)]
    index = write_mask_index(tmp_path, cands)
    entries = json.loads(index.read_text())
    assert [e["class_id"] for e in entries] == [4, 5]
    back = read_mask_index(tmp_path, (9, 7))
    assert back == cands
    with pytest.raises(SegmenterFailure):
        read_mask_index(tmp_path, (10, 7))
    with pytest.raises(SegmenterFailure):
        read_mask_index(tmp_path / "missing")


def test_external_segmenter(tmp_path):
    script = tmp_path / "seg.py"
    script.write_text(textwrap.dedent("""
        import sys
        import numpy as np
        from mrverify.imaging import load_frame, Mask
        from mrverify.segmentation import Candidate, write_mask_index
        frame = load_frame(sys.argv[1])
        cls = int(sys.argv[2])
        bits = (frame.pixels[..., 0] > 100).astype(np.uint8)
        write_mask_index(sys.argv[3], [Candidate(cls, Mask(bits), 0.9)])
    """))
    px = np.zeros((12, 16, 3), np.uint8)
    px[3:6, 4:10, 0] = 200
    seg = ExternalSegmenter([sys.executable, str(script)])
    out = segment("q", 6, seg, Frame(px))
    assert len(out) == 1 and out.masks[0].count() == 18

    bad = ExternalSegmenter([sys.executable, "-c", "import sys; sys.exit(3)"])
    with pytest.raises(SegmenterFailure):
        segment("q", 6, bad, Frame(px))
    with pytest.raises(SegmenterFailure):
        seg.segment("q", 6, None)
