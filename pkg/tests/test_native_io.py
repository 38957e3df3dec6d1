import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from painter.native_io import (_rle, _unrle, load_depth_pgm, load_instances_txt,
                               load_keypoints_txt, load_labels_png, save_depth_pgm,
                               save_instances_txt, save_keypoints_txt, save_labels_png)
from painter.structures import IGNORE, DepthMap, Instance, Keypoint


def test_depth_pgm_roundtrip_and_header(tmp_path):
    d = DepthMap(np.array([[0.5, 10.0], [3.25, 7.0]]), np.array([[True, True], [False, True]]))
    save_depth_pgm(d, tmp_path / "d.pgm")
    raw = (tmp_path / "d.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n65535\n")
    # 10 m is the largest code; big-endian bytes
    assert raw[-6:-4] == b"\xff\xff"
    back = load_depth_pgm(tmp_path / "d.pgm")
    assert np.array_equal(back.valid, d.valid)
    assert np.abs(back.depth[d.valid] - d.depth[d.valid]).max() <= 0.5 / 6553.5


def test_depth_pgm_rejects_other_files(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        load_depth_pgm(tmp_path / "x.pgm")
    (tmp_path / "y.pgm").write_bytes(b"P5\n2 2\n65535\n\x00")
    with pytest.raises(ValueError):
        load_depth_pgm(tmp_path / "y.pgm")


def test_label_png_roundtrip(tmp_path):
    labels = np.random.default_rng(0).integers(0, 151, (9, 7))
    labels[0, 0] = IGNORE
    save_labels_png(labels, tmp_path / "l.png")
    assert np.array_equal(load_labels_png(tmp_path / "l.png"), labels)
    with pytest.raises(ValueError):
        save_labels_png(np.array([[256]]), tmp_path / "bad.png")


@settings(max_examples=40)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2 ** 32 - 1))
def test_rle_roundtrip(h, w, seed):
    m = np.random.default_rng(seed).random((h, w)) < 0.4
    assert np.array_equal(_unrle(_rle(m), h, w), m)


def test_rle_starts_with_zero_run():
    assert _rle(np.array([[True, True, False]])) == "0,2,1"
    assert _rle(np.array([[False, True, True]])) == "1,2"
    with pytest.raises(ValueError):
        _unrle("1,1", 2, 2)


def test_keypoint_records(tmp_path):
    kps = [Keypoint(0, 1.5, 2.25, 0.9), Keypoint(16, 30.0, 0.0)]
    save_keypoints_txt(kps, 40, 50, tmp_path / "k.txt")
    text = (tmp_path / "k.txt").read_text().splitlines()
    assert text[:3] == ["# keypoints v1", "size 40 50", "kp 0 1.5 2.25 0.9"]
    back, size = load_keypoints_txt(tmp_path / "k.txt")
    assert back == kps and size == (40, 50)


def test_instance_records(tmp_path):
    m = np.zeros((6, 5), bool)
    m[1:3, 2:4] = True
    insts = [Instance(m, cls=3, score=0.75), Instance(~m, cls=None)]
    save_instances_txt(insts, 6, 5, tmp_path / "i.txt")
    back, size = load_instances_txt(tmp_path / "i.txt")
    assert size == (6, 5) and len(back) == 2
    assert back[0].cls == 3 and back[0].score == 0.75 and back[1].cls is None
    assert all(np.array_equal(a.mask, b.mask) for a, b in zip(back, insts))
    assert back[0].center == pytest.approx(insts[0].center)


def test_text_record_errors(tmp_path):
    (tmp_path / "a.txt").write_text("kp 1 2 3 4\n")
    with pytest.raises(ValueError):
        load_keypoints_txt(tmp_path / "a.txt")
    (tmp_path / "b.txt").write_text("size 2 2\nwhat 1\n")
    with pytest.raises(ValueError):
        load_keypoints_txt(tmp_path / "b.txt")
    (tmp_path / "c.txt").write_text("inst 1 1.0 0 0 0,4\n")  # before size
    with pytest.raises(ValueError):
        load_instances_txt(tmp_path / "c.txt")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_depth_pgm_roundtrip_any_codes(seed):
    """Raster bytes that look like whitespace must not confuse the header parser."""
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    d = DepthMap(rng.uniform(0.01, 10.0, (5, 7)))
    with tempfile.TemporaryDirectory() as tmp:
        save_depth_pgm(d, Path(tmp) / "d.pgm")
        back = load_depth_pgm(Path(tmp) / "d.pgm")
    assert back.valid.all()
    assert np.abs(back.depth - d.depth).max() <= 0.5 / 6553.5 + 1e-12
