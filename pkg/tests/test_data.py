import json

import numpy as np
import pytest

from cpn.data import (
    DatasetFormatError,
    LabeledImage,
    SynthConfig,
    generate,
    load_dataset,
    read_pgm,
    save_dataset,
    write_pgm,
)
from cpn.efd import canonicalize
from cpn.geometry import iou_mask_matrix


@pytest.fixture(scope="module")
def small_set():
    return generate(SynthConfig(count=40, seed=3))


def test_same_seed_bit_identical(small_set):
    again = generate(SynthConfig(count=40, seed=3))
    for a, b in zip(small_set, again):
        assert a.pixels.tobytes() == b.pixels.tobytes()
        assert len(a.instances) == len(b.instances)
        for p, q in zip(a.instances, b.instances):
            assert p.tobytes() == q.tobytes()


def test_different_seed_differs(small_set):
    other = generate(SynthConfig(count=5, seed=4))
    assert any(a.pixels.tobytes() != b.pixels.tobytes() for a, b in zip(small_set, other))


def test_image_depends_only_on_index():
    a = generate(SynthConfig(count=6, seed=9))
    b = generate(SynthConfig(count=3, seed=9))
    for x, y in zip(a, b):
        assert x.pixels.tobytes() == y.pixels.tobytes()


def test_object_count_in_range(small_set):
    assert all(1 <= len(img.instances) <= 3 for img in small_set)
    counts = {len(img.instances) for img in small_set}
    assert counts == {1, 2, 3}


def test_no_overlap_when_disabled(small_set):
    for img in small_set:
        m = iou_mask_matrix(img.masks(), img.masks())
        off = m[~np.eye(len(m), dtype=bool)]
        assert np.all(off == 0)


def test_overlap_allowed_produces_some_overlap():
    imgs = generate(SynthConfig(count=40, seed=5, min_objects=3, max_objects=3, allow_overlap=True))
    overlaps = 0
    for img in imgs:
        m = iou_mask_matrix(img.masks(), img.masks())
        overlaps += np.count_nonzero(m[~np.eye(3, dtype=bool)])
    assert overlaps > 0


def test_polygons_canonical_and_darker(small_set):
    for img in small_set:
        for p in img.instances:
            np.testing.assert_array_equal(canonicalize(p), p)
        union = np.any(img.masks(), axis=0)
        assert img.pixels[union].mean() < img.pixels[~union].mean()
        assert img.pixels.min() >= 0 and img.pixels.max() <= 1


def test_every_shape_kind_renders():
    for shape in ("circle", "ellipse", "triangle", "blob"):
        cfg = SynthConfig(count=5, seed=1, shape_weights={shape: 1.0})
        for img in generate(cfg):
            assert all(m.sum() > 10 for m in img.masks())


def test_impossible_constraints():
    cfg = SynthConfig(count=1, min_objects=3, max_objects=3, min_radius=15, max_radius=15)
    with pytest.raises((ValueError, RuntimeError)):
        generate(cfg)


@pytest.mark.parametrize("bad", [
    {"height": 8},
    {"min_objects": 4, "max_objects": 2},
    {"min_radius": 0},
    {"shape_weights": {"hexagon": 1.0}},
    {"shape_weights": {"circle": 0.0}},
    {"noise": -1},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        generate(SynthConfig(**{"count": 1, **bad}))


def test_config_dict_round_trip():
    cfg = SynthConfig(count=7, seed=2, allow_overlap=True)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"colour": 1})


def test_save_load_round_trip(tmp_path, small_set):
    save_dataset(small_set, tmp_path)
    assert (tmp_path / "img_000000.pgm").exists() and (tmp_path / "img_000039.json").exists()
    back = load_dataset(tmp_path)
    assert len(back) == len(small_set)
    for a, b in zip(small_set, back):
        assert np.max(np.abs(a.pixels - b.pixels)) <= 1 / 255
        assert len(a.instances) == len(b.instances)
        for p, q in zip(a.instances, b.instances):
            np.testing.assert_array_equal(p, q)


def test_annotation_schema(tmp_path):
    img = LabeledImage(np.zeros((16, 20)), [np.array([[1.0, 1.0], [5.0, 1.0], [5.0, 4.0]])])
    save_dataset([img], tmp_path)
    obj = json.loads((tmp_path / "img_000000.json").read_text())
    assert obj == {"width": 20, "height": 16, "instances": [{"polygon": [[1.0, 1.0], [5.0, 1.0], [5.0, 4.0]]}]}


def test_truncated_json_names_file(tmp_path, small_set):
    save_dataset(small_set[:2], tmp_path)
    path = tmp_path / "img_000001.json"
    path.write_text(path.read_text()[:25])
    with pytest.raises(DatasetFormatError) as err:
        load_dataset(tmp_path)
    assert "img_000001.json" in str(err.value)
    assert err.value.offset > 0


def test_pgm_maxval_rejected(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(DatasetFormatError, match="maxval"):
        read_pgm(path)


@pytest.mark.parametrize("payload", [b"P2\n2 2\n255\n0 0 0 0", b"P5\n2 2\n255\n\x00", b"P5\n2", b"P5\nx 2\n255\n"])
def test_malformed_pgm(tmp_path, payload):
    path = tmp_path / "bad.pgm"
    path.write_bytes(payload)
    with pytest.raises(DatasetFormatError) as err:
        read_pgm(path)
    assert "bad.pgm" in str(err.value)


def test_pgm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n3 1\n255\n" + bytes([0, 128, 255]))
    np.testing.assert_allclose(read_pgm(path), [[0, 128 / 255, 1]])


def test_pgm_quantisation(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.random((7, 9))
    write_pgm(tmp_path / "q.pgm", x)
    assert np.max(np.abs(read_pgm(tmp_path / "q.pgm") - x)) <= 0.5 / 255 + 1e-12


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")
