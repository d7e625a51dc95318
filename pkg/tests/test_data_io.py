import os
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from polysample.synthetic import (SyntheticSpec, gen_synthetic, make_templates, nearest_template,
                                  read_manifest, write_split)
from polysample.tensorfile import MAGIC, TensorFileError, load_tensors, parse_tensors, save_tensors
from polysample.tensor import Tensor


def test_round_trip_bitwise(tmp_path, rng):
    data = {"a": rng.normal(size=(2, 3, 4, 5)), "b": np.array(3.5), "ü": rng.normal(size=7),
            "t": Tensor(rng.normal(size=(2, 2)))}
    path = tmp_path / "x.lpst"
    save_tensors(str(path), data)
    back = load_tensors(str(path))
    assert list(back) == list(data)
    for k, v in data.items():
        v = getattr(v, "data", v)
        assert back[k].shape == v.shape and back[k].tobytes() == v.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=4)))
def test_round_trip_any_float(arr):
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "t.lpst")
        save_tensors(path, {"x": arr})
        assert load_tensors(path)["x"].tobytes() == arr.tobytes()


def test_empty_file_is_valid(tmp_path):
    path = tmp_path / "e.lpst"
    save_tensors(str(path), {})
    assert path.read_bytes() == MAGIC + struct.pack("<HI", 1, 0)
    assert load_tensors(str(path)) == {}


def test_layout_is_exact(tmp_path):
    path = tmp_path / "one.lpst"
    save_tensors(str(path), {"w": np.array([[1.0, 2.0]])})
    expect = (MAGIC + struct.pack("<HI", 1, 1) + struct.pack("<I", 1) + b"w" + struct.pack("<B", 2)
              + struct.pack("<2I", 1, 2) + struct.pack("<2d", 1.0, 2.0))
    assert path.read_bytes() == expect


def _valid_bytes():
    return (MAGIC + struct.pack("<HI", 1, 1) + struct.pack("<I", 1) + b"w" + struct.pack("<B", 1)
            + struct.pack("<I", 2) + struct.pack("<2d", 1.0, 2.0))


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<H", 2) + b[6:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
])
def test_corrupt_files_rejected(mutate, msg):
    with pytest.raises(TensorFileError, match=msg):
        parse_tensors(mutate(_valid_bytes()))


def test_duplicate_names_rejected():
    entry = struct.pack("<I", 1) + b"w" + struct.pack("<B", 0) + struct.pack("<d", 1.0)
    buf = MAGIC + struct.pack("<HI", 1, 2) + entry + entry
    with pytest.raises(TensorFileError, match="duplicate"):
        parse_tensors(buf)


def test_noiseless_two_class_oracle_is_perfect():
    spec = SyntheticSpec(num_classes=2, noise_sigma=0.0, train_size=50, test_size=50)
    data = gen_synthetic(spec)
    assert np.mean(nearest_template(data.test_images, data.templates) == data.test_labels) == 1.0


def test_default_task_oracle_accuracy():
    data = gen_synthetic(SyntheticSpec(train_size=10, test_size=200))
    assert np.mean(nearest_template(data.test_images, data.templates) == data.test_labels) == 1.0


def test_labels_follow_templates_across_shifts():
    spec = SyntheticSpec(num_classes=3, noise_sigma=0.0, train_size=100, test_size=10)
    data = gen_synthetic(spec)
    # every noiseless image is exactly a circular shift of its class template
    for img, label in zip(data.train_images[:20], data.train_labels[:20]):
        t = data.templates[label]
        assert any(np.array_equal(img[0], np.roll(t, (a, b), (0, 1)))
                   for a in range(16) for b in range(16))


def test_generation_is_deterministic():
    a = gen_synthetic(SyntheticSpec(seed=5, train_size=30, test_size=10))
    b = gen_synthetic(SyntheticSpec(seed=5, train_size=30, test_size=10))
    assert a.train_images.tobytes() == b.train_images.tobytes()
    assert np.array_equal(a.test_labels, b.test_labels)


def test_blobs_carry_masks():
    data = gen_synthetic(SyntheticSpec(family="blobs", train_size=8, test_size=4))
    assert data.train_masks.shape == (8, 16, 16)
    assert set(np.unique(data.train_masks)) <= {0.0, 1.0}


@pytest.mark.parametrize("spec", [
    SyntheticSpec(image_extent=15), SyntheticSpec(num_classes=1),
    SyntheticSpec(num_classes=9, image_extent=8), SyntheticSpec(family="stripes"),
])
def test_bad_specs(spec):
    with pytest.raises(ValueError):
        make_templates(spec)


def test_manifest_round_trip(tmp_path):
    data = gen_synthetic(SyntheticSpec(train_size=6, test_size=2))
    path = write_split(str(tmp_path), "train", data.train_images, data.train_labels)
    images, labels = read_manifest(path)
    assert images.tobytes() == data.train_images.tobytes()
    assert np.array_equal(labels, data.train_labels)
    with open(path) as fh:
        assert fh.readline().strip() == "file,label"


def test_mask_manifest_round_trip(tmp_path):
    data = gen_synthetic(SyntheticSpec(family="blobs", train_size=3, test_size=2))
    path = write_split(str(tmp_path), "seg", data.train_images, masks=data.train_masks)
    images, masks = read_manifest(path)
    assert np.array_equal(masks, data.train_masks)


def test_manifest_errors(tmp_path):
    bad = tmp_path / "manifest.csv"
    bad.write_text("path,target\n")
    with pytest.raises(ValueError, match="header"):
        read_manifest(str(bad))
    bad.write_text("file,label\n")
    with pytest.raises(ValueError, match="no samples"):
        read_manifest(str(bad))
