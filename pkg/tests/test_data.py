import json

import numpy as np
import pytest

from dlflab import data, dlt
from dlflab.errors import FormatError, PlacementError, ValidationError


def tiny_spec(**kw):
    base = dict(labels=3, height=16, width=16, blob=4, n_train=6, n_test=4, seed=5)
    base.update(kw)
    return data.GenSpec(**base)


def test_same_seed_bit_identical_streams():
    spec = tiny_spec()
    a = data.generate_split(spec, "train")
    b = data.generate_split(spec, "train")
    for s1, s2 in zip(a, b):
        assert s1.image.tobytes() == s2.image.tobytes()
        assert np.array_equal(s1.y, s2.y)
        assert s1.placements == s2.placements


def test_train_and_test_streams_differ():
    spec = tiny_spec()
    train = data.generate_split(spec, "train")
    test = data.generate_split(spec, "test")
    assert any(
        t1.image.tobytes() != t2.image.tobytes() for t1, t2 in zip(train, test)
    )


def test_near_zero_pi_gives_near_blank_images():
    spec = tiny_spec(pi=[1e-9, 1e-9, 1e-9], noise_std=0.0, n_train=20)
    samples = data.generate_split(spec, "train")
    assert all(s.y.sum() == 0 for s in samples)
    assert all(np.max(np.abs(s.image)) == 0.0 for s in samples)


def test_single_label_always_present_and_locatable():
    spec = data.GenSpec(labels=1, height=16, width=16, blob=4, pi=[1.0], noise_std=0.0, n_train=5, n_test=1)
    patterns = data.make_patterns(spec)
    for sample in data.generate_split(spec, "train"):
        assert sample.y[0] == 1
        # template matching recovers the exact placement
        best, best_val = None, -1.0
        for r in range(13):
            for c in range(13):
                v = float((sample.image[:, r : r + 4, c : c + 4] * patterns[0]).sum())
                if v > best_val:
                    best, best_val = (r, c), v
        assert best == sample.placements[0]


def test_label_presence_matches_rendered_blobs():
    spec = tiny_spec(n_train=30)
    for sample in data.generate_split(spec, "train"):
        assert set(sample.placements) == {j for j in range(3) if sample.y[j] == 1}


def test_blobs_never_overlap():
    spec = tiny_spec(pi=[0.9, 0.9, 0.9], n_train=40)
    for sample in data.generate_split(spec, "train"):
        spots = list(sample.placements.values())
        for i in range(len(spots)):
            for k in range(i + 1, len(spots)):
                (r1, c1), (r2, c2) = spots[i], spots[k]
                assert abs(r1 - r2) >= 4 or abs(c1 - c2) >= 4


def test_blob_larger_than_image_rejected():
    with pytest.raises(PlacementError, match="smaller blobs"):
        data.GenSpec(labels=1, height=8, width=8, blob=9)


def test_impossible_packing_raises_placement_error():
    # five 4x4 blobs cannot fit a 4x8 strip (max two)
    spec = data.GenSpec(labels=5, height=4, width=8, blob=4, pi=[1.0] * 5, n_train=1, n_test=0)
    with pytest.raises(PlacementError, match="non-overlapping"):
        data.generate_split(spec, "train")


def test_empirical_frequency_converges_to_pi():
    spec = data.GenSpec(labels=2, height=8, width=8, blob=2, pi=[0.3, 0.6], n_train=10000, n_test=0, noise_std=0.0)
    patterns = data.make_patterns(spec)
    ys = np.stack(
        [data.generate_sample(spec, "train", i, patterns).y for i in range(10000)]
    )
    freq = ys.mean(axis=0)
    for j, p in enumerate(spec.pi):
        se = np.sqrt(p * (1 - p) / 10000)
        assert abs(freq[j] - p) <= 3 * se


def test_cooccurrence_boost_raises_joint_frequency():
    base = data.GenSpec(labels=2, height=8, width=8, blob=2, pi=[0.5, 0.1], n_train=4000, n_test=0, noise_std=0.0)
    boosted = data.GenSpec(
        labels=2, height=8, width=8, blob=2, pi=[0.5, 0.1],
        cooccur=[[0, 1, 0.9]], n_train=4000, n_test=0, noise_std=0.0,
    )
    freq = lambda spec: np.mean(
        [data.generate_sample(spec, "train", i).y[1] for i in range(1000)]
    )
    assert freq(boosted) > freq(base) + 0.2


def test_mask_label_blob_zeroes_region():
    spec = tiny_spec(pi=[1.0, 0.5, 0.5], noise_std=0.1)
    sample = data.generate_split(spec, "train")[0]
    masked = data.mask_label_blob(sample, 0, spec.blob)
    r, c = sample.placements[0]
    assert np.all(masked[:, r : r + 4, c : c + 4] == 0.0)
    outside = masked.copy()
    outside[:, r : r + 4, c : c + 4] = sample.image[:, r : r + 4, c : c + 4]
    assert np.array_equal(outside, sample.image)


def test_save_load_round_trip(tmp_path):
    spec = tiny_spec()
    samples = data.generate_split(spec, "test")
    data.save_dataset(tmp_path / "ds", samples, spec, "test")
    back, spec2 = data.load_dataset(tmp_path / "ds")
    assert spec2.to_dict() == spec.to_dict()
    for s1, s2 in zip(samples, back):
        assert s1.image.tobytes() == s2.image.tobytes()
        assert np.array_equal(s1.y, s2.y)
        assert s1.placements == s2.placements


def test_truncated_image_file_is_format_error(tmp_path):
    spec = tiny_spec()
    data.save_dataset(tmp_path / "ds", data.generate_split(spec, "test"), spec, "test")
    target = tmp_path / "ds" / "images" / "000001.dlt"
    target.write_bytes(target.read_bytes()[:-9])
    with pytest.raises(FormatError, match="000001.dlt"):
        data.load_dataset(tmp_path / "ds")


def test_label_count_mismatch_is_validation_error(tmp_path):
    spec = tiny_spec()
    data.save_dataset(tmp_path / "ds", data.generate_split(spec, "test"), spec, "test")
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    manifest["count"] = 99
    (tmp_path / "ds" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ValidationError, match="disagrees"):
        data.load_dataset(tmp_path / "ds")


def test_corrupt_manifest_is_format_error(tmp_path):
    spec = tiny_spec()
    data.save_dataset(tmp_path / "ds", data.generate_split(spec, "test"), spec, "test")
    (tmp_path / "ds" / "manifest.json").write_text("{nope")
    with pytest.raises(FormatError, match="invalid JSON"):
        data.load_dataset(tmp_path / "ds")


def test_generate_dataset_writes_both_splits(tmp_path):
    spec = tiny_spec()
    paths = data.generate_dataset(spec, tmp_path / "root")
    train, _ = data.load_dataset(paths["train"])
    test, _ = data.load_dataset(paths["test"])
    assert len(train) == spec.n_train
    assert len(test) == spec.n_test


def test_spec_round_trip_and_unknown_keys():
    spec = tiny_spec(cooccur=[[0, 1, 0.5]])
    assert data.GenSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()
    with pytest.raises(ValidationError, match="unknown"):
        data.GenSpec.from_dict({"labels": 2, "bogus": 1})
