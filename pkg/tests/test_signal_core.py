import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_trial
from oracles import logvar_features, nearest_centroid_accuracy

from cropcat.signal_core import (
    AugmentedPair,
    Dataset,
    FormatError,
    Provenance,
    SoftLabel,
    Trial,
    decode_dataset,
    encode_dataset,
    generate_synthetic,
    load_dataset,
    save_dataset,
)


class TestTypes:
    def test_trial_is_read_only(self):
        tr = make_trial()
        with pytest.raises(ValueError):
            tr.data[0, 0] = 1.0

    @pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.zeros(5), np.array([[1.0, np.nan]])])
    def test_trial_rejects_bad_data(self, bad):
        with pytest.raises(ValueError):
            Trial(bad, 0, 0)

    def test_dataset_rejects_label_out_of_range(self):
        with pytest.raises(ValueError, match="label"):
            Dataset((make_trial(label=2),), num_classes=2)

    def test_dataset_rejects_mixed_shapes(self):
        with pytest.raises(ValueError, match="shape"):
            Dataset((make_trial(C=2), make_trial(C=3)), num_classes=2)

    def test_dataset_needs_two_classes(self):
        with pytest.raises(ValueError):
            Dataset((), num_classes=1)

    def test_softlabel_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SoftLabel([0.5, 0.4])
        with pytest.raises(ValueError):
            SoftLabel([1.2, -0.2])
        assert SoftLabel.one_hot(1, 3) == SoftLabel([0.0, 1.0, 0.0])

    def test_provenance_ratio_must_match_window(self):
        Provenance(0, 1, "temporal", 3, 5, 3 / 8, 8)
        with pytest.raises(ValueError):
            Provenance(0, 1, "temporal", 3, 5, 0.25, 8)
        # empty window convention
        Provenance(0, 1, "spatial", 2, 1, 0.0, 4)

    def test_augmented_pair_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            AugmentedPair(np.array([[np.inf]]), SoftLabel.one_hot(0, 2))


class TestGenerateSynthetic:
    def test_construction(self):
        ds = generate_synthetic(10, 3, 100, 2, 2.0, 1.0, seed=7)
        assert len(ds) == 20
        assert ds.shape == (3, 100)
        assert np.bincount(ds.labels).tolist() == [10, 10]
        assert set(ds.subjects.tolist()) == {0, 1, 2}

    def test_deterministic(self):
        a = generate_synthetic(10, 3, 100, 2, 2.0, 1.0, seed=7)
        b = generate_synthetic(10, 3, 100, 2, 2.0, 1.0, seed=7)
        assert a == b

    def test_seeds_differ(self):
        a = generate_synthetic(2, 2, 50, 2, seed=1)
        b = generate_synthetic(2, 2, 50, 2, seed=2)
        assert a != b

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_per_class=0, C=3, T=10, K=2),
            dict(n_per_class=1, C=0, T=10, K=2),
            dict(n_per_class=1, C=3, T=0, K=2),
            dict(n_per_class=1, C=3, T=10, K=1),
            dict(n_per_class=1, C=3, T=10, K=2, noise_sd=0.0),
        ],
    )
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ValueError):
            generate_synthetic(**kwargs)

    def test_well_separated_classes_are_nearly_perfectly_decodable(self):
        train = generate_synthetic(40, 3, 250, 2, class_separation=5.0, noise_sd=0.1, seed=11)
        test = generate_synthetic(40, 3, 250, 2, class_separation=5.0, noise_sd=0.1, seed=12)
        acc = nearest_centroid_accuracy(
            logvar_features(train.stacked()), train.labels, logvar_features(test.stacked()), test.labels
        )
        assert acc >= 0.95


class TestContainer:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(5, 4, 60, 3, seed=3)
        path = tmp_path / "d.ccat"
        save_dataset(ds, path)
        assert load_dataset(path) == ds

    def test_header_layout(self):
        ds = generate_synthetic(1, 2, 3, 2, seed=0, sample_rate_hz=128.0)
        buf = encode_dataset(ds)
        assert buf[:4] == b"CCAT"
        assert struct.unpack_from("<IIIIIf", buf, 4) == (1, 2, 2, 3, 2, 128.0)
        assert len(buf) == 28 + 2 * (8 + 4 * 6)
        subject, label = struct.unpack_from("<II", buf, 28)
        assert (subject, label) == (ds[0].subject_id, ds[0].label)
        first = np.frombuffer(buf, "<f4", count=6, offset=36).reshape(2, 3)
        np.testing.assert_array_equal(first, ds[0].data)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.ccat"
        path.write_bytes(b"")
        with pytest.raises(FormatError, match="missing header"):
            load_dataset(path)

    def test_truncated_payload(self):
        ds = generate_synthetic(5, 2, 10, 2, seed=0)
        buf = encode_dataset(ds.subset([0, 1, 2, 3, 4]))
        assert struct.unpack_from("<I", buf, 8) == (5,)
        record = 8 + 4 * 20
        corrupt = buf[: 28 + 4 * record]
        with pytest.raises(FormatError, match="truncated payload"):
            decode_dataset(corrupt)

    def test_bad_magic(self):
        buf = bytearray(encode_dataset(generate_synthetic(1, 1, 4, 2)))
        buf[:4] = b"XXXX"
        with pytest.raises(FormatError, match="magic"):
            decode_dataset(bytes(buf))

    def test_trailing_bytes_are_a_shape_mismatch(self):
        buf = encode_dataset(generate_synthetic(1, 1, 4, 2)) + b"\0" * 4
        with pytest.raises(FormatError, match="shape mismatch"):
            decode_dataset(buf)

    def test_label_invariant_enforced_on_load(self):
        buf = bytearray(encode_dataset(generate_synthetic(1, 1, 4, 2)))
        struct.pack_into("<I", buf, 28 + 4, 7)
        with pytest.raises(FormatError, match="label"):
            decode_dataset(bytes(buf))

    def test_single_class_file_is_representable(self):
        ds = Dataset((make_trial(label=0), make_trial(label=0, seed=1)), num_classes=4)
        back = decode_dataset(encode_dataset(ds))
        assert back.num_classes == 4
        assert set(back.labels.tolist()) == {0}

    def test_empty_dataset(self):
        ds = Dataset((), num_classes=2)
        assert decode_dataset(encode_dataset(ds)) == ds


f32 = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=32)


@st.composite
def datasets(draw):
    n = draw(st.integers(0, 5))
    C = draw(st.integers(1, 4))
    T = draw(st.integers(1, 12))
    K = draw(st.integers(2, 5))
    trials = []
    for _ in range(n):
        data = np.array(draw(st.lists(f32, min_size=C * T, max_size=C * T)), dtype=np.float64).reshape(C, T)
        trials.append(Trial(data, draw(st.integers(0, 2**32 - 1)), draw(st.integers(0, K - 1))))
    fs = float(np.float32(draw(st.floats(1.0, 1e4, width=32))))
    return Dataset(tuple(trials), K, fs)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_round_trip_property(ds):
    assert decode_dataset(encode_dataset(ds)) == ds
