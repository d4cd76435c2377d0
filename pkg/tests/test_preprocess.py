import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_trial
from oracles import measured_gain, standardize_oracle

from cropcat.preprocess import (
    FilterSpec,
    butterworth_gain,
    exp_moving_standardize,
    lowpass_filter,
    preprocess_dataset,
    standardize_array,
)
from cropcat.signal_core import Dataset, Trial, generate_synthetic

FS = 250.0


def tone(freq, n=5000, channels=1):
    t = np.arange(n) / FS
    return Trial(np.tile(np.sin(2 * np.pi * freq * t), (channels, 1)), 0, 0)


class TestFilterSpec:
    def test_cutoff_at_nyquist_rejected(self):
        with pytest.raises(ValueError, match="Nyquist"):
            FilterSpec(FS, cutoff_hz=125.0)

    @pytest.mark.parametrize("order", [0, 3, -2])
    def test_order_must_be_even_positive(self, order):
        with pytest.raises(ValueError):
            FilterSpec(FS, order=order)

    def test_defaults(self):
        spec = FilterSpec(FS)
        assert (spec.cutoff_hz, spec.order) == (38.0, 4)
        assert spec.sos().shape == (2, 6)


class TestLowpass:
    @pytest.mark.parametrize("freq, lo, hi", [(10.0, 0.99, 1.01), (50.0, 0.0, 0.35)])
    def test_band_gains(self, freq, lo, hi):
        out = lowpass_filter(tone(freq), FilterSpec(FS))
        assert lo <= measured_gain(out.data[0], freq, FS, settle=1000) <= hi

    def test_gain_at_cutoff(self):
        out = lowpass_filter(tone(38.0), FilterSpec(FS))
        assert measured_gain(out.data[0], 38.0, FS, settle=1000) == pytest.approx(1 / np.sqrt(2), rel=0.02)

    def test_shape_and_metadata_preserved(self):
        tr = Trial(np.random.default_rng(0).standard_normal((3, 200)), subject_id=4, label=1)
        out = lowpass_filter(tr, FilterSpec(FS))
        assert out.shape == tr.shape
        assert (out.subject_id, out.label) == (4, 1)

    def test_causal(self):
        # an impulse at t0 cannot produce output before t0
        x = np.zeros((1, 300))
        x[0, 150] = 1.0
        out = lowpass_filter(Trial(x, 0, 0), FilterSpec(FS)).data
        assert np.all(out[0, :150] == 0.0)
        assert out[0, 150] != 0.0

    def test_linearity(self, rng):
        spec = FilterSpec(FS)
        x = rng.standard_normal((2, 400))
        y = rng.standard_normal((2, 400))
        a, b = 1.7, -0.3
        lhs = lowpass_filter(Trial(a * x + b * y, 0, 0), spec).data
        rhs = a * lowpass_filter(Trial(x, 0, 0), spec).data + b * lowpass_filter(Trial(y, 0, 0), spec).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_time_invariance(self, rng):
        spec = FilterSpec(FS)
        shift = 37
        x = rng.standard_normal((1, 600))
        shifted = np.concatenate([np.zeros((1, shift)), x[:, :-shift]], axis=1)
        a = lowpass_filter(Trial(x, 0, 0), spec).data
        b = lowpass_filter(Trial(shifted, 0, 0), spec).data
        settle = 8 * spec.order
        np.testing.assert_allclose(b[:, shift + settle :], a[:, settle:-shift], rtol=1e-9, atol=1e-12)

    def test_matches_analytic_response_across_band(self):
        spec = FilterSpec(FS)
        for f in (5.0, 20.0, 30.0, 45.0, 60.0):
            out = lowpass_filter(tone(f), spec)
            expected = butterworth_gain(f, spec.cutoff_hz, spec.order)
            assert measured_gain(out.data[0], f, FS, settle=1000) == pytest.approx(expected, rel=0.02)


class TestStandardize:
    def test_constant_channel_is_zero(self):
        out = exp_moving_standardize(Trial(np.full((2, 300), 5.0), 0, 0))
        assert np.all(out.data == 0.0)

    def test_matches_naive_loop(self, rng):
        x = rng.standard_normal((3, 400)) * 7 + 2
        np.testing.assert_allclose(standardize_array(x, 0.001, 1e-4), standardize_oracle(x, 0.001, 1e-4), rtol=1e-12)

    def test_identical_channels_identical_outputs(self, rng):
        row = rng.standard_normal(200)
        out = exp_moving_standardize(Trial(np.stack([row, row]), 0, 0)).data
        assert np.array_equal(out[0], out[1])

    @pytest.mark.parametrize("alpha, eps", [(0.0, 1e-4), (1.0, 1e-4), (0.1, 0.0)])
    def test_bad_arguments(self, alpha, eps):
        with pytest.raises(ValueError):
            standardize_array(np.ones((1, 5)), alpha, eps)

    def test_running_variance_non_negative(self, rng):
        _, state = standardize_array(rng.standard_normal((4, 300)), return_state=True)
        assert np.all(state.running_var >= 0)

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(1, 3),
        st.integers(2, 120),
        st.floats(1e-4, 0.5),
        st.floats(1e-8, 1.0),
        st.integers(0, 2**31),
    )
    def test_oracle_equivalence_property(self, C, T, alpha, eps, seed):
        x = np.random.default_rng(seed).standard_normal((C, T)) * 3
        np.testing.assert_allclose(standardize_array(x, alpha, eps), standardize_oracle(x, alpha, eps), rtol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.1, 1e3), st.integers(500, 3000), st.integers(0, 2**31))
    def test_tail_amplitude_is_scale_free(self, scale, T, seed):
        x = np.random.default_rng(seed).standard_normal((1, T)) * scale
        out = standardize_array(x)
        assert 0.5 <= out[0, T // 2 :].std(ddof=1) <= 2.0


class TestPreprocessDataset:
    def test_empty(self):
        ds = Dataset((), 2)
        assert len(preprocess_dataset(ds, FilterSpec(FS))) == 0

    def test_equals_manual_chain_and_is_deterministic(self):
        ds = generate_synthetic(3, 2, 200, 2, seed=4)
        spec = FilterSpec(ds.sample_rate_hz)
        out = preprocess_dataset(ds, spec)
        manual = [exp_moving_standardize(lowpass_filter(t, spec)) for t in ds]
        assert list(out.trials) == manual
        assert preprocess_dataset(ds, spec) == out
