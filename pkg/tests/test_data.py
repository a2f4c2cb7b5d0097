import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mptsnet import data, spectral
from mptsnet.errors import ConfigError, DataError, FormatError


class TestParseTs:
    def test_valid_fixture(self, data_dir):
        ds = data.load_ts(data_dir / "valid.ts")
        assert ds.values.shape == (2, 2, 3)
        np.testing.assert_array_equal(ds.values[0], [[1.0, 2.0, 3.0], [-1.5, 0.0, 2.25]])
        np.testing.assert_array_equal(ds.values[1], [[0.5, 0.25, -0.4], [10.0, 20.0, 30.0]])
        # indices follow the header's class order, not record order
        assert ds.label_names == ("up", "down")
        np.testing.assert_array_equal(ds.labels, [1, 0])
        assert ds.meta["problemname"] == "Tiny"

    def test_wrong_length_names_line(self, data_dir):
        with pytest.raises(FormatError, match="line 9"):
            data.load_ts(data_dir / "wrong_length.ts")

    def test_ragged_dimensions(self, data_dir):
        with pytest.raises(FormatError, match="line 8"):
            data.load_ts(data_dir / "ragged.ts")

    def test_missing_label(self, data_dir):
        with pytest.raises(FormatError, match="line 8.*no class label"):
            data.load_ts(data_dir / "missing_label.ts")

    def test_unknown_label(self, data_dir):
        with pytest.raises(DataError, match="line 8.*'c'"):
            data.load_ts(data_dir / "unknown_label.ts")

    def test_bad_numeric(self, data_dir):
        with pytest.raises(DataError, match="line 8.*'two'") as exc:
            data.load_ts(data_dir / "bad_numeric.ts")
        assert not isinstance(exc.value, FormatError)

    def test_missing_data_section(self, data_dir):
        with pytest.raises(FormatError, match="@data"):
            data.load_ts(data_dir / "no_data.ts")

    def test_unlabeled(self, data_dir):
        ds = data.load_ts(data_dir / "unlabeled.ts")
        assert ds.values.shape == (2, 1, 4)
        assert not ds.has_labels
        with pytest.raises(DataError):
            ds.require_labels()

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="nope.ts"):
            data.load_ts(tmp_path / "nope.ts")

    def test_case_insensitive_and_whitespace(self):
        text = "@PROBLEMNAME x\n  @ClassLabel TRUE a b  \n@DATA\n 1 , 2 ,3,4 : b \n"
        ds = data.parse_ts(text)
        np.testing.assert_array_equal(ds.values, [[[1, 2, 3, 4]]])
        np.testing.assert_array_equal(ds.labels, [1])

    @pytest.mark.parametrize(
        "text, error",
        [
            ("@equalLength false\n@classLabel true a\n@data\n1,2:a\n", FormatError),
            ("@timeStamps true\n@classLabel true a\n@data\n1,2:a\n", FormatError),
            ("@missing true\n@classLabel true a\n@data\n1,?,3:a\n", DataError),
            ("@classLabel true a\n@data\n1,nan,3:a\n", DataError),
            ("@classLabel true a\n@data\n", FormatError),
            ("@classLabel maybe\n@data\n1,2\n", FormatError),
            ("@seriesLength ten\n@data\n1,2\n", FormatError),
            ("1,2,3\n@data\n", FormatError),
        ],
    )
    def test_rejections(self, text, error):
        with pytest.raises(error):
            data.parse_ts(text)

    def test_basic_motions(self, data_dir):
        train = data.load_ts(data_dir / "BasicMotions_TRAIN.ts")
        test = data.load_ts(data_dir / "BasicMotions_TEST.ts")
        assert train.values.shape == (40, 6, 100)
        assert test.values.shape == (40, 6, 100)
        assert train.label_names == ("Standing", "Running", "Walking", "Badminton")
        assert np.bincount(train.labels).tolist() == [10, 10, 10, 10]

    def test_render_round_trip(self, data_dir):
        ds = data.load_ts(data_dir / "BasicMotions_TRAIN.ts")
        again = data.parse_ts(data.render_ts(ds))
        np.testing.assert_allclose(again.values, ds.values, rtol=5e-6, atol=0)
        np.testing.assert_array_equal(again.labels, ds.labels)
        assert again.label_names == ds.label_names

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 6))
    def test_render_round_trip_random(self, seed, d, m):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=(m, d, 5)) * 10.0 ** rng.integers(-4, 5)
        ds = data.Dataset(values, rng.integers(0, 2, size=m), ("neg", "pos"))
        again = data.parse_ts(data.render_ts(ds))
        np.testing.assert_allclose(again.values, ds.values, rtol=5e-6, atol=0)
        np.testing.assert_array_equal(again.labels, ds.labels)


class TestNormalize:
    def test_constant_channel(self):
        values = np.stack([np.ones((2, 10)), np.arange(20.0).reshape(2, 10)], axis=1)
        (norm,), stats = data.normalize(data.Dataset(values, [0, 0], ("a",)))
        assert stats.std[0] == data.STD_FLOOR
        np.testing.assert_array_equal(norm.values[:, 0], 0.0)

    def test_training_moments(self, rng):
        ds = data.Dataset(rng.normal(3.0, 5.0, size=(8, 3, 50)), np.zeros(8), ("a",))
        (norm,), _ = data.normalize(ds)
        np.testing.assert_allclose(norm.values.mean(axis=(0, 2)), 0.0, atol=1e-5)
        np.testing.assert_allclose(norm.values.std(axis=(0, 2)), 1.0, atol=1e-3)

    def test_uses_training_stats_for_test_split(self):
        train = data.Dataset(np.array([[[0.0, 2.0]], [[0.0, 2.0]]]), [0, 0], ("a",))
        test = data.Dataset(np.array([[[10.0, 12.0]]]), [0], ("a",))
        (_, test_norm), stats = data.normalize(train, test)
        assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
        np.testing.assert_array_equal(test_norm.values, [[[9.0, 11.0]]])

    def test_idempotent(self, rng):
        ds = data.Dataset(rng.normal(2.0, 3.0, size=(5, 2, 30)), np.zeros(5), ("a",))
        (once,), _ = data.normalize(ds)
        (twice,), _ = data.normalize(once)
        np.testing.assert_allclose(twice.values, once.values, atol=1e-5)

    def test_stats_round_trip(self, rng):
        ds = data.Dataset(rng.normal(size=(3, 2, 10)), np.zeros(3), ("a",))
        stats = data.NormalizationStats.fit(ds)
        again = data.NormalizationStats.from_dict(stats.to_dict())
        assert np.array_equal(again.mean, stats.mean) and np.array_equal(again.std, stats.std)


class TestBatches:
    def ds(self, m=10):
        return data.Dataset(np.arange(m, dtype=float).reshape(m, 1, 1), np.zeros(m), ("a",))

    def test_sizes(self):
        assert [len(y) for _, y in data.batches(self.ds(), 4, seed=1)] == [4, 4, 2]

    def test_seeded_order_repeatable(self):
        a = [x.ravel().tolist() for x, _ in data.batches(self.ds(), 3, seed=5)]
        b = [x.ravel().tolist() for x, _ in data.batches(self.ds(), 3, seed=5)]
        assert a == b
        assert sorted(sum(a, [])) == list(range(10))

    def test_unshuffled_order(self):
        flat = np.concatenate([x.ravel() for x, _ in data.batches(self.ds(), 4, shuffle=False)])
        np.testing.assert_array_equal(flat, np.arange(10))

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            next(data.batches(self.ds(), 0))


class TestSynth:
    def test_noise_free_classes_separable_by_spectrum(self):
        spec = data.SynthSpec(classes=[[8], [12]], num_variables=3, series_length=96,
                              m_per_class=10, noise_std=0.0, seed=3)
        ds = data.synth_planted_periods(spec)
        for x, label in zip(ds.values, ds.labels):
            top = spectral.identify_main_periods(spectral.compute_amplitude_spectrum(x), 1)
            assert top.periods == [[8], [12]][label]

    def test_balanced(self):
        ds = data.synth_planted_periods(data.SynthSpec(classes=[[8], [12]], m_per_class=20))
        assert ds.num_samples == 40
        assert np.bincount(ds.labels).tolist() == [20, 20]

    def test_seeded_bit_identical(self):
        spec = data.SynthSpec(classes=[[8], [12, 6]], seed=9)
        a, b = data.synth_planted_periods(spec), data.synth_planted_periods(spec)
        assert np.array_equal(a.values, b.values)

    def test_period_too_long(self):
        with pytest.raises(ConfigError):
            data.synth_planted_periods(data.SynthSpec(classes=[[49]], series_length=96))

    def test_parse_period_classes(self):
        assert data.parse_period_classes("8;12") == [[8.0], [12.0]]
        assert data.parse_period_classes("8,20;12") == [[8.0, 20.0], [12.0]]
        with pytest.raises(ConfigError):
            data.parse_period_classes("8;;x")
