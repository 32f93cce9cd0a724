"""Unit tests for dataset generation, splitting and the binary file format."""

from __future__ import annotations

import numpy as np
import pytest

from rydbergfdm import seeding
from rydbergfdm.codec import PhaseLabel
from rydbergfdm.config import DatasetSpec, SplitPlan
from rydbergfdm.dataset import (
    MAGIC,
    Record,
    add_white_noise,
    export_csv,
    generate_dataset,
    noised_copy,
    read_dataset,
    records_to_arrays,
    split,
    write_dataset,
)
from rydbergfdm.errors import DatasetFormatError, ShapeError, TrainingError
from rydbergfdm.physics import Spectrum


def fake_records(count: int, n: int = 4) -> list[Record]:
    label = PhaseLabel(np.array([1, 0, 1, 0], dtype=np.uint8))
    return [Record(Spectrum(np.full(n, float(i)), 1e-6, label), label) for i in range(count)]


@pytest.fixture(scope="module")
def tiny_spec():
    return DatasetSpec(n_samples_per_class=3, n=64, noise_sigma=0.05, seed=11)


class TestNoise:
    """White-noise injection."""

    pytestmark = pytest.mark.unit

    def test_zero_sigma_copies(self, rng):
        s = Spectrum(np.arange(5.0), 1e-6)
        noisy = add_white_noise(s, 0.0, rng)
        np.testing.assert_array_equal(noisy.samples, s.samples)
        assert noisy.samples is not s.samples

    def test_negative_sigma(self, rng):
        with pytest.raises(ValueError):
            add_white_noise(Spectrum(np.zeros(3), 1e-6), -0.1, rng)

    def test_sample_statistics(self, rng):
        noisy = add_white_noise(Spectrum(np.zeros(200_000), 1e-6), 0.3, rng)
        assert abs(noisy.samples.mean()) < 0.005
        assert noisy.samples.std() == pytest.approx(0.3, rel=0.01)

    def test_class_mean_converges_to_noiseless_spectrum(self, tiny_spec):
        """
        Verify per-class averages of noisy draws settle on the noiseless spectrum.

        200 draws at sigma 0.1 for each of the 8 classes: at least 99% of the 512 points
        lie within 3 sigma / sqrt(200) of the noiseless samples and none beyond 5 sigma / sqrt(200).
        """
        sigma, draws = 0.1, 200
        clean = generate_dataset(tiny_spec.model_copy(update={"noise_sigma": 0.0, "n_samples_per_class": 1}))
        deviations = []
        for class_index, record in enumerate(clean):
            rngs = (seeding.stream(0, "class-mean", class_index, k) for k in range(draws))
            mean = np.mean([add_white_noise(record.spectrum, sigma, r).samples for r in rngs], axis=0)
            deviations.append(np.abs(mean - record.spectrum.samples))
        deviations = np.concatenate(deviations) / (sigma / np.sqrt(draws))
        assert deviations.size == 8 * 64
        assert np.mean(deviations <= 3.0) >= 0.99
        assert deviations.max() < 5.0

    def test_noised_copy_is_seeded(self):
        records = fake_records(3)
        a = noised_copy(records, 0.1, seed=5, repeat=1)
        b = noised_copy(records, 0.1, seed=5, repeat=1)
        c = noised_copy(records, 0.1, seed=5, repeat=2)
        np.testing.assert_array_equal(a[0].spectrum.samples, b[0].spectrum.samples)
        assert not np.array_equal(a[0].spectrum.samples, c[0].spectrum.samples)


class TestGenerate:
    """Balanced, reproducible synthetic records."""

    pytestmark = pytest.mark.unit

    def test_balanced_and_scaled(self, tiny_spec):
        records = generate_dataset(tiny_spec)
        assert len(records) == 8 * 3
        counts = np.bincount([r.label.frame.class_index() for r in records])
        np.testing.assert_array_equal(counts, 3)
        for record in records:
            assert len(record.spectrum) == 64
            assert record.spectrum.samples.min() == 0.0
            assert record.spectrum.samples.max() == 1.0

    def test_same_seed_is_identical(self, tiny_spec):
        a, b = generate_dataset(tiny_spec), generate_dataset(tiny_spec)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.spectrum.samples, rb.spectrum.samples)
            assert ra.label == rb.label

    def test_noiseless_duplicates_match(self, tiny_spec):
        records = generate_dataset(tiny_spec.model_copy(update={"noise_sigma": 0.0}))
        np.testing.assert_array_equal(records[0].spectrum.samples, records[1].spectrum.samples)

    def test_independent_of_process_count(self, tiny_spec):
        serial = generate_dataset(tiny_spec, jobs=1)
        pooled = generate_dataset(tiny_spec, jobs=2)
        for ra, rb in zip(serial, pooled):
            np.testing.assert_array_equal(ra.spectrum.samples, rb.spectrum.samples)

    def test_active_bits_class_space(self):
        spec = DatasetSpec(
            codec={"n_bins": 6, "active_bits": 2}, n_samples_per_class=1, n=32, seed=0
        )
        records = generate_dataset(spec)
        assert len(records) == 4
        assert all(not any(r.label.bits[2:]) for r in records)

    def test_records_to_arrays(self, tiny_spec):
        x, y = records_to_arrays(generate_dataset(tiny_spec))
        assert x.shape == (24, 64)
        assert y.shape == (24, 4)
        with pytest.raises(TrainingError):
            records_to_arrays([])
        with pytest.raises(ShapeError):
            records_to_arrays(fake_records(1, n=4) + fake_records(1, n=5))


class TestSplit:
    """Seeded test/fold partition."""

    pytestmark = pytest.mark.unit

    def test_sizes(self):
        result = split(fake_records(1000), SplitPlan(), seed=0)
        assert len(result.test) == 200
        assert [len(f) for f in result.folds] == [200, 200, 200, 200]

    def test_disjoint_and_complete(self):
        records = fake_records(103)
        result = split(records, SplitPlan(), seed=3)
        ids = [r.spectrum.samples[0] for r in result.test]
        for fold in result.folds:
            ids.extend(r.spectrum.samples[0] for r in fold)
        assert sorted(ids) == list(range(103))
        assert np.sum(result.assignment == -1) == len(result.test)

    def test_seeded(self):
        a = split(fake_records(50), SplitPlan(), seed=1)
        b = split(fake_records(50), SplitPlan(), seed=1)
        np.testing.assert_array_equal(a.assignment, b.assignment)

    def test_train_val(self):
        result = split(fake_records(100), SplitPlan(), seed=0)
        train, val = result.train_val(2)
        assert len(val) == len(result.folds[2])
        assert len(train) + len(val) == 80

    def test_too_few_records(self):
        with pytest.raises(TrainingError):
            split(fake_records(19), SplitPlan(), seed=0)


class TestDatasetFile:
    """Binary persistence with checksum."""

    pytestmark = pytest.mark.unit

    def test_round_trip(self, tiny_spec, tmp_path):
        records = generate_dataset(tiny_spec)
        path = write_dataset(records, tmp_path / "d.ryds", tiny_spec, run_id="r1")
        loaded = read_dataset(path)
        assert loaded.run_id == "r1"
        assert loaded.header["count"] == 24
        assert DatasetSpec.model_validate(loaded.header["spec"]) == tiny_spec
        for a, b in zip(records, loaded.records):
            np.testing.assert_array_equal(a.spectrum.samples, b.spectrum.samples)
            assert a.label == b.label

    def test_empty_round_trip(self, tmp_path):
        loaded = read_dataset(write_dataset([], tmp_path / "empty.ryds"))
        assert loaded.records == []
        assert loaded.header["count"] == 0
        assert loaded.run_id is None

    def test_magic(self, tmp_path):
        path = tmp_path / "bad.ryds"
        path.write_bytes(b"NOPE!" + bytes(20))
        with pytest.raises(DatasetFormatError, match="magic"):
            read_dataset(path)

    def test_corruption_detected(self, tmp_path):
        path = write_dataset(fake_records(4), tmp_path / "d.ryds")
        blob = bytearray(path.read_bytes())
        blob[len(MAGIC) + 40] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetFormatError, match="Checksum"):
            read_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            read_dataset(tmp_path / "absent.ryds")

    def test_csv_export(self, tmp_path):
        path = export_csv(fake_records(2), tmp_path / "d.csv", run_id="xyz")
        lines = path.read_text().splitlines()
        assert lines[0] == "# run_id: xyz"
        assert lines[1].split(",")[:5] == ["bit_0", "bit_1", "bit_2", "bit_3", "s_0"]
        assert lines[3].split(",") == ["1", "0", "1", "0", "1", "1", "1", "1"]
