"""Unit tests for metrics, sweeps, benchmarking and the payload demo."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rydbergfdm import evaluation
from rydbergfdm.codec import Frame
from rydbergfdm.errors import ConfigError, ShapeError
from rydbergfdm.evaluation import (
    _mean_stderr,
    _subsample,
    bench_inference,
    confusion,
    dl_vs_fit_curve,
    evaluate_network,
    exact_match_accuracy,
    noise_grid,
    paired_test_sets,
    payload_roundtrip,
    write_json,
)
from rydbergfdm.network.layers import minmax_scale
from rydbergfdm.network.model import DecoderNetwork
from rydbergfdm.physics import Spectrum


def frames(*texts):
    return [Frame.parse(t) for t in texts]


class NearestTemplateDecoder:
    """Stands in for a trained network: decodes to the closest noiseless class spectrum."""

    def __init__(self, records):
        self.input_len = len(records[0].spectrum)
        self.templates = np.stack([minmax_scale(r.spectrum.samples) for r in records])
        self.bits = np.stack([r.label.bits for r in records]).astype(float)

    def predict_proba(self, x):
        distances = ((x[:, None, :] - self.templates[None, :, :]) ** 2).sum(axis=-1)
        return self.bits[distances.argmin(axis=1)]


@pytest.fixture(scope="module")
def zero_network(small_config):
    """Decoder that outputs 0.5 everywhere and therefore always decodes all-zero frames."""
    return DecoderNetwork.zeros(small_config.network, small_config.sampling.n, small_config.codec.n_bins)


@pytest.fixture(scope="module")
def quick_config(small_config):
    return small_config.apply_overrides({"train.epochs": 1, "eval.repeats": 2})


class TestAccuracy:
    """Exact-match accuracy."""

    pytestmark = pytest.mark.unit

    def test_all_correct(self):
        assert exact_match_accuracy(frames("101", "000"), frames("101", "000")) == 1.0

    def test_one_bit_error_counts_whole_frame(self):
        assert exact_match_accuracy(frames("101", "000"), frames("100", "000")) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            exact_match_accuracy(frames("101"), frames("101", "000"))

    def test_empty(self):
        with pytest.raises(ShapeError):
            exact_match_accuracy([], [])

    def test_mean_stderr(self):
        mean, stderr = _mean_stderr([0.8, 1.0])
        assert mean == pytest.approx(0.9)
        assert stderr == pytest.approx(0.1)
        assert _mean_stderr([0.5]) == (0.5, 0.0)


class TestConfusion:
    """Class-pair counting."""

    pytestmark = pytest.mark.unit

    def test_counts(self):
        matrix = confusion(frames("00", "01", "01", "11"), frames("00", "01", "10", "11"))
        assert matrix.n_classes == 4
        assert matrix.counts[2, 1] == 1
        assert np.trace(matrix.counts) == 3
        assert matrix.accuracy == 0.75
        np.testing.assert_array_equal(matrix.row_sums, [1, 1, 1, 1])

    def test_rows_sum_to_class_totals(self, rng):
        truths = [Frame(tuple(rng.integers(0, 2, 3))) for _ in range(50)]
        preds = [Frame(tuple(rng.integers(0, 2, 3))) for _ in range(50)]
        matrix = confusion(preds, truths)
        expected = np.bincount([t.class_index() for t in truths], minlength=8)
        np.testing.assert_array_equal(matrix.row_sums, expected)
        assert matrix.total == 50

    def test_active_bits_strict(self):
        with pytest.raises(ShapeError):
            confusion(frames("0010"), frames("0000"), class_bits=2)

    def test_active_bits_rejected_column(self):
        matrix = confusion(frames("0010", "1000"), frames("0000", "1000"), class_bits=2, strict=False)
        assert matrix.n_classes == 4
        assert matrix.rejected[0] == 1
        assert matrix.counts[2, 2] == 1
        assert matrix.accuracy == 0.5

    def test_truth_outside_class_space(self):
        with pytest.raises(ShapeError):
            confusion(frames("0000"), frames("0001"), class_bits=2, strict=False)

    def test_csv(self, tmp_path):
        matrix = confusion(frames("0", "1", "1"), frames("0", "1", "0"))
        lines = matrix.to_csv(tmp_path / "c.csv", run_id="q").read_text().splitlines()
        assert lines == ["# run_id: q", "truth,0,1,rejected", "0,1,1,0", "1,0,1,0"]


class TestEvaluateNetwork:
    """Network accuracy over records."""

    pytestmark = pytest.mark.unit

    def test_zero_network_hits_class_zero_only(self, zero_network, small_dataset):
        accuracy, matrix = evaluate_network(zero_network, small_dataset)
        assert accuracy == pytest.approx(1 / 8)
        assert matrix.counts[:, 0].sum() == len(small_dataset)


class TestSweeps:
    """Noise grid and network-versus-fit curve."""

    pytestmark = pytest.mark.unit

    def test_noise_grid_shape(self, quick_config, tmp_path):
        grid = noise_grid([0.0], [0.0, 0.2], quick_config)
        assert grid.accuracy.shape == (1, 2)
        assert np.all((grid.accuracy >= 0) & (grid.accuracy <= 1))
        assert np.all(grid.stderr >= 0)
        lines = grid.to_csv(tmp_path / "grid.csv").read_text().splitlines()
        assert lines[0] == "train_sigma,test_sigma,accuracy,stderr"
        assert len(lines) == 3

    def test_noise_grid_needs_axes(self, quick_config):
        with pytest.raises(ValueError):
            noise_grid([], [0.1], quick_config)

    def test_noise_grid_degrades_from_perfect_corner(self, small_config, monkeypatch):
        """
        Verify grid accuracy starts at 1 without noise and does not rise with test noise.

        Training is replaced by a nearest-template decoder over the noiseless class
        spectra, so the grid reflects only the test-noise draws. Cells may rise by at
        most 2% between neighbouring test sigmas.
        """
        config = small_config.apply_overrides({"dataset.n_samples_per_class": 50, "eval.repeats": 5})
        decoder = NearestTemplateDecoder(evaluation._clean_test_records(config))
        monkeypatch.setattr(evaluation, "train_for_sigma", lambda sigma, cfg: decoder)
        grid = noise_grid([0.0], [0.0, 0.3, 1.0, 3.0], config)
        assert grid.accuracy[0, 0] == 1.0
        assert grid.stderr[0, 0] == 0.0
        assert np.all(np.diff(grid.accuracy[0]) <= 0.02), grid.accuracy

    def test_fit_and_network_see_identical_noise(self, small_dataset):
        """
        Verify the fit subset is drawn from the network's noisy test set.

        Each picked record must carry the same noisy samples in both lists.
        """
        picks = _subsample(5, len(small_dataset), seed=3)
        assert picks == sorted(set(picks))
        assert len(picks) == 5
        assert picks == _subsample(5, len(small_dataset), seed=3)
        full, subset = paired_test_sets(small_dataset, picks, 0.2, seed=3, repeat=1)
        assert len(full) == len(small_dataset)
        for index, record in zip(picks, subset):
            np.testing.assert_array_equal(record.spectrum.samples, full[index].spectrum.samples)
            assert record.label == small_dataset[index].label
        assert _subsample(500, 20, seed=3) == list(range(20))

    @pytest.mark.filterwarnings("ignore::rydbergfdm.errors.FitConvergenceWarning")
    def test_dl_vs_fit_curve(self, zero_network, quick_config, tmp_path):
        curve = dl_vs_fit_curve([0.0], zero_network, quick_config)
        (point,) = curve.points
        assert point.sigma == 0.0
        assert point.acc_dl == pytest.approx(1 / 8)
        assert 0.0 <= point.acc_fit <= 1.0
        lines = curve.to_csv(tmp_path / "c.csv", run_id="z").read_text().splitlines()
        assert lines[1] == "sigma,acc_dl,acc_fit,stderr_dl,stderr_fit"


class TestBench:
    """Latency measurement guards."""

    pytestmark = pytest.mark.unit

    def test_needs_twenty_spectra(self, zero_network, small_config):
        spectra = [Spectrum(np.linspace(0, 1, small_config.sampling.n), 1e-6)] * 5
        with pytest.raises(ValueError, match="20 spectra"):
            bench_inference(zero_network, spectra, small_config)


class TestPayload:
    """Frames through the simulated link."""

    pytestmark = pytest.mark.unit

    def test_empty_payload_survives_zero_decoder(self, zero_network, small_config):
        """
        Verify an empty payload reassembles through a decoder that always says zero.

        The length header of an empty payload is all zeros, so every frame is decoded
        correctly.
        """
        report = payload_roundtrip([], zero_network, small_config, sigma=0.1)
        assert report.frames == 6
        assert report.frame_accuracy == 1.0
        assert report.bit_exact

    def test_nonzero_payload_fails_on_zero_decoder(self, zero_network, small_config):
        report = payload_roundtrip(b"\xff", zero_network, small_config, sigma=0.0)
        assert report.payload_bits == 8
        assert report.frames == 9
        assert report.frame_accuracy < 1.0
        assert not report.bit_exact
        assert set(report.summary()) == {"payload_bits", "frames", "frame_accuracy", "bit_exact"}

    def test_requires_all_bins_active(self, zero_network, small_config):
        config = small_config.apply_overrides({"codec.active_bits": 2})
        with pytest.raises(ConfigError):
            payload_roundtrip([1, 0], zero_network, config, sigma=0.0)


class TestWriters:
    """Report file helpers."""

    pytestmark = pytest.mark.unit

    def test_json_carries_run_id(self, tmp_path):
        path = write_json(tmp_path / "s.json", {"accuracy": np.float64(0.5)}, run_id="abc")
        assert json.loads(path.read_text()) == {"accuracy": 0.5, "run_id": "abc"}
