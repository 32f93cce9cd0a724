"""Unit tests for the assembled decoder, its gradients and checkpoints."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rydbergfdm.config import NetworkArchitecture
from rydbergfdm.errors import CheckpointError, ShapeError
from rydbergfdm.network import (
    DecoderNetwork,
    gradient_check,
    load_checkpoint,
    model,
    network_backward,
    save_checkpoint,
)
from rydbergfdm.network.checkpoint import blob_path


class TestDecoderNetwork:
    """Shapes and forward behaviour."""

    pytestmark = pytest.mark.unit

    def test_default_shape_chain(self, rng):
        """
        Verify the layer shapes for the default architecture on 1000 samples.

        32 filters of length 16, pooling by 4 and 32 LSTM units per direction.
        """
        network = DecoderNetwork.initialize(NetworkArchitecture(), 1000, 4, rng)
        chain = network.shape_chain()
        assert chain["input"] == (1000, 1)
        assert chain["conv1d"] == (985, 32)
        assert chain["pooled"] == (246, 32)
        assert chain["bilstm"] == (246, 64)
        assert chain["dense"] == (4,)

    def test_forward_output(self, tiny_network, rng):
        pred, cache = tiny_network.forward(rng.uniform(size=(3, 32)), training=False)
        assert pred.shape == (3, 4)
        assert np.all((pred > 0) & (pred < 1))
        assert cache.pooled.shape == (3, 14, 2)

    def test_zero_network_outputs_half(self, tiny_arch):
        network = DecoderNetwork.zeros(tiny_arch, 32, 4)
        np.testing.assert_array_equal(network.predict_proba(np.linspace(0, 1, 32)), 0.5)

    def test_wrong_input_length(self, tiny_network):
        with pytest.raises(ShapeError):
            tiny_network.predict_proba(np.zeros((2, 31)))

    def test_input_too_short_for_architecture(self, tiny_arch):
        with pytest.raises(ShapeError):
            DecoderNetwork.zeros(tiny_arch, 4, 4)

    def test_parameter_registry_aliases_layers(self, tiny_network):
        params = tiny_network.parameters()
        assert list(params)[:2] == ["conv.kernels", "conv.bias"]
        params["dense.b"][...] = 3.0
        np.testing.assert_array_equal(tiny_network.dense.b, 3.0)
        assert set(tiny_network.accumulators) == set(params)
        assert tiny_network.parameter_count() == sum(p.size for p in params.values())


class TestBackward:
    """Reverse-mode gradients against finite differences."""

    pytestmark = pytest.mark.unit

    def test_gradient_check(self, tiny_network, rng):
        """
        Verify every parameter gradient on the tiny network.

        Central differences with step 1e-5 on a batch of 4 spectra; the relative error
        of every parameter must stay below 1e-4.
        """
        batch = rng.uniform(size=(4, 32))
        truth = rng.integers(0, 2, size=(4, 4)).astype(float)
        report = gradient_check(tiny_network, batch, truth, step=1e-5)
        assert set(report) == set(tiny_network.parameters())
        worst = max(report.values())
        assert worst < 1e-4, report

    def test_gradient_check_error_is_normwise(self, tiny_network, rng, monkeypatch):
        """
        Verify the reported error is normwise over a parameter's entries.

        Zeroing one dense-bias gradient entry gives a per-entry error of 1 on that entry
        but a normwise error of |g0| / (||g without g0|| + ||g||).
        """
        batch = rng.uniform(size=(4, 32))
        truth = rng.integers(0, 2, size=(4, 4)).astype(float)
        exact = network_backward(tiny_network, batch, truth)["dense.b"].copy()
        backward = model.network_backward

        def dropped_entry(network, batch, truth):
            grads = backward(network, batch, truth)
            grads["dense.b"] = grads["dense.b"].copy()
            grads["dense.b"].flat[0] = 0.0
            return grads

        monkeypatch.setattr(model, "network_backward", dropped_entry)
        report = gradient_check(tiny_network, batch, truth, step=1e-5)
        kept = exact.copy()
        kept.flat[0] = 0.0
        expected = abs(exact.flat[0]) / (np.linalg.norm(kept) + np.linalg.norm(exact))
        assert report["dense.b"] == pytest.approx(expected, rel=1e-4)
        assert report["dense.b"] < 1.0

    def test_gradient_check_restores_running_statistics(self, tiny_network, rng):
        before = {k: v.copy() for k, v in tiny_network.buffers().items()}
        gradient_check(tiny_network, rng.uniform(size=(3, 32)), np.zeros((3, 4)), max_entries=2, rng=rng)
        for name, value in tiny_network.buffers().items():
            np.testing.assert_array_equal(value, before[name])

    def test_dense_bias_gradient_vanishes_at_truth(self, tiny_network, rng):
        batch = rng.uniform(size=(3, 32))
        truth, _ = tiny_network.forward(batch, training=True)
        grads = network_backward(tiny_network, batch, truth)
        np.testing.assert_allclose(grads["dense.b"], 0.0, atol=1e-15)

    def test_dead_relu_blocks_conv_gradients(self, tiny_network, rng):
        """
        Verify no gradient reaches the convolution through an inactive ReLU.

        A large negative batch-norm shift makes every pre-activation negative.
        """
        tiny_network.bn.beta[...] = -100.0
        grads = network_backward(tiny_network, rng.uniform(size=(4, 32)), np.ones((4, 4)))
        np.testing.assert_array_equal(grads["conv.kernels"], 0.0)
        np.testing.assert_array_equal(grads["conv.bias"], 0.0)
        np.testing.assert_array_equal(grads["bn.gamma"], 0.0)

    def test_gradient_shapes(self, tiny_network, rng):
        grads = network_backward(tiny_network, rng.uniform(size=(2, 32)), np.zeros((2, 4)))
        for name, param in tiny_network.parameters().items():
            assert grads[name].shape == param.shape


class TestCheckpoint:
    """Manifest plus float64 blob."""

    pytestmark = pytest.mark.unit

    def test_round_trip_preserves_predictions(self, tiny_network, tmp_path, rng):
        tiny_network.bn.running_mean[...] = rng.normal(size=2)
        path = save_checkpoint(tiny_network, tmp_path / "model.json", seed=7, run_id="abc")
        loaded = load_checkpoint(path)
        assert loaded.run_id == "abc"
        assert loaded.manifest["seed"] == 7
        assert loaded.manifest["layers"][0] == "conv1d"
        x = rng.uniform(size=(3, 32))
        np.testing.assert_array_equal(loaded.network.predict_proba(x), tiny_network.predict_proba(x))

    def test_blob_is_little_endian_float64(self, tiny_network, tmp_path):
        path = save_checkpoint(tiny_network, tmp_path / "model.json")
        count = json.loads(path.read_text())["count"]
        assert blob_path(path).stat().st_size == 8 * count

    def test_truncated_blob(self, tiny_network, tmp_path):
        path = save_checkpoint(tiny_network, tmp_path / "model.json")
        blob = blob_path(path)
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="blob has"):
            load_checkpoint(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.json")

    def test_unknown_format(self, tiny_network, tmp_path):
        path = save_checkpoint(tiny_network, tmp_path / "model.json")
        manifest = json.loads(path.read_text())
        manifest["format"] = 99
        path.write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="format"):
            load_checkpoint(path)
