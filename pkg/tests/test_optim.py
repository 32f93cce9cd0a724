"""Unit tests for RMSprop and the plateau schedule."""

from __future__ import annotations

import numpy as np
import pytest

from rydbergfdm.config import TrainConfig
from rydbergfdm.network import PlateauSchedule, plateau_lr, rmsprop_step


class TestRMSprop:
    """In-place parameter updates."""

    pytestmark = pytest.mark.unit

    def test_first_step_closed_form(self, tiny_network):
        before = tiny_network.dense.b.copy()
        grads = {"dense.b": np.array([5.0, -5.0, 0.5, -0.5])}
        rmsprop_step(tiny_network, grads, TrainConfig())
        np.testing.assert_allclose(
            tiny_network.dense.b - before, [-0.0031623, 0.0031623, -0.0031623, 0.0031623], atol=1e-7
        )

    def test_zero_gradient_changes_nothing(self, tiny_network):
        before = {k: v.copy() for k, v in tiny_network.parameters().items()}
        grads = {k: np.zeros_like(v) for k, v in before.items()}
        rmsprop_step(tiny_network, grads, TrainConfig())
        for name, value in tiny_network.parameters().items():
            np.testing.assert_array_equal(value, before[name])

    def test_constant_gradient_steps_are_bounded(self, tiny_network):
        """
        Verify the step size under a constant gradient.

        The accumulator grows geometrically toward g**2, so every step lies between
        lr and lr / sqrt(1 - decay).
        """
        cfg = TrainConfig()
        bound = cfg.lr / np.sqrt(1.0 - cfg.rmsprop_decay) * (1 + 1e-6)
        for _ in range(50):
            before = tiny_network.dense.b.copy()
            rmsprop_step(tiny_network, {"dense.b": np.full(4, 2.0)}, cfg)
            step = np.abs(tiny_network.dense.b - before)
            assert np.all(step <= bound)
            assert np.all(step >= cfg.lr * (1 - 1e-6))

    def test_explicit_learning_rate(self, tiny_network):
        before = tiny_network.dense.b.copy()
        rmsprop_step(tiny_network, {"dense.b": np.ones(4)}, TrainConfig(), lr=1e-2)
        np.testing.assert_allclose(tiny_network.dense.b - before, -1e-2 / np.sqrt(0.1), rtol=1e-6)


class TestPlateau:
    """Reduce-on-plateau learning rate."""

    pytestmark = pytest.mark.unit

    def test_decreasing_history(self):
        assert plateau_lr(np.linspace(1.0, 0.1, 40), TrainConfig()) == pytest.approx(1e-3)

    def test_single_plateau(self):
        assert plateau_lr([0.5] * 10, TrainConfig()) == pytest.approx(1e-3)
        assert plateau_lr([0.5] * 11, TrainConfig()) == pytest.approx(1e-4)

    def test_two_plateaus(self):
        assert plateau_lr([0.5] * 21, TrainConfig()) == pytest.approx(1e-5)

    def test_improvement_resets_wait(self):
        schedule = PlateauSchedule.from_config(TrainConfig(plateau_patience=3))
        for loss in (1.0, 1.0, 1.0, 0.9, 0.9, 0.9):
            schedule.update(loss)
        assert schedule.lr == pytest.approx(1e-3)
        assert schedule.update(0.9) == pytest.approx(1e-4)

    def test_empty_history(self):
        with pytest.raises(ValueError):
            plateau_lr([], TrainConfig())
