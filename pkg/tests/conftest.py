"""Shared test utilities: finite-difference oracles and small fixtures."""

import numpy as np
import pytest

from gmoe.data import desk_regimes, generate_synthetic
from gmoe.model import FeatureLayout, GMoEConfig


def central_diff(f, x, eps=1e-5):
    """Central finite differences of a scalar function, elementwise on x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(analytic, numeric, scale_floor=1e-6):
    """Worst-case elementwise relative error with a small-scale floor."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)),
                       scale_floor)
    return float((np.abs(analytic - numeric) / denom).max())


def tiny_config(**overrides):
    """Small configuration used for gradient checks and fast training."""
    defaults = dict(
        layout=FeatureLayout(num_joints=2, wrench_dims=1,
                             action_names=("a", "b"), sample_rate=25.0),
        past_steps=2, horizon=3, expert_hidden=4, gate_hidden=4,
        baseline_hidden=5, dropout_rate=0.0,
    )
    defaults.update(overrides)
    return GMoEConfig(**defaults)


def random_windows(rng, config, count):
    """Raw windows and targets with generic magnitudes."""
    w, f = config.window_len, config.feature_width
    t, k = config.horizon, config.num_actions
    x = rng.standard_normal((count, w, f))
    labels = np.arange(count * t) % k
    actions = np.eye(k)[labels].reshape(count, t, k)
    motions = rng.standard_normal((count, t, f))
    return x, actions, motions


@pytest.fixture(scope="session")
def small_dataset():
    """1500 records (60 s at 25 Hz) of clean-ish synthetic data."""
    return generate_synthetic(desk_regimes(), duration=60.0, rate=25.0,
                              noise_sigma=0.02, seed=11)
