"""Mixture settings of the two algorithm-selection experiments."""

from __future__ import annotations

import numpy as np

from .metrics import Downstream
from .prior import Component, Hyper, MixturePrior
from .tasks import DEFAULT_HIDDEN_DIM, sample_task

NOISE_LEVELS = (1 / 81, 1 / 9, 1.0, 9.0, 81.0)

CORNERS = ([5, 5, 5], [-5, 5, 5], [-5, 5, -5], [-5, -5, -5])

# low-test-error setting: shared input mean, distinct task weights
FIGURE6A = {
    "mus": [[0, 0, 0]] * 4,
    "ws": list(CORNERS),
    "downstream_mean": [0, 0, 0],
}

# similar-input-distribution setting: distinct input means, shared task weight
FIGURE6B = {
    "mus": list(CORNERS),
    "ws": [[1, 1, 1]] * 4,
    "downstream_mean": [-4, -4, -4],
}

SETTINGS = {"figure6a": FIGURE6A, "figure6b": FIGURE6B}


def mixture(mus, ws, pis=None, hyper: Hyper | None = None) -> MixturePrior:
    M = len(mus)
    if pis is None:
        pis = [1.0 / M] * M
    hyper = hyper or Hyper(1.0, 1.0, 1.0, 1.0)
    return MixturePrior(tuple(Component(p, mu, w) for p, mu, w in zip(pis, mus, ws)), hyper)


def setting_prior(name: str, delta: float = 1.0) -> MixturePrior:
    s = SETTINGS[name]
    return mixture(s["mus"], s["ws"], hyper=Hyper.from_noise_level(delta))


def relu_downstream(mean, task_seed: int, hidden_dim: int = DEFAULT_HIDDEN_DIM) -> Downstream:
    mean = np.asarray(mean, float)
    task = sample_task("relu_nn", mean.shape[0], hidden_dim, seed=task_seed)
    return Downstream(task, mean, 1.0)
