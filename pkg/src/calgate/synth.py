"""Synthetic logit streams with a known calibration oracle.

Each tick draws a probability vector ``p`` over K slots and places the
true label in slot ``j`` with probability ``p_j``. Given ``p``, the
predicted class is therefore correct with probability ``max(p)``, and
the emitted logits ``s * log p`` are calibrated exactly at temperature
``s``. The predictor state is held over short episodes so that errors
are correlated in time, as they are for a real model on adjacent windows.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .datamodel import DEFAULT_TICK_MS, Dataset, atomic_write_text
from .modelmath import log_softmax

# top-slot confidence ~ Beta(mu * CONC, (1 - mu) * CONC); remaining mass
# ~ Dirichlet(REST_CONC); together they keep E[max p] within ~0.002 of mu
CONF_CONCENTRATION = 6.0
REST_CONCENTRATION = 2.0


@dataclass(frozen=True)
class SynthConfig:
    k: int = 21
    n_streams: int = 80
    ticks_per_stream: int = 1250
    base_accuracy: float = 0.40
    overconfidence_scale: float = 1.0
    label_persistence: float = 25.0
    prediction_persistence: float = 5.0
    seed: int = 0
    noise_sigma: float = 0.1
    tick_ms: int = DEFAULT_TICK_MS

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.n_streams < 1 or self.ticks_per_stream < 1:
            raise ValueError("n_streams and ticks_per_stream must be positive")
        if not 1.0 / self.k < self.base_accuracy < 1.0:
            raise ValueError(f"base_accuracy must lie in (1/K, 1) = ({1.0 / self.k:.4f}, 1), "
                             f"got {self.base_accuracy}")
        if self.overconfidence_scale < 1.0:
            raise ValueError("overconfidence_scale must be >= 1")
        if self.label_persistence < 1.0 or self.prediction_persistence < 1.0:
            raise ValueError("label_persistence and prediction_persistence must be >= 1 tick")
        if self.noise_sigma < 0 or self.tick_ms <= 0:
            raise ValueError("noise_sigma must be >= 0 and tick_ms > 0")


def class_marginal(k: int) -> np.ndarray:
    """Zipf-like long-tailed class prior, ``∝ 1 / (rank + 1)``."""
    w = 1.0 / np.arange(1, k + 1)
    return w / w.sum()


def _labels(rng: np.random.Generator, n: int, k: int, persistence: float) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    prior = class_marginal(k)
    i = 0
    while i < n:
        run = int(rng.geometric(1.0 / persistence))
        out[i:i + run] = rng.choice(k, p=prior)
        i += run
    return out


def _run_ids(rng: np.random.Generator, n: int, persistence: float) -> np.ndarray:
    """Index of the geometric-length run each tick falls in."""
    starts = np.zeros(n, dtype=bool)
    i = 0
    while i < n:
        starts[i] = True
        i += int(rng.geometric(1.0 / persistence))
    return np.cumsum(starts) - 1


def _stream(cfg: SynthConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, index])
    n, k = cfg.ticks_per_stream, cfg.k
    labels = _labels(rng, n, k, cfg.label_persistence)

    # the predictor's belief (shape, label slot, class order) is held over
    # episodes so errors persist across neighbouring ticks
    ep = _run_ids(rng, n, cfg.prediction_persistence)
    n_ep = int(ep[-1]) + 1
    mu = cfg.base_accuracy
    top = rng.beta(mu * CONF_CONCENTRATION, (1.0 - mu) * CONF_CONCENTRATION, size=n_ep)
    top = np.clip(top, 1e-6, 1.0 - 1e-6)
    rest = rng.dirichlet(np.full(k - 1, REST_CONCENTRATION), size=n_ep) * (1.0 - top)[:, None]
    shape = np.concatenate([top[:, None], rest], axis=1)
    u = rng.random(n_ep)
    order = np.argsort(rng.random((n_ep, k)), axis=1)

    logp = log_softmax(np.log(shape[ep]) + rng.normal(0.0, cfg.noise_sigma, size=(n, k)))
    p = np.exp(logp)

    # slot holding the true label: inverse CDF of p at a uniform independent of p
    cdf = np.cumsum(p, axis=1)
    slot = np.minimum((cdf < u[ep][:, None] * cdf[:, -1:]).sum(axis=1), k - 1)

    # slot -> class: a uniform permutation with the label swapped into its slot
    perm = order[ep]
    rows = np.arange(n)
    label_pos = np.argmax(perm == labels[:, None], axis=1)
    displaced = perm[rows, slot]
    perm[rows, label_pos] = displaced
    perm[rows, slot] = labels

    logits = np.empty((n, k))
    logits[rows[:, None], perm] = cfg.overconfidence_scale * logp
    return logits, labels


def generate(cfg: SynthConfig) -> Dataset:
    """Deterministic dataset for ``cfg``; stream ``i`` is seeded by ``(seed, i)``."""
    ids, times, blocks, labels = [], [], [], []
    for i in range(cfg.n_streams):
        logits, y = _stream(cfg, i)
        ids += [f"s{i:03d}"] * len(y)
        times.append(np.arange(len(y)) * cfg.tick_ms)
        blocks.append(logits)
        labels.append(y)
    return Dataset.from_arrays(ids, np.concatenate(times), np.concatenate(blocks),
                               np.concatenate(labels))


FIXTURE = dict(k=21, n_streams=80, ticks_per_stream=1250, base_accuracy=0.40,
               overconfidence_scale=4.0)


def uncalibrated_fixture_config(seed: int = 0) -> SynthConfig:
    return SynthConfig(seed=seed, **FIXTURE)


def generate_uncalibrated_fixture(seed: int = 0) -> Dataset:
    """Canonical overconfident set: K=21, accuracy 0.40, logits scaled by 4, 100k ticks."""
    return generate(uncalibrated_fixture_config(seed))


def write_sidecar(cfg: SynthConfig, path) -> None:
    atomic_write_text(path, json.dumps({"generator": "calgate.synth", **asdict(cfg)}, indent=2) + "\n")
