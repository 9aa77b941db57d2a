"""Unsupervised training of the phase network by weighted-sum-rate ascent.

Each step draws a batch, simulates pilots (fresh noise per step at finite
pilot SNR), runs the network to phases, composes the end-to-end channel and
solves WMMSE on its numeric value.  The precoder is held constant while the
batch-mean weighted sum rate is differentiated through the channel
composition back to the network parameters, which are then updated by plain
gradient ascent or its adaptive-moment variant.  Gradients therefore flow
only through the phases, never through the precoder solve.

Everything is deterministic given the config seed: batches, pilot noise and
evaluation draws all derive from it, and gradient accumulation follows the
fixed parameter order of ``NetworkParams.named_arrays``.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, backward
from .channel import Dataset, ScenarioSample, compose_channel
from .exceptions import ConfigError, ContractError, NumericalError
from .network import NetworkParams, forward
from .precoder import wmmse, wsr
from .probing import ProbeSchedule, extract_features, simulate_pilots

__all__ = [
    "TrainConfig",
    "TrainLog",
    "train",
    "evaluate",
    "achieved_wsr",
]

OPTIMIZERS = ("plain", "adam")
_ADAM_BETA1, _ADAM_BETA2, _ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    steps: int = 2000
    optimizer: str = "adam"
    pilot_snr: float = math.inf
    eval_every: int = 500
    seed: int = 0
    # Features are fed raw by default; this standardizes them with
    # statistics of the training split, baked into the returned params.
    standardize: bool = False

    def __post_init__(self):
        # learning_rate 0 is allowed: it makes training a deterministic no-op.
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.pilot_snr > 0:
            raise ConfigError("pilot_snr must be positive (or infinite)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


@dataclass
class TrainLog:
    """Evaluation checkpoints: (step, mean train WSR, mean test WSR,
    elapsed wall-clock seconds)."""

    rows: list = field(default_factory=list)

    def append(self, step: int, train_wsr: float, test_wsr: float, seconds: float):
        if self.rows and step <= self.rows[-1][0]:
            raise ContractError("log steps must be strictly increasing")
        self.rows.append((int(step), float(train_wsr), float(test_wsr), float(seconds)))

    @property
    def final_test_wsr(self) -> float:
        return self.rows[-1][2]

    def to_csv(self, path) -> None:
        lines = ["step,train_wsr,test_wsr,seconds"]
        for step, train_w, test_w, secs in self.rows:
            lines.append(f"{step},{train_w!r},{test_w!r},{secs!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def achieved_wsr(sample: ScenarioSample, phases) -> float:
    """Weighted sum rate of a phase configuration, with the precoder solved
    by WMMSE for the resulting end-to-end channel."""
    cfg = sample.config
    C = compose_channel(sample, phases).value()
    V = wmmse(C, sample.weights, cfg.noise_power, cfg.power_budget).V
    return wsr(C, V, sample.weights, cfg.noise_power)


def _num_workers() -> int:
    raw = os.environ.get("RISNET_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"RISNET_THREADS must be an integer, got {raw!r}") from None
    return n if n > 1 else 1  # 0 = auto; the deterministic default is one worker


def evaluate(
    params: NetworkParams,
    ds: Dataset,
    schedule: ProbeSchedule,
    pilot_snr: float,
    seed: int = 0,
):
    """Mean and per-sample WSR of the network on a dataset.

    Deterministic given ``seed`` (per-sample pilot noise streams are
    derived from it) and free of parameter mutation.  Honors the
    RISNET_THREADS cap for per-sample parallelism; results are collected in
    sample order, so the outcome does not depend on the worker count.
    """
    if len(ds) == 0:
        raise ContractError("cannot evaluate an empty dataset")

    def one(i: int) -> float:
        sample = ds[i]
        obs = simulate_pilots(sample, schedule, pilot_snr, seed=(seed, i))
        feats = extract_features(obs)
        phases = forward(params, feats, schedule)
        return achieved_wsr(sample, phases)

    workers = _num_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_sample = np.array(list(pool.map(one, range(len(ds)))))
    else:
        per_sample = np.array([one(i) for i in range(len(ds))])
    return float(per_sample.mean()), per_sample


def _check_split(ds: Dataset, expected: str):
    if ds.split != expected:
        raise ContractError(
            f"dataset tagged {ds.split!r} where the {expected!r} split is required"
        )


def _feature_statistics(train_ds: Dataset, schedule: ProbeSchedule, cfg: TrainConfig):
    """Per-component mean and inverse deviation of the training-split
    features, for the optional input standardization."""
    stacked = []
    for i, sample in enumerate(train_ds):
        obs = simulate_pilots(sample, schedule, cfg.pilot_snr, seed=(cfg.seed, 3, i))
        stacked.append(extract_features(obs))
    feats = np.stack(stacked)  # (samples, U, I, 4M)
    mean = feats.mean(axis=(0, 1, 2))
    std = feats.std(axis=(0, 1, 2))
    scale = np.where(std > 0, 1.0 / np.where(std == 0, 1.0, std), 1.0)
    return mean, scale


def train(
    params: NetworkParams,
    train_ds: Dataset,
    test_ds: Dataset | None,
    schedule: ProbeSchedule,
    cfg: TrainConfig,
):
    """Run the ascent loop; returns (trained params, log).

    The input ``params`` is not mutated.  ``test_ds`` may be None, in which
    case the log's test column is NaN.
    """
    _check_split(train_ds, "train")
    if test_ds is not None:
        _check_split(test_ds, "test")
        if train_ds.config != test_ds.config:
            raise ContractError("train and test datasets use different scenario configs")
    if train_ds.config.users < 2:
        raise ContractError("training requires at least 2 users")
    if len(train_ds) == 0:
        raise ContractError("training dataset is empty")

    scen = train_ds.config
    params = params.copy()
    if cfg.standardize and params.input_offset is None:
        params.input_offset, params.input_scale = _feature_statistics(
            train_ds, schedule, cfg
        )
    arrays = params.arrays()
    if cfg.optimizer == "adam":
        m_state = [np.zeros_like(a) for a in arrays]
        v_state = [np.zeros_like(a) for a in arrays]
        adam_t = 0

    batch_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))
    log = TrainLog()
    t0 = time.perf_counter()

    def record(step: int):
        train_mean, _ = evaluate(params, train_ds, schedule, cfg.pilot_snr, seed=cfg.seed)
        if test_ds is not None:
            test_mean, _ = evaluate(params, test_ds, schedule, cfg.pilot_snr, seed=cfg.seed)
        else:
            test_mean = math.nan
        log.append(step, train_mean, test_mean, time.perf_counter() - t0)

    for step in range(cfg.steps):
        if step % cfg.eval_every == 0:
            record(step)

        batch = batch_rng.integers(0, len(train_ds), size=cfg.batch_size)
        tape = Tape()
        leaves = [tape.leaf(a) for a in arrays]
        tracked = params.replace_arrays(leaves)

        total = None
        for slot, k in enumerate(batch):
            sample = train_ds[int(k)]
            obs = simulate_pilots(
                sample, schedule, cfg.pilot_snr, seed=(cfg.seed, 1, step, slot)
            )
            feats = extract_features(obs)
            phases = forward(tracked, feats, schedule)
            Cm = compose_channel(sample, phases)
            # Precoder from the numeric channel; no gradient through WMMSE.
            V = wmmse(Cm.value(), sample.weights, scen.noise_power, scen.power_budget).V
            node = wsr(Cm, V, sample.weights, scen.noise_power)
            total = node if total is None else total + node
        objective = total * (1.0 / cfg.batch_size)

        if not np.isfinite(objective.value).all():
            norm = math.sqrt(sum(float(np.sum(a * a)) for a in arrays))
            raise NumericalError(
                f"non-finite training objective at step {step}; "
                f"sample ids {sorted(int(k) for k in batch)}; parameter norm {norm:.6e}"
            )

        grads = backward(tape, objective)
        g = [grads.wrt(leaf) for leaf in leaves]

        if cfg.optimizer == "plain":
            arrays = [a + cfg.learning_rate * gi for a, gi in zip(arrays, g)]
        else:
            adam_t += 1
            new_arrays = []
            for i, (a, gi) in enumerate(zip(arrays, g)):
                m_state[i] = _ADAM_BETA1 * m_state[i] + (1 - _ADAM_BETA1) * gi
                v_state[i] = _ADAM_BETA2 * v_state[i] + (1 - _ADAM_BETA2) * gi * gi
                m_hat = m_state[i] / (1 - _ADAM_BETA1**adam_t)
                v_hat = v_state[i] / (1 - _ADAM_BETA2**adam_t)
                new_arrays.append(a + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS))
            arrays = new_arrays
        params = params.replace_arrays(arrays)

    record(cfg.steps)
    return params, log
