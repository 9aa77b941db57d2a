"""Scikit-learn style front end around the trainer.

``RisNetEstimator`` follows the estimator protocol (``fit`` / ``predict`` /
``score`` / ``get_params`` / ``set_params``) so it can be cloned, grid
searched and composed like any other estimator.  ``fit`` consumes a
training :class:`~risnet_lab.channel.Dataset`; ``predict`` maps datasets to
per-sample phase vectors; ``score`` reports the mean weighted sum rate.
"""

from __future__ import annotations

import math

import numpy as np

from .channel import Dataset
from .exceptions import ContractError
from .network import NetworkConfig, forward, init_params
from .probing import extract_features, make_schedule, simulate_pilots
from .training import TrainConfig, achieved_wsr, evaluate, train
from .validation import check_dataset

__all__ = ["RisNetEstimator"]


class RisNetEstimator:
    """Learns to map received pilot signals to surface phase shifts.

    Parameters mirror the network architecture (``width``, ``pre_layers``,
    ``post_layers``), the probing geometry (``block_rows``, ``block_cols``)
    and the training loop (learning rate, batch size, steps, optimizer,
    pilot SNR).  Fitted state lives in trailing-underscore attributes:
    ``params_``, ``schedule_``, ``network_config_``, ``log_``.
    """

    _PARAM_NAMES = (
        "width",
        "pre_layers",
        "post_layers",
        "block_rows",
        "block_cols",
        "learning_rate",
        "batch_size",
        "steps",
        "optimizer",
        "pilot_snr",
        "eval_every",
        "standardize",
        "random_state",
    )

    def __init__(
        self,
        width=32,
        pre_layers=2,
        post_layers=1,
        block_rows=2,
        block_cols=2,
        learning_rate=1e-3,
        batch_size=8,
        steps=2000,
        optimizer="adam",
        pilot_snr=math.inf,
        eval_every=500,
        standardize=False,
        random_state=0,
    ):
        self.width = width
        self.pre_layers = pre_layers
        self.post_layers = post_layers
        self.block_rows = block_rows
        self.block_cols = block_cols
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.steps = steps
        self.optimizer = optimizer
        self.pilot_snr = pilot_snr
        self.eval_every = eval_every
        self.standardize = standardize
        self.random_state = random_state

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(
                    f"invalid parameter {name!r}; valid parameters: {self._PARAM_NAMES}"
                )
            setattr(self, name, value)
        return self

    def _schedule_for(self, dataset: Dataset):
        cfg = dataset.config
        return make_schedule(
            (cfg.ris_rows, cfg.ris_cols), (self.block_rows, self.block_cols)
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            steps=self.steps,
            optimizer=self.optimizer,
            pilot_snr=self.pilot_snr,
            eval_every=self.eval_every,
            standardize=self.standardize,
            seed=self.random_state,
        )

    def fit(self, dataset: Dataset, eval_dataset: Dataset | None = None):
        """Train on a dataset tagged as the train split; an optional test
        split is evaluated into the training log."""
        check_dataset(dataset)
        schedule = self._schedule_for(dataset)
        net_config = NetworkConfig(
            input_dim=4 * dataset.config.bs_antennas,
            block_size=schedule.block_size,
            width=self.width,
            pre_layers=self.pre_layers,
            post_layers=self.post_layers,
        )
        initial = init_params(net_config, seed=self.random_state)
        self.params_, self.log_ = train(
            initial, dataset, eval_dataset, schedule, self._train_config()
        )
        self.schedule_ = schedule
        self.network_config_ = net_config
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise ContractError("estimator is not fitted; call fit first")

    def predict(self, dataset: Dataset) -> np.ndarray:
        """Phase vectors for every sample, shape (n_samples, N)."""
        self._require_fitted()
        check_dataset(dataset)
        out = []
        for i, sample in enumerate(dataset):
            obs = simulate_pilots(
                sample, self.schedule_, self.pilot_snr, seed=(self.random_state, i)
            )
            feats = extract_features(obs)
            out.append(forward(self.params_, feats, self.schedule_))
        return np.stack(out)

    def score(self, dataset: Dataset) -> float:
        """Mean achieved weighted sum rate over the dataset."""
        self._require_fitted()
        check_dataset(dataset)
        mean, _ = evaluate(
            self.params_, dataset, self.schedule_, self.pilot_snr, seed=self.random_state
        )
        return mean

    def score_samples(self, dataset: Dataset) -> np.ndarray:
        """Per-sample achieved weighted sum rate."""
        self._require_fitted()
        phases = self.predict(dataset)
        return np.array([achieved_wsr(s, p) for s, p in zip(dataset, phases)])
