"""Input validation helpers shared by the estimator, trainer and CLI."""

from __future__ import annotations

import numpy as np

from .channel import Dataset
from .exceptions import ContractError

__all__ = ["check_dataset", "check_finite_array", "check_positive"]


def check_positive(name: str, value) -> None:
    if not value > 0:
        raise ContractError(f"{name} must be positive, got {value!r}")


def check_finite_array(name: str, array) -> np.ndarray:
    arr = np.asarray(array)
    if not np.all(np.isfinite(arr.view(np.float64) if np.iscomplexobj(arr) else arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


def check_dataset(ds: Dataset, name: str = "dataset") -> Dataset:
    """Verify a dataset is non-empty and internally consistent with its
    scenario config."""
    if len(ds) == 0:
        raise ContractError(f"{name} is empty")
    cfg = ds.config
    m, n, u = cfg.bs_antennas, cfg.num_elements, cfg.users
    for i, sample in enumerate(ds):
        if sample.config != cfg:
            raise ContractError(f"{name}[{i}] belongs to a different scenario config")
        if sample.H.shape != (n, m) or sample.G.shape != (u, n) or sample.D.shape != (u, m):
            raise ContractError(
                f"{name}[{i}] has inconsistent channel shapes "
                f"H{sample.H.shape} G{sample.G.shape} D{sample.D.shape}"
            )
        if sample.weights.shape != (u,) or not np.all(sample.weights > 0):
            raise ContractError(f"{name}[{i}] has invalid user weights")
    return ds
