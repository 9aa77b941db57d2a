"""Non-learned reference phase configurations.

``random_phases`` and ``identity_phases`` are the cheap references; the
coordinate-ascent search is a deliberately privileged oracle: it reads the
full channel (which the learned network never sees) and greedily optimizes
one element at a time, so it bounds what phase control can buy on a given
instance at desk scale.
"""

from __future__ import annotations

import numpy as np

from .channel import ScenarioSample
from .exceptions import ContractError
from .precoder import wmmse, wsr

__all__ = ["BASELINE_KINDS", "random_phases", "identity_phases", "coordinate_ascent"]

BASELINE_KINDS = ("random-phase", "identity-phase", "coordinate-ascent")


def random_phases(n: int, seed: int = 0) -> np.ndarray:
    """Phases i.i.d. uniform on [-1, 1), i.e. shifts uniform on [-pi, pi)."""
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    return rng.uniform(-1.0, 1.0, n)


def identity_phases(n: int) -> np.ndarray:
    """All-zero phases: the surface reflects without phase change."""
    if n < 1:
        raise ContractError("n must be >= 1")
    return np.zeros(n)


def _wsr_batch(C_batch: np.ndarray, V: np.ndarray, weights, noise_power: float) -> np.ndarray:
    """WSR of many channel candidates (B, U, M) against one precoder."""
    cv = C_batch @ V  # (B, U, U)
    p = np.abs(cv) ** 2
    signal = np.einsum("buu->bu", p)
    interference = p.sum(axis=2) - signal
    sinr = signal / (interference + noise_power)
    return (np.log2(1.0 + sinr) * np.asarray(weights)[None, :]).sum(axis=1)


def coordinate_ascent(
    sample: ScenarioSample,
    weights,
    noise_power: float,
    power_budget: float,
    sweeps: int = 4,
    grid: int = 16,
    init: np.ndarray | None = None,
    return_trace: bool = False,
):
    """Cyclic per-element phase search over a uniform grid.

    Before each sweep the precoder is refreshed by WMMSE warm-started from
    the previous one, which keeps the realized WSR non-decreasing across
    both refreshes and accepted moves.  With ``sweeps=0`` the initial
    configuration is returned untouched.
    """
    if grid < 2:
        raise ContractError("grid must be >= 2")
    if sweeps < 0:
        raise ContractError("sweeps must be >= 0")
    weights = np.asarray(weights, dtype=np.float64)
    n = sample.G.shape[1]
    phases = np.zeros(n) if init is None else np.array(init, dtype=np.float64)
    if phases.shape != (n,):
        raise ContractError(f"init must have {n} phases")
    if sweeps == 0:
        return (phases, []) if return_trace else phases

    candidates = -1.0 + 2.0 * np.arange(grid) / grid  # uniform over [-1, 1)
    cand_factors = np.exp(1j * np.pi * candidates)

    factors = np.exp(1j * np.pi * phases)
    C = sample.D + (sample.G * factors[None, :]) @ sample.H
    V = None
    trace = []
    for _ in range(sweeps):
        V = wmmse(C, weights, noise_power, power_budget, init_v=V).V
        best = wsr(C, V, weights, noise_power)
        for idx in range(n):
            rank_one = np.outer(sample.G[:, idx], sample.H[idx, :])
            base = C - factors[idx] * rank_one
            cand_C = base[None, :, :] + cand_factors[:, None, None] * rank_one
            values = _wsr_batch(cand_C, V, weights, noise_power)
            k = int(values.argmax())
            if values[k] > best:
                best = float(values[k])
                phases[idx] = candidates[k]
                factors[idx] = cand_factors[k]
                C = cand_C[k]
        trace.append(best)
    return (phases, trace) if return_trace else phases
