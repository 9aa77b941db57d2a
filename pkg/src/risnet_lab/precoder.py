"""Transmit precoding: weighted sum rate, WMMSE solver and a matched-filter
baseline.

The WMMSE solver alternates three closed-form blocks: scalar MMSE receive
coefficients, MSE weights (user rate weight divided by the per-user MMSE),
and the transmit vectors from a regularized least-squares system whose
multiplier mu is found by bisection so the power constraint holds with
complementary slackness.  Each outer iteration is a coordinate ascent step
on the same surrogate, so the realized weighted sum rate never decreases
(up to roundoff).

The per-iteration system solve is done in the eigenbasis of the M x M
channel Gram matrix, which makes every bisection probe O(M).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .exceptions import ContractError
from .linalg import CMatrix

__all__ = ["Precoder", "wsr", "wmmse", "mrt"]

_BISECTION_STEPS = 64


@dataclass(frozen=True)
class Precoder:
    """A transmit matrix with bookkeeping from the solver that produced it."""

    V: np.ndarray  # (M, U)
    power: float
    mu: float = 0.0
    iterations: int = 0
    wsr_path: tuple = ()


def wsr(C, V, weights, noise_power: float):
    """Weighted sum rate sum_u w_u log2(1 + SINR_u) under effective channel
    C @ V.

    ``C`` (U x M) and ``V`` (M x U) may be complex arrays or tracked
    :class:`CMatrix` values; with tracked inputs the result is a tape node.
    """
    if not noise_power > 0:
        raise ContractError("noise_power must be positive")
    cm = C if isinstance(C, CMatrix) else CMatrix.from_complex(np.asarray(C))
    vm = V if isinstance(V, CMatrix) else CMatrix.from_complex(np.asarray(V))
    prod = cm @ vm  # (U, U): row u holds c_u v_j for all j
    u_count = prod.shape[0]
    if prod.shape != (u_count, u_count):
        raise ContractError(f"C @ V must be square, got {prod.shape}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (u_count,):
        raise ContractError(f"expected {u_count} weights, got shape {w.shape}")

    p = prod.abs2()
    eye = np.eye(u_count)
    signal = (p * eye).sum(axis=1)
    interference = p.sum(axis=1) - signal
    sinr = signal * ad.reciprocal(interference + noise_power)
    rates = ad.log2(1.0 + sinr)
    total = (rates * w).sum()
    return total if isinstance(total, Node) else float(total)


def mrt(C, power_budget: float) -> Precoder:
    """Maximum ratio transmission: each user gets the matched filter of its
    row at equal power ``power_budget / U``.  A zero channel row yields a
    zero column and a warning."""
    C = np.asarray(C, dtype=np.complex128)
    u_count, m = C.shape
    V = np.zeros((m, u_count), dtype=np.complex128)
    per_user = power_budget / u_count
    for k in range(u_count):
        norm = np.linalg.norm(C[k])
        if norm == 0.0:
            warnings.warn(f"matched filter: channel row {k} is zero, precoding zero")
            continue
        V[:, k] = C[k].conj() / norm * math.sqrt(per_user)
    power = float(np.sum(np.abs(V) ** 2))
    return Precoder(V=V, power=power, wsr_path=())


def _power_profile(phi: np.ndarray, sigma: np.ndarray):
    """Transmit power as a function of the multiplier, as a plain-float
    closure (the bisection evaluates it hundreds of times per solve)."""
    pairs = [(float(p), float(s)) for p, s in zip(phi, sigma) if p > 0.0]

    def power_at(mu: float) -> float:
        total = 0.0
        for p, s in pairs:
            d = s + mu
            if d <= 0.0:
                return math.inf
            total += p / (d * d)
        return total

    return power_at


def _wsr_value(cv: np.ndarray, weights: np.ndarray, noise_power: float) -> float:
    """Weighted sum rate from the effective channel C @ V, numpy-only."""
    p = cv.real**2 + cv.imag**2
    signal = np.diagonal(p)
    interference = p.sum(axis=1) - signal
    return float((weights * np.log2(1.0 + signal / (interference + noise_power))).sum())


def _solve_v(mu: float, q: np.ndarray, sigma: np.ndarray, ctil: np.ndarray) -> np.ndarray:
    denom = sigma + mu
    if mu == 0.0:
        # Masked pseudo-inverse; the right-hand side lies in the Gram range.
        cutoff = float(sigma.max()) * 1e-12 if sigma.size else 0.0
        safe = denom > cutoff
        scale = np.zeros_like(denom)
        scale[safe] = 1.0 / denom[safe]
    else:
        scale = 1.0 / denom
    return q @ (scale[:, None] * ctil)


def wmmse(
    C,
    weights,
    noise_power: float,
    power_budget: float,
    iters: int = 50,
    tol: float = 1e-6,
    init_v: np.ndarray | None = None,
) -> Precoder:
    """Maximize the weighted sum rate over the precoder for a fixed channel.

    Stops after ``iters`` iterations or when one iteration improves the
    objective by less than ``tol``.  Initialization is the matched filter at
    full power unless ``init_v`` warm-starts the solver.
    """
    C = np.asarray(C, dtype=np.complex128)
    if not np.all(np.isfinite(C.view(np.float64))):
        raise ContractError("channel matrix contains non-finite entries")
    if not noise_power > 0:
        raise ContractError("noise_power must be positive")
    if not power_budget > 0:
        raise ContractError("power_budget must be positive")
    u_count, m = C.shape
    w = np.asarray(weights, dtype=np.float64)

    V = np.array(init_v, dtype=np.complex128) if init_v is not None else mrt(C, power_budget).V
    cv = C @ V
    path = [_wsr_value(cv, w, noise_power)]
    mu = 0.0
    Ch = C.conj().T  # (M, U)

    for it in range(1, iters + 1):
        t = np.sum(cv.real**2 + cv.imag**2, axis=1) + noise_power
        diag = np.diagonal(cv)
        u_rx = diag / t
        mse = 1.0 - (diag.real**2 + diag.imag**2) / t  # in (0, 1] since noise_power > 0
        w_mse = w / mse
        beta = w_mse * u_rx

        gram_scale = w_mse * (u_rx.real**2 + u_rx.imag**2)
        A = (Ch * gram_scale[None, :]) @ C
        R = Ch * beta[None, :]  # columns beta_k c_k^H

        try:
            sigma, Q = np.linalg.eigh(A)
        except np.linalg.LinAlgError:
            ridge = 1e-12 * float(np.trace(A).real) / m
            warnings.warn("singular WMMSE system, regularizing with a small ridge")
            sigma, Q = np.linalg.eigh(A + ridge * np.eye(m))
        sigma = np.maximum(sigma, 0.0)
        ctil = Q.conj().T @ R  # (M, U)
        phi = np.sum(ctil.real**2 + ctil.imag**2, axis=1)
        power_at = _power_profile(phi, sigma)

        if power_at(0.0) <= power_budget * (1.0 + 1e-12):
            mu = 0.0
        else:
            mu_max = max(math.sqrt(max(phi.sum(), 0.0) / power_budget), 1e-18)
            while power_at(mu_max) >= power_budget:
                mu_max *= 2.0
            lo, hi = 0.0, mu_max
            for _ in range(_BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                if power_at(mid) > power_budget:
                    lo = mid
                else:
                    hi = mid
            mu = hi

        V = _solve_v(mu, Q, sigma, ctil)
        cv = C @ V
        path.append(_wsr_value(cv, w, noise_power))
        if path[-1] - path[-2] < tol:
            break

    power = float(np.sum(V.real**2 + V.imag**2))
    return Precoder(V=V, power=power, mu=mu, iterations=len(path) - 1, wsr_path=tuple(path))
