"""Precoder tests: closed-form single-user optima, a random-search lower
bound, monotonicity and the power constraint with complementary slackness."""

import math
import warnings

import numpy as np
import pytest

from risnet_lab.exceptions import ContractError
from risnet_lab.linalg import CMatrix
from risnet_lab.autodiff import Tape, backward
from risnet_lab.precoder import mrt, wmmse, wsr


def random_channel(rng, users, antennas):
    return rng.standard_normal((users, antennas)) + 1j * rng.standard_normal((users, antennas))


class TestWsr:
    def test_zero_precoder_gives_zero(self):
        C = np.array([[1.0 + 1j, 0.5], [0.3, 2.0 - 1j]])
        assert wsr(C, np.zeros((2, 2), dtype=complex), np.ones(2), 1.0) == 0.0

    def test_single_user_closed_form(self):
        # |c v|^2 = 3 with sigma^2 = 1 -> log2(4) = 2
        C = np.array([[1.0 + 0j]])
        V = np.array([[math.sqrt(3.0) + 0j]])
        np.testing.assert_allclose(wsr(C, V, [1.0], 1.0), 2.0, rtol=1e-12)

    def test_linear_in_weights(self):
        rng = np.random.default_rng(0)
        C = random_channel(rng, 2, 3)
        V = random_channel(rng, 3, 2)
        w = np.array([1.0, 0.7])
        np.testing.assert_allclose(
            wsr(C, V, 2 * w, 1.0), 2 * wsr(C, V, w, 1.0), rtol=1e-12
        )

    def test_nonpositive_noise_rejected(self):
        C = np.eye(2, dtype=complex)
        with pytest.raises(ContractError):
            wsr(C, C, np.ones(2), 0.0)

    def test_row_phase_invariance(self):
        """A unit-modulus scalar on a channel row is absorbed by the
        corresponding receive phase; rates cannot change."""
        rng = np.random.default_rng(1)
        C = random_channel(rng, 2, 4)
        V = random_channel(rng, 4, 2)
        rotated = C.copy()
        rotated[0] *= np.exp(1j * 0.73)
        np.testing.assert_allclose(
            wsr(rotated, V, np.ones(2), 1.0), wsr(C, V, np.ones(2), 1.0), rtol=1e-12
        )

    def test_differentiable_when_tracked(self):
        rng = np.random.default_rng(2)
        C = random_channel(rng, 2, 3)
        V = random_channel(rng, 3, 2)
        tape = Tape()
        cm = CMatrix(tape.leaf(C.real), tape.leaf(C.imag))
        out = wsr(cm, V, np.ones(2), 1.0)
        grads = backward(tape, out)
        assert np.isfinite(grads.wrt(cm.re)).all()


class TestMrt:
    def test_single_user_matches_wmmse_direction(self):
        rng = np.random.default_rng(3)
        C = random_channel(rng, 1, 4)
        vm = mrt(C, 2.0).V[:, 0]
        vw = wmmse(C, [1.0], 1.0, 2.0).V[:, 0]
        cos = abs(np.vdot(vm, vw)) / (np.linalg.norm(vm) * np.linalg.norm(vw))
        assert cos >= 1 - 1e-9

    def test_power_is_exactly_budget(self):
        rng = np.random.default_rng(4)
        C = random_channel(rng, 3, 4)
        np.testing.assert_allclose(mrt(C, 1.7).power, 1.7, rtol=1e-12)

    def test_zero_row_warns_and_zeroes_column(self):
        C = np.array([[0.0 + 0j, 0.0], [1.0, 2.0]])
        with pytest.warns(UserWarning, match="zero"):
            p = mrt(C, 2.0)
        np.testing.assert_array_equal(p.V[:, 0], 0.0)

    def test_orthogonal_channels_match_wmmse(self):
        """With orthogonal equal-norm user channels there is no
        interference to manage; the matched filter is already optimal."""
        C = np.array([[1.0 + 0j, 0.0], [0.0, 1.0 + 0j]])
        w = np.ones(2)
        got = wsr(C, mrt(C, 2.0).V, w, 1.0)
        best = wsr(C, wmmse(C, w, 1.0, 2.0).V, w, 1.0)
        assert abs(got - best) < 1e-6


class TestWmmse:
    def test_scalar_closed_form(self):
        p = wmmse(np.array([[1.0 + 0j]]), [1.0], 1.0, 3.0)
        np.testing.assert_allclose(p.power, 3.0, rtol=1e-9)
        np.testing.assert_allclose(p.wsr_path[-1], 2.0, atol=1e-9)

    def test_single_user_closed_form_rate(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            C = random_channel(rng, 1, 3)
            budget = float(rng.uniform(0.5, 4.0))
            p = wmmse(C, [1.0], 1.0, budget)
            want = math.log2(1.0 + budget * float(np.linalg.norm(C) ** 2))
            np.testing.assert_allclose(p.wsr_path[-1], want, atol=1e-9)

    def test_beats_random_search_lower_bound(self):
        """WSR must reach at least the best of 1e5 random precoders
        projected onto the power ball."""
        rng = np.random.default_rng(6)
        C = random_channel(rng, 2, 4)
        w = np.ones(2)
        budget = 2.0
        p = wmmse(C, w, 1.0, budget)

        cand = rng.standard_normal((100_000, 4, 2)) + 1j * rng.standard_normal((100_000, 4, 2))
        norms = np.sqrt(np.sum(np.abs(cand) ** 2, axis=(1, 2), keepdims=True))
        cand *= math.sqrt(budget) / norms
        cv = C[None] @ cand  # (B, 2, 2)
        power = np.abs(cv) ** 2
        signal = np.einsum("buu->bu", power)
        interference = power.sum(axis=2) - signal
        rates = np.log2(1.0 + signal / (interference + 1.0)).sum(axis=1)
        assert p.wsr_path[-1] >= rates.max() - 1e-6

    def test_monotone_and_power_feasible_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            users = int(rng.integers(1, 4))
            antennas = int(rng.integers(1, 5))
            C = random_channel(rng, users, antennas)
            budget = float(users)
            p = wmmse(C, rng.uniform(0.5, 2.0, users), 1.0, budget)
            path = np.array(p.wsr_path)
            assert (np.diff(path) >= -1e-8).all()
            assert p.power <= budget * (1 + 1e-9)
            if p.mu == 0.0:
                assert p.power <= budget * (1 + 1e-9)
            else:
                assert abs(p.power - budget) / budget < 1e-6

    def test_warm_start_does_not_regress(self):
        rng = np.random.default_rng(8)
        C = random_channel(rng, 2, 4)
        w = np.ones(2)
        first = wmmse(C, w, 1.0, 2.0)
        again = wmmse(C, w, 1.0, 2.0, init_v=first.V)
        assert again.wsr_path[-1] >= first.wsr_path[-1] - 1e-8

    def test_non_finite_channel_rejected(self):
        C = np.array([[np.nan + 0j]])
        with pytest.raises(ContractError):
            wmmse(C, [1.0], 1.0, 1.0)

    def test_zero_channel_yields_zero_precoder(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = wmmse(np.zeros((2, 3), dtype=complex), np.ones(2), 1.0, 2.0)
        assert p.power <= 2.0 * (1 + 1e-9)
        assert np.isfinite(p.V.view(np.float64)).all()
