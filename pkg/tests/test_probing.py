"""Probing protocol tests: block partitions, configuration structure,
pilot simulation and feature identities.

Noise-free oracles are explicit scalar sums over block members; noisy
behavior is checked by Monte-Carlo moments.
"""

import math

import numpy as np
import pytest

from risnet_lab.channel import ScenarioConfig, generate_scenario
from risnet_lab.exceptions import ConfigError, CorruptDatasetError
from risnet_lab.probing import (
    extract_features,
    load_features,
    make_schedule,
    probe_config,
    probe_factors,
    save_features,
    simulate_pilots,
)


def small_sample(users=2, rows=2, cols=2, bs_antennas=3, seed=0):
    cfg = ScenarioConfig(
        bs_antennas=bs_antennas,
        ris_rows=rows,
        ris_cols=cols,
        users=users,
        noise_power=1e-12,
        power_budget=2.0,
        rician_factor=2.0,
        user_region=(3.0, 3.0, 13.0, 13.0),
        seed=seed,
    )
    return generate_scenario(cfg, 1, seed=seed)[0]


class TestMakeSchedule:
    def test_full_scale_geometry(self):
        sched = make_schedule((36, 36), (9, 9))
        assert sched.num_blocks == 16
        assert sched.block_size == 81
        assert sched.num_elements == 1296

    def test_singleton_blocks(self):
        sched = make_schedule((2, 2), (1, 1))
        assert sched.num_blocks == 4
        assert [list(b) for b in sched.blocks()] == [[0], [1], [2], [3]]

    def test_every_element_in_exactly_one_block(self):
        sched = make_schedule((4, 4), (2, 2))
        seen = np.zeros(16, dtype=int)
        for block in sched.blocks():
            seen[block] += 1
        np.testing.assert_array_equal(seen, np.ones(16, dtype=int))

    def test_non_divisible_geometry_rejected(self):
        with pytest.raises(ConfigError, match="block"):
            make_schedule((4, 4), (3, 2))

    def test_block_order_is_row_major(self):
        sched = make_schedule((2, 4), (1, 2))
        assert [list(b) for b in sched.blocks()] == [[0, 1], [2, 3], [4, 5], [6, 7]]

    def test_element_index_row_major_within_block(self):
        sched = make_schedule((4, 4), (2, 2))
        # block 1 covers columns 2..3 of rows 0..1
        assert [sched.element_index(1, j) for j in range(4)] == [2, 3, 6, 7]

    @pytest.mark.parametrize(
        "geometry", [((2, 2), (1, 1)), ((4, 4), (2, 2)), ((6, 4), (3, 2)), ((9, 6), (3, 3))]
    )
    def test_membership_matches_concatenated_blocks(self, geometry):
        """The closed-form block gather agrees with the owner-derived
        block lists and with the per-position element map."""
        sched = make_schedule(*geometry)
        want = np.concatenate(sched.blocks())
        np.testing.assert_array_equal(sched.membership(), want)
        via_positions = [
            sched.element_index(b, j)
            for b in range(sched.num_blocks)
            for j in range(sched.block_size)
        ]
        np.testing.assert_array_equal(sched.membership(), via_positions)


class TestProbeConfig:
    def test_reference_configuration_is_identity(self):
        sched = make_schedule((3, 3), (1, 3))
        phases = probe_config(sched, 0)
        np.testing.assert_array_equal(phases, np.zeros(9))
        np.testing.assert_array_equal(np.exp(1j * np.pi * phases), np.ones(9))

    def test_first_block_flip(self):
        sched = make_schedule((2, 2), (1, 1))
        factors = np.exp(1j * np.pi * probe_config(sched, 1))
        np.testing.assert_allclose(factors, [-1, 1, 1, 1], atol=1e-15)

    def test_index_out_of_range(self):
        sched = make_schedule((2, 2), (1, 1))
        with pytest.raises(IndexError):
            probe_config(sched, 5)

    @pytest.mark.parametrize(
        "geometry", [((2, 2), (1, 1)), ((4, 4), (2, 2)), ((6, 4), (3, 2)), ((36, 36), (9, 9))]
    )
    def test_zero_sum_identity(self, geometry):
        """(I - 2) * diag(config 0) - sum_i diag(config i) vanishes."""
        sched = make_schedule(*geometry)
        diags = np.stack(
            [np.exp(1j * np.pi * probe_config(sched, i)).real for i in range(sched.num_blocks + 1)]
        )
        combo = (sched.num_blocks - 2) * diags[0] - diags[1:].sum(axis=0)
        np.testing.assert_array_equal(combo, np.zeros(sched.num_elements))

    def test_probe_factors_match_probe_config(self):
        sched = make_schedule((4, 2), (2, 2))
        factors = probe_factors(sched)
        for i in range(sched.num_blocks + 1):
            np.testing.assert_array_equal(
                factors[i], np.exp(1j * np.pi * probe_config(sched, i)).real
            )


class TestSimulatePilots:
    def test_reference_config_no_noise(self):
        sample = small_sample()
        sched = make_schedule((2, 2), (1, 1))
        obs = simulate_pilots(sample, sched, math.inf)
        want = sample.D.T + sample.H.T @ sample.G.T  # (M, U)
        np.testing.assert_allclose(obs.y[:, 0, :], want.T, rtol=1e-14)

    def test_block_difference_matches_scalar_sum(self):
        sample = small_sample(rows=4, cols=2)
        sched = make_schedule((4, 2), (2, 2))
        obs = simulate_pilots(sample, sched, math.inf)
        for u in range(2):
            for i, block in enumerate(sched.blocks()):
                want = -2.0 * sum(
                    sample.H[n, :] * sample.G[u, n] for n in block
                )
                got = obs.y[u, i + 1] - obs.y[u, 0]
                np.testing.assert_allclose(got, want, atol=1e-12 * np.abs(want).max())

    def test_snr_calibration(self):
        """Empirical signal-to-noise power ratio over >= 1e4 draws within
        5% of the requested value."""
        sample = small_sample()
        sched = make_schedule((2, 2), (1, 1))
        clean = simulate_pilots(sample, sched, math.inf).y
        signal_power = np.mean(np.abs(clean) ** 2)
        noise_power = 0.0
        draws = 10_000
        for d in range(draws):
            noisy = simulate_pilots(sample, sched, 10.0, seed=(1, d)).y
            noise_power += np.mean(np.abs(noisy - clean) ** 2)
        ratio = signal_power / (noise_power / draws)
        assert abs(ratio - 10.0) / 10.0 < 0.05

    def test_noise_is_reproducible(self):
        sample = small_sample()
        sched = make_schedule((2, 2), (1, 1))
        a = simulate_pilots(sample, sched, 5.0, seed=3).y
        b = simulate_pilots(sample, sched, 5.0, seed=3).y
        assert np.array_equal(a, b)

    def test_nonpositive_snr_rejected(self):
        sample = small_sample()
        sched = make_schedule((2, 2), (1, 1))
        with pytest.raises(ConfigError):
            simulate_pilots(sample, sched, 0.0)


class TestExtractFeatures:
    def test_shape(self):
        sample = small_sample(rows=4, cols=4, bs_antennas=4)
        sched = make_schedule((4, 4), (2, 2))
        feats = extract_features(simulate_pilots(sample, sched, math.inf))
        assert feats.shape == (2, 4, 16)

    def test_no_reflected_path_zeroes_cascaded_half(self):
        sample = small_sample()
        blocked = type(sample)(
            H=sample.H, G=np.zeros_like(sample.G), D=sample.D,
            weights=sample.weights, config=sample.config,
        )
        sched = make_schedule((2, 2), (1, 1))
        feats = extract_features(simulate_pilots(blocked, sched, math.inf))
        m = sample.config.bs_antennas
        np.testing.assert_array_equal(feats[:, :, : 2 * m], 0.0)

    def test_no_direct_path_zeroes_direct_half(self):
        sample = small_sample()
        blocked = type(sample)(
            H=sample.H, G=sample.G, D=np.zeros_like(sample.D),
            weights=sample.weights, config=sample.config,
        )
        sched = make_schedule((2, 2), (1, 1))
        feats = extract_features(simulate_pilots(blocked, sched, math.inf))
        m = sample.config.bs_antennas
        np.testing.assert_allclose(
            feats[:, :, 2 * m :], 0.0, atol=1e-12 * np.abs(feats).max()
        )

    def test_direct_half_recovers_direct_channel(self):
        sample = small_sample(rows=4, cols=2)
        sched = make_schedule((4, 2), (2, 1))
        feats = extract_features(simulate_pilots(sample, sched, math.inf))
        m = sample.config.bs_antennas
        direct = feats[:, :, 2 * m : 3 * m] + 1j * feats[:, :, 3 * m :]
        want = -2.0 * sample.D
        for i in range(sched.num_blocks):
            np.testing.assert_allclose(
                direct[:, i, :], want, atol=1e-12 * np.abs(feats).max()
            )

    def test_user_permutation_only_permutes_user_axis(self):
        sample = small_sample(users=3)
        sched = make_schedule((2, 2), (1, 1))
        obs = simulate_pilots(sample, sched, math.inf)
        feats = extract_features(obs)
        perm = np.array([2, 0, 1])
        permuted_obs = type(obs)(y=obs.y[perm], pilot_snr=obs.pilot_snr)
        np.testing.assert_array_equal(extract_features(permuted_obs), feats[perm])

    def test_noisy_mean_converges_to_clean_features(self):
        """Feature average over 1e5 noise draws lands within three
        standard errors of the noise-free features."""
        sample = small_sample()
        sched = make_schedule((2, 2), (1, 1))
        clean = extract_features(simulate_pilots(sample, sched, math.inf))
        draws = 100_000
        rng = np.random.default_rng(7)
        acc = np.zeros_like(clean)
        acc2 = np.zeros_like(clean)
        for _ in range(draws):
            f = extract_features(simulate_pilots(sample, sched, 10.0, rng=rng))
            acc += f
            acc2 += f * f
        mean = acc / draws
        var = acc2 / draws - mean * mean
        stderr = np.sqrt(np.maximum(var, 0.0) / draws)
        z = np.abs(mean - clean) / np.maximum(stderr, 1e-300)
        assert z.max() < 3.0, z.max()

    def test_feature_dump_round_trip(self, tmp_path):
        sample = small_sample()
        sched = make_schedule((2, 2), (1, 1))
        feats = extract_features(simulate_pilots(sample, sched, math.inf))
        save_features(feats, tmp_path / "f")
        np.testing.assert_array_equal(load_features(tmp_path / "f"), feats)

    def test_truncated_feature_dump_is_reported(self, tmp_path):
        sample = small_sample()
        sched = make_schedule((2, 2), (1, 1))
        feats = extract_features(simulate_pilots(sample, sched, math.inf))
        save_features(feats, tmp_path / "f")
        blob = (tmp_path / "f" / "features.bin").read_bytes()
        (tmp_path / "f" / "features.bin").write_bytes(blob[:-8])
        with pytest.raises(CorruptDatasetError):
            load_features(tmp_path / "f")
