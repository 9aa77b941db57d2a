"""Channel generator and dataset persistence tests.

Oracles: hand-computed free-space loss, entrywise scalar sums for the
composed channel, Monte-Carlo moments for the scatter statistics.
"""

import math

import numpy as np
import pytest

from risnet_lab.autodiff import Tape, backward
from risnet_lab.channel import (
    BS_POSITION,
    DIRECT_OBSTRUCTION_LOSS_DB,
    USER_HEIGHT,
    ScenarioConfig,
    compose_channel,
    generate_scenario,
    load_dataset,
    save_dataset,
)
from risnet_lab.exceptions import ConfigError, ContractError, CorruptDatasetError, ShapeError


def make_config(**overrides):
    base = dict(
        bs_antennas=3,
        ris_rows=2,
        ris_cols=2,
        users=2,
        noise_power=1e-12,
        power_budget=2.0,
        rician_factor=2.0,
        user_region=(3.0, 3.0, 13.0, 13.0),
        seed=0,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


class TestScenarioConfig:
    def test_zero_area_region_rejected(self):
        with pytest.raises(ConfigError, match="area"):
            make_config(user_region=(5.0, 5.0, 5.0, 9.0))

    @pytest.mark.parametrize(
        "field,value",
        [
            ("bs_antennas", 0),
            ("users", 0),
            ("noise_power", 0.0),
            ("power_budget", -1.0),
            ("rician_factor", -0.5),
            ("carrier_wavelength", 0.0),
        ],
    )
    def test_invalid_scalars_rejected(self, field, value):
        with pytest.raises(ConfigError):
            make_config(**{field: value})

    def test_element_count(self):
        assert make_config(ris_rows=4, ris_cols=6).num_elements == 24


class TestGeneration:
    def test_fixed_seed_is_bit_identical(self):
        cfg = make_config()
        a = generate_scenario(cfg, 3, seed=5)
        b = generate_scenario(cfg, 3, seed=5)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.H, sb.H)
            assert np.array_equal(sa.G, sb.G)
            assert np.array_equal(sa.D, sb.D)

    def test_sample_streams_do_not_depend_on_count(self):
        cfg = make_config()
        short = generate_scenario(cfg, 2, seed=5)
        long = generate_scenario(cfg, 5, seed=5)
        assert np.array_equal(short[1].H, long[1].H)

    def test_count_must_be_positive(self):
        with pytest.raises(ContractError):
            generate_scenario(make_config(), 0)

    def test_weights_are_uniform(self):
        ds = generate_scenario(make_config(users=3), 2)
        for s in ds:
            np.testing.assert_array_equal(s.weights, np.ones(3))

    def test_pure_scatter_moment_matches_path_loss(self):
        """With no deterministic component, E|h|^2 equals the free-space
        path-loss power (Monte-Carlo over >= 1e4 draws, 5%)."""
        cfg = make_config(ris_rows=8, ris_cols=8, bs_antennas=4, rician_factor=0.0)
        ds = generate_scenario(cfg, 40, seed=3)  # 40 * 256 = 10240 entries
        d = np.linalg.norm(np.array([0.0, 0.0, 5.0]) - BS_POSITION)
        want = (cfg.carrier_wavelength / (4 * math.pi * d)) ** 2
        got = np.mean(np.concatenate([np.abs(s.H.ravel()) ** 2 for s in ds]))
        assert abs(got - want) / want < 0.05

    def test_corner_user_direct_row_matches_closed_form(self):
        """A pure line-of-sight user pinned at the region corner has
        ||d_u|| = sqrt(M) * obstruction * lambda / (4 pi dist)."""
        corner = (4.0, 6.0)
        eps = 1e-9
        cfg = make_config(
            rician_factor=math.inf,
            user_region=(corner[0], corner[1], corner[0] + eps, corner[1] + eps),
        )
        sample = generate_scenario(cfg, 1, seed=9)[0]
        dist = np.linalg.norm(
            np.array([corner[0], corner[1], USER_HEIGHT]) - BS_POSITION
        )
        amp = cfg.carrier_wavelength / (4 * math.pi * dist)
        amp *= 10.0 ** (-DIRECT_OBSTRUCTION_LOSS_DB / 20.0)
        want = math.sqrt(cfg.bs_antennas) * amp
        got = np.linalg.norm(sample.D[0])
        assert abs(got - want) < 1e-9


class TestComposeChannel:
    def test_no_reflected_path(self):
        sample = generate_scenario(make_config(), 1)[0]
        blocked = type(sample)(
            H=sample.H, G=np.zeros_like(sample.G), D=sample.D,
            weights=sample.weights, config=sample.config,
        )
        C = compose_channel(blocked, np.zeros(4)).value()
        np.testing.assert_array_equal(C, sample.D)

    def test_zero_phases_give_plain_sum(self):
        sample = generate_scenario(make_config(), 1)[0]
        C = compose_channel(sample, np.zeros(4)).value()
        np.testing.assert_allclose(C, sample.D + sample.G @ sample.H, rtol=1e-14)

    def test_random_phases_match_scalar_sum_oracle(self):
        rng = np.random.default_rng(12)
        sample = generate_scenario(make_config(), 1, seed=2)[0]
        phases = rng.uniform(-1, 1, 4)
        got = compose_channel(sample, phases).value()
        want = np.zeros_like(sample.D)
        for u in range(2):
            for m in range(3):
                acc = sample.D[u, m]
                for n in range(4):
                    acc += sample.G[u, n] * np.exp(1j * np.pi * phases[n]) * sample.H[n, m]
                want[u, m] = acc
        scale = np.abs(want).max()
        np.testing.assert_allclose(got, want, atol=1e-12 * scale)

    def test_wrong_phase_count_rejected(self):
        sample = generate_scenario(make_config(), 1)[0]
        with pytest.raises(ShapeError):
            compose_channel(sample, np.zeros(5))

    def test_linear_in_direct_and_reflected_links(self):
        """Superposition in D and in G for fixed phases."""
        rng = np.random.default_rng(3)
        cfg = make_config()
        s1 = generate_scenario(cfg, 1, seed=4)[0]
        s2 = generate_scenario(cfg, 1, seed=5)[0]
        phases = rng.uniform(-1, 1, 4)

        def with_parts(D, G):
            return type(s1)(H=s1.H, G=G, D=D, weights=s1.weights, config=cfg)

        both = compose_channel(with_parts(s1.D + s2.D, s1.G + s2.G), phases).value()
        parts = (
            compose_channel(with_parts(s1.D, s1.G), phases).value()
            + compose_channel(with_parts(s2.D, s2.G), phases).value()
            - compose_channel(with_parts(np.zeros_like(s1.D), np.zeros_like(s1.G)), phases).value()
        )
        np.testing.assert_allclose(both, parts, atol=1e-10 * np.abs(both).max())

    def test_element_permutation_invariance(self):
        """Permuting surface elements consistently in H rows, G columns and
        the phase vector leaves the composed channel unchanged."""
        rng = np.random.default_rng(8)
        sample = generate_scenario(make_config(), 1, seed=6)[0]
        phases = rng.uniform(-1, 1, 4)
        perm = rng.permutation(4)
        permuted = type(sample)(
            H=sample.H[perm], G=sample.G[:, perm], D=sample.D,
            weights=sample.weights, config=sample.config,
        )
        base = compose_channel(sample, phases).value()
        shuffled = compose_channel(permuted, phases[perm]).value()
        np.testing.assert_allclose(shuffled, base, atol=1e-12 * np.abs(base).max())

    def test_differentiable_when_tracked(self):
        sample = generate_scenario(make_config(), 1)[0]
        tape = Tape()
        phases = tape.leaf(np.zeros(4))
        C = compose_channel(sample, phases)
        out = (C.abs2()).sum()
        grads = backward(tape, out)
        assert np.isfinite(grads.wrt(phases)).all()


class TestDatasetRoundTrip:
    def test_save_load_bit_exact(self, tmp_path):
        ds = generate_scenario(make_config(), 4, seed=1)
        ds.split = "test"
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.split == "test"
        assert back.config == ds.config
        assert len(back) == 4
        for sa, sb in zip(ds, back):
            assert np.array_equal(sa.H, sb.H)
            assert np.array_equal(sa.G, sb.G)
            assert np.array_equal(sa.D, sb.D)
            assert np.array_equal(sa.weights, sb.weights)

    def test_truncated_array_is_reported(self, tmp_path):
        ds = generate_scenario(make_config(), 2)
        save_dataset(ds, tmp_path / "d")
        blob = (tmp_path / "d" / "G.bin").read_bytes()
        (tmp_path / "d" / "G.bin").write_bytes(blob[:-16])
        with pytest.raises(CorruptDatasetError, match="'G'"):
            load_dataset(tmp_path / "d")

    def test_manifest_shape_mismatch_is_reported(self, tmp_path):
        import json

        ds = generate_scenario(make_config(), 2)
        save_dataset(ds, tmp_path / "d")
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        manifest["config"]["ris_rows"] = 4  # claims N=8, arrays hold N=4
        (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CorruptDatasetError, match="'H'"):
            load_dataset(tmp_path / "d")

    def test_missing_manifest_is_reported(self, tmp_path):
        with pytest.raises(CorruptDatasetError, match="manifest"):
            load_dataset(tmp_path / "nope")
