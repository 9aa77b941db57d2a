"""Cross-cutting property checks binding the modules together.

Each property draws randomized small instances, evaluates one identity the
rest of the package relies on, and reports the worst deviation seen.
Failures are reported, never raised, so one run always yields a complete
report.  Oracles here are deliberately independent re-implementations
(nested loops, explicit sums) of the vectorized production paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, backward
from .channel import Dataset, ScenarioConfig, ScenarioSample, compose_channel, generate_scenario
from .network import NetworkConfig, NetworkParams, forward, init_params, layer_forward
from .precoder import wmmse, wsr
from .probing import (
    ProbeSchedule,
    extract_features,
    make_schedule,
    probe_factors,
    simulate_pilots,
)
from .training import TrainConfig, train

__all__ = [
    "PropertyReport",
    "run_all",
    "write_report_csv",
    "zero_sum_identity_deviation",
    "end_to_end_gradient_error",
    "loop_layer_oracle",
    "loop_expansion_oracle",
]


@dataclass(frozen=True)
class PropertyReport:
    name: str
    instances: int
    max_dev: float
    passed: bool


def write_report_csv(reports, path) -> None:
    lines = ["property,instances,max_dev,pass"]
    for r in reports:
        lines.append(f"{r.name},{r.instances},{r.max_dev!r},{str(r.passed).lower()}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# Small-instance grid: (bs_antennas, ris_rows, ris_cols, block_rows, block_cols, users)
_DEFAULT_SIZES = (
    (2, 2, 2, 1, 1, 2),
    (3, 2, 4, 2, 2, 2),
    (4, 4, 4, 2, 2, 3),
    (2, 3, 3, 3, 1, 2),
)


def _scenario(size, seed) -> tuple:
    m, rows, cols, brows, bcols, users = size
    config = ScenarioConfig(
        bs_antennas=m,
        ris_rows=rows,
        ris_cols=cols,
        users=users,
        noise_power=1e-13,
        power_budget=float(users),
        rician_factor=2.0,
        seed=seed,
    )
    sample = generate_scenario(config, 1, seed=seed)[0]
    schedule = make_schedule((rows, cols), (brows, bcols))
    return sample, schedule


def _report(name, devs, tol, instances) -> PropertyReport:
    max_dev = float(max(devs)) if devs else 0.0
    return PropertyReport(name, instances, max_dev, max_dev <= tol)


def _guard(name, fn):
    """Run one property; convert an unexpected exception into a failed
    report rather than aborting the suite."""
    try:
        return fn()
    except Exception:  # noqa: BLE001 - the suite must always complete
        return PropertyReport(name, 0, math.inf, False)


# -- individual properties -------------------------------------------------


def _composition_oracle(sample, phases) -> np.ndarray:
    """Entrywise sum d_um + sum_n g_un exp(j pi phi_n) h_nm."""
    u_count, m_count = sample.D.shape
    n_count = sample.G.shape[1]
    out = np.zeros((u_count, m_count), dtype=np.complex128)
    for u in range(u_count):
        for m in range(m_count):
            acc = sample.D[u, m]
            for n in range(n_count):
                acc += sample.G[u, n] * np.exp(1j * np.pi * phases[n]) * sample.H[n, m]
            out[u, m] = acc
    return out


def channel_composition_property(seed=0, sizes=_DEFAULT_SIZES) -> PropertyReport:
    rng = np.random.default_rng(seed)
    devs = []
    for k, size in enumerate(sizes):
        sample, _ = _scenario(size, seed + k)
        phases = rng.uniform(-1, 1, sample.G.shape[1])
        got = compose_channel(sample, phases).value()
        want = _composition_oracle(sample, phases)
        devs.append(np.abs(got - want).max() / max(np.abs(want).max(), 1e-300))
    return _report("channel-composition", devs, 1e-12, len(sizes))


def probe_partition_property(sizes=_DEFAULT_SIZES) -> PropertyReport:
    devs = []
    for size in sizes:
        _, rows, cols, brows, bcols, _ = size
        schedule = make_schedule((rows, cols), (brows, bcols))
        membership = np.zeros(schedule.num_elements, dtype=np.int64)
        for idx in schedule.blocks():
            membership[idx] += 1
        devs.append(float(np.abs(membership - 1).max()))
    return _report("probe-partition", devs, 0.0, len(sizes))


def zero_sum_identity_deviation(schedule: ProbeSchedule) -> float:
    """Max absolute entry of (I - 2) Phi(0) - sum_i Phi(i), evaluated on the
    configuration diagonals.

    A configuration contributes +1 per element except -1 on its own block,
    so the summed diagonal is I - 2 * (listings of the element across
    blocks); overlapping or missing elements would show up immediately.
    """
    i_count, n = schedule.num_blocks, schedule.num_elements
    flips = np.bincount(schedule.membership(), minlength=n)
    diag_sum = i_count - 2.0 * flips
    combo = (i_count - 2.0) - diag_sum
    return float(np.abs(combo).max())


def _zero_sum_dense_deviation(schedule: ProbeSchedule) -> float:
    """Same identity from fully materialized configuration diagonals."""
    factors = probe_factors(schedule)
    combo = (schedule.num_blocks - 2) * factors[0] - factors[1:].sum(axis=0)
    return float(np.abs(combo).max())


def probe_zero_sum_property(sizes=_DEFAULT_SIZES) -> PropertyReport:
    devs = []
    for size in sizes:
        _, rows, cols, brows, bcols, _ = size
        schedule = make_schedule((rows, cols), (brows, bcols))
        devs.append(zero_sum_identity_deviation(schedule))
        devs.append(_zero_sum_dense_deviation(schedule))
    return _report("probe-zero-sum", devs, 0.0, len(sizes))


def _divisors(n: int) -> list:
    return [d for d in range(1, n + 1) if n % d == 0]


def zero_sum_worst_case(max_elements: int = 1296, dense_limit: int = 64):
    """Worst identity deviation over every constructible schedule with at
    most ``max_elements`` elements.

    Returns (worst deviation, number of schedules checked).  Schedules with
    up to ``dense_limit`` elements are additionally cross-checked against
    fully materialized configuration diagonals.
    """
    worst = 0.0
    checked = 0
    for rows in range(1, max_elements + 1):
        max_cols = max_elements // rows
        if max_cols == 0:
            break
        row_divs = _divisors(rows)
        for cols in range(1, max_cols + 1):
            col_divs = _divisors(cols)
            for brows in row_divs:
                for bcols in col_divs:
                    schedule = ProbeSchedule(rows, cols, brows, bcols)
                    dev = zero_sum_identity_deviation(schedule)
                    if rows * cols <= dense_limit:
                        dev = max(dev, _zero_sum_dense_deviation(schedule))
                    worst = max(worst, dev)
                    checked += 1
    return worst, checked


def feature_identity_property(
    seed=0, sizes=_DEFAULT_SIZES, extractor=extract_features
) -> PropertyReport:
    """Noise-free closed forms: cascaded feature -2 sum_{n in block} h_n g_un,
    direct feature -2 d_u."""
    devs = []
    for k, size in enumerate(sizes):
        sample, schedule = _scenario(size, seed + k)
        obs = simulate_pilots(sample, schedule, math.inf)
        feats = extractor(obs)
        m = sample.config.bs_antennas
        cascaded = feats[:, :, :m] + 1j * feats[:, :, m : 2 * m]
        direct = feats[:, :, 2 * m : 3 * m] + 1j * feats[:, :, 3 * m :]
        blocks = schedule.blocks()
        want_cascaded = np.stack(
            [
                np.stack(
                    [
                        -2.0 * (sample.H[idx].T @ sample.G[u, idx])
                        for idx in blocks
                    ]
                )
                for u in range(sample.config.users)
            ]
        )
        scale = max(np.abs(want_cascaded).max(), np.abs(sample.D).max())
        devs.append(np.abs(cascaded - want_cascaded).max() / scale)
        want_direct = -2.0 * sample.D[:, None, :]
        devs.append(np.abs(direct - want_direct).max() / scale)
    return _report("feature-closed-forms", devs, 1e-12, len(sizes))


def pilot_noise_property(seed=0, draws=3000, snr=10.0) -> PropertyReport:
    sample, schedule = _scenario((2, 2, 2, 1, 1, 2), seed)
    clean = simulate_pilots(sample, schedule, math.inf).y
    signal_power = np.mean(np.abs(clean) ** 2)
    noise_acc = 0.0
    for d in range(draws):
        noisy = simulate_pilots(sample, schedule, snr, seed=(seed, d)).y
        noise_acc += np.mean(np.abs(noisy - clean) ** 2)
    ratio = signal_power / (noise_acc / draws)
    return _report("pilot-noise-calibration", [abs(ratio - snr) / snr], 0.05, draws)


def loop_layer_oracle(layer, feats: np.ndarray) -> np.ndarray:
    """Nested-loop evaluation of one four-branch layer."""
    u_count, k_count, _ = feats.shape
    w, b = layer.weights, layer.biases
    q = w["cc"].shape[0]
    relu = lambda v: np.maximum(v, 0.0)  # noqa: E731
    out = np.zeros((u_count, k_count, 4 * q))
    for u in range(u_count):
        for n in range(k_count):
            cc = relu(w["cc"] @ feats[u, n] + b["cc"])
            ca = np.zeros(q)
            for n2 in range(k_count):
                ca += relu(w["ca"] @ feats[u, n2] + b["ca"])
            ca /= k_count
            oc = np.zeros(q)
            for u2 in range(u_count):
                if u2 != u:
                    oc += relu(w["oc"] @ feats[u2, n] + b["oc"])
            oc /= u_count - 1
            oa = np.zeros(q)
            for u2 in range(u_count):
                if u2 == u:
                    continue
                for n2 in range(k_count):
                    oa += relu(w["oa"] @ feats[u2, n2] + b["oa"])
            oa /= k_count * (u_count - 1)
            out[u, n] = np.concatenate([cc, ca, oc, oa])
    return out


def loop_expansion_oracle(groups, feats: np.ndarray, schedule: ProbeSchedule) -> np.ndarray:
    """Nested-loop evaluation of the expansion layer."""
    u_count, i_count, _ = feats.shape
    q = groups[0].weights["cc"].shape[0]
    out = np.zeros((u_count, schedule.num_elements, 4 * q))
    for j in range(schedule.block_size):
        block_out = loop_layer_oracle(groups[j], feats)
        for n in range(i_count):
            out[:, schedule.element_index(n, j), :] = block_out[:, n, :]
    return out


def layer_oracle_property(seed=0) -> PropertyReport:
    rng = np.random.default_rng(seed)
    devs = []
    for u_count, k_count, in_dim, width in ((2, 3, 4, 8), (3, 4, 6, 16), (2, 2, 8, 32)):
        config = NetworkConfig(
            input_dim=in_dim, block_size=1, width=width, pre_layers=1, post_layers=0
        )
        layer = init_params(config, seed=seed).pre[0]
        feats = rng.standard_normal((u_count, k_count, in_dim))
        got = layer_forward(layer, feats, u_count, k_count)
        want = loop_layer_oracle(layer, feats)
        devs.append(np.abs(got - want).max() / max(np.abs(want).max(), 1e-300))
    return _report("layer-loop-oracle", devs, 1e-12, 3)


def wmmse_monotone_property(seed=0, instances=100) -> PropertyReport:
    rng = np.random.default_rng(seed)
    devs = []
    for _ in range(instances):
        u_count = int(rng.integers(1, 4))
        m = int(rng.integers(1, 5))
        C = (rng.standard_normal((u_count, m)) + 1j * rng.standard_normal((u_count, m)))
        w = rng.uniform(0.5, 2.0, u_count)
        result = wmmse(C, w, noise_power=1.0, power_budget=float(u_count))
        path = np.array(result.wsr_path)
        devs.append(float(np.maximum(path[:-1] - path[1:], 0.0).max()) if len(path) > 1 else 0.0)
        # Complementary slackness: either interior (mu = 0, power within budget)
        # or the power constraint is active.
        budget = float(u_count)
        if result.mu == 0.0:
            devs.append(max(0.0, (result.power - budget) / budget))
        else:
            devs.append(abs(result.power - budget) / budget)
    return _report("wmmse-monotone-and-power", devs, 1e-8, instances)


def update_arithmetic_property(seed=0) -> PropertyReport:
    """One plain-gradient step moves parameters by exactly +lr * grad of the
    mean WSR (equivalently -lr * grad of its negation)."""
    sample, schedule, ds = _tiny_training_setup(seed)
    net_config = NetworkConfig(
        input_dim=4 * sample.config.bs_antennas,
        block_size=schedule.block_size,
        width=8,
        pre_layers=1,
        post_layers=0,
    )
    params = init_params(net_config, seed=seed)
    lr = 1e-2
    cfg = TrainConfig(
        learning_rate=lr, batch_size=1, steps=1, optimizer="plain",
        pilot_snr=math.inf, eval_every=10, seed=seed,
    )
    trained, _ = train(params, ds, None, schedule, cfg)

    # Independent gradient of the same single-sample objective.
    tape = Tape()
    leaves = [tape.leaf(a) for a in params.arrays()]
    tracked = params.replace_arrays(leaves)
    obs = simulate_pilots(sample, schedule, math.inf)
    phases = forward(tracked, extract_features(obs), schedule)
    Cm = compose_channel(sample, phases)
    V = wmmse(
        Cm.value(), sample.weights, sample.config.noise_power, sample.config.power_budget
    ).V
    objective = wsr(Cm, V, sample.weights, sample.config.noise_power)
    grads = backward(tape, objective)

    devs = []
    for before, leaf, after in zip(params.arrays(), leaves, trained.arrays()):
        expected = before + lr * grads.wrt(leaf)
        devs.append(float(np.abs(after - expected).max()))
    return _report("ascent-update-arithmetic", devs, 1e-15, 1)


def synthetic_sample(config: ScenarioConfig, seed: int) -> ScenarioSample:
    """A problem instance with unit-scale circular Gaussian channels.

    Used where the check concerns the computation graph rather than the
    geometry: unit scale keeps ReLU pre-activations and the phase head far
    from their nondifferentiable points relative to finite-difference steps.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9,)))
    m, n, u = config.bs_antennas, config.num_elements, config.users

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)

    return ScenarioSample(
        H=cn(n, m), G=cn(u, n), D=cn(u, m), weights=np.ones(u), config=config
    )


def _tiny_training_setup(seed):
    config = ScenarioConfig(
        bs_antennas=2,
        ris_rows=2,
        ris_cols=2,
        users=2,
        noise_power=1.0,
        power_budget=2.0,
        rician_factor=2.0,
        seed=seed,
    )
    sample = synthetic_sample(config, seed)
    ds = Dataset(config=config, split="train", samples=[sample])
    schedule = make_schedule((2, 2), (1, 1))
    return sample, schedule, ds


def end_to_end_gradient_error(
    seed=0, width=8, coords: int | None = None, step=1e-6
) -> tuple:
    """Gradient of the WSR objective with respect to every network
    parameter, against central finite differences.

    Returns (max relative error, number of coordinates checked).  The
    precoder is solved once at the base point and held fixed, matching the
    training-time gradient path.
    """
    sample, schedule, _ = _tiny_training_setup(seed)
    net_config = NetworkConfig(
        input_dim=4 * sample.config.bs_antennas,
        block_size=schedule.block_size,
        width=width,
        pre_layers=2,
        post_layers=1,
    )
    params = init_params(net_config, seed=seed)
    obs = simulate_pilots(sample, schedule, math.inf)
    feats = extract_features(obs)
    scen = sample.config

    base_phases = forward(params, feats, schedule)
    C0 = compose_channel(sample, base_phases).value()
    V0 = wmmse(C0, sample.weights, scen.noise_power, scen.power_budget).V

    template = params
    sizes = [a.size for a in template.arrays()]
    shapes = [a.shape for a in template.arrays()]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def unflatten(vec):
        parts = []
        for k, shape in enumerate(shapes):
            idx = np.arange(offsets[k], offsets[k + 1])
            parts.append(ad.take(vec, idx, axis=0).reshape(shape))
        return template.replace_arrays(parts)

    def objective(vec):
        tracked = unflatten(vec)
        phases = forward(tracked, feats, schedule)
        Cm = compose_channel(sample, phases)
        return wsr(Cm, V0, sample.weights, scen.noise_power)

    x0 = np.concatenate([a.ravel() for a in template.arrays()])

    tape = Tape()
    xn = tape.leaf(x0)
    analytic = backward(tape, objective(xn)).wrt(xn)

    if coords is None:
        picked = np.arange(x0.size)
    else:
        picked = np.random.default_rng(seed).permutation(x0.size)[:coords]
    worst = 0.0
    for k in picked:
        xp, xm = x0.copy(), x0.copy()
        xp[k] += step
        xm[k] -= step
        num = (objective(xp) - objective(xm)) / (2 * step)
        err = abs(analytic[k] - num) / max(1.0, abs(analytic[k]))
        worst = max(worst, float(err))
    return worst, len(picked)


def gradient_property(seed=0) -> PropertyReport:
    err, n = end_to_end_gradient_error(seed=seed, coords=64)
    return PropertyReport("end-to-end-gradient", n, err, err <= 1e-4)


def user_permutation_property(seed=0) -> PropertyReport:
    users = 3
    schedule = make_schedule((2, 2), (1, 1))
    config = ScenarioConfig(
        bs_antennas=2, ris_rows=2, ris_cols=2, users=users,
        noise_power=1e-13, power_budget=3.0, rician_factor=2.0, seed=seed,
    )
    sample = generate_scenario(config, 1, seed=seed)[0]
    net_config = NetworkConfig(
        input_dim=8, block_size=schedule.block_size, width=8, pre_layers=1, post_layers=1
    )
    params = init_params(net_config, seed=seed)
    feats = extract_features(simulate_pilots(sample, schedule, math.inf))
    base = forward(params, feats, schedule)
    devs = []
    rng = np.random.default_rng(seed)
    for _ in range(5):
        perm = rng.permutation(users)
        permuted = forward(params, feats[perm], schedule)
        devs.append(np.abs(permuted - base).max())
    return _report("user-permutation-invariance", devs, 1e-12, 5)


def unit_modulus_property(seed=0, instances=200) -> PropertyReport:
    sample, schedule, _ = _tiny_training_setup(seed)
    net_config = NetworkConfig(
        input_dim=8, block_size=schedule.block_size, width=8, pre_layers=1, post_layers=0
    )
    devs = []
    for k in range(instances):
        params = init_params(net_config, seed=seed + k)
        feats = extract_features(simulate_pilots(sample, schedule, math.inf))
        phases = forward(params, feats, schedule)
        devs.append(np.abs(np.abs(np.exp(1j * np.pi * phases)) - 1.0).max())
    return _report("unit-modulus-output", devs, 1e-12, instances)


def run_all(seed: int = 0, sizes=_DEFAULT_SIZES) -> list:
    """Execute every property on randomized small instances; deterministic
    per seed.  Failures are reported, not raised."""
    return [
        _guard("channel-composition", lambda: channel_composition_property(seed, sizes)),
        _guard("probe-partition", lambda: probe_partition_property(sizes)),
        _guard("probe-zero-sum", lambda: probe_zero_sum_property(sizes)),
        _guard("feature-closed-forms", lambda: feature_identity_property(seed, sizes)),
        _guard("pilot-noise-calibration", lambda: pilot_noise_property(seed)),
        _guard("layer-loop-oracle", lambda: layer_oracle_property(seed)),
        _guard("wmmse-monotone-and-power", lambda: wmmse_monotone_property(seed)),
        _guard("ascent-update-arithmetic", lambda: update_arithmetic_property(seed)),
        _guard("end-to-end-gradient", lambda: gradient_property(seed)),
        _guard("user-permutation-invariance", lambda: user_permutation_property(seed)),
        _guard("unit-modulus-output", lambda: unit_modulus_property(seed)),
    ]
