"""Experiment harness: dataset generation, training, evaluation and
baseline comparison as reproducible subcommands.

All experiment settings live in one UTF-8 JSON config (same format family
as the dataset manifest); ``--seed``, ``--snr``, ``--steps`` and ``--out``
override the corresponding scalar fields.  Exit codes: 0 success, 2 config
or input error, 3 numerical failure.

Wall-clock columns (training ``seconds``, comparison
``mean_seconds_per_sample``) are the only nondeterministic CSV content;
everything else is byte-reproducible for fixed config and seeds.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .baselines import BASELINE_KINDS, coordinate_ascent, identity_phases, random_phases
from .channel import Dataset, ScenarioConfig, generate_scenario, load_dataset, save_dataset
from .exceptions import (
    ConfigError,
    ContractError,
    CorruptDatasetError,
    NumericalError,
    ShapeError,
)
from .network import NetworkConfig, forward, init_params, load_params, save_params
from .probing import extract_features, make_schedule, simulate_pilots
from .training import TrainConfig, achieved_wsr, evaluate, train

__all__ = ["main", "ExperimentConfig", "load_experiment_config"]


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    block_rows: int
    block_cols: int
    width: int
    pre_layers: int
    post_layers: int
    train: TrainConfig
    train_samples: int
    test_samples: int
    output_dir: Path
    baselines: tuple
    ca_sweeps: int
    ca_grid: int

    def schedule(self):
        return make_schedule(
            (self.scenario.ris_rows, self.scenario.ris_cols),
            (self.block_rows, self.block_cols),
        )

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            input_dim=4 * self.scenario.bs_antennas,
            block_size=self.block_rows * self.block_cols,
            width=self.width,
            pre_layers=self.pre_layers,
            post_layers=self.post_layers,
        )


def _parse_snr(value) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"pilot_snr must be a number or 'inf', got {value!r}") from None
    return float(value)


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and cross-validate an experiment config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    try:
        scen_raw = dict(raw["scenario"])
        scen_raw["user_region"] = tuple(scen_raw.get("user_region", (2.0, 2.0, 22.0, 22.0)))
        scenario = ScenarioConfig(**scen_raw)
        probe = raw.get("probe", {})
        block_rows = int(probe.get("block_rows", 1))
        block_cols = int(probe.get("block_cols", 1))
        net = raw.get("network", {})
        train_raw = dict(raw.get("train", {}))
        if "pilot_snr" in train_raw:
            train_raw["pilot_snr"] = _parse_snr(train_raw["pilot_snr"])
        train_cfg = TrainConfig(**train_raw)
        data = raw.get("data", {})
        config = ExperimentConfig(
            scenario=scenario,
            block_rows=block_rows,
            block_cols=block_cols,
            width=int(net.get("width", 32)),
            pre_layers=int(net.get("pre_layers", 2)),
            post_layers=int(net.get("post_layers", 1)),
            train=train_cfg,
            train_samples=int(data.get("train_samples", 512)),
            test_samples=int(data.get("test_samples", 128)),
            output_dir=Path(raw.get("output_dir", "out")),
            baselines=tuple(raw.get("baselines", ["random-phase"])),
            ca_sweeps=int(raw.get("coordinate_ascent", {}).get("sweeps", 4)),
            ca_grid=int(raw.get("coordinate_ascent", {}).get("grid", 16)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed experiment config: {exc}") from exc

    for kind in config.baselines:
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {kind!r}; valid kinds: {BASELINE_KINDS}")
    if config.train_samples < 1 or config.test_samples < 1:
        raise ConfigError("train_samples and test_samples must be >= 1")
    # Cross-field checks: block dims must tile the surface, widths must chain.
    config.schedule()
    config.network_config()
    return config


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    scenario = config.scenario
    train_cfg = config.train
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
        train_cfg = replace(train_cfg, seed=args.seed)
    if getattr(args, "snr", None) is not None:
        train_cfg = replace(train_cfg, pilot_snr=_parse_snr(args.snr))
    if getattr(args, "steps", None) is not None:
        train_cfg = replace(train_cfg, steps=args.steps)
    out = Path(args.out) if args.out is not None else config.output_dir
    return replace(config, scenario=scenario, train=train_cfg, output_dir=out)


def _load_split(config: ExperimentConfig, split: str) -> Dataset:
    path = config.output_dir / split
    if not (path / "manifest.json").is_file():
        raise ConfigError(
            f"no {split} dataset under {path}; run 'risnet-lab gen-data' first"
        )
    ds = load_dataset(path)
    if ds.config != config.scenario:
        raise ConfigError(
            f"{split} dataset was generated with a different scenario config"
        )
    return ds


def _cmd_gen_data(config: ExperimentConfig) -> int:
    train_ds = generate_scenario(config.scenario, config.train_samples, seed=config.scenario.seed)
    train_ds.split = "train"
    test_ds = generate_scenario(config.scenario, config.test_samples, seed=config.scenario.seed + 1)
    test_ds.split = "test"
    save_dataset(train_ds, config.output_dir / "train")
    save_dataset(test_ds, config.output_dir / "test")
    print(f"wrote {len(train_ds)} train and {len(test_ds)} test samples to {config.output_dir}")
    return 0


def _cmd_train(config: ExperimentConfig, resume) -> int:
    train_ds = _load_split(config, "train")
    test_ds = _load_split(config, "test")
    if resume is not None:
        params = load_params(Path(resume))
        if params.config != config.network_config():
            raise ConfigError("checkpoint architecture does not match the config")
    else:
        params = init_params(config.network_config(), seed=config.train.seed)
    schedule = config.schedule()
    params, log = train(params, train_ds, test_ds, schedule, config.train)
    ckpt = config.output_dir / "checkpoint"
    save_params(params, ckpt, seed=config.train.seed)
    log.to_csv(config.output_dir / "train_log.csv")
    print(f"final mean test WSR: {log.final_test_wsr!r}")
    return 0


def _require_checkpoint(config: ExperimentConfig, checkpoint) -> Path:
    path = Path(checkpoint) if checkpoint is not None else config.output_dir / "checkpoint"
    if not (path / "params.json").is_file():
        raise ConfigError(f"checkpoint not found under {path}")
    return path


def _cmd_eval(config: ExperimentConfig, checkpoint) -> int:
    params = load_params(_require_checkpoint(config, checkpoint))
    test_ds = _load_split(config, "test")
    schedule = config.schedule()
    mean, per_sample = evaluate(
        params, test_ds, schedule, config.train.pilot_snr, seed=config.train.seed
    )
    lines = ["sample,wsr"]
    lines += [f"{i},{w!r}" for i, w in enumerate(per_sample)]
    (config.output_dir / "eval.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"mean test WSR: {mean!r}")
    return 0


def _cmd_compare(config: ExperimentConfig, checkpoint) -> int:
    params = load_params(_require_checkpoint(config, checkpoint))
    test_ds = _load_split(config, "test")
    schedule = config.schedule()
    scen = config.scenario
    rows = []

    wsr_acc, time_acc = 0.0, 0.0
    for i, sample in enumerate(test_ds):
        obs = simulate_pilots(sample, schedule, config.train.pilot_snr, seed=(config.train.seed, i))
        feats = extract_features(obs)
        t0 = time.perf_counter()
        phases = forward(params, feats, schedule)
        time_acc += time.perf_counter() - t0
        wsr_acc += achieved_wsr(sample, phases)
    rows.append(("risnet", wsr_acc / len(test_ds), time_acc / len(test_ds)))

    for kind in config.baselines:
        wsr_acc, time_acc = 0.0, 0.0
        for i, sample in enumerate(test_ds):
            t0 = time.perf_counter()
            if kind == "random-phase":
                phases = random_phases(scen.num_elements, seed=(config.train.seed, 2, i))
            elif kind == "identity-phase":
                phases = identity_phases(scen.num_elements)
            else:
                phases = coordinate_ascent(
                    sample,
                    sample.weights,
                    scen.noise_power,
                    scen.power_budget,
                    sweeps=config.ca_sweeps,
                    grid=config.ca_grid,
                )
            time_acc += time.perf_counter() - t0
            wsr_acc += achieved_wsr(sample, phases)
        rows.append((kind, wsr_acc / len(test_ds), time_acc / len(test_ds)))

    lines = ["method,mean_wsr,mean_seconds_per_sample"]
    lines += [f"{name},{wsr_val!r},{secs!r}" for name, wsr_val, secs in rows]
    (config.output_dir / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, wsr_val, secs in rows:
        print(f"{name}: mean WSR {wsr_val:.4f}, {secs * 1e3:.3f} ms/sample")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risnet-lab",
        description="Pilot-driven RIS configuration experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override scenario and train seeds")
        p.add_argument("--out", default=None, help="override the output directory")

    p_gen = sub.add_parser("gen-data", help="generate train/test datasets")
    common(p_gen)

    p_train = sub.add_parser("train", help="train the phase network")
    common(p_train)
    p_train.add_argument("--snr", default=None, help="override pilot SNR (number or 'inf')")
    p_train.add_argument("--steps", type=int, default=None, help="override step count")
    p_train.add_argument("--resume", default=None, help="checkpoint directory to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p_eval)
    p_eval.add_argument("--snr", default=None, help="override pilot SNR (number or 'inf')")
    p_eval.add_argument("--checkpoint", default=None, help="checkpoint directory")

    p_cmp = sub.add_parser("compare", help="compare the network against baselines")
    common(p_cmp)
    p_cmp.add_argument("--snr", default=None, help="override pilot SNR (number or 'inf')")
    p_cmp.add_argument("--checkpoint", default=None, help="checkpoint directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _apply_overrides(load_experiment_config(args.config), args)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-data":
            return _cmd_gen_data(config)
        if args.command == "train":
            return _cmd_train(config, args.resume)
        if args.command == "eval":
            return _cmd_eval(config, args.checkpoint)
        if args.command == "compare":
            return _cmd_compare(config, args.checkpoint)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ContractError, ShapeError, CorruptDatasetError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
