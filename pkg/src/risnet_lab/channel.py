"""Synthetic geometric channels and problem-instance datasets.

One problem instance couples three links: base station to reflecting surface
(Rician, a deterministic steering component mixed with circular Gaussian
scatter), surface to users and base station to users (same mix, per-user).
All links carry free-space path loss; the direct base-station-to-user path
additionally crosses an obstruction, which is what makes the reflecting
surface worth configuring in the first place.

Phase convention: a stored phase value of 1.0 means a physical shift of pi,
i.e. the applied per-element factor is exp(j*pi*phase).

Geometry is fixed by module constants (positions in meters); the user area,
array sizes and radio constants come from :class:`ScenarioConfig`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ContractError, CorruptDatasetError, ShapeError
from .linalg import CMatrix

__all__ = [
    "ScenarioConfig",
    "ScenarioSample",
    "Dataset",
    "generate_scenario",
    "compose_channel",
    "save_dataset",
    "load_dataset",
    "free_space_amplitude",
]

BS_POSITION = np.array([-30.0, -40.0, 10.0])
RIS_POSITION = np.array([0.0, 0.0, 5.0])
USER_HEIGHT = 1.5
# The direct path is modeled as obstructed (urban scenario, base station
# around the block from the users); power loss in dB.  Deep enough that the
# reflected path dominates even for small surfaces, which is what makes
# phase control worth learning at desk scale.
DIRECT_OBSTRUCTION_LOSS_DB = 60.0


def free_space_amplitude(distance: float, wavelength: float) -> float:
    """Free-space amplitude gain wavelength / (4 pi d)."""
    return wavelength / (4.0 * math.pi * distance)


@dataclass(frozen=True)
class ScenarioConfig:
    """Static description of one simulation scenario.

    ``ris_rows * ris_cols`` is the element count N; ``bs_antennas`` is M and
    ``users`` is U.  ``user_region`` is an axis-aligned rectangle
    (x0, y0, x1, y1) in meters in which user positions are drawn uniformly.
    """

    bs_antennas: int
    ris_rows: int
    ris_cols: int
    users: int
    noise_power: float
    power_budget: float
    rician_factor: float = 4.0
    user_region: tuple = (2.0, 2.0, 22.0, 22.0)
    carrier_wavelength: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.bs_antennas < 1 or self.ris_rows < 1 or self.ris_cols < 1 or self.users < 1:
            raise ConfigError("bs_antennas, ris_rows, ris_cols and users must all be >= 1")
        if self.noise_power <= 0:
            raise ConfigError("noise_power must be positive")
        if self.power_budget <= 0:
            raise ConfigError("power_budget must be positive")
        if not (self.rician_factor >= 0):
            raise ConfigError("rician_factor must be >= 0")
        if self.carrier_wavelength <= 0:
            raise ConfigError("carrier_wavelength must be positive")
        x0, y0, x1, y1 = self.user_region
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("user_region must have positive area")
        object.__setattr__(self, "user_region", tuple(float(v) for v in self.user_region))

    @property
    def num_elements(self) -> int:
        return self.ris_rows * self.ris_cols


@dataclass(frozen=True)
class ScenarioSample:
    """One problem instance: channel triple plus user weights."""

    H: np.ndarray  # (N, M) base station -> surface
    G: np.ndarray  # (U, N) surface -> users
    D: np.ndarray  # (U, M) base station -> users, obstructed
    weights: np.ndarray  # (U,) positive, summing to U
    config: ScenarioConfig


@dataclass
class Dataset:
    """An ordered list of samples sharing one scenario config."""

    config: ScenarioConfig
    split: str
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> ScenarioSample:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)


def _ris_element_offsets(config: ScenarioConfig) -> np.ndarray:
    """Element positions relative to the surface center, row-major, in the
    x-z plane with half-wavelength spacing."""
    d = config.carrier_wavelength / 2.0
    rows, cols = config.ris_rows, config.ris_cols
    r = np.repeat(np.arange(rows), cols)
    c = np.tile(np.arange(cols), rows)
    x = (c - (cols - 1) / 2.0) * d
    z = ((rows - 1) / 2.0 - r) * d
    return np.column_stack([x, np.zeros_like(x), z])


def _bs_antenna_offsets(config: ScenarioConfig) -> np.ndarray:
    d = config.carrier_wavelength / 2.0
    m = np.arange(config.bs_antennas)
    x = (m - (config.bs_antennas - 1) / 2.0) * d
    return np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])


def _steering(offsets: np.ndarray, center: np.ndarray, target: np.ndarray, wavelength: float):
    """Per-element unit-modulus steering factors toward ``target``."""
    delta = target - center
    dist = float(np.linalg.norm(delta))
    u = delta / dist
    phase = (2.0 * math.pi / wavelength) * (offsets @ u)
    return np.exp(1j * phase), dist


def _rician_mix(factor: float):
    if math.isinf(factor):
        return 1.0, 0.0
    los = math.sqrt(factor / (1.0 + factor))
    nlos = math.sqrt(1.0 / (1.0 + factor))
    return los, nlos


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular symmetric CN(0, 1) draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _draw_sample(config: ScenarioConfig, rng: np.random.Generator) -> ScenarioSample:
    M, N, U = config.bs_antennas, config.num_elements, config.users
    lam = config.carrier_wavelength
    los_w, nlos_w = _rician_mix(config.rician_factor)

    x0, y0, x1, y1 = config.user_region
    ux = rng.uniform(x0, x1, U)
    uy = rng.uniform(y0, y1, U)
    user_pos = np.column_stack([ux, uy, np.full(U, USER_HEIGHT)])

    ris_off = _ris_element_offsets(config)
    bs_off = _bs_antenna_offsets(config)

    # Base station -> surface.
    a_ris, dist = _steering(ris_off, RIS_POSITION, BS_POSITION, lam)
    a_bs, _ = _steering(bs_off, BS_POSITION, RIS_POSITION, lam)
    amp = free_space_amplitude(dist, lam)
    los = np.exp(-2j * math.pi * dist / lam) * np.outer(a_ris, a_bs)
    H = amp * (los_w * los + nlos_w * _complex_normal(rng, (N, M)))

    # Surface -> users.
    G = np.empty((U, N), dtype=np.complex128)
    for u in range(U):
        a, dist = _steering(ris_off, RIS_POSITION, user_pos[u], lam)
        amp = free_space_amplitude(dist, lam)
        los = np.exp(-2j * math.pi * dist / lam) * a
        G[u] = amp * (los_w * los + nlos_w * _complex_normal(rng, N))

    # Base station -> users, through the obstruction.
    obstruction = 10.0 ** (-DIRECT_OBSTRUCTION_LOSS_DB / 20.0)
    D = np.empty((U, M), dtype=np.complex128)
    for u in range(U):
        a, dist = _steering(bs_off, BS_POSITION, user_pos[u], lam)
        amp = free_space_amplitude(dist, lam) * obstruction
        los = np.exp(-2j * math.pi * dist / lam) * a
        D[u] = amp * (los_w * los + nlos_w * _complex_normal(rng, M))

    return ScenarioSample(H=H, G=G, D=D, weights=np.ones(U), config=config)


def generate_scenario(config: ScenarioConfig, count: int, seed=None) -> Dataset:
    """Draw ``count`` independent samples, reproducibly.

    Each sample uses its own generator spawned from ``seed`` (default: the
    config seed), so per-sample streams do not depend on sample order.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    if seed is None:
        seed = config.seed
    samples = []
    for k in range(count):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        samples.append(_draw_sample(config, rng))
    return Dataset(config=config, split="train", samples=samples)


def compose_channel(sample: ScenarioSample, phases) -> CMatrix:
    """End-to-end channel D + G diag(exp(j*pi*phase)) H.

    ``phases`` may be a plain array or a tape node of length N; in the
    latter case the result is differentiable with respect to the phases.
    The surface acts elementwise on its column of G, which realizes the
    diagonal (no cross-element energy transfer) structurally.
    """
    n = sample.G.shape[1]
    if not isinstance(phases, ad.Node):
        phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != (n,):
        raise ShapeError(f"expected {n} phases, got shape {phases.shape}")
    scaled = phases * math.pi
    factor = CMatrix(ad.cos(scaled), ad.sin(scaled))
    G = CMatrix.from_complex(sample.G)
    H = CMatrix.from_complex(sample.H)
    D = CMatrix.from_complex(sample.D)
    return (G * factor) @ H + D


_ARRAY_FILES = {"H": "H.bin", "G": "G.bin", "D": "D.bin", "w": "w.bin"}


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset directory: ``manifest.json`` plus one little-endian
    binary file per matrix family (complex as interleaved re/im float64)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n = len(ds)
    cfg = ds.config
    stacks = {
        "H": np.stack([s.H for s in ds.samples]),
        "G": np.stack([s.G for s in ds.samples]),
        "D": np.stack([s.D for s in ds.samples]),
        "w": np.stack([s.weights for s in ds.samples]),
    }
    arrays = {}
    for name, arr in stacks.items():
        dtype = "<f8" if name == "w" else "<c16"
        raw = np.ascontiguousarray(arr).astype(dtype)
        raw.tofile(path / _ARRAY_FILES[name])
        arrays[name] = {
            "shape": list(arr.shape),
            "dtype": "float64" if name == "w" else "complex128",
            "bytes": int(raw.nbytes),
        }
    manifest = {
        "config": asdict(cfg),
        "count": n,
        "split": ds.split,
        "arrays": arrays,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)


def _expected_shapes(config: ScenarioConfig, count: int) -> dict:
    M, N, U = config.bs_antennas, config.num_elements, config.users
    return {
        "H": (count, N, M),
        "G": (count, U, N),
        "D": (count, U, M),
        "w": (count, U),
    }


def load_dataset(path) -> Dataset:
    """Load a dataset directory written by :func:`save_dataset`.

    Any size or shape inconsistency raises :class:`CorruptDatasetError`
    naming the offending array.
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise CorruptDatasetError(f"missing manifest.json under {path}")
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
        cfg_fields = dict(manifest["config"])
        cfg_fields["user_region"] = tuple(cfg_fields["user_region"])
        config = ScenarioConfig(**cfg_fields)
        count = int(manifest["count"])
        split = str(manifest["split"])
        declared = manifest["arrays"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptDatasetError(f"malformed manifest: {exc}") from exc

    expected = _expected_shapes(config, count)
    data = {}
    for name, fname in _ARRAY_FILES.items():
        fpath = path / fname
        if not fpath.is_file():
            raise CorruptDatasetError(f"array '{name}': missing file {fname}")
        entry = declared.get(name)
        if entry is None:
            raise CorruptDatasetError(f"array '{name}': missing manifest entry")
        shape = tuple(int(v) for v in entry["shape"])
        if shape != expected[name]:
            raise CorruptDatasetError(
                f"array '{name}': manifest shape {shape} does not match "
                f"config-implied shape {expected[name]}"
            )
        dtype = np.dtype("<f8") if name == "w" else np.dtype("<c16")
        want_bytes = int(np.prod(shape)) * dtype.itemsize
        have_bytes = fpath.stat().st_size
        if have_bytes != want_bytes or int(entry["bytes"]) != want_bytes:
            raise CorruptDatasetError(
                f"array '{name}': expected {want_bytes} bytes, file has {have_bytes}"
            )
        raw = np.fromfile(fpath, dtype=dtype)
        kind = np.complex128 if name != "w" else np.float64
        data[name] = raw.astype(kind).reshape(shape)

    samples = [
        ScenarioSample(
            H=data["H"][k], G=data["G"][k], D=data["D"][k], weights=data["w"][k], config=config
        )
        for k in range(count)
    ]
    return Dataset(config=config, split=split, samples=samples)
