"""Pilot probing protocol and network input features.

The surface is tiled into disjoint rectangular blocks.  Configuration 0
leaves every element at phase 0; configuration i flips exactly block i to a
phase shift of pi.  Users transmit unit pilots uplink under each
configuration; the received vectors are combined into two families of
features per (user, block):

* cascaded half: y_u(i) - y_u(0), which in the noise-free case equals
  -2 * sum over the block of h_n * g_un (per-block reflected-path info);
* direct half: (I - 2) * y_u(0) - sum_i y_u(i), which collapses to
  -2 * d_u because the block configurations cancel the reflected path.

Feature layout per (user, block): [Re cascaded | Im cascaded | Re direct |
Im direct], 4M reals; the direct half repeats across blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .channel import ScenarioSample
from .exceptions import ConfigError, ContractError, CorruptDatasetError

__all__ = [
    "ProbeSchedule",
    "PilotObservation",
    "make_schedule",
    "probe_config",
    "probe_factors",
    "simulate_pilots",
    "extract_features",
    "save_features",
    "load_features",
]


@lru_cache(maxsize=64)
def _grid_indices(rows: int, cols: int):
    """Read-only row/column index per element of a row-major rows x cols
    grid (cached; schedule geometry queries are hot in bulk checks)."""
    r = np.repeat(np.arange(rows), cols)
    c = np.tile(np.arange(cols), rows)
    r.setflags(write=False)
    c.setflags(write=False)
    return r, c


@dataclass(frozen=True)
class ProbeSchedule:
    """Partition of a rows x cols surface into equal rectangular blocks.

    Elements are indexed row-major over the surface; blocks row-major over
    the block grid; positions row-major within each block.
    """

    ris_rows: int
    ris_cols: int
    block_rows: int
    block_cols: int

    @property
    def num_elements(self) -> int:
        return self.ris_rows * self.ris_cols

    @property
    def num_blocks(self) -> int:
        return (self.ris_rows // self.block_rows) * (self.ris_cols // self.block_cols)

    @property
    def block_size(self) -> int:
        return self.block_rows * self.block_cols

    def block_of_elements(self) -> np.ndarray:
        """Block index of every element, shape (N,)."""
        r, c = _grid_indices(self.ris_rows, self.ris_cols)
        grid_cols = self.ris_cols // self.block_cols
        return (r // self.block_rows) * grid_cols + (c // self.block_cols)

    def position_of_elements(self) -> np.ndarray:
        """Within-block position of every element, shape (N,)."""
        r, c = _grid_indices(self.ris_rows, self.ris_cols)
        return (r % self.block_rows) * self.block_cols + (c % self.block_cols)

    def blocks(self) -> list:
        """Element index arrays, one per block (ascending within a block)."""
        owner = self.block_of_elements()
        order = np.argsort(owner, kind="stable")
        sizes = np.bincount(owner, minlength=self.num_blocks)
        return np.split(order, np.cumsum(sizes)[:-1])

    def membership(self) -> np.ndarray:
        """Concatenation of all block index sets in block order.

        Uses the closed-form row-major block gather; agrees with
        ``blocks()`` elementwise (the test suite pins the two together).
        """
        return (
            np.arange(self.num_elements)
            .reshape(
                self.ris_rows // self.block_rows,
                self.block_rows,
                self.ris_cols // self.block_cols,
                self.block_cols,
            )
            .transpose(0, 2, 1, 3)
            .ravel()
        )

    def element_index(self, block: int, position: int) -> int:
        """Element fed by weight group ``position`` of ``block``."""
        grid_cols = self.ris_cols // self.block_cols
        br, bc = divmod(block, grid_cols)
        pr, pc = divmod(position, self.block_cols)
        return (br * self.block_rows + pr) * self.ris_cols + bc * self.block_cols + pc

    def expansion_order(self) -> np.ndarray:
        """Permutation mapping element n to index block*J + position."""
        return self.block_of_elements() * self.block_size + self.position_of_elements()


@dataclass(frozen=True)
class PilotObservation:
    """Received pilot vectors: y[u, i, :] for configuration i in 0..I."""

    y: np.ndarray  # (U, I + 1, M) complex
    pilot_snr: float

    @property
    def num_users(self) -> int:
        return self.y.shape[0]

    @property
    def num_blocks(self) -> int:
        return self.y.shape[1] - 1


def make_schedule(ris_geometry, block_geometry) -> ProbeSchedule:
    """Build the block partition; block dims must divide the surface dims."""
    rows, cols = ris_geometry
    brows, bcols = block_geometry
    if rows < 1 or cols < 1 or brows < 1 or bcols < 1:
        raise ConfigError("block and surface dimensions must be >= 1")
    if rows % brows or cols % bcols:
        raise ConfigError(
            f"block geometry {brows}x{bcols} does not divide surface geometry {rows}x{cols}"
        )
    return ProbeSchedule(rows, cols, brows, bcols)


def probe_config(schedule: ProbeSchedule, i: int) -> np.ndarray:
    """Phase vector of probing configuration ``i``.

    Configuration 0 is all zeros; configuration i >= 1 sets phase 1.0
    (a shift of pi, factor -1) on block i and 0 elsewhere.
    """
    if not 0 <= i <= schedule.num_blocks:
        raise IndexError(f"configuration index {i} out of range 0..{schedule.num_blocks}")
    phases = np.zeros(schedule.num_elements)
    if i > 0:
        phases[schedule.block_of_elements() == i - 1] = 1.0
    return phases


def probe_factors(schedule: ProbeSchedule) -> np.ndarray:
    """Diagonal factors of all configurations at once, shape (I + 1, N).

    Row 0 is all +1; row i has -1 on block i and +1 elsewhere.
    """
    I, n = schedule.num_blocks, schedule.num_elements
    factors = np.ones((I + 1, n))
    owner = schedule.block_of_elements()
    factors[1:][np.arange(I)[:, None] == owner[None, :]] = -1.0
    return factors


def simulate_pilots(
    sample: ScenarioSample,
    schedule: ProbeSchedule,
    pilot_snr: float,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> PilotObservation:
    """Uplink pilots under every probing configuration.

    y_u(i) = d_u + H^T Phi(i) g_u plus circular Gaussian noise per antenna.
    (Uplink reverses the cascade, hence the transposed matrices.)  Pilot
    symbols are 1 and users are orthogonal, so there is no inter-user pilot
    interference.  The noise variance is chosen so that the mean received
    signal power per antenna, averaged over users and configurations,
    divided by the noise variance equals ``pilot_snr``; an infinite SNR
    means no noise.

    Noise comes from a generator seeded with ``seed`` (an int or tuple),
    or from an explicitly passed ``rng`` when drawing many observations
    from one stream.
    """
    if not pilot_snr > 0:
        raise ConfigError("pilot_snr must be positive (or infinite)")
    factors = probe_factors(schedule)  # (I + 1, N)
    # (U, I+1, M): entry [u, i, m] = sum_n H[n, m] * f_i[n] * g_u[n].
    Ht = sample.H.T
    signal = np.einsum("mn,in,un->uim", Ht, factors, sample.G)
    signal = signal + sample.D[:, None, :]
    if math.isinf(pilot_snr):
        y = signal
    else:
        mean_power = float(np.mean(np.abs(signal) ** 2))
        noise_var = mean_power / pilot_snr
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
        noise = (
            rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
        ) * math.sqrt(noise_var / 2.0)
        y = signal + noise
    return PilotObservation(y=y, pilot_snr=float(pilot_snr))


def extract_features(obs: PilotObservation) -> np.ndarray:
    """Real feature tensor of shape (U, I, 4M).

    Per (user, block): the cascaded difference y_u(i) - y_u(0) followed by
    the direct combination (I - 2) y_u(0) - sum_i y_u(i); each complex
    vector is laid out as real parts then imaginary parts.
    """
    y = obs.y
    num_blocks = obs.num_blocks
    cascaded = y[:, 1:, :] - y[:, :1, :]  # (U, I, M)
    direct = (num_blocks - 2) * y[:, 0, :] - y[:, 1:, :].sum(axis=1)  # (U, M)
    direct = np.broadcast_to(direct[:, None, :], cascaded.shape)
    return np.concatenate(
        [cascaded.real, cascaded.imag, direct.real, direct.imag], axis=2
    )


def save_features(features: np.ndarray, path) -> None:
    """Dump a feature tensor for debugging (little-endian float64 plus a
    JSON sidecar with the shape)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    raw = np.ascontiguousarray(features).astype("<f8")
    raw.tofile(path / "features.bin")
    with open(path / "features.json", "w", encoding="utf-8") as f:
        json.dump({"shape": list(features.shape), "dtype": "float64"}, f)


def load_features(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path / "features.json", encoding="utf-8") as f:
            meta = json.load(f)
        shape = tuple(int(v) for v in meta["shape"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptDatasetError(f"malformed feature sidecar: {exc}") from exc
    raw = np.fromfile(path / "features.bin", dtype="<f8")
    if raw.size != int(np.prod(shape)):
        raise CorruptDatasetError(
            f"array 'features': expected {int(np.prod(shape))} values, file has {raw.size}"
        )
    return raw.astype(np.float64).reshape(shape)
