"""Permutation-equivariant network from pilot features to surface phases.

Every layer computes, per (user, unit), four quarter-width branches that are
concatenated: the unit's own transform (cc), the mean transform over all
units of the same user (ca), the mean over the other users at the same unit
(oc), and the mean over the other users and all units (oa).  Averaging over
users and units is what makes the output invariant to user order and
equivariant to unit order.

Units are probing blocks before the expansion layer and surface elements
after it.  The expansion layer holds one weight group per within-block
position: position j of block n produces the features of element nu(n, j),
unwrapping per-block observations into per-element features.  The head
averages features over users and maps each element to a plane point (a, b);
the phase is atan2(b, a) / pi, so the applied factor exp(j*pi*phase) has
unit modulus by construction.  atan2(0, 0) yields phase 0 with zero
gradient (degenerate but well-defined).

Layers divide by (U - 1), so at least two users are required.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .exceptions import ConfigError, ContractError, CorruptDatasetError, ShapeError
from .probing import ProbeSchedule

__all__ = [
    "CATEGORIES",
    "NetworkConfig",
    "LayerParams",
    "NetworkParams",
    "init_params",
    "layer_forward",
    "expansion_forward",
    "phase_head",
    "forward",
    "save_params",
    "load_params",
]

CATEGORIES = ("cc", "ca", "oc", "oa")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    ``input_dim`` is the per-(user, block) feature length (4M for pilot
    features).  ``width`` is the feature width of every hidden layer; each
    category contributes width/4.  ``block_size`` is the number of weight
    groups in the expansion layer (one per within-block position).
    """

    input_dim: int
    block_size: int
    width: int = 32
    pre_layers: int = 2
    post_layers: int = 1

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.width < 4 or self.width % 4:
            raise ConfigError("width must be a positive multiple of 4")
        if self.pre_layers < 0 or self.post_layers < 0:
            raise ConfigError("layer counts cannot be negative")


@dataclass
class LayerParams:
    """One layer: weight (width/4 x in_dim) and bias per category."""

    weights: dict
    biases: dict


@dataclass
class NetworkParams:
    """All trainable arrays, in a fixed named order.

    The order of :meth:`named_arrays` defines the checkpoint layout and the
    gradient-accumulation order used by the trainer.  ``input_offset`` and
    ``input_scale`` are optional non-trainable constants: when set, inputs
    are standardized as (x - offset) * scale before the first layer.
    """

    config: NetworkConfig
    pre: list = field(default_factory=list)
    expansion: list = field(default_factory=list)
    post: list = field(default_factory=list)
    head_weight: object = None  # (2, width)
    head_bias: object = None  # (2,)
    input_offset: np.ndarray | None = None  # (input_dim,)
    input_scale: np.ndarray | None = None  # (input_dim,)

    def named_arrays(self):
        for i, layer in enumerate(self.pre):
            for cat in CATEGORIES:
                yield f"pre.{i}.{cat}.weight", layer.weights[cat]
                yield f"pre.{i}.{cat}.bias", layer.biases[cat]
        for j, group in enumerate(self.expansion):
            for cat in CATEGORIES:
                yield f"expansion.{j}.{cat}.weight", group.weights[cat]
                yield f"expansion.{j}.{cat}.bias", group.biases[cat]
        for i, layer in enumerate(self.post):
            for cat in CATEGORIES:
                yield f"post.{i}.{cat}.weight", layer.weights[cat]
                yield f"post.{i}.{cat}.bias", layer.biases[cat]
        yield "head.weight", self.head_weight
        yield "head.bias", self.head_bias

    def arrays(self) -> list:
        return [a for _, a in self.named_arrays()]

    def replace_arrays(self, arrays) -> "NetworkParams":
        """Rebuild the same structure around a new flat list of arrays
        (or tape nodes)."""
        arrays = list(arrays)
        expected = len(self.arrays())
        if len(arrays) != expected:
            raise ShapeError(f"expected {expected} arrays, got {len(arrays)}")
        it = iter(arrays)

        def next_layer():
            weights, biases = {}, {}
            for cat in CATEGORIES:
                weights[cat] = next(it)
                biases[cat] = next(it)
            return LayerParams(weights, biases)

        pre = [next_layer() for _ in self.pre]
        expansion = [next_layer() for _ in self.expansion]
        post = [next_layer() for _ in self.post]
        head_w = next(it)
        head_b = next(it)
        return NetworkParams(
            self.config, pre, expansion, post, head_w, head_b,
            input_offset=self.input_offset, input_scale=self.input_scale,
        )

    def copy(self) -> "NetworkParams":
        return self.replace_arrays([np.array(a, dtype=np.float64) for a in self.arrays()])


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(config: NetworkConfig, seed: int = 0) -> NetworkParams:
    """Initialize weights uniform in +-sqrt(6 / (fan_in + fan_out)) per
    matrix, biases zero; reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    quarter = config.width // 4

    def make_layer(in_dim):
        weights, biases = {}, {}
        for cat in CATEGORIES:
            weights[cat] = _glorot(rng, quarter, in_dim)
            biases[cat] = np.zeros(quarter)
        return LayerParams(weights, biases)

    in_dim = config.input_dim
    pre = []
    for _ in range(config.pre_layers):
        pre.append(make_layer(in_dim))
        in_dim = config.width
    expansion = [make_layer(in_dim) for _ in range(config.block_size)]
    in_dim = config.width
    post = [make_layer(in_dim) for _ in range(config.post_layers)]
    head_w = _glorot(rng, 2, config.width)
    head_b = np.zeros(2)
    return NetworkParams(config, pre, expansion, post, head_w, head_b)


def _feature_shape(features):
    return features.shape if isinstance(features, Node) else np.shape(features)


def _categories(layer: LayerParams, features, num_users: int, num_units: int):
    """The four branch outputs concatenated, shape (U, K, out_width)."""
    u, k = num_users, num_units
    shape = _feature_shape(features)
    in_dim = _feature_shape(layer.weights["cc"])[1]
    if shape != (u, k, in_dim):
        raise ShapeError(f"expected features of shape {(u, k, in_dim)}, got {shape}")
    if u < 2:
        raise ContractError("layers average over other users; at least 2 users required")

    flat = features.reshape((u * k, in_dim))
    branch = {}
    for cat in CATEGORIES:
        z = ad.relu(ad.matmul(flat, layer.weights[cat].T) + layer.biases[cat])
        branch[cat] = z.reshape((u, k, _feature_shape(z)[1]))

    q = _feature_shape(branch["cc"])[2]
    cc = branch["cc"]
    ca = ad.broadcast_to(branch["ca"].mean(axis=1, keepdims=True), (u, k, q))
    oc = (branch["oc"].sum(axis=0, keepdims=True) - branch["oc"]) * (1.0 / (u - 1))
    total = branch["oa"].sum(axis=(0, 1), keepdims=True)
    per_user = branch["oa"].sum(axis=1, keepdims=True)
    oa = ad.broadcast_to((total - per_user) * (1.0 / (k * (u - 1))), (u, k, q))
    return ad.concatenate([cc, ca, oc, oa], axis=2)


def layer_forward(params: LayerParams, features, num_users: int, num_units: int):
    """One intermediate layer over a (user, unit) grid.

    ``features`` is (U, K, in_dim), plain or tracked; the output is
    (U, K, out_width) where out_width is four times the per-category rows.
    """
    return _categories(params, features, num_users, num_units)


def expansion_forward(params: list, features, schedule: ProbeSchedule):
    """Unwrap per-block features to per-element features.

    ``params`` holds one weight group per within-block position j; element
    nu(n, j) of block n receives the group-j output computed from the
    block-level feature grid.  Output shape (U, N, out_width).
    """
    j_count = schedule.block_size
    if len(params) != j_count:
        raise ShapeError(
            f"expansion has {len(params)} weight groups, schedule block size is {j_count}"
        )
    shape = _feature_shape(features)
    if len(shape) != 3 or shape[1] != schedule.num_blocks:
        raise ShapeError(
            f"expected (users, {schedule.num_blocks}, in_dim) features, got {shape}"
        )
    u, i = shape[0], shape[1]
    per_position = [_categories(params[j], features, u, i) for j in range(j_count)]
    width = _feature_shape(per_position[0])[2]
    stacked = ad.concatenate(
        [p.reshape((u, i, 1, width)) for p in per_position], axis=2
    ).reshape((u, i * j_count, width))
    return ad.take(stacked, schedule.expansion_order(), axis=1)


def phase_head(head_weight, head_bias, features):
    """Collapse per-(user, element) features to one phase per element.

    Features are averaged over users and mapped linearly to a plane point
    (a, b) per element; the phase is atan2(b, a) / pi.
    """
    shape = _feature_shape(features)
    if len(shape) != 3 or shape[2] < 2:
        raise ShapeError(f"expected (users, elements, >=2) features, got {shape}")
    n = shape[1]
    avg = features.mean(axis=0)  # (N, F)
    ab = ad.matmul(avg, head_weight.T) + head_bias  # (N, 2)
    a = ad.take(ab, np.array([0]), axis=1).reshape((n,))
    b = ad.take(ab, np.array([1]), axis=1).reshape((n,))
    return ad.atan2(b, a) * (1.0 / math.pi)


def forward(params: NetworkParams, features, schedule: ProbeSchedule):
    """Full pass: pre layers on blocks, expansion, post layers on elements,
    phase head.  Returns a phase vector of length N."""
    shape = _feature_shape(features)
    if len(shape) != 3:
        raise ShapeError(f"expected a (users, blocks, features) tensor, got {shape}")
    u = shape[0]
    x = features
    if params.input_offset is not None:
        x = (x - params.input_offset) * params.input_scale
    for layer in params.pre:
        x = layer_forward(layer, x, u, schedule.num_blocks)
    x = expansion_forward(params.expansion, x, schedule)
    for layer in params.post:
        x = layer_forward(layer, x, u, schedule.num_elements)
    return phase_head(params.head_weight, params.head_bias, x)


def save_params(params: NetworkParams, path, seed: int = 0) -> None:
    """Checkpoint: ``params.json`` manifest plus ``params.bin`` holding all
    arrays little-endian float64 in manifest order; round-trips bit-exact."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names, flats = [], []
    for name, arr in params.named_arrays():
        arr = np.asarray(arr, dtype=np.float64)
        names.append({"name": name, "shape": list(arr.shape)})
        flats.append(arr.ravel())
    constants = []
    if params.input_offset is not None:
        for name, arr in (("input.offset", params.input_offset), ("input.scale", params.input_scale)):
            arr = np.asarray(arr, dtype=np.float64)
            constants.append({"name": name, "shape": list(arr.shape)})
            flats.append(arr.ravel())
    blob = np.concatenate(flats).astype("<f8")
    blob.tofile(path / "params.bin")
    manifest = {
        "config": asdict(params.config),
        "seed": seed,
        "arrays": names,
        "constants": constants,
    }
    with open(path / "params.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)


def load_params(path) -> NetworkParams:
    path = Path(path)
    try:
        with open(path / "params.json", encoding="utf-8") as f:
            manifest = json.load(f)
        config = NetworkConfig(**manifest["config"])
        entries = manifest["arrays"]
        constants = manifest.get("constants", [])
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptDatasetError(f"malformed checkpoint manifest: {exc}") from exc
    blob = np.fromfile(path / "params.bin", dtype="<f8").astype(np.float64)
    total = sum(int(np.prod(e["shape"])) for e in list(entries) + list(constants))
    if blob.size != total:
        raise CorruptDatasetError(
            f"array 'params': manifest declares {total} values, file has {blob.size}"
        )
    skeleton = init_params(config, seed=0)
    declared = [e["name"] for e in entries]
    expected = [name for name, _ in skeleton.named_arrays()]
    if declared != expected:
        raise CorruptDatasetError("checkpoint array list does not match the architecture")
    arrays, offset = [], 0
    for e in entries:
        shape = tuple(int(v) for v in e["shape"])
        size = int(np.prod(shape))
        arrays.append(blob[offset : offset + size].reshape(shape).copy())
        offset += size
    loaded = skeleton.replace_arrays(arrays)
    extra = {}
    for e in constants:
        shape = tuple(int(v) for v in e["shape"])
        size = int(np.prod(shape))
        extra[e["name"]] = blob[offset : offset + size].reshape(shape).copy()
        offset += size
    if extra:
        if set(extra) != {"input.offset", "input.scale"}:
            raise CorruptDatasetError("checkpoint constants are not an input transform")
        loaded.input_offset = extra["input.offset"]
        loaded.input_scale = extra["input.scale"]
    return loaded
