"""Reference models, labelled datasets, and the planted-bias generator.

Models are deterministic functions over Q16.16 feature vectors with a
canonical byte serialization, so the same bytes always produce the same
predictions whether evaluated here or inside the secure-compute circuits.
Three architectures exist: an argmax-of-affine-scores classifier, a lookup
table over the first feature's integer part, and a wrapper that flips the
inner model's prediction per group at a configured rate (the vehicle for
planting a known fairness gap).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Union

from . import fixedpoint as fx
from .fairness import micro_fraction, to_micro
from .prg import CounterPrg, derive_key, hash_u64

MODEL_MAGIC = b"FAIRM1"
DATASET_MAGIC = b"FDAT1"

ARCH_LINEAR = 0
ARCH_LOOKUP = 1
ARCH_BIASED = 2

_U64 = 1 << 64
_FLIP_TAG = b"flip:"


class DimensionMismatchError(ValueError):
    pass


class IdOutOfRangeError(ValueError):
    pass


class InvalidWeightsError(ValueError):
    pass


class MalformedModelError(ValueError):
    pass


class MalformedDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    """One labelled point: Q16.16 raw features, group id, true label."""

    features: tuple[int, ...]
    group: int
    label: int


@dataclass(frozen=True)
class Dataset:
    dimension: int
    num_groups: int
    num_labels: int
    samples: tuple[Sample, ...]

    def __post_init__(self) -> None:
        if self.dimension < 1 or self.num_groups < 1 or self.num_labels < 1:
            raise ValueError("dimension, groups and labels must be positive")
        for s in self.samples:
            if len(s.features) != self.dimension:
                raise DimensionMismatchError(
                    f"sample has {len(s.features)} features, expected {self.dimension}"
                )
            if not (0 <= s.group < self.num_groups):
                raise IdOutOfRangeError(f"group {s.group} outside [0, {self.num_groups})")
            if not (0 <= s.label < self.num_labels):
                raise IdOutOfRangeError(f"label {s.label} outside [0, {self.num_labels})")
            for v in s.features:
                if not (fx.INT32_MIN <= v <= fx.INT32_MAX):
                    raise ValueError("feature outside the signed 32-bit range")


def canonical_order(dataset: Dataset) -> Dataset:
    """Stable sort by group id; the public ordering used for certification."""
    ordered = tuple(sorted(dataset.samples, key=lambda s: s.group))
    return Dataset(dataset.dimension, dataset.num_groups, dataset.num_labels, ordered)


def encode_dataset(dataset: Dataset) -> bytes:
    parts = [
        DATASET_MAGIC,
        struct.pack(
            "<IIII",
            dataset.dimension,
            dataset.num_groups,
            dataset.num_labels,
            len(dataset.samples),
        ),
    ]
    for s in dataset.samples:
        parts.append(struct.pack("<HH", s.group, s.label))
        parts.append(struct.pack(f"<{dataset.dimension}i", *s.features))
    return b"".join(parts)


def decode_dataset(data: bytes) -> Dataset:
    if not data.startswith(DATASET_MAGIC):
        raise MalformedDatasetError("bad dataset magic")
    offset = len(DATASET_MAGIC)
    try:
        dim, groups, labels, count = struct.unpack_from("<IIII", data, offset)
        offset += 16
        samples = []
        for _ in range(count):
            g, y = struct.unpack_from("<HH", data, offset)
            offset += 4
            feats = struct.unpack_from(f"<{dim}i", data, offset)
            offset += 4 * dim
            samples.append(Sample(features=tuple(feats), group=g, label=y))
    except struct.error as exc:
        raise MalformedDatasetError("truncated dataset") from exc
    if offset != len(data):
        raise MalformedDatasetError("trailing bytes after dataset")
    try:
        return Dataset(dim, groups, labels, tuple(samples))
    except ValueError as exc:
        raise MalformedDatasetError(str(exc)) from exc


@dataclass(frozen=True)
class LinearModel:
    """argmax_y of <weights[y], x> + bias[y], lowest label wins ties."""

    dimension: int
    num_labels: int
    weights: tuple[tuple[int, ...], ...]
    biases: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dimension < 1 or self.num_labels < 1:
            raise ValueError("dimension and num_labels must be positive")
        if len(self.weights) != self.num_labels or len(self.biases) != self.num_labels:
            raise MalformedModelError("one weight row and bias per label required")
        for row in self.weights:
            if len(row) != self.dimension:
                raise MalformedModelError("weight row length must equal the dimension")


@dataclass(frozen=True)
class LookupModel:
    """Label read from a table at index int(feature[0]) mod table size."""

    dimension: int
    num_labels: int
    table: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dimension < 1 or self.num_labels < 1:
            raise ValueError("dimension and num_labels must be positive")
        if not self.table:
            raise MalformedModelError("lookup table must be nonempty")
        if any(not (0 <= v < self.num_labels) for v in self.table):
            raise MalformedModelError("table entries must be valid labels")


@dataclass(frozen=True)
class BiasedModel:
    """Flips the inner prediction per group at a configured rate.

    The flip draw is keyed by (seed, hash of the feature bytes), never by
    call order, so repeated evaluation of the same point is stable. Only a
    LinearModel inner is allowed: the byte layout carries no inner-length
    field, and the linear header is the only one that self-delimits.
    """

    inner: LinearModel
    flip_rates: tuple[Fraction, ...]
    seed: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.inner, LinearModel):
            raise MalformedModelError("wrapper requires a linear inner model")
        if not self.flip_rates:
            raise MalformedModelError("need at least one per-group flip rate")
        for r in self.flip_rates:
            if not (0 <= r < 1):
                raise InvalidWeightsError("flip rates must lie in [0, 1)")
            to_micro(r)
        if len(self.seed) != 8:
            raise MalformedModelError("seed must be 8 bytes")

    @property
    def dimension(self) -> int:
        return self.inner.dimension

    @property
    def num_labels(self) -> int:
        return self.inner.num_labels


ModelSpec = Union[LinearModel, LookupModel, BiasedModel]


def _feature_bytes(features: tuple[int, ...]) -> bytes:
    return struct.pack(f"<{len(features)}i", *features)


def predict(model: ModelSpec, sample: Sample) -> int:
    """Deterministic label for a sample; pure in (model bytes, sample)."""
    if len(sample.features) != model.dimension:
        raise DimensionMismatchError(
            f"sample has {len(sample.features)} features, model wants {model.dimension}"
        )
    if isinstance(model, LinearModel):
        best = 0
        best_score = fx.dot(model.weights[0], sample.features, model.biases[0])
        for y in range(1, model.num_labels):
            score = fx.dot(model.weights[y], sample.features, model.biases[y])
            if score > best_score:
                best, best_score = y, score
        return best
    if isinstance(model, LookupModel):
        idx = (sample.features[0] >> fx.FRACTION_BITS) % len(model.table)
        return model.table[idx]
    if isinstance(model, BiasedModel):
        if not (0 <= sample.group < len(model.flip_rates)):
            raise IdOutOfRangeError(
                f"group {sample.group} has no flip rate (got {len(model.flip_rates)})"
            )
        label = predict(model.inner, sample)
        rate = model.flip_rates[sample.group]
        draw = hash_u64(_FLIP_TAG, model.seed, _feature_bytes(sample.features))
        if draw * rate.denominator < rate.numerator * _U64:
            return (label + 1) % model.num_labels
        return label
    raise TypeError(f"unknown model type {type(model)!r}")


def _header(arch: int, dimension: int, num_labels: int) -> bytes:
    return MODEL_MAGIC + struct.pack("<BII", arch, dimension, num_labels)


def serialize_model(model: ModelSpec) -> bytes:
    """Canonical byte form; the Merkle commitment is taken over these bytes."""
    if isinstance(model, LinearModel):
        params = [v for row in model.weights for v in row] + list(model.biases)
        return _header(ARCH_LINEAR, model.dimension, model.num_labels) + struct.pack(
            f"<{len(params)}i", *params
        )
    if isinstance(model, LookupModel):
        params = [v << fx.FRACTION_BITS for v in model.table]
        return _header(ARCH_LOOKUP, model.dimension, model.num_labels) + struct.pack(
            f"<{len(params)}i", *params
        )
    if isinstance(model, BiasedModel):
        rates = b"".join(struct.pack("<I", to_micro(r)) for r in model.flip_rates)
        return (
            _header(ARCH_BIASED, model.dimension, model.num_labels)
            + serialize_model(model.inner)
            + rates
            + model.seed
        )
    raise TypeError(f"unknown model type {type(model)!r}")


_HEADER_SIZE = len(MODEL_MAGIC) + 9


def _parse_header(data: bytes, offset: int) -> tuple[int, int, int, int]:
    if data[offset : offset + len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise MalformedModelError("bad model magic")
    try:
        arch, dim, labels = struct.unpack_from("<BII", data, offset + len(MODEL_MAGIC))
    except struct.error as exc:
        raise MalformedModelError("truncated model header") from exc
    if dim < 1 or labels < 1:
        raise MalformedModelError("dimension and num_labels must be positive")
    return arch, dim, labels, offset + _HEADER_SIZE


def _read_params(data: bytes, offset: int, count: int) -> tuple[tuple[int, ...], int]:
    try:
        values = struct.unpack_from(f"<{count}i", data, offset)
    except struct.error as exc:
        raise MalformedModelError("truncated parameter block") from exc
    return values, offset + 4 * count


def deserialize_model(data: bytes) -> ModelSpec:
    if len(data) < _HEADER_SIZE:
        raise MalformedModelError("model bytes shorter than the header")
    arch, dim, labels, offset = _parse_header(data, 0)
    if arch == ARCH_LINEAR:
        params, offset = _read_params(data, offset, labels * (dim + 1))
        if offset != len(data):
            raise MalformedModelError("trailing bytes after linear model")
        weights = tuple(tuple(params[y * dim : (y + 1) * dim]) for y in range(labels))
        return LinearModel(dim, labels, weights, tuple(params[labels * dim :]))
    if arch == ARCH_LOOKUP:
        remaining = len(data) - offset
        if remaining < 4 or remaining % 4:
            raise MalformedModelError("lookup table block must be whole 32-bit entries")
        params, _ = _read_params(data, offset, remaining // 4)
        table = tuple(v >> fx.FRACTION_BITS for v in params)
        if any((v >> fx.FRACTION_BITS) << fx.FRACTION_BITS != v for v in params):
            raise MalformedModelError("lookup entries must encode whole labels")
        return LookupModel(dim, labels, table)
    if arch == ARCH_BIASED:
        inner_arch, inner_dim, inner_labels, inner_off = _parse_header(data, offset)
        if inner_arch != ARCH_LINEAR:
            raise MalformedModelError("wrapper requires a linear inner model")
        if (inner_dim, inner_labels) != (dim, labels):
            raise MalformedModelError("wrapper header must mirror the inner model")
        params, offset = _read_params(data, inner_off, inner_labels * (inner_dim + 1))
        weights = tuple(
            tuple(params[y * inner_dim : (y + 1) * inner_dim]) for y in range(inner_labels)
        )
        inner = LinearModel(inner_dim, inner_labels, weights, tuple(params[inner_labels * inner_dim :]))
        tail = len(data) - offset
        if tail < 12 or (tail - 8) % 4:
            raise MalformedModelError("wrapper tail must be flip rates plus an 8-byte seed")
        num_rates = (tail - 8) // 4
        rates = []
        for _ in range(num_rates):
            (units,) = struct.unpack_from("<I", data, offset)
            offset += 4
            if units >= 10**6:
                raise MalformedModelError("flip rate must be below 1")
            rates.append(micro_fraction(units))
        return BiasedModel(inner, tuple(rates), data[offset:])
    raise MalformedModelError(f"unknown architecture id {arch}")


def parameter_count(model: ModelSpec) -> int:
    """Number of 32-bit fixed-point parameters, for gate-cost estimates."""
    if isinstance(model, LinearModel):
        return model.num_labels * (model.dimension + 1)
    if isinstance(model, LookupModel):
        return len(model.table)
    if isinstance(model, BiasedModel):
        return parameter_count(model.inner) + len(model.flip_rates)
    raise TypeError(f"unknown model type {type(model)!r}")


@dataclass(frozen=True)
class TrueGapReport:
    """Analytic fairness gaps of a planted distribution, exact rationals."""

    ore: Fraction
    eo: Fraction
    dp: Fraction


@dataclass(frozen=True)
class PlantedConfig:
    """Mixture the planted generator draws from.

    cell_weights[g][y] is the exact probability of cell (g, y); they must sum
    to 1 and every group must carry positive mass. error_rates[g] is the
    wrapper's flip rate for group g, which is also the group's true risk
    since the inner model is exact on planted features.
    """

    cell_weights: tuple[tuple[Fraction, ...], ...]
    error_rates: tuple[Fraction, ...]
    seed: bytes
    noise_dims: int = 2

    def __post_init__(self) -> None:
        if not self.cell_weights or not self.cell_weights[0]:
            raise InvalidWeightsError("cell_weights must be a nonempty grid")
        cols = len(self.cell_weights[0])
        if any(len(row) != cols for row in self.cell_weights):
            raise InvalidWeightsError("cell_weights rows must have equal length")
        if any(w < 0 for row in self.cell_weights for w in row):
            raise InvalidWeightsError("weights must be nonnegative")
        if sum(w for row in self.cell_weights for w in row) != 1:
            raise InvalidWeightsError("weights must sum exactly to 1")
        if any(sum(row) == 0 for row in self.cell_weights):
            raise InvalidWeightsError("every group needs positive mass")
        if len(self.error_rates) != len(self.cell_weights):
            raise InvalidWeightsError("one error rate per group required")
        for r in self.error_rates:
            if not (0 <= r < 1):
                raise InvalidWeightsError("error rates must lie in [0, 1)")
            to_micro(r)
        if len(self.seed) != 8:
            raise ValueError("seed must be 8 bytes")
        if self.noise_dims < 0:
            raise ValueError("noise_dims must be nonnegative")

    @property
    def num_groups(self) -> int:
        return len(self.cell_weights)

    @property
    def num_labels(self) -> int:
        return len(self.cell_weights[0])

    @property
    def dimension(self) -> int:
        return self.num_labels + self.noise_dims

    def to_json(self) -> str:
        return json.dumps(
            {
                "cell_weights": [[str(w) for w in row] for row in self.cell_weights],
                "error_rates": [str(r) for r in self.error_rates],
                "seed": self.seed.hex(),
                "noise_dims": self.noise_dims,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PlantedConfig":
        raw = json.loads(text)
        return cls(
            cell_weights=tuple(
                tuple(Fraction(w) for w in row) for row in raw["cell_weights"]
            ),
            error_rates=tuple(Fraction(r) for r in raw["error_rates"]),
            seed=bytes.fromhex(raw["seed"]),
            noise_dims=int(raw.get("noise_dims", 2)),
        )


def planted_model(config: PlantedConfig) -> BiasedModel:
    """Wrapper over an exact one-hot linear decoder of the planted features."""
    dim, labels = config.dimension, config.num_labels
    weights = tuple(
        tuple(fx.ONE if j == y else 0 for j in range(dim)) for y in range(labels)
    )
    inner = LinearModel(dim, labels, weights, biases=(0,) * labels)
    return BiasedModel(
        inner=inner,
        flip_rates=config.error_rates,
        seed=derive_key(config.seed, "flip"),
    )


def true_gaps(config: PlantedConfig) -> TrueGapReport:
    rates = config.error_rates
    groups, labels = config.num_groups, config.num_labels
    spread = Fraction(0)
    if groups >= 2:
        spread = max(rates) - min(rates)
    eo = spread if labels >= 2 else Fraction(0)
    dp = Fraction(0)
    if groups >= 2:
        cond = [
            [w / sum(row) for w in row] for row in config.cell_weights
        ]
        for y in range(labels):
            likes = [
                (1 - rates[g]) * cond[g][y] + rates[g] * cond[g][(y - 1) % labels]
                if labels >= 2
                else Fraction(1)
                for g in range(groups)
            ]
            span = max(likes) - min(likes)
            if span > dp:
                dp = span
    return TrueGapReport(ore=spread, eo=eo, dp=dp)


def _planted_features(
    config: PlantedConfig, label: int, stream: CounterPrg
) -> tuple[int, ...]:
    # One-hot +/-1 block decodes the label; trailing coordinates are
    # uniform noise in [-1, 1) at exact Q16.16 resolution.
    head = [fx.ONE if j == label else -fx.ONE for j in range(config.num_labels)]
    tail = [stream.int_below(2 * fx.ONE) - fx.ONE for _ in range(config.noise_dims)]
    return tuple(head + tail)


def _cumulative_cells(config: PlantedConfig) -> list[tuple[Fraction, int]]:
    acc = Fraction(0)
    out = []
    idx = 0
    for row in config.cell_weights:
        for w in row:
            acc += w
            out.append((acc, idx))
            idx += 1
    return out


def generate_planted(
    config: PlantedConfig,
    m: int,
    *,
    group_counts: tuple[int, ...] | None = None,
) -> tuple[Dataset, BiasedModel, TrueGapReport]:
    """Draw a labelled test set and the matching planted model.

    By default m samples come i.i.d. from the cell mixture. group_counts
    instead fixes the per-group sizes exactly (labels still drawn from the
    group's conditional weights), which is how test sets of exactly the
    required size are produced.
    """
    stream = CounterPrg(derive_key(config.seed, "data"))
    labels = config.num_labels
    samples = []
    if group_counts is None:
        if m < 0:
            raise ValueError("m must be nonnegative")
        cumulative = _cumulative_cells(config)
        for _ in range(m):
            cell = stream.choose_weighted(cumulative)
            g, y = divmod(cell, labels)
            samples.append(Sample(_planted_features(config, y, stream), g, y))
    else:
        if len(group_counts) != config.num_groups:
            raise ValueError("one count per group required")
        for g, count in enumerate(group_counts):
            row = config.cell_weights[g]
            total = sum(row)
            acc = Fraction(0)
            cumulative = []
            for y, w in enumerate(row):
                acc += w / total
                cumulative.append((acc, y))
            for _ in range(count):
                y = stream.choose_weighted(cumulative)
                samples.append(Sample(_planted_features(config, y, stream), g, y))
    dataset = Dataset(config.dimension, config.num_groups, labels, tuple(samples))
    return dataset, planted_model(config), true_gaps(config)
