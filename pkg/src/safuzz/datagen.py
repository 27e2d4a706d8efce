"""Labeled-dataset generation by unit-testing unstable kernels.

Base inputs are sampled across configured regions of the input space, then
mutated step-wise (exponential, random, or sinusoidal step schedules, in both
directions) until the oracle outcome flips. Each flip turns the trajectory
into labeled samples: passing points are labeled with the direction that led
to failure, failing points with "no change". Classes are balanced by
down-sampling before a dataset ships.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from safuzz.errors import (
    FileFormatError,
    GenerationFailure,
    UsageError,
)
from safuzz.kernels import unit_operands
from safuzz.oracles import OracleVerdict, run_oracles
from safuzz.registry import Registry, default_registry
from safuzz.tensor import Tensor

FEATURE_LENGTHS = (9, 196, 784)

# kernels undefined at exactly zero; zero features get an epsilon shift
ZERO_UNDEFINED = ("log", "rSqrt", "reciprocal")


class Signal(enum.IntEnum):
    """Soft-assertion output classes. Enum order is the vote tie-break order."""

    NO_CHANGE = 0
    DECREASE = 1
    INCREASE = 2

    @property
    def label(self) -> str:
        return {0: "NoChange", 1: "Decrease", 2: "Increase"}[int(self)]

    @staticmethod
    def from_label(label: str) -> "Signal":
        try:
            return {"NoChange": Signal.NO_CHANGE,
                    "Decrease": Signal.DECREASE,
                    "Increase": Signal.INCREASE}[label]
        except KeyError:
            raise UsageError(f"unknown signal label {label!r}") from None


@dataclass(frozen=True)
class MutationConfig:
    method: str  # exponential | random | sinusoidal
    rate: float = 1.0
    max_steps: int = 100
    direction: str = "up"  # up | down
    scale: Optional[float] = None  # sinusoidal step amplitude

    def __post_init__(self):
        if self.method not in ("exponential", "random", "sinusoidal"):
            raise UsageError(f"unknown mutation method {self.method!r}")
        if self.direction not in ("up", "down"):
            raise UsageError(f"unknown direction {self.direction!r}")
        if self.rate <= 0 or self.max_steps < 1:
            raise UsageError("rate must be positive and max_steps >= 1")


@dataclass(frozen=True)
class GenerationConfig:
    n_base: int = 100
    regions: Optional[tuple[tuple[float, float], ...]] = None  # None: registry hints
    shape: tuple[int, ...] = (3, 3)
    mutations_per_base: int = 100
    seed: int = 0
    pixel_bounds: Optional[tuple[float, float]] = None
    target_size: int = 40_000

    def __post_init__(self):
        if self.n_base < 1:
            raise UsageError("n_base must be >= 1")
        if self.regions is not None and len(self.regions) == 0:
            raise UsageError("regions must be non-empty")


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: Signal


@dataclass
class Dataset:
    kernel: str
    shape: tuple[int, ...]
    features: np.ndarray  # (n, feature_len) float64
    labels: np.ndarray  # (n,) int8 Signal values
    config: dict = field(default_factory=dict)
    scaling: dict = field(default_factory=lambda: {"scale": 1.0, "offset": 0.0,
                                                   "zero_epsilon": None})

    @property
    def feature_len(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=3)
        return {s.label: int(counts[s]) for s in Signal if counts[s] > 0}

    def samples(self) -> Iterator[LabeledSample]:
        for row, lab in zip(self.features, self.labels):
            yield LabeledSample(features=row, label=Signal(int(lab)))


# ---------------------------------------------------------------------------
# base inputs and mutation steps
# ---------------------------------------------------------------------------

def generate_base_inputs(config: GenerationConfig, rng: np.random.Generator,
                         regions: Optional[Sequence[tuple[float, float]]] = None,
                         ) -> list[Tensor]:
    regions = tuple(regions if regions is not None else (config.regions or ((-100.0, 100.0),)))
    out = []
    for i in range(config.n_base):
        lo, hi = regions[i % len(regions)]
        values = rng.uniform(lo, hi, size=config.shape)
        if config.pixel_bounds is not None:
            values = np.clip(values, *config.pixel_bounds)
        out.append(Tensor(values))
    return out


def mutate_step(x: Tensor, step_index: int, mconfig: MutationConfig,
                rng: np.random.Generator,
                pixel_bounds: Optional[tuple[float, float]] = None) -> Tensor:
    if step_index < 1:
        raise UsageError("step_index starts at 1")
    if mconfig.method == "exponential":
        step = math.exp(mconfig.rate * step_index)
    elif mconfig.method == "random":
        step = float(rng.uniform(0.0, 1.0)) * mconfig.rate
    else:
        step = abs(math.sin(mconfig.rate * step_index)) * (
            mconfig.scale if mconfig.scale is not None else 1.0
        )
    sign = 1.0 if mconfig.direction == "up" else -1.0
    values = x.data.astype(np.float64) + sign * step
    if pixel_bounds is not None:
        values = np.clip(values, *pixel_bounds)
    return Tensor(values)


# ---------------------------------------------------------------------------
# trajectories and labels
# ---------------------------------------------------------------------------

def run_trajectory(kernel: str, base: Tensor, mconfig: MutationConfig,
                   rng: np.random.Generator,
                   registry: Optional[Registry] = None,
                   pixel_bounds: Optional[tuple[float, float]] = None,
                   ) -> list[tuple[Tensor, OracleVerdict]]:
    """Mutate until the oracle outcome flips or the step budget runs out."""
    reg = registry or default_registry()

    def judge(x: Tensor) -> OracleVerdict:
        return run_oracles(kernel, unit_operands(kernel, x), reg)

    points = [(base, judge(base))]
    base_passed = points[0][1].passed
    x = base
    for k in range(1, mconfig.max_steps + 1):
        x = mutate_step(x, k, mconfig, rng, pixel_bounds)
        verdict = judge(x)
        points.append((x, verdict))
        if verdict.passed != base_passed:
            break
    return points


def _infer_direction(trajectory: Sequence[tuple[Tensor, OracleVerdict]]) -> Optional[str]:
    first = trajectory[0][0].elements.astype(np.float64)
    for x, _ in trajectory[1:]:
        delta = float(np.sum(x.elements.astype(np.float64) - first))
        if delta > 0:
            return "up"
        if delta < 0:
            return "down"
    return None


def derive_labels(trajectory: Sequence[tuple[Tensor, OracleVerdict]]
                  ) -> list[LabeledSample]:
    """Turn a flipped trajectory into labeled samples.

    Passing points are labeled with the mutation direction that triggered the
    failure; failing points are labeled no-change. When the mutation moved
    fail -> success, the successful endpoint gets the reverse direction.
    An unflipped trajectory produces no samples (the caller retries).
    """
    if len(trajectory) < 2:
        raise UsageError("a trajectory needs at least two points")
    base_passed = trajectory[0][1].passed
    flip = None
    for i, (_, verdict) in enumerate(trajectory):
        if verdict.passed != base_passed:
            flip = i
            break
    if flip is None:
        return []
    direction = _infer_direction(trajectory[: flip + 1])
    if direction is None:
        return []
    toward = Signal.INCREASE if direction == "up" else Signal.DECREASE
    reverse = Signal.DECREASE if direction == "up" else Signal.INCREASE
    samples = []
    for i, (x, verdict) in enumerate(trajectory[: flip + 1]):
        feats = x.elements.astype(np.float64).copy()
        if not verdict.passed:
            samples.append(LabeledSample(feats, Signal.NO_CHANGE))
        elif base_passed:
            samples.append(LabeledSample(feats, toward))
        else:
            # i == flip: the input that escaped the failure region
            samples.append(LabeledSample(feats, reverse))
    return samples


# ---------------------------------------------------------------------------
# featurization and preprocessing
# ---------------------------------------------------------------------------

def featurize(x: Tensor, feature_len: int) -> np.ndarray:
    """Flatten when sizes match, otherwise emit equally spaced quantiles."""
    if feature_len not in FEATURE_LENGTHS:
        raise UsageError(f"feature_len must be one of {FEATURE_LENGTHS}")
    values = x.elements.astype(np.float64)
    if values.size == 0:
        raise UsageError("cannot featurize an empty tensor")
    if values.size == feature_len:
        return values.copy()
    with np.errstate(all="ignore"):  # quantile interpolation with inf values
        return np.quantile(values, np.linspace(0.0, 1.0, feature_len))


def apply_scaling(features: np.ndarray, scaling: dict) -> np.ndarray:
    """Replay a dataset's recorded preprocessing on a feature vector/matrix."""
    out = features * float(scaling.get("scale", 1.0)) + float(scaling.get("offset", 0.0))
    zero_eps = scaling.get("zero_epsilon")
    if zero_eps:
        out = np.where(out == 0.0, float(zero_eps), out)
    return out


def preprocess_scale(dataset: Dataset, epsilon: Optional[float] = None,
                     scale: float = 1.0, offset: float = 0.0) -> Dataset:
    """Apply the per-kernel affine scale and epsilon shift of exact zeros.

    The parameters are recorded in the dataset metadata so fuzz-time
    featurization can replay them bit-identically.
    """
    zero_eps = epsilon if dataset.kernel in ZERO_UNDEFINED else None
    scaling = {"scale": float(scale), "offset": float(offset), "zero_epsilon": zero_eps}
    features = apply_scaling(dataset.features, scaling)
    return Dataset(kernel=dataset.kernel, shape=dataset.shape, features=features,
                   labels=dataset.labels.copy(), config=dict(dataset.config),
                   scaling=scaling)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def default_mutation_configs(max_steps: int, base_rates: Sequence[float] = (1.0, 2.5),
                             ) -> list[MutationConfig]:
    configs = []
    for method in ("exponential", "random", "sinusoidal"):
        for direction in ("up", "down"):
            for rate in base_rates:
                configs.append(MutationConfig(method=method, rate=rate,
                                              max_steps=max_steps, direction=direction))
    return configs


def _balance(features: np.ndarray, labels: np.ndarray, target: int,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Down-sample over-represented classes to at most 1.5x the minority."""
    present = np.unique(labels)
    counts = {int(c): int((labels == c).sum()) for c in present}
    minority = min(counts.values())
    cap = max(1, int(minority * 1.5))
    takes = {c: min(n, cap) for c, n in counts.items()}
    total = sum(takes.values())
    if total > target:
        shrink = target / total
        takes = {c: max(1, int(n * shrink)) for c, n in takes.items()}
    keep_idx = []
    for c, n in takes.items():
        idx = np.flatnonzero(labels == c)
        keep_idx.append(rng.choice(idx, size=n, replace=False))
    keep = np.concatenate(keep_idx)
    keep = rng.permutation(keep)
    return features[keep], labels[keep]


def _balanced_total(counts: dict[int, int]) -> int:
    if not counts:
        return 0
    minority = min(counts.values())
    cap = int(minority * 1.5)
    return sum(min(n, cap) for n in counts.values())


def build_dataset(kernel: str, gconfig: GenerationConfig,
                  mconfigs: Optional[Sequence[MutationConfig]] = None,
                  rng: Optional[np.random.Generator] = None,
                  registry: Optional[Registry] = None,
                  max_waves: int = 300) -> Dataset:
    """Generate, label, preprocess and balance a dataset for one kernel."""
    reg = registry or default_registry()
    spec = reg.get(kernel)
    if not spec.implemented:
        raise GenerationFailure(kernel, "kernel is not implemented")
    rng = rng if rng is not None else np.random.default_rng(gconfig.seed)
    regions = gconfig.regions
    if regions is None and spec.generation is not None:
        regions = spec.generation.regions
    if regions is None:
        regions = ((-100.0, 100.0),)
    base_configs = mconfigs
    if base_configs is None:
        base_configs = default_mutation_configs(gconfig.mutations_per_base)

    feats_acc: list[np.ndarray] = []
    labels_acc: list[int] = []
    counts: dict[int, int] = {}
    flips_seen = 0

    def run_base(base: Tensor):
        nonlocal flips_seen
        for mc in base_configs:
            if mc.method == "sinusoidal" and mc.scale is None:
                amp = float(np.max(np.abs(base.elements))) or 1.0
                mc = MutationConfig(mc.method, mc.rate, mc.max_steps, mc.direction, amp)
            trajectory = run_trajectory(kernel, base, mc, rng, reg, gconfig.pixel_bounds)
            samples = derive_labels(trajectory) if len(trajectory) >= 2 else []
            if samples:
                flips_seen += 1
            for s in samples:
                feats_acc.append(s.features)
                labels_acc.append(int(s.label))
                counts[int(s.label)] = counts.get(int(s.label), 0) + 1

    seeds_injected = False
    for wave in range(max_waves):
        if not seeds_injected and spec.generation is not None:
            for seed_value in spec.generation.failure_seeds:
                run_base(Tensor(np.full(gconfig.shape, seed_value, dtype=np.float64)))
            seeds_injected = True
        for base in generate_base_inputs(gconfig, rng, regions):
            run_base(base)
        if wave >= 2 and flips_seen == 0:
            raise GenerationFailure(
                kernel, "oracle outcome never flipped on the configured regions"
            )
        if _balanced_total(counts) >= gconfig.target_size:
            break
        if len(labels_acc) > 12 * gconfig.target_size:
            break

    if not labels_acc:
        raise GenerationFailure(kernel, "no labeled samples produced")
    features = np.asarray(feats_acc, dtype=np.float64)
    labels = np.asarray(labels_acc, dtype=np.int8)

    dataset = Dataset(
        kernel=kernel,
        shape=tuple(gconfig.shape),
        features=features,
        labels=labels,
        config={
            "n_base": gconfig.n_base,
            "regions": [list(r) for r in regions],
            "shape": list(gconfig.shape),
            "mutations_per_base": gconfig.mutations_per_base,
            "seed": gconfig.seed,
            "pixel_bounds": list(gconfig.pixel_bounds) if gconfig.pixel_bounds else None,
            "target_size": gconfig.target_size,
        },
    )
    zero_eps = spec.generation.zero_epsilon if spec.generation else None
    dataset = preprocess_scale(dataset, epsilon=zero_eps)
    balanced_feats, balanced_labels = _balance(dataset.features, dataset.labels,
                                               gconfig.target_size, rng)
    dataset.features, dataset.labels = balanced_feats, balanced_labels

    final_counts = dataset.class_counts()
    if min(final_counts.values()) < 100:
        raise GenerationFailure(
            kernel,
            f"class counts {final_counts} below the 100-sample floor after "
            f"exhausting the generation budget",
        )
    return dataset


# ---------------------------------------------------------------------------
# persistence: JSON header line + one CSV record per sample
# ---------------------------------------------------------------------------

DATASET_FORMAT_VERSION = 1


def dataset_save(dataset: Dataset, path) -> None:
    path = Path(path)
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "kernel": dataset.kernel,
        "shape": list(dataset.shape),
        "feature_len": dataset.feature_len,
        "n_samples": len(dataset),
        "config": dataset.config,
        "scaling": dataset.scaling,
        "class_counts": dataset.class_counts(),
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row, lab in zip(dataset.features, dataset.labels):
            fh.write(Signal(int(lab)).label + "," +
                     ",".join(repr(float(v)) for v in row) + "\n")


def dataset_load(path) -> Dataset:
    path = Path(path)
    try:
        with path.open() as fh:
            header_line = fh.readline()
            header = json.loads(header_line)
            if header.get("format_version") != DATASET_FORMAT_VERSION:
                raise FileFormatError(
                    f"dataset format_version {header.get('format_version')!r} "
                    f"unsupported (expected {DATASET_FORMAT_VERSION})"
                )
            n = int(header["n_samples"])
            d = int(header["feature_len"])
            features = np.empty((n, d), dtype=np.float64)
            labels = np.empty(n, dtype=np.int8)
            for i in range(n):
                line = fh.readline()
                if not line:
                    raise FileFormatError(f"dataset truncated at record {i} of {n}")
                parts = line.rstrip("\n").split(",")
                if len(parts) != d + 1:
                    raise FileFormatError(f"record {i} has {len(parts) - 1} features, expected {d}")
                labels[i] = int(Signal.from_label(parts[0]))
                features[i] = [float(v) for v in parts[1:]]
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise FileFormatError(f"cannot load dataset {path}: {exc}") from exc
    return Dataset(
        kernel=header["kernel"],
        shape=tuple(header["shape"]),
        features=features,
        labels=labels,
        config=header.get("config", {}),
        scaling=header.get("scaling", {"scale": 1.0, "offset": 0.0, "zero_epsilon": None}),
    )
