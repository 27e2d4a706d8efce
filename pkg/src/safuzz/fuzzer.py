"""Soft-assertion guided search for failure-inducing inputs.

For each unstable site found in a program graph, the loop executes the
program to the site entry, asks the site's soft assertion how to transform
the entry values, and either validates a predicted failure with the oracles
or back-propagates the increase/decrease signal through the tape to mutate
the program inputs. Interval bounds accumulated from issued signals narrow
the search (history constraints); contradictory bounds reset element-wise.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from safuzz.autodiff import backward, forward_eval
from safuzz.datagen import Signal, apply_scaling, featurize
from safuzz.errors import EvaluationError, UsageError
from safuzz.forest import Forest, predict
from safuzz.graph import Graph, InputDecl
from safuzz.oracles import OracleVerdict, run_oracles
from safuzz.registry import Registry, default_registry
from safuzz.tensor import Precision, Tensor

log = logging.getLogger(__name__)

HISTORY_LIMIT = 32
DEFAULT_INPUT_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class UnstableSite:
    node_id: str
    kernel: str
    entry_node: str  # producer of the operand the assertion inspects
    entry_shape: Optional[tuple[int, ...]]


@dataclass
class ScanResult:
    sites: list[UnstableSite]
    diagnostics: list[str]


@dataclass
class Bounds:
    """Per-element interval constraints accumulated from issued signals."""

    lower: np.ndarray
    upper: np.ndarray

    @staticmethod
    def unconstrained(shape: tuple[int, ...]) -> "Bounds":
        return Bounds(lower=np.full(shape, -np.inf), upper=np.full(shape, np.inf))


@dataclass
class HistoryEntry:
    snapshot: dict[str, np.ndarray]
    signal: Signal
    outcome: Optional[bool] = None  # oracle pass/fail when validated


@dataclass(frozen=True)
class FuzzConfig:
    timeout: float = 1800.0
    rate: float = 1.0
    seed: int = 0
    grad_floor: float = 1e-6
    max_resets: int = 50
    max_iters: int = 5000  # deterministic budget; wall timeout stays the backstop
    use_history: bool = True
    featurize_raw: bool = False

    def __post_init__(self):
        if self.timeout <= 0 or self.grad_floor <= 0:
            raise UsageError("timeout and grad_floor must be positive")


@dataclass
class FuzzResult:
    site: UnstableSite
    status: str  # Found | Exhausted
    failing_input: Optional[dict[str, list]] = None
    verdict: Optional[OracleVerdict] = None
    iterations: int = 0
    wall_time: float = 0.0
    sa_queries: int = 0
    resets: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.status == "Found"


# ---------------------------------------------------------------------------
# scanning
# ---------------------------------------------------------------------------

def scan_for_unstable(graph: Graph, registry: Optional[Registry] = None) -> ScanResult:
    """Every node whose op matches a registry entry, in topological order.

    Registry matches without an executable implementation are reported as
    diagnostics: they cannot be fuzzed because no soft assertion exists.
    """
    reg = registry or default_registry()
    sites: list[UnstableSite] = []
    diagnostics: list[str] = []
    for node in graph.nodes:
        if node.op not in reg:
            continue
        spec = reg.get(node.op)
        if not spec.implemented:
            diagnostics.append(
                f"node '{node.id}': unstable function '{node.op}' is in the database "
                "but has no soft assertion available"
            )
            continue
        primary = min(spec.primary_operand, len(node.inputs) - 1)
        entry = node.inputs[primary]
        sites.append(
            UnstableSite(
                node_id=node.id,
                kernel=node.op,
                entry_node=entry,
                entry_shape=graph.shape_of(entry),
            )
        )
    return ScanResult(sites=sites, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# signal propagation and history-constrained updates
# ---------------------------------------------------------------------------

def propagate_signal(
    graph: Graph,
    site: UnstableSite,
    tape,
    signal: Signal,
    rate: float,
    grad_floor: float = 1e-6,
) -> dict[str, np.ndarray]:
    """Input adjustment per element: (signal sign * rate) / clamped gradient.

    The gradient is of the sum of the site-entry elements with respect to
    each program input; clamping keeps |g| >= grad_floor with sign(0) := +1.
    """
    if signal is Signal.NO_CHANGE:
        raise UsageError("no-change signals do not propagate")
    entry_value = tape.values[site.entry_node]
    seed = Tensor(np.ones(entry_value.shape, dtype=np.float64))
    grads = backward(graph, tape, site.entry_node, seed)
    s = 1.0 if signal is Signal.INCREASE else -1.0
    deltas: dict[str, np.ndarray] = {}
    for decl, grad in zip(graph.inputs, grads):
        g = grad.data
        clamped = np.where(g < 0, -1.0, 1.0) * np.maximum(np.abs(g), grad_floor)
        deltas[decl.id] = (s * rate) / clamped
    return deltas


def constrain_update(
    x: np.ndarray,
    delta: np.ndarray,
    bounds: Bounds,
    signal: Signal,
) -> np.ndarray:
    """Apply the mutation under interval constraints from the history.

    The issued signal first tightens the bounds at the current value; the
    candidate x + delta is replaced by the interval midpoint where both
    bounds are finite and clamped strictly inside one-sided bounds; elements
    whose bounds contradict are reset to (-inf, +inf).
    """
    if signal is Signal.INCREASE:
        bounds.lower = np.maximum(bounds.lower, x)
    elif signal is Signal.DECREASE:
        bounds.upper = np.minimum(bounds.upper, x)
    violated = bounds.lower > bounds.upper
    if violated.any():
        bounds.lower[violated] = -np.inf
        bounds.upper[violated] = np.inf
    with np.errstate(invalid="ignore"):
        candidate = x + delta
        lo_fin = np.isfinite(bounds.lower)
        hi_fin = np.isfinite(bounds.upper)
        both = lo_fin & hi_fin
        candidate = np.where(both, 0.5 * (bounds.lower + bounds.upper), candidate)
        lo_only = lo_fin & ~hi_fin
        margin_lo = 1e-9 * np.maximum(1.0, np.abs(bounds.lower))
        candidate = np.where(
            lo_only & (candidate <= bounds.lower), bounds.lower + margin_lo, candidate
        )
        hi_only = hi_fin & ~lo_fin
        margin_hi = 1e-9 * np.maximum(1.0, np.abs(bounds.upper))
        candidate = np.where(
            hi_only & (candidate >= bounds.upper), bounds.upper - margin_hi, candidate
        )
    return candidate


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_failure(
    graph: Graph,
    site: UnstableSite,
    inputs: Sequence[Tensor],
    registry: Optional[Registry] = None,
) -> OracleVerdict:
    """Execute through the site and judge the kernel with its bound oracles.

    Operands come from the native single-precision execution; a double
    shadow execution supplies the operands the increased-width oracle
    compares against.
    """
    reg = registry or default_registry()
    tape = forward_eval(graph, inputs, Precision.SINGLE, stop_at=site.node_id)
    node = graph.node(site.node_id)
    operands = [tape.value(ref) for ref in node.inputs]
    wide_tape = forward_eval(graph, inputs, Precision.DOUBLE, stop_at=site.node_id)
    wide = [wide_tape.value(ref) for ref in node.inputs]
    return run_oracles(site.kernel, operands, reg, wide_inputs=wide)


# ---------------------------------------------------------------------------
# the per-site search loop
# ---------------------------------------------------------------------------

def _initial_inputs(graph: Graph, rng: np.random.Generator) -> dict[str, np.ndarray]:
    values = {}
    for decl in graph.inputs:
        lo, hi = decl.bounds if decl.bounds is not None else DEFAULT_INPUT_RANGE
        values[decl.id] = rng.uniform(lo, hi, size=decl.shape)
    return values


def _clamp_declared(graph: Graph, values: dict[str, np.ndarray]) -> None:
    for decl in graph.inputs:
        if decl.clamp and decl.bounds is not None:
            np.clip(values[decl.id], decl.bounds[0], decl.bounds[1],
                    out=values[decl.id])


def _tensors(graph: Graph, values: dict[str, np.ndarray]) -> list[Tensor]:
    return [Tensor(values[d.id]) for d in graph.inputs]


def _site_features(tape, site: UnstableSite, forest: Forest, raw: bool) -> np.ndarray:
    entry = Tensor(tape.values[site.entry_node].astype(np.float64))
    feats = featurize(entry, forest.feature_len)
    if not raw:
        feats = apply_scaling(feats, forest.scaling)
    return feats


def fuzz_site(
    graph: Graph,
    site: UnstableSite,
    forest: Forest,
    config: FuzzConfig,
    rng: np.random.Generator,
    registry: Optional[Registry] = None,
) -> FuzzResult:
    """Search for a failure-inducing input at one unstable site."""
    if forest.kernel != site.kernel:
        raise UsageError(
            f"forest is for kernel '{forest.kernel}', site is '{site.kernel}'"
        )
    reg = registry or default_registry()
    result = FuzzResult(site=site, status="Exhausted")
    start = time.perf_counter()

    values = _initial_inputs(graph, rng)
    bounds = {d.id: Bounds.unconstrained(tuple(d.shape)) for d in graph.inputs}
    history: list[HistoryEntry] = []

    while True:
        if result.iterations >= config.max_iters:
            result.diagnostics.append("iteration budget exhausted")
            break
        if time.perf_counter() - start > config.timeout:
            result.diagnostics.append("wall-clock timeout")
            break
        result.iterations += 1
        try:
            tape = forward_eval(graph, _tensors(graph, values), Precision.SINGLE,
                                stop_at=site.entry_node)
        except EvaluationError as exc:
            result.diagnostics.append(f"evaluation failed upstream of the site: {exc}")
            break
        feats = _site_features(tape, site, forest, config.featurize_raw)
        signal = predict(forest, feats)
        result.sa_queries += 1

        if signal is Signal.NO_CHANGE:
            try:
                verdict = validate_failure(graph, site, _tensors(graph, values), reg)
            except EvaluationError as exc:
                result.diagnostics.append(f"validation failed: {exc}")
                break
            if history:
                history[-1].outcome = verdict.passed
            if not verdict.passed:
                result.status = "Found"
                result.verdict = verdict
                result.failing_input = {k: v.tolist() for k, v in values.items()}
                break
            # misprediction: reset with a fresh initial input
            result.resets += 1
            if result.resets > config.max_resets:
                result.diagnostics.append("reset budget exhausted")
                break
            values = _initial_inputs(graph, rng)
            continue

        deltas = propagate_signal(graph, site, tape, signal, config.rate,
                                  config.grad_floor)
        if config.use_history:
            snapshot = {k: v.copy() for k, v in values.items()}
            for decl in graph.inputs:
                values[decl.id] = constrain_update(
                    values[decl.id], deltas[decl.id], bounds[decl.id], signal
                )
            history.append(HistoryEntry(snapshot=snapshot, signal=signal))
            if len(history) > HISTORY_LIMIT:
                history.pop(0)
        else:
            for decl in graph.inputs:
                values[decl.id] = values[decl.id] + deltas[decl.id]
        _clamp_declared(graph, values)

    result.wall_time = time.perf_counter() - start
    return result


def random_fuzz_site(
    graph: Graph,
    site: UnstableSite,
    config: FuzzConfig,
    rng: np.random.Generator,
    registry: Optional[Registry] = None,
) -> FuzzResult:
    """Baseline: identical mutation magnitudes, uniformly random directions,
    no assertion guidance and no history constraints; the oracle is consulted
    every iteration.
    """
    reg = registry or default_registry()
    result = FuzzResult(site=site, status="Exhausted")
    start = time.perf_counter()
    values = _initial_inputs(graph, rng)
    while True:
        if result.iterations >= config.max_iters:
            result.diagnostics.append("iteration budget exhausted")
            break
        if time.perf_counter() - start > config.timeout:
            result.diagnostics.append("wall-clock timeout")
            break
        result.iterations += 1
        try:
            verdict = validate_failure(graph, site, _tensors(graph, values), reg)
        except EvaluationError as exc:
            result.diagnostics.append(f"validation failed: {exc}")
            break
        if not verdict.passed:
            result.status = "Found"
            result.verdict = verdict
            result.failing_input = {k: v.tolist() for k, v in values.items()}
            break
        try:
            tape = forward_eval(graph, _tensors(graph, values), Precision.SINGLE,
                                stop_at=site.entry_node)
        except EvaluationError as exc:
            result.diagnostics.append(f"evaluation failed upstream of the site: {exc}")
            break
        signal = Signal.INCREASE if rng.uniform() < 0.5 else Signal.DECREASE
        deltas = propagate_signal(graph, site, tape, signal, config.rate,
                                  config.grad_floor)
        for decl in graph.inputs:
            values[decl.id] = values[decl.id] + deltas[decl.id]
        _clamp_declared(graph, values)
    result.wall_time = time.perf_counter() - start
    return result


# ---------------------------------------------------------------------------
# whole-program driver
# ---------------------------------------------------------------------------

def select_forest(models: Sequence[Forest], site: UnstableSite) -> Optional[Forest]:
    """Prefer the forest whose shape class matches the site entry; fall back
    to the 9-feature forest, which accepts any entry via quantile features."""
    candidates = [f for f in models if f.kernel == site.kernel]
    if not candidates:
        return None
    if site.entry_shape is not None:
        size = int(np.prod(site.entry_shape)) if site.entry_shape else 1
        for f in candidates:
            if f.feature_len == size:
                return f
    for f in candidates:
        if f.feature_len == 9:
            return f
    return candidates[0]


def fuzz_program(
    graph: Graph,
    registry: Optional[Registry],
    models: Sequence[Forest],
    config: FuzzConfig,
) -> tuple[list[FuzzResult], list[str]]:
    """Fuzz every unstable site sequentially in scan order."""
    reg = registry or default_registry()
    scan = scan_for_unstable(graph, reg)
    diagnostics = list(scan.diagnostics)
    results: list[FuzzResult] = []
    for index, site in enumerate(scan.sites):
        forest = select_forest(models, site)
        if forest is None:
            diagnostics.append(
                f"site '{site.node_id}' ({site.kernel}): no trained model; skipped"
            )
            continue
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
        results.append(fuzz_site(graph, site, forest, config, rng, reg))
    return results, diagnostics
