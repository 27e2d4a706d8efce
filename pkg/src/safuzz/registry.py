"""The unstable-function database.

The shipped registry carries 61 entries. The 25 "core" entries and 3
"extended" entries (inverse, determinant, remainder) are executable: they
have a forward, a gradient, and at least one bound oracle. The remaining
"metadata" entries record name, category and oracle tags only, so scanning
can still flag them with a no-assertion-available diagnostic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from safuzz.errors import CapabilityError, RegistryError
from safuzz.kernels import (
    KERNEL_OPS,
    apply_forward,
    default_params,
    op_def,
)
from safuzz.tensor import Precision, Tensor

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_REGISTRY_PATH = DATA_DIR / "registry.json"

ORACLE_TYPES = {1, 2, 3, 4, 5, 6}


@dataclass(frozen=True)
class OracleBinding:
    type: int
    lo: Optional[float] = None
    hi: Optional[float] = None
    tolerance: float = 1e-6


@dataclass(frozen=True)
class SafeCondition:
    lo: Optional[float]
    hi: Optional[float]

    def holds(self, values: np.ndarray) -> bool:
        ok = np.ones(values.shape, dtype=bool)
        if self.lo is not None:
            ok &= values >= self.lo
        if self.hi is not None:
            ok &= values <= self.hi
        return bool(ok.all())


@dataclass(frozen=True)
class GenerationHints:
    regions: tuple[tuple[float, float], ...]
    failure_seeds: tuple[float, ...] = ()
    zero_epsilon: Optional[float] = None


@dataclass(frozen=True)
class KernelSpec:
    name: str
    category: str
    tier: str  # core | extended | metadata
    implemented: bool
    arity: int
    safe_condition: Optional[SafeCondition]
    oracle_bindings: tuple[OracleBinding, ...]
    params: dict = field(default_factory=dict)
    generation: Optional[GenerationHints] = None
    primary_operand: int = 0


@dataclass(frozen=True)
class Registry:
    entries: dict[str, KernelSpec]
    version: str

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def get(self, name: str) -> KernelSpec:
        if name not in self.entries:
            raise CapabilityError(f"kernel '{name}' is not in the registry")
        return self.entries[name]

    def implemented_names(self) -> list[str]:
        return [n for n, e in self.entries.items() if e.implemented]

    def core_names(self) -> list[str]:
        return [n for n, e in self.entries.items() if e.tier == "core"]

    def names(self) -> list[str]:
        return list(self.entries.keys())


def _parse_binding(raw: dict, name: str) -> OracleBinding:
    otype = raw.get("type")
    if otype not in ORACLE_TYPES:
        raise RegistryError(f"entry '{name}': unknown oracle type tag {otype!r}")
    lo, hi = raw.get("lo"), raw.get("hi")
    if otype == 2:
        if lo is None or hi is None or not lo < hi:
            raise RegistryError(f"entry '{name}': range oracle needs lo < hi")
    tol = float(raw.get("tolerance", 1e-6))
    if tol <= 0:
        raise RegistryError(f"entry '{name}': tolerance must be positive")
    return OracleBinding(type=int(otype), lo=lo, hi=hi, tolerance=tol)


def _parse_entry(raw: dict) -> KernelSpec:
    name = raw.get("name")
    if not name or not isinstance(name, str):
        raise RegistryError(f"entry with missing name: {raw!r}")
    try:
        implemented = bool(raw["implemented"])
        category = raw["category"]
        tier = raw.get("tier", "core" if implemented else "metadata")
        bindings = tuple(_parse_binding(b, name) for b in raw["oracle_bindings"])
        cond = raw.get("safe_condition")
        safe = SafeCondition(lo=cond.get("lo"), hi=cond.get("hi")) if cond else None
        gen_raw = raw.get("generation")
        gen = None
        if gen_raw:
            gen = GenerationHints(
                regions=tuple((float(lo), float(hi)) for lo, hi in gen_raw["regions"]),
                failure_seeds=tuple(float(s) for s in gen_raw.get("failure_seeds", [])),
                zero_epsilon=gen_raw.get("zero_epsilon"),
            )
        spec = KernelSpec(
            name=name,
            category=category,
            tier=tier,
            implemented=implemented,
            arity=int(raw.get("arity", 1)),
            safe_condition=safe,
            oracle_bindings=bindings,
            params=dict(raw.get("params", {})),
            generation=gen,
            primary_operand=int(raw.get("primary_operand", 0)),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise RegistryError(f"entry '{name}': malformed field ({exc})") from exc
    if spec.implemented:
        if spec.name not in KERNEL_OPS:
            raise RegistryError(
                f"entry '{name}': marked implemented but has no executable kernel"
            )
        if not spec.oracle_bindings:
            raise RegistryError(f"entry '{name}': implemented kernel without oracle")
        if KERNEL_OPS[spec.name].vjp is None:
            raise RegistryError(f"entry '{name}': implemented kernel without gradient")
    return spec


def registry_load(path) -> Registry:
    """Load and validate a registry file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RegistryError(f"cannot read registry file {path}: {exc}") from exc
    if raw.get("format_version") != 1:
        raise RegistryError(f"unsupported registry format_version {raw.get('format_version')!r}")
    entries: dict[str, KernelSpec] = {}
    for raw_entry in raw.get("entries", []):
        spec = _parse_entry(raw_entry)
        if spec.name in entries:
            raise RegistryError(f"entry '{spec.name}': duplicate name")
        entries[spec.name] = spec
    return Registry(entries=entries, version=str(raw.get("version", "")))


@lru_cache(maxsize=1)
def default_registry() -> Registry:
    reg = registry_load(DEFAULT_REGISTRY_PATH)
    if len(reg.entries) != 61:
        raise RegistryError(f"shipped registry must have 61 entries, found {len(reg.entries)}")
    if len(reg.core_names()) != 25:
        raise RegistryError("shipped registry must mark exactly 25 core kernels")
    return reg


def resolved_params(spec: KernelSpec, shape: tuple[int, ...]) -> dict:
    """Static registry params merged over shape-dependent deterministic defaults."""
    return {**default_params(spec.name, tuple(shape)), **spec.params}


def kernel_eval(
    name: str,
    inputs: Sequence[Tensor],
    precision: Precision = Precision.SINGLE,
    registry: Optional[Registry] = None,
    params: Optional[dict] = None,
) -> Tensor:
    """Dispatch a single kernel over explicit operand tensors."""
    reg = registry or default_registry()
    spec = reg.get(name)
    if not spec.implemented:
        raise CapabilityError(f"kernel '{name}' is registered but not implemented")
    op = op_def(name)
    if len(inputs) != op.arity:
        raise CapabilityError(
            f"kernel '{name}' takes {op.arity} operand(s), got {len(inputs)}"
        )
    if params is None:
        params = resolved_params(spec, inputs[op.primary].shape)
    dtype = precision.dtype
    args = [t.data.astype(dtype) for t in inputs]
    try:
        out = apply_forward(op, params, args, dtype)
    except (ValueError, IndexError) as exc:
        raise CapabilityError(f"kernel '{name}': {exc}") from exc
    return Tensor(out)


def safe_condition_check(name: str, tensor: Tensor, registry: Optional[Registry] = None) -> bool:
    """True iff every element satisfies the kernel's recorded safe condition."""
    reg = registry or default_registry()
    spec = reg.get(name)
    if spec.safe_condition is None:
        raise CapabilityError(f"kernel '{name}' has no recorded safe condition")
    return spec.safe_condition.holds(tensor.data.astype(np.float64))
