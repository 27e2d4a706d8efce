"""Failure oracles for unstable kernels.

Six families decide whether a kernel execution failed:

1. NaN/inf detection on the output,
2. out-of-range check against known output bounds,
3. comparison with a rewritten (algebraically equal, numerically stable) form,
4. comparison with a stable algorithm (e.g. Cholesky-based inverse),
5. consistency with an independent reference implementation,
6. re-execution at increased floating-point width.

run_oracles applies a kernel's bound oracles in registry order and returns
the first failure.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from safuzz.errors import CapabilityError, OracleUnavailable
from safuzz.kernels import (
    cholesky_determinant,
    cholesky_inverse,
    cosine_reference,
    gauss_determinant,
    gauss_inverse,
    op_def,
    stable_logsoftmax,
    stable_softplus,
)
from safuzz.registry import Registry, default_registry, resolved_params
from safuzz.tensor import Precision, Tensor

log = logging.getLogger(__name__)


class FailureClass(enum.Enum):
    NAN_OR_INF = "NaNorINF"
    OUT_OF_RANGE = "OutOfRange"
    REWRITE_MISMATCH = "RewriteMismatch"
    STABLE_ALGO_MISMATCH = "StableAlgoMismatch"
    REFERENCE_MISMATCH = "ReferenceMismatch"
    WIDTH_MISMATCH = "WidthMismatch"


@dataclass(frozen=True)
class OracleVerdict:
    passed: bool
    failure_class: Optional[FailureClass] = None
    detail: str = ""

    def __post_init__(self):
        if not self.passed and self.failure_class is None:
            raise ValueError("failing verdict requires a failure class")
        if self.passed and self.failure_class is not None:
            raise ValueError("passing verdict cannot carry a failure class")

    @property
    def status(self) -> str:
        return "Pass" if self.passed else "Fail"


PASS = OracleVerdict(passed=True)


def _eval_kernel(name: str, inputs: Sequence[Tensor], precision: Precision,
                 params: dict) -> np.ndarray:
    op = op_def(name)
    dtype = precision.dtype
    with np.errstate(all="ignore"):
        args = [t.data.astype(dtype) for t in inputs]
        out = op.forward(params, *args)
    return np.asarray(out, dtype=dtype)


def _first_true(mask: np.ndarray) -> int:
    return int(np.argmax(mask.reshape(-1)))


def _compare(a: np.ndarray, b: np.ndarray, tolerance: float,
             relative: bool = False) -> Optional[str]:
    """Return a mismatch description, or None when a and b agree.

    Non-finite values agree only when both sides are NaN or infinities of the
    same sign; otherwise they count as a mismatch regardless of tolerance.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    both_nan = np.isnan(a) & np.isnan(b)
    both_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    finite = np.isfinite(a) & np.isfinite(b)
    bad_nonfinite = ~finite & ~(both_nan | both_inf)
    if bad_nonfinite.any():
        i = _first_true(bad_nonfinite)
        return f"element {i}: {a[i]!r} vs {b[i]!r}"
    with np.errstate(all="ignore"):
        diff = np.abs(a - b)
        if relative:
            diff = diff / np.maximum(1.0, np.abs(b))
    exceeded = finite & (diff > tolerance)
    if exceeded.any():
        i = _first_true(exceeded)
        return f"element {i}: {a[i]!r} vs {b[i]!r} (delta {diff[i]:.3e} > {tolerance:.1e})"
    return None


# ---------------------------------------------------------------------------
# oracle type 1: NaN/inf detection
# ---------------------------------------------------------------------------

def check_nan_inf(output: Tensor) -> OracleVerdict:
    values = output.elements
    bad = ~np.isfinite(values)
    if bad.any():
        i = _first_true(bad)
        return OracleVerdict(False, FailureClass.NAN_OR_INF,
                             f"element {i} is {values[i]!r}")
    return PASS


# ---------------------------------------------------------------------------
# oracle type 2: out-of-range check
# ---------------------------------------------------------------------------

def check_range(output: Tensor, lo: float, hi: float) -> OracleVerdict:
    if not lo < hi:
        raise ValueError("range oracle requires lo < hi")
    values = output.elements.astype(np.float64)
    bad = ~((values >= lo) & (values <= hi))  # NaN also lands here
    if bad.any():
        i = _first_true(bad)
        return OracleVerdict(False, FailureClass.OUT_OF_RANGE,
                             f"element {i} = {values[i]!r} outside [{lo}, {hi}]")
    return PASS


# ---------------------------------------------------------------------------
# oracle type 3: math formula rewriting
# ---------------------------------------------------------------------------

def _rw_logsoftmax(arrays):
    x = arrays[0]
    e = np.exp(x.reshape(-1))
    return np.log(e / e.sum()).reshape(x.shape)


def _rw_logsoftmax_stable(arrays):
    return stable_logsoftmax(arrays[0])


def _rw_softplus(arrays):
    x = arrays[0]
    return np.log(x.dtype.type(1.0) + np.exp(x))


def _rw_softplus_stable(arrays):
    return stable_softplus(arrays[0])


def _rw_sqrt_ratio(arrays):
    x = arrays[0]
    return x / (np.sqrt(x) * np.sqrt(x))


def _rw_sqrt_ratio_stable(arrays):
    x = arrays[0]
    return x / np.sqrt(x * x)


def _rw_shifted_log(arrays):
    # operand packs (x, m, y) as a 3-element tensor
    x, m, y = arrays[0].reshape(-1)[:3]
    return np.asarray(x - (m + np.log(y)), dtype=arrays[0].dtype)


def _rw_shifted_log_stable(arrays):
    x, m, y = arrays[0].reshape(-1)[:3]
    return np.asarray((x - m) - np.log(y), dtype=arrays[0].dtype)


REWRITES: dict[str, tuple[Callable, Callable]] = {
    "logSoftmax": (_rw_logsoftmax, _rw_logsoftmax_stable),
    "SoftPlus": (_rw_softplus, _rw_softplus_stable),
    "sqrt_ratio": (_rw_sqrt_ratio, _rw_sqrt_ratio_stable),
    "shifted_log_diff": (_rw_shifted_log, _rw_shifted_log_stable),
}


def check_rewrite(name: str, inputs: Sequence[Tensor], tolerance: float = 1e-6,
                  precision: Precision = Precision.SINGLE) -> OracleVerdict:
    if name not in REWRITES:
        raise CapabilityError(f"no rewritten stable form registered for '{name}'")
    original, rewritten = REWRITES[name]
    arrays = [t.data.astype(precision.dtype) for t in inputs]
    with np.errstate(all="ignore"):
        a = original(arrays)
        b = rewritten(arrays)
    mismatch = _compare(a, b, tolerance)
    if mismatch:
        return OracleVerdict(False, FailureClass.REWRITE_MISMATCH, mismatch)
    return PASS


# ---------------------------------------------------------------------------
# oracle type 4: stable algorithm implementation
# ---------------------------------------------------------------------------

STABLE_ALGORITHMS: dict[str, tuple[Callable, Callable]] = {
    "inverse": (gauss_inverse, cholesky_inverse),
    "determinant": (gauss_determinant, cholesky_determinant),
}


def check_stable_algorithm(name: str, inputs: Sequence[Tensor],
                           tolerance: float = 1e-6) -> OracleVerdict:
    """Compare the unstable algorithm with its stable counterpart, both in
    double precision so the difference isolates the algorithm, not rounding.

    Raises OracleUnavailable when the stable counterpart's domain (SPD
    matrices for Cholesky) is violated.
    """
    if name not in STABLE_ALGORITHMS:
        raise CapabilityError(f"no stable counterpart registered for '{name}'")
    unstable, stable = STABLE_ALGORITHMS[name]
    arrays = [t.data.astype(np.float64) for t in inputs]
    b = stable(arrays[0])  # raises OracleUnavailable outside its domain
    with np.errstate(all="ignore"):
        a = unstable(arrays[0])
    mismatch = _compare(a, b, tolerance)
    if mismatch:
        return OracleVerdict(False, FailureClass.STABLE_ALGO_MISMATCH, mismatch)
    return PASS


# ---------------------------------------------------------------------------
# oracle type 5: consistency against an independent reference
# ---------------------------------------------------------------------------

REFERENCES: dict[str, Callable] = {
    "CosineSimilarity": cosine_reference,
}


def check_reference_consistency(name: str, inputs: Sequence[Tensor],
                                tolerance: float = 1e-6,
                                registry: Optional[Registry] = None) -> OracleVerdict:
    """Compare the kernel with its independent reference, both in double
    precision: when no unstable branch (e.g. norm clamping) engages, the two
    agree exactly, so tolerance only absorbs representational noise.
    """
    if name not in REFERENCES:
        raise CapabilityError(f"no reference implementation registered for '{name}'")
    reg = registry or default_registry()
    spec = reg.get(name)
    params = resolved_params(spec, inputs[spec.primary_operand].shape)
    a = _eval_kernel(name, inputs, Precision.DOUBLE, params)
    with np.errstate(all="ignore"):
        b = REFERENCES[name](*[t.data.astype(np.float64) for t in inputs])
    mismatch = _compare(a, b, tolerance)
    if mismatch:
        return OracleVerdict(False, FailureClass.REFERENCE_MISMATCH, mismatch)
    return PASS


# ---------------------------------------------------------------------------
# oracle type 6: increased floating-point width
# ---------------------------------------------------------------------------

INTEGER_VALUED = {"remainder"}


def check_increased_width(name: str, inputs: Sequence[Tensor],
                          tolerance: float = 1e-6,
                          registry: Optional[Registry] = None) -> OracleVerdict:
    reg = registry or default_registry()
    spec = reg.get(name)
    params = resolved_params(spec, inputs[spec.primary_operand].shape)
    single = _eval_kernel(name, inputs, Precision.SINGLE, params)
    double = _eval_kernel(name, inputs, Precision.DOUBLE, params)
    if name in INTEGER_VALUED:
        # round the wide result to the comparison scale before differencing
        rounded = double.astype(np.float32).astype(np.float64)
        mismatch = _compare(single.astype(np.float64), rounded, tolerance)
    else:
        mismatch = _compare(single.astype(np.float64), double.astype(np.float64),
                            tolerance, relative=True)
    if mismatch:
        return OracleVerdict(False, FailureClass.WIDTH_MISMATCH, mismatch)
    return PASS


# ---------------------------------------------------------------------------
# dispatcher
# ---------------------------------------------------------------------------

def run_oracles(name: str, inputs: Sequence[Tensor],
                registry: Optional[Registry] = None,
                wide_inputs: Optional[Sequence[Tensor]] = None) -> OracleVerdict:
    """Run the kernel's bound oracles in registry order; first Fail wins.

    inputs are the operands as the execution under test produced them; the
    increased-width oracle instead uses wide_inputs, the operands as a
    double-precision shadow execution carries them (they default to inputs,
    which is exact when inputs are already double). Oracle-unavailable
    entries are skipped (and logged); if every binding is unavailable there
    is nothing to judge and that is a capability error.
    """
    reg = registry or default_registry()
    spec = reg.get(name)
    if not spec.implemented:
        raise CapabilityError(f"kernel '{name}' is not implemented")
    params = resolved_params(spec, inputs[spec.primary_operand].shape)
    wide = inputs if wide_inputs is None else wide_inputs
    single_out: Optional[Tensor] = None
    ran_any = False
    for binding in spec.oracle_bindings:
        try:
            if binding.type in (1, 2) and single_out is None:
                single_out = Tensor(_eval_kernel(name, inputs, Precision.SINGLE, params))
            if binding.type == 1:
                verdict = check_nan_inf(single_out)
            elif binding.type == 2:
                verdict = check_range(single_out, binding.lo, binding.hi)
            elif binding.type == 3:
                verdict = check_rewrite(name, inputs, binding.tolerance)
            elif binding.type == 4:
                verdict = check_stable_algorithm(name, inputs, binding.tolerance)
            elif binding.type == 5:
                verdict = check_reference_consistency(name, inputs, binding.tolerance, reg)
            else:
                verdict = check_increased_width(name, wide, binding.tolerance, reg)
        except OracleUnavailable as exc:
            log.debug("oracle %d unavailable for %s: %s", binding.type, name, exc)
            continue
        ran_any = True
        if not verdict.passed:
            return verdict
    if not ran_any:
        raise CapabilityError(f"no applicable oracle for '{name}' on this input")
    return PASS
