"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import StateError
from .params import ParameterStore

# Relative error denominator floor: gradients below this magnitude are
# compared essentially absolutely, so FD roundoff on dead parameters
# does not produce spurious violations.
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    tolerance: float
    per_param: dict[str, float]
    violations: list[str]

    @property
    def max_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def worst_param(self) -> str:
        return max(self.per_param, key=self.per_param.get) if self.per_param else ""

    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        status = "PASS" if self.passed() else "FAIL"
        lines = [
            f"grad check {status}: max relative error {self.max_error:.3e} "
            f"(tolerance {self.tolerance:.1e}, worst {self.worst_param})"
        ]
        for name in self.violations:
            lines.append(f"  violation: {name} rel err {self.per_param[name]:.3e}")
        return "\n".join(lines)


def grad_check(
    target,
    tolerance: float,
    h: float = 1e-5,
    corrupt_grad_of: str | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of `target` against central differences.

    `target` exposes a ParameterStore as `.store`, a deterministic scalar
    `.loss()` computed from the current parameter values, and
    `.compute_grads()` which runs forward+backward and fills the store's
    gradient buffers. `corrupt_grad_of` is a test-only hook that flips the
    sign of one parameter's analytic gradient to prove the detector fires.
    """
    store: ParameterStore = target.store
    l0 = target.loss()
    if not np.isfinite(l0):
        raise StateError("loss is not finite; cannot gradient-check")
    if target.loss() != l0:
        raise StateError("non-deterministic forward detected")

    target.compute_grads()
    analytic = {
        name: e.grad.copy() for name, e in store.entries.items() if e.trainable
    }
    if corrupt_grad_of is not None:
        analytic[corrupt_grad_of] = -analytic[corrupt_grad_of]

    per_param: dict[str, float] = {}
    violations: list[str] = []
    for name, grad in analytic.items():
        value = store.entries[name].value
        worst = 0.0
        it = np.nditer(value, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = value[idx]
            value[idx] = orig + h
            lp = target.loss()
            value[idx] = orig - h
            lm = target.loss()
            value[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            an = grad[idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), REL_FLOOR)
            worst = max(worst, rel)
            it.iternext()
        per_param[name] = worst
        if worst >= tolerance:
            violations.append(name)
    return GradCheckReport(tolerance=tolerance, per_param=per_param, violations=violations)
