"""Central finite-difference verification of analytic gradients in float64."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import GradTape, Tensor, backward, no_grad, precision


@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        # a check that only ever hit kinks verified nothing
        enough = all(self.checked[k] > 0 and self.skipped[k] <= self.checked[k] for k in self.checked)
        return enough and self.max_error <= self.tol

    def __str__(self) -> str:
        rows = [
            f"{name}: max_rel_err={self.errors[name]:.3e} checked={self.checked[name]} skipped={self.skipped[name]}"
            for name in self.errors
        ]
        status = "PASS" if self.passed else "FAIL"
        return f"{status} (tol={self.tol:g})\n  " + "\n  ".join(rows)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() against central differences for every named input.

    ``fn`` receives one float64 :class:`Tensor` per input (as keyword
    arguments) and must return a scalar. The error for an entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. Entries
    where the difference quotient at ``eps`` and ``eps/10`` disagree are
    sitting on a kink (relu, clamp, abs) and are skipped, not scored.
    ``max_entries`` limits the number of randomly chosen entries per input.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    # below ~1e-6 the two quotients differ by round-off alone, not by a kink
    kink_tol = max(tol, 1e-6)

    with precision(np.float64):
        leaves = {k: Tensor(a, requires_grad=True) for k, a in arrays.items()}
        with GradTape() as tape:
            out = fn(**leaves)
            backward(out)
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
        tape.clear()

        def evaluate(name: str, flat_index: int, delta: float) -> float:
            probe = {k: a for k, a in arrays.items()}
            bumped = arrays[name].copy()
            bumped.reshape(-1)[flat_index] += delta
            probe[name] = bumped
            with no_grad():
                return float(fn(**{k: Tensor(a) for k, a in probe.items()}).data.reshape(-1)[0])

        for name, arr in arrays.items():
            n = arr.size
            if max_entries is not None and n > max_entries:
                picks = rng.choice(n, size=max_entries, replace=False)
            else:
                picks = np.arange(n)
            worst, checked, skipped = 0.0, 0, 0
            ga = analytic[name].reshape(-1)
            for i in picks:
                coarse = (evaluate(name, i, eps) - evaluate(name, i, -eps)) / (2 * eps)
                fine_eps = eps / 10
                fine = (evaluate(name, i, fine_eps) - evaluate(name, i, -fine_eps)) / (2 * fine_eps)
                scale = max(abs(coarse), abs(fine), floor)
                if abs(coarse - fine) / scale > kink_tol:
                    skipped += 1
                    continue
                a = float(ga[i])
                err = abs(a - coarse) / max(abs(a), abs(coarse), floor)
                worst = max(worst, err)
                checked += 1
            report.errors[name] = worst
            report.checked[name] = checked
            report.skipped[name] = skipped
    return report
