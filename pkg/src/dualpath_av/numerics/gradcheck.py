"""Central-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    tol: float
    step: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    @property
    def worst(self) -> tuple[str, float]:
        if not self.errors:
            return ("", 0.0)
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def as_dict(self) -> dict:
        name, err = self.worst
        return {"passed": self.passed, "tol": self.tol, "step": self.step,
                "n_parameters": len(self.errors), "worst_parameter": name,
                "worst_rel_err": err}


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray) -> float:
    """max|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8), maxima taken over the tensor."""
    num = float(np.max(np.abs(g_ad - g_fd))) if g_ad.size else 0.0
    den = max(float(np.max(np.abs(g_ad))) if g_ad.size else 0.0,
              float(np.max(np.abs(g_fd))) if g_fd.size else 0.0, 1e-8)
    return num / den


def numerical_gradient(f: Callable[[], Tensor], p: Tensor, step: float) -> np.ndarray:
    flat = p.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * step)
    return out.reshape(p.shape)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-6,
    tol: float = 1e-4,
    gradient_hook: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` re-evaluates the scalar loss from the current parameter values.
    ``gradient_hook`` may rewrite the analytic gradient before comparison
    (used to build negative controls).
    """
    if not 1e-6 <= step <= 1e-4:
        raise ValueError("step must lie in [1e-6, 1e-4]")
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks need 64-bit parameters; {name} is {p.dtype}")

    loss = f()
    backward(loss, params.values())
    with no_grad():
        again = f()
    if again.data.tobytes() != loss.data.tobytes():
        raise RuntimeError("loss function is not deterministic")

    report = GradCheckReport(tol=tol, step=step)
    for name, p in params.items():
        g_ad = p.grad
        if gradient_hook is not None:
            g_ad = gradient_hook(name, g_ad)
        g_fd = numerical_gradient(f, p, step)
        report.errors[name] = relative_error(g_ad, g_fd)
    return report
