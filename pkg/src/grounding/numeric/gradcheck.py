from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .tensor import Tensor


class GradCheckError(RuntimeError):
    """The checked function produced a non-finite value."""


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    per_param: dict[str, float] = field(default_factory=dict)
    n_coords: int = 0


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose true gradient is (numerically) zero from
    dividing round-off by round-off.
    """
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    out = []
    for i, p in enumerate(params):
        out.append((getattr(p, "name", "") or f"param{i}", p))
    return out


def grad_check_report(f: Callable[[], Tensor], params: Iterable[Tensor] | Mapping[str, Tensor],
                      epsilon: float = 1e-6, floor: float = 1e-8) -> GradCheckReport:
    """Compare the taped gradient of scalar ``f()`` to central differences, coordinate by coordinate."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    named = _named(params)

    for _, p in named:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise GradCheckError(f"f is non-finite at the unperturbed point ({named[0][0] if named else '?'})")
    out.backward()
    analytic = {name: (p.grad if p.grad is not None else np.zeros(p.shape)) for name, p in named}

    report = GradCheckReport(max_rel_error=0.0, worst_param="", worst_index=())
    for name, p in named:
        base = p.data.copy()
        numeric = np.zeros(p.shape)
        for idx in np.ndindex(*p.shape):
            values = base.copy()
            values[idx] = base[idx] + epsilon
            p.data = values
            f_plus = float(f().data)
            values = base.copy()
            values[idx] = base[idx] - epsilon
            p.data = values
            f_minus = float(f().data)
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                p.data = base
                raise GradCheckError(f"f is non-finite when perturbing parameter {name!r} at {idx}")
            numeric[idx] = (f_plus - f_minus) / (2 * epsilon)
        p.data = base
        err = relative_error(analytic[name], numeric, floor)
        worst = float(err.max()) if err.size else 0.0
        report.per_param[name] = worst
        report.n_coords += err.size
        if worst > report.max_rel_error or not report.worst_param:
            report.max_rel_error = worst
            report.worst_param = name
            report.worst_index = np.unravel_index(int(err.argmax()), err.shape) if err.size else ()
    return report


def grad_check(f: Callable[[], Tensor], params, epsilon: float = 1e-6, floor: float = 1e-8) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return grad_check_report(f, params, epsilon, floor).max_rel_error
