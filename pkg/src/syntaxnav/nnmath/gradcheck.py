"""Central finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autograd import Tape, Tensor, backward, no_tape
from .params import ParameterSet


class NonDeterministicFunction(Exception):
    pass


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    coords_checked: int = 0


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(
    f: Callable[[ParameterSet], Tensor],
    params: ParameterSet,
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    names: list[str] | None = None,
) -> GradCheckResult:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` maps the parameter set to a scalar Tensor and must be deterministic.
    With ``max_coords`` set, a random subset of coordinates per parameter is
    probed (drawn from ``rng``); otherwise every coordinate is.
    Parameters are perturbed in place and restored before returning.
    """
    names = names if names is not None else params.names()

    with no_tape():
        v1 = f(params).item()
        v2 = f(params).item()
    if v1 != v2:
        raise NonDeterministicFunction(f"f evaluated twice gave {v1!r} and {v2!r}")

    with Tape() as tape:
        loss = f(params)
    grads = params.grads_by_name(backward(loss, tape, params.tensors()))

    rng = rng or np.random.default_rng(0)
    result = GradCheckResult(0.0)
    for name in names:
        data = params[name].data
        flat = data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        g = grads[name].reshape(-1)
        worst = 0.0
        for k in idx:
            orig = flat[k]
            with no_tape():
                flat[k] = orig + eps
                fp = f(params).item()
                flat[k] = orig - eps
                fm = f(params).item()
            flat[k] = orig
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, relative_error(float(g[k]), num))
            result.coords_checked += 1
        result.per_parameter[name] = worst
        result.max_rel_error = max(result.max_rel_error, worst)
    return result
