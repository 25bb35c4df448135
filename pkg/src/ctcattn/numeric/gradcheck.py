"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import InconsistencyError, InvalidArgument
from .tensor import Parameter, Tensor


def _value(out) -> float:
    return out.item() if isinstance(out, Tensor) else float(out)


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
    *,
    per_param: dict | None = None,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` takes no arguments and builds the loss from the current
    parameter values. Returns the maximum over all coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``. When ``per_param`` is a
    dict it is filled with the same maximum per parameter name.
    """
    if step <= 0:
        raise InvalidArgument("step must be positive")
    for p in params:
        p.zero_grad()
    out = loss_fn()
    base = _value(out)
    if _value(loss_fn()) != base:
        raise InconsistencyError("loss_fn returned different values for identical parameters")
    if isinstance(out, Tensor):
        out.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        p_worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = _value(loss_fn())
            flat[k] = orig - step
            down = _value(loss_fn())
            flat[k] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(gflat[k] - numeric) / max(1.0, abs(gflat[k]))
            p_worst = max(p_worst, err)
        if per_param is not None:
            per_param[getattr(p, "name", "") or str(id(p))] = p_worst
        worst = max(worst, p_worst)
    for p in params:
        p.zero_grad()
    return worst
