"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from rdeepsc.engine.tensor import Tensor, grad, no_record, record


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-6,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
    atol: float = 1e-10,
) -> float:
    """Max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-12).

    ``f`` maps ``x`` to a scalar Tensor. ``coords`` limits the check to that
    many randomly chosen coordinates, which keeps big parameter blocks cheap.
    Coordinates where both sides agree to within ``atol`` plus the rounding
    error of the difference quotient count as exact, so
    gradients that are zero by symmetry (a key bias under softmax) do not
    report rounding noise as a 100% error.
    ``x.data`` is perturbed in place and restored.
    """
    was = x.requires_grad
    x.requires_grad = True
    try:
        with record():
            out = f(x)
            analytic = grad(out, [x])[0].reshape(-1)
    finally:
        x.requires_grad = was

    flat = x.data.reshape(-1)
    picks = np.arange(flat.size)
    if coords is not None and coords < flat.size:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(flat.size, size=coords, replace=False)

    worst = 0.0
    with no_record():
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            up = float(f(x).data)
            flat[i] = orig - h
            down = float(f(x).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[i]
            diff = abs(a - numeric)
            # rounding error of the difference quotient itself
            floor = atol + 4 * np.finfo(float).eps * (abs(up) + abs(down)) / (2.0 * h)
            err = 0.0 if diff <= floor else diff / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
