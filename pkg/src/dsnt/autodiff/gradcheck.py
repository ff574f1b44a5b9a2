"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backward


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-5,
               max_coords: int | None = 40, seed: int = 0, floor: float = 1e-8) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current values of ``params`` and
    must be deterministic.  At most ``max_coords`` coordinates per parameter
    are probed (all of them when ``None``).
    """
    with Tape() as tape:
        loss = f()
    analytic = backward(tape, loss, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        g = analytic[name].reshape(-1)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + h
            up = f().item()
            flat[k] = orig - h
            down = f().item()
            flat[k] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, relative_error(float(g[k]), numeric, floor))
    return worst
