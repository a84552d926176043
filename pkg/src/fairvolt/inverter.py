"""Smart-inverter dispatch under the circular P-Q capability limit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .grid_model import InverterSpec


@dataclass(frozen=True)
class InverterDispatch:
    gen_id: str
    p_avail: float
    q_cmd: float
    p_out: float
    curtail: float


def dispatch_arrays(s_rated, p_avail, actions):
    """Vectorized core: returns ``(q_cmd, p_out, curtail)``.

    Q follows the action directly (Q = S * a). Active power is only reduced
    when the requested Q pushes the operating point outside the circle, and
    then exactly onto it.
    """
    s = np.asarray(s_rated, dtype=float)
    p = np.asarray(p_avail, dtype=float)
    a = np.asarray(actions, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(np.abs(a) > 1.0):
        raise DomainError("actions must lie in [-1, 1]")
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise DomainError("p_avail must be >= 0")
    q = s * a
    infeasible = p * p + q * q > s * s
    p_out = np.where(infeasible, np.sqrt(np.maximum(s * s - q * q, 0.0)), p)
    curtail = np.where(infeasible, p - p_out, 0.0)
    return q, p_out, curtail


def apply_action(spec: InverterSpec, p_avail: float, action: float) -> InverterDispatch:
    q, p_out, curtail = dispatch_arrays(spec.s_rated, p_avail, action)
    return InverterDispatch(spec.gen_id, float(p_avail), float(q), float(p_out), float(curtail))


def dispatch_all(specs: list[InverterSpec], p_avail, actions) -> list[InverterDispatch]:
    p_avail = np.asarray(p_avail, dtype=float)
    actions = np.asarray(actions, dtype=float)
    if not (len(specs) == p_avail.shape[0] == actions.shape[0]) or p_avail.ndim != 1 or actions.ndim != 1:
        raise ShapeError(f"need {len(specs)} availabilities and actions")
    s = np.array([sp.s_rated for sp in specs])
    q, p_out, curtail = dispatch_arrays(s, p_avail, actions)
    return [
        InverterDispatch(sp.gen_id, float(p_avail[i]), float(q[i]), float(p_out[i]), float(curtail[i]))
        for i, sp in enumerate(specs)
    ]
