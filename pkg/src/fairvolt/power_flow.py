"""Backward/forward sweep power flow for radial feeders (per unit)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NonRadialError, NotConverged, ShapeError
from .grid_model import NetworkSpec

TOL = 1e-8
MAX_ITER = 100


@dataclass(frozen=True)
class Injections:
    """Net per-bus injection in pu (generation positive)."""

    p: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class PfSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    converged: bool
    iterations: int
    slack_power: complex = 0j  # pu, injected into the feeder by the slack
    losses: complex = 0j


@dataclass(frozen=True)
class _Sweep:
    """Precomputed incidence data for one network.

    Non-slack buses are numbered in BFS order; ``subtree[i, j]`` is 1 when
    bus j lies below (or is) bus i, so the line feeding bus i carries the
    sum of the currents drawn in its subtree.
    """

    order: np.ndarray  # spec bus index of each non-slack bus, BFS order
    subtree: np.ndarray
    z: np.ndarray  # pu impedance of the line feeding each non-slack bus
    from_slack: np.ndarray  # lines whose parent is the slack
    slack: int


@lru_cache(maxsize=64)
def _sweep_data(spec: NetworkSpec) -> _Sweep:
    order, parent = spec._bfs()
    if len(order) != len(spec.buses) or len(spec.lines) != len(spec.buses) - 1:
        raise NonRadialError("power flow requires a connected radial feeder")
    nonslack = order[1:]
    pos = {b: i for i, b in enumerate(nonslack)}
    n = len(nonslack)
    subtree = np.zeros((n, n))
    z = np.empty(n, dtype=complex)
    zb = spec.z_base
    for j, b in enumerate(nonslack):
        par, k = parent[b]
        ln = spec.lines[k]
        z[j] = complex(ln.r_ohm, ln.x_ohm) / zb
        node = b
        while node != spec.slack_bus:
            subtree[pos[node], j] = 1.0
            node = parent[node][0]
    idx = spec.bus_index
    return _Sweep(
        order=np.array([idx[b] for b in nonslack], dtype=int),
        subtree=subtree,
        z=z,
        from_slack=np.array([j for j, b in enumerate(nonslack) if parent[b][0] == spec.slack_bus], dtype=int),
        slack=idx[spec.slack_bus],
    )


def solve_pf(spec: NetworkSpec, inj: Injections, tol: float = TOL, max_iter: int = MAX_ITER) -> PfSolution:
    """Solve one operating point with the slack held at 1.0 pu, angle 0.

    Iterates until the largest voltage change between sweeps is below
    ``tol``; returns ``converged=False`` instead of raising when it is not.
    """
    p = np.asarray(inj.p, dtype=float)
    q = np.asarray(inj.q, dtype=float)
    nb = len(spec.buses)
    if p.shape != (nb,) or q.shape != (nb,):
        raise ShapeError(f"injections must have length {nb}")
    sw = _sweep_data(spec)

    s_draw = -(p[sw.order] + 1j * q[sw.order])  # demand convention
    v = np.ones(len(sw.order), dtype=complex)
    converged = False
    it = 0
    branch = np.zeros_like(v)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        max_iter = 0
    for it in range(1, max_iter + 1):
        branch = sw.subtree @ np.conj(s_draw / v)
        v_new = 1.0 - sw.subtree.T @ (sw.z * branch)
        delta = np.max(np.abs(v_new - v)) if v.size else 0.0
        v = v_new
        if not np.isfinite(delta):
            break
        if delta < tol:
            converged = True
            break

    full = np.ones(nb, dtype=complex)
    full[sw.order] = v
    i_out = branch[sw.from_slack].sum()
    losses = np.sum(sw.z * np.abs(branch) ** 2)
    return PfSolution(
        v_mag=np.abs(full),
        v_ang=np.angle(full),
        converged=converged,
        iterations=it,
        slack_power=complex(np.conj(i_out)),
        losses=complex(losses),
    )


def solve_pf_batch(spec: NetworkSpec, p: np.ndarray, q: np.ndarray, tol: float = TOL, max_iter: int = MAX_ITER):
    """Vectorized sweep over many operating points.

    ``p`` and ``q`` are (buses, T) pu injections. Returns ``(v_mag, converged)``
    with shapes (buses, T) and (T,). All columns iterate together, so a
    column may take a few more sweeps than it would alone.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    nb = len(spec.buses)
    if p.ndim != 2 or p.shape[0] != nb or p.shape != q.shape:
        raise ShapeError(f"expected (buses={nb}, T) injection matrices")
    sw = _sweep_data(spec)
    s_draw = -(p[sw.order] + 1j * q[sw.order])
    v = np.ones_like(s_draw)
    done = np.zeros(p.shape[1], dtype=bool)
    for _ in range(max_iter):
        v_new = 1.0 - sw.subtree.T @ (sw.z[:, None] * (sw.subtree @ np.conj(s_draw / v)))
        delta = np.max(np.abs(v_new - v), axis=0) if v.shape[0] else np.zeros(p.shape[1])
        v = v_new
        done = delta < tol
        if done.all():
            break
    full = np.ones((nb, p.shape[1]), dtype=complex)
    full[sw.order] = v
    return np.abs(full), done


def violation_count(sol: PfSolution, spec: NetworkSpec) -> tuple[int, int]:
    """Buses strictly below v_min and strictly above v_max."""
    if not sol.converged:
        raise NotConverged("violation_count needs a converged solution")
    v = sol.v_mag
    return int(np.sum(v < spec.v_min)), int(np.sum(v > spec.v_max))
