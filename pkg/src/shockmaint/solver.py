"""Jacobi value iteration for the impulse-control problem on a uniform grid.

Each sweep takes the larger of two candidate values at every node:

* wait: ``(G(r_j) + lam * sum_i V[j-i] p_i) / (lam + delta)``
* intervene: ``max_i V[j+i] - C(r_j, i h)`` over ``0 <= i <= N - j``

Node 0 is the failure state and stays at 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Grid, ModelSpec, check_model_on_grid, cost_matrix, nearest_node_index

DEFAULT_EPSILON = 1e-8
DEFAULT_MAX_ITER = 10_000

CEMETERY = "cemetery"
INTERVENE = "A"
WAIT = "B"


class NonConvergenceError(RuntimeError):
    def __init__(self, iterations: int, gap: float):
        super().__init__(f"no convergence after {iterations} sweeps (last sup-norm gap {gap:.3e})")
        self.iterations = iterations
        self.gap = gap


@dataclass(frozen=True)
class ValueFunction:
    grid: Grid
    values: np.ndarray
    iterations: int
    final_gap: float
    tolerance: float
    # largest decrease between consecutive iterates; <= 0 when the iteration is monotone
    monotone_violation: float = 0.0


@dataclass(frozen=True)
class Policy:
    """Per-node actions. ``zeta_index[j]`` is the intervention size in grid steps.

    ``labels[j]`` is ``"A"`` (intervene), ``"B"`` (wait) or ``"cemetery"`` for node 0.
    """

    grid: Grid
    labels: tuple[str, ...]
    zeta_index: np.ndarray
    boundary: float

    @property
    def zeta(self) -> np.ndarray:
        return self.zeta_index * self.grid.h

    @property
    def targets(self) -> np.ndarray:
        return self.grid.nodes + self.zeta

    def node_for(self, r: float) -> int:
        return int(np.clip(nearest_node_index(r, self.grid.h), 0, self.grid.n))

    def action_at(self, r: float) -> tuple[int, str, float]:
        """Policy lookup for an arbitrary state: ``(node, label, zeta)``.

        Shared by the query command and the simulator.
        """
        j = self.node_for(r)
        label = self.labels[j]
        zeta = float(self.zeta[j]) if label == INTERVENE else 0.0
        return j, label, zeta


@dataclass(frozen=True)
class ResidualReport:
    dynkin: np.ndarray
    intervention: np.ndarray

    @property
    def qvi(self) -> np.ndarray:
        return np.minimum(self.dynkin, self.intervention)

    def max_abs_qvi(self) -> float:
        """Largest |min(...)| over decision nodes (node 0 excluded)."""
        return float(np.max(np.abs(self.qvi[1:]))) if self.qvi.size > 1 else 0.0

    def certifies(self, tol: float) -> bool:
        return bool(
            self.max_abs_qvi() <= tol
            and np.all(self.dynkin[1:] >= -tol)
            and np.all(self.intervention[1:] >= -tol)
        )


class _Operators:
    """Grid-bound pieces reused across sweeps."""

    def __init__(self, model: ModelSpec, grid: Grid):
        self.model = model
        self.grid = grid
        self.g = np.asarray(model.utility(grid.nodes), dtype=float)
        self.cost = cost_matrix(model.cost, grid)
        n = grid.n
        self.target = np.minimum(np.arange(n + 1)[:, None] + np.arange(n + 1)[None, :], n)

    def continuation(self, values: np.ndarray) -> np.ndarray:
        n = self.grid.n
        expected = np.convolve(values, self.grid.density)[: n + 1]
        return (self.g + self.model.lam * expected) / (self.model.lam + self.model.delta)

    def intervention(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gains = values[self.target] - self.cost
        best = np.argmax(gains, axis=1)
        return gains[np.arange(gains.shape[0]), best], best


def apply_intervention_operator(values, grid: Grid, model: ModelSpec, j: int) -> tuple[float, int]:
    """Best immediate-intervention value at node ``j`` and the smallest maximizing step."""
    c = cost_matrix(model.cost, grid)[j, : grid.n - j + 1]
    gains = np.asarray(values, dtype=float)[j : grid.n + 1] - c
    i = int(np.argmax(gains))
    return float(gains[i]), i


def apply_generator_value(values, grid: Grid, model: ModelSpec, j: int) -> float:
    values = np.asarray(values, dtype=float)
    expected = float(np.dot(values[j::-1], grid.density[: j + 1]))
    g = float(model.utility(grid.nodes[j]))
    return (g + model.lam * expected) / (model.lam + model.delta)


def jacobi_sweep(values, grid: Grid, model: ModelSpec, _ops: Optional[_Operators] = None) -> np.ndarray:
    ops = _ops or _Operators(model, grid)
    values = np.asarray(values, dtype=float)
    new = np.maximum(ops.continuation(values), ops.intervention(values)[0])
    new[0] = 0.0
    return new


def solve(
    model: ModelSpec,
    grid: Grid,
    epsilon: float = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    initial: Optional[np.ndarray] = None,
) -> ValueFunction:
    """Iterate sweeps until the sup-norm change drops below ``epsilon``.

    Starts from ``V = 0`` unless ``initial`` is given. Raises
    :class:`NonConvergenceError` after ``max_iter`` sweeps.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    check_model_on_grid(model, grid)
    ops = _Operators(model, grid)
    v = np.zeros(grid.n + 1) if initial is None else np.array(initial, dtype=float)
    v[0] = 0.0
    worst_drop = -np.inf
    gap = np.inf
    for it in range(1, max_iter + 1):
        nv = jacobi_sweep(v, grid, model, ops)
        diff = nv - v
        gap = float(np.max(np.abs(diff)))
        worst_drop = max(worst_drop, float(np.max(-diff)))
        v = nv
        if gap < epsilon:
            return ValueFunction(grid, v, it, gap, epsilon, worst_drop)
    raise NonConvergenceError(max_iter, gap)


def extract_policy(vf: ValueFunction, model: ModelSpec, region_tol: Optional[float] = None) -> Policy:
    """Classify nodes: intervene where ``V - MV <= region_tol`` (default ``10 * epsilon``)."""
    tol = 10 * vf.tolerance if region_tol is None else region_tol
    ops = _Operators(model, vf.grid)
    mv, best = ops.intervention(vf.values)
    n = vf.grid.n
    labels = [CEMETERY]
    zeta_index = np.zeros(n + 1, dtype=int)
    for j in range(1, n + 1):
        if vf.values[j] - mv[j] <= tol:
            labels.append(INTERVENE)
            zeta_index[j] = best[j]
        else:
            labels.append(WAIT)
    return Policy(vf.grid, tuple(labels), zeta_index, _boundary(labels, vf.grid))


def _boundary(labels, grid: Grid) -> float:
    """Largest node r such that every node in (0, r] intervenes; 0 if node 1 waits."""
    last = 0
    for j in range(1, grid.n + 1):
        if labels[j] != INTERVENE:
            break
        last = j
    return float(grid.nodes[last])


def qvi_residuals(vf: ValueFunction, model: ModelSpec) -> ResidualReport:
    ops = _Operators(model, vf.grid)
    v = vf.values
    av = model.lam * (np.convolve(v, vf.grid.density)[: vf.grid.n + 1] - v)
    dynkin = model.delta * v - av - ops.g
    mv, _ = ops.intervention(v)
    return ResidualReport(dynkin=dynkin, intervention=v - mv)


def lipschitz_bound(vf: ValueFunction) -> float:
    """Largest slope of V between neighbouring decision nodes (the jump at 0 is excluded)."""
    v = vf.values
    if v.size < 3:
        return 0.0
    return float(np.max(np.abs(np.diff(v[1:]))) / vf.grid.h)


def shift_boundary(policy: Policy, d: float) -> Policy:
    """Threshold policy intervening on every node in ``(0, boundary + d]``.

    Nodes that already intervene keep their targets; newly added nodes aim at
    the target of the last node of the original region (the ceiling if there
    was none).
    """
    grid = policy.grid
    new_b = policy.boundary + d
    jb = int(round(policy.boundary / grid.h))
    fallback = float(policy.targets[jb]) if jb > 0 else grid.ceiling
    labels = [CEMETERY]
    zeta_index = np.zeros(grid.n + 1, dtype=int)
    for j in range(1, grid.n + 1):
        r = grid.nodes[j]
        if r > new_b + 1e-12:
            labels.append(WAIT)
            continue
        target = policy.targets[j] if policy.labels[j] == INTERVENE else fallback
        i = int(round((min(target, grid.ceiling) - r) / grid.h))
        if i > 0:
            labels.append(INTERVENE)
            zeta_index[j] = i
        else:
            labels.append(WAIT)
    return Policy(grid, tuple(labels), zeta_index, _boundary(labels, grid))


def shift_target(policy: Policy, d: float) -> Policy:
    """Same intervention region, every target moved by ``d`` (kept inside ``[r, O]``)."""
    grid = policy.grid
    step = int(round(d / grid.h))
    zeta_index = policy.zeta_index.copy()
    for j, lab in enumerate(policy.labels):
        if lab == INTERVENE:
            zeta_index[j] = int(np.clip(zeta_index[j] + step, 0, grid.n - j))
    return Policy(grid, policy.labels, zeta_index, policy.boundary)
