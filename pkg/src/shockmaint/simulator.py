"""Monte Carlo evaluation of the controlled shock process.

Random streams: paths are grouped into blocks of ``BLOCK_SIZE``. Block ``b`` of
a run with base seed ``s`` draws from ``numpy.random.Generator(PCG64(
SeedSequence([s, b])))``. Within a block every step draws one inter-arrival
gap and then one shock size per path (dead paths included), so the draws
depend only on ``(seed, block, step)`` and results are the same whether blocks
run serially or in a process pool.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ModelSpec, evaluate_cost
from .solver import INTERVENE, Policy

BLOCK_SIZE = 4096
DEFAULT_EPSILON_TAIL = 1e-6
RNG_ALGORITHM = f"numpy-{np.__version__}/PCG64/SeedSequence([seed, block])/block={BLOCK_SIZE}"


class SimulationConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathEvent:
    time: float
    kind: str  # "intervention", "shock" or "failure"
    state_after: float
    size: float = 0.0  # shock size or intervention size
    cost: float = 0.0


@dataclass(frozen=True)
class SimulationReport:
    initial_state: float
    paths: int
    mean_profit: float
    std_error: float
    mean_lifetime: float
    capped_paths: int
    discount_truncation_bound: float
    horizon: float
    interventions_per_path: float
    chained_intervention_paths: int
    rng: str = RNG_ALGORITHM

    def lines(self) -> list[str]:
        return [
            f"initial_state={self.initial_state!r}",
            f"paths={self.paths}",
            f"mean_profit={self.mean_profit!r}",
            f"std_error={self.std_error!r}",
            f"mean_lifetime={self.mean_lifetime!r}",
            f"capped_paths={self.capped_paths}",
            f"discount_truncation_bound={self.discount_truncation_bound!r}",
            f"horizon={self.horizon!r}",
            f"interventions_per_path={self.interventions_per_path!r}",
            f"chained_intervention_paths={self.chained_intervention_paths}",
            f"rng={self.rng}",
        ]


@dataclass(frozen=True)
class LifetimeStats:
    paths: int
    mean: float
    std_error: float
    quantiles: dict = field(default_factory=dict)
    capped_paths: int = 0


def horizon_for(model: ModelSpec, epsilon_tail: float = DEFAULT_EPSILON_TAIL) -> float:
    """Horizon ``t`` with ``exp(-delta t) * G(O) / delta = epsilon_tail``."""
    bound = model.value_bound
    if bound <= epsilon_tail:
        return 0.0
    return math.log(bound / epsilon_tail) / model.delta


def _check_policy(model: ModelSpec, policy: Optional[Policy]) -> None:
    if policy is not None and not math.isclose(policy.grid.ceiling, model.ceiling, abs_tol=1e-12):
        raise SimulationConfigError(
            f"policy grid ceiling {policy.grid.ceiling} does not match model ceiling {model.ceiling}"
        )


def _accrue(model: ModelSpec, state, t1, t2):
    d = model.delta
    return np.asarray(model.utility(state), dtype=float) * (np.exp(-d * t1) - np.exp(-d * t2)) / d


def sample_path(
    model: ModelSpec,
    policy: Optional[Policy],
    r0: float,
    rng: np.random.Generator,
    t_max: float,
) -> tuple[float, list[PathEvent]]:
    """Simulate one path and return its discounted profit and event list.

    Uses the same draw order as the block engine with a block of one path.
    """
    _check_policy(model, policy)
    if not 0 < r0 <= model.ceiling:
        raise SimulationConfigError(f"initial state {r0!r} outside (0, {model.ceiling}]")
    events: list[PathEvent] = []
    state, t, profit = float(r0), 0.0, 0.0

    def consult(now):
        nonlocal state, profit
        if policy is None:
            return
        for _ in range(policy.grid.n + 1):
            _, label, zeta = policy.action_at(state)
            if label != INTERVENE or zeta <= 0:
                return
            applied = min(zeta, model.ceiling - state)
            c = evaluate_cost(model.cost, state, applied, model.ceiling)
            profit -= math.exp(-model.delta * now) * c
            state = min(state + applied, model.ceiling)
            events.append(PathEvent(now, "intervention", state, applied, c))

    consult(0.0)
    while t < t_max:
        gap = rng.exponential(1.0 / model.lam, 1)[0] if model.lam > 0 else math.inf
        size = model.shocks.sample(rng, 1)[0] if model.lam > 0 else 0.0
        t2 = min(t + gap, t_max)
        profit += float(_accrue(model, state, t, t2))
        if t + gap >= t_max:
            break
        t = t2
        state -= size
        if state <= 0:
            events.append(PathEvent(t, "failure", state, size))
            return profit, events
        events.append(PathEvent(t, "shock", state, size))
        consult(t)
    return profit, events


@dataclass
class _BlockResult:
    profits: np.ndarray
    lifetimes: np.ndarray
    capped: int
    interventions: int
    chained: int
    gaps: Optional[np.ndarray] = None


def _run_block(args) -> _BlockResult:
    model, policy, r0, n, seed, block, t_max, collect_gaps = args
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block])))
    d = model.delta
    state = np.full(n, float(r0))
    t = np.zeros(n)
    profit = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    lifetime = np.full(n, t_max)
    capped = np.zeros(n, dtype=bool)
    n_int = np.zeros(n, dtype=np.int64)
    chained = np.zeros(n, dtype=bool)
    gaps_seen = []

    if policy is not None:
        zeta_by_node = np.where(np.array(policy.labels) == INTERVENE, policy.zeta, 0.0)

    def consult(mask, now):
        if policy is None:
            return
        idx = np.flatnonzero(mask)
        # same-instant chains: keep acting while the landing node still asks for an intervention
        for step in range(policy.grid.n + 1):
            if idx.size == 0:
                return
            j = np.clip(np.ceil(state[idx] / policy.grid.h - 0.5).astype(int), 0, policy.grid.n)
            zeta = zeta_by_node[j]
            act = zeta > 0
            idx, zeta = idx[act], zeta[act]
            if idx.size == 0:
                return
            if step > 0:
                chained[idx] = True
            applied = np.minimum(zeta, model.ceiling - state[idx])
            c = np.asarray(model.cost(state[idx], applied), dtype=float)
            profit[idx] -= np.exp(-d * now[idx]) * c
            state[idx] = np.minimum(state[idx] + applied, model.ceiling)
            n_int[idx] += 1

    consult(alive, t)
    while alive.any():
        if model.lam > 0:
            gap = rng.exponential(1.0 / model.lam, n)
            size = model.shocks.sample(rng, n)
        else:
            gap = np.full(n, np.inf)
            size = np.zeros(n)
        if collect_gaps:
            gaps_seen.append(gap[alive])
        t2 = np.minimum(t + gap, t_max)
        profit[alive] += _accrue(model, state[alive], t[alive], t2[alive])
        ends = alive & (t + gap >= t_max)
        capped |= ends
        alive &= ~ends
        t = np.where(alive, t2, t)
        state = np.where(alive, state - size, state)
        failed = alive & (state <= 0)
        lifetime[failed] = t[failed]
        alive &= ~failed
        consult(alive, t)

    return _BlockResult(
        profit, lifetime, int(capped.sum()), int(n_int.sum()), int(chained.sum()),
        np.concatenate(gaps_seen) if collect_gaps and gaps_seen else None,
    )


def _run_blocks(model, policy, r0, paths, seed, t_max, workers, collect_gaps=False):
    jobs = []
    for b, start in enumerate(range(0, paths, BLOCK_SIZE)):
        jobs.append((model, policy, r0, min(BLOCK_SIZE, paths - start), seed, b, t_max, collect_gaps))
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_block, jobs))
    return [_run_block(j) for j in jobs]


def estimate_profit(
    model: ModelSpec,
    policy: Optional[Policy],
    r0: float,
    paths: int = 100_000,
    seed: int = 0,
    epsilon_tail: float = DEFAULT_EPSILON_TAIL,
    workers: int = 1,
) -> SimulationReport:
    """Monte Carlo estimate of the expected discounted profit from ``r0``.

    ``policy=None`` runs the uncontrolled process.
    """
    if paths < 2:
        raise SimulationConfigError("need at least 2 paths")
    _check_policy(model, policy)
    if not 0 < r0 <= model.ceiling:
        raise SimulationConfigError(f"initial state {r0!r} outside (0, {model.ceiling}]")
    t_max = horizon_for(model, epsilon_tail)
    blocks = _run_blocks(model, policy, r0, paths, seed, t_max, workers)
    profits = np.concatenate([b.profits for b in blocks])
    lifetimes = np.concatenate([b.lifetimes for b in blocks])
    return SimulationReport(
        initial_state=float(r0),
        paths=paths,
        mean_profit=float(np.sum(profits) / paths),
        std_error=float(np.std(profits, ddof=1) / math.sqrt(paths)),
        mean_lifetime=float(np.sum(lifetimes) / paths),
        capped_paths=sum(b.capped for b in blocks),
        discount_truncation_bound=float(epsilon_tail),
        horizon=float(t_max),
        interventions_per_path=sum(b.interventions for b in blocks) / paths,
        chained_intervention_paths=sum(b.chained for b in blocks),
    )


def uncontrolled_failure_time_stats(
    model: ModelSpec,
    r0: float,
    paths: int = 100_000,
    seed: int = 0,
    t_max: float = 1e6,
    return_gaps: bool = False,
):
    """Failure-time summary of the process with no interventions.

    Paths still alive at ``t_max`` are counted with lifetime ``t_max`` and
    reported in ``capped_paths``. With ``return_gaps`` the simulated
    inter-arrival gaps are returned as well.
    """
    if paths < 2:
        raise SimulationConfigError("need at least 2 paths")
    if model.lam <= 0:
        raise SimulationConfigError("uncontrolled failure times need lambda > 0")
    blocks = _run_blocks(model, None, r0, paths, seed, t_max, 1, collect_gaps=return_gaps)
    tau = np.concatenate([b.lifetimes for b in blocks])
    stats = LifetimeStats(
        paths=paths,
        mean=float(np.sum(tau) / paths),
        std_error=float(np.std(tau, ddof=1) / math.sqrt(paths)),
        quantiles={q: float(np.quantile(tau, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)},
        capped_paths=sum(b.capped for b in blocks),
    )
    if return_gaps:
        return stats, np.concatenate([b.gaps for b in blocks if b.gaps is not None])
    return stats
