"""Problem definition: shock law, utility, cost, discounting, and the state grid.

The state ``r`` lives on ``[0, O]`` where ``O`` is the ceiling (best attainable
condition). Failure happens at ``r <= 0``; the failure threshold is fixed at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import stats


class ModelError(ValueError):
    """Invalid model definition or an out-of-domain evaluation."""


class DomainError(ModelError):
    pass


class AdmissibilityError(ModelError):
    """Intervention would push the state past the ceiling."""


class ConfigurationError(ModelError):
    pass


# slack for floating comparisons against the ceiling
_EDGE_TOL = 1e-12


# --------------------------------------------------------------------------
# Shock size distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LognormalShocks:
    """Lognormal shock sizes with log-space ``location`` and ``scale``.

    ``parameterization`` records how the values were supplied so artifacts can
    echo it back; it does not affect the law.
    """

    location: float
    scale: float
    parameterization: str = "log"
    source_params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.location) and math.isfinite(self.scale)):
            raise ModelError("lognormal parameters must be finite")
        if self.scale <= 0:
            raise ModelError("lognormal scale must be > 0")

    @classmethod
    def from_moments(cls, mean: float, sd: float) -> "LognormalShocks":
        """Build from the arithmetic mean and standard deviation of the shock size."""
        if not (mean > 0 and sd > 0 and math.isfinite(mean) and math.isfinite(sd)):
            raise ModelError("lognormal moments must be finite and > 0")
        s2 = math.log1p((sd / mean) ** 2)
        return cls(
            location=math.log(mean) - 0.5 * s2,
            scale=math.sqrt(s2),
            parameterization="moments",
            source_params=(("mean", float(mean)), ("sd", float(sd))),
        )

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return stats.lognorm.cdf(np.maximum(x, 0.0), s=self.scale, scale=math.exp(self.location))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.lognormal(self.location, self.scale, n)

    def describe(self) -> dict:
        d = {"kind": "lognormal_log", "params": {"location": self.location, "scale": self.scale}}
        if self.parameterization == "moments":
            d["source"] = {"kind": "lognormal_moments", "params": dict(self.source_params)}
        return d


@dataclass(frozen=True)
class ExponentialShocks:
    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ModelError("exponential rate must be finite and > 0")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return -np.expm1(-self.rate * np.maximum(x, 0.0))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, n)

    def describe(self) -> dict:
        return {"kind": "exponential", "params": {"rate": self.rate}}


@dataclass(frozen=True)
class TabulatedShocks:
    """Discrete shock law: ``values`` is a tuple of ``(size, probability)`` pairs."""

    values: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.values:
            raise ModelError("tabulated shocks need at least one (size, probability) pair")
        sizes = [s for s, _ in self.values]
        probs = [p for _, p in self.values]
        if any(not math.isfinite(s) or s <= 0 for s in sizes):
            raise ModelError("tabulated shock sizes must be finite and > 0")
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ModelError("tabulated shock probabilities must be >= 0")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ModelError("tabulated shock probabilities must sum to 1")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s for s, _ in self.values], dtype=float)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.values], dtype=float)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        sizes, probs = self.sizes, self.probs
        return np.sum(np.where(sizes <= x[..., None], probs, 0.0), axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.sizes, size=n, p=self.probs)

    def describe(self) -> dict:
        return {"kind": "tabulated", "params": {"values": [[s, p] for s, p in self.values]}}


ShockDistribution = Union[LognormalShocks, ExponentialShocks, TabulatedShocks]


# --------------------------------------------------------------------------
# Utility and cost
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialAversionUtility:
    """``G(r) = (scale / alpha) * (1 - exp(-alpha r))``."""

    scale: float
    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale >= 0):
            raise ModelError("utility scale C must be finite and >= 0")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ModelError("utility alpha must be finite and > 0")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return -(self.scale / self.alpha) * np.expm1(-self.alpha * r)

    def describe(self) -> dict:
        return {"kind": "exponential_aversion", "params": {"C": self.scale, "alpha": self.alpha}}


@dataclass(frozen=True)
class TabulatedUtility:
    """Utility given at ``len(values)`` equally spaced nodes over ``[0, ceiling]``.

    Off-node states are linearly interpolated.
    """

    values: tuple[float, ...]
    ceiling: float

    def __post_init__(self):
        if len(self.values) < 2:
            raise ModelError("tabulated utility needs at least two nodes")
        if self.values[0] != 0.0:
            raise ModelError("tabulated utility must satisfy G(0) = 0")

    def __call__(self, r):
        nodes = np.linspace(0.0, self.ceiling, len(self.values))
        return np.interp(np.asarray(r, dtype=float), nodes, np.asarray(self.values, dtype=float))

    def describe(self) -> dict:
        return {"kind": "tabulated", "params": {"values": list(self.values)}}


UtilitySpec = Union[ExponentialAversionUtility, TabulatedUtility]


@dataclass(frozen=True)
class QuadraticCost:
    """``C(r, zeta) = r + zeta**2 + fixed``."""

    fixed: float

    def __post_init__(self):
        if not (math.isfinite(self.fixed) and self.fixed > 0):
            raise ModelError("fixed intervention cost K must be finite and > 0 (C > 0 at r = 0)")

    def __call__(self, r, zeta):
        return np.asarray(r, dtype=float) + np.asarray(zeta, dtype=float) ** 2 + self.fixed

    def describe(self) -> dict:
        return {"kind": "quadratic", "params": {"K": self.fixed}}


@dataclass(frozen=True)
class TabulatedCost:
    """Cost on grid node pairs: ``matrix[j][i] = C(j h, i h)`` for ``i <= N - j``.

    Entries with ``i > N - j`` are ignored. Off-grid arguments use the nearest
    node pair (ties to the lower node).
    """

    matrix: tuple[tuple[float, ...], ...]
    ceiling: float

    def __post_init__(self):
        n = len(self.matrix)
        if n < 2 or any(len(row) != n for row in self.matrix):
            raise ModelError("tabulated cost must be a square matrix with at least 2 rows")

    @property
    def intervals(self) -> int:
        return len(self.matrix) - 1

    def __call__(self, r, zeta):
        n = self.intervals
        h = self.ceiling / n
        j = np.clip(nearest_node_index(np.asarray(r, dtype=float), h), 0, n)
        i = np.clip(nearest_node_index(np.asarray(zeta, dtype=float), h), 0, n)
        return np.asarray(self.matrix, dtype=float)[j, i]

    def describe(self) -> dict:
        return {"kind": "tabulated", "params": {"matrix": [list(row) for row in self.matrix]}}


CostSpec = Union[QuadraticCost, TabulatedCost]


def nearest_node_index(r, h: float):
    """Nearest grid index for state(s) ``r``; exact midpoints go to the lower node."""
    idx = np.ceil(np.asarray(r, dtype=float) / h - 0.5).astype(int)
    return idx if idx.ndim else int(idx)


# --------------------------------------------------------------------------
# Model and grid
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    lam: float
    shocks: ShockDistribution
    utility: UtilitySpec
    cost: CostSpec
    delta: float
    ceiling: float = 1.0
    threshold: float = 0.0

    def __post_init__(self):
        # lam == 0 is allowed as the degenerate no-shock case
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ModelError("lambda must be finite and >= 0")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ModelError("delta must be finite and > 0 (discounting keeps V bounded)")
        if not (math.isfinite(self.ceiling) and self.ceiling > 0):
            raise ModelError("ceiling O must be finite and > 0")
        if self.threshold != 0.0:
            raise ModelError("failure threshold is fixed at 0; shift the state variable instead")
        for spec in (self.utility, self.cost):
            c = getattr(spec, "ceiling", self.ceiling)
            if not math.isclose(c, self.ceiling, rel_tol=0, abs_tol=1e-12):
                raise ModelError("tabulated utility/cost ceiling does not match the model ceiling")

    @property
    def value_bound(self) -> float:
        """Upper bound on V: the best utility rate earned forever, discounted."""
        return float(self.utility(self.ceiling)) / self.delta


def evaluate_utility(spec: UtilitySpec, r: float, ceiling: float = 1.0) -> float:
    if not (-_EDGE_TOL <= r <= ceiling + _EDGE_TOL):
        raise DomainError(f"state {r!r} outside [0, {ceiling}]")
    if r <= 0:
        return 0.0
    return float(spec(min(r, ceiling)))


def evaluate_cost(spec: CostSpec, r: float, zeta: float, ceiling: float = 1.0) -> float:
    if not (-_EDGE_TOL <= r <= ceiling + _EDGE_TOL):
        raise DomainError(f"state {r!r} outside [0, {ceiling}]")
    if zeta < 0:
        raise AdmissibilityError(f"intervention size {zeta!r} is negative")
    if r + zeta > ceiling + _EDGE_TOL:
        raise AdmissibilityError(f"intervention {zeta!r} from state {r!r} exceeds ceiling {ceiling}")
    return float(spec(r, zeta))


@dataclass(frozen=True)
class Grid:
    h: float
    n: int
    nodes: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)

    @property
    def ceiling(self) -> float:
        return float(self.nodes[-1])


def discretize_shock_density(shocks: ShockDistribution, h: float, n: int) -> np.ndarray:
    """Midpoint-binned shock weights ``p_0..p_n``.

    ``p_0 = F(h/2)`` and ``p_i = F((i + 1/2) h) - F((i - 1/2) h)``. Mass beyond
    ``(n + 1/2) h`` is dropped: such a shock fails the system from any state.
    """
    edges = (np.arange(n + 1) + 0.5) * h
    cdf = np.asarray(shocks.cdf(edges), dtype=float)
    p = np.diff(cdf, prepend=0.0)
    return np.maximum(p, 0.0)


def build_grid(model: ModelSpec, h: float) -> Grid:
    if not (h > 0 and math.isfinite(h)):
        raise ConfigurationError(f"grid spacing h must be > 0, got {h!r}")
    ratio = model.ceiling / h
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 0.5 * math.ulp(ratio) + 1e-9 * ratio:
        raise ConfigurationError(f"grid spacing h={h!r} does not divide ceiling O={model.ceiling!r}")
    nodes = np.arange(n + 1) * h
    nodes[-1] = model.ceiling
    if isinstance(model.cost, TabulatedCost) and model.cost.intervals != n:
        raise ConfigurationError(
            f"tabulated cost has {model.cost.intervals} intervals but grid has {n}"
        )
    return Grid(h=h, n=n, nodes=nodes, density=discretize_shock_density(model.shocks, h, n))


def check_model_on_grid(model: ModelSpec, grid: Grid) -> None:
    """Validate the utility and cost shape conditions on the grid nodes."""
    g = np.asarray(model.utility(grid.nodes), dtype=float)
    if g[0] != 0.0:
        raise ModelError("utility invariant violated: G(0) must be exactly 0")
    if np.any(g < 0):
        raise ModelError("utility invariant violated: G must be non-negative")
    if np.any(np.diff(g) < 0):
        raise ModelError("utility invariant violated: G must be non-decreasing")
    if g.size > 2 and np.any(np.diff(g, 2) > 1e-12):
        raise ModelError("utility invariant violated: G must be concave")
    c = cost_matrix(model.cost, grid)
    admissible = np.isfinite(c)
    if np.any(c[admissible] <= 0):
        raise ModelError("cost invariant violated: C must be > 0 on admissible pairs")
    # non-decreasing in the action (rows) and in the state (columns, where admissible)
    with np.errstate(invalid="ignore"):
        dz = np.diff(c, axis=1)
        dr = np.diff(c, axis=0)
    if np.any(dz[np.isfinite(dz)] < 0):
        raise ModelError("cost invariant violated: C must be non-decreasing in the intervention size")
    if np.any(dr[np.isfinite(dr)] < 0):
        raise ModelError("cost invariant violated: C must be non-decreasing in the state")


def cost_matrix(cost: CostSpec, grid: Grid) -> np.ndarray:
    """``C(j h, i h)`` for admissible pairs ``i <= N - j``; ``+inf`` elsewhere."""
    n = grid.n
    j = np.arange(n + 1)[:, None]
    i = np.arange(n + 1)[None, :]
    if isinstance(cost, TabulatedCost):
        c = np.asarray(cost.matrix, dtype=float).copy()
    else:
        c = np.asarray(cost(j * grid.h, i * grid.h), dtype=float)
    c[i > n - j] = np.inf
    return c
