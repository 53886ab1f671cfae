"""Config parsing, run artifacts, and CSV plot data.

Configs are YAML documents::

    lambda: 0.5
    delta: 0.2
    ceiling: 1.0
    shocks:  {kind: lognormal_moments, params: {mean: 0.3, sd: 1.0}}
    utility: {kind: exponential_aversion, params: {C: 5, alpha: 2}}
    cost:    {kind: quadratic, params: {K: 0.1}}
    grid:    {h: 0.005}
    solver:  {epsilon: 1.0e-8, max_iter: 10000}

Artifacts are JSON documents tagged with ``format_version``.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import yaml

from . import model as m
from .solver import (
    CEMETERY,
    DEFAULT_EPSILON,
    DEFAULT_MAX_ITER,
    INTERVENE,
    Policy,
    ResidualReport,
    ValueFunction,
)

FORMAT_VERSION = 1
DEFAULT_H = 0.005


class ConfigError(ValueError):
    """Malformed or invalid configuration; names the offending field."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        where = ""
        if field:
            where += f"field '{field}'"
        if line:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}" if where else message)
        self.field = field
        self.line = line


class ArtifactIntegrityError(ValueError):
    pass


class ArtifactVersionError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: m.ModelSpec
    h: float = DEFAULT_H
    epsilon: float = DEFAULT_EPSILON
    max_iter: int = DEFAULT_MAX_ITER


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------

_TOP_KEYS = {"lambda", "delta", "ceiling", "threshold", "shocks", "utility", "cost", "grid", "solver"}
_SECTION_KEYS = {"kind", "params", "source"}
_PARAMS = {
    "shocks": {
        "lognormal_log": {"location", "scale"},
        "lognormal_moments": {"mean", "sd"},
        "exponential": {"rate"},
        "tabulated": {"values"},
    },
    "utility": {"exponential_aversion": {"C", "alpha"}, "tabulated": {"values"}},
    "cost": {"quadratic": {"K"}, "tabulated": {"matrix"}},
}


def _line_index(text: str) -> dict[str, int]:
    """Map dotted key paths to 1-based line numbers."""
    lines: dict[str, int] = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return lines


class _Reader:
    def __init__(self, lines: dict[str, int]):
        self.lines = lines

    def fail(self, path: str, msg: str):
        raise ConfigError(msg, field=path, line=self.lines.get(path))

    def number(self, d: dict, key: str, path: str, default=None) -> float:
        if key not in d:
            if default is not None:
                return default
            self.fail(path, "missing required field")
        v = d[key]
        # PyYAML reads 1e-8 (no dot) as a string
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                self.fail(path, f"expected a number, got {d[key]!r}")
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(path, f"expected a finite number, got {d[key]!r}")
        return float(v)

    def section(self, d: dict, key: str) -> tuple[str, dict]:
        sec = d.get(key)
        if not isinstance(sec, dict):
            self.fail(key, "missing or not a mapping")
        unknown = set(sec) - _SECTION_KEYS
        if unknown:
            self.fail(f"{key}.{sorted(unknown)[0]}", "unknown key")
        kind = sec.get("kind")
        if kind not in _PARAMS[key]:
            self.fail(f"{key}.kind", f"unknown kind {kind!r}; expected one of {sorted(_PARAMS[key])}")
        params = sec.get("params")
        if not isinstance(params, dict):
            self.fail(f"{key}.params", "missing or not a mapping")
        extra = set(params) - _PARAMS[key][kind]
        if extra:
            self.fail(f"{key}.params.{sorted(extra)[0]}", f"unknown parameter for kind {kind!r}")
        return kind, params


def _build(data: Any, lines: dict[str, int]) -> RunConfig:
    rd = _Reader(lines)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at top level")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        rd.fail(sorted(unknown)[0], "unknown key")

    lam = rd.number(data, "lambda", "lambda")
    delta = rd.number(data, "delta", "delta")
    ceiling = rd.number(data, "ceiling", "ceiling", default=1.0)
    threshold = rd.number(data, "threshold", "threshold", default=0.0)
    if lam < 0:
        rd.fail("lambda", "invariant violated: lambda must be >= 0")
    if delta <= 0:
        rd.fail("delta", "invariant violated: delta must be > 0 (discounting keeps V bounded)")
    if ceiling <= 0:
        rd.fail("ceiling", "invariant violated: ceiling must be > 0")
    if threshold != 0:
        rd.fail("threshold", "invariant violated: failure threshold is fixed at 0")

    def guarded(path, fn):
        try:
            return fn()
        except m.ModelError as exc:
            rd.fail(path, f"invariant violated: {exc}")

    kind, p = rd.section(data, "shocks")
    if kind == "lognormal_log":
        loc = rd.number(p, "location", "shocks.params.location")
        scale = rd.number(p, "scale", "shocks.params.scale")
        # artifacts echo the moments a law was resolved from; keep them for round trips
        src = data["shocks"].get("source")
        if isinstance(src, dict) and src.get("kind") == "lognormal_moments":
            sp = src.get("params") or {}
            shocks = guarded("shocks.source", lambda: m.LognormalShocks(
                loc, scale, "moments",
                (("mean", rd.number(sp, "mean", "shocks.source.params.mean")),
                 ("sd", rd.number(sp, "sd", "shocks.source.params.sd")))))
        else:
            shocks = guarded("shocks.params", lambda: m.LognormalShocks(loc, scale))
    elif kind == "lognormal_moments":
        shocks = guarded("shocks.params", lambda: m.LognormalShocks.from_moments(
            rd.number(p, "mean", "shocks.params.mean"), rd.number(p, "sd", "shocks.params.sd")))
    elif kind == "exponential":
        shocks = guarded("shocks.params", lambda: m.ExponentialShocks(rd.number(p, "rate", "shocks.params.rate")))
    else:
        vals = p.get("values")
        if not isinstance(vals, list) or not all(isinstance(x, list) and len(x) == 2 for x in vals):
            rd.fail("shocks.params.values", "expected a list of [size, probability] pairs")
        shocks = guarded("shocks.params.values", lambda: m.TabulatedShocks(
            tuple((float(s), float(q)) for s, q in vals)))

    kind, p = rd.section(data, "utility")
    if kind == "exponential_aversion":
        utility = guarded("utility.params", lambda: m.ExponentialAversionUtility(
            rd.number(p, "C", "utility.params.C"), rd.number(p, "alpha", "utility.params.alpha")))
    else:
        vals = p.get("values")
        if not isinstance(vals, list):
            rd.fail("utility.params.values", "expected a list of node values")
        utility = guarded("utility.params.values", lambda: m.TabulatedUtility(
            tuple(float(x) for x in vals), ceiling))

    kind, p = rd.section(data, "cost")
    if kind == "quadratic":
        k = rd.number(p, "K", "cost.params.K")
        if k <= 0:
            rd.fail("cost.params.K", "invariant violated: K must be > 0 so that C > 0")
        cost = m.QuadraticCost(k)
    else:
        mat = p.get("matrix")
        if not isinstance(mat, list) or not all(isinstance(r, list) for r in mat):
            rd.fail("cost.params.matrix", "expected a list of rows")
        cost = guarded("cost.params.matrix", lambda: m.TabulatedCost(
            tuple(tuple(float(x) for x in r) for r in mat), ceiling))

    grid = data.get("grid", {}) or {}
    solver = data.get("solver", {}) or {}
    for name, sec, allowed in (("grid", grid, {"h"}), ("solver", solver, {"epsilon", "max_iter"})):
        if not isinstance(sec, dict):
            rd.fail(name, "expected a mapping")
        extra = set(sec) - allowed
        if extra:
            rd.fail(f"{name}.{sorted(extra)[0]}", "unknown key")
    h = rd.number(grid, "h", "grid.h", default=DEFAULT_H)
    eps = rd.number(solver, "epsilon", "solver.epsilon", default=DEFAULT_EPSILON)
    max_iter = solver.get("max_iter", DEFAULT_MAX_ITER)
    if not isinstance(max_iter, int) or isinstance(max_iter, bool) or max_iter < 1:
        rd.fail("solver.max_iter", "expected a positive integer")
    if eps <= 0:
        rd.fail("solver.epsilon", "must be > 0")

    model = guarded("model", lambda: m.ModelSpec(
        lam=lam, shocks=shocks, utility=utility, cost=cost, delta=delta, ceiling=ceiling))
    return RunConfig(model=model, h=h, epsilon=eps, max_iter=max_iter)


def parse_model_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed document: {exc}", line=mark.line + 1 if mark else None) from exc
    return _build(data, _line_index(text))


def model_to_dict(model: m.ModelSpec) -> dict:
    """Resolved model description; lognormal laws always appear in log space."""
    return {
        "lambda": model.lam,
        "delta": model.delta,
        "ceiling": model.ceiling,
        "threshold": model.threshold,
        "shocks": model.shocks.describe(),
        "utility": model.utility.describe(),
        "cost": model.cost.describe(),
    }


def model_from_dict(d: dict) -> m.ModelSpec:
    d = {k: v for k, v in d.items()}
    return _build(d, {}).model


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunArtifact:
    model: m.ModelSpec
    value_function: ValueFunction
    policy: Policy
    residuals: ResidualReport
    max_iter: int = DEFAULT_MAX_ITER
    region_tol: Optional[float] = None

    @property
    def grid(self):
        return self.value_function.grid


def _floats(a) -> list[float]:
    return [float(x) for x in a]


def artifact_to_dict(art: RunArtifact) -> dict:
    vf, pol, res = art.value_function, art.policy, art.residuals
    nodes = _floats(vf.grid.nodes)
    return {
        "format_version": FORMAT_VERSION,
        "model_echo": model_to_dict(art.model),
        "grid_meta": {"h": vf.grid.h, "N": vf.grid.n},
        "value_table": [[r, v] for r, v in zip(nodes, _floats(vf.values))],
        "policy_table": [
            [r, lab, z, t] for r, lab, z, t in zip(nodes, pol.labels, _floats(pol.zeta), _floats(pol.targets))
        ],
        "residual_table": [
            [r, a, b] for r, a, b in zip(nodes, _floats(res.dynkin), _floats(res.intervention))
        ],
        "solve_meta": {
            "iterations": vf.iterations,
            "epsilon": vf.tolerance,
            "final_gap": vf.final_gap,
            "max_iter": art.max_iter,
            "region_tol": art.region_tol if art.region_tol is not None else 10 * vf.tolerance,
            "boundary": pol.boundary,
            "monotone_violation": vf.monotone_violation,
        },
    }


def save_artifact(art: RunArtifact) -> str:
    return json.dumps(artifact_to_dict(art), indent=1) + "\n"


def _require(cond: bool, msg: str):
    if not cond:
        raise ArtifactIntegrityError(msg)


def load_artifact(text: str) -> RunArtifact:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactIntegrityError(f"not a valid artifact document: {exc}") from exc
    _require(isinstance(doc, dict), "artifact must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactVersionError(f"artifact format version {version!r} is not supported (expected {FORMAT_VERSION})")
    for key in ("model_echo", "grid_meta", "value_table", "policy_table", "residual_table", "solve_meta"):
        _require(key in doc, f"missing {key}")
    try:
        model = model_from_dict(doc["model_echo"])
    except ConfigError as exc:
        raise ArtifactIntegrityError(f"model_echo: {exc}") from exc
    h = doc["grid_meta"].get("h")
    n = doc["grid_meta"].get("N")
    _require(isinstance(n, int) and n >= 1 and isinstance(h, (int, float)), "grid_meta needs h and N")
    grid = m.build_grid(model, float(h))
    _require(grid.n == n, "grid_meta N does not match ceiling / h")

    vt, pt, rt = doc["value_table"], doc["policy_table"], doc["residual_table"]
    for name, table, width in (("value_table", vt, 2), ("policy_table", pt, 4), ("residual_table", rt, 3)):
        _require(isinstance(table, list) and len(table) == n + 1, f"{name} must have N+1 rows")
        _require(all(isinstance(row, list) and len(row) == width for row in table), f"{name} rows must have {width} columns")
    rs = np.array([row[0] for row in vt], dtype=float)
    _require(bool(np.all(np.diff(rs) > 0)), "value_table states must be strictly increasing")
    _require(np.allclose(rs, grid.nodes, rtol=0, atol=1e-9), "value_table states do not match the grid")
    _require([row[0] for row in pt] == [row[0] for row in vt], "policy_table states differ from value_table")
    _require([row[0] for row in rt] == [row[0] for row in vt], "residual_table states differ from value_table")
    # keep the stored node coordinates bit-for-bit
    grid = m.Grid(h=grid.h, n=grid.n, nodes=rs, density=grid.density)

    labels = tuple(row[1] for row in pt)
    _require(all(lab in (CEMETERY, INTERVENE, "B") for lab in labels), "unknown region label")
    zeta = np.array([row[2] for row in pt], dtype=float)
    zeta_index = np.rint(zeta / grid.h).astype(int)
    meta = doc["solve_meta"]
    vf = ValueFunction(
        grid=grid,
        values=np.array([row[1] for row in vt], dtype=float),
        iterations=int(meta["iterations"]),
        final_gap=float(meta["final_gap"]),
        tolerance=float(meta["epsilon"]),
        monotone_violation=float(meta.get("monotone_violation", 0.0)),
    )
    pol = Policy(grid, labels, zeta_index, float(meta["boundary"]))
    _require(np.array_equal(pol.zeta, zeta), "policy_table zeta values are not grid multiples")
    res = ResidualReport(
        dynkin=np.array([row[1] for row in rt], dtype=float),
        intervention=np.array([row[2] for row in rt], dtype=float),
    )
    return RunArtifact(model, vf, pol, res, int(meta["max_iter"]), float(meta["region_tol"]))


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_plot_data(art: RunArtifact, which: str) -> str:
    """CSV text for ``value_function``, ``policy`` or ``residuals``, ordered by state."""
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    nodes = art.grid.nodes
    if which == "value_function":
        w.writerow(["r", "V"])
        for r, v in zip(nodes, art.value_function.values):
            w.writerow([_fmt(r), _fmt(v)])
    elif which == "policy":
        w.writerow(["r", "region", "zeta_star", "target"])
        pol = art.policy
        for r, lab, z, t in zip(nodes, pol.labels, pol.zeta, pol.targets):
            w.writerow([_fmt(r), lab, _fmt(z), _fmt(t)])
    elif which == "residuals":
        res = art.residuals
        w.writerow(["r", "dynkin_residual", "intervention_residual", "qvi_residual"])
        for row in zip(nodes, res.dynkin, res.intervention, res.qvi):
            w.writerow([_fmt(x) for x in row])
    else:
        raise ValueError(f"unknown export {which!r}; expected value_function, policy or residuals")
    return buf.getvalue()
