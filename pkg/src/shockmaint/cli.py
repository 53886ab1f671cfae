"""``shockmaint`` command line: solve, query, simulate, export.

Exit codes: 0 success, 1 domain/validation error, 2 non-convergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import io as sio
from .model import ModelError, build_grid
from .simulator import DEFAULT_EPSILON_TAIL, estimate_profit, uncontrolled_failure_time_stats
from .solver import (
    CEMETERY,
    INTERVENE,
    NonConvergenceError,
    extract_policy,
    qvi_residuals,
    shift_boundary,
    solve,
)

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_IO = 0, 1, 2, 3


class _IOFailure(Exception):
    pass


def _write_atomic(path: str, text: str) -> None:
    target = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent or ".")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from exc


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _IOFailure(f"cannot read {path}: {exc}") from exc


def _load_artifact(path: str) -> sio.RunArtifact:
    return sio.load_artifact(_read(path))


def cmd_solve(args) -> int:
    cfg = sio.parse_model_config(_read(args.config))
    h = args.h if args.h is not None else cfg.h
    eps = args.epsilon if args.epsilon is not None else cfg.epsilon
    max_iter = args.max_iter if args.max_iter is not None else cfg.max_iter
    grid = build_grid(cfg.model, h)
    start = time.perf_counter()
    try:
        vf = solve(cfg.model, grid, eps, max_iter)
    except NonConvergenceError as exc:
        print(f"not converged: {exc.iterations} sweeps, final gap {exc.gap!r}")
        return EXIT_NONCONVERGED
    policy = extract_policy(vf, cfg.model)
    res = qvi_residuals(vf, cfg.model)
    elapsed = time.perf_counter() - start
    art = sio.RunArtifact(cfg.model, vf, policy, res, max_iter, 10 * eps)
    _write_atomic(args.out, sio.save_artifact(art))
    shocks = cfg.model.shocks.describe()
    print(f"iterations={vf.iterations}")
    print(f"final_gap={vf.final_gap!r}")
    print(f"boundary={policy.boundary!r}")
    print(f"max_abs_qvi_residual={res.max_abs_qvi()!r}")
    print(f"shocks={shocks['kind']} {shocks['params']}")
    print(f"h={grid.h!r} N={grid.n} solve_seconds={elapsed:.3f}")
    return EXIT_OK


def interpolate_value(art: sio.RunArtifact, r: float) -> float:
    return float(np.interp(r, art.grid.nodes, art.value_function.values))


def cmd_query(args) -> int:
    art = _load_artifact(args.artifact)
    r = args.state
    ceiling = art.model.ceiling
    if not 0 <= r <= ceiling:
        print(f"error: state {r!r} outside [0, {ceiling}]", file=sys.stderr)
        return EXIT_INVALID
    j, label, zeta = art.policy.action_at(r)
    value = 0.0 if r == 0 else interpolate_value(art, r)
    target = min(r + zeta, ceiling)
    print(f"region={label} zeta={zeta!r} target={target!r} value={value!r}")
    if label == CEMETERY:
        print(f"# state {r} maps to the failure node; no action applies")
    elif label == INTERVENE:
        print(f"# intervene now: raise the state by {zeta:.4g} to {target:.4g}")
    else:
        print("# no intervention required")
    return EXIT_OK


def _policy_variant(art: sio.RunArtifact, spec: str):
    if spec == "solved":
        return art.policy
    if spec == "none":
        return None
    if spec.startswith("shifted:"):
        try:
            d = float(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"invalid policy variant {spec!r}") from None
        return shift_boundary(art.policy, d)
    raise ValueError(f"invalid policy variant {spec!r}; expected solved, none or shifted:<d>")


def cmd_simulate(args) -> int:
    art = _load_artifact(args.artifact)
    policy = _policy_variant(art, args.policy)
    report = estimate_profit(
        art.model, policy, args.state, args.paths, args.seed, args.epsilon_tail, args.workers
    )
    for line in report.lines():
        print(line)
    print(f"solved_value={interpolate_value(art, args.state)!r}")
    if policy is None and art.model.lam > 0:
        stats = uncontrolled_failure_time_stats(art.model, args.state, args.paths, args.seed)
        print(f"failure_time_mean={stats.mean!r}")
        print(f"failure_time_std_error={stats.std_error!r}")
        for q, v in stats.quantiles.items():
            print(f"failure_time_q{q:g}={v!r}")
    return EXIT_OK


def cmd_export(args) -> int:
    art = _load_artifact(args.artifact)
    _write_atomic(args.out, sio.export_plot_data(art, args.which))
    print(f"wrote {args.which} to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shockmaint", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve for the value function and optimal policy")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--h", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--max-iter", type=int)
    s.set_defaults(func=cmd_solve)

    q = sub.add_parser("query", help="look up the action and value at a state")
    q.add_argument("--artifact", required=True)
    q.add_argument("--state", type=float, required=True)
    q.set_defaults(func=cmd_query)

    m = sub.add_parser("simulate", help="Monte Carlo estimate of the discounted profit")
    m.add_argument("--artifact", required=True)
    m.add_argument("--state", type=float, required=True)
    m.add_argument("--paths", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--policy", default="solved")
    m.add_argument("--epsilon-tail", type=float, default=DEFAULT_EPSILON_TAIL)
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_simulate)

    e = sub.add_parser("export", help="write plot data as CSV")
    e.add_argument("--artifact", required=True)
    e.add_argument("--which", required=True, choices=["value_function", "policy", "residuals"])
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (sio.ConfigError, sio.ArtifactIntegrityError, sio.ArtifactVersionError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
