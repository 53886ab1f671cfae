import sys
from pathlib import Path

import pytest

from shockmaint import io as sio
from shockmaint.model import (
    ExponentialAversionUtility,
    ExponentialShocks,
    ModelSpec,
    QuadraticCost,
    TabulatedShocks,
    build_grid,
)
from shockmaint.solver import extract_policy, solve

sys.path.insert(0, str(Path(__file__).parent))

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def reference_model(kind="moments"):
    return sio.parse_model_config((CONFIGS / f"reference_{kind}.yaml").read_text()).model


def exp_shock_model(**kw):
    args = dict(
        lam=0.5,
        shocks=ExponentialShocks(4.0),
        utility=ExponentialAversionUtility(5.0, 2.0),
        cost=QuadraticCost(0.1),
        delta=0.2,
    )
    args.update(kw)
    return ModelSpec(**args)


def point_mass_model(size=0.25, **kw):
    return exp_shock_model(shocks=TabulatedShocks(((size, 1.0),)), **kw)


@pytest.fixture(scope="session")
def reference_run():
    model = reference_model("moments")
    grid = build_grid(model, 0.005)
    vf = solve(model, grid)
    return model, grid, vf, extract_policy(vf, model)


ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
