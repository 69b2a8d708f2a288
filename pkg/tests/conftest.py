import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from riskshare.preferences import Agent, UtilityFunction, WeightingFunction
from riskshare.prob_core import Allocation, FiniteProbSpace, RandomVariable

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=100, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance():
    return ACCEPTANCE


@st.composite
def probs(draw, min_size=1, max_size=6):
    m = draw(st.integers(min_size, max_size))
    raw = draw(st.lists(st.integers(1, 20), min_size=m, max_size=m))
    return np.asarray(raw, dtype=float) / sum(raw)


@st.composite
def allocations(draw, max_atoms=6, max_agents=4):
    p = draw(probs(1, max_atoms))
    n = draw(st.integers(1, max_agents))
    vals = draw(
        st.lists(
            st.one_of(st.just(0.0), st.floats(0.0, 5.0, allow_nan=False)), min_size=n * p.size, max_size=n * p.size
        )
    )
    return Allocation(FiniteProbSpace.from_probs(p), np.asarray(vals).reshape(n, p.size))


@st.composite
def nonneg_rvs(draw, space=None, max_atoms=6):
    if space is None:
        space = FiniteProbSpace.from_probs(draw(probs(1, max_atoms)))
    vals = draw(st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=space.size, max_size=space.size))
    return RandomVariable(space, np.asarray(vals))


def convex_agent(alpha: float, scale: float = 1.0) -> Agent:
    return Agent(UtilityFunction("power", {"alpha": alpha, "scale": scale}))


def tk_agent(gamma: float = 0.71) -> Agent:
    return Agent(UtilityFunction("linear_log", {"a": 1.0, "x0": 1.0}), WeightingFunction("tk", {"gamma": gamma}))
