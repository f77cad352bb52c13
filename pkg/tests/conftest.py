import numpy as np
import pytest

from stableplan.environments import FiniteMdp


def concentration_mdp() -> FiniteMdp:
    """Three states, two actions; state 2 is an absorbing zero-reward sink.

    States 0 and 1 fall into the sink with probability 1/2 per step, so the
    value beyond depth H shrinks like 0.3**H at gamma = 0.6.
    """
    P = np.zeros((3, 2, 3))
    P[0, 0] = [0.3, 0.2, 0.5]
    P[0, 1] = [0.1, 0.4, 0.5]
    P[1, 0] = [0.4, 0.1, 0.5]
    P[1, 1] = [0.2, 0.3, 0.5]
    P[2, :] = [0.0, 0.0, 1.0]
    R = np.array([[1.0, 0.8], [0.6, 0.9], [0.0, 0.0]])
    return FiniteMdp(P, R, gamma=0.6, r_max=1.0)


@pytest.fixture
def small_mdp():
    return concentration_mdp()


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
