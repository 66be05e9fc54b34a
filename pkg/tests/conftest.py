import numpy as np
import pytest

from qsecure.scoring import AccessEvent, RiskParams, UserProfile


def make_random_profile(rng: np.random.Generator, user_id: str = "u") -> UserProfile:
    n = int(rng.integers(0, 40))
    times = rng.uniform(-20, 120, size=n)
    events = [AccessEvent(float(t), f"d{int(rng.integers(20))}", int(rng.integers(1, 6))) for t in times]
    leaks = [bool(x) for x in rng.random(n) < rng.random()]
    attempts = [(float(t), f"x{int(rng.integers(5))}") for t in rng.uniform(-20, 120, size=int(rng.integers(0, 8)))]
    return UserProfile(user_id, "pw", events, leaks, attempts)


def recount(profile: UserProfile, window: tuple[float, float]):
    """Vectorised recount, sharing no code with the engine."""
    ta, tb = window
    if profile.interaction_history:
        t = np.array([e.time for e in profile.interaction_history])
        u = np.array([e.units for e in profile.interaction_history])
        leak = np.array(profile.leak_flags, dtype=bool)
        mask = (t >= ta) & (t <= tb)
        grand = int(u[mask].sum())
        mal = int(u[mask & leak].sum())
    else:
        grand = mal = 0
    at = np.array([a[0] for a in profile.unauthorized_attempts])
    fdb = int(((at >= ta) & (at <= tb)).sum()) if at.size else 0
    return mal, grand, (mal / grand if grand else 0.0), fdb


@pytest.fixture
def params():
    return RiskParams(window=(0.0, 100.0), thr_risk=0.5)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
