import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_connected_edges(n, extra, rng):
    """Random spanning tree plus ``extra`` random chords."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        edges.add((int(min(a, b)), int(max(a, b))))
    return sorted(edges)


# ---------------------------------------------------------------- acceptance report
_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        ok = et is None
        detail = self.detail if ok or self.detail else f"{et.__name__}: {ev}".splitlines()[0]
        _ACCEPTANCE[self.number] = (self.title, ok, detail)
        line = f"ACCEPTANCE {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}  [{detail}]"
        print(line, flush=True)
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c: ...`` records a pass/fail line for criterion ``n``."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"{n:>2} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
