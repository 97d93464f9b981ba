from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def random_instance(rng, n_max=16, c_range=None):
    """Seeded instance with a, b, d log-uniform in [1e-2, 1e2] and c log-uniform in c_range."""
    n = int(rng.integers(1, n_max + 1))
    a = 10 ** rng.uniform(-2, 2, n)
    b = 10 ** rng.uniform(-2, 2, n)
    d = float(10 ** rng.uniform(-2, 2))
    c = None if c_range is None else np.exp(rng.uniform(*np.log(c_range), n))
    return a, b, c, d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
