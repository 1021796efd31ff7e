import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rarl.ordinal import ItemBatch, RankScale

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

AGE = RankScale(101, 0.0, 100.0)

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def brute_force_tau(a, b):
    """O(n^2) pair count: +1 concordant, -1 discordant, over all id pairs."""
    pos_a = {x: i for i, x in enumerate(a)}
    pos_b = {x: i for i, x in enumerate(b)}
    conc = disc = 0
    for x, y in itertools.combinations(a, 2):
        s = (pos_a[x] - pos_a[y]) * (pos_b[x] - pos_b[y])
        if s > 0:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / (conc + disc)


def make_batch(truths, scale=AGE, features=None, batch_id="b0"):
    return ItemBatch.from_truths(batch_id, truths, scale, features)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
