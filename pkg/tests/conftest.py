import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from gencert.votetab import TiePolicy, VoteTable

settings.register_profile(
    "default", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

POLICIES = list(TiePolicy)


@st.composite
def vote_tables(draw, max_classes=6, max_count=15, max_id=9, min_total=1):
    ids = draw(st.lists(st.integers(0, max_id), min_size=1, max_size=max_classes, unique=True))
    counts = {t: draw(st.integers(0, max_count)) for t in ids}
    if sum(counts.values()) < min_total:
        counts[ids[0]] = min_total
    return VoteTable(counts)


policies = st.sampled_from(POLICIES)


def random_table(rng: random.Random, max_total=40, max_classes=8, max_id=12) -> VoteTable:
    k = rng.randint(1, max_classes)
    ids = rng.sample(range(max_id + 1), k)
    total = rng.randint(1, max_total)
    counts = dict.fromkeys(ids, 0)
    for _ in range(total):
        counts[rng.choice(ids)] += 1
    return VoteTable(counts)


@pytest.fixture
def rng():
    return random.Random(1234)


# verdict lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
