import numpy as np
import pytest

from nmtr.data import BehaviorDataset, BehaviorSchema, SynthConfig, synthesize_cascade


def make_dataset(pairs_by_level, num_users, num_items, names=None):
    names = names or [f"b{r + 1}" for r in range(len(pairs_by_level))]
    pairs = [np.asarray(p, dtype=np.int64).reshape(-1, 2) for p in pairs_by_level]
    return BehaviorDataset(BehaviorSchema(names), [f"u{u}" for u in range(num_users)],
                           [f"i{i}" for i in range(num_items)], pairs)


def random_cascade(rng, num_users, num_items, num_behaviors, density=0.3):
    """Nested random behavior sets: each level keeps a random subset of the one below."""
    mask = rng.random((num_users, num_items)) < density
    levels = []
    for _ in range(num_behaviors):
        levels.append(np.argwhere(mask))
        mask = mask & (rng.random(mask.shape) < 0.6)
    return make_dataset(levels, num_users, num_items)


@pytest.fixture
def small_synth():
    return synthesize_cascade(SynthConfig(num_users=80, num_items=40, num_behaviors=2,
                                          funnel_probs=(0.5, 0.3), seed=1))


@pytest.fixture
def synth3():
    return synthesize_cascade(SynthConfig(num_users=60, num_items=30, num_behaviors=3,
                                          funnel_probs=(0.5, 0.5, 0.5), seed=2))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
