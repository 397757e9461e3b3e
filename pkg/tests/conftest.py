"""Shared fixtures; the session-scoped experiment cache feeds the acceptance suite."""

import pytest

from ffsim.harness import ExperimentConfig, run_single
from ffsim.lattice import build_room

# run grids backing the acceptance criteria (20 repetitions each)
ACCEPTANCE_GRIDS = {
    "hom": (1, 3, 5, 7, 10, 12, 14, 17, 20, 30, 40, 45, 50, 75, 100),
    "agr": (10, 20, 30, 40, 45, 50),
    "obs": (20, 75),
    "agr_obs_dep": (30, 40, 45, 50),
}
ACCEPTANCE_REPS = 20


@pytest.fixture(scope="session")
def room18x11():
    return build_room(18, 11)


@pytest.fixture(scope="session")
def acceptance_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def acceptance_runs(acceptance_config):
    """All simulation runs the quantitative criteria draw from.

    Keyed by (scenario tag, occupancy); each value is a list of
    RunResult over repetitions.  Seeds follow the harness convention
    (seed_base + index over the scenario's own (N, rep) grid), so
    scenarios share random numbers where their grids overlap.
    """
    config = acceptance_config
    room = config.build_room()
    runs: dict[tuple[str, int], list] = {}
    for tag, grid in ACCEPTANCE_GRIDS.items():
        index = 0
        for n in grid:
            per_n = []
            for rep in range(ACCEPTANCE_REPS):
                per_n.append(run_single(config, tag, n, rep,
                                        config.seed_base + index, room=room))
                index += 1
            runs[(tag, n)] = per_n
    return runs
