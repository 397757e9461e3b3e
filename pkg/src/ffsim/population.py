"""Agent properties and the six heterogeneity scenarios.

Each agent carries a fixed triple of properties: its own period ``tau``
(seconds between stepping attempts), its aggressiveness ``gamma``
(ability to win movement conflicts) and its sensitivity to occupation
``k_o`` (reluctance to target an occupied cell).  A scenario is a small
set of property groups with probabilities; agents draw their group once
and keep it for the whole run, including through periodic re-entry.
"""

import random
from dataclasses import dataclass, field

from .lattice import Cell

# canonical scenario tags in presentation order
SCENARIO_TAGS = ("hom", "tau", "agr", "obs", "agr_obs_indep", "agr_obs_dep")

# accepted spellings for each tag (CLI / config input)
_TAG_ALIASES = {
    "hom": "hom", "1": "hom",
    "tau": "tau", "2": "tau",
    "agr": "agr", "3": "agr",
    "obs": "obs", "4": "obs",
    "agr,obs": "agr_obs_indep", "agr_obs_indep": "agr_obs_indep", "5": "agr_obs_indep",
    "agr+obs": "agr_obs_dep", "agr_obs_dep": "agr_obs_dep", "6": "agr_obs_dep",
}

# display names used in output files
SCENARIO_LABELS = {
    "hom": "hom", "tau": "tau", "agr": "agr", "obs": "obs",
    "agr_obs_indep": "agr,obs", "agr_obs_dep": "agr+obs",
}


@dataclass(frozen=True)
class AgentParams:
    tau: float
    gamma: float
    k_o: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.k_o <= 1.0:
            raise ValueError(f"k_o must be in [0, 1], got {self.k_o}")


@dataclass
class Agent:
    """One agent: identity, fixed properties, and mutable simulation state."""

    id: int
    params: AgentParams
    position: Cell | None = None
    next_activation: float = 0.0
    bond_target: Cell | None = None
    t_in: float = 0.0


@dataclass(frozen=True)
class Scenario:
    tag: str
    groups: tuple[tuple[AgentParams, float], ...]

    def __post_init__(self):
        total = sum(p for _, p in self.groups)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"group probabilities must sum to 1, got {total}")

    @property
    def label(self) -> str:
        return SCENARIO_LABELS[self.tag]


# baseline (homogeneous) property values
_TAU = 0.2
_GAMMA = 0.14
_KO = 0.9
# heterogeneous alternatives
_TAU_HET = (0.15, 0.4)
_GAMMA_HET = (0.0, 1.0)
_KO_HET = (0.1, 0.95)


def normalize_tag(tag: str) -> str:
    key = tag.strip().lower()
    if key not in _TAG_ALIASES:
        raise ValueError(
            f"unknown scenario tag {tag!r}; expected one of "
            "hom|tau|agr|obs|agr,obs|agr+obs or 1..6")
    return _TAG_ALIASES[key]


def scenario_groups(tag: str) -> Scenario:
    """Return the property groups of one of the six scenarios.

    1 hom       single group (0.2, 0.14, 0.9)
    2 tau       own period split {0.15, 0.4}
    3 agr       aggressiveness split {0, 1}
    4 obs       occupation sensitivity split {0.1, 0.95}
    5 agr,obs   independent 2x2 product of the agr and obs splits
    6 agr+obs   dependent: the aggressive group is also the overtaking
                one (gamma=1 with k_o=0.95, gamma=0 with k_o=0.1)
    """
    tag = normalize_tag(tag)
    if tag == "hom":
        groups = [(AgentParams(_TAU, _GAMMA, _KO), 1.0)]
    elif tag == "tau":
        groups = [(AgentParams(t, _GAMMA, _KO), 0.5) for t in _TAU_HET]
    elif tag == "agr":
        groups = [(AgentParams(_TAU, g, _KO), 0.5) for g in _GAMMA_HET]
    elif tag == "obs":
        groups = [(AgentParams(_TAU, _GAMMA, k), 0.5) for k in _KO_HET]
    elif tag == "agr_obs_indep":
        groups = [(AgentParams(_TAU, g, k), 0.25)
                  for g in _GAMMA_HET for k in _KO_HET]
    else:  # agr_obs_dep
        groups = [(AgentParams(_TAU, 1.0, 0.95), 0.5),
                  (AgentParams(_TAU, 0.0, 0.1), 0.5)]
    return Scenario(tag=tag, groups=tuple(groups))


def sample_population(scenario: Scenario, n: int, rng: random.Random) -> list[Agent]:
    """Draw ``n`` agents with independent group assignments.

    Consumes exactly one uniform draw per agent, in id order 0..n-1.
    Positions are left unset; placement is the harness's job.
    """
    if n < 1:
        raise ValueError(f"population size must be >= 1, got {n}")
    cumulative: list[tuple[float, AgentParams]] = []
    acc = 0.0
    for params, prob in scenario.groups:
        acc += prob
        cumulative.append((acc, params))
    agents = []
    for i in range(n):
        u = rng.random()
        for bound, params in cumulative:
            if u < bound:
                agents.append(Agent(id=i, params=params))
                break
        else:  # u landed on the top boundary; assign the last group
            agents.append(Agent(id=i, params=cumulative[-1][1]))
    return agents
