"""Simulation engine: scheduling, target choice, bonds, conflicts, egress.

Time is split into steps of length ``h``.  Each agent keeps its own
desired activation time and fires in the step whose window contains it;
after every update the next activation is recomputed from the agent's
own period ``tau`` (times sqrt(2) for a completed diagonal move, which
covers a longer distance).

One step runs through a fixed sequence:

  1. re-entries waiting for a free entrance cell are placed (FIFO);
  2. agents due in this step's window are collected;
  3. every due agent except those standing on the exit samples a target
     cell from the softmax-like distribution over its Moore
     neighborhood; picking its own cell is a stay, picking an occupied
     cell creates a queueing bond, picking an empty cell becomes a move
     proposal;
  4. a due agent standing on the exit cell egresses at its activation
     time and immediately re-enters at the entrance wall (periodic
     boundary); the exit was therefore still occupied during the choice
     stage and its vacancy is handed over through the bond chains;
  5. proposals are grouped per target cell; contested cells are
     resolved by aggressiveness (highest gamma wins; ties block with
     probability mu*(1-gamma), otherwise a uniform pick among the tied);
  6. winners move, and every vacancy created in this step (egress or
     move) fires the bonds pointing at it, chaining down lines of
     waiting agents; each agent moves at most once per step;
  7. the clock advances.

Bonds end at the blocking agent's motion (whether or not the waiting
agent won the vacated cell) and at the waiting agent's own next
activation, whichever comes first.

Randomness comes from a single ``random.Random`` stream per run, drawn
in a fixed order within each step: queued re-entry placement, one
target draw per due agent in ascending agent id, conflict rolls in
ascending target cell index, bond-chain rolls in vacancy (FIFO) order,
egress re-insertion placement in egress order.  Two runs with the same
seed and configuration are bit-identical.
"""

import math
import random
from dataclasses import dataclass

from .lattice import Cell, Room, neighborhood
from .population import Agent

SQRT2 = math.sqrt(2.0)
_NEVER = math.inf


# ---------------------------------------------------------------------------
# stateless pieces, shared by the engine and usable on their own


def target_distribution(agent: Agent, room: Room, occupancy, k_s: float,
                        k_d: float) -> list[tuple[Cell, float]]:
    """Probability of each neighborhood cell as the agent's next target.

    The weight of cell ``y`` seen from ``x`` is
    ``exp(-k_s * S(y)) * (1 - k_o * occupied(y)) * (1 - k_d * diagonal(y))``
    normalized over the clipped Moore neighborhood of ``x`` (which
    contains ``x`` itself; the own cell counts as neither occupied nor
    diagonal).  ``occupancy`` maps Cell -> agent id or None.
    """
    x = agent.position
    if x is None:
        raise ValueError("agent has no position")
    cells = neighborhood(room, x)
    # rescale by the neighborhood minimum so large k_s cannot underflow
    # every weight at once; the normalization cancels the shift exactly
    s_min = min(room.field_at(y) for y in cells)
    one_minus_ko = 1.0 - agent.params.k_o
    one_minus_kd = 1.0 - k_d
    weights = []
    for y in cells:
        w = math.exp(-k_s * (room.field_at(y) - s_min))
        if y != x:
            if occupancy.get(y) is not None:
                w *= one_minus_ko
            if y[0] != x[0] and y[1] != x[1]:
                w *= one_minus_kd
        weights.append(w)
    total = math.fsum(weights)
    if total <= 0.0:
        raise RuntimeError("target weights sum to zero")
    return [(y, w / total) for y, w in zip(cells, weights)]


def choose_target(distribution: list[tuple[Cell, float]], rng: random.Random) -> Cell:
    """Sample one cell from a (cell, probability) list.  One uniform draw."""
    r = rng.random()
    acc = 0.0
    for cell, p in distribution:
        acc += p
        if r < acc:
            return cell
    return distribution[-1][0]


def schedule_next(tau: float, move_was_diagonal: bool, now: float) -> float:
    """Next desired activation after an update at time ``now``.

    Straight moves, stays and blocked attempts cost one period; a
    completed diagonal move costs sqrt(2) periods.
    """
    return now + tau * SQRT2 if move_was_diagonal else now + tau


@dataclass(frozen=True)
class Conflict:
    """Two or more agents proposing the same empty cell in one step."""

    target: Cell
    contenders: tuple[int, ...]


def resolve_conflict(contenders: list[tuple[int, float]], mu: float,
                     rng: random.Random) -> int | None:
    """Pick the winner of one contested cell, or None if nobody moves.

    ``contenders`` pairs agent ids with their aggressiveness.  A unique
    maximum wins outright (no randomness).  Among ``m >= 2`` agents tied
    at gamma = g the attempt blocks entirely with probability
    ``mu * (1 - g)``; otherwise the winner is uniform among the tied.
    """
    gmax = max(g for _, g in contenders)
    top = [a for a, g in contenders if g == gmax]
    if len(top) == 1:
        return top[0]
    if rng.random() < mu * (1.0 - gmax):
        return None
    return top[rng.randrange(len(top))]


def resolve_conflicts(conflicts: list[Conflict], gamma_of, mu: float,
                      rng: random.Random) -> dict[Conflict, int | None]:
    """Resolve a batch of conflicts in the given order.

    ``gamma_of`` maps agent id -> aggressiveness (mapping or sequence).
    """
    getter = gamma_of.__getitem__
    return {
        c: resolve_conflict([(a, getter(a)) for a in c.contenders], mu, rng)
        for c in conflicts
    }


@dataclass(frozen=True)
class StepOutcome:
    step: int
    n_active: int
    egressed: tuple[int, ...]
    n_moves: int
    n_conflicts: int
    n_blocked: int
    n_bond_moves: int


# ---------------------------------------------------------------------------
# the engine


class Simulation:
    """One seeded simulation run on a fixed room with a fixed population.

    Agents must arrive with positions and initial activation times set
    (see :func:`place_agents`).  The run records every egress time and
    every completed passage ``(agent id, t_in, t_out)``, plus the
    change-points of the in-room head count (which only moves when the
    entrance wall is full and re-entries must queue).
    """

    def __init__(self, room: Room, agents: list[Agent], *, k_s: float = 3.5,
                 k_d: float = 0.7, mu: float = 0.9, h: float = 0.2,
                 rng: random.Random, snapshot_times: tuple[float, ...] = (),
                 validate: bool = False, log_conflicts: bool = False):
        if h <= 0:
            raise ValueError(f"step length h must be positive, got {h}")
        self.room = room
        self.h = h
        self.mu = mu
        self.k_s = k_s
        self.k_d = k_d
        self.rng = rng
        self.time_step = 0
        self.egress_count = 0
        self.egress_log: list[float] = []
        self.passages: list[tuple[int, float, float]] = []
        self.validate = validate
        self.conflict_log: list[tuple[str, tuple[float, ...], int | None]] | None = \
            [] if log_conflicts else None

        self.n_agents = len(agents)
        self.agent_params = [a.params for a in agents]
        self._tau = [a.params.tau for a in agents]
        self._gamma = [a.params.gamma for a in agents]
        self._one_minus_ko = [1.0 - a.params.k_o for a in agents]
        self._pos = [-1] * self.n_agents
        self._nact = [0.0] * self.n_agents
        self._t_in = [0.0] * self.n_agents
        self._bond = [-1] * self.n_agents
        self._bond_holders: dict[int, list[int]] = {}
        self._moved = [-1] * self.n_agents
        self._entry_queue: list[int] = []
        self._queue_head = 0

        self._occ = [-1] * room.n_cells
        for a in agents:
            if a.position is None:
                raise ValueError(f"agent {a.id} has no position")
            idx = room.index(a.position)
            if self._occ[idx] >= 0:
                raise ValueError(f"two agents placed on cell {a.position}")
            self._occ[idx] = a.id
            self._pos[a.id] = idx
            self._nact[a.id] = a.next_activation
            self._t_in[a.id] = a.t_in

        self._n_inside = self.n_agents
        self.trace_events: list[tuple[float, int]] = [(0.0, self._n_inside)]

        self._exit_set = frozenset(room.index(c) for c in room.exit_cells)
        self._entrance_idx = [room.index(c) for c in room.entrance_cells]

        # per-cell neighbor weights with k_s and k_d folded in; the
        # per-agent occupancy factor is the only thing left for the loop
        field_flat = room.static_field.ravel()
        self._nbrs = room.nbr_cells
        self._w0: list[tuple[float, ...]] = []
        for c in range(room.n_cells):
            nbrs = room.nbr_cells[c]
            diags = room.nbr_diag[c]
            s_min = min(field_flat[y] for y in nbrs)
            self._w0.append(tuple(
                math.exp(-k_s * (field_flat[y] - s_min)) * (1.0 - k_d if dg else 1.0)
                for y, dg in zip(nbrs, diags)))
        self._diag = room.nbr_diag
        self._wbuf = [0.0] * 9

        # counters
        self.n_moves = 0
        self.n_stays = 0
        self.n_bonds_created = 0
        self.n_conflicts = 0
        self.n_conflicts_blocked = 0
        self.n_bond_contentions = 0
        self.n_bond_blocked = 0
        self.n_bond_moves = 0

        self._snapshot_pending = sorted(snapshot_times)
        self.snapshots: list[tuple[float, str]] = []

    # -- public views -------------------------------------------------

    @property
    def time(self) -> float:
        """Start of the current step window."""
        return self.time_step * self.h

    def occupancy_map(self) -> dict[Cell, int]:
        room = self.room
        return {room.cell(c): a for c, a in enumerate(self._occ) if a >= 0}

    def agent_positions(self) -> dict[int, Cell | None]:
        room = self.room
        return {i: (room.cell(p) if p >= 0 else None)
                for i, p in enumerate(self._pos)}

    def next_activations(self) -> list[float]:
        return list(self._nact)

    def queued_agents(self) -> list[int]:
        return self._entry_queue[self._queue_head:]

    def active_agents(self) -> list[int]:
        """Agents due in the current step window.

        Activation times are never scheduled into the past, so this is
        the set with ``next_activation`` in ``[k*h, (k+1)*h)`` except
        for one catch-up case: an agent re-entering mid-window with a
        short period may come due before the window ends and is then
        picked up here one step later.
        """
        t_hi = (self.time_step + 1) * self.h
        nact = self._nact
        return [i for i in range(self.n_agents) if nact[i] < t_hi]

    def render_grid(self) -> str:
        """Plain-text room state: '.' empty, 'E' exit, 'o'/'@' low/high gamma."""
        room = self.room
        occ = self._occ
        gamma = self._gamma
        lines = []
        for r in range(room.length):
            row = []
            for c in range(room.width):
                a = occ[r * room.width + c]
                if a >= 0:
                    row.append("@" if gamma[a] >= 0.5 else "o")
                elif r * room.width + c in self._exit_set:
                    row.append("E")
                else:
                    row.append(".")
            lines.append("".join(row))
        return "\n".join(lines)

    # -- step pieces ----------------------------------------------------

    def reinsert_agent(self, agent_id: int, now: float) -> Cell | None:
        """Place an egressed agent on a uniformly chosen empty entrance cell.

        Returns the cell, or None if the whole entrance wall is occupied
        and the agent joined the entry queue instead.
        """
        occ = self._occ
        empty = [e for e in self._entrance_idx if occ[e] < 0]
        if not empty:
            self._pos[agent_id] = -1
            self._nact[agent_id] = _NEVER
            self._entry_queue.append(agent_id)
            self._n_inside -= 1
            self._trace_mark(now)
            return None
        e = empty[0] if len(empty) == 1 else empty[self.rng.randrange(len(empty))]
        occ[e] = agent_id
        self._pos[agent_id] = e
        self._t_in[agent_id] = now
        self._nact[agent_id] = now + self._tau[agent_id]
        return self.room.cell(e)

    def _trace_mark(self, t: float):
        if self.trace_events[-1][0] == t:
            self.trace_events[-1] = (t, self._n_inside)
        else:
            self.trace_events.append((t, self._n_inside))

    def _drain_entry_queue(self, now: float):
        occ = self._occ
        q = self._entry_queue
        while self._queue_head < len(q):
            empty = [e for e in self._entrance_idx if occ[e] < 0]
            if not empty:
                return
            i = q[self._queue_head]
            self._queue_head += 1
            e = empty[0] if len(empty) == 1 else empty[self.rng.randrange(len(empty))]
            occ[e] = i
            self._pos[i] = e
            self._t_in[i] = now
            self._nact[i] = now + self._tau[i]
            self._n_inside += 1
            self._trace_mark(now)
        del q[:self._queue_head]
        self._queue_head = 0

    def _clear_bond(self, i: int):
        tgt = self._bond[i]
        if tgt >= 0:
            self._bond[i] = -1
            holders = self._bond_holders.get(tgt)
            if holders is not None:
                holders.remove(i)
                if not holders:
                    del self._bond_holders[tgt]

    def _is_diag(self, a: int, b: int) -> bool:
        w = self.room.width
        return abs(a // w - b // w) == 1 and abs(a % w - b % w) == 1

    def apply_bonds(self, vacated: list[tuple[int, float]],
                    stamp: int) -> list[tuple[int, int, int]]:
        """Fire bond chains on freshly vacated cells (FIFO).

        Every vacancy releases all bonds pointing at it; among the
        holders that have not moved this step the vacated cell is
        contested by the same aggressiveness rule as ordinary
        conflicts.  A winner moves immediately (at the time the chain
        was triggered) and its own cell joins the vacancy queue, so
        whole lines advance within a single step.  Returns the chain
        moves as (agent id, from cell index, to cell index).
        """
        occ = self._occ
        pos = self._pos
        nact = self._nact
        tau = self._tau
        gamma = self._gamma
        moved = self._moved
        bond = self._bond
        holders_map = self._bond_holders
        rng = self.rng
        mu = self.mu
        log = self.conflict_log
        moves: list[tuple[int, int, int]] = []
        qi = 0
        while qi < len(vacated):
            cell, t0 = vacated[qi]
            qi += 1
            holders = holders_map.pop(cell, None)
            if not holders:
                continue
            # the blocker's motion ends every bond to this cell, whether
            # or not the holder wins it (or a proposal already refilled it)
            cands = [(a, gamma[a]) for a in holders if moved[a] != stamp]
            for a in holders:
                bond[a] = -1
            if occ[cell] >= 0 or not cands:
                continue
            if len(cands) == 1:
                winner = cands[0][0]
            else:
                self.n_bond_contentions += 1
                winner = resolve_conflict(cands, mu, rng)
                if log is not None:
                    log.append(("bond", tuple(g for _, g in cands), winner))
                if winner is None:
                    self.n_bond_blocked += 1
                    continue
            old = pos[winner]
            occ[old] = -1
            occ[cell] = winner
            pos[winner] = cell
            moved[winner] = stamp
            nact[winner] = t0 + tau[winner] * (SQRT2 if self._is_diag(old, cell) else 1.0)
            self.n_bond_moves += 1
            moves.append((winner, old, cell))
            vacated.append((old, t0))
        return moves

    def fire_vacancies(self, cells: list[Cell], trigger_time: float | None = None
                       ) -> list[tuple[int, Cell, Cell]]:
        """Cell-typed wrapper around :meth:`apply_bonds` for direct use."""
        t0 = self.time if trigger_time is None else trigger_time
        room = self.room
        vac = [(room.index(c), t0) for c in cells]
        moves = self.apply_bonds(vac, self.time_step)
        return [(a, room.cell(f), room.cell(t)) for a, f, t in moves]

    def _egress(self, i: int, t_e: float, vacated: list[tuple[int, float]]):
        p = self._pos[i]
        self._occ[p] = -1
        self._pos[i] = -1
        vacated.append((p, t_e))
        self.egress_count += 1
        self.egress_log.append(t_e)
        self.passages.append((i, self._t_in[i], t_e))
        self._clear_bond(i)

    # -- the step ---------------------------------------------------------

    def advance_step(self) -> StepOutcome:
        k = self.time_step
        h = self.h
        t_lo = k * h
        t_hi = (k + 1) * h
        occ = self._occ
        pos = self._pos
        nact = self._nact
        tau = self._tau
        moved = self._moved
        nbrs_all = self._nbrs
        w0_all = self._w0
        diag_all = self._diag
        omk = self._one_minus_ko
        wbuf = self._wbuf
        exit_set = self._exit_set
        rng = self.rng
        rnd = rng.random

        if self._queue_head < len(self._entry_queue):
            self._drain_entry_queue(t_lo)

        active = [i for i in range(self.n_agents) if nact[i] < t_hi]

        # choice: stays, bonds, and proposals against the step-start
        # snapshot; a due agent standing on the exit does not choose, its
        # update is the egress itself (executed with the moves below)
        vacated: list[tuple[int, float]] = []
        egressed: list[int] = []
        proposals: dict[int, list[tuple[int, float, bool]]] = {}
        n_step_conflicts = 0
        n_step_blocked = 0
        for i in active:
            if pos[i] in exit_set:
                egressed.append(i)
                continue
            t_a = nact[i]
            if self._bond[i] >= 0:
                self._clear_bond(i)  # own activation ends a stale bond
            c = pos[i]
            nbrs = nbrs_all[c]
            w0 = w0_all[c]
            m = len(nbrs)
            f = omk[i]
            total = 0.0
            j = 0
            while j < m:
                y = nbrs[j]
                w = w0[j]
                if y != c and occ[y] >= 0:
                    w *= f
                wbuf[j] = w
                total += w
                j += 1
            r = rnd() * total
            acc = 0.0
            j = 0
            while j < m - 1:
                acc += wbuf[j]
                if r < acc:
                    break
                j += 1
            y = nbrs[j]
            if y == c:
                self.n_stays += 1
                nact[i] = t_a + tau[i]
            elif occ[y] >= 0:
                self._bond[i] = y
                self._bond_holders.setdefault(y, []).append(i)
                self.n_bonds_created += 1
                nact[i] = t_a + tau[i]  # stands unless the bond fires below
            else:
                lst = proposals.get(y)
                if lst is None:
                    proposals[y] = [(i, t_a, diag_all[c][j])]
                else:
                    lst.append((i, t_a, diag_all[c][j]))

        # egress happens with the moves: the occupant leaves at its own
        # activation time and the vacancy feeds this step's bond chains,
        # so the exit hands over through the queueing-bond channel
        egress_times = []
        for i in egressed:
            t_e = nact[i]
            egress_times.append(t_e)
            self._egress(i, t_e, vacated)
            moved[i] = k

        # conflicts and moves, contested cells resolved by aggressiveness
        if proposals:
            gamma = self._gamma
            log = self.conflict_log
            for tgt in sorted(proposals):
                plist = proposals[tgt]
                if len(plist) == 1:
                    winner, t_a, dg = plist[0]
                else:
                    n_step_conflicts += 1
                    winner_id = resolve_conflict(
                        [(i, gamma[i]) for i, _, _ in plist], self.mu, rng)
                    if log is not None:
                        log.append(("conflict", tuple(gamma[i] for i, _, _ in plist),
                                    winner_id))
                    for i, t_i, _ in plist:
                        nact[i] = t_i + tau[i]  # losers retry a full period later
                    if winner_id is None:
                        n_step_blocked += 1
                        continue
                    for i, t_i, d in plist:
                        if i == winner_id:
                            winner, t_a, dg = i, t_i, d
                            break
                old = pos[winner]
                occ[old] = -1
                occ[tgt] = winner
                pos[winner] = tgt
                moved[winner] = k
                nact[winner] = t_a + tau[winner] * (SQRT2 if dg else 1.0)
                self.n_moves += 1
                vacated.append((old, t_a))

        self.n_conflicts += n_step_conflicts
        self.n_conflicts_blocked += n_step_blocked

        n_chain = len(self.apply_bonds(vacated, k)) if vacated else 0

        # periodic boundary: the egressed re-enter once all movement of
        # the step has settled, so placement cannot race a move
        for i, t_e in zip(egressed, egress_times):
            self.reinsert_agent(i, t_e)

        self.time_step = k + 1

        if self._snapshot_pending and self._snapshot_pending[0] <= self.time_step * h:
            grid = self.render_grid()
            while self._snapshot_pending and self._snapshot_pending[0] <= self.time_step * h:
                self.snapshots.append((self._snapshot_pending.pop(0), grid))

        if self.validate:
            self._check_invariants()

        return StepOutcome(step=k, n_active=len(active), egressed=tuple(egressed),
                           n_moves=self.n_moves, n_conflicts=n_step_conflicts,
                           n_blocked=n_step_blocked, n_bond_moves=n_chain)

    # -- run loops ------------------------------------------------------

    def run_until_egress(self, target: int, max_steps: int | None = None):
        """Advance until ``target`` egresses happened (then truncate logs)."""
        cap = max_steps if max_steps is not None else max(100_000, target * 2_000)
        start = self.time_step
        while self.egress_count < target:
            if self.time_step - start > cap:
                raise RuntimeError(
                    f"no {target} egresses within {cap} steps; simulation jammed?")
            self.advance_step()
        del self.egress_log[target:]
        del self.passages[target:]
        self.egress_count = target

    def run_until_time(self, t: float):
        while self.time_step * self.h < t:
            self.advance_step()

    def _check_invariants(self):
        occupied = {c: a for c, a in enumerate(self._occ) if a >= 0}
        inside = [i for i, p in enumerate(self._pos) if p >= 0]
        assert len(occupied) == len(inside) == self._n_inside, "head-count drift"
        for i in inside:
            assert self._occ[self._pos[i]] == i, f"occupancy map broken for agent {i}"
        assert self._n_inside + len(self.queued_agents()) == self.n_agents, \
            "agents lost or duplicated"
        for i, b in enumerate(self._bond):
            if b >= 0:
                assert self._occ[b] >= 0, "bond points at an empty cell"


def place_agents(room: Room, agents: list[Agent], rng: random.Random):
    """Scatter agents over distinct cells of the entrance half of the room.

    Initial activations are desynchronized uniformly over one own
    period.  If the population exceeds the entrance half (possible for
    the largest occupancies), the pool widens to the whole room except
    the exit.  Draw order: one ``rng.sample`` for the cells, then one
    uniform per agent in id order.
    """
    exits = set(room.exit_cells)
    pool = [Cell(r, c)
            for r in range(room.length // 2, room.length)
            for c in range(room.width)
            if Cell(r, c) not in exits]
    if len(agents) > len(pool):
        pool = [room.cell(i) for i in range(room.n_cells)
                if room.cell(i) not in exits]
    if len(agents) > len(pool):
        raise ValueError(
            f"cannot place {len(agents)} agents in a room with {len(pool)} usable cells")
    cells = rng.sample(pool, len(agents))
    for agent, cell in zip(agents, cells):
        agent.position = cell
        agent.next_activation = rng.random() * agent.params.tau
        agent.t_in = 0.0
