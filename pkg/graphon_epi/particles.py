"""
Particle simulation of N heterogeneous pure-jump agents coupled through the
graphon-weighted aggregate.

Every agent owns a counter-based random stream. From it the agent draws its
initial state and a dominating Poisson clock of rate (2n−1)·q_max on [0, T];
each candidate event carries a uniform mark on [0, (2n−1)·q_max). The mark
selects a state offset k ∈ {−(n−1), …, n−1} (one slot of width q_max per
offset) and the candidate is accepted when it falls below the current rate
κ(e, k) = q_{e,e+k} inside its slot.

Controls and aggregates are refreshed on a time grid and frozen in between.
Candidates are processed one refresh interval at a time, in rounds of
"j-th candidate of every agent", which keeps the per-agent order exact
while vectorizing across agents.
"""
from __future__ import annotations

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd

from graphon_epi.block_solver import EquilibriumSolution
from graphon_epi.config import AGGREGATE_COLUMNS, EVENT_LOG_COLUMNS, STREAM_PARTICLES
from graphon_epi.console import create_simulation_progress_bar, debug, debug_log, logger
from graphon_epi.errors import DimensionError, DomainError, ModelBoundError
from graphon_epi.graphon import BlockGraphon, Graphon, aggregate_sampled
from graphon_epi.metrics import GapSummary
from graphon_epi.model import EpidemicKernel, GameModel, ModelKernel
from graphon_epi.numerics import RngStream, TimeGrid, midpoints, resample_path

# rows of the dense kernel evaluated at once for non-block graphons
AGGREGATE_CHUNK = 1024

RATE_SLACK = 1e-12


class ControlMode(StrEnum):
    SOLVER = 'solver'
    RECOMMENDED = 'recommended'


class AggregateMode(StrEnum):
    FROZEN = 'frozen'
    EMPIRICAL = 'empirical'


@dataclass
class ParticlePopulation:
    """N agents with indices, current states and their own random streams"""
    indices: np.ndarray
    states: np.ndarray
    generators: List[np.random.Generator] = field(repr=False)
    initial_states: np.ndarray = field(init=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=float)
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.indices.size == 0:
            raise DimensionError("a population needs at least one agent")
        if self.states.shape != self.indices.shape or len(self.generators) != self.indices.size:
            raise DimensionError("indices, states and streams must have one entry per agent")
        self.initial_states = self.states.copy()

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @classmethod
    def create(cls, n_agents: int, initial_law: Callable[[np.ndarray], np.ndarray], seed: int,
               indices: Optional[Sequence[float]] = None) -> ParticlePopulation:
        """Agents at the cell midpoints of [0, 1] (or at `indices`), initial states drawn from their laws"""
        xs = midpoints(n_agents) if indices is None else np.asarray(indices, dtype=float)
        laws = np.asarray(initial_law(xs), dtype=float)
        generators = [RngStream(seed, STREAM_PARTICLES + j).generator() for j in range(xs.size)]
        states = np.array([g.choice(laws.shape[1], p=laws[j]) for j, g in enumerate(generators)], dtype=np.int64)
        return cls(xs, states, generators)


class ControlSource(ABC):
    """Controls per agent and per state at a refresh time"""

    @abstractmethod
    def controls(self, t: float) -> np.ndarray:
        """(N, n) controls"""


class SolverControls(ControlSource):
    """Frozen equilibrium controls of a solution, looked up at each agent's unit"""

    def __init__(self, solution: EquilibriumSolution, unit_of_agent: np.ndarray, times: np.ndarray):
        self._phi = resample_path(solution.grid, solution.phi, times)
        self._units = unit_of_agent
        self._times = times

    def controls(self, t: float) -> np.ndarray:
        r = int(np.searchsorted(self._times, t, side="right")) - 1
        return self._phi[r][self._units]


class RecommendedControls(ControlSource):
    """Players follow the recommended levels λ, projected onto A"""

    def __init__(self, kernel: ModelKernel):
        if not isinstance(kernel, EpidemicKernel):
            raise DomainError("recommended controls need a model with recommended levels")
        self._kernel = kernel

    def controls(self, t: float) -> np.ndarray:
        return np.clip(self._kernel.targets(t), self._kernel.a_min, self._kernel.a_max)


def empirical_aggregate(graphon: Graphon, indices: np.ndarray, states: np.ndarray, controls: np.ndarray,
                        impact_state: int) -> np.ndarray:
    """z_j = (1/N)·Σ_k w(x_j, x_k)·K(α^k, X^k) for every agent j.

    `controls` holds each agent's current control α^k. Block graphons reduce
    the sum to block totals; other kernels are evaluated densely in row chunks.
    """
    values = np.where(np.asarray(states) == impact_state, np.asarray(controls, dtype=float), 0.0)
    n_agents = values.size
    if isinstance(graphon, BlockGraphon):
        blocks = graphon.block_of(indices)
        totals = np.bincount(blocks, weights=values, minlength=graphon.n_blocks)
        return graphon.weights[blocks] @ totals / n_agents
    out = np.empty(n_agents)
    for start in range(0, n_agents, AGGREGATE_CHUNK):
        stop = min(start + AGGREGATE_CHUNK, n_agents)
        out[start:stop] = aggregate_sampled(graphon, indices, values, indices[start:stop])
    return out


@dataclass
class ParticleRun:
    """Output of one simulation"""
    times: np.ndarray
    indices: np.ndarray
    states: np.ndarray
    z_empirical: np.ndarray
    z_deterministic: Optional[np.ndarray]
    events: pd.DataFrame
    state_labels: Sequence[str]

    @property
    def final_states(self) -> np.ndarray:
        return self.states[-1]

    def frequencies(self, unit_of_agent: np.ndarray, n_units: int, step: int = -1) -> np.ndarray:
        """(units, states) empirical state frequencies at a refresh step"""
        n = len(self.state_labels)
        counts = np.zeros((n_units, n))
        np.add.at(counts, (unit_of_agent, self.states[step]), 1.0)
        sizes = counts.sum(-1, keepdims=True)
        return np.divide(counts, sizes, out=np.zeros_like(counts), where=sizes > 0)

    def aggregate_frame(self, unit_of_agent: np.ndarray, labels: Sequence[str]) -> pd.DataFrame:
        """Per-unit mean of the empirical and deterministic aggregates at every refresh time"""
        rows = []
        for u, label in enumerate(labels):
            members = unit_of_agent == u
            if not members.any():
                continue
            emp = self.z_empirical[:, members].mean(-1)
            det = (self.z_deterministic[:, members].mean(-1) if self.z_deterministic is not None
                   else np.full_like(emp, np.nan))
            rows.append(pd.DataFrame({"t": self.times, "unit": label, "z_empirical": emp, "z_deterministic": det}))
        return pd.concat(rows, ignore_index=True)[AGGREGATE_COLUMNS]

    def gap(self) -> GapSummary:
        if self.z_deterministic is None:
            raise DomainError("no deterministic aggregate path to compare against")
        return lln_gap(self.z_empirical, self.z_deterministic)


def lln_gap(empirical: np.ndarray, deterministic: np.ndarray) -> GapSummary:
    """Sup and RMS of |Ẑ − Z| over agents and refresh times"""
    empirical, deterministic = np.asarray(empirical, dtype=float), np.asarray(deterministic, dtype=float)
    if empirical.shape != deterministic.shape:
        raise DimensionError(f"aggregate paths on different grids: {empirical.shape} vs {deterministic.shape}")
    diff = np.abs(empirical - deterministic)
    return GapSummary(sup=float(diff.max()), rms=float(np.sqrt(np.mean(diff ** 2))))


def gap_slope(sizes: Sequence[int], gaps: Sequence[float]) -> float:
    """Least-squares slope of log(gap) against log(N)"""
    if len(sizes) != len(gaps) or len(sizes) < 2:
        raise DimensionError("need at least two (N, gap) pairs")
    return float(np.polyfit(np.log(sizes), np.log(gaps), 1)[0])


@dataclass
class CandidateClock:
    """Candidate events of all agents, ordered by refresh interval, round and agent"""
    times: np.ndarray
    marks: np.ndarray
    agents: np.ndarray
    bounds: List[List[int]]

    @classmethod
    def draw(cls, population: ParticlePopulation, rate: float, grid: TimeGrid) -> CandidateClock:
        times, marks, agents = [], [], []
        for j, generator in enumerate(population.generators):
            count = generator.poisson(rate * grid.horizon) if rate > 0 else 0
            times.append(np.sort(generator.uniform(0.0, grid.horizon, count)))
            marks.append(generator.uniform(0.0, rate, count))
            agents.append(np.full(count, j, dtype=np.int64))
        t, m, a = np.concatenate(times), np.concatenate(marks), np.concatenate(agents)

        interval = np.minimum((t / grid.dt).astype(np.int64), grid.n_steps - 1)
        # rank of each candidate among its agent's candidates in the same interval
        order = np.lexsort((t, a, interval))
        t, m, a, interval = t[order], m[order], a[order], interval[order]
        new_group = np.ones(t.size, dtype=bool)
        new_group[1:] = (interval[1:] != interval[:-1]) | (a[1:] != a[:-1])
        starts = np.maximum.accumulate(np.where(new_group, np.arange(t.size), 0))
        rank = np.arange(t.size) - starts

        order = np.lexsort((a, rank, interval))
        t, m, a, interval, rank = t[order], m[order], a[order], interval[order], rank[order]
        bounds = []
        for r in range(grid.n_steps):
            lo, hi = np.searchsorted(interval, [r, r + 1])
            ranks = rank[lo:hi]
            cuts = lo + np.searchsorted(ranks, np.arange(int(ranks.max()) + 2 if hi > lo else 1))
            bounds.append(cuts.tolist())
        return cls(t, m, a, bounds)

    @property
    def size(self) -> int:
        return int(self.times.size)


class ParticleSimulator:
    """Thinning simulation of the coupled jump processes"""

    def __init__(self, model: GameModel, graphon: Graphon, grid: TimeGrid):
        self.model = model
        self.graphon = graphon
        self.grid = grid
        self.q_max = model.q_max(graphon)

    @debug
    def simulate(self, population: ParticlePopulation, controls: ControlSource,
                 aggregate: AggregateMode = AggregateMode.EMPIRICAL,
                 deterministic: Optional[np.ndarray] = None, show_progress: bool = False) -> ParticleRun:
        """Run the population to the horizon.

        `deterministic` is the (refresh steps + 1, N) aggregate path perceived by
        each agent under the deterministic dynamics; it is required in frozen
        mode and used for the gap otherwise.
        """
        grid, n = self.grid, self.model.n
        n_agents = population.size
        times = grid.times
        if deterministic is not None and deterministic.shape != (grid.n_steps + 1, n_agents):
            raise DimensionError(f"deterministic aggregate has shape {deterministic.shape}, "
                                 f"expected {(grid.n_steps + 1, n_agents)}")
        if aggregate == AggregateMode.FROZEN and deterministic is None:
            raise DomainError("frozen aggregate mode needs a deterministic aggregate path")

        kernel = self.model.kernel(population.indices)
        q_total = (2 * n - 1) * self.q_max
        start = time.time()
        clock = CandidateClock.draw(population, q_total, grid)
        logger.info(f"Simulating {n_agents} agents: q_max={self.q_max:.4g}, {clock.size} candidate events")

        state = population.states
        snapshots = np.empty((grid.n_steps + 1, n_agents), dtype=np.int64)
        z_path = np.empty((grid.n_steps + 1, n_agents))
        event_parts: List[np.ndarray] = []
        rows = np.arange(n_agents)
        impact_state = self.model.impact.state

        with create_simulation_progress_bar(disable=not show_progress) as bar:
            task = bar.add_task("simulate", total=grid.n_steps)
            for r in range(grid.n_steps + 1):
                t = float(times[r])
                a = controls.controls(t)
                z_emp = empirical_aggregate(self.graphon, population.indices, state, a[rows, state], impact_state)
                snapshots[r] = state
                z_path[r] = z_emp
                if r == grid.n_steps:
                    break
                z = deterministic[r] if aggregate == AggregateMode.FROZEN else z_emp
                rates = kernel.rates(t, a, z)
                worst = float(rates.max()) if rates.size else 0.0
                if worst > self.q_max * (1.0 + RATE_SLACK):
                    raise ModelBoundError(worst, self.q_max)
                event_parts += self._interval(clock, r, state, rates, population.indices)
                bar.update(task, advance=1)
                debug_log(f"refresh {r}: t={t:.4g}, mean z={z_emp.mean():.4g}")

        events = (np.concatenate(event_parts, axis=0) if event_parts else np.empty((0, 5)))
        frame = pd.DataFrame({
            "t": events[:, 0], "agent_id": events[:, 1].astype(np.int64), "index": events[:, 2],
            "from_state": [self.model.states.labels[int(s)] for s in events[:, 3]],
            "to_state": [self.model.states.labels[int(s)] for s in events[:, 4]],
        }, columns=EVENT_LOG_COLUMNS)
        logger.info(f"Simulation finished: {len(frame)} jumps in {time.time() - start:.2f}s")
        return ParticleRun(times, population.indices, snapshots, z_path, deterministic, frame,
                           self.model.states.labels)

    def _interval(self, clock: CandidateClock, r: int, state: np.ndarray, rates: np.ndarray,
                  indices: np.ndarray) -> List[np.ndarray]:
        """Process the candidates of refresh interval r in place; returns accepted events"""
        n, q_max = self.model.n, self.q_max
        cuts = clock.bounds[r]
        out = []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi <= lo:
                continue
            agents, marks = clock.agents[lo:hi], clock.marks[lo:hi]
            slot = np.minimum((marks / q_max).astype(np.int64), 2 * n - 2)
            offset = slot - (n - 1)
            current = state[agents]
            target = current + offset
            valid = (offset != 0) & (target >= 0) & (target < n)
            kappa = rates[agents, current, np.clip(target, 0, n - 1)]
            accept = valid & (marks - slot * q_max < kappa)
            if accept.any():
                who = agents[accept]
                out.append(np.column_stack([clock.times[lo:hi][accept], who, indices[who],
                                            current[accept], target[accept]]))
                state[who] = target[accept]
        return out


def deterministic_aggregate(solution: EquilibriumSolution, unit_of_agent: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Solver aggregate path resampled on `times` and spread to agents by unit"""
    return resample_path(solution.grid, solution.Z, times)[:, unit_of_agent]


def replay(initial_states: np.ndarray, events: pd.DataFrame, labels: Sequence[str]) -> np.ndarray:
    """Final states obtained by applying an event log to the initial states"""
    states = np.array(initial_states, copy=True)
    lookup = {label: i for i, label in enumerate(labels)}
    for agent, to_state in zip(events["agent_id"], events["to_state"]):
        states[int(agent)] = lookup[to_state]
    return states


def run_particles(model: GameModel, graphon: Graphon, grid: TimeGrid, population: ParticlePopulation,
                  control_mode: ControlMode, aggregate_mode: AggregateMode,
                  solution: Optional[EquilibriumSolution] = None, unit_of_agent: Optional[np.ndarray] = None,
                  show_progress: bool = False) -> ParticleRun:
    """Assemble control source and deterministic path, then simulate"""
    deterministic = None
    if solution is not None:
        if unit_of_agent is None:
            raise DimensionError("a unit per agent is needed to read solver fields")
        deterministic = deterministic_aggregate(solution, unit_of_agent, grid.times)
    if control_mode == ControlMode.SOLVER:
        if solution is None:
            raise DomainError("solver controls need an equilibrium solution")
        source: ControlSource = SolverControls(solution, unit_of_agent, grid.times)
    else:
        source = RecommendedControls(model.kernel(population.indices))
    simulator = ParticleSimulator(model, graphon, grid)
    return simulator.simulate(population, source, aggregate_mode, deterministic, show_progress)
