from __future__ import annotations

from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from graphon_epi.errors import DimensionError
from graphon_epi.metrics import BlockSummary, EpidemicSummary
from graphon_epi.model import StateSpace
from graphon_epi.numerics import TimeGrid, resample_path


class TrajectorySource(Protocol):
    """Anything carrying gridded equilibrium fields (block or shooting solutions)"""
    grid: TimeGrid
    states: StateSpace
    units: Tuple[str, ...]
    masses: np.ndarray
    u: np.ndarray
    p: np.ndarray
    Z: np.ndarray
    phi: np.ndarray

    @property
    def reported_p(self) -> np.ndarray:
        ...


class OutcomeScorer(Protocol):
    """Interface for turning solutions into epidemic outcomes"""

    def summarize(self, solution: TrajectorySource, labels: Optional[Sequence[str]] = None) -> EpidemicSummary:
        ...


# ===== Component Implementations =====

class EpidemicScoring:
    """Summary statistics and cross-solver comparisons"""

    @staticmethod
    def summarize(solution: TrajectorySource, labels: Optional[Sequence[str]] = None) -> EpidemicSummary:
        """Terminal deceased mass, peak infected mass and mean susceptible control per unit"""
        states, times = solution.states, solution.grid.times
        p = solution.reported_p
        labels = list(labels) if labels is not None else list(solution.units)
        infected = p[:, :, states.index("I")]
        deceased = p[-1, :, states.index("D")] if "D" in states.labels else None
        susceptible_control = solution.phi[:, :, states.index("S")].mean(0)

        blocks = []
        for i, unit in enumerate(solution.units):
            k = int(np.argmax(infected[:, i]))
            blocks.append(BlockSummary(
                unit=unit, label=labels[i], mass=float(solution.masses[i]),
                terminal_deceased=None if deceased is None else float(deceased[i]),
                peak_infected=float(infected[k, i]), peak_time=float(times[k]),
                mean_susceptible_control=float(susceptible_control[i]),
            ))

        population = infected @ solution.masses
        k = int(np.argmax(population))
        return EpidemicSummary(
            blocks=blocks,
            population_deceased=None if deceased is None else float(deceased @ solution.masses),
            population_peak_infected=float(population[k]),
            population_peak_time=float(times[k]),
        )

    @staticmethod
    def policy_deltas(names: Sequence[str], summaries: Sequence[EpidemicSummary]) -> Dict[str, Dict[str, float]]:
        """Changes of every scenario against the first one (the baseline)"""
        if len(names) != len(summaries) or not summaries:
            raise DimensionError("one summary per scenario name is required")
        base = summaries[0]
        deltas: Dict[str, Dict[str, float]] = {}
        for name, summary in zip(names[1:], summaries[1:]):
            entry = {"peak_infected": summary.population_peak_infected - base.population_peak_infected}
            if base.population_deceased is not None and summary.population_deceased is not None:
                entry["deceased"] = summary.population_deceased - base.population_deceased
                if base.population_deceased > 0:
                    entry["deceased_relative"] = entry["deceased"] / base.population_deceased
            for b0, b1 in zip(base.blocks, summary.blocks):
                if b0.terminal_deceased is not None and b1.terminal_deceased is not None:
                    entry[f"deceased[{b0.label}]"] = b1.terminal_deceased - b0.terminal_deceased
            deltas[name] = entry
        return deltas

    @staticmethod
    def block_means(values: np.ndarray, unit_of_index: np.ndarray, n_units: int) -> np.ndarray:
        """Average the index axis (axis 1) of `values` over the indices of each unit"""
        unit_of_index = np.asarray(unit_of_index, dtype=int)
        counts = np.bincount(unit_of_index, minlength=n_units)
        if np.any(counts == 0):
            raise DimensionError(f"every unit needs at least one index, got counts {counts.tolist()}")
        out = np.stack([values[:, unit_of_index == k].mean(1) for k in range(n_units)], axis=1)
        return out

    @staticmethod
    def compare(block: TrajectorySource, shooting: TrajectorySource, unit_of_index: np.ndarray) -> Dict[str, float]:
        """Sup deviations of the shooting solution from the block solution.

        Shooting paths are averaged over the indices of each block and the
        block paths are sampled on the shooting grid.
        """
        n_blocks = len(block.units)
        times = shooting.grid.times
        s = block.states.index("S")
        p_block = resample_path(block.grid, block.reported_p, times)
        z_block = resample_path(block.grid, block.Z, times)
        phi_block = resample_path(block.grid, block.phi, times)

        p_shoot = EpidemicScoring.block_means(shooting.reported_p, unit_of_index, n_blocks)
        z_shoot = EpidemicScoring.block_means(shooting.Z, unit_of_index, n_blocks)
        phi_shoot = EpidemicScoring.block_means(shooting.phi[:, :, s], unit_of_index, n_blocks)
        u0_shoot = EpidemicScoring.block_means(shooting.u[:1, :, s], unit_of_index, n_blocks)[0]

        within: List[float] = []
        for k in range(n_blocks):
            members = shooting.u[0, unit_of_index == k, s]
            within.append(float(np.max(np.abs(members - members.mean()))))

        return {
            "sup_dp": float(np.max(np.abs(p_shoot - p_block))),
            "sup_dZ": float(np.max(np.abs(z_shoot - z_block))),
            "sup_dphi_S": float(np.max(np.abs(phi_shoot - phi_block[:, :, s]))),
            "sup_du0_S": float(np.max(np.abs(u0_shoot - block.u[0, :, s]))),
            "within_block_u0_S": max(within),
        }

    @staticmethod
    def frequency_deviation(frequencies: np.ndarray, p_terminal: np.ndarray) -> np.ndarray:
        """Per-unit L1 distance between empirical state frequencies and p(T)"""
        if frequencies.shape != p_terminal.shape:
            raise DimensionError(f"frequencies {frequencies.shape} vs p(T) {p_terminal.shape}")
        return np.abs(frequencies - p_terminal).sum(-1)
