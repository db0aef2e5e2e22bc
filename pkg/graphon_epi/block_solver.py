"""
Exact equilibrium solver for block (piecewise-constant) graphons.

The continuum of players collapses to K coupled blocks; the HJB equation is
integrated backward and the Kolmogorov equation forward with RK4, and the
aggregate path is found by damped Picard iteration.

Inside the RK4 stages the aggregate and control paths are read from cubic-spline
interpolants of their grid values, clipped to their ranges, not from linear
interpolation of the stage values.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from graphon_epi.config import (
    PICARD_DAMPING, PICARD_MAX_ITER, PICARD_TOLERANCE, SIMPLEX_DRIFT_LIMIT, SIMPLEX_TOLERANCE,
    TRAJECTORY_COLUMNS
)
from graphon_epi.console import debug, debug_log, logger
from graphon_epi.errors import DimensionError, DomainError, NonConvergence, StepSizeError
from graphon_epi.graphon import BlockGraphon, Graphon, aggregate_block, existence_margin
from graphon_epi.metrics import FBResidual, SolverDiagnostics
from graphon_epi.model import GameModel, StateSpace, estimate_control_lipschitz
from graphon_epi.numerics import TimeGrid, centered_derivative, interior_points, rk4_step, spline_path


def simplex_drift(p: np.ndarray) -> float:
    """Distance of each row from the probability simplex (mass defect or negative part)."""
    return float(max(np.max(np.abs(p.sum(-1) - 1.0)), np.max(-p), 0.0))


def existence_diagnostics(model: GameModel, graphon: Graphon, horizon: float) -> SolverDiagnostics:
    """‖w‖₂, the control Lipschitz estimate and the existence margin of a model on a graphon"""
    norm = graphon.l2_norm()
    z_upper = model.impact.bound * graphon.sup()
    lip = estimate_control_lipschitz(model, z_upper if z_upper > 0 else model.impact.bound, horizon)
    margin = existence_margin(graphon, model.impact.lipschitz, lip)
    return SolverDiagnostics(graphon_l2_norm=norm, control_lipschitz=lip, existence_margin=margin)


@dataclass
class EquilibriumSolution:
    """Equilibrium fields on a time grid; the time axis comes first.

    u, p, phi have shape (steps + 1, units, states), Z has shape (steps + 1, units).
    """
    grid: TimeGrid
    states: StateSpace
    units: Tuple[str, ...]
    masses: np.ndarray
    u: np.ndarray
    p: np.ndarray
    Z: np.ndarray
    phi: np.ndarray
    diagnostics: SolverDiagnostics = field(default_factory=SolverDiagnostics)

    @property
    def reported_p(self) -> np.ndarray:
        """p with roundoff negatives clipped to 0"""
        return np.clip(self.p, 0.0, None)

    def state_path(self, state: str) -> np.ndarray:
        return self.reported_p[:, :, self.states.index(state)]

    def population_path(self, state: str) -> np.ndarray:
        """Mass-weighted population fraction in `state` over time"""
        return self.state_path(state) @ self.masses

    def to_frame(self) -> pd.DataFrame:
        """Long table t, unit, state, p, u, Z, control"""
        steps, units, n = self.p.shape
        t = np.repeat(self.grid.times, units * n)
        unit = np.tile(np.repeat(np.array(self.units, dtype=object), n), steps)
        state = np.tile(np.array(self.states.labels, dtype=object), steps * units)
        z = np.repeat(self.Z.reshape(-1), n)
        return pd.DataFrame({
            "t": t, "unit": unit, "state": state,
            "p": self.reported_p.reshape(-1), "u": self.u.reshape(-1), "Z": z,
            "control": self.phi.reshape(-1),
        }, columns=TRAJECTORY_COLUMNS)


@dataclass
class MultiplicityReport:
    """Fixed points reached from the lowest and the highest aggregate guess"""
    from_zero: EquilibriumSolution
    from_upper: EquilibriumSolution

    @property
    def gap(self) -> float:
        return float(np.max(np.abs(self.from_zero.Z - self.from_upper.Z)))


class BlockSolver:
    """Forward-backward solver over the K blocks of a block graphon"""

    def __init__(self, model: GameModel, graphon: Graphon, p0: Sequence[Sequence[float]], grid: TimeGrid,
                 labels: Optional[Sequence[str]] = None):
        if not isinstance(graphon, BlockGraphon):
            raise DomainError(
                f"the block solver needs a block graphon, got '{graphon.kind}'; use the shooting solver instead"
            )
        self.model = model
        self.graphon = graphon
        self.grid = grid
        self.p0 = np.array(p0, dtype=float)
        k, n = graphon.n_blocks, model.n
        if self.p0.shape != (k, n):
            raise DimensionError(f"p0 has shape {self.p0.shape}, expected ({k}, {n})")
        if simplex_drift(self.p0) > SIMPLEX_TOLERANCE:
            raise DomainError("every row of p0 must lie on the probability simplex")
        self.labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(k))
        self.kernel = model.partition_kernel(graphon)
        logger.info(f"Block solver: {k} blocks, {n} states, T={grid.horizon}, {grid.n_steps} steps")

    @property
    def z_upper(self) -> float:
        """C_K·sup w, the largest aggregate any block can perceive"""
        return self.model.impact.bound * self.graphon.sup()

    def _check_path(self, path: np.ndarray, trailing: Tuple[int, ...]) -> np.ndarray:
        path = np.asarray(path, dtype=float)
        expected = (self.grid.n_steps + 1,) + trailing
        if path.shape != expected:
            raise DimensionError(f"path has shape {path.shape}, expected {expected} on this grid")
        return path

    @debug
    def solve_backward_hjb(self, Z: np.ndarray) -> np.ndarray:
        """u with u(T) = g(Z_T), integrated backward with the minimized Hamiltonian"""
        grid, kernel = self.grid, self.kernel
        Z = self._check_path(Z, (self.graphon.n_blocks,))
        u = np.empty((grid.n_steps + 1, self.graphon.n_blocks, self.model.n))
        u[-1] = kernel.terminal_cost(Z[-1])
        z_at = spline_path(grid, Z, lower=0.0)

        def field(t: float, y: np.ndarray) -> np.ndarray:
            _, ham = kernel.optimal_hamiltonian(t, z_at(t), y)
            return -ham

        for k in range(grid.n_steps, 0, -1):
            u[k - 1] = rk4_step(field, grid.time(k), u[k], -grid.dt)
        return u

    def optimal_controls(self, u: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """φ̂ at every grid point"""
        times = self.grid.times
        return np.stack([self.kernel.controls(float(times[k]), Z[k], u[k]) for k in range(len(times))])

    @debug
    def solve_forward_kolmogorov(self, phi: np.ndarray, Z: np.ndarray, p0: Optional[np.ndarray] = None) -> np.ndarray:
        """p with ṗ = pQ(φ, Z) from p0; raises StepSizeError when p leaves the simplex."""
        grid, kernel = self.grid, self.kernel
        k_blocks, n = self.graphon.n_blocks, self.model.n
        phi = self._check_path(phi, (k_blocks, n))
        Z = self._check_path(Z, (k_blocks,))
        p = np.empty((grid.n_steps + 1, k_blocks, n))
        p[0] = self.p0 if p0 is None else p0
        z_at = spline_path(grid, Z, lower=0.0)
        phi_at = spline_path(grid, phi, kernel.a_min, kernel.a_max)

        def field(t: float, y: np.ndarray) -> np.ndarray:
            return kernel.forward(t, phi_at(t), z_at(t), y)

        for k in range(grid.n_steps):
            p[k + 1] = rk4_step(field, grid.time(k), p[k], grid.dt)
            drift = simplex_drift(p[k + 1])
            if drift > SIMPLEX_DRIFT_LIMIT:
                raise StepSizeError(drift, grid.time(k + 1))
        return p

    def compute_aggregate(self, p: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Z_i(t) = Σ_k w_ik·[Σ_e K(φ_k(t,e), e)·p_k(t,e)]·m_k"""
        return aggregate_block(self.graphon.weights, self.graphon.masses, self.kernel.impact(phi, p))

    def _diagnostics(self) -> SolverDiagnostics:
        return existence_diagnostics(self.model, self.graphon, self.grid.horizon)

    @debug
    def solve_equilibrium(self, damping: float = PICARD_DAMPING, tol: float = PICARD_TOLERANCE,
                          max_iter: int = PICARD_MAX_ITER, initial: Optional[np.ndarray] = None,
                          diagnostics: Optional[SolverDiagnostics] = None) -> EquilibriumSolution:
        """Damped Picard iteration on the aggregate path, from Z⁰ ≡ 0 unless `initial` is given."""
        if not 0 < damping <= 1:
            raise DomainError(f"damping must lie in (0, 1], got {damping}")
        diag = diagnostics or self._diagnostics()
        shape = (self.grid.n_steps + 1, self.graphon.n_blocks)
        Z = np.zeros(shape) if initial is None else np.broadcast_to(np.asarray(initial, dtype=float), shape).copy()

        start = time.time()
        residual = float("inf")
        for iteration in range(1, max_iter + 1):
            u = self.solve_backward_hjb(Z)
            phi = self.optimal_controls(u, Z)
            p = self.solve_forward_kolmogorov(phi, Z)
            Z_next = (1.0 - damping) * Z + damping * self.compute_aggregate(p, phi)
            residual = float(np.max(np.abs(Z_next - Z)))
            diag.residual_history.append(residual)
            Z = Z_next
            debug_log(f"Picard iteration {iteration}: residual {residual:.3e}")
            if residual <= tol:
                break
        else:
            logger.error(f"Picard iteration did not converge in {max_iter} iterations (residual {residual:.3e})")
            raise NonConvergence(max_iter, residual)

        # fields consistent with the final aggregate path
        u = self.solve_backward_hjb(Z)
        phi = self.optimal_controls(u, Z)
        p = self.solve_forward_kolmogorov(phi, Z)

        diag.iterations = iteration
        diag.residual = residual
        diag.simplex_defect = float(np.max(np.abs(p.sum(-1) - 1.0)))
        solution = EquilibriumSolution(self.grid, self.model.states, self.labels, np.asarray(self.graphon.masses),
                                       u, p, Z, phi, diag)
        diag.fb_residual = self.fb_residual(solution)
        logger.info(f"Picard converged in {iteration} iterations (residual {residual:.3e}) "
                    f"in {time.time() - start:.2f}s")
        return solution

    def fb_residual(self, solution: EquilibriumSolution) -> FBResidual:
        """Sup-norm defects of the HJB, Kolmogorov and aggregate equations.

        Time derivatives are fourth-order centered differences on the interior
        points where the five-point stencil fits (three-point on grids shorter
        than four steps), so the stencil error stays below the RK4 error.
        """
        grid, kernel = self.grid, self.kernel
        u, p, Z, phi = solution.u, solution.p, solution.Z, solution.phi
        hjb = kolmogorov = 0.0
        times = grid.times
        for k in interior_points(grid):
            t = float(times[k])
            du = centered_derivative(u, k, grid.dt)
            dp = centered_derivative(p, k, grid.dt)
            _, ham = kernel.optimal_hamiltonian(t, Z[k], u[k])
            hjb = max(hjb, float(np.max(np.abs(du + ham))))
            kolmogorov = max(kolmogorov, float(np.max(np.abs(dp - kernel.forward(t, phi[k], Z[k], p[k])))))
        aggregate = float(np.max(np.abs(Z - self.compute_aggregate(p, phi))))
        return FBResidual(hjb=hjb, kolmogorov=kolmogorov, aggregate=aggregate)

    @debug
    def check_multiplicity(self, damping: float = PICARD_DAMPING, tol: float = PICARD_TOLERANCE,
                           max_iter: int = PICARD_MAX_ITER) -> MultiplicityReport:
        """Solve from Z⁰ ≡ 0 and from Z⁰ ≡ C_K·sup w; both fixed points are reported."""
        low = self.solve_equilibrium(damping, tol, max_iter)
        high = self.solve_equilibrium(damping, tol, max_iter, initial=self.z_upper)
        report = MultiplicityReport(low, high)
        low.diagnostics.multiplicity_gap = report.gap
        if report.gap > 10 * tol / damping:
            logger.warning(f"Different fixed points from different initial aggregates (gap {report.gap:.3e})")
        else:
            logger.info(f"Both initial aggregates reach the same fixed point (gap {report.gap:.3e})")
        return report
