import numpy as np
import pandas as pd
import pytest
from scipy.linalg import expm

from graphon_epi.block_solver import BlockSolver
from graphon_epi.config import AGGREGATE_COLUMNS, EVENT_LOG_COLUMNS
from graphon_epi.errors import DimensionError, DomainError, ModelBoundError
from graphon_epi.graphon import BlockGraphon, ConstantGraphon
from graphon_epi.model import CallableGameModel, SIRModel, StateSpace
from graphon_epi.numerics import TimeGrid
from graphon_epi.particles import (
    AggregateMode, CandidateClock, ControlMode, ControlSource, ParticlePopulation, ParticleSimulator,
    RecommendedControls, empirical_aggregate, gap_slope, lln_gap, replay, run_particles
)
from graphon_epi.scenario import load_scenario

ALL_INFECTED = [0.0, 1.0, 0.0, 0.0]


def infected_population(n_agents: int, seed: int = 0) -> ParticlePopulation:
    return ParticlePopulation.create(n_agents, lambda xs: np.tile(ALL_INFECTED, (len(xs), 1)), seed)


def recommended_run(model, graphon, grid, population):
    return run_particles(model, graphon, grid, population, ControlMode.RECOMMENDED, AggregateMode.EMPIRICAL)


def test_empirical_aggregate_two_agents():
    indices, states, controls = np.array([0.2, 0.8]), np.array([1, 0]), np.array([0.9, 1.0])
    np.testing.assert_allclose(empirical_aggregate(ConstantGraphon(1.0), indices, states, controls, 1), [0.45, 0.45])
    block = BlockGraphon([[1.0]], [1.0])
    np.testing.assert_allclose(empirical_aggregate(block, indices, states, controls, 1), [0.45, 0.45])


def test_empirical_aggregate_without_infected_is_zero(rng):
    indices = rng.uniform(size=50)
    z = empirical_aggregate(ConstantGraphon(1.0), indices, np.zeros(50, dtype=int), np.ones(50), 1)
    np.testing.assert_array_equal(z, 0.0)


def test_empirical_aggregate_block_reduction_matches_dense_sum(rng):
    graphon = BlockGraphon([[1.0, 0.3, 0.3], [0.3, 1.0, 0.7], [0.3, 0.7, 1.0]], [0.4, 0.2, 0.4])
    indices, states, controls = rng.uniform(size=300), rng.integers(0, 4, size=300), rng.uniform(0, 2, size=300)
    values = np.where(states == 1, controls, 0.0)
    dense = graphon.matrix(indices) @ values / 300
    np.testing.assert_allclose(empirical_aggregate(graphon, indices, states, controls, 1), dense, atol=1e-14)


def test_empirical_aggregate_is_permutation_equivariant(rng):
    graphon = ConstantGraphon(0.6)
    indices, states, controls = rng.uniform(size=40), rng.integers(0, 4, size=40), rng.uniform(0, 2, size=40)
    perm = rng.permutation(40)
    z = empirical_aggregate(graphon, indices, states, controls, 1)
    z_perm = empirical_aggregate(graphon, indices[perm], states[perm], controls[perm], 1)
    np.testing.assert_allclose(z_perm, z[perm], atol=1e-14)


def test_population_from_initial_law():
    population = ParticlePopulation.create(4, lambda xs: np.tile([0.0, 0.0, 1.0, 0.0], (len(xs), 1)), seed=1)
    np.testing.assert_allclose(population.indices, [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_array_equal(population.states, 2)
    with pytest.raises(DimensionError):
        ParticlePopulation(np.array([]), np.array([]), [])


def test_no_jumps_when_all_rates_vanish(params_factory):
    model = SIRModel(params_factory(beta=0.0, gamma=0.0))
    run = recommended_run(model, BlockGraphon([[1.0]], [1.0]), TimeGrid(10.0, 20), infected_population(50))
    assert run.events.empty
    assert list(run.events.columns) == EVENT_LOG_COLUMNS
    np.testing.assert_array_equal(run.final_states, 1)


def test_holding_time_is_exponential(params_factory):
    model = SIRModel(params_factory(beta=0.0, gamma=0.1, rho=1.0))
    n_agents = 20_000
    run = recommended_run(model, BlockGraphon([[0.0]], [1.0]), TimeGrid(200.0, 400), infected_population(n_agents))
    recoveries = run.events[run.events["from_state"] == "I"]
    assert len(recoveries) == n_agents
    assert set(recoveries["to_state"]) == {"R"}
    assert recoveries["t"].mean() == pytest.approx(10.0, abs=3 * 10.0 / np.sqrt(n_agents))


def test_state_law_matches_matrix_exponential(params_factory):
    model = SIRModel(params_factory(beta=0.0, gamma=0.5, rho=0.6, kappa=0.3))
    n_agents = 20_000
    run = recommended_run(model, BlockGraphon([[0.0]], [1.0]), TimeGrid(1.0, 10), infected_population(n_agents, seed=5))
    q = model.q_matrix(0.5, 0.0, 1.0, 0.0)
    expected = expm(q)[model.states.index("I")]
    observed = np.bincount(run.final_states, minlength=4) / n_agents
    tolerance = 4.0 * np.sqrt(expected * (1.0 - expected) / n_agents) + 1e-3
    assert np.all(np.abs(observed - expected) <= tolerance)


@pytest.fixture
def coupled_run(params_factory):
    def simulate(seed: int):
        model = SIRModel(params_factory(beta=0.4, gamma=0.1, rho=0.9, kappa=0.05))
        population = ParticlePopulation.create(500, lambda xs: np.tile([0.9, 0.1, 0.0, 0.0], (len(xs), 1)), seed)
        return recommended_run(model, BlockGraphon([[1.0]], [1.0]), TimeGrid(20.0, 40), population), population
    return simulate


def test_same_seed_same_events(coupled_run):
    first, _ = coupled_run(11)
    second, _ = coupled_run(11)
    pd.testing.assert_frame_equal(first.events, second.events)
    other, _ = coupled_run(12)
    assert not first.events.equals(other.events)


def test_only_model_transitions_occur(coupled_run):
    run, _ = coupled_run(3)
    assert not run.events.empty
    pairs = set(zip(run.events["from_state"], run.events["to_state"]))
    assert pairs <= {("S", "I"), ("I", "R"), ("I", "D"), ("R", "S")}
    assert run.events["t"].between(0.0, 20.0).all()


def test_event_log_replays_to_final_states(coupled_run):
    run, population = coupled_run(4)
    np.testing.assert_array_equal(replay(population.initial_states, run.events, run.state_labels), run.final_states)
    assert run.states.shape == (41, 500)
    assert run.z_empirical.shape == (41, 500)


def test_candidate_clock_orders_rounds():
    population = infected_population(30)
    grid = TimeGrid(5.0, 5)
    clock = CandidateClock.draw(population, 2.0, grid)
    assert len(clock.bounds) == grid.n_steps
    for r, cuts in enumerate(clock.bounds):
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            agents = clock.agents[lo:hi]
            assert len(np.unique(agents)) == len(agents)
            assert np.all((clock.times[lo:hi] >= r * grid.dt) & (clock.times[lo:hi] < (r + 1) * grid.dt))
    assert np.all(clock.marks < 2.0)


class FixedControls(ControlSource):
    def __init__(self, n_agents: int, n_states: int):
        self._a = np.ones((n_agents, n_states))

    def controls(self, t: float) -> np.ndarray:
        return self._a


def test_rates_above_declared_bound_are_rejected():
    def rates(x, t, a, z):
        q = np.zeros(np.shape(a) + (2, 2))
        q[..., 1, 0] = 0.1
        return q

    model = CallableGameModel(StateSpace(("S", "I")), rates, lambda x, t, e, z, a: 0.0 * a, q_max=0.05, f_bound=0.0)
    population = ParticlePopulation.create(5, lambda xs: np.tile([0.0, 1.0], (len(xs), 1)), 0)
    simulator = ParticleSimulator(model, ConstantGraphon(1.0), TimeGrid(1.0, 2))
    with pytest.raises(ModelBoundError):
        simulator.simulate(population, FixedControls(5, 2))


def test_recommended_controls_need_epidemic_model():
    def rates(x, t, a, z):
        return np.zeros(np.shape(a) + (2, 2))

    model = CallableGameModel(StateSpace(("S", "I")), rates, lambda x, t, e, z, a: 0.0 * a, q_max=1.0, f_bound=0.0)
    with pytest.raises(DomainError):
        RecommendedControls(model.kernel([0.5]))


def test_frozen_mode_needs_deterministic_path(params_factory):
    model = SIRModel(params_factory())
    population = infected_population(10)
    with pytest.raises(DomainError):
        run_particles(model, BlockGraphon([[1.0]], [1.0]), TimeGrid(1.0, 2), population,
                      ControlMode.RECOMMENDED, AggregateMode.FROZEN)
    with pytest.raises(DomainError):
        run_particles(model, BlockGraphon([[1.0]], [1.0]), TimeGrid(1.0, 2), population,
                      ControlMode.SOLVER, AggregateMode.EMPIRICAL)


def test_lln_gap():
    z = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    assert lln_gap(z, z).sup == 0.0
    gap = lln_gap(z, z + 0.1)
    assert gap.sup == pytest.approx(0.1)
    assert gap.rms == pytest.approx(0.1)
    with pytest.raises(DimensionError):
        lln_gap(z, z[:2])


def test_gap_slope():
    sizes = [250, 1000, 4000, 16000]
    assert gap_slope(sizes, [2.0 / np.sqrt(n) for n in sizes]) == pytest.approx(-0.5)
    with pytest.raises(DimensionError):
        gap_slope([100], [0.1])


def _cities_particles(n_agents: int, dt: float, seed: int, aggregate: AggregateMode, solution=None):
    config = load_scenario("cities_lockdown_city1").with_overrides(dt=dt, seed=seed)
    model, graphon, params = config.build_model(), config.build_graphon(), config.indexed_params()
    if solution is None:
        solution = BlockSolver(model, graphon, config.p0_matrix(model), config.block_grid(),
                               labels=config.blocks.labels).solve_equilibrium()
    population = ParticlePopulation.create(n_agents, config.initial_law(model), seed)
    unit_of_agent = params.block_of(population.indices)
    run = run_particles(model, graphon, config.refresh_grid(), population, ControlMode.SOLVER, aggregate,
                        solution=solution, unit_of_agent=unit_of_agent)
    return run, solution, unit_of_agent, config.blocks.labels


def test_particles_with_solver_controls_and_frozen_aggregate():
    run, solution, unit_of_agent, labels = _cities_particles(600, 0.5, 0, AggregateMode.FROZEN)
    frequencies = run.frequencies(unit_of_agent, 3)
    np.testing.assert_allclose(frequencies.sum(-1), 1.0)
    frame = run.aggregate_frame(unit_of_agent, labels)
    assert list(frame.columns) == AGGREGATE_COLUMNS
    assert set(frame["unit"]) == set(labels)
    assert run.gap().sup >= 0.0
    assert run.z_deterministic.shape == run.z_empirical.shape


LLN_SEEDS = 20


@pytest.fixture(scope="module")
def fine_cities_solution():
    config = load_scenario("cities_lockdown_city1").with_overrides(dt=0.1)
    model = config.build_model()
    return BlockSolver(model, config.build_graphon(), config.p0_matrix(model), config.block_grid(),
                       labels=config.blocks.labels).solve_equilibrium()


def _seed_band(n_agents: int, solution, statistic: str) -> np.ndarray:
    """Gap statistic ('sup' or 'rms') of the empirical aggregate for seeds 0..LLN_SEEDS-1"""
    runs = (_cities_particles(n_agents, 0.1, seed, AggregateMode.EMPIRICAL, solution)[0] for seed in range(LLN_SEEDS))
    return np.array([getattr(run.gap(), statistic) for run in runs])


@pytest.mark.slow
def test_law_of_large_numbers_on_cities(fine_cities_solution):
    sups = _seed_band(10_000, fine_cities_solution, "sup")
    assert sups.mean() + 2.0 * sups.std(ddof=1) / np.sqrt(LLN_SEEDS) <= 0.05
    run, solution, unit_of_agent, _ = _cities_particles(10_000, 0.1, 0, AggregateMode.EMPIRICAL, fine_cities_solution)
    l1 = np.abs(run.frequencies(unit_of_agent, 3) - solution.reported_p[-1]).sum(-1)
    assert np.all(l1 <= 0.05)


@pytest.mark.slow
def test_gap_halves_when_agents_quadruple(fine_cities_solution):
    small = _seed_band(1000, fine_cities_solution, "sup")
    large = _seed_band(4000, fine_cities_solution, "sup")
    assert 0.3 <= float(np.mean(large / small)) <= 0.7


@pytest.mark.slow
def test_gap_decays_like_inverse_square_root(fine_cities_solution):
    sizes = [250, 1000, 4000, 16000]
    gaps = [float(np.mean(_seed_band(n_agents, fine_cities_solution, "rms"))) for n_agents in sizes]
    assert gap_slope(sizes, gaps) == pytest.approx(-0.5, abs=0.15)
