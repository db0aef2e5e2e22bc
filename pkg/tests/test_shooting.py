from dataclasses import replace

import numpy as np
import pytest
import torch

from graphon_epi.config import STREAM_NETWORK_INIT
from graphon_epi.core import ExperimentRunner, shooting_indices
from graphon_epi.errors import DimensionError, DomainError, ScenarioError, TrainingDivergence
from graphon_epi.graphon import ConstantGraphon
from graphon_epi.helpers import EpidemicScoring
from graphon_epi.model import CallableGameModel, StateSpace
from graphon_epi.numerics import RngStream, TimeGrid
from graphon_epi.scenario import bundled_scenarios, load_scenario
from graphon_epi.shooting import Architecture, NetParams, ShootingSolver, TrainingConfig, value_scale


def shooting_for(name: str, horizon: float, steps: int, graphon=None) -> ShootingSolver:
    config = replace(load_scenario(name), horizon=horizon)
    model = config.build_model()
    return ShootingSolver(model, graphon or config.build_graphon(), config.initial_law(model),
                          TimeGrid(horizon, steps), Architecture(n_out=model.n, depth=2, width=16))


@pytest.fixture
def cities() -> ShootingSolver:
    return shooting_for("cities_lockdown_city1", 10.0, 50)


@pytest.fixture
def decoupled() -> ShootingSolver:
    return shooting_for("sir_decoupled", 10.0, 50)


def init(solver: ShootingSolver, seed: int = 0) -> NetParams:
    return NetParams.initialize(solver.architecture, RngStream(seed, STREAM_NETWORK_INIT))


def test_zero_network_outputs_zero(cities):
    params = init(cities)
    params.set_vector(torch.zeros_like(params.vector()))
    out = params(np.linspace(0.0, 1.0, 7))
    assert out.shape == (7, 4)
    assert torch.count_nonzero(out) == 0


def test_network_is_a_pure_function(cities):
    params = init(cities)
    x = np.array([0.1, 0.5, 0.9])
    assert torch.equal(params(x), params(x))


def test_network_rejects_indices_outside_unit_interval(cities):
    with pytest.raises(DomainError):
        init(cities)([0.5, 1.5])


def test_architecture_must_match_states():
    config = load_scenario("sir_decoupled")
    model = config.build_model()
    with pytest.raises(DimensionError):
        ShootingSolver(model, config.build_graphon(), config.initial_law(model), TimeGrid(1.0, 2), Architecture(n_out=3))
    with pytest.raises(ScenarioError):
        Architecture(n_out=4, activation="sigmoid")


def test_shooting_needs_a_differentiable_model():
    def rates(x, t, a, z):
        q = np.zeros(np.shape(a) + (2, 2))
        q[..., 0, 1] = a * z
        return q

    model = CallableGameModel(StateSpace(("S", "I")), rates, lambda x, t, e, z, a: 0.0 * a, q_max=2.0, f_bound=0.0)
    with pytest.raises(DomainError):
        ShootingSolver(model, ConstantGraphon(1.0), lambda xs: np.tile([0.9, 0.1], (len(xs), 1)), TimeGrid(1.0, 2))


def test_loss_is_nonnegative_and_aggregate_bounded(cities):
    params = init(cities)
    batch = cities.sample(np.random.default_rng(1), 8)
    traj = cities.integrate_ffode(params, batch)
    assert float(cities.shooting_loss(params, batch)) >= 0.0
    z_upper = cities.model.impact.bound * cities.graphon.sup()
    assert bool((traj.Z >= 0).all()) and bool((traj.Z <= z_upper).all())
    assert traj.u.shape == (51, 8, 4)
    np.testing.assert_allclose(traj.p.detach().sum(-1).numpy(), 1.0, atol=1e-12)


def test_decoupled_player_matches_independent_euler(decoupled):
    params = init(decoupled, seed=3)
    batch = decoupled.batch([0.4])
    grid = decoupled.grid
    u = params([0.4]).detach().numpy()[0].copy()
    p = np.array([0.9, 0.1, 0.0, 0.0])
    recover, death = 0.9 * 0.1, 0.1 * 0.1
    for _ in range(grid.n_steps):
        du = np.array([0.0, -(recover * (u[2] - u[1]) + death * (u[3] - u[1]) + 1.0), 0.0, -1.0])
        dp = np.array([0.0, -(recover + death) * p[1], recover * p[1], death * p[1]])
        u, p = u + grid.dt * du, p + grid.dt * dp
    traj = decoupled.integrate_ffode(params, batch)
    np.testing.assert_allclose(traj.u[-1, 0].detach().numpy(), u, atol=1e-12)
    np.testing.assert_allclose(traj.p[-1, 0].detach().numpy(), p, atol=1e-12)
    assert float(decoupled.shooting_loss(params, batch)) == pytest.approx(float(np.sum(u ** 2)), abs=1e-12)


def test_identical_players_see_identical_aggregates():
    solver = shooting_for("sir_decoupled", 10.0, 20, graphon=ConstantGraphon(1.0))
    traj = solver.integrate_ffode(init(solver), solver.batch(np.linspace(0.0, 1.0, 9)))
    z = traj.Z.detach().numpy()
    np.testing.assert_allclose(z, np.repeat(z[:, :1], 9, axis=1), atol=1e-10)
    assert np.max(z) > 0


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(cities, seed):
    params = init(cities, seed=seed)
    batch = cities.sample(np.random.default_rng(seed), 8)
    _, grad = cities.loss_gradient(params, batch)
    theta = params.vector()
    delta = 1e-5
    coordinates = np.random.default_rng(100 + seed).choice(theta.numel(), size=20, replace=False)
    for i in coordinates:
        shifted = []
        for sign in (1.0, -1.0):
            trial = theta.clone()
            trial[i] += sign * delta
            params.set_vector(trial)
            with torch.no_grad():
                shifted.append(float(cities.shooting_loss(params, batch)))
        params.set_vector(theta)
        numeric = (shifted[0] - shifted[1]) / (2.0 * delta)
        assert float(grad[i]) == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_zero_iterations_return_initial_parameters(cities):
    params, log = cities.train(TrainingConfig(iterations=0, seed=4, show_progress=False))
    assert len(log) == 0
    assert torch.equal(params.vector(), init(cities, seed=4).vector())


def test_training_is_deterministic(cities):
    config = TrainingConfig(iterations=3, batch_size=8, seed=2, show_progress=False)
    first, log1 = cities.train(config)
    second, log2 = cities.train(config)
    assert log1.losses == log2.losses
    assert torch.equal(first.vector(), second.vector())
    assert list(log1.to_frame().columns) == ["iteration", "loss", "grad_norm", "lr", "seconds"]


def test_training_reduces_the_loss(decoupled):
    _, log = decoupled.train(TrainingConfig(iterations=60, batch_size=8, lr=1e-2, seed=0, show_progress=False))
    assert log.losses[-1] < log.losses[0]


def test_divergence_is_reported(cities):
    config = TrainingConfig(iterations=5, batch_size=8, lr=1e8, optimizer="sgd", seed=0, show_progress=False)
    with pytest.raises(TrainingDivergence):
        cities.train(config)


def test_large_first_loss_is_not_divergence(cities):
    params = init(cities)
    with torch.no_grad():
        params.linear_layers()[-1].bias.add_(1e4)
    config = TrainingConfig(iterations=2, batch_size=8, seed=0, show_progress=False)
    _, log = cities.train(config, params)
    assert log.losses[0] > 1e6
    assert len(log) == 2


@pytest.mark.parametrize("name", bundled_scenarios())
def test_one_training_step_on_every_bundled_scenario(name, short_training, tmp_path):
    runner = ExperimentRunner(short_training(name), tmp_path, show_progress=False)
    params, log, solution = runner.solve_shooting()
    assert len(log) == 1
    assert np.isfinite(log.final_loss)
    assert params.architecture.output_scale == pytest.approx(value_scale(runner.model, runner.config.horizon))
    assert solution.u.shape[1] == 5
    assert np.all(np.isfinite(solution.p))


def test_output_scale_multiplies_the_network(cities):
    params = init(cities)
    scaled = NetParams(replace(params.architecture, output_scale=50.0), params.network)
    x = np.array([0.2, 0.7])
    torch.testing.assert_close(scaled(x), 50.0 * params(x))
    with pytest.raises(ScenarioError):
        Architecture(n_out=4, output_scale=0.0)


def test_unknown_optimizer(cities):
    with pytest.raises(ScenarioError):
        cities.train(TrainingConfig(iterations=1, optimizer="lbfgs", show_progress=False))


def test_checkpoint_round_trip(cities, tmp_path):
    params = init(cities, seed=9)
    path = tmp_path / "checkpoint.json"
    params.save(path)
    loaded = NetParams.load(path)
    assert loaded.architecture == params.architecture
    assert torch.equal(loaded.vector(), params.vector())


def test_checkpoint_header_checked(cities):
    data = init(cities).to_dict()
    data["version"] = 99
    with pytest.raises(ScenarioError):
        NetParams.from_dict(data)


def test_evaluate_reports_one_unit_per_index(cities):
    solution = cities.evaluate(init(cities), np.linspace(0.0, 1.0, 5))
    assert solution.units == ("0", "0.25", "0.5", "0.75", "1")
    assert solution.u.shape == (51, 5, 4)
    assert solution.Z.shape == (51, 5)
    np.testing.assert_allclose(shooting_indices(solution), np.linspace(0.0, 1.0, 5))


@pytest.mark.slow
def test_shooting_agrees_with_block_solver(tmp_path):
    config = load_scenario("cities_lockdown_city1")
    runner = ExperimentRunner(config, tmp_path, show_progress=False)
    block = runner.solve_block()
    _, _, shooting = runner.solve_shooting()
    deviations = EpidemicScoring.compare(block, shooting, runner.params.block_of(shooting_indices(shooting)))
    for name in ("sup_dp", "sup_dZ", "sup_du0_S", "within_block_u0_S"):
        assert deviations[name] <= 0.05, name


@pytest.mark.slow
def test_power_law_monotonicity(tmp_path):
    runner = ExperimentRunner(load_scenario("seird_powerlaw"), tmp_path, show_progress=False)
    _, _, solution = runner.solve_shooting()
    s = solution.states.index("S")
    assert np.all(np.diff(solution.Z, axis=1) >= -1e-3)
    assert np.all(np.diff(solution.phi[:, :, s], axis=1) <= 1e-3)
