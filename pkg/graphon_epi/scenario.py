"""
Scenario files: a versioned JSON description of one experiment (model,
graphon, per-block parameters, policy, horizon, solver settings and seed).

Bundled scenarios live in `graphon_epi/scenarios/` and can be addressed by
bare name (e.g. `cities_lockdown_city1`).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from graphon_epi.config import (
    BLOCK_STEPS, EVALUATION_POINTS, LEARNING_RATE, NETWORK_ACTIVATION, NETWORK_DEPTH, NETWORK_WIDTH,
    PARTICLE_AGENTS, PARTICLE_REFRESH_STEPS, PICARD_DAMPING, PICARD_MAX_ITER, PICARD_TOLERANCE,
    SCHEMA_VERSION, SHOOTING_STEPS, SIMPLEX_TOLERANCE, TRAIN_BATCH_SIZE, TRAIN_ITERATIONS
)
from graphon_epi.console import debug, logger
from graphon_epi.errors import GraphonEpiError, ScenarioError
from graphon_epi.graphon import BlockGraphon, Graphon
from graphon_epi.model import ControlSet, GameModel, IndexedParams
from graphon_epi.numerics import TimeGrid
from graphon_epi.shooting import Architecture, TrainingConfig

BUNDLED_PACKAGE = "graphon_epi"
BUNDLED_DIR = "scenarios"

PerBlock = Tuple[float, ...]


@dataclass(frozen=True)
class BlockTable:
    """Per-block parameters; every tuple has one entry per block"""
    labels: Tuple[str, ...]
    masses: PerBlock
    beta: PerBlock
    gamma: PerBlock
    rho: PerBlock
    kappa: PerBlock = ()
    epsilon: PerBlock = ()
    c_I: PerBlock = ()
    c_D: PerBlock = ()
    # state label → initial mass per block; absent states start empty
    p0: Mapping[str, PerBlock] = field(default_factory=dict)


@dataclass(frozen=True)
class PolicySpec:
    """Recommended contact levels λ per state and block, piecewise constant in time"""
    c_lambda: float
    levels: Tuple[Mapping[str, PerBlock], ...]
    breaks: Tuple[float, ...] = ()


@dataclass(frozen=True)
class BlockSolverSpec:
    steps: int = BLOCK_STEPS
    damping: float = PICARD_DAMPING
    tol: float = PICARD_TOLERANCE
    max_iter: int = PICARD_MAX_ITER
    check_multiplicity: bool = False


@dataclass(frozen=True)
class ShootingSpec:
    steps: int = SHOOTING_STEPS
    iterations: int = TRAIN_ITERATIONS
    batch_size: int = TRAIN_BATCH_SIZE
    lr: float = LEARNING_RATE
    optimizer: str = "adam"
    decay: float = 0.0
    resample: bool = True
    inner_iterations: int = 0
    depth: int = NETWORK_DEPTH
    width: int = NETWORK_WIDTH
    activation: str = NETWORK_ACTIVATION
    evaluation_points: int = EVALUATION_POINTS


@dataclass(frozen=True)
class ParticleSpec:
    agents: int = PARTICLE_AGENTS
    refresh_steps: int = PARTICLE_REFRESH_STEPS
    controls: str = "solver"
    aggregate: str = "empirical"


@dataclass(frozen=True)
class SolverSpec:
    block: BlockSolverSpec = BlockSolverSpec()
    shooting: ShootingSpec = ShootingSpec()
    particle: ParticleSpec = ParticleSpec()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: str
    horizon: float
    graphon: Mapping[str, Any]
    blocks: BlockTable
    policy: PolicySpec
    controls: Tuple[float, float] = (0.0, 2.0)
    solver: SolverSpec = SolverSpec()
    seed: int = 0
    description: str = ""
    schema_version: int = SCHEMA_VERSION

    # -- builders -------------------------------------------------------------

    def control_set(self) -> ControlSet:
        return ControlSet(*self.controls)

    def indexed_params(self) -> IndexedParams:
        b, k = self.blocks, len(self.blocks.masses)

        def column(values: PerBlock) -> PerBlock:
            return tuple(values) if values else (0.0,) * k

        return IndexedParams(
            labels=tuple(b.labels), masses=tuple(b.masses), beta=tuple(b.beta), gamma=tuple(b.gamma),
            kappa=column(b.kappa), rho=tuple(b.rho), epsilon=column(b.epsilon),
            c_I=column(b.c_I), c_D=column(b.c_D), c_lambda=self.policy.c_lambda,
            levels=self.policy.levels, breaks=self.policy.breaks,
        )

    def build_model(self) -> GameModel:
        return GameModel.create(self.model, self.indexed_params(), self.control_set())

    def build_graphon(self) -> Graphon:
        spec = dict(self.graphon)
        if spec.get("kind") == BlockGraphon.kind and "masses" not in spec:
            spec["masses"] = list(self.blocks.masses)
        return Graphon.from_spec(spec)

    def p0_matrix(self, model: GameModel) -> np.ndarray:
        """(blocks, states) initial laws"""
        k = len(self.blocks.masses)
        p0 = np.zeros((k, model.n))
        for state, values in self.blocks.p0.items():
            if state not in model.states.labels:
                raise ScenarioError(f"blocks.p0.{state}", f"state not in model states {model.states.labels}")
            if len(values) != k:
                raise ScenarioError(f"blocks.p0.{state}", f"expected {k} values, got {len(values)}")
            p0[:, model.states.index(state)] = values
        for i, row in enumerate(p0):
            if np.any(row < 0) or abs(row.sum() - 1.0) > SIMPLEX_TOLERANCE:
                raise ScenarioError("blocks.p0", f"row {i} ({self.blocks.labels[i]}) is not on the probability simplex")
        return p0

    def initial_law(self, model: GameModel) -> Callable[[np.ndarray], np.ndarray]:
        """x ↦ p0 of the block containing x"""
        p0 = self.p0_matrix(model)
        params = self.indexed_params()
        return lambda xs: p0[params.block_of(np.asarray(xs, dtype=float).reshape(-1))]

    def block_grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.solver.block.steps)

    def shooting_grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.solver.shooting.steps)

    def refresh_grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.solver.particle.refresh_steps)

    def architecture(self, n_out: int, output_scale: float = 1.0) -> Architecture:
        s = self.solver.shooting
        return Architecture(n_out=n_out, depth=s.depth, width=s.width, activation=s.activation,
                            output_scale=output_scale)

    def training_config(self, show_progress: bool = True) -> TrainingConfig:
        s = self.solver.shooting
        return TrainingConfig(iterations=s.iterations, batch_size=s.batch_size, lr=s.lr, optimizer=s.optimizer,
                              decay=s.decay, seed=self.seed, resample=s.resample,
                              inner_iterations=s.inner_iterations, show_progress=show_progress)

    def with_overrides(self, seed: Optional[int] = None, dt: Optional[float] = None,
                       iters: Optional[int] = None) -> ScenarioConfig:
        """Copy with CLI overrides applied; `dt` sets every time grid, `iters` the training iterations"""
        config = self
        if seed is not None:
            config = replace(config, seed=int(seed))
        solver = config.solver
        if dt is not None:
            if not dt > 0:
                raise ScenarioError("dt", f"must be > 0, got {dt}")
            steps = TimeGrid.from_dt(config.horizon, dt).n_steps
            solver = replace(solver, block=replace(solver.block, steps=steps),
                             shooting=replace(solver.shooting, steps=steps),
                             particle=replace(solver.particle, refresh_steps=steps))
        if iters is not None:
            if iters < 0:
                raise ScenarioError("iters", f"must be ≥ 0, got {iters}")
            solver = replace(solver, shooting=replace(solver.shooting, iterations=int(iters)))
        return replace(config, solver=solver)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["controls"] = {"a_min": self.controls[0], "a_max": self.controls[1]}
        data["policy"]["lambda"] = data["policy"].pop("levels")
        return _plain(data)


def _plain(value: Any) -> Any:
    """Tuples and mappings → JSON lists and dicts"""
    if isinstance(value, Mapping):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _floats(data: Mapping[str, Any], key: str, where: str, required: bool = True) -> PerBlock:
    if key not in data:
        if required:
            raise ScenarioError(f"{where}.{key}", "missing")
        return ()
    values = data[key]
    if not isinstance(values, list):
        raise ScenarioError(f"{where}.{key}", "expected a list of numbers")
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}", "expected a list of numbers") from None


def _state_table(data: Any, where: str) -> Dict[str, PerBlock]:
    if not isinstance(data, Mapping):
        raise ScenarioError(where, "expected an object mapping state labels to per-block lists")
    return {state: _floats(data, state, where) for state in data}


def _section(data: Mapping[str, Any], key: str, cls: type, where: str) -> Any:
    raw = data.get(key, {})
    if not isinstance(raw, Mapping):
        raise ScenarioError(where, "expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ScenarioError(where, f"unknown keys {unknown}")
    return cls(**raw)


def parse_scenario(data: Any) -> ScenarioConfig:
    """ScenarioConfig from decoded JSON; raises ScenarioError naming the field"""
    if not isinstance(data, Mapping):
        raise ScenarioError("scenario", "top level must be an object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version}; expected {SCHEMA_VERSION}")
    for key in ("name", "model", "horizon", "graphon", "blocks", "policy"):
        if key not in data:
            raise ScenarioError(key, "missing")

    raw_blocks = data["blocks"]
    if not isinstance(raw_blocks, Mapping):
        raise ScenarioError("blocks", "expected an object")
    masses = _floats(raw_blocks, "masses", "blocks")
    labels = tuple(str(v) for v in raw_blocks.get("labels", [str(i) for i in range(len(masses))]))
    blocks = BlockTable(
        labels=labels, masses=masses,
        beta=_floats(raw_blocks, "beta", "blocks"), gamma=_floats(raw_blocks, "gamma", "blocks"),
        rho=_floats(raw_blocks, "rho", "blocks"),
        kappa=_floats(raw_blocks, "kappa", "blocks", required=False),
        epsilon=_floats(raw_blocks, "epsilon", "blocks", required=False),
        c_I=_floats(raw_blocks, "c_I", "blocks", required=False),
        c_D=_floats(raw_blocks, "c_D", "blocks", required=False),
        p0=_state_table(raw_blocks.get("p0", {}), "blocks.p0"),
    )

    raw_policy = data["policy"]
    if not isinstance(raw_policy, Mapping) or "c_lambda" not in raw_policy or "lambda" not in raw_policy:
        raise ScenarioError("policy", "needs 'c_lambda' and 'lambda'")
    pieces = raw_policy["lambda"]
    pieces = pieces if isinstance(pieces, list) else [pieces]
    policy = PolicySpec(
        c_lambda=float(raw_policy["c_lambda"]),
        levels=tuple(_state_table(piece, "policy.lambda") for piece in pieces),
        breaks=_floats(raw_policy, "breaks", "policy", required=False),
    )

    raw_controls = data.get("controls", {})
    controls = (float(raw_controls.get("a_min", 0.0)), float(raw_controls.get("a_max", 2.0)))

    raw_solver = data.get("solver", {})
    if not isinstance(raw_solver, Mapping):
        raise ScenarioError("solver", "expected an object")
    try:
        solver = SolverSpec(
            block=_section(raw_solver, "block", BlockSolverSpec, "solver.block"),
            shooting=_section(raw_solver, "shooting", ShootingSpec, "solver.shooting"),
            particle=_section(raw_solver, "particle", ParticleSpec, "solver.particle"),
        )
    except TypeError as exc:
        raise ScenarioError("solver", str(exc)) from None

    graphon = data["graphon"]
    if not isinstance(graphon, Mapping):
        raise ScenarioError("graphon", "expected an object")
    try:
        horizon = float(data["horizon"])
        seed = int(data.get("seed", 0))
    except (TypeError, ValueError):
        raise ScenarioError("horizon", "horizon and seed must be numbers") from None
    return ScenarioConfig(
        name=str(data["name"]), model=str(data["model"]), horizon=horizon, graphon=dict(graphon),
        blocks=blocks, policy=policy, controls=controls, solver=solver, seed=seed,
        description=str(data.get("description", "")), schema_version=int(version),
    )


@debug
def validate(config: ScenarioConfig) -> None:
    """Build every component once; raises ScenarioError naming the offending field"""
    if not config.horizon > 0:
        raise ScenarioError("horizon", f"must be > 0, got {config.horizon}")
    try:
        model = config.build_model()
        graphon = config.build_graphon()
        config.p0_matrix(model)
        for grid in (config.block_grid, config.shooting_grid, config.refresh_grid):
            grid()
    except ScenarioError:
        raise
    except GraphonEpiError as exc:
        raise ScenarioError(config.name, str(exc)) from None
    if isinstance(graphon, BlockGraphon):
        if graphon.n_blocks != len(config.blocks.masses):
            raise ScenarioError("graphon.weights", f"{graphon.n_blocks} graphon blocks but "
                                                   f"{len(config.blocks.masses)} parameter blocks")
        if not np.allclose(graphon.masses, config.blocks.masses, atol=1e-12):
            raise ScenarioError("graphon.masses", "must equal blocks.masses")
    if config.solver.particle.controls not in ("solver", "recommended"):
        raise ScenarioError("solver.particle.controls", "expected 'solver' or 'recommended'")
    if config.solver.particle.aggregate not in ("frozen", "empirical"):
        raise ScenarioError("solver.particle.aggregate", "expected 'frozen' or 'empirical'")
    if config.solver.shooting.optimizer not in ("adam", "sgd"):
        raise ScenarioError("solver.shooting.optimizer", "expected 'adam' or 'sgd'")
    if not 0 < config.solver.block.damping <= 1:
        raise ScenarioError("solver.block.damping", "must lie in (0, 1]")


def bundled_scenarios() -> List[str]:
    """Names of the scenarios shipped with the package"""
    root = resources.files(BUNDLED_PACKAGE) / BUNDLED_DIR
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _read_text(path: str | Path) -> Tuple[str, str]:
    candidate = Path(path)
    if candidate.is_file():
        return candidate.read_text(encoding="utf-8"), str(candidate)
    name = candidate.name[:-5] if candidate.name.endswith(".json") else candidate.name
    bundled = resources.files(BUNDLED_PACKAGE) / BUNDLED_DIR / f"{name}.json"
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8"), f"bundled:{name}"
    raise ScenarioError("scenario", f"no scenario file or bundled scenario named {str(path)!r}")


@debug
def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario file (or a bundled scenario name)"""
    text, origin = _read_text(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("scenario", f"invalid JSON in {origin}: {exc.msg} (line {exc.lineno})") from None
    config = parse_scenario(data)
    validate(config)
    logger.info(f"Loaded scenario '{config.name}' from {origin}: model={config.model}, "
                f"{len(config.blocks.masses)} block(s), T={config.horizon}")
    return config


def write_scenario(config: ScenarioConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    logger.info(f"Scenario '{config.name}' written to {path}")
    return path
