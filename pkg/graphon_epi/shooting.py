"""
Shooting solver for general graphons.

The unknown initial value x ↦ u(0, ·) is a small feedforward network. On a
batch of sampled indices the value and the distribution are both integrated
forward in time with Euler steps, and the network is fitted by gradient
descent on the terminal mismatch |u(T) − g(Z_T)|². Gradients are exact
reverse-mode derivatives of the unrolled Euler scheme.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from graphon_epi.block_solver import EquilibriumSolution
from graphon_epi.config import (
    ADAM_BETAS, DIVERGENCE_GROWTH, LEARNING_RATE, NETWORK_ACTIVATION, NETWORK_DEPTH, NETWORK_WIDTH,
    STREAM_BATCH, STREAM_NETWORK_INIT, TRAIN_BATCH_SIZE, TRAIN_ITERATIONS
)
from graphon_epi.console import create_training_progress_bar, debug, debug_log, logger
from graphon_epi.errors import DimensionError, DomainError, NonFiniteError, ScenarioError, TrainingDivergence
from graphon_epi.graphon import Graphon
from graphon_epi.metrics import SolverDiagnostics, TrainingLog, TrainingRecord
from graphon_epi.model import EpidemicKernel, GameModel, value_bound
from graphon_epi.numerics import RngStream, TimeGrid, euler_step

DTYPE = torch.float64
CHECKPOINT_FORMAT = "graphon-epi-netparams"
CHECKPOINT_VERSION = 1

ACTIVATIONS: Dict[str, Callable[[], nn.Module]] = {
    "tanh": nn.Tanh,
    "relu": nn.ReLU,
    "softplus": nn.Softplus,
}


@dataclass(frozen=True)
class Architecture:
    """Fully connected index → R^n network: `depth` hidden layers of `width` units.

    The last layer's output is multiplied by `output_scale`, the size of the
    values the network has to reach.
    """
    n_out: int
    depth: int = NETWORK_DEPTH
    width: int = NETWORK_WIDTH
    activation: str = NETWORK_ACTIVATION
    output_scale: float = 1.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ScenarioError("solver.shooting.activation", f"expected one of {sorted(ACTIVATIONS)}")
        if self.depth < 1 or self.width < 1 or self.n_out < 1:
            raise ScenarioError("solver.shooting", "depth, width and output size must be ≥ 1")
        if not (self.output_scale > 0 and np.isfinite(self.output_scale)):
            raise ScenarioError("solver.shooting.output_scale", f"must be finite and > 0, got {self.output_scale}")

    def build(self) -> nn.Sequential:
        layers: List[nn.Module] = []
        fan_in = 1
        for _ in range(self.depth):
            layers += [nn.Linear(fan_in, self.width, dtype=DTYPE), ACTIVATIONS[self.activation]()]
            fan_in = self.width
        layers.append(nn.Linear(fan_in, self.n_out, dtype=DTYPE))
        return nn.Sequential(*layers)


class NetParams:
    """Weights of the initial-value network together with its architecture"""

    def __init__(self, architecture: Architecture, network: Optional[nn.Sequential] = None):
        self.architecture = architecture
        self.network = network if network is not None else architecture.build()

    @classmethod
    def initialize(cls, architecture: Architecture, stream: RngStream) -> NetParams:
        """Uniform init in [−s, s], s = sqrt(1/fan_in), drawn from `stream`."""
        params = cls(architecture)
        generator = torch.Generator().manual_seed(stream.torch_seed())
        with torch.no_grad():
            for layer in params.linear_layers():
                bound = float(np.sqrt(1.0 / layer.in_features))
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.uniform_(-bound, bound, generator=generator)
        return params

    def linear_layers(self) -> List[nn.Linear]:
        return [m for m in self.network if isinstance(m, nn.Linear)]

    def __call__(self, x: Any) -> torch.Tensor:
        """φ_θ(x): (N,) indices → (N, n) initial values"""
        xt = torch.as_tensor(x, dtype=DTYPE).reshape(-1, 1)
        if bool(((xt < 0) | (xt > 1)).any()):
            raise DomainError("indices must lie in [0, 1]")
        return self.architecture.output_scale * self.network(xt)

    def parameters(self):
        return self.network.parameters()

    def vector(self) -> torch.Tensor:
        return parameters_to_vector(self.network.parameters()).detach().clone()

    def set_vector(self, theta: torch.Tensor) -> None:
        with torch.no_grad():
            vector_to_parameters(torch.as_tensor(theta, dtype=DTYPE), self.network.parameters())

    def copy(self) -> NetParams:
        other = NetParams(self.architecture)
        other.set_vector(self.vector())
        return other

    def to_dict(self) -> Dict[str, Any]:
        layers = []
        for layer in self.linear_layers():
            layers.append({
                "shape": list(layer.weight.shape),
                "weight": layer.weight.detach().reshape(-1).tolist(),
                "bias": layer.bias.detach().tolist(),
            })
        return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                "architecture": asdict(self.architecture), "layers": layers}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> NetParams:
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ScenarioError("checkpoint", f"unsupported checkpoint header {data.get('format')!r} v{data.get('version')}")
        params = cls(Architecture(**data["architecture"]))
        layers = params.linear_layers()
        if len(layers) != len(data["layers"]):
            raise ScenarioError("checkpoint.layers", f"expected {len(layers)} layers, got {len(data['layers'])}")
        with torch.no_grad():
            for layer, stored in zip(layers, data["layers"]):
                if list(layer.weight.shape) != stored["shape"]:
                    raise ScenarioError("checkpoint.layers", f"shape {stored['shape']} ≠ {list(layer.weight.shape)}")
                layer.weight.copy_(torch.tensor(stored["weight"], dtype=DTYPE).reshape(stored["shape"]))
                layer.bias.copy_(torch.tensor(stored["bias"], dtype=DTYPE))
        return params

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")
        logger.info(f"Saved network checkpoint to {path}")

    @classmethod
    def load(cls, path: Path) -> NetParams:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SampleBatch:
    """Sampled player indices with their initial laws"""
    indices: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=float).reshape(-1)
        self.p0 = np.asarray(self.p0, dtype=float)
        if self.indices.size == 0:
            raise DimensionError("a sample batch needs at least one index")
        if self.p0.shape[0] != self.indices.size:
            raise DimensionError(f"{self.indices.size} indices but {self.p0.shape[0]} initial laws")

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass
class FFODETrajectory:
    """Forward-forward paths on a batch; time axis first, tensors keep the autograd graph"""
    u: torch.Tensor
    p: torch.Tensor
    Z: torch.Tensor
    phi: torch.Tensor


@dataclass
class TrainingConfig:
    iterations: int = TRAIN_ITERATIONS
    batch_size: int = TRAIN_BATCH_SIZE
    lr: float = LEARNING_RATE
    optimizer: str = "adam"
    decay: float = 0.0
    seed: int = 0
    resample: bool = True
    inner_iterations: int = 0
    show_progress: bool = True


InitialLaw = Callable[[np.ndarray], np.ndarray]


def value_scale(model: GameModel, horizon: float) -> float:
    """Output scale for the initial-value network: the value bound C_h, or 1 when it vanishes"""
    bound = value_bound(model, horizon)
    return bound if bound > 0 else 1.0


class ShootingSolver:
    """Neural shooting method for the forward-forward system"""

    def __init__(self, model: GameModel, graphon: Graphon, initial_law: InitialLaw, grid: TimeGrid,
                 architecture: Optional[Architecture] = None, inner_iterations: int = 0):
        if not isinstance(model.kernel(model.sample_indices()[:1]), EpidemicKernel):
            raise DomainError(f"model '{model.name or type(model).__name__}' has no differentiable kernel")
        self.model = model
        self.graphon = graphon
        self.initial_law = initial_law
        self.grid = grid
        self.architecture = architecture or Architecture(n_out=model.n, output_scale=value_scale(model, grid.horizon))
        if self.architecture.n_out != model.n:
            raise DimensionError(f"network outputs {self.architecture.n_out} values, model has {model.n} states")
        self.inner_iterations = inner_iterations

    def sample(self, generator: np.random.Generator, size: int) -> SampleBatch:
        indices = generator.uniform(0.0, 1.0, size)
        return self.batch(indices)

    def batch(self, indices: Any) -> SampleBatch:
        indices = np.asarray(indices, dtype=float).reshape(-1)
        return SampleBatch(indices, self.initial_law(indices))

    def _tensors(self, batch: SampleBatch) -> Tuple[EpidemicKernel, torch.Tensor, torch.Tensor]:
        kernel = self.model.kernel(batch.indices).map(lambda a: torch.as_tensor(a, dtype=DTYPE))
        weights = torch.as_tensor(self.graphon.matrix(batch.indices), dtype=DTYPE) / batch.size
        return kernel, weights, torch.as_tensor(batch.p0, dtype=DTYPE)

    def _aggregate(self, kernel: EpidemicKernel, weights: torch.Tensor, t: float,
                   z: torch.Tensor, u: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
        """Z from the controls at the previous aggregate (plus optional inner fixed-point sweeps)"""
        for _ in range(1 + self.inner_iterations):
            z = weights @ kernel.impact(kernel.controls(t, z, u), p)
        return z

    def integrate_ffode(self, params: NetParams, batch: SampleBatch) -> FFODETrajectory:
        """Euler integration of (u, p) forward from (φ_θ(x), p0) on the batch"""
        grid, n = self.grid, self.model.n
        kernel, weights, p0 = self._tensors(batch)
        y = torch.cat([params(batch.indices), p0], dim=-1)
        z = torch.zeros(batch.size, dtype=DTYPE)
        us, ps, zs, phis = [], [], [], []

        def field(t: float, state: torch.Tensor) -> torch.Tensor:
            nonlocal z
            u, p = state[:, :n], state[:, n:]
            z = self._aggregate(kernel, weights, t, z, u, p)
            a, ham = kernel.optimal_hamiltonian(t, z, u)
            us.append(u)
            ps.append(p)
            zs.append(z)
            phis.append(a)
            return torch.cat([-ham, kernel.forward(t, a, z, p)], dim=-1)

        for k in range(grid.n_steps + 1):
            try:
                if k < grid.n_steps:
                    y = euler_step(field, grid.time(k), y, grid.dt)
                else:
                    field(grid.horizon, y)
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite state at step {k}", t=exc.t, step=k) from exc
            if not bool(torch.isfinite(y).all()):
                raise NonFiniteError(f"non-finite state at step {k}", t=grid.time(min(k + 1, grid.n_steps)), step=k)
        return FFODETrajectory(u=torch.stack(us), p=torch.stack(ps), Z=torch.stack(zs), phi=torch.stack(phis))

    def shooting_loss(self, params: NetParams, batch: SampleBatch) -> torch.Tensor:
        """(1/N)·Σ_x Σ_e |u_θ(T, e) − g(e, Z_T)|²"""
        traj = self.integrate_ffode(params, batch)
        kernel = self.model.kernel(batch.indices).map(lambda a: torch.as_tensor(a, dtype=DTYPE))
        mismatch = traj.u[-1] - kernel.terminal_cost(traj.Z[-1])
        return (mismatch ** 2).sum(-1).mean()

    def loss_gradient(self, params: NetParams, batch: SampleBatch) -> Tuple[float, torch.Tensor]:
        """Loss and its exact reverse-mode gradient with respect to θ (flattened)"""
        params.network.zero_grad()
        loss = self.shooting_loss(params, batch)
        loss.backward()
        grad = parameters_to_vector([p.grad for p in params.parameters()]).detach().clone()
        return float(loss.detach()), grad

    def _optimizer(self, params: NetParams, config: TrainingConfig):
        if config.optimizer == "adam":
            optimizer = torch.optim.Adam(params.parameters(), lr=config.lr, betas=ADAM_BETAS)
        elif config.optimizer == "sgd":
            optimizer = torch.optim.SGD(params.parameters(), lr=config.lr)
        else:
            raise ScenarioError("solver.shooting.optimizer", f"expected 'adam' or 'sgd', got {config.optimizer!r}")
        # β_k = lr / (1 + decay·k)
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda k: 1.0 / (1.0 + config.decay * k))
        return optimizer, scheduler

    @debug
    def train(self, config: TrainingConfig, params: Optional[NetParams] = None) -> Tuple[NetParams, TrainingLog]:
        """Fit θ by gradient descent on the shooting loss"""
        params = params or NetParams.initialize(self.architecture, RngStream(config.seed, STREAM_NETWORK_INIT))
        self.inner_iterations = config.inner_iterations
        log = TrainingLog()
        if config.iterations == 0:
            return params, log

        generator = RngStream(config.seed, STREAM_BATCH).generator()
        optimizer, scheduler = self._optimizer(params, config)
        logger.info(f"Training: {config.iterations} iterations, batch {config.batch_size}, "
                    f"{config.optimizer} lr={config.lr}")

        batch = self.sample(generator, config.batch_size)
        limit = float("inf")
        with create_training_progress_bar(disable=not config.show_progress) as bar:
            task = bar.add_task("train", total=config.iterations, loss="—")
            for k in range(config.iterations):
                start = time.time()
                if config.resample and k > 0:
                    batch = self.sample(generator, config.batch_size)
                optimizer.zero_grad()
                try:
                    loss = self.shooting_loss(params, batch)
                except NonFiniteError as exc:
                    logger.error(f"Training diverged at iteration {k}: {exc}")
                    raise TrainingDivergence(k, float("nan")) from exc
                value = float(loss.detach())
                if k == 0:
                    limit = DIVERGENCE_GROWTH * max(value, 1.0)
                if not np.isfinite(value) or value > limit:
                    logger.error(f"Training diverged at iteration {k}: loss {value:.3e}")
                    raise TrainingDivergence(k, value)
                loss.backward()
                grad_norm = float(parameters_to_vector([p.grad for p in params.parameters()]).norm())
                lr = optimizer.param_groups[0]["lr"]
                optimizer.step()
                scheduler.step()
                log.append(TrainingRecord(k, value, grad_norm, lr, time.time() - start))
                bar.update(task, advance=1, loss=f"{value:.3e}")
                if k % 100 == 0:
                    debug_log(f"iteration {k}: loss {value:.3e}, |grad| {grad_norm:.3e}")

        logger.info(f"Training finished: final loss {log.final_loss:.3e}")
        return params, log

    @debug
    def evaluate(self, params: NetParams, indices: Any, diagnostics: Optional[SolverDiagnostics] = None) -> EquilibriumSolution:
        """Trajectories at caller-chosen indices, one reporting unit per index"""
        batch = self.batch(indices)
        with torch.no_grad():
            traj = self.integrate_ffode(params, batch)
        units = tuple(f"{x:.6g}" for x in batch.indices)
        masses = np.full(batch.size, 1.0 / batch.size)
        return EquilibriumSolution(self.grid, self.model.states, units, masses,
                                   traj.u.numpy(), traj.p.numpy(), traj.Z.numpy(), traj.phi.numpy(),
                                   diagnostics or SolverDiagnostics())

