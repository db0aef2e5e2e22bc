"""
Finite-state epidemic games: state spaces, controlled Q-matrices, costs, impact
functions and Hamiltonian minimizers.

All solvers go through a `ModelKernel`, a bundle of per-unit coefficients
(one unit per block or per sampled index) with vectorized operations. The
closed-form `EpidemicKernel` only uses `+ * ** sum clip` and indexing, so the
same code runs on NumPy arrays and on torch tensors (for reverse-mode
differentiation in the shooting solver).

Array conventions: controls `a` and values `h` have shape (..., U, n),
aggregates `z` have shape (..., U), off-diagonal rate arrays (..., U, n, n).
"""
from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from bisect import bisect_right
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, ClassVar, Dict, Mapping, Optional, Sequence, Tuple, Type, Union

import numpy as np

from graphon_epi.config import (
    ABSORBING_CONTROL, CONTROL_GRID_POINTS, DEFAULT_CONTROL_MAX, DEFAULT_CONTROL_MIN,
    LIPSCHITZ_DELTA, LIPSCHITZ_Z_POINTS, MASS_TOLERANCE
)
from graphon_epi.console import debug, logger
from graphon_epi.errors import DimensionError, DomainError, ScenarioError
from graphon_epi.graphon import BlockGraphon, Graphon
from graphon_epi.numerics import block_index

State = Union[int, str]


@dataclass(frozen=True)
class StateSpace:
    labels: Tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise DomainError("a state space needs at least 2 states")
        if len(set(self.labels)) != len(self.labels):
            raise DomainError(f"state labels must be unique: {self.labels}")

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, state: State) -> int:
        if isinstance(state, (int, np.integer)):
            if not 0 <= state < self.n:
                raise DomainError(f"state {state} outside 0..{self.n - 1}")
            return int(state)
        try:
            return self.labels.index(state)
        except ValueError:
            raise DomainError(f"unknown state {state!r}; expected one of {self.labels}") from None


SIR_STATES = StateSpace(("S", "I", "R", "D"))
SEIRD_STATES = StateSpace(("S", "E", "I", "R", "D"))


@dataclass(frozen=True)
class ControlSet:
    """Compact control interval A = [a_min, a_max]"""
    a_min: float = DEFAULT_CONTROL_MIN
    a_max: float = DEFAULT_CONTROL_MAX

    def __post_init__(self):
        if not self.a_min <= self.a_max:
            raise ScenarioError("controls", f"a_min={self.a_min} must not exceed a_max={self.a_max}")

    def contains(self, a: Any) -> bool:
        a = np.asarray(a, dtype=float)
        return bool(np.all((a >= self.a_min) & (a <= self.a_max)))

    def grid(self, points: int = CONTROL_GRID_POINTS) -> np.ndarray:
        return np.linspace(self.a_min, self.a_max, points)

    @property
    def spacing(self) -> float:
        return (self.a_max - self.a_min) / (CONTROL_GRID_POINTS - 1)


@dataclass(frozen=True)
class ImpactFunction:
    """K(a, e) = a·1{e = infectious state} (contact factor of infectious players)"""
    controls: ControlSet
    state: int
    kind: str = "contact_factor_infected"

    @property
    def bound(self) -> float:
        """C_K"""
        return max(abs(self.controls.a_min), abs(self.controls.a_max))

    @property
    def lipschitz(self) -> float:
        """L_K"""
        return 1.0

    def mask(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.state] = 1.0
        return out

    def __call__(self, a: Any, e: int) -> Any:
        return a * float(e == self.state)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function of time: levels[k] on [breaks[k-1], breaks[k])"""
    breaks: Tuple[float, ...]
    levels: Tuple[float, ...]

    def __call__(self, t: float) -> float:
        return self.levels[bisect_right(self.breaks, t)]


@dataclass(frozen=True)
class PlayerParams:
    """Parameters of the player at one index"""
    beta: float
    gamma: float
    kappa: float
    rho: float
    epsilon: float
    c_I: float
    c_D: float
    c_lambda: float
    lambda_rec: Mapping[str, PiecewiseConstant]


RATE_FIELDS = ("beta", "gamma", "kappa", "rho", "epsilon", "c_I", "c_D")


@dataclass(frozen=True)
class IndexedParams:
    """Per-block parameter table, piecewise constant in the index over the mass partition.

    `levels[k][state][i]` is the recommended contact level of block i in the given
    state on the k-th policy interval; the intervals are delimited by `breaks`.
    """
    labels: Tuple[str, ...]
    masses: Tuple[float, ...]
    beta: Tuple[float, ...]
    gamma: Tuple[float, ...]
    kappa: Tuple[float, ...]
    rho: Tuple[float, ...]
    epsilon: Tuple[float, ...]
    c_I: Tuple[float, ...]
    c_D: Tuple[float, ...]
    c_lambda: float
    levels: Tuple[Mapping[str, Tuple[float, ...]], ...]
    breaks: Tuple[float, ...] = ()

    def __post_init__(self):
        k = len(self.masses)
        if k == 0:
            raise ScenarioError("blocks.masses", "at least one block is required")
        if len(self.labels) != k:
            raise ScenarioError("blocks.labels", f"expected {k} labels, got {len(self.labels)}")
        for name in RATE_FIELDS:
            values = getattr(self, name)
            if len(values) != k:
                raise ScenarioError(f"blocks.{name}", f"expected {k} values, got {len(values)}")
            if any(not np.isfinite(v) or v < 0 for v in values):
                raise ScenarioError(f"blocks.{name}", "values must be finite and ≥ 0")
        if any(v > 1 for v in self.rho):
            raise ScenarioError("blocks.rho", "recovery probability must lie in [0, 1]")
        if any(m < 0 for m in self.masses):
            raise ScenarioError("blocks.masses", "masses must be nonnegative")
        if abs(sum(self.masses) - 1.0) > MASS_TOLERANCE:
            raise ScenarioError("blocks.masses", "masses sum ≠ 1")
        if not self.c_lambda > 0:
            raise ScenarioError("policy.c_lambda", "must be > 0")
        if any(b <= a for a, b in zip(self.breaks, self.breaks[1:])) or any(b <= 0 for b in self.breaks):
            raise ScenarioError("policy.breaks", "breaks must be positive and strictly increasing")
        if len(self.levels) != len(self.breaks) + 1:
            raise ScenarioError("policy.levels", f"expected {len(self.breaks) + 1} policy intervals, got {len(self.levels)}")
        for piece in self.levels:
            for state, values in piece.items():
                if len(values) != k:
                    raise ScenarioError(f"policy.lambda.{state}", f"expected {k} values, got {len(values)}")

    @property
    def n_blocks(self) -> int:
        return len(self.masses)

    def block_of(self, x: Any) -> np.ndarray:
        xa = np.asarray(x, dtype=float)
        if np.any(xa < 0.0) or np.any(xa > 1.0):
            raise DomainError("index must lie in [0, 1]")
        return block_index(np.cumsum(self.masses), xa)

    def representatives(self) -> np.ndarray:
        """Midpoint index of each block"""
        upper = np.cumsum(self.masses)
        lower = np.concatenate([[0.0], upper[:-1]])
        return np.minimum(0.5 * (lower + upper), 1.0)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def level_array(self, states: StateSpace) -> np.ndarray:
        """(pieces, blocks, states) array of recommended levels; absent states get the default level."""
        out = np.full((len(self.levels), self.n_blocks, states.n), ABSORBING_CONTROL)
        for k, piece in enumerate(self.levels):
            for state, values in piece.items():
                if state not in states.labels:
                    raise ScenarioError(f"policy.lambda.{state}", f"state not in model states {states.labels}")
                out[k, :, states.index(state)] = values
        return out

    def at(self, x: float) -> PlayerParams:
        """Parameters of the player at index x"""
        i = int(self.block_of(x))
        states = sorted({s for piece in self.levels for s in piece})
        lambda_rec = {
            s: PiecewiseConstant(self.breaks, tuple(piece.get(s, (ABSORBING_CONTROL,) * self.n_blocks)[i]
                                                    for piece in self.levels))
            for s in states
        }
        return PlayerParams(**{name: getattr(self, name)[i] for name in RATE_FIELDS},
                            c_lambda=self.c_lambda, lambda_rec=lambda_rec)


class ModelKernel(ABC):
    """Vectorized model operations over a fixed set of units"""

    impact_mask: Any
    a_min: float
    a_max: float

    @abstractmethod
    def rates(self, t: float, a: Any, z: Any) -> Any:
        """Off-diagonal transition rates; row e uses the control a[..., e]."""

    @abstractmethod
    def running_cost(self, t: float, a: Any, z: Any) -> Any:
        """f per state"""

    @abstractmethod
    def terminal_cost(self, z: Any) -> Any:
        """g per state"""

    @abstractmethod
    def controls(self, t: float, z: Any, h: Any) -> Any:
        """Hamiltonian minimizer per state"""

    def hamiltonian(self, t: float, a: Any, z: Any, h: Any) -> Any:
        """Σ_e' q_{e,e'}(a_e, z)(h_e' − h_e) + f(e, z, a_e)"""
        r = self.rates(t, a, z)
        return (r * (h[..., None, :] - h[..., :, None])).sum(-1) + self.running_cost(t, a, z)

    def optimal_hamiltonian(self, t: float, z: Any, h: Any) -> Tuple[Any, Any]:
        a = self.controls(t, z, h)
        return a, self.hamiltonian(t, a, z, h)

    def forward(self, t: float, a: Any, z: Any, p: Any) -> Any:
        """Kolmogorov operator: (pQ)_e = Σ_e' p_e' q_{e',e} − p_e Σ_e' q_{e,e'}"""
        r = self.rates(t, a, z)
        return (p[..., :, None] * r).sum(-2) - p * r.sum(-1)

    def impact(self, a: Any, p: Any) -> Any:
        """Σ_e K(a_e, e)·p_e per unit"""
        return (self.impact_mask * a * p).sum(-1)


@dataclass(frozen=True)
class EpidemicKernel(ModelKernel):
    """Closed-form kernel: rates linear in the control, quadratic control costs.

    rates = base + contact·a·z; f = ½·weight·(target − a)² + state_cost.
    """
    base: Any
    contact: Any
    weight: Any
    inv_weight: Any
    state_cost: Any
    levels: Any
    impact_mask: Any
    breaks: Tuple[float, ...]
    a_min: float
    a_max: float

    def targets(self, t: float) -> Any:
        return self.levels[bisect_right(self.breaks, t)]

    def rates(self, t: float, a: Any, z: Any) -> Any:
        return self.base + self.contact * a[..., :, None] * z[..., None, None]

    def running_cost(self, t: float, a: Any, z: Any) -> Any:
        return 0.5 * self.weight * (self.targets(t) - a) ** 2 + self.state_cost

    def terminal_cost(self, z: Any) -> Any:
        return z[..., None] * self.weight * 0.0

    def controls(self, t: float, z: Any, h: Any) -> Any:
        slope = z[..., None] * (self.contact * (h[..., None, :] - h[..., :, None])).sum(-1)
        return (self.targets(t) - self.inv_weight * slope).clip(self.a_min, self.a_max)

    def map(self, convert: Callable[[np.ndarray], Any]) -> EpidemicKernel:
        """Same kernel with every coefficient array passed through `convert` (e.g. to torch)."""
        arrays = {f.name: convert(getattr(self, f.name)) for f in fields(self)
                  if isinstance(getattr(self, f.name), np.ndarray)}
        return replace(self, **arrays)


class GameModel(ABC):
    """A finite-state graphon game: states, controls, impact and per-index data"""

    # Registry of named models, filled by subclassing
    MODELS: ClassVar[Dict[str, Type['GameModel']]] = {}

    name: ClassVar[str] = ""

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.name:
            GameModel.MODELS[cls.name] = cls

    def __init__(self, states: StateSpace, controls: ControlSet, impact: ImpactFunction):
        self.states = states
        self.controls = controls
        self.impact = impact

    @classmethod
    def create(cls, name: str, params: IndexedParams, controls: ControlSet = ControlSet()) -> 'GameModel':
        """Factory for the registered models"""
        model_cls = cls.MODELS.get(name)
        if model_cls is None:
            raise ScenarioError("model", f"unknown model {name!r}; expected one of {sorted(cls.MODELS)}")
        return model_cls(params, controls)

    @property
    def n(self) -> int:
        return self.states.n

    @abstractmethod
    def kernel(self, xs: Any) -> ModelKernel:
        """Kernel for the players at indices xs"""

    def partition_kernel(self, graphon: BlockGraphon) -> ModelKernel:
        """Kernel with one unit per block of `graphon`"""
        return self.kernel(graphon.representatives())

    @abstractmethod
    def q_max(self, graphon: Graphon) -> float:
        """Bound on every transition rate when aggregates stay below C_K·sup w"""

    @abstractmethod
    def sup_running_cost(self) -> float:
        """sup |f| over indices, times, states and A"""

    @abstractmethod
    def sup_terminal_cost(self) -> float:
        """sup |g|"""

    def sample_indices(self) -> np.ndarray:
        """Indices at which model-wide estimates are sampled"""
        return np.array([0.0, 0.5, 1.0])

    def policy_times(self) -> Tuple[float, ...]:
        """One time inside each interval on which the model is time-homogeneous"""
        return (0.0,)

    # -- scalar facades -------------------------------------------------------

    def _check(self, a: Optional[float] = None, z: Optional[float] = None) -> None:
        if a is not None and not self.controls.contains(a):
            raise DomainError(f"control {a} outside A=[{self.controls.a_min}, {self.controls.a_max}]")
        if z is not None and z < 0:
            raise DomainError(f"aggregate must be ≥ 0, got {z}")

    def q_matrix(self, x: float, t: float, a: float, z: float) -> np.ndarray:
        """n×n Q-matrix of the player at x using control a in every state"""
        self._check(a=a, z=z)
        r = self.kernel([x]).rates(t, np.full((1, self.n), float(a)), np.array([float(z)]))[0]
        return r - np.diag(r.sum(-1))

    def running_cost(self, x: float, t: float, e: State, z: float, a: float) -> float:
        self._check(a=a)
        i = self.states.index(e)
        return float(self.kernel([x]).running_cost(t, np.full((1, self.n), float(a)), np.array([float(z)]))[0, i])

    def terminal_cost(self, x: float, e: State, z: float) -> float:
        return float(self.kernel([x]).terminal_cost(np.array([float(z)]))[0, self.states.index(e)])

    def hamiltonian(self, x: float, t: float, e: State, z: float, h: Sequence[float], a: float) -> float:
        self._check(a=a, z=z)
        i = self.states.index(e)
        hv = self._values(h)
        out = self.kernel([x]).hamiltonian(t, np.full((1, self.n), float(a)), np.array([float(z)]), hv)
        return float(out[0, i])

    def minimize_hamiltonian(self, x: float, t: float, e: State, z: float, h: Sequence[float]) -> Tuple[float, float]:
        """(â, H(â)) at state e"""
        self._check(z=z)
        i = self.states.index(e)
        a, value = self.kernel([x]).optimal_hamiltonian(t, np.array([float(z)]), self._values(h))
        return float(a[0, i]), float(value[0, i])

    def _values(self, h: Sequence[float]) -> np.ndarray:
        hv = np.asarray(h, dtype=float).reshape(1, -1)
        if hv.shape[1] != self.n:
            raise DimensionError(f"value vector has {hv.shape[1]} entries, model has {self.n} states")
        return hv


class EpidemicModel(GameModel):
    """Compartmental epidemic game with contact-factor controls and quadratic deviation costs"""

    # (from, to, coefficient) for rates independent of the control
    transitions: ClassVar[Tuple[Tuple[str, str, str], ...]] = ()
    # transition driven by β·a·z
    infection: ClassVar[Tuple[str, str]] = ("S", "I")
    # states whose deviation from λ is weighted by c_lambda
    weighted_states: ClassVar[Tuple[str, ...]] = ("S",)
    infectious_state: ClassVar[str] = "I"
    states_space: ClassVar[StateSpace] = SIR_STATES

    def __init__(self, params: IndexedParams, controls: ControlSet = ControlSet()):
        states = self.states_space
        super().__init__(states, controls, ImpactFunction(controls, states.index(self.infectious_state)))
        self.params = params
        self._levels = params.level_array(states)
        logger.info(f"Model '{self.name}': {params.n_blocks} block(s), A=[{controls.a_min}, {controls.a_max}]")

    def _coefficient(self, name: str, blocks: np.ndarray) -> np.ndarray:
        if name == "rho_gamma":
            return self.params.column("rho")[blocks] * self.params.column("gamma")[blocks]
        if name == "death_gamma":
            return (1.0 - self.params.column("rho")[blocks]) * self.params.column("gamma")[blocks]
        return self.params.column(name)[blocks]

    @debug
    def kernel(self, xs: Any) -> EpidemicKernel:
        blocks = self.params.block_of(np.asarray(xs, dtype=float).reshape(-1))
        return self.block_kernel(blocks)

    def partition_kernel(self, graphon: BlockGraphon) -> EpidemicKernel:
        # by block id, so zero-mass blocks keep their own parameters
        if graphon.n_blocks == self.params.n_blocks and np.allclose(graphon.masses, self.params.masses):
            return self.block_kernel(np.arange(graphon.n_blocks))
        return self.kernel(graphon.representatives())

    def block_kernel(self, blocks: Any) -> EpidemicKernel:
        """Kernel with one unit per entry of `blocks` (block ids)"""
        blocks = np.asarray(blocks, dtype=int).reshape(-1)
        u, n, s = len(blocks), self.n, self.states
        base = np.zeros((u, n, n))
        for src, dst, name in self.transitions:
            base[:, s.index(src), s.index(dst)] = self._coefficient(name, blocks)
        contact = np.zeros((u, n, n))
        contact[:, s.index(self.infection[0]), s.index(self.infection[1])] = self.params.column("beta")[blocks]

        weight = np.ones((u, n))
        weight[:, s.index("D")] = 0.0
        for state in self.weighted_states:
            weight[:, s.index(state)] = self.params.c_lambda
        inv_weight = np.divide(1.0, weight, out=np.zeros_like(weight), where=weight > 0)

        state_cost = np.zeros((u, n))
        state_cost[:, s.index("I")] = self.params.column("c_I")[blocks]
        state_cost[:, s.index("D")] = self.params.column("c_D")[blocks]

        return EpidemicKernel(
            base=base, contact=contact, weight=weight, inv_weight=inv_weight, state_cost=state_cost,
            levels=self._levels[:, blocks, :], impact_mask=self.impact.mask(n), breaks=self.params.breaks,
            a_min=self.controls.a_min, a_max=self.controls.a_max,
        )

    def q_max(self, graphon: Graphon) -> float:
        p = self.params
        infection = max(p.beta) * self.controls.a_max * self.impact.bound * graphon.sup()
        return float(max(infection, max(p.gamma), max(p.kappa), max(p.epsilon)))

    def sup_running_cost(self) -> float:
        k = self.block_kernel(np.arange(self.params.n_blocks))
        worst = 0.0
        for level in k.levels:
            for a in (self.controls.a_min, self.controls.a_max):
                f = 0.5 * k.weight * (level - a) ** 2 + k.state_cost
                worst = max(worst, float(np.max(np.abs(f))))
        return worst

    def sup_terminal_cost(self) -> float:
        return 0.0

    def sample_indices(self) -> np.ndarray:
        return self.params.representatives()

    def policy_times(self) -> Tuple[float, ...]:
        return (0.0,) + tuple(self.params.breaks)


class SIRModel(EpidemicModel):
    """S → I at β·a·z, I → R at ργ, I → D at (1−ρ)γ, R → S at κ; D absorbing"""
    name = "sir"
    states_space = SIR_STATES
    transitions = (("I", "R", "rho_gamma"), ("I", "D", "death_gamma"), ("R", "S", "kappa"))
    infection = ("S", "I")
    weighted_states = ("S",)


class SEIRDModel(EpidemicModel):
    """SIR with an exposed stage: S → E at β·a·z, E → I at ε"""
    name = "seird"
    states_space = SEIRD_STATES
    transitions = (("E", "I", "epsilon"), ("I", "R", "rho_gamma"), ("I", "D", "death_gamma"), ("R", "S", "kappa"))
    infection = ("S", "E")
    weighted_states = ("S", "E")


RateFn = Callable[[float, float, np.ndarray, float], np.ndarray]
CostFn = Callable[[float, float, int, float, np.ndarray], np.ndarray]
TerminalFn = Callable[[float, int, float], float]


@dataclass
class CallableKernel(ModelKernel):
    """Kernel of a user-supplied model, evaluated unit by unit with NumPy"""
    model: 'CallableGameModel'
    xs: np.ndarray
    impact_mask: np.ndarray = field(init=False)
    a_min: float = field(init=False)
    a_max: float = field(init=False)

    def __post_init__(self):
        self.impact_mask = self.model.impact.mask(self.model.n)
        self.a_min = self.model.controls.a_min
        self.a_max = self.model.controls.a_max

    def rates(self, t: float, a: Any, z: Any) -> np.ndarray:
        a, z = np.asarray(a, dtype=float), np.asarray(z, dtype=float)
        n = self.model.n
        out = np.zeros(a.shape + (n,))
        for idx in np.ndindex(*z.shape):
            x = float(self.xs[idx[-1]])
            # row e is taken from the matrix at control a_e
            q = self.model.rate_fn(x, t, a[idx], float(z[idx]))
            out[idx] = q[np.arange(n), np.arange(n)] if q.ndim == 3 else q
        off = out * (1.0 - np.eye(n))
        if np.any(off < 0):
            raise DomainError("user rate function returned a negative off-diagonal rate")
        return off

    def running_cost(self, t: float, a: Any, z: Any) -> np.ndarray:
        a, z = np.asarray(a, dtype=float), np.asarray(z, dtype=float)
        out = np.zeros(a.shape)
        for idx in np.ndindex(*z.shape):
            x = float(self.xs[idx[-1]])
            for e in range(self.model.n):
                out[idx + (e,)] = self.model.cost_fn(x, t, e, float(z[idx]), a[idx + (e,)])
        return out

    def terminal_cost(self, z: Any) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape + (self.model.n,))
        for idx in np.ndindex(*z.shape):
            x = float(self.xs[idx[-1]])
            for e in range(self.model.n):
                out[idx + (e,)] = self.model.terminal_fn(x, e, float(z[idx]))
        return out

    def controls(self, t: float, z: Any, h: Any) -> np.ndarray:
        """Grid search over A; np.argmin keeps the first (smallest) minimizer on ties."""
        z, h = np.asarray(z, dtype=float), np.asarray(h, dtype=float)
        n = self.model.n
        grid = self.model.controls.grid()
        out = np.zeros(h.shape)
        for idx in np.ndindex(*z.shape):
            x, zi, hi = float(self.xs[idx[-1]]), float(z[idx]), h[idx]
            for e in range(n):
                q = self.model.rate_fn(x, t, grid, zi)[..., e, :] * (1.0 - np.eye(n)[e])
                values = q @ (hi - hi[e]) + self.model.cost_fn(x, t, e, zi, grid)
                out[idx + (e,)] = grid[int(np.argmin(values))]
        return out


class CallableGameModel(GameModel):
    """A user model given by callables.

    `rate_fn(x, t, a, z)` returns the n×n rate matrix for control a and must
    broadcast over an array of controls (returning shape a.shape + (n, n));
    `cost_fn(x, t, e, z, a)` must broadcast over `a` as well. Rate and cost
    bounds are declared by the caller.
    """

    def __init__(self, states: StateSpace, rate_fn: RateFn, cost_fn: CostFn, *,
                 terminal_fn: Optional[TerminalFn] = None, controls: ControlSet = ControlSet(),
                 impact_state: State = "I", q_max: float, f_bound: float, g_bound: float = 0.0):
        super().__init__(states, controls, ImpactFunction(controls, states.index(impact_state)))
        self.rate_fn = rate_fn
        self.cost_fn = cost_fn
        self.terminal_fn = terminal_fn or (lambda x, e, z: 0.0)
        self._q_max = float(q_max)
        self._f_bound = float(f_bound)
        self._g_bound = float(g_bound)

    def kernel(self, xs: Any) -> CallableKernel:
        return CallableKernel(self, np.asarray(xs, dtype=float).reshape(-1))

    def q_max(self, graphon: Graphon) -> float:
        return self._q_max

    def sup_running_cost(self) -> float:
        return self._f_bound

    def sup_terminal_cost(self) -> float:
        return self._g_bound


def value_bound(model: GameModel, horizon: float) -> float:
    """C_h = T·sup|f| + sup|g|, a bound on |u|"""
    return horizon * model.sup_running_cost() + model.sup_terminal_cost()


@debug
def estimate_control_lipschitz(model: GameModel, z_bound: float, horizon: float,
                               delta: float = LIPSCHITZ_DELTA) -> float:
    """Numeric upper estimate of the Lipschitz constant of â in the aggregate.

    Forward differences of â over z ∈ [−z_bound, z_bound], every state, the
    model's sample indices and policy intervals, and value vectors h with
    components in {−C_h, 0, C_h}.
    """
    if not z_bound > 0:
        raise DomainError(f"z_bound must be > 0, got {z_bound}")
    c_h = value_bound(model, horizon)
    xs = model.sample_indices()
    kernel = model.kernel(xs)
    hs = np.array(list(itertools.product((-c_h, 0.0, c_h), repeat=model.n)))
    zs = np.linspace(-z_bound, z_bound, LIPSCHITZ_Z_POINTS)

    shape = (len(hs), len(zs), len(xs))
    h = np.broadcast_to(hs[:, None, None, :], shape + (model.n,))
    z = np.broadcast_to(zs[None, :, None], shape)
    worst = 0.0
    for t in model.policy_times():
        diff = np.abs(kernel.controls(t, z + delta, h) - kernel.controls(t, z, h)) / delta
        worst = max(worst, float(np.max(diff)))
    logger.info(f"Control Lipschitz estimate {worst:.4g} (z_bound={z_bound:.4g}, C_h={c_h:.4g})")
    return worst
