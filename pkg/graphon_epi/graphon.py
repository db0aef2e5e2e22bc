"""
Graphons: symmetric interaction kernels w : [0,1]² → [0,1], graphon-weighted
aggregates and the L² norm entering the existence margin.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, ClassVar, Dict, Optional, Type

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from graphon_epi.config import DEFAULT_QUADRATURE_POINTS, MASS_TOLERANCE
from graphon_epi.console import logger
from graphon_epi.errors import DimensionError, DomainError, ScenarioError
from graphon_epi.numerics import block_index, midpoint_quadrature_2d


def _check_index(values: np.ndarray, name: str) -> None:
    if np.any(~np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")


def _check_symmetric_unit_matrix(matrix: np.ndarray, name: str, atol: float = 0.0) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
        raise ScenarioError(name, f"must be a non-empty square matrix, got shape {matrix.shape}")
    if np.any(~np.isfinite(matrix)) or np.any(matrix < 0.0) or np.any(matrix > 1.0):
        raise ScenarioError(name, "entries must lie in [0, 1]")
    if np.max(np.abs(matrix - matrix.T)) > atol:
        raise ScenarioError(name, "matrix must be symmetric")


class Graphon(ABC):
    """Base class for interaction kernels"""

    # Registry of graphon kinds, filled by subclassing
    KINDS: ClassVar[Dict[str, Type['Graphon']]] = {}

    kind: ClassVar[str] = ""

    def __init_subclass__(cls, **kwargs):
        """Register each graphon subclass under its kind"""
        super().__init_subclass__(**kwargs)
        if cls.kind:
            Graphon.KINDS[cls.kind] = cls

    @abstractmethod
    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorized kernel on validated, broadcastable index arrays"""

    @abstractmethod
    def sup(self) -> float:
        """Largest weight of the kernel"""

    @abstractmethod
    def to_spec(self) -> Dict[str, Any]:
        """JSON-compatible description"""

    @classmethod
    @abstractmethod
    def _from_spec(cls, spec: Dict[str, Any]) -> 'Graphon':
        """Build from a validated-kind spec"""

    @classmethod
    def from_spec(cls, spec: Dict[str, Any]) -> 'Graphon':
        """Factory: build any registered graphon from its JSON spec"""
        kind = spec.get("kind")
        graphon_cls = cls.KINDS.get(kind)
        if graphon_cls is None:
            raise ScenarioError("graphon.kind", f"unknown kind {kind!r}; expected one of {sorted(cls.KINDS)}")
        return graphon_cls._from_spec(spec)

    def eval(self, x: Any, y: Any) -> Any:
        """w(x, y); scalars in, float out, arrays broadcast."""
        xa = np.asarray(x, dtype=float)
        ya = np.asarray(y, dtype=float)
        _check_index(xa, "x")
        _check_index(ya, "y")
        out = self._evaluate(xa, ya)
        if out.ndim == 0:
            return float(out)
        return out

    def matrix(self, xs: Any, ys: Optional[Any] = None) -> np.ndarray:
        """Kernel matrix [w(x_i, y_j)]"""
        xa = np.asarray(xs, dtype=float).reshape(-1)
        ya = xa if ys is None else np.asarray(ys, dtype=float).reshape(-1)
        return np.asarray(self.eval(xa[:, None], ya[None, :]), dtype=float)

    def l2_norm(self, resolution: int = DEFAULT_QUADRATURE_POINTS) -> float:
        """‖w‖ in L²([0,1]²) by midpoint quadrature."""
        return float(np.sqrt(midpoint_quadrature_2d(lambda a, b: self._evaluate(a, b) ** 2, resolution)))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Graphon) and self.to_spec() == other.to_spec()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_spec()})"


class BlockGraphon(Graphon):
    """Piecewise-constant kernel given by a connection matrix over a mass partition"""

    kind = "block"

    def __init__(self, weights: Any, masses: Any):
        self.weights = np.array(weights, dtype=float)
        self.masses = np.array(masses, dtype=float).reshape(-1)
        _check_symmetric_unit_matrix(self.weights, "graphon.weights")
        if self.masses.shape[0] != self.weights.shape[0]:
            raise ScenarioError("graphon.masses", f"expected {self.weights.shape[0]} masses, got {self.masses.shape[0]}")
        if np.any(self.masses < 0.0):
            raise ScenarioError("graphon.masses", "masses must be nonnegative")
        if abs(float(np.sum(self.masses)) - 1.0) > MASS_TOLERANCE:
            raise ScenarioError("graphon.masses", f"masses sum ≠ 1 (got {float(np.sum(self.masses)):.12g})")
        self.weights.setflags(write=False)
        self.masses.setflags(write=False)
        self._cumulative = np.cumsum(self.masses)

    @property
    def n_blocks(self) -> int:
        return int(self.masses.shape[0])

    def block_of(self, x: Any) -> Any:
        """Block id of each index: half-open intervals [c_{i-1}, c_i), the last one closed."""
        xa = np.asarray(x, dtype=float)
        _check_index(xa, "x")
        blocks = block_index(self._cumulative, xa)
        if blocks.ndim == 0:
            return int(blocks)
        return blocks

    def representatives(self) -> np.ndarray:
        """Midpoint index of every block"""
        lower = np.concatenate([[0.0], self._cumulative[:-1]])
        return np.minimum(0.5 * (lower + self._cumulative), 1.0)

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.weights[self.block_of(x), self.block_of(y)]

    def l2_norm(self, resolution: int = DEFAULT_QUADRATURE_POINTS) -> float:
        m = self.masses
        return float(np.sqrt(np.sum(self.weights ** 2 * m[:, None] * m[None, :])))

    def sup(self) -> float:
        return float(np.max(self.weights))

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "weights": self.weights.tolist(), "masses": self.masses.tolist()}

    @classmethod
    def _from_spec(cls, spec: Dict[str, Any]) -> 'BlockGraphon':
        if "weights" not in spec or "masses" not in spec:
            raise ScenarioError("graphon", "block graphon needs 'weights' and 'masses'")
        return cls(spec["weights"], spec["masses"])


class PowerLawGraphon(Graphon):
    """w(x, y) = (x·y)^(-g), g ≤ 0; w(0, ·) = 0 for g < 0 by continuity"""

    kind = "powerlaw"

    def __init__(self, g: float):
        if not np.isfinite(g) or g > 0.0:
            raise ScenarioError("graphon.g", f"exponent must be ≤ 0, got {g}")
        self.g = float(g)

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.g == 0.0:
            return np.ones(np.broadcast(x, y).shape)
        return np.clip(np.power(x * y, -self.g), 0.0, 1.0)

    def sup(self) -> float:
        return 1.0

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "g": self.g}

    @classmethod
    def _from_spec(cls, spec: Dict[str, Any]) -> 'PowerLawGraphon':
        return cls(float(spec.get("g", 0.0)))


class ConstantGraphon(Graphon):
    """w ≡ p (p = 1 is the mean-field case)"""

    kind = "constant"

    def __init__(self, p: float):
        if not 0.0 <= p <= 1.0:
            raise ScenarioError("graphon.p", f"constant must lie in [0, 1], got {p}")
        self.p = float(p)

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.full(np.broadcast(x, y).shape, self.p)

    def l2_norm(self, resolution: int = DEFAULT_QUADRATURE_POINTS) -> float:
        return self.p

    def sup(self) -> float:
        return self.p

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "p": self.p}

    @classmethod
    def _from_spec(cls, spec: Dict[str, Any]) -> 'ConstantGraphon':
        return cls(float(spec.get("p", 1.0)))


class TabulatedGraphon(Graphon):
    """Kernel tabulated on M equispaced grid points of [0, 1], bilinear in between"""

    kind = "tabulated"

    def __init__(self, grid: Any):
        self.grid = np.array(grid, dtype=float)
        _check_symmetric_unit_matrix(self.grid, "graphon.grid", atol=1e-12)
        if self.grid.shape[0] < 2:
            raise ScenarioError("graphon.grid", "needs at least 2 grid points")
        self.grid.setflags(write=False)
        nodes = np.linspace(0.0, 1.0, self.grid.shape[0])
        self._interpolator = RegularGridInterpolator((nodes, nodes), self.grid, method="linear")

    def _evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        xb, yb = np.broadcast_arrays(x, y)
        points = np.stack([xb.reshape(-1), yb.reshape(-1)], axis=-1)
        values = self._interpolator(points).reshape(xb.shape)
        return np.clip(values, 0.0, 1.0)

    def sup(self) -> float:
        return float(np.max(self.grid))

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "grid": self.grid.tolist()}

    @classmethod
    def _from_spec(cls, spec: Dict[str, Any]) -> 'TabulatedGraphon':
        if "grid" not in spec:
            raise ScenarioError("graphon.grid", "tabulated graphon needs 'grid'")
        return cls(spec["grid"])


def aggregate_block(weights: Any, masses: Any, values: Any) -> np.ndarray:
    """out_i = Σ_k weights[i][k]·values[k]·masses[k].

    `values` may carry leading axes (e.g. time); the block axis is the last one.
    """
    w = np.asarray(weights, dtype=float)
    m = np.asarray(masses, dtype=float)
    v = np.asarray(values, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or m.shape != (w.shape[1],) or v.shape[-1] != w.shape[1]:
        raise DimensionError(f"aggregate_block: weights {w.shape}, masses {m.shape}, values {v.shape} disagree")
    return (v * m) @ w.T


def aggregate_sampled(w: Graphon, indices: Any, values: Any, query: Any) -> Any:
    """(1/N)·Σ_j w(query, x_j)·values_j in index order."""
    x = np.asarray(indices, dtype=float).reshape(-1)
    v = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise DimensionError("aggregate_sampled: empty sample")
    if v.shape != x.shape:
        raise DimensionError(f"aggregate_sampled: {x.size} indices but {v.size} values")
    q = np.asarray(query, dtype=float)
    kernel = w.matrix(q.reshape(-1), x)
    out = (kernel @ v) / x.size
    if q.ndim == 0:
        return float(out[0])
    return out.reshape(q.shape)


def existence_margin(w: Graphon, lip_K: float, lip_control: float) -> float:
    """Contraction constant ‖w‖·L_K·L_â; existence is guaranteed only below 1."""
    if lip_K < 0 or lip_control < 0:
        raise DomainError("Lipschitz constants must be nonnegative")
    margin = w.l2_norm() * lip_K * lip_control
    if margin >= 1.0:
        logger.warning(f"Existence margin {margin:.4g} ≥ 1: equilibrium existence is not guaranteed, solving anyway")
    else:
        logger.info(f"Existence margin {margin:.4g} < 1")
    return margin
