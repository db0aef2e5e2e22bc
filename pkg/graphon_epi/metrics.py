from dataclasses import dataclass, field, asdict
from enum import StrEnum
from typing import Any, Dict, List, Optional

import pandas as pd

from graphon_epi.config import TRAINING_LOG_COLUMNS


class Command(StrEnum):
    BLOCK = 'block'
    SHOOT = 'shoot'
    PARTICLE = 'particle'
    COMPARE = 'compare'
    POLICIES = 'policies'


class MarginStatus(StrEnum):
    """Whether the contraction condition that guarantees an equilibrium holds"""
    GUARANTEED = 'guaranteed'  # margin < 1
    NOT_GUARANTEED = 'not_guaranteed'  # margin >= 1


@dataclass
class FBResidual:
    """Sup-norm defects of the three equations of the forward-backward system"""
    hjb: float = 0.0
    kolmogorov: float = 0.0
    aggregate: float = 0.0

    def worst(self) -> float:
        return max(self.hjb, self.kolmogorov, self.aggregate)


@dataclass
class SolverDiagnostics:
    """Diagnostics of one block-solver run"""
    iterations: int = 0
    residual: float = float('inf')
    residual_history: List[float] = field(default_factory=list)
    graphon_l2_norm: float = 0.0
    control_lipschitz: float = 0.0
    existence_margin: float = 0.0
    fb_residual: Optional[FBResidual] = None
    simplex_defect: float = 0.0
    multiplicity_gap: Optional[float] = None

    @property
    def margin_status(self) -> MarginStatus:
        if self.existence_margin < 1.0:
            return MarginStatus.GUARANTEED
        return MarginStatus.NOT_GUARANTEED

    def contraction_ratios(self) -> List[float]:
        """Observed ratios of successive Picard residuals"""
        h = self.residual_history
        return [h[i + 1] / h[i] for i in range(len(h) - 1) if h[i] > 0]

    def existence(self) -> Dict[str, Any]:
        """The graphon-level fields, without the Picard history"""
        return {"graphon_l2_norm": self.graphon_l2_norm, "control_lipschitz": self.control_lipschitz,
                "existence_margin": self.existence_margin, "margin_status": str(self.margin_status)}

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["margin_status"] = str(self.margin_status)
        return data


@dataclass
class TrainingRecord:
    iteration: int
    loss: float
    grad_norm: float
    lr: float
    seconds: float


@dataclass
class TrainingLog:
    """Per-iteration record of a shooting-solver training run"""
    records: List[TrainingRecord] = field(default_factory=list)

    def append(self, record: TrainingRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    @property
    def final_loss(self) -> Optional[float]:
        return self.records[-1].loss if self.records else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=TRAINING_LOG_COLUMNS)


@dataclass
class BlockSummary:
    """Epidemic summary of one block (or evaluation index)"""
    unit: str
    label: str
    mass: float
    terminal_deceased: Optional[float]
    peak_infected: float
    peak_time: float
    mean_susceptible_control: float


@dataclass
class EpidemicSummary:
    blocks: List[BlockSummary] = field(default_factory=list)
    population_deceased: Optional[float] = None
    population_peak_infected: float = 0.0
    population_peak_time: float = 0.0

    def block(self, label: str) -> BlockSummary:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)


@dataclass
class GapSummary:
    """Empirical-vs-deterministic aggregate gap"""
    sup: float
    rms: float


@dataclass
class RunReport:
    """Everything written to report.json"""
    command: Command
    scenario: str
    summary: Optional[EpidemicSummary] = None
    deviations: Dict[str, float] = field(default_factory=dict)
    policy_deltas: Dict[str, Dict[str, float]] = field(default_factory=dict)
    gap: Optional[GapSummary] = None
    elapsed: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["command"] = str(self.command)
        return data
