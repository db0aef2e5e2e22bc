import json
from importlib import resources
from pathlib import Path
from dataclasses import replace
from typing import Any, Callable, Dict

import numpy as np
import pytest

from graphon_epi.model import IndexedParams
from graphon_epi.scenario import ScenarioConfig, load_scenario


def make_params(k: int = 1, beta: float = 0.4, gamma: float = 0.1, rho: float = 1.0, kappa: float = 0.0,
                epsilon: float = 0.0, c_I: float = 1.0, c_D: float = 1.0, c_lambda: float = 10.0,
                masses=None, levels=None, breaks=()) -> IndexedParams:
    """Per-block table with the same parameters in every block"""
    masses = tuple(masses) if masses is not None else (1.0 / k,) * k
    if levels is None:
        levels = ({"S": (1.0,) * k, "I": (0.9,) * k, "R": (1.0,) * k},)
    return IndexedParams(
        labels=tuple(str(i) for i in range(k)), masses=masses,
        beta=(beta,) * k, gamma=(gamma,) * k, kappa=(kappa,) * k, rho=(rho,) * k, epsilon=(epsilon,) * k,
        c_I=(c_I,) * k, c_D=(c_D,) * k, c_lambda=c_lambda, levels=levels, breaks=tuple(breaks),
    )


@pytest.fixture
def params_factory() -> Callable[..., IndexedParams]:
    return make_params


@pytest.fixture
def bundled_data() -> Callable[[str], Dict[str, Any]]:
    """Decoded JSON of a bundled scenario, ready to be modified"""
    def load(name: str) -> Dict[str, Any]:
        text = (resources.files("graphon_epi") / "scenarios" / f"{name}.json").read_text(encoding="utf-8")
        return json.loads(text)
    return load


@pytest.fixture
def write_json(tmp_path: Path) -> Callable[[Dict[str, Any], str], Path]:
    def write(data: Dict[str, Any], name: str = "scenario.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path
    return write


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def short_training() -> Callable[[str], ScenarioConfig]:
    """Bundled scenario with one training iteration on a small batch"""
    def load(name: str) -> ScenarioConfig:
        config = load_scenario(name).with_overrides(iters=1)
        shooting = replace(config.solver.shooting, batch_size=16, evaluation_points=5)
        return replace(config, solver=replace(config.solver, shooting=shooting))
    return load
