import logging

import numpy as np
import pytest

from graphon_epi.errors import DimensionError, DomainError, ScenarioError
from graphon_epi.graphon import (
    BlockGraphon, ConstantGraphon, Graphon, PowerLawGraphon, TabulatedGraphon, aggregate_block, aggregate_sampled,
    existence_margin
)

AGE_WEIGHTS = [[1.0, 0.9, 0.8, 0.7], [0.9, 0.9, 0.8, 0.8], [0.8, 0.8, 0.9, 0.8], [0.7, 0.8, 0.8, 0.8]]
AGE_MASSES = [0.27, 0.33, 0.27, 0.13]


@pytest.fixture
def age_graphon() -> BlockGraphon:
    return BlockGraphon(AGE_WEIGHTS, AGE_MASSES)


def test_block_eval_uses_block_of_each_index(age_graphon):
    assert age_graphon.eval(0.1, 0.9) == pytest.approx(0.7)
    assert age_graphon.eval(0.5, 0.5) == pytest.approx(0.9)
    assert age_graphon.eval(0.7, 0.3) == pytest.approx(0.8)
    assert isinstance(age_graphon.eval(0.1, 0.2), float)


def test_block_of_half_open_intervals(age_graphon):
    assert age_graphon.block_of(0.0) == 0
    assert age_graphon.block_of(0.27) == 1
    assert age_graphon.block_of(1.0) == 3
    np.testing.assert_array_equal(age_graphon.block_of(np.array([0.1, 0.3, 0.7, 0.95])), [0, 1, 2, 3])


def test_block_graphon_is_symmetric(age_graphon, rng):
    x, y = rng.uniform(size=50), rng.uniform(size=50)
    np.testing.assert_array_equal(age_graphon.eval(x, y), age_graphon.eval(y, x))


def test_eval_outside_unit_interval_raises(age_graphon):
    with pytest.raises(DomainError):
        age_graphon.eval(1.2, 0.5)
    with pytest.raises(DomainError):
        age_graphon.eval(0.5, -0.1)


def test_masses_must_sum_to_one():
    with pytest.raises(ScenarioError, match="masses sum ≠ 1"):
        BlockGraphon([[1.0, 0.5], [0.5, 1.0]], [0.5, 0.6])


def test_asymmetric_weights_rejected():
    with pytest.raises(ScenarioError) as info:
        BlockGraphon([[1.0, 0.2], [0.5, 1.0]], [0.5, 0.5])
    assert info.value.field == "graphon.weights"


def test_weights_outside_unit_interval_rejected():
    with pytest.raises(ScenarioError):
        BlockGraphon([[1.5]], [1.0])


def test_block_l2_norm_is_exact():
    assert BlockGraphon([[1.0]], [1.0]).l2_norm() == pytest.approx(1.0)
    g = BlockGraphon([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5])
    assert g.l2_norm() == pytest.approx(np.sqrt(0.5))


def test_block_l2_norm_matches_fine_quadrature():
    # dyadic masses keep every block boundary on a cell edge of the 2048 grid
    g = BlockGraphon(AGE_WEIGHTS, [0.25, 0.375, 0.25, 0.125])
    assert g.l2_norm() == pytest.approx(Graphon.l2_norm(g, resolution=2048), abs=1e-6)


def test_block_of_skips_empty_last_block():
    g = BlockGraphon([[1.0, 0.5, 0.2], [0.5, 1.0, 0.2], [0.2, 0.2, 1.0]], [0.5, 0.5, 0.0])
    assert g.block_of(1.0) == 1
    assert g.block_of(0.5) == 1


def test_power_law_values():
    g = PowerLawGraphon(-0.2)
    assert g.eval(0.5, 0.5) == pytest.approx(0.25 ** 0.2)
    assert g.eval(0.0, 0.5) == 0.0
    assert g.eval(1.0, 1.0) == pytest.approx(1.0)
    assert PowerLawGraphon(0.0).eval(0.0, 0.0) == 1.0


def test_power_law_rejects_positive_exponent():
    with pytest.raises(ScenarioError):
        PowerLawGraphon(0.3)


def test_power_law_norm_by_quadrature():
    # ∫∫ (xy)^0.4 = (1/1.4)²
    assert PowerLawGraphon(-0.2).l2_norm() == pytest.approx(1.0 / 1.4, rel=1e-3)


def test_constant_graphon():
    g = ConstantGraphon(0.3)
    assert g.eval(0.1, 0.9) == pytest.approx(0.3)
    assert g.l2_norm() == pytest.approx(0.3)
    assert g.sup() == pytest.approx(0.3)


def test_tabulated_graphon_interpolates():
    g = TabulatedGraphon([[1.0, 0.0], [0.0, 1.0]])
    assert g.eval(0.0, 0.0) == pytest.approx(1.0)
    assert g.eval(0.5, 0.5) == pytest.approx(0.5)
    assert g.sup() == pytest.approx(1.0)


def test_matrix_shape(age_graphon):
    m = age_graphon.matrix([0.1, 0.5, 0.9], [0.2, 0.8])
    assert m.shape == (3, 2)
    assert m[2, 1] == pytest.approx(0.8)


@pytest.mark.parametrize("graphon", [
    BlockGraphon(AGE_WEIGHTS, AGE_MASSES),
    PowerLawGraphon(-0.2),
    ConstantGraphon(1.0),
    TabulatedGraphon([[1.0, 0.5, 0.2], [0.5, 1.0, 0.5], [0.2, 0.5, 1.0]]),
])
def test_specs_rebuild_the_same_graphon(graphon):
    assert Graphon.from_spec(graphon.to_spec()) == graphon


def test_unknown_kind_rejected():
    with pytest.raises(ScenarioError) as info:
        Graphon.from_spec({"kind": "smallworld"})
    assert info.value.field == "graphon.kind"


def test_aggregate_block_single_block():
    np.testing.assert_allclose(aggregate_block([[1.0]], [1.0], [0.9 * 0.2]), [0.18])


def test_aggregate_block_zero_values():
    np.testing.assert_array_equal(aggregate_block(AGE_WEIGHTS, AGE_MASSES, np.zeros((5, 4))), np.zeros((5, 4)))


def test_aggregate_block_dimension_mismatch():
    with pytest.raises(DimensionError):
        aggregate_block(AGE_WEIGHTS, AGE_MASSES, [0.1, 0.2])


def test_stratified_sample_reproduces_block_aggregate(age_graphon):
    counts = [27, 33, 27, 13]
    values = np.array([0.3, 0.1, 0.7, 0.4])
    reps = age_graphon.representatives()
    indices = np.repeat(reps, counts)
    sampled = aggregate_sampled(age_graphon, indices, np.repeat(values, counts), reps)
    np.testing.assert_allclose(sampled, aggregate_block(AGE_WEIGHTS, AGE_MASSES, values), rtol=0, atol=1e-12)


def test_aggregate_sampled():
    g = ConstantGraphon(1.0)
    assert aggregate_sampled(g, [0.2, 0.8], [0.9, 0.0], 0.5) == pytest.approx(0.45)
    with pytest.raises(DimensionError):
        aggregate_sampled(g, [], [], 0.5)


def test_existence_margin_zero_graphon():
    assert existence_margin(BlockGraphon([[0.0]], [1.0]), 1.0, 3.0) == 0.0


def test_existence_margin_warns_when_not_contracting(caplog):
    with caplog.at_level(logging.WARNING, logger="graphon_epi"):
        margin = existence_margin(ConstantGraphon(1.0), 1.0, 2.0)
    assert margin == pytest.approx(2.0)
    assert "not guaranteed" in caplog.text


def test_existence_margin_rejects_negative_constants():
    with pytest.raises(DomainError):
        existence_margin(ConstantGraphon(1.0), -1.0, 1.0)
