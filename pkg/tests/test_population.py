import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decn import diffcore as dc
from decn.diffcore import NumericError, Tensor
from decn.evolution import DecnModel, decn_run
from decn.functions import ObjectiveInstance, sample_shift
from decn.population import (
    NotEvaluatedError,
    PopulationGrid,
    clip_to_bounds,
    evaluate,
    init_population,
    snapshot_csv,
    sort_descending,
)

from oracles import stable_descending_order


def _grid_with_fitness(fitness, D=1):
    fitness = np.asarray(fitness, dtype=float)
    L = fitness.shape[0]
    dec = np.arange(L * L * D, dtype=float).reshape(L, L, D)
    return PopulationGrid(Tensor(dec), np.full(D, -1e9), np.full(D, 1e9), Tensor(fitness), L * L)


def test_init_population_bounds_and_count():
    inst = sample_shift("F4", 10, np.random.default_rng(0))
    pop = init_population(10, inst, np.random.default_rng(1))
    assert pop.decisions.shape == (10, 10, 10)
    assert pop.eval_count == 0 and not pop.evaluated
    assert np.all(np.abs(pop.decisions.data) <= 100)
    assert np.isnan(pop.lattice).sum() == 100  # fitness channel stale


def test_single_individual_lattice_runs_through_evaluation():
    inst = sample_shift("F4", 3, np.random.default_rng(0))
    pop = evaluate(init_population(1, inst, np.random.default_rng(0)), inst)
    assert pop.lattice.shape == (1, 1, 4)
    assert sort_descending(pop).permutation.tolist() == [0]
    one = DecnModel.initialize(1, True, np.random.default_rng(0), kernel_sizes=(1,))
    _, rec = decn_run(pop, one, inst)
    assert rec.final_evals == 2


def test_init_population_deterministic():
    inst = sample_shift("F7", 4, np.random.default_rng(0))
    a = init_population(5, inst, np.random.default_rng(3))
    b = init_population(5, inst, np.random.default_rng(3))
    np.testing.assert_array_equal(a.decisions.data, b.decisions.data)


def test_evaluate_at_optimum_and_counter():
    inst = sample_shift("F4", 3, np.random.default_rng(0))
    dec = np.broadcast_to(inst.shift, (4, 4, 3))
    pop = evaluate(PopulationGrid(Tensor(dec), inst.lower, inst.upper), inst)
    np.testing.assert_array_equal(pop.fitness.data, np.zeros((4, 4)))
    assert pop.eval_count == 16
    again = evaluate(pop, inst)
    np.testing.assert_array_equal(again.fitness.data, pop.fitness.data)
    assert again.eval_count == 32


def test_evaluate_reports_bad_cell():
    wide = ObjectiveInstance("F4", 1, [-1e308], [1e308], shift=[0.0])
    dec = np.zeros((2, 2, 1))
    dec[1, 0, 0] = 1e300  # squaring overflows only in this cell
    with np.errstate(over="ignore"), pytest.raises(NumericError, match=r"\(1, 0\)"):
        evaluate(PopulationGrid(Tensor(dec), wide.lower, wide.upper), wide)


def test_evaluate_rejects_out_of_bounds():
    inst = sample_shift("F4", 2, np.random.default_rng(0))
    pop = PopulationGrid(Tensor(np.full((2, 2, 2), 500.0)), inst.lower, inst.upper)
    with pytest.raises(ValueError):
        evaluate(pop, inst)


def test_fitness_channel_binding():
    rng = np.random.default_rng(4)
    for _ in range(100):
        inst = sample_shift(str(rng.choice(["F4", "F5", "F7", "F9"])), 3, rng)
        pop = evaluate(init_population(4, inst, rng), inst)
        recomputed = inst.evaluate(pop.decisions.data)
        np.testing.assert_array_equal(recomputed, pop.fitness.data)


def test_sort_small_example():
    pop = sort_descending(_grid_with_fitness([[3, 1], [2, 0]]))
    assert pop.fitness.data.ravel().tolist() == [3, 2, 1, 0]
    # decisions travel with their fitness
    assert pop.decisions.data.ravel().tolist() == [0, 2, 1, 3]


def test_sort_already_sorted_is_identity():
    pop = sort_descending(_grid_with_fitness([[4, 3], [2, 1]]))
    assert pop.permutation.tolist() == [0, 1, 2, 3]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), levels=st.integers(1, 6))
def test_sort_matches_stable_reference(seed, levels):
    rng = np.random.default_rng(seed)
    fit = rng.integers(0, levels, size=(10, 10)).astype(float)  # plenty of ties
    pop = sort_descending(_grid_with_fitness(fit, D=2))
    order = stable_descending_order(fit.ravel().tolist())
    assert pop.permutation.tolist() == order
    np.testing.assert_array_equal(pop.decisions.data.reshape(100, 2),
                                  _grid_with_fitness(fit, D=2).decisions.data.reshape(100, 2)[order])
    twice = sort_descending(pop)
    np.testing.assert_array_equal(twice.fitness.data, pop.fitness.data)
    assert twice.permutation.tolist() == list(range(100))


def test_sort_requires_fitness():
    inst = sample_shift("F4", 2, np.random.default_rng(0))
    with pytest.raises(NotEvaluatedError):
        sort_descending(init_population(3, inst, np.random.default_rng(0)))


def test_clip_to_bounds():
    dec = np.array([[[150.0], [5.0]], [[-120.0], [0.0]]])
    pop = clip_to_bounds(PopulationGrid(Tensor(dec), np.array([-100.0]), np.array([100.0])))
    assert pop.decisions.data.ravel().tolist() == [100.0, 5.0, -100.0, 0.0]
    inside = PopulationGrid(Tensor(dec / 10), np.array([-100.0]), np.array([100.0]),
                            Tensor(np.ones((2, 2))), 4)
    kept = clip_to_bounds(inside)
    np.testing.assert_array_equal(kept.decisions.data, inside.decisions.data)
    assert kept.evaluated


def test_clamped_coordinate_gets_zero_gradient():
    lower, upper = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    base = np.array([[[0.9, 0.1]]])

    def program(scale):
        pop = PopulationGrid(dc.mul(Tensor(base), scale), lower, upper)
        return dc.sum(clip_to_bounds(pop).decisions)

    tape = dc.Tape()
    s = tape.leaf([2.0])
    (g,) = dc.grad(program(s), [s])
    # 0.9 * 2 is clamped to 1 and contributes nothing; 0.1 * 2 passes through.
    np.testing.assert_allclose(g, [0.1])
    assert dc.finite_diff_check(program, [np.array([2.0])]) <= 1e-6


def test_snapshot_csv_columns():
    pop = _grid_with_fitness([[3, 1], [2, 0]], D=2)
    lines = snapshot_csv(pop).splitlines()
    assert lines[0] == "row,col,x1,x2,fitness"
    assert lines[1] == "0,0,0.0,1.0,3.0"
    assert len(lines) == 5
