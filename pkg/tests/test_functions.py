import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decn import diffcore as dc
from decn.diffcore import ShapeError, Tensor
from decn.functions import (
    FUNCTION_RANGES,
    TEST_IDS,
    TRAINING_IDS,
    FunctionSet,
    ObjectiveBatch,
    ObjectiveInstance,
    arm_instance,
    evaluate,
    make_arm_dataset,
    make_dataset,
    sample_arm_targets,
    sample_shift,
    sample_test_instances,
)

from oracles import arm_tip_distance, scalar_objective

ALL_IDS = TRAINING_IDS + TEST_IDS


@pytest.mark.parametrize("fid", ALL_IDS)
def test_formulas_match_scalar_reference(fid):
    rng = np.random.default_rng(0)
    for dim in (1, 2, 7):
        inst = sample_shift(fid, dim, rng)
        xs = rng.uniform(inst.lower, inst.upper, size=(25, dim))
        got = inst.evaluate(xs)
        want = [scalar_objective(fid, x, inst.shift, inst.weights) for x in xs]
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_value_at_shift_is_zero():
    rng = np.random.default_rng(1)
    for fid in ("F4", "F5", "F7", "F8", "F9"):
        inst = sample_shift(fid, 10, rng)
        assert abs(inst.evaluate(inst.shift)) < 1e-12, fid


def test_sphere_at_shift():
    inst = sample_shift("F4", 10, np.random.default_rng(2))
    assert inst.evaluate(inst.shift) == 0.0


def test_ackley_cancels_at_optimum():
    inst = sample_shift("F9", 5, np.random.default_rng(3))
    assert abs(inst.evaluate(inst.shift)) < 1e-14


def test_rosenbrock_like_vanishes_at_unit_offset():
    # The tabulated F6 has (z_i - 1)^2 terms, so its zero sits at z = 1, not z = 0.
    inst = sample_shift("F6", 6, np.random.default_rng(4))
    assert inst.evaluate(inst.shift + 1.0) == 0.0
    assert inst.evaluate(inst.shift) == pytest.approx(5.0)


@pytest.mark.parametrize("fid", TEST_IDS)
def test_test_functions_are_non_negative(fid):
    rng = np.random.default_rng(5)
    inst = sample_shift(fid, 10, rng)
    xs = rng.uniform(inst.lower, inst.upper, size=(100, 10))
    assert np.all(inst.evaluate(xs) >= -1e-12)


def test_dimension_mismatch_is_shape_error():
    inst = sample_shift("F4", 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        inst.evaluate(np.zeros(4))


@pytest.mark.parametrize("fid", ALL_IDS)
def test_gradients_match_finite_differences(fid):
    rng = np.random.default_rng(6)
    inst = sample_shift(fid, 4, rng)
    checked = 0
    while checked < 10:
        x = rng.uniform(inst.lower, inst.upper) * 0.5 + inst.shift * 0.5
        report = dc.finite_diff_report(lambda t: inst.evaluate(t), [x])
        if report.gate_flips:
            continue  # too close to a kink of |.| or max
        assert report.max_rel_error <= 1e-4, (fid, report)
        checked += 1


def test_sample_shift_ranges_and_determinism():
    a = sample_shift("F4", 3, np.random.default_rng(9))
    b = sample_shift("F4", 3, np.random.default_rng(9))
    assert a == b
    assert np.all(np.abs(a.shift) <= 50)
    f7 = sample_shift("F7", 10, np.random.default_rng(10))
    assert np.all(np.abs(f7.shift) <= 2.5)
    for fid, (xr, br) in FUNCTION_RANGES.items():
        inst = sample_shift(fid, 5, np.random.default_rng(11))
        np.testing.assert_array_equal(inst.lower, np.full(5, xr[0]))
        np.testing.assert_array_equal(inst.upper, np.full(5, xr[1]))
        assert np.all((inst.shift >= br[0]) & (inst.shift <= br[1]))


def test_f1_weights_sampled_in_documented_range():
    inst = sample_shift("F1", 50, np.random.default_rng(12))
    assert inst.weights is not None
    assert np.all(np.abs(inst.weights) <= 10)


def test_shift_distribution_is_uniform():
    rng = np.random.default_rng(13)
    b = np.array([sample_shift("F4", 1, rng).shift[0] for _ in range(10_000)])
    sigma = 100 / np.sqrt(12) / np.sqrt(b.size)
    assert abs(b.mean()) < 3 * sigma
    assert b.min() < -49.5 and b.max() > 49.5


def test_high_fidelity_dataset():
    ds = make_dataset("high", "F4", 3, 5, np.random.default_rng(0))
    assert [i.id for i in ds.instances] == ["F4"] * 3
    shifts = [tuple(i.shift) for i in ds.instances]
    assert len(set(shifts)) == 3


def test_low_fidelity_dataset():
    ds = make_dataset("low", "F4", 3, 2, np.random.default_rng(0))
    assert [i.id for i in ds.instances] == ["F1", "F2", "F3"]
    assert ds.fidelity == "low" and ds.target_id == "F4"


def test_dataset_determinism_and_errors():
    a = make_dataset("high", "F7", 4, 3, np.random.default_rng(5))
    b = make_dataset("high", "F7", 4, 3, np.random.default_rng(5))
    assert a == b
    with pytest.raises(ValueError):
        make_dataset("high", "F42", 1, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_dataset("medium", "F4", 1, 2, np.random.default_rng(0))


def test_held_out_shifts_differ_from_training():
    rng = np.random.default_rng(0)
    train = make_dataset("high", "F4", 5, 3, rng)
    tests = sample_test_instances("F4", 3, 10, rng, exclude=train)
    for t in tests:
        assert all(not np.array_equal(t.shift, s.shift) for s in train.instances)


def test_function_set_json_round_trip():
    ds = make_dataset("low", "F7", 6, 3, np.random.default_rng(1))
    doc = json.loads(ds.to_json())
    assert set(doc) >= {"fidelity", "target_id", "instances"}
    assert FunctionSet.from_json(ds.to_json()) == ds
    again = FunctionSet.from_json(ds.to_json())
    for a, b in zip(ds.instances, again.instances):
        np.testing.assert_array_equal(a.shift, b.shift)


def test_resampled_keeps_ids_and_changes_shifts():
    ds = make_dataset("low", "F4", 3, 4, np.random.default_rng(2))
    new = ds.resampled(np.random.default_rng(3))
    assert [i.id for i in new.instances] == [i.id for i in ds.instances]
    assert all(not np.array_equal(a.shift, b.shift) for a, b in zip(ds.instances, new.instances))


# ----------------------------------------------------------------------- arm

def test_arm_two_links():
    inst = arm_instance("sc", 2, (20.0, 0.0), 100.0)
    assert inst.evaluate(np.zeros(2)) == 0.0
    inst = arm_instance("sc", 2, (0.0, 20.0), 100.0)
    assert inst.evaluate(np.zeros(2)) == pytest.approx(np.sqrt(800.0))


def test_arm_matches_forward_kinematics_oracle():
    rng = np.random.default_rng(7)
    for case in ("sc", "cc"):
        for n in (1, 3, 10):
            target = sample_arm_targets(1, 50.0, rng)[0]
            inst = arm_instance(case, n, target, 50.0)
            for x in rng.uniform(inst.lower, inst.upper, size=(10, inst.dim)):
                lengths = [10.0] * n if case == "sc" else x[:n]
                angles = x if case == "sc" else x[n:]
                assert inst.evaluate(x) == pytest.approx(arm_tip_distance(lengths, angles, target),
                                                          rel=1e-12, abs=1e-12)


def test_arm_dimensions_and_bounds():
    sc = arm_instance("sc", 100, (500.0, 0.0), 1000.0)
    assert sc.dim == 100
    np.testing.assert_allclose(sc.lower, -np.pi)
    cc = arm_instance("cc", 2, (1.0, 1.0), 10.0)
    assert cc.dim == 4
    np.testing.assert_array_equal(cc.lower[:2], [0, 0])
    np.testing.assert_array_equal(cc.upper[:2], [10, 10])
    np.testing.assert_allclose(cc.lower[2:], -np.pi)
    np.testing.assert_allclose(cc.upper[2:], np.pi)


def test_arm_one_link_optimum():
    inst = arm_instance("sc", 1, (10.0, 0.0), 10.0)
    assert inst.evaluate(np.array([0.0])) == 0.0


def test_arm_errors():
    with pytest.raises(ValueError):
        arm_instance("sc", 2, (200.0, 0.0), 100.0)
    with pytest.raises(ValueError):
        arm_instance("xx", 2, (1.0, 0.0), 100.0)
    with pytest.raises(ValueError):
        arm_instance("sc", 0, (1.0, 0.0), 100.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(1, 6))
def test_cc_zero_length_segment_changes_nothing(seed, n):
    rng = np.random.default_rng(seed)
    target = sample_arm_targets(1, 30.0, rng)[0]
    short = arm_instance("cc", n, target, 30.0)
    longer = arm_instance("cc", n + 1, target, 30.0)
    x = rng.uniform(short.lower, short.upper)
    extra_angle = rng.uniform(-np.pi, np.pi)
    y = np.concatenate([x[:n], [0.0], x[n:], [extra_angle]])
    assert longer.evaluate(y) == pytest.approx(short.evaluate(x), rel=1e-12, abs=1e-12)


def test_arm_targets_inside_disk():
    pts = sample_arm_targets(500, 100.0, np.random.default_rng(0))
    assert np.all(np.hypot(pts[:, 0], pts[:, 1]) <= 100.0)
    ds = make_arm_dataset("sc", 10, 8, 100.0, np.random.default_rng(0))
    assert len(ds) == 8 and ds.dim == 10


def test_instance_validation():
    with pytest.raises(ValueError):
        ObjectiveInstance("F4", 2, [1.0, 1.0], [0.0, 2.0], shift=[0.5, 0.5])


# --------------------------------------------------------------------- batch

def test_objective_batch_matches_individual_instances():
    rng = np.random.default_rng(8)
    insts = [sample_shift(f, 3, rng) for f in ("F1", "F2", "F3", "F1")]
    batch = ObjectiveBatch(insts, repeats=2)
    assert batch.size == 8
    lower, upper = batch.bounds(4)
    x = rng.uniform(lower, upper, size=(8, 4, 4, 3))
    got = batch.evaluate(Tensor(x)).data
    for b in range(8):
        np.testing.assert_allclose(got[b], insts[b // 2].evaluate(x[b]), rtol=1e-13)


def test_evaluate_returns_copies():
    inst = sample_shift("F4", 2, np.random.default_rng(0))
    out = evaluate(inst, np.zeros((3, 2)))
    out[0] = 1.0  # must be writable and detached
    assert isinstance(evaluate(inst, np.zeros(2)), float)
