import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from decn import DECN, DifferentialEvolution, RandomSearch
from decn.diffcore import ShapeError
from decn.evolution import DecnModel, model_to_json
from decn.functions import make_dataset, sample_shift


def _fitted(**kw):
    ds = make_dataset("high", "F4", 1, 3, np.random.default_rng(0))
    params = dict(epochs=4, batch_populations=2, L=5, random_state=1)
    params.update(kw)
    return DECN(**params).fit(ds), ds


def test_params_round_trip_and_clone():
    est = DECN(depth=5, lr=0.01)
    assert est.get_params()["depth"] == 5
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(L=12)
    assert est.L == 12


def test_fit_sets_model_and_log():
    est, _ = _fitted()
    assert isinstance(est.model_, DecnModel)
    assert len(est.train_log_) == 4
    assert est.n_features_in_ == 3


def test_fit_is_deterministic():
    a, _ = _fitted()
    b, _ = _fitted()
    assert model_to_json(a.model_) == model_to_json(b.model_)


def test_unfitted_estimator_refuses_to_run():
    inst = sample_shift("F4", 3, np.random.default_rng(0))
    with pytest.raises(NotFittedError):
        DECN().optimize(inst)


def test_transform_shapes_and_validation():
    est, _ = _fitted()
    inst = sample_shift("F4", 3, np.random.default_rng(2))
    X = np.random.default_rng(3).uniform(inst.lower, inst.upper, size=(5, 5, 3))
    out = est.transform(X, inst)
    assert out.shape == X.shape
    assert inst.evaluate(out).min() <= inst.evaluate(X).min()
    with pytest.raises(ShapeError):
        est.transform(X[..., :2], inst)
    with pytest.raises(ValueError):
        est.transform(X + 1000.0, inst)


def test_optimize_matches_budget():
    est, _ = _fitted()
    inst = sample_shift("F7", 6, np.random.default_rng(4))
    best_x, best_f, rec = est.optimize(inst, random_state=5)
    assert rec.final_evals == 25 * 4
    assert inst.evaluate(best_x) == pytest.approx(best_f)


def test_score_is_finite():
    est, ds = _fitted()
    assert np.isfinite(est.score(ds, random_state=0))


def test_from_model_wraps_without_training():
    model = DecnModel.initialize(2, True, np.random.default_rng(0), trained_on={"L": 6})
    est = DECN.from_model(model)
    assert est.L == 6
    _, _, rec = est.optimize(sample_shift("F4", 2, np.random.default_rng(0)), random_state=0)
    assert rec.final_evals == 36 * 3


def test_invalid_lattice_side():
    with pytest.raises(ValueError):
        _fitted(L=3)


def test_baseline_estimators_share_the_interface():
    inst = sample_shift("F4", 4, np.random.default_rng(6))
    for est in (DifferentialEvolution(pop_size=20, budget=200), RandomSearch(budget=200)):
        x, f, rec = est.optimize(inst, random_state=0)
        assert rec.final_evals == 200
        assert inst.evaluate(x) == pytest.approx(f)
