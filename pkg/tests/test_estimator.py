import numpy as np
import pytest
from sklearn.base import clone

from crossdiff.estimator import CrossDiffusionFilter
from crossdiff.grid import Grid, StateW
from crossdiff.model import heat_model
from crossdiff.schemes import SchemeConfig, run


def sample_batch(shape=(2, 2, 5, 6), seed=0):
    return np.random.default_rng(seed).random(shape)


def test_transform_matches_direct_run():
    X = sample_batch()
    est = CrossDiffusionFilter(preset="heat", dt=0.01, steps=3, scheme="amos")
    Y = est.fit_transform(X)
    assert Y.shape == X.shape
    grid = Grid((4, 5))
    final = run(StateW(grid, X[1, 0], X[1, 1]), heat_model(), config=SchemeConfig(dt=0.01, scheme="amos", steps=3))
    np.testing.assert_array_equal(Y[1], final[-1].state.W)


def test_zero_preset_is_identity_and_3d():
    X = sample_batch((1, 2, 3, 3, 4))
    np.testing.assert_array_equal(CrossDiffusionFilter(preset="zero").fit_transform(X), X)


def test_params_and_errors():
    est = CrossDiffusionFilter(preset="complex", g=2.0)
    assert clone(est).get_params()["g"] == 2.0
    with pytest.raises(ValueError):
        CrossDiffusionFilter(preset="nope").fit(sample_batch())
    with pytest.raises(ValueError):
        CrossDiffusionFilter().fit(np.ones((2, 3, 4, 4)))
    fitted = CrossDiffusionFilter().fit(sample_batch())
    with pytest.raises(ValueError):
        fitted.transform(sample_batch((1, 2, 4, 4)))
