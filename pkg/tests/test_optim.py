import numpy as np
import pytest

import oracles
from tsda.optim import AdaDelta, NonFiniteGradient


def test_matches_scalar_reference_trajectory():
    x = np.array([5.0])
    opt = AdaDelta()
    for _ in range(200):
        opt.step({"x": x}, {"x": 2.0 * x})
    assert x[0] == pytest.approx(oracles.adadelta_scalar(lambda v: 2.0 * v, 5.0, 200), rel=1e-12)


def test_updates_in_place_and_keeps_aliases():
    w = np.ones(3)
    alias = w
    AdaDelta().step({"w": w}, {"w": np.ones(3)})
    assert alias is w and np.all(w < 1.0)


def test_zero_gradient_leaves_parameters_bit_identical():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 4))
    before = w.tobytes()
    opt = AdaDelta()
    for _ in range(10):
        opt.step({"w": w}, {"w": np.zeros_like(w)})
    assert w.tobytes() == before


def test_non_finite_gradient_is_rejected_before_any_update():
    a, b = np.ones(2), np.ones(2)
    with pytest.raises(NonFiniteGradient):
        AdaDelta().step({"a": a, "b": b}, {"a": np.ones(2), "b": np.array([np.nan, 0.0])})
    assert np.all(a == 1.0)


def test_bad_hyperparameters():
    with pytest.raises(ValueError):
        AdaDelta(rho=1.0)
    with pytest.raises(ValueError):
        AdaDelta(epsilon=0.0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        AdaDelta().step({"w": np.ones(2)}, {"w": np.ones(3)})
