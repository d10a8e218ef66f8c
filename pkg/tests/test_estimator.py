import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nlsme import InversionAttack
from nlsme.datasets import synth_dataset
from nlsme.estimator import check_image_batch, check_labels, check_observation
from nlsme.fedsim import ClientConfig, Observation, simulate
from nlsme.model import ModelSpec

SPEC = ModelSpec(input_dims=(1, 8, 8), hidden_sizes=(3,), num_classes=2)


@pytest.fixture(scope="module")
def setup():
    data = synth_dataset("stripes", 4, 2, seed=0)
    obs, _ = simulate(SPEC, data, ClientConfig(epochs=1, n=4, batch_size=2), init_seed=0)
    return data, obs


def test_params_round_trip():
    est = InversionAttack(variant="sme", iterations=7, lambda_tv=0.5)
    params = est.get_params()
    assert params["variant"] == "sme" and params["iterations"] == 7
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(iterations=3)
    assert twin.iterations == 3 and est.iterations == 7


def test_fit_predict_score(setup):
    data, obs = setup
    est = InversionAttack(iterations=5, seed=1).fit(obs, data.labels)
    assert est.predict().shape == data.images.shape
    assert est.lsim_ == min(row["Lcos"] for row in est.history_)
    assert np.isfinite(est.score(data))
    np.testing.assert_array_equal(est.fit_transform(obs, data.labels), est.reconstruction_)


def test_unfitted_predict_raises():
    with pytest.raises(NotFittedError):
        InversionAttack().predict()


def test_invalid_hyperparameters_surface_at_fit(setup):
    data, obs = setup
    with pytest.raises(ValueError, match="lr > lr_t"):
        InversionAttack(lr=0.001, iterations=1).fit(obs, data.labels)


def test_check_observation(setup):
    _, obs = setup
    assert check_observation(obs) is obs
    with pytest.raises(TypeError):
        check_observation((obs.w0, obs.wT))
    with pytest.raises(ValueError, match="shape"):
        check_observation(Observation(obs.w0[:-1], obs.wT, obs.n, SPEC))
    bad = obs.wT.copy()
    bad[0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        check_observation(Observation(obs.w0, bad, obs.n, SPEC))


def test_check_labels(setup):
    _, obs = setup
    assert check_labels([0, 1, 1, 0], obs).dtype == np.int64
    with pytest.raises(ValueError):
        check_labels([0, 1], obs)
    with pytest.raises(ValueError):
        check_labels([0, 1, 2, 0], obs)
    with pytest.raises(ValueError):
        check_labels([0.5, 1, 1, 0], obs)


def test_check_image_batch(setup):
    data, _ = setup
    assert check_image_batch(data) is data.images
    with pytest.raises(ValueError):
        check_image_batch(np.zeros((8, 8)))
