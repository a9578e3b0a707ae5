import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from anosovlab.errors import ConfigError
from anosovlab.estimators import LeafQuotientEstimator, NormalFormTransformer, SplittingTransformer


def test_splitting_transformer():
    est = SplittingTransformer(kind="dissipative", epsilon=0.1, depth=30)
    assert est.get_params() == {"kind": "dissipative", "epsilon": 0.1, "depth": 30}
    pts = np.random.default_rng(0).random((5, 3))
    out = est.fit_transform(pts)
    assert out.shape == (5, 12)
    assert np.allclose(np.linalg.norm(out[:, 0:3], axis=1), 1.0)
    assert np.all(out[:, 9] < 1) and np.all(out[:, 11] > 1)
    assert clone(est).get_params() == est.get_params()


def test_splitting_transformer_validation():
    with pytest.raises(NotFittedError):
        SplittingTransformer().transform(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        SplittingTransformer().fit(np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        SplittingTransformer(kind="linear", epsilon=0.2).fit(np.zeros((1, 3)))


@pytest.mark.slow
def test_normal_form_round_trip():
    est = NormalFormTransformer(kind="conservative", epsilon=0.1).fit()
    z = np.array([[0.1, 0.3, 0.01], [-0.4, -0.8, -0.02]])
    back = est.transform(est.inverse_transform(z))
    assert np.allclose(back, z, atol=1e-10)


@pytest.mark.slow
def test_leaf_quotient_estimator_on_volume():
    cloud = np.random.default_rng(1).random((30000, 3))
    est = LeafQuotientEstimator(kind="conservative", epsilon=0.1).fit(cloud)
    assert est.verdict_ == "consistent"
    assert est.score() == -est.ks_
    with pytest.raises(ValueError):
        LeafQuotientEstimator(window=(0.1, 0.5)).fit(cloud)
