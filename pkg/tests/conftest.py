import numpy as np
import pytest

from wdre.features import FeatureMap
from wdre.model import ObjectiveSpec, precompute
from wdre.weights import WeightFn


def make_instance(seed, m=3, n_p=20, n_q=25, method="weighted-dre", weight_kind="quartic-decay"):
    """Random small dataset pair plus a spec, features and a feasible theta."""
    rng = np.random.default_rng(seed)
    x_p = rng.normal(size=(n_p, m))
    x_q = rng.normal(size=(n_q, m))
    fmap = FeatureMap(m)
    if method == "conventional-dre":
        spec = ObjectiveSpec.conventional(fmap)
    else:
        if weight_kind == "constant":
            weight = WeightFn.constant(1.0)
        else:
            weight = WeightFn.quartic_for_dim(m)
        spec = ObjectiveSpec.weighted(fmap, weight)
    theta = rng.uniform(-0.5, 0.5, size=fmap.d)
    feats = precompute(spec, x_p, x_q)
    return spec, x_p, x_q, feats, theta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
