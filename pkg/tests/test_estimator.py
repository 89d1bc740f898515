import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import layered_kappa
from gmsfem.estimator import OnlineGMsFEM


@pytest.fixture(scope="module")
def fitted():
    kappa = layered_kappa(16, 1e3, rows=((5, 6),))
    return OnlineGMsFEM(coarse=4, fine=4, max_iter=2).fit(kappa), kappa


def test_params_and_clone():
    est = OnlineGMsFEM(coarse=3, mode="online_cumulative", theta=0.4)
    params = est.get_params()
    assert params["coarse"] == 3 and params["theta"] == 0.4
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(n0=5)
    assert twin.n0 == 5 and est.n0 == 40


def test_not_fitted():
    with pytest.raises(NotFittedError):
        OnlineGMsFEM().predict([[0.5, 0.5]])


@pytest.mark.parametrize("kw", [dict(mode="magic"), dict(theta=0.0), dict(coarse=0),
                                dict(dof_convention="edges")])
def test_bad_params(kw):
    with pytest.raises(ValueError):
        OnlineGMsFEM(**{"coarse": 2, "fine": 2, **kw}).fit(np.ones((4, 4)))


def test_bad_kappa_shape():
    with pytest.raises(ValueError):
        OnlineGMsFEM(coarse=2, fine=2).fit(np.ones((3, 4)))
    with pytest.raises(ValueError):
        OnlineGMsFEM(coarse=2, fine=2).fit(-np.ones((4, 4)))


def test_fit_results(fitted):
    est, _ = fitted
    assert [r.iteration for r in est.history_] == [0, 1, 2]
    assert est.dof_ == est.space_.dim
    np.testing.assert_allclose(est.space_.expand(est.coef_), est.u_ms_)
    assert est.history_[-1].e_a < est.history_[0].e_a


def test_predict_at_nodes_matches_nodal_values(fitted):
    est, _ = fitted
    g = est.grids_
    nodes = np.array([g.node_id(3, 5), g.node_id(8, 8), g.node_id(16, 2)])
    np.testing.assert_allclose(est.predict(g.node_coords[nodes]), est.u_ms_[nodes], atol=1e-14)
    np.testing.assert_allclose(est.transform(g.node_coords[nodes]),
                               est.space_.basis.toarray()[nodes], atol=1e-14)
    assert est.transform(g.node_coords[:4]).shape == (4, est.dof_)


def test_score_against_reference(fitted):
    est, _ = fitted
    pts = np.random.default_rng(0).uniform(0, 1, (50, 2))
    assert est.score(pts, est.predict_reference(pts)) > 0.9
    with pytest.raises(ValueError):
        est.predict([[1.5, 0.5]])


def test_without_reference():
    est = OnlineGMsFEM(coarse=2, fine=2, max_iter=1, reference=False).fit(np.ones((4, 4)))
    assert np.isnan(est.history_[0].e_a)
    with pytest.raises(ValueError):
        est.predict_reference([[0.5, 0.5]])
