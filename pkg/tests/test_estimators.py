"""Tests for the scikit-learn style estimator wrappers."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pdsr import BicubicUpscaler, PdAdmmSuperResolver, RegularizedSuperResolver
from pdsr import data
from pdsr.exceptions import ContractError


def _tiny_pairs(n=4, lr_size=8, scale=2, seed=0):
    rng = np.random.default_rng(seed)
    X = [rng.uniform(size=(3, lr_size, lr_size)) for _ in range(n)]
    y = [rng.uniform(size=(3, scale * lr_size, scale * lr_size)) for _ in range(n)]
    return X, y


def _tiny_resolver(cls, **extra):
    params = dict(
        scale=2,
        channels=4,
        go_blocks=1,
        gp_blocks=1,
        disc_channels=4,
        pretrain_epochs=1,
        batch_size=2,
        pretrain_lr=1e-3,
        base_lr=1e-3,
        cx=None,
        seed=0,
    )
    params.update(extra)
    return cls(**params)


def test_bicubic_upscaler_fit_predict_score():
    X, y = _tiny_pairs()
    est = BicubicUpscaler(scale=2).fit(X)
    preds = est.predict(X)
    assert len(preds) == len(X)
    assert preds[0].shape == (3, 16, 16)
    expected = data.bicubic_resize(X[0], 16, 16)
    assert np.array_equal(preds[0], expected)
    assert np.isfinite(est.score(X, y))


def test_bicubic_upscaler_identity_on_self():
    rng = np.random.default_rng(1)
    hr = [rng.uniform(size=(3, 12, 12))]
    est = BicubicUpscaler(scale=1).fit(hr)
    out = est.predict(hr)[0]
    assert np.max(np.abs(out - hr[0])) <= 1e-12


def test_pdadmm_estimator_fit_predict():
    X, y = _tiny_pairs()
    est = _tiny_resolver(PdAdmmSuperResolver, rho=0.01, admm_rounds=1)
    fitted = est.fit(X, y)
    assert fitted is est
    preds = est.predict(X)
    assert len(preds) == 4
    assert preds[0].shape == (3, 16, 16)
    assert all(np.all(np.isfinite(p)) for p in preds)
    stages = est.predict_stages(X[:1])
    assert stages[0][0].shape == (3, 16, 16)
    assert len(est.report_.rows) == 1
    assert np.isfinite(est.score(X, y))


def test_pdadmm_estimator_unfitted_predict_raises():
    est = PdAdmmSuperResolver()
    with pytest.raises(NotFittedError):
        est.predict([np.zeros((3, 8, 8))])


def test_pdadmm_estimator_deterministic():
    X, y = _tiny_pairs()
    a = _tiny_resolver(PdAdmmSuperResolver, rho=0.01, admm_rounds=1).fit(X, y)
    b = _tiny_resolver(PdAdmmSuperResolver, rho=0.01, admm_rounds=1).fit(X, y)
    pa = a.predict(X[:2])
    pb = b.predict(X[:2])
    for u, v in zip(pa, pb):
        assert np.array_equal(u, v)


def test_estimator_sklearn_protocol():
    est = _tiny_resolver(PdAdmmSuperResolver, rho=0.5, admm_rounds=2)
    params = est.get_params()
    assert params["rho"] == 0.5
    assert params["channels"] == 4
    cloned = clone(est)
    assert cloned.get_params() == params
    est.set_params(rho=0.25)
    assert est.get_params()["rho"] == 0.25


def test_regularized_estimator_fit_predict():
    X, y = _tiny_pairs()
    est = _tiny_resolver(RegularizedSuperResolver, lambda_r=0.5, rounds=1)
    est.fit(X, y)
    preds = est.predict(X)
    assert preds[0].shape == (3, 16, 16)
    assert len(est.report_.rows) == 1
    # The penalty column reflects the weighted low-frequency gap.
    assert est.report_.rows[0].dual_norm == 0.0


def test_estimator_input_validation():
    X, y = _tiny_pairs()
    est = _tiny_resolver(PdAdmmSuperResolver, admm_rounds=0)
    with pytest.raises(ContractError):
        est.fit(X, y[:2])  # length mismatch
    with pytest.raises(ContractError):
        est.fit([np.zeros((8, 8))], [np.zeros((3, 16, 16))])  # missing channel axis
    with pytest.raises(ContractError):
        est.fit([np.zeros((3, 8, 8))], [np.zeros((3, 12, 12))])  # wrong scale
    with pytest.raises(ContractError):
        est.fit([], [])


def test_estimator_checkpoint_dir(tmp_path):
    X, y = _tiny_pairs()
    ckpt_dir = tmp_path / "ckpts"
    est = _tiny_resolver(
        PdAdmmSuperResolver, rho=0.01, admm_rounds=1, checkpoint_dir=str(ckpt_dir)
    )
    est.fit(X, y)
    assert (ckpt_dir / "final.ckpt").exists()
    assert (ckpt_dir / "pretrain.ckpt").exists()
