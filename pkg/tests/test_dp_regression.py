from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linkdp import dp_regression as dpr
from linkdp.dp_regression import (
    NgdConfig,
    SspConfig,
    SspRetryError,
    iteration_count,
    ngd_fit,
    ngd_variance,
    ssp_fit,
    ssp_proxy,
    ssp_variance,
    suggested_ngd_config,
)
from linkdp.estimators import ModelParams, SingularMatrixError, ols_fit, rl_covariance, rl_fit, z_moments
from linkdp.linkage import LinkedDataset, block_ele, identity, sample_linkage, transform_design
from linkdp.privacy import BoundSet, PrivacyBudget, PrivacyWarning, data_bounds

BUDGET = PrivacyBudget(1.0, 1e-5)


def _instance(n=500, d=2, seed=0, gamma=(0.6, 0.9), block=25):
    g = np.random.default_rng(seed)
    X = g.uniform(-1, 1, (n, d))
    Q = block_ele([(block, gm) for gm in g.uniform(*gamma, n // block)])
    beta = np.full(d, 0.4)
    y = X @ beta + 0.5 * g.standard_normal(n)
    z = y[sample_linkage(Q, "permutation", g)]
    return X, y, z, Q, beta


def _noiseless_config(X, Q, T=200):
    W = transform_design(Q, X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrivacyWarning)
        L = data_bounds(X, W)["L"]
    d = X.shape[1]
    return NgdConfig(eta=d / L, T=T, C=math.inf, R=math.inf, B=1.0, omega=0.0, project=False)


def _bounds(L=2.0, R=3.0, C=1.0):
    return BoundSet(c_x=math.sqrt(2), M=1.0, c0=1.0, L=L, R=R, C=C)


def test_ngd_noiseless_identity_equals_ols():
    X, y, _, _, _ = _instance()
    Q = identity(500)
    fit = ngd_fit(LinkedDataset(X, y), Q, BUDGET, _bounds(), _noiseless_config(X, Q))
    np.testing.assert_allclose(fit.beta_hat, ols_fit(X, y).beta_hat, atol=1e-6, rtol=0)
    assert fit.iterations == 200


def test_ngd_noiseless_general_q_equals_rl():
    X, _, z, Q, _ = _instance()
    fit = ngd_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(), _noiseless_config(X, Q))
    np.testing.assert_allclose(fit.beta_hat, rl_fit(X, z, Q).beta_hat, atol=1e-6, rtol=0)


def test_ngd_deterministic_per_seed():
    X, _, z, Q, _ = _instance()
    data = LinkedDataset(X, z)
    cfg = suggested_ngd_config(500, 2, _bounds(), sigma_estimate=0.5, seed=99)
    a = ngd_fit(data, Q, BUDGET, _bounds(), cfg)
    b = ngd_fit(data, Q, BUDGET, _bounds(), cfg)
    c = ngd_fit(data, Q, BUDGET, _bounds(), replace(cfg, seed=100))
    assert np.array_equal(a.beta_hat, b.beta_hat)
    assert not np.array_equal(a.beta_hat, c.beta_hat)
    assert a.seed == 99 and a.noise_scale > 0


def test_ngd_respects_projection():
    X, _, z, Q, _ = _instance()
    cfg = replace(suggested_ngd_config(500, 2, _bounds(), sigma_estimate=0.5), C=0.05)
    fit = ngd_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(C=0.05), cfg)
    assert np.linalg.norm(fit.beta_hat) <= 0.05 * (1 + 1e-12)


def test_ngd_noise_matches_calibration():
    X, _, z, Q, _ = _instance()
    cfg = suggested_ngd_config(500, 2, _bounds(), sigma_estimate=0.5, route="simplified")
    fit = ngd_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(), cfg)
    expected = 2 * cfg.eta * cfg.B * math.sqrt(cfg.T * math.log(1e5)) / 500
    assert fit.noise_scale == pytest.approx(expected, rel=1e-14)


def test_truncation_no_op_when_inside():
    X, _, z, Q, _ = _instance()
    data = LinkedDataset(X, z)
    R = float(np.abs(z).max()) * 1.5
    cfg = replace(suggested_ngd_config(500, 2, _bounds(R=R), sigma_estimate=None, seed=3), omega=0.01)
    wide = ngd_fit(data, Q, BUDGET, _bounds(R=R), cfg)
    wider = ngd_fit(data, Q, BUDGET, _bounds(R=R), replace(cfg, R=10 * R))
    assert np.array_equal(wide.beta_hat, wider.beta_hat)
    scfg = SspConfig(R=R, B=1.0, seed=3, omega=1.0)
    assert np.array_equal(ssp_fit(data, Q, BUDGET, _bounds(), scfg).beta_hat,
                          ssp_fit(data, Q, BUDGET, _bounds(), replace(scfg, R=10 * R)).beta_hat)


def test_ngd_config_validation():
    with pytest.raises(ValueError):
        NgdConfig(eta=0.5, T=0, C=1.0, R=1.0, B=1.0)
    with pytest.raises(ValueError):
        NgdConfig(eta=-0.5, T=3, C=1.0, R=1.0, B=1.0)
    with pytest.raises(ValueError):
        SspConfig(R=1.0, B=1.0, max_retries=0)


def test_ssp_noiseless_identity_equals_ols():
    X, y, _, _, _ = _instance()
    fit = ssp_fit(LinkedDataset(X, y), identity(500), BUDGET, _bounds(), SspConfig(R=math.inf, B=1.0, omega=0.0))
    np.testing.assert_allclose(fit.beta_hat, ols_fit(X, y).beta_hat, atol=1e-12, rtol=0)


def test_ssp_noiseless_general_q_equals_rl():
    X, _, z, Q, _ = _instance()
    fit = ssp_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(), SspConfig(R=math.inf, B=1.0, omega=0.0))
    np.testing.assert_allclose(fit.beta_hat, rl_fit(X, z, Q).beta_hat, atol=1e-12, rtol=0)


def test_ssp_deterministic_and_symmetric_noise():
    X, _, z, Q, _ = _instance()
    cfg = SspConfig(R=3.0, B=5.0, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrivacyWarning)
        a = ssp_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(), cfg)
        b = ssp_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(), cfg)
    assert np.array_equal(a.beta_hat, b.beta_hat)
    U = dpr._symmetric_noise(np.random.default_rng(0), 4, 2.0)
    np.testing.assert_array_equal(U, U.T)


def test_ssp_retries_then_succeeds(monkeypatch):
    X, _, z, Q, _ = _instance()
    real = dpr.Factorization
    calls = {"n": 0}

    def flaky(G, what="Gram matrix"):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise SingularMatrixError("forced", 0.0)
        return real(G, what)

    monkeypatch.setattr(dpr, "Factorization", flaky)
    fit = ssp_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(), SspConfig(R=3.0, B=1.0, omega=1.0))
    assert fit.diagnostics["attempts"] == 3


def test_ssp_retry_exhaustion():
    # a zero design with zero noise is singular on every draw
    data = LinkedDataset(np.zeros((10, 1)), np.ones(10))
    with pytest.raises(SspRetryError) as info:
        ssp_fit(data, identity(10), BUDGET, _bounds(), SspConfig(R=3.0, B=1.0, omega=0.0, max_retries=5))
    assert info.value.attempts == 5
    assert "1e-12" in str(info.value)


def test_ssp_retry_rate_is_small():
    X, _, z, Q, _ = _instance(n=1000)
    data = LinkedDataset(X, z)
    attempts = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrivacyWarning)
        for seed in range(300):
            cfg = SspConfig(R=3.0, B=10.0, seed=seed)
            attempts.append(ssp_fit(data, Q, BUDGET, _bounds(), cfg).diagnostics["attempts"])
    assert np.mean(np.array(attempts) > 1) < 0.01


def _setting_one_design(n, seed):
    g = np.random.default_rng(seed)
    X = g.uniform(-1, 1, (n, 1))
    Q = block_ele([(25, gm) for gm in g.uniform(0.6, 0.9, n // 25)])
    y = X[:, 0] + g.standard_normal(n)
    z = y[sample_linkage(Q, "permutation", g)]
    return X, z, Q


def test_ssp_monte_carlo_centres_on_rl():
    X, z, Q = _setting_one_design(10000, 1)
    data = LinkedDataset(X, z)
    W = transform_design(Q, X)
    G = float(W[:, 0] @ W[:, 0])
    target = rl_fit(X, z, Q).beta_hat[0]
    omega = 0.01 * G
    draws = np.array([
        ssp_fit(data, Q, BUDGET, _bounds(), SspConfig(R=math.inf, B=1.0, seed=s, omega=omega)).beta_hat[0]
        for s in range(10000)
    ])
    se = draws.std(ddof=1) / 100
    assert abs(draws.mean() - target) < 3 * se


def test_ssp_monte_carlo_second_order_bias():
    # with d = 1, E[(b G + u) / (G + U)] = b (1 + (omega/G)^2) + O((omega/G)^4)
    X, z, Q = _setting_one_design(3000, 2)
    data = LinkedDataset(X, z)
    W = transform_design(Q, X)
    G = float(W[:, 0] @ W[:, 0])
    b = rl_fit(X, z, Q).beta_hat[0]
    omega = 0.1 * G
    draws = np.array([
        ssp_fit(data, Q, BUDGET, _bounds(), SspConfig(R=math.inf, B=1.0, seed=s, omega=omega)).beta_hat[0]
        for s in range(10000)
    ])
    se = draws.std(ddof=1) / 100
    assert abs(draws.mean() - b * 1.01) < 3 * se
    assert draws.mean() - b > 0


def test_iteration_count_and_config():
    assert iteration_count(1.5, 1.0, 10000) == 21
    assert iteration_count(1.5, 1.0, 10000, 1 / 3) == math.ceil(2.25 * math.log(1e4) / 3)
    b = BoundSet(c_x=1.0, M=1.0, c0=0.7, L=1.5, R=2.0)
    cfg = suggested_ngd_config(10000, 2, b, sigma_estimate=1.0)
    assert cfg.T == math.ceil(2.25 * math.log(0.49 * 1e4))
    assert cfg.C == 0.7 and cfg.eta == pytest.approx(2 / 1.5)
    assert cfg.R == pytest.approx(math.sqrt(2 * math.log(1e4)))
    np.testing.assert_array_equal(cfg.beta0, np.zeros(2))
    assert suggested_ngd_config(10000, 2, b).R == 2.0


# --------------------------------------------------------------------------
# variance formulas
# --------------------------------------------------------------------------


def _moment_setup(n=400, seed=5):
    g = np.random.default_rng(seed)
    X = g.uniform(-1, 1, (n, 2))
    Q = block_ele([(20, gm) for gm in g.uniform(0.6, 0.9, n // 20)])
    params = ModelParams(np.array([1.0, -0.5]), 1.0)
    S = z_moments(X, Q, params, rule="independent")
    return X, Q, params, transform_design(Q, X), S


def test_ngd_variance_single_step():
    X, Q, params, W, S = _moment_setup()
    eta, n = 0.8, W.shape[0]
    rep = ngd_variance(W, S.Sigma_z, eta, 1, 0.3)
    Bt = (eta / n) * W
    np.testing.assert_allclose(rep.total, Bt.T @ S.Sigma_z @ Bt + 0.09 * np.eye(2), rtol=1e-12, atol=1e-15)


def test_ngd_variance_limit_is_rl_covariance():
    X, Q, params, W, S = _moment_setup()
    rep = ngd_variance(W, S.sigma_z, 2 / 1.6, 2000, 0.0)
    ref = rl_covariance(W, S.sigma_z)
    assert np.linalg.norm(rep.total - ref) / np.linalg.norm(ref) < 1e-6


def test_ngd_variance_converges_monotonically():
    X, Q, params, W, S = _moment_setup()
    ref = rl_covariance(W, S.sigma_z)
    gaps = [np.linalg.norm(ngd_variance(W, S.sigma_z, 1.0, T, 0.0).total - ref) for T in (20, 40, 80, 160, 320)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_ngd_variance_rejects_divergence():
    X, Q, params, W, S = _moment_setup()
    with pytest.raises(ValueError):
        ngd_variance(W, S.sigma_z, 50.0, 10, 0.1)


def test_ngd_variance_monte_carlo():
    X, Q, params, W, S = _moment_setup()
    n = W.shape[0]
    eta, T, omega = 1.0, 25, 0.02
    theory = ngd_variance(W, S.sigma_z, eta, T, omega).total
    g = np.random.default_rng(8)
    cfg = NgdConfig(eta=eta, T=T, C=math.inf, R=math.inf, B=1.0, omega=omega, project=False)
    draws = []
    for r in range(10000):
        y = X @ params.beta + g.standard_normal(n)
        z = y[sample_linkage(Q, "independent", g)]
        draws.append(ngd_fit(LinkedDataset(X, z), Q, BUDGET, _bounds(), replace(cfg, seed=r)).beta_hat)
    emp = np.cov(np.array(draws).T)
    assert np.linalg.norm(emp - theory) / np.linalg.norm(theory) < 0.1


def test_ssp_variance_zero_noise():
    X, Q, params, W, S = _moment_setup()
    ref = rl_covariance(W, S.sigma_z)
    rep = ssp_variance(W, params.beta, ref, 0.0)
    np.testing.assert_array_equal(rep.total, ref)


@given(st.floats(0.1, 50.0), st.floats(-2, 2), st.floats(1e-4, 0.1))
def test_ssp_variance_scalar_form(omega, beta, srl):
    w = np.linspace(-1, 1, 40)[:, None] + 0.05
    G = float(w[:, 0] @ w[:, 0])
    rep = ssp_variance(w, np.array([beta]), np.array([[srl]]), omega)
    k = omega**2 / G**2
    assert rep.total[0, 0] == pytest.approx(srl + k * (1 + beta**2 + srl + k), rel=1e-12)


def test_ssp_variance_matrix_form(rng):
    W = rng.standard_normal((50, 3))
    beta = rng.standard_normal(3)
    A = rng.standard_normal((3, 3))
    Srl = 0.01 * A @ A.T
    omega = 2.0
    Gi = np.linalg.inv(W.T @ W)

    def spread(M):
        out = M.copy()
        np.fill_diagonal(out, np.trace(M))
        return out

    inner = np.eye(3) + spread(np.outer(beta, beta)) + spread(Srl) + spread(omega**2 * Gi @ Gi)
    np.testing.assert_allclose(ssp_variance(W, beta, Srl, omega).total, Srl + omega**2 * Gi @ inner @ Gi, rtol=1e-10)


def test_ssp_proxy_variance_monte_carlo():
    g = np.random.default_rng(21)
    n = 10000
    X = g.uniform(-1, 1, (n, 1))
    Q = block_ele([(25, gm) for gm in g.uniform(0.6, 0.9, n // 25)])
    params = ModelParams(np.array([1.0]), 1.0)
    W = transform_design(Q, X)
    S = z_moments(X, Q, params, rule="independent").sigma_z
    Srl = rl_covariance(W, S)
    omega = 60.0
    theory = ssp_variance(W, params.beta, Srl, omega).total[0, 0]
    draws = np.empty(10000)
    for r in range(10000):
        y = X[:, 0] + g.standard_normal(n)
        z = y[sample_linkage(Q, "independent", g)]
        U = omega * g.standard_normal((1, 1))
        u = omega * g.standard_normal(1)
        draws[r] = ssp_proxy(W, z, U, u)[0]
    assert abs(draws.var(ddof=1) / theory - 1) < 0.1
