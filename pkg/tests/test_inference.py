from dataclasses import replace

import numpy as np
import pytest

import oracles
from dyncox.data import CovariateSet, EventLog
from dyncox.errors import NumericalError, ValidationError
from dyncox.fitting import FitConfig, FitResult, fit_grid, fit_homogeneous
from dyncox.inference import (
    confidence_intervals,
    dense_omega,
    dense_v_matrix,
    eta_variance,
    gamma_inference,
    s_matrix,
    write_ci_csv,
)
from dyncox.simulate import ScenarioSpec, scenario, simulate


def synth_fit(n, p, rng, t=0.5, scale=0.4, h1=0.3, h2=0.3):
    """A fully-defined one-point fit with arbitrary curve values."""
    cfg = FitConfig(h1=h1, h2=h2, grid=np.array([t])).resolve(n, 1.0)
    return FitResult(
        n_nodes=n,
        config=cfg,
        grid=np.array([t]),
        alpha=scale * rng.standard_normal((1, n)),
        beta=scale * rng.standard_normal((1, n - 1)),
        gamma=scale * rng.standard_normal((1, p)),
        defined=np.ones((1, 2 * n - 1 + p), dtype=bool),
        iterations=np.ones(1, dtype=int),
        eps=np.zeros(1),
        residual=np.zeros(1),
        converged=np.ones(1, dtype=bool),
        boundary=np.zeros(1, dtype=bool),
        active_pairs=np.array([n * (n - 1)]),
    )


def synth_cov(n, p, rng, tau=1.0):
    z = rng.standard_normal((n, n, p))
    z[np.arange(n), np.arange(n), :] = 0.0
    return CovariateSet.constant(z, tau)


def empty_log(n, tau=1.0):
    e = np.zeros(0, dtype=np.int64)
    return EventLog.from_arrays(e, e, np.zeros(0), n_nodes=n, tau=tau)


def test_uniform_exposures_give_unit_diagonal():
    rng = np.random.default_rng(0)
    fit = synth_fit(3, 0, rng, scale=0.0)
    smat = s_matrix(fit, synth_cov(3, 0, rng), 0.5)
    np.testing.assert_allclose(smat.vdiag, 1.0, atol=1e-14)
    assert smat.vcorner == pytest.approx(1.0)
    dense = smat.dense()
    sign = np.array([1.0, 1.0, 1.0, -1.0, -1.0])
    np.testing.assert_allclose(dense, np.eye(5) + np.outer(sign, sign), atol=1e-14)


def test_s_approximates_the_dense_inverse_better_as_n_grows():
    rng = np.random.default_rng(1)
    errs = {}
    for n in (4, 10):
        fit = synth_fit(n, 1, rng, scale=0.25)
        cov = synth_cov(n, 1, rng)
        S = s_matrix(fit, cov, 0.5).dense()
        Vinv = np.linalg.inv(dense_v_matrix(fit, cov, 0.5))
        errs[n] = np.abs(S - Vinv).max()
    assert errs[10] < errs[4]


def test_structured_pieces_match_loop_oracles():
    rng = np.random.default_rng(2)
    n, p = 6, 2
    fit = synth_fit(n, p, rng)
    cov = synth_cov(n, p, rng)
    truth = scenario(ScenarioSpec(name="main", n_nodes=n, seed=5))
    log = simulate(truth, 5)
    _, _, _, _, epi = oracles.point_pieces(fit, cov, 0.5)

    np.testing.assert_allclose(dense_v_matrix(fit, cov, 0.5), oracles.loop_v_dense(epi), atol=1e-10)
    smat = s_matrix(fit, cov, 0.5)
    S = oracles.loop_s_dense(epi)
    np.testing.assert_allclose(smat.dense(), S, atol=1e-10)
    x = rng.standard_normal(2 * n - 1)
    np.testing.assert_allclose(smat.multiply(x), S @ x, atol=1e-10)

    O = oracles.loop_omega_dense(log, 0.5, fit.config.h1)
    np.testing.assert_allclose(dense_omega(fit, log, cov, 0.5), O, atol=1e-10)

    ev = eta_variance(fit, log, cov, 0.5)
    np.testing.assert_allclose(ev.sigma, np.diag(S @ O @ S), atol=1e-10)
    np.testing.assert_allclose(ev.q, np.diag(O) / smat.vdiag**2, atol=1e-10)


def test_gamma_inference_matches_double_loop_oracle():
    for seed in range(6):
        truth = scenario(ScenarioSpec(name="trend_test", n_nodes=4, seed=seed))
        log = simulate(truth, seed)
        cfg = FitConfig(h1=0.3, h2=0.3, grid=np.array([0.5]))
        fit = fit_grid(log, truth.covariates, cfg)
        if not (fit.converged[0] and fit.defined[0].all()):
            continue
        _, _, _, zt, epi = oracles.point_pieces(fit, truth.covariates, 0.5)
        gi = gamma_inference(fit, log, truth.covariates, 0.5)
        np.testing.assert_allclose(gi.hessian, oracles.loop_gamma_hessian(epi, zt), atol=1e-10)
        np.testing.assert_allclose(
            gi.sigma_mat, oracles.loop_sigma_mat(log, epi, zt, 0.5, 0.3), atol=1e-10
        )
        np.testing.assert_allclose(gi.psi, gi.hess_inv @ gi.sigma_mat @ gi.hess_inv.T, atol=1e-12)
        np.testing.assert_allclose(
            gi.b_hat, oracles.loop_bias_numerator(log, epi, zt, 0.5, 0.3), atol=1e-10
        )
        np.testing.assert_allclose(gi.bias, gi.hess_inv @ gi.b_hat, atol=1e-12)
        np.testing.assert_allclose(gi.gamma_tilde, gi.gamma_hat - gi.bias, atol=1e-12)
        return
    raise AssertionError("no fully-defined n=4 instance in the scanned seeds")


def test_no_events_mean_zero_variance_and_zero_bias():
    rng = np.random.default_rng(3)
    n, p = 5, 1
    fit = synth_fit(n, p, rng)
    cov = synth_cov(n, p, rng)
    log = empty_log(n)
    ev = eta_variance(fit, log, cov, 0.5)
    np.testing.assert_allclose(ev.sigma, 0.0, atol=1e-15)
    gi = gamma_inference(fit, log, cov, 0.5)
    np.testing.assert_allclose(gi.b_hat, 0.0, atol=1e-15)
    np.testing.assert_allclose(gi.gamma_tilde, gi.gamma_hat, atol=1e-15)


def test_psi_psd_and_sigma_nonnegative(fit30, main30):
    truth, log = main30
    for t in fit30.grid:
        ev = eta_variance(fit30, log, truth.covariates, float(t))
        assert np.all(ev.sigma[ev.defined] >= 0.0)
        gi = gamma_inference(fit30, log, truth.covariates, float(t))
        assert np.linalg.eigvalsh(gi.psi).min() >= -1e-10
        assert np.linalg.eigvalsh(gi.sigma_mat).min() >= -1e-10
        np.testing.assert_allclose(gi.sigma_mat, gi.sigma_mat.T, atol=1e-12)


def test_s_inverse_gap_shrinks_along_doubling_sizes():
    errs = []
    for n in (4, 8, 16, 32):
        for seed in range(5):
            truth = scenario(ScenarioSpec(name="main", n_nodes=n, seed=seed))
            log = simulate(truth, seed)
            fit = fit_grid(log, truth.covariates, FitConfig(h1=0.3, h2=0.3, grid=np.array([0.5])))
            if not fit.defined[0].all():
                continue
            S = s_matrix(fit, truth.covariates, 0.5).dense()
            Vinv = np.linalg.inv(dense_v_matrix(fit, truth.covariates, 0.5))
            errs.append(np.abs(S - Vinv).max())
            break
        else:
            raise AssertionError(f"no fully-defined instance at n={n}")
    assert all(b < a for a, b in zip(errs, errs[1:])), errs


def test_interval_bundle_and_csv(tmp_path, fit30, main30):
    truth, log = main30
    bundle = confidence_intervals(fit30, log, truth.covariates)
    assert bundle.z == pytest.approx(1.959964, abs=1e-6)
    G, n = fit30.grid.size, 30
    assert bundle.eta.shape == (G, 2 * n - 1) and bundle.gamma.shape == (G, 2)
    np.testing.assert_allclose(bundle.eta_hi - bundle.eta, bundle.eta - bundle.eta_lo, atol=1e-12)
    # homophily intervals center at the corrected estimate
    np.testing.assert_allclose(
        0.5 * (bundle.gamma_lo + bundle.gamma_hi), bundle.gamma_tilde, atol=1e-12
    )

    path = str(tmp_path / "ci.csv")
    write_ci_csv(bundle, path)
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "coordinate", "estimate", "corrected", "lower", "upper", "variance"]
    assert len(rows) == 1 + G * (2 * n - 1 + 2)
    first = rows[1]
    assert first[1] == "alpha_1" and first[3] == ""  # no corrected column for degree curves
    assert float(first[6]) == pytest.approx(bundle.eta_se[0, 0] ** 2, rel=1e-12)
    g_row = rows[1 + (2 * n - 1)]
    assert g_row[1] == "gamma_1" and float(g_row[3]) == pytest.approx(bundle.gamma_tilde[0, 0])
    lo = float(g_row[4])
    assert lo == pytest.approx(float(g_row[3]) - bundle.z * np.sqrt(float(g_row[6])), rel=1e-9)


def test_zero_variance_gives_zero_width_intervals():
    rng = np.random.default_rng(4)
    fit = synth_fit(4, 0, rng)
    cov = synth_cov(4, 0, rng)
    bundle = confidence_intervals(fit, empty_log(4), cov)
    np.testing.assert_allclose(bundle.eta_se, 0.0, atol=1e-15)
    np.testing.assert_allclose(bundle.eta_lo, bundle.eta, atol=1e-15)
    np.testing.assert_allclose(bundle.eta_hi, bundle.eta, atol=1e-15)


def test_bias_correction_shrinks_error():
    # heavy (a few minutes): corrected vs raw homophily error on the
    # main scenario, averaged over the interior deciles and 200 draws
    grid = np.round(np.arange(1, 10) * 0.1, 10)
    raw, cor = [], []
    for rep in range(200):
        truth = scenario(ScenarioSpec(name="main", n_nodes=100, seed=rep))
        log = simulate(truth, rep)
        fit = fit_grid(log, truth.covariates, FitConfig(grid=grid))
        for t in grid:
            gi = gamma_inference(fit, log, truth.covariates, float(t))
            g_star = np.sin(2 * np.pi * t) / 3.0
            raw.append(abs(gi.gamma_hat[0] - g_star))
            cor.append(abs(gi.gamma_tilde[0] - g_star))
    assert np.mean(cor) <= np.mean(raw)


def test_degenerate_s_matrix_is_reported():
    # sender 3 is defined but every receiver it could reach is not, so its
    # row exposure is zero while other pairs stay active
    rng = np.random.default_rng(6)
    fit = synth_fit(3, 0, rng)
    alpha = fit.alpha.copy()
    beta = np.full_like(fit.beta, np.nan)
    alpha[0, 1] = np.nan
    fit = replace(fit, alpha=alpha, beta=beta)
    with pytest.raises(NumericalError, match="degenerate S-matrix at t="):
        s_matrix(fit, synth_cov(3, 0, rng), 0.5)


def test_singular_hessian_is_reported():
    rng = np.random.default_rng(7)
    fit = synth_fit(4, 2, rng)
    z = rng.standard_normal((4, 4, 1))
    z[np.arange(4), np.arange(4), :] = 0.0
    cov = CovariateSet.constant(np.concatenate([z, z], axis=2), 1.0)
    gamma = np.zeros((1, 2))
    fit = replace(fit, gamma=gamma)
    with pytest.raises(NumericalError, match="H_Q not invertible at t="):
        gamma_inference(fit, empty_log(4), cov, 0.5)


def test_undefined_gamma_means_no_active_pairs():
    rng = np.random.default_rng(8)
    fit = synth_fit(4, 1, rng)
    fit = replace(fit, gamma=np.full((1, 1), np.nan))
    with pytest.raises(NumericalError, match="no active pairs at t="):
        gamma_inference(fit, empty_log(4), synth_cov(4, 1, rng), 0.5)


def test_input_validation(main30):
    truth, log = main30
    pooled = fit_homogeneous(log, truth.covariates, FitConfig(grid=np.array([0.5])))
    with pytest.raises(ValidationError, match="pooled"):
        s_matrix(pooled, truth.covariates, 0.5)
    rng = np.random.default_rng(5)
    fit = synth_fit(4, 0, rng)
    with pytest.raises(ValidationError, match="level"):
        confidence_intervals(fit, empty_log(4), synth_cov(4, 0, rng), level=1.2)
    with pytest.raises(ValidationError, match="no covariates"):
        gamma_inference(fit, empty_log(4), synth_cov(4, 0, rng), 0.5)
    with pytest.raises(ValidationError, match="disagree"):
        s_matrix(fit, synth_cov(5, 0, rng), 0.5)
