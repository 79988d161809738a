"""Hypothesis tests for constancy and homogeneity of the fitted curves.

Four sup-type statistics share one machinery: trend tests compare a curve
against itself across grid times, heterogeneity tests compare two nodes'
curves at the same time. Null distributions come from Gaussian multiplier
resampling: each resample draws one standard normal per observed event, so
the resampled noise is exactly Gaussian given the data, its variance is the
realized squared-kernel event sum, and sharing the draws across grid times
keeps the dependence between nearby times.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .data import CovariateSet, EventLog
from .errors import NumericalError, ValidationError
from .fitting import FitConfig, FitResult, fit_grid
from .inference import eta_variance, gamma_inference
from .ioutil import atomic_write_text, fmt
from .kernels import kernel_weight

KINDS = ("trend-eta", "trend-gamma", "het-alpha", "het-beta")

_SEED_TAGS = {
    "trend-eta": 0xB0071,
    "trend-gamma": 0xB0072,
    "het-alpha": 0xB0073,
    "het-beta": 0xB0074,
}


def default_test_grid() -> np.ndarray:
    return np.round(np.arange(1, 10) * 0.1, 10)


@dataclass(frozen=True)
class TestSpec:
    """What to test, on which grid, at which level, with how many resamples."""

    kind: str
    grid: np.ndarray | None = None
    level: float = 0.05
    resamples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown test {self.kind!r}; choose from {KINDS}")
        if not 0.0 < self.level < 1.0:
            raise ValidationError(f"level must be in (0, 1), got {fmt(self.level)}")
        if self.resamples < 100:
            raise ValidationError("resamples must be at least 100 for usable critical values")


@dataclass(frozen=True)
class TestReport:
    """Observed statistic, resampled critical value, and the decision."""

    kind: str
    statistic: float
    critical_value: float
    p_value: float
    reject: bool
    level: float
    resamples: int
    seed: int
    grid: tuple[float, ...]
    detail: dict[str, Any]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "level": self.level,
            "resamples": self.resamples,
            "seed": self.seed,
            "grid": list(self.grid),
            "detail": self.detail,
        }


def write_report(report: TestReport, path: str) -> None:
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")


def run_test(
    log: EventLog,
    cov: CovariateSet | None = None,
    spec: TestSpec | None = None,
    config: FitConfig | None = None,
) -> TestReport:
    """Fit on the test grid and run the requested resampling test."""
    if spec is None:
        raise ValidationError("a TestSpec is required")
    cov = cov if cov is not None else CovariateSet.empty(log.n_nodes, log.tau)
    if spec.kind == "trend-gamma" and cov.p == 0:
        raise ValidationError("trend-gamma needs covariates in the model")
    base = config or FitConfig()
    grid = spec.grid if spec.grid is not None else default_test_grid() * log.tau
    config = replace(base, grid=np.asarray(grid, dtype=float)).resolve(log.n_nodes, log.tau)
    if config.grid[0] < config.h1 - 1e-12 or config.grid[-1] > log.tau - config.h1 + 1e-12:
        raise ValidationError(
            "test grid must stay inside [h1, tau - h1] so every kernel window is interior"
        )
    if spec.kind.startswith("trend") and config.grid.size < 2:
        raise ValidationError("trend tests need at least two grid times")
    fit = fit_grid(log, cov, config)
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, _SEED_TAGS[spec.kind])))
    if spec.kind == "trend-eta":
        obs, res, detail = _trend_eta(fit, log, cov, spec, rng)
    elif spec.kind == "trend-gamma":
        obs, res, detail = _trend_gamma(fit, log, cov, spec, rng)
    else:
        obs, res, detail = _het(fit, log, cov, spec, rng)
    crit = float(np.quantile(res, 1.0 - spec.level, method="higher"))
    p_val = float(np.mean(res >= obs))
    return TestReport(
        kind=spec.kind,
        statistic=float(obs),
        critical_value=crit,
        p_value=p_val,
        reject=bool(obs > crit),
        level=spec.level,
        resamples=spec.resamples,
        seed=spec.seed,
        grid=tuple(float(t) for t in config.grid),
        detail=detail,
    )


def _event_weights(fit: FitResult, log: EventLog, bandwidth: str) -> np.ndarray:
    """(G, E) kernel weight of each event at each grid time.

    Weights are zeroed when the event's pair is outside the active set at
    that time, mirroring how the estimating equations drop those pairs.
    """
    h = fit.config.h1 if bandwidth == "h1" else fit.config.h2
    W = np.empty((fit.grid.size, log.n_events))
    for g, t in enumerate(fit.grid):
        pt = fit.point(g)
        act_a = np.isfinite(pt.alpha)
        act_b = np.concatenate([np.isfinite(pt.beta), [True]])
        act = act_a[log.sender] & act_b[log.receiver]
        W[g] = kernel_weight(log.time - float(t), h, fit.config.kernel) * act
    return W


def _pair_indices(G: int) -> tuple[np.ndarray, np.ndarray]:
    g1, g2 = np.triu_indices(G, k=1)
    return g1, g2


def _trend_eta(fit, log, cov, spec, rng):
    n = fit.n_nodes
    G = fit.grid.size
    h1 = fit.config.h1
    evs = [eta_variance(fit, log, cov, float(t)) for t in fit.grid]
    se2 = np.stack([ev.sigma for ev in evs]) / (n * h1)  # (G, 2n-1)
    eta = fit.eta()
    vdiag = np.stack([ev.smat.vdiag for ev in evs])
    vcorner = np.array([ev.smat.vcorner for ev in evs])
    W = _event_weights(fit, log, "h1")

    g1, g2 = _pair_indices(G)
    denom = np.sqrt(se2[g1] + se2[g2])
    valid = np.isfinite(denom) & (denom > 0.0) & np.isfinite(eta[g1]) & np.isfinite(eta[g2])
    if not valid.any():
        raise NumericalError("no testable coordinates")
    ratio = np.where(valid, np.abs(eta[g1] - eta[g2]) / np.where(valid, denom, 1.0), -np.inf)
    obs = float(ratio.max())
    at = np.unravel_index(int(ratio.argmax()), ratio.shape)
    detail = {
        "coordinate": _eta_name(n, at[1]),
        "t1": float(fit.grid[g1[at[0]]]),
        "t2": float(fit.grid[g2[at[0]]]),
    }

    # resampled curve noise has the same covariance as the estimates:
    # S (row/col event-noise sums) / n matches sigma / (n h1) when squared
    res = np.empty(spec.resamples)
    snd, rcv = log.sender, log.receiver
    for b in range(spec.resamples):
        ge = rng.standard_normal(log.n_events)
        xa = np.stack([np.bincount(snd, weights=W[g] * ge, minlength=n) for g in range(G)])
        xb = np.stack([np.bincount(rcv, weights=W[g] * ge, minlength=n) for g in range(G)])[:, : n - 1]
        w = xa.sum(axis=1) - xb.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            y = np.concatenate(
                [xa / vdiag[:, :n] + w[:, None] / vcorner[:, None], xb / vdiag[:, n:] - w[:, None] / vcorner[:, None]],
                axis=1,
            )
        y /= n
        diff = np.where(valid, np.abs(y[g1] - y[g2]) / np.where(valid, denom, 1.0), -np.inf)
        res[b] = diff.max()
    return obs, res, detail


def _trend_gamma(fit, log, cov, spec, rng):
    n = fit.n_nodes
    G = fit.grid.size
    p = fit.p
    h2 = fit.config.h2
    gt = np.full((G, p), np.nan)
    se2 = np.full((G, p), np.nan)
    aev = np.zeros((G, log.n_events, p))
    W = _event_weights(fit, log, "h2")
    snd, rcv = log.sender, log.receiver
    for g, t in enumerate(fit.grid):
        if not np.all(np.isfinite(fit.gamma[g])):
            continue
        gi = gamma_inference(fit, log, cov, float(t))
        # differences use the uncorrected estimates: at a constant-curve null
        # the plug-in bias correction tracks the estimate's own noise and
        # would only inflate the statistic
        gt[g] = fit.gamma[g]
        se2[g] = np.diag(gi.psi).clip(min=0.0) / (gi.n_active * h2)
        # per-event loading: projected covariate of the event's pair pushed
        # through the inverse curvature (resid is zero off the active set)
        aev[g] = (gi.resid[snd, rcv] @ gi.hess_inv.T) * W[g][:, None] / gi.n_active

    g1, g2 = _pair_indices(G)
    denom = np.sqrt(se2[g1] + se2[g2])
    valid = np.isfinite(denom) & (denom > 0.0) & np.isfinite(gt[g1]) & np.isfinite(gt[g2])
    if not valid.any():
        raise NumericalError("no testable coordinates")
    ratio = np.where(valid, np.abs(gt[g1] - gt[g2]) / np.where(valid, denom, 1.0), -np.inf)
    obs = float(ratio.max())
    at = np.unravel_index(int(ratio.argmax()), ratio.shape)
    detail = {
        "coordinate": f"gamma_{at[1] + 1}",
        "t1": float(fit.grid[g1[at[0]]]),
        "t2": float(fit.grid[g2[at[0]]]),
    }

    res = np.empty(spec.resamples)
    for b in range(spec.resamples):
        ge = rng.standard_normal(log.n_events)
        y = np.einsum("gep,e->gp", aev, ge)
        diff = np.where(valid, np.abs(y[g1] - y[g2]) / np.where(valid, denom, 1.0), -np.inf)
        res[b] = diff.max()
    return obs, res, detail


def _het(fit, log, cov, spec, rng):
    n = fit.n_nodes
    G = fit.grid.size
    h1 = fit.config.h1
    sender_side = spec.kind == "het-alpha"
    evs = [eta_variance(fit, log, cov, float(t)) for t in fit.grid]
    W = _event_weights(fit, log, "h1")
    if sender_side:
        vals = fit.alpha
        q = np.stack([ev.q[:n] for ev in evs])
        v = np.stack([ev.smat.vdiag[:n] for ev in evs])
        m = n
    else:
        vals = fit.beta
        q = np.stack([ev.q[n:] for ev in evs])
        v = np.stack([ev.smat.vdiag[n:] for ev in evs])
        m = n - 1
    if m < 2:
        raise ValidationError("heterogeneity tests need at least two comparable nodes")

    # contrast standard errors per time: sqrt((q_i + q_j) / (n h1))
    with np.errstate(invalid="ignore"):
        denom = np.sqrt((q[:, :, None] + q[:, None, :]) / (n * h1))
    iu = np.triu_indices(m, k=1)
    denom = denom[:, iu[0], iu[1]]  # (G, m(m-1)/2)
    valid = np.isfinite(denom) & (denom > 0.0)
    valid &= np.isfinite(vals[:, iu[0]]) & np.isfinite(vals[:, iu[1]])
    if not valid.any():
        raise NumericalError("no testable coordinates")
    dobs = np.where(valid, np.abs(vals[:, iu[0]] - vals[:, iu[1]]) / np.where(valid, denom, 1.0), -np.inf)
    obs = float(dobs.max())
    at = np.unravel_index(int(dobs.argmax()), dobs.shape)
    label = "alpha" if sender_side else "beta"
    detail = {
        "coordinate_1": f"{label}_{iu[0][at[1]] + 1}",
        "coordinate_2": f"{label}_{iu[1][at[1]] + 1}",
        "t": float(fit.grid[at[0]]),
    }

    # contrasts cancel the shared gauge term, so only the diagonal part of
    # the resampled curve noise enters
    res = np.empty(spec.resamples)
    node = log.sender if sender_side else log.receiver
    for b in range(spec.resamples):
        ge = rng.standard_normal(log.n_events)
        x = np.stack([np.bincount(node, weights=W[g] * ge, minlength=n) for g in range(G)])
        if not sender_side:
            x = x[:, : n - 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            y = x / v / n
        diff = np.where(valid, np.abs(y[:, iu[0]] - y[:, iu[1]]) / np.where(valid, denom, 1.0), -np.inf)
        res[b] = diff.max()
    return obs, res, detail


def _eta_name(n: int, k: int) -> str:
    return f"alpha_{k + 1}" if k < n else f"beta_{k - n + 1}"
