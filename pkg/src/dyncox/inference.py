"""Variance estimation and confidence intervals.

All quantities run in O(n^2) time by exploiting the arrow structure of the
local normal matrix: its approximate inverse is diagonal plus a rank-one
correction through the anchored receiver's corner entry. Dense counterparts
(for cross-checking on small networks) are provided alongside.

Notation below: ``pi_ij`` is the fitted log intensity at the evaluation time,
``v`` are exposure averages over pairs (normalized by n-1), ``omega`` are
squared-kernel event sums, and ``u`` are covariate-weighted exposures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import CovariateSet, EventLog
from .errors import NumericalError, ValidationError
from .fitting import FitResult, coordinate_names
from .ioutil import fmt, write_csv
from .kernels import OVERFLOW_EXPONENT

_DENSE_LIMIT = 64


@dataclass(frozen=True)
class StructuredSMatrix:
    """Approximate inverse of the local normal matrix.

    Acts as ``diag(1/vdiag) + sign pattern / vcorner`` where the sign is +1
    for sender coordinates and -1 for receiver coordinates.
    """

    t: float
    n_nodes: int
    vdiag: np.ndarray  # (2n-1,), nan at undefined coordinates
    vcorner: float
    defined: np.ndarray  # (2n-1,) bool

    def multiply(self, x: np.ndarray) -> np.ndarray:
        """Apply to a vector; undefined coordinates are treated as zero."""
        n = self.n_nodes
        x = np.where(self.defined, np.asarray(x, dtype=float), 0.0)
        w = x[:n].sum() - x[n:].sum()
        out = np.full(2 * n - 1, np.nan)
        d = self.defined
        out[:n][d[:n]] = x[:n][d[:n]] / self.vdiag[:n][d[:n]] + w / self.vcorner
        out[n:][d[n:]] = x[n:][d[n:]] / self.vdiag[n:][d[n:]] - w / self.vcorner
        return out

    def dense(self) -> np.ndarray:
        n = self.n_nodes
        if n > _DENSE_LIMIT:
            raise ValidationError(f"dense form is limited to {_DENSE_LIMIT} nodes")
        if not self.defined.all():
            raise ValidationError("dense form requires every coordinate to be defined")
        sign = np.concatenate([np.ones(n), -np.ones(n - 1)])
        return np.diag(1.0 / self.vdiag) + np.outer(sign, sign) / self.vcorner


@dataclass(frozen=True)
class _PointState:
    """Fitted point unpacked for inference: exposures and masks."""

    t: float
    n: int
    p: int
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    act_a: np.ndarray
    act_bf: np.ndarray
    mask: np.ndarray  # (n, n) active ordered pairs
    epi: np.ndarray  # (n, n) fitted exposure exp(pi_ij), zero off mask
    zt: np.ndarray  # (n, n, p) covariates at t
    n_active: int


def _point_state(fit: FitResult, cov: CovariateSet, t: float) -> _PointState:
    if fit.pooled:
        raise ValidationError("structured inference needs a per-node fit, not a pooled one")
    if cov.n_nodes != fit.n_nodes:
        raise ValidationError("covariates and fit disagree on the number of nodes")
    g = fit.index_of(t)
    n = fit.n_nodes
    alpha = fit.alpha[g]
    beta = fit.beta[g]
    gamma = fit.gamma[g]
    act_a = np.isfinite(alpha)
    act_bf = np.concatenate([np.isfinite(beta), [True]])
    mask = act_a[:, None] & act_bf[None, :] & ~np.eye(n, dtype=bool)
    zt = cov.at(t)
    logit = np.zeros((n, n))
    if cov.p:
        if not np.all(np.isfinite(gamma)):
            mask = np.zeros((n, n), dtype=bool)
        else:
            logit = zt @ gamma
    a0 = np.where(act_a, alpha, 0.0)
    b0 = np.concatenate([np.where(np.isfinite(beta), beta, 0.0), [0.0]])
    logit = logit + a0[:, None] + b0[None, :]
    top = float(logit.max(initial=-np.inf, where=mask))
    if top > OVERFLOW_EXPONENT:
        raise NumericalError(f"intensity overflow at t={fmt(t)}")
    epi = np.exp(logit, where=mask, out=np.zeros((n, n)))
    return _PointState(
        t=t,
        n=n,
        p=cov.p,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        act_a=act_a,
        act_bf=act_bf,
        mask=mask,
        epi=epi,
        zt=zt,
        n_active=int(mask.sum()),
    )


def _smatrix_from_state(st: _PointState) -> StructuredSMatrix:
    n = st.n
    den = n - 1
    va = st.epi.sum(axis=1) / den
    vb = st.epi.sum(axis=0)[: n - 1] / den
    vc = st.epi[:, n - 1].sum() / den
    defined = np.concatenate([st.act_a, st.act_bf[: n - 1]])
    vdiag = np.concatenate([np.where(st.act_a, va, np.nan), np.where(st.act_bf[: n - 1], vb, np.nan)])
    if st.n_active and (vc <= 0.0 or np.any(vdiag[defined] <= 0.0)):
        raise NumericalError(f"degenerate S-matrix at t={fmt(st.t)}")
    return StructuredSMatrix(t=st.t, n_nodes=n, vdiag=vdiag, vcorner=vc, defined=defined)


def s_matrix(fit: FitResult, cov: CovariateSet, t: float) -> StructuredSMatrix:
    """Structured approximate inverse of the normal matrix at a grid time."""
    return _smatrix_from_state(_point_state(fit, cov, t))


@dataclass(frozen=True)
class EtaVariance:
    """Variance factors for the degree curves at one time.

    The standard error of a curve estimate is ``sqrt(sigma / (n h1))``. The
    pairwise contrast variance (for heterogeneity statistics) is
    ``q_k + q_l`` within either the sender or the receiver block.
    """

    t: float
    smat: StructuredSMatrix
    sigma: np.ndarray  # (2n-1,)
    q: np.ndarray  # (2n-1,) omega_kk / v_kk^2
    omega: np.ndarray  # (2n-1,)
    omega_corner: np.ndarray  # (n,) squared-kernel mass toward the anchor
    nu: float

    @property
    def defined(self) -> np.ndarray:
        return self.smat.defined


def eta_variance(fit: FitResult, log: EventLog, cov: CovariateSet, t: float) -> EtaVariance:
    """Plug-in sandwich variance of the sender and receiver curves."""
    st = _point_state(fit, cov, t)
    smat = _smatrix_from_state(st)
    n = st.n
    h1 = fit.config.h1
    c1sq = log.count_matrix(t, h1, fit.config.kernel, squared=True) * st.mask
    scale = h1 / n
    wa = scale * c1sq.sum(axis=1)
    wb = scale * c1sq.sum(axis=0)[: n - 1]
    corner = scale * c1sq[:, n - 1]
    nu = float(corner.sum())
    va = smat.vdiag[:n]
    vb = smat.vdiag[n:]
    vc = smat.vcorner
    with np.errstate(invalid="ignore"):
        qa = wa / va**2
        qb = wb / vb**2
        sa = qa + 2.0 * corner / (va * vc) + nu / vc**2
        sb = qb + nu / vc**2
    sigma = np.concatenate([sa, sb])
    q = np.concatenate([qa, qb])
    return EtaVariance(t=t, smat=smat, sigma=sigma, q=q, omega=np.concatenate([wa, wb]), omega_corner=corner, nu=nu)


@dataclass(frozen=True)
class GammaInference:
    """Homophily estimate with curvature, bias, and sandwich variance.

    The standard error of component m is ``sqrt(psi[m, m] / (N h2))`` with N
    the number of active ordered pairs; intervals center at the bias-corrected
    ``gamma_tilde``.
    """

    t: float
    gamma_hat: np.ndarray
    b_hat: np.ndarray
    bias: np.ndarray
    gamma_tilde: np.ndarray
    hessian: np.ndarray
    hess_inv: np.ndarray
    sigma_mat: np.ndarray
    psi: np.ndarray
    resid: np.ndarray  # (n, n, p) covariate minus its degree projection
    n_active: int


def gamma_inference(fit: FitResult, log: EventLog, cov: CovariateSet, t: float) -> GammaInference:
    """Inference for the homophily coefficients at one grid time."""
    if cov.p == 0:
        raise ValidationError("the model has no covariates, so there is no homophily coefficient")
    st = _point_state(fit, cov, t)
    if st.n_active == 0:
        raise NumericalError(f"no active pairs at t={fmt(t)}")
    smat = _smatrix_from_state(st)
    n, p = st.n, st.p
    den = n - 1
    nn = st.n_active
    h1, h2 = fit.config.h1, fit.config.h2
    epi, zt = st.epi, st.zt

    ua = np.einsum("ijp,ij->ip", zt, epi)  # includes the anchor column
    ub = np.einsum("ijp,ij->jp", zt, epi)[: n - 1]
    ud = zt[:, n - 1, :].T @ epi[:, n - 1]
    va, vb, vc = smat.vdiag[:n], smat.vdiag[n:], smat.vcorner
    da = den * va
    db = den * vb
    dc = den * vc

    # curvature of the profiled homophily equation
    m2 = np.einsum("ijp,ijq,ij->pq", zt, zt, epi)
    corr = np.zeros((p, p))
    act_a, act_b = st.act_a, st.act_bf[: n - 1]
    if act_a.any():
        corr += np.einsum("ip,iq,i->pq", ua[act_a], ua[act_a], 1.0 / va[act_a])
    if act_b.any():
        corr += np.einsum("jp,jq,j->pq", ub[act_b], ub[act_b], 1.0 / vb[act_b])
    corr += np.outer(ud, ud) / vc
    hess = m2 / nn - corr / (nn * den)
    try:
        hinv = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        raise NumericalError(f"H_Q not invertible at t={fmt(t)}") from None

    # plug-in bias: per-node ratios of squared-kernel event sums to exposure
    # sums, once over senders and once over receivers (anchor included)
    c1sq = log.count_matrix(t, h1, fit.config.kernel, squared=True) * st.mask
    num_a = np.einsum("ijp,ij->ip", zt, c1sq)
    num_b = np.einsum("ijp,ij->jp", zt, c1sq)
    rowsum = epi.sum(axis=1)
    colsum = epi.sum(axis=0)
    terms = np.zeros(p)
    ok_a = act_a & (rowsum > 0.0)
    ok_b = st.act_bf & (colsum > 0.0)
    if ok_a.any():
        terms += (num_a[ok_a] / rowsum[ok_a, None]).sum(axis=0)
    if ok_b.any():
        terms += (num_b[ok_b] / colsum[ok_b, None]).sum(axis=0)
    b_hat = h1 * terms / (2.0 * nn)
    bias = hinv @ b_hat

    # sandwich middle: squared-kernel event sums of projected covariates
    ra = np.zeros((n, p))
    ra[act_a] = ua[act_a] / da[act_a, None]
    rb = np.zeros((n, p))
    rb[: n - 1][act_b] = ub[act_b] / db[act_b, None]
    rb[n - 1] = ud / dc
    resid = np.where(st.mask[:, :, None], zt - ra[:, None, :] - rb[None, :, :], 0.0)
    c2sq = log.count_matrix(t, h2, fit.config.kernel, squared=True) * st.mask
    sig = (h2 / nn) * np.einsum("ijp,ijq,ij->pq", resid, resid, c2sq)
    psi = hinv @ sig @ hinv.T

    g = fit.index_of(t)
    gamma_hat = fit.gamma[g]
    return GammaInference(
        t=t,
        gamma_hat=gamma_hat,
        b_hat=b_hat,
        bias=bias,
        gamma_tilde=gamma_hat - bias,
        hessian=hess,
        hess_inv=hinv,
        sigma_mat=sig,
        psi=psi,
        resid=resid,
        n_active=nn,
    )


@dataclass(frozen=True)
class CIBundle:
    """Pointwise confidence intervals over the fitted grid."""

    level: float
    z: float
    grid: np.ndarray
    names: list[str]
    eta: np.ndarray  # (G, 2n-1)
    eta_se: np.ndarray
    eta_lo: np.ndarray
    eta_hi: np.ndarray
    gamma: np.ndarray  # (G, p)
    gamma_tilde: np.ndarray
    gamma_se: np.ndarray
    gamma_lo: np.ndarray
    gamma_hi: np.ndarray


def confidence_intervals(
    fit: FitResult, log: EventLog, cov: CovariateSet, level: float = 0.95
) -> CIBundle:
    """Pointwise normal intervals for every defined coordinate on the grid.

    Degree-curve intervals center at the estimate; homophily intervals center
    at the bias-corrected estimate. Undefined entries come back as nan.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must be in (0, 1), got {fmt(level)}")
    z = float(norm.ppf(0.5 * (1.0 + level)))
    n = fit.n_nodes
    G = fit.grid.size
    p = fit.p
    h1, h2 = fit.config.h1, fit.config.h2
    eta = fit.eta()
    eta_se = np.full((G, 2 * n - 1), np.nan)
    g_tilde = np.full((G, p), np.nan)
    g_se = np.full((G, p), np.nan)
    for g, t in enumerate(fit.grid):
        ev = eta_variance(fit, log, cov, float(t))
        with np.errstate(invalid="ignore"):
            eta_se[g] = np.sqrt(ev.sigma / (n * h1))
        if p and np.all(np.isfinite(fit.gamma[g])):
            gi = gamma_inference(fit, log, cov, float(t))
            g_tilde[g] = gi.gamma_tilde
            g_se[g] = np.sqrt(np.diag(gi.psi).clip(min=0.0) / (gi.n_active * h2))
    return CIBundle(
        level=level,
        z=z,
        grid=fit.grid,
        names=coordinate_names(fit),
        eta=eta,
        eta_se=eta_se,
        eta_lo=eta - z * eta_se,
        eta_hi=eta + z * eta_se,
        gamma=fit.gamma,
        gamma_tilde=g_tilde,
        gamma_se=g_se,
        gamma_lo=g_tilde - z * g_se,
        gamma_hi=g_tilde + z * g_se,
    )


def write_ci_csv(bundle: CIBundle, path: str) -> None:
    """One row per (time, coordinate).

    The ``corrected`` column is the bias-corrected estimate and is filled
    only for homophily coordinates; ``variance`` is the squared standard
    error, so ``lower``/``upper`` are (corrected or estimate) -/+
    z * sqrt(variance).
    """
    rows = []
    n_eta = bundle.eta.shape[1]
    for g, t in enumerate(bundle.grid):
        est = np.concatenate([bundle.eta[g], bundle.gamma[g]])
        se = np.concatenate([bundle.eta_se[g], bundle.gamma_se[g]])
        lo = np.concatenate([bundle.eta_lo[g], bundle.gamma_lo[g]])
        hi = np.concatenate([bundle.eta_hi[g], bundle.gamma_hi[g]])
        for k, name in enumerate(bundle.names):
            corr = bundle.gamma_tilde[g, k - n_eta] if k >= n_eta else ""
            rows.append((t, name, est[k], corr, lo[k], hi[k], se[k] ** 2))
    write_csv(path, ("t", "coordinate", "estimate", "corrected", "lower", "upper", "variance"), rows)


def dense_v_matrix(fit: FitResult, cov: CovariateSet, t: float) -> np.ndarray:
    """Full (2n-1) x (2n-1) normal matrix; small networks only."""
    st = _point_state(fit, cov, t)
    n = st.n
    if n > _DENSE_LIMIT:
        raise ValidationError(f"dense form is limited to {_DENSE_LIMIT} nodes")
    if not (st.act_a.all() and st.act_bf.all()):
        raise ValidationError("dense form requires every coordinate to be defined")
    den = n - 1
    V = np.zeros((2 * n - 1, 2 * n - 1))
    V[:n, :n] = np.diag(st.epi.sum(axis=1)) / den
    V[n:, n:] = np.diag(st.epi.sum(axis=0)[: n - 1]) / den
    V[:n, n:] = st.epi[:, : n - 1] / den
    V[n:, :n] = st.epi[:, : n - 1].T / den
    return V


def dense_omega(fit: FitResult, log: EventLog, cov: CovariateSet, t: float) -> np.ndarray:
    """Full martingale variance matrix of the degree equations; small n only."""
    st = _point_state(fit, cov, t)
    n = st.n
    if n > _DENSE_LIMIT:
        raise ValidationError(f"dense form is limited to {_DENSE_LIMIT} nodes")
    h1 = fit.config.h1
    c1sq = log.count_matrix(t, h1, fit.config.kernel, squared=True) * st.mask
    scale = h1 / n
    O = np.zeros((2 * n - 1, 2 * n - 1))
    O[:n, :n] = np.diag(scale * c1sq.sum(axis=1))
    O[n:, n:] = np.diag(scale * c1sq.sum(axis=0)[: n - 1])
    O[:n, n:] = scale * c1sq[:, : n - 1]
    O[n:, :n] = scale * c1sq[:, : n - 1].T
    return O
