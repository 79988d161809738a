"""Kernel-weighted estimation of the degree-corrected Cox model.

At each grid time the sender and receiver curves solve local mean-zero
equations by alternating closed-form log-ratio updates, and the homophily
coefficients solve their own equation (smoothed at a second bandwidth) by a
damped Newton step. The receiver curve of the last node is pinned to zero for
identifiability.

Updates run in two modes. ``gauss_seidel`` (default) feeds each freshly
updated block into the next within a sweep, also updates the anchored
receiver, and immediately shifts that value back into the gauge (all sender
curves up, all receiver curves down): exposures and the fixed point are
unchanged, but the near-gauge mode that would otherwise contract at roughly
1 - 1/n per sweep is removed. ``literal`` evaluates every block at the
previous sweep's values and leaves the anchor untouched throughout. Both
modes share the same fixed points; sweeps stop when the parameter change is
small and a freshly evaluated scaled residual certifies the fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import CovariateSet, EventLog
from .errors import NumericalError, ValidationError
from .ioutil import fmt, write_csv
from .kernels import (
    GAUSSIAN,
    OVERFLOW_EXPONENT,
    kernel_weight,
    segment_masses,
    support_radius,
    validate_kernel,
)

MODES = ("gauss_seidel", "literal")

_DENSE_LIMIT = 64  # dense (stacked-system) helpers refuse larger n


def default_h1(n_nodes: int) -> float:
    """Degree-curve bandwidth, 0.1 * n^(-1/5)."""
    return 0.1 * float(n_nodes) ** -0.2


def default_h2(n_nodes: int) -> float:
    """Homophily bandwidth, 0.015 * n^(-1/5)."""
    return 0.015 * float(n_nodes) ** -0.2


def default_grid() -> np.ndarray:
    return np.round(np.arange(1, 20) * 0.05, 10)


@dataclass(frozen=True)
class FitConfig:
    """Estimation settings; ``h1``/``h2``/``grid`` default per network size."""

    h1: float | None = None
    h2: float | None = None
    kernel: str = GAUSSIAN
    grid: np.ndarray | None = None
    mode: str = "gauss_seidel"
    tol: float = 1e-3
    residual_tol: float = 1e-7
    max_iter: int = 500
    min_exposure: float = 1e-8
    warm_start: bool = True

    def __post_init__(self):
        validate_kernel(self.kernel)
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        for name in ("tol", "residual_tol", "min_exposure"):
            if not getattr(self, name) > 0.0:
                raise ValidationError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        for name in ("h1", "h2"):
            val = getattr(self, name)
            if val is not None and not val > 0.0:
                raise ValidationError(f"{name} must be positive, got {val}")

    def resolve(self, n_nodes: int, tau: float) -> "FitConfig":
        """Fill bandwidth and grid defaults for a concrete network."""
        grid = self.grid if self.grid is not None else default_grid() * tau
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ValidationError("grid must be a nonempty 1-d array of times")
        if np.any(np.diff(grid) <= 0.0):
            raise ValidationError("grid times must be strictly increasing")
        if grid[0] < 0.0 or grid[-1] > tau:
            raise ValidationError(f"grid times must lie in [0, {fmt(tau)}]")
        return replace(
            self,
            h1=self.h1 if self.h1 is not None else default_h1(n_nodes),
            h2=self.h2 if self.h2 is not None else default_h2(n_nodes),
            grid=grid,
        )


@dataclass(frozen=True)
class PointFit:
    """Estimates and solver diagnostics at a single grid time."""

    t: float
    alpha: np.ndarray  # (n,), nan where undefined
    beta: np.ndarray  # (n-1,), nan where undefined
    gamma: np.ndarray  # (p,)
    defined: np.ndarray  # (2n-1+p,) bool
    iterations: int
    eps: float
    residual: float
    converged: bool
    boundary: bool
    active_pairs: int
    halvings: int


@dataclass(frozen=True)
class FitResult:
    """Curve estimates over the full grid.

    ``alpha`` is (G, n); ``beta`` is (G, n-1) and excludes the anchored
    receiver; ``gamma`` is (G, p). Undefined entries are nan and flagged in
    ``defined`` (columns ordered senders, receivers, homophily). For pooled
    fits ``alpha``/``beta`` have one column each.
    """

    n_nodes: int
    config: FitConfig
    grid: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    defined: np.ndarray
    iterations: np.ndarray
    eps: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    boundary: np.ndarray
    active_pairs: np.ndarray
    pooled: bool = False

    @property
    def p(self) -> int:
        return self.gamma.shape[1]

    def index_of(self, t: float) -> int:
        hits = np.nonzero(np.abs(self.grid - t) <= 1e-9)[0]
        if hits.size != 1:
            raise ValidationError(f"time {fmt(t)} is not on the fitted grid")
        return int(hits[0])

    def point(self, g: int) -> PointFit:
        return PointFit(
            t=float(self.grid[g]),
            alpha=self.alpha[g],
            beta=self.beta[g],
            gamma=self.gamma[g],
            defined=self.defined[g],
            iterations=int(self.iterations[g]),
            eps=float(self.eps[g]),
            residual=float(self.residual[g]),
            converged=bool(self.converged[g]),
            boundary=bool(self.boundary[g]),
            active_pairs=int(self.active_pairs[g]),
            halvings=0,
        )

    def eta(self) -> np.ndarray:
        """(G, 2n-1) sender and receiver curves side by side."""
        return np.concatenate([self.alpha, self.beta], axis=1)


def _maxabs(x: np.ndarray) -> float:
    return float(np.max(np.abs(x))) if x.size else 0.0


def _masked_exp(x: np.ndarray, active: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape)
    out[active] = np.exp(x[active])
    return out


class _Problem:
    """Everything the sweeps need at one grid time, precomputed."""

    def __init__(self, log: EventLog, cov: CovariateSet, t: float, config: FitConfig, pooled: bool = False):
        n = log.n_nodes
        self.n = n
        self.p = cov.p
        self.t = t
        self.config = config
        self.C1 = log.count_matrix(t, config.h1, config.kernel)
        self.w1 = segment_masses(cov.breaks, t, config.h1, config.kernel)
        self.w2 = segment_masses(cov.breaks, t, config.h2, config.kernel)
        self.Z = cov.values  # (K, n, n, p)

        offdiag = ~np.eye(n, dtype=bool)
        act_a = np.ones(n, dtype=bool)
        act_bf = np.ones(n, dtype=bool)  # anchored receiver never drops
        while True:
            mask = act_a[:, None] & act_bf[None, :] & offdiag
            R = np.where(mask, self.C1, 0.0).sum(axis=1)
            S = np.where(mask, self.C1, 0.0).sum(axis=0)
            if pooled:
                break
            new_a = act_a & (R >= config.min_exposure)
            new_bf = act_bf.copy()
            new_bf[: n - 1] &= S[: n - 1] >= config.min_exposure
            if np.array_equal(new_a, act_a) and np.array_equal(new_bf, act_bf):
                break
            act_a, act_bf = new_a, new_bf
        self.mask = mask
        self.act_a = act_a
        self.act_bf = act_bf
        self.act_b = act_bf[: n - 1]
        self.R = R
        self.S = S
        self.n_active = int(mask.sum())

        # event-side covariate moment for the homophily equation
        if self.p and self.n_active:
            rad = support_radius(config.h2, config.kernel)
            lo, hi = np.searchsorted(log.time, (t - rad, t + rad))
            w = kernel_weight(log.time[lo:hi] - t, config.h2, config.kernel)
            s, r = log.sender[lo:hi], log.receiver[lo:hi]
            keep = self.mask[s, r]
            seg = cov.segment_index(log.time[lo:hi][keep])
            zev = cov.at_events(seg, s[keep], r[keep])
            self.T2 = zev.T @ w[keep]
        else:
            self.T2 = np.zeros(self.p)

    def _factors(self, gamma: np.ndarray) -> np.ndarray:
        """exp(Z_k' gamma) per segment, zeroed off the active mask."""
        if self.p:
            zg = np.einsum("kijp,p->kij", self.Z, gamma)
            top = float(zg.max(initial=-np.inf, where=self.mask[None, :, :]))
            if top > OVERFLOW_EXPONENT:
                raise NumericalError(f"intensity overflow at t={fmt(self.t)}")
            out = np.exp(zg, where=self.mask[None, :, :], out=np.zeros_like(zg))
        else:
            out = np.broadcast_to(self.mask, (len(self.w1), self.n, self.n)).astype(float)
        return out

    def exposure1(self, gamma: np.ndarray) -> np.ndarray:
        """(n, n) integral of exp(Z' gamma) under the h1 kernel window."""
        return np.tensordot(self.w1, self._factors(gamma), axes=1)

    def implied(self, bf: np.ndarray, a: np.ndarray, X1: np.ndarray):
        """Closed-form updates: alpha given receivers, beta given senders."""
        n = self.n
        eb = _masked_exp(bf, self.act_bf)
        a_new = np.full(n, np.nan)
        erow = X1 @ eb
        a_new[self.act_a] = np.log(self.R[self.act_a]) - np.log(erow[self.act_a])
        ea = _masked_exp(a, self.act_a)
        b_new = np.full(n - 1, np.nan)
        ecol = X1.T @ ea
        b_new[self.act_b] = np.log(self.S[: n - 1][self.act_b]) - np.log(ecol[: n - 1][self.act_b])
        return a_new, b_new

    def _check_exponent(self, a, bf):
        top_a = float(np.max(a[self.act_a], initial=-np.inf))
        top_b = float(np.max(bf[self.act_bf], initial=-np.inf))
        if top_a + top_b > OVERFLOW_EXPONENT:
            raise NumericalError(f"intensity overflow at t={fmt(self.t)}")

    def q_and_jac(self, ea: np.ndarray, eb: np.ndarray, gamma: np.ndarray):
        """Homophily equation value and Jacobian at fixed degree curves."""
        base = ea[:, None] * eb[None, :]
        fac = self._factors(gamma)
        s1 = np.zeros(self.p)
        s2 = np.zeros((self.p, self.p))
        for k in range(len(self.w2)):
            Bk = (self.w2[k] * fac[k]) * base
            s1 += np.einsum("ij,ijp->p", Bk, self.Z[k])
            s2 += np.einsum("ij,ijp,ijq->pq", Bk, self.Z[k], self.Z[k])
        q = (self.T2 - s1) / self.n_active
        jac = -s2 / self.n_active
        return q, jac

    def newton(self, ea: np.ndarray, eb: np.ndarray, gamma: np.ndarray, halvings: int):
        """Damped Newton solve of the homophily equation.

        Steps halve while the residual norm fails to decrease, down to a 1/64
        floor; more than 30 halvings in one point fit is an error.
        """
        q, jac = self.q_and_jac(ea, eb, gamma)
        qn = _maxabs(q)
        for _ in range(60):
            if qn <= 1e-13:
                break
            try:
                step = np.linalg.solve(jac, q)
            except np.linalg.LinAlgError:
                raise NumericalError(f"gamma solve failed at t={fmt(self.t)}: singular Jacobian") from None
            if self.p:
                # trust region on the exponent scale: far from the root the
                # raw step can move exp(Z' gamma) by hundreds of orders, so
                # cap the per-step change and let the outer loop iterate
                zs = np.einsum("kijp,p->kij", self.Z, step)
                amp = float(np.abs(zs).max(initial=0.0, where=self.mask[None, :, :]))
                if amp > 2.0:
                    step = step * (2.0 / amp)
            scale = 1.0
            while True:
                cand = gamma - scale * step
                try:
                    q_c, jac_c = self.q_and_jac(ea, eb, cand)
                    qn_c = _maxabs(q_c)
                except NumericalError:
                    # an overflowing candidate counts as a failed step
                    if scale <= 1.0 / 64.0:
                        raise
                    qn_c = np.inf
                if qn_c <= qn or scale <= 1.0 / 64.0:
                    break
                scale *= 0.5
                halvings += 1
                if halvings > 30:
                    raise NumericalError(f"gamma solve failed at t={fmt(self.t)}: damping exhausted")
            move = _maxabs(scale * step)
            gamma, q, jac, qn = cand, q_c, jac_c, qn_c
            if move <= 1e-13 * (1.0 + _maxabs(gamma)):
                break
        return gamma, qn, halvings

    def gamma_step_norm(self, ea, eb, gamma) -> float:
        q, jac = self.q_and_jac(ea, eb, gamma)
        try:
            return _maxabs(np.linalg.solve(jac, q))
        except np.linalg.LinAlgError:
            return np.inf

    def scaled_residual(self, a: np.ndarray, bf: np.ndarray, gamma: np.ndarray) -> float:
        """Fresh fixed-point defect at a state, on the parameter scale."""
        X1 = self.exposure1(gamma)
        a_imp, b_imp = self.implied(bf, a, X1)
        res = _maxabs(a_imp[self.act_a] - a[self.act_a])
        res += _maxabs(b_imp[self.act_b] - bf[: self.n - 1][self.act_b])
        if self.p and self.n_active:
            res += self.gamma_step_norm(_masked_exp(a, self.act_a), _masked_exp(bf, self.act_bf), gamma)
        return res


def fit_at_time(
    log: EventLog,
    cov: CovariateSet,
    t: float,
    config: FitConfig,
    init: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> PointFit:
    """Solve the local estimating equations at one time.

    ``init`` optionally warm-starts (alpha, beta, gamma); non-finite entries
    fall back to zero.
    """
    n = log.n_nodes
    pb = _Problem(log, cov, t, config)
    boundary = t < config.h1 or t > log.tau - config.h1

    a = np.zeros(n)
    bf = np.zeros(n)
    g = np.zeros(pb.p)
    if init is not None:
        ia, ib, ig = init
        a = np.where(np.isfinite(ia), ia, 0.0)
        bf[: n - 1] = np.where(np.isfinite(ib), ib, 0.0)
        g = np.where(np.isfinite(ig), ig, 0.0) if pb.p else g

    defined = np.concatenate([pb.act_a, pb.act_b, np.full(pb.p, pb.n_active > 0)])
    if pb.n_active == 0:
        return PointFit(
            t=t,
            alpha=np.full(n, np.nan),
            beta=np.full(n - 1, np.nan),
            gamma=np.full(pb.p, np.nan),
            defined=defined,
            iterations=0,
            eps=0.0,
            residual=0.0,
            converged=True,
            boundary=boundary,
            active_pairs=0,
            halvings=0,
        )

    fresh = config.mode == "gauss_seidel"
    halvings = 0
    eps = np.inf
    residual = np.inf
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        pb._check_exponent(a, bf)
        X1 = pb.exposure1(g)
        a_new, bf_new = _sweep_ab(pb, a, bf, X1, fresh)
        if pb.p:
            ea = _masked_exp(a_new if fresh else a, pb.act_a)
            eb = _masked_exp(bf_new if fresh else bf, pb.act_bf)
            g_new, _, halvings = pb.newton(ea, eb, g, halvings)
        else:
            g_new = g
        eps = (
            _maxabs(a_new[pb.act_a] - a[pb.act_a])
            + _maxabs(bf_new[: n - 1][pb.act_b] - bf[: n - 1][pb.act_b])
            + _maxabs(g_new - g)
        )
        a = a_new
        bf = bf_new
        g = g_new
        if eps <= config.tol:
            residual = pb.scaled_residual(a, bf, g)
            if residual <= config.residual_tol:
                converged = True
                break
    if not converged and not np.isfinite(residual):
        residual = pb.scaled_residual(a, bf, g)

    alpha = np.where(pb.act_a, a, np.nan)
    beta = np.where(pb.act_b, bf[: n - 1], np.nan)
    gamma = g if pb.p else np.zeros(0)
    return PointFit(
        t=t,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        defined=defined,
        iterations=it,
        eps=eps,
        residual=float(residual),
        converged=converged,
        boundary=boundary,
        active_pairs=pb.n_active,
        halvings=halvings,
    )


def _sweep_ab(pb: _Problem, a, bf, X1, fresh: bool):
    """One sweep of the closed-form updates; returns anchored (alpha, beta)."""
    n = pb.n
    eb = _masked_exp(bf, pb.act_bf)
    erow = X1 @ eb
    a_new = np.zeros(n)
    a_new[pb.act_a] = np.log(pb.R[pb.act_a]) - np.log(erow[pb.act_a])
    ea = _masked_exp(a_new if fresh else a, pb.act_a)
    ecol = X1.T @ ea
    bf_new = np.zeros(n)
    bf_new[: n - 1][pb.act_b] = np.log(pb.S[: n - 1][pb.act_b]) - np.log(ecol[: n - 1][pb.act_b])
    if fresh and pb.S[n - 1] >= pb.config.min_exposure:
        # fold the anchored receiver's implied update into the gauge
        shift = np.log(pb.S[n - 1]) - np.log(ecol[n - 1])
        a_new[pb.act_a] += shift
        bf_new[: n - 1][pb.act_b] -= shift
    return a_new, bf_new


def pair_residuals(
    log: EventLog,
    cov: CovariateSet,
    t: float,
    config: FitConfig,
    point: PointFit,
    bandwidth: str = "h1",
) -> np.ndarray:
    """Kernel-weighted count minus fitted exposure, per ordered pair.

    At a converged point the ``h1`` residuals sum to zero over each active
    row and column (those sums are the estimating equations); the ``h2``
    version feeds the homophily resampling. Inactive pairs are zero.
    """
    if bandwidth not in ("h1", "h2"):
        raise ValidationError(f"bandwidth must be 'h1' or 'h2', got {bandwidth!r}")
    n = log.n_nodes
    pb = _Problem(log, cov, t, config)
    a = np.where(np.isfinite(point.alpha), point.alpha, 0.0)
    bf = np.zeros(n)
    bf[: n - 1] = np.where(np.isfinite(point.beta), point.beta, 0.0)
    base = _masked_exp(a, pb.act_a)[:, None] * _masked_exp(bf, pb.act_bf)[None, :]
    g = np.where(np.isfinite(point.gamma), point.gamma, 0.0) if pb.p else np.zeros(0)
    fac = pb._factors(g)
    if bandwidth == "h1":
        counts, w = pb.C1, pb.w1
    else:
        counts, w = log.count_matrix(t, config.h2, config.kernel), pb.w2
    X = np.tensordot(w, fac, axes=1)
    return np.where(pb.mask, counts - X * base, 0.0)


def fit_grid(
    log: EventLog,
    cov: CovariateSet | None = None,
    config: FitConfig | None = None,
    threads: int = 1,
) -> FitResult:
    """Fit the model at every grid time, warm-starting along the grid.

    ``threads > 1`` splits the grid into contiguous chunks fitted in separate
    processes; warm starts then restart at each chunk head, so results are
    deterministic for a fixed thread count.
    """
    cov = cov if cov is not None else CovariateSet.empty(log.n_nodes, log.tau)
    _check_cov(log, cov)
    config = (config or FitConfig()).resolve(log.n_nodes, log.tau)
    if threads < 1:
        raise ValidationError(f"threads must be at least 1, got {threads}")
    if threads == 1 or config.grid.size == 1:
        points = _fit_chunk(log, cov, config, config.grid)
    else:
        from concurrent.futures import ProcessPoolExecutor

        chunks = np.array_split(config.grid, min(threads, config.grid.size))
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            futures = [pool.submit(_fit_chunk, log, cov, config, c) for c in chunks]
            points = [pt for fut in futures for pt in fut.result()]
    return _assemble(log.n_nodes, cov.p, config, points, pooled=False)


def _fit_chunk(log, cov, config, grid) -> list[PointFit]:
    points = []
    init = None
    for t in grid:
        pt = fit_at_time(log, cov, float(t), config, init=init)
        points.append(pt)
        if config.warm_start:
            init = (pt.alpha, pt.beta, pt.gamma)
    return points


def _check_cov(log: EventLog, cov: CovariateSet) -> None:
    if cov.n_nodes != log.n_nodes:
        raise ValidationError(f"covariates are for {cov.n_nodes} nodes, events for {log.n_nodes}")
    if abs(cov.tau - log.tau) > 1e-9:
        raise ValidationError("covariates and events disagree on the observation window")


def _assemble(n, p, config, points: Sequence[PointFit], pooled: bool) -> FitResult:
    return FitResult(
        n_nodes=n,
        config=config,
        grid=config.grid,
        alpha=np.stack([pt.alpha for pt in points]),
        beta=np.stack([pt.beta for pt in points]),
        gamma=np.stack([pt.gamma for pt in points]),
        defined=np.stack([pt.defined for pt in points]),
        iterations=np.array([pt.iterations for pt in points]),
        eps=np.array([pt.eps for pt in points]),
        residual=np.array([pt.residual for pt in points]),
        converged=np.array([pt.converged for pt in points]),
        boundary=np.array([pt.boundary for pt in points]),
        active_pairs=np.array([pt.active_pairs for pt in points]),
        pooled=pooled,
    )


def fit_homogeneous(
    log: EventLog, cov: CovariateSet | None = None, config: FitConfig | None = None
) -> FitResult:
    """Pooled baseline: one sender level and one receiver level for everyone.

    Only the sum of the two levels is identified, so the receiver level is
    pinned at zero and updates always use fresh iterates.
    """
    cov = cov if cov is not None else CovariateSet.empty(log.n_nodes, log.tau)
    _check_cov(log, cov)
    config = (config or FitConfig()).resolve(log.n_nodes, log.tau)
    points = []
    init = None
    for t in config.grid:
        pt = _fit_pooled_point(log, cov, float(t), config, init)
        points.append(pt)
        if config.warm_start:
            init = (pt.alpha, pt.beta, pt.gamma)
    return _assemble(log.n_nodes, cov.p, config, points, pooled=True)


def _fit_pooled_point(log, cov, t, config, init) -> PointFit:
    pb = _Problem(log, cov, t, config, pooled=True)
    n = pb.n
    boundary = t < config.h1 or t > log.tau - config.h1
    offdiag = pb.mask
    total = float(np.where(offdiag, pb.C1, 0.0).sum())
    p = pb.p
    defined = np.full(2 + p, total >= config.min_exposure)
    if total < config.min_exposure:
        return PointFit(
            t=t,
            alpha=np.array([np.nan]),
            beta=np.array([np.nan]),
            gamma=np.full(p, np.nan),
            defined=defined,
            iterations=0,
            eps=0.0,
            residual=0.0,
            converged=True,
            boundary=boundary,
            active_pairs=0,
            halvings=0,
        )

    a = b = 0.0
    g = np.zeros(p)
    if init is not None:
        ia, ib, ig = init
        a = float(ia[0]) if np.isfinite(ia[0]) else 0.0
        b = float(ib[0]) if np.isfinite(ib[0]) else 0.0
        g = np.where(np.isfinite(ig), ig, 0.0) if p else g
    halvings = 0
    converged = False
    eps = np.inf
    residual = np.inf
    it = 0

    def pooled_x(gamma):
        return float(np.where(offdiag, pb.exposure1(gamma), 0.0).sum())

    for it in range(1, config.max_iter + 1):
        x = pooled_x(g)
        a_new = np.log(total / x) - b
        b_new = np.log(total / x) - a_new
        if p:
            ea = np.full(n, np.exp(a_new))
            eb = np.full(n, np.exp(b_new))
            g_new, _, halvings = pb.newton(ea, eb, g, halvings)
        else:
            g_new = g
        eps = abs(a_new - a) + abs(b_new - b) + _maxabs(g_new - g)
        a, b, g = a_new, b_new, g_new
        if eps <= config.tol:
            x = pooled_x(g)
            residual = abs(np.log(total / x) - b - a)
            if p:
                residual += pb.gamma_step_norm(np.full(n, np.exp(a)), np.full(n, np.exp(b)), g)
            if residual <= config.residual_tol:
                converged = True
                break
    return PointFit(
        t=t,
        alpha=np.array([a]),
        beta=np.array([b]),
        gamma=g if p else np.zeros(0),
        defined=defined,
        iterations=it,
        eps=eps,
        residual=float(residual) if np.isfinite(residual) else np.inf,
        converged=converged,
        boundary=boundary,
        active_pairs=pb.n_active,
        halvings=halvings,
    )


def stacked_system(
    log: EventLog,
    cov: CovariateSet,
    t: float,
    theta: np.ndarray,
    config: FitConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense value and Jacobian of the full stacked estimating equations.

    ``theta`` stacks (alpha (n,), beta (n-1,), gamma (p,)). Refuses networks
    larger than 64 nodes; meant for cross-checking the sweep solver.
    """
    n = log.n_nodes
    if n > _DENSE_LIMIT:
        raise ValidationError(f"dense stacked system is limited to {_DENSE_LIMIT} nodes")
    p = cov.p
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (2 * n - 1 + p,):
        raise ValidationError(f"theta must have length {2 * n - 1 + p}")
    pb = _Problem(log, cov, t, config)
    if not (pb.act_a.all() and pb.act_b.all()):
        raise ValidationError("stacked system requires every node to be exposed at t")
    a = theta[:n]
    bf = np.concatenate([theta[n : 2 * n - 1], [0.0]])
    g = theta[2 * n - 1 :]
    ea, eb = np.exp(a), np.exp(bf)
    base = ea[:, None] * eb[None, :] * pb.mask

    fac = pb._factors(g)
    X1 = np.tensordot(pb.w1, fac, axes=1)
    X2 = np.tensordot(pb.w2, fac, axes=1)
    E1 = X1 * base
    E2 = X2 * base
    den = n - 1
    N = pb.n_active

    F = np.empty(2 * n - 1 + p)
    F[:n] = (pb.R - E1.sum(axis=1)) / den
    F[n : 2 * n - 1] = (pb.S[: n - 1] - E1.sum(axis=0)[: n - 1]) / den

    E1Z = np.zeros((n, n, p))
    E2Z = np.zeros((n, n, p))
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    for k in range(len(pb.w1)):
        fk = fac[k] * base
        E1Z += pb.w1[k] * fk[:, :, None] * cov.values[k]
        E2Z += pb.w2[k] * fk[:, :, None] * cov.values[k]
        s1 += pb.w2[k] * np.einsum("ij,ijp->p", fk, cov.values[k])
        s2 += pb.w2[k] * np.einsum("ij,ijp,ijq->pq", fk, cov.values[k], cov.values[k])
    if p:
        F[2 * n - 1 :] = (pb.T2 - s1) / N

    m = 2 * n - 1 + p
    J = np.zeros((m, m))
    J[:n, :n] = -np.diag(E1.sum(axis=1)) / den
    J[:n, n : 2 * n - 1] = -E1[:, : n - 1] / den
    J[n : 2 * n - 1, :n] = -E1[:, : n - 1].T / den
    J[n : 2 * n - 1, n : 2 * n - 1] = -np.diag(E1.sum(axis=0)[: n - 1]) / den
    if p:
        J[:n, 2 * n - 1 :] = -E1Z.sum(axis=1) / den
        J[n : 2 * n - 1, 2 * n - 1 :] = -E1Z.sum(axis=0)[: n - 1] / den
        J[2 * n - 1 :, :n] = -E2Z.sum(axis=1).T / N
        J[2 * n - 1 :, n : 2 * n - 1] = -E2Z.sum(axis=0)[: n - 1].T / N
        J[2 * n - 1 :, 2 * n - 1 :] = -s2 / N
    return F, J


def write_curves_csv(fit: FitResult, path: str) -> None:
    """One row per grid time, one column per coordinate; undefined estimates
    print as nan."""
    names = coordinate_names(fit)
    rows = []
    for g, t in enumerate(fit.grid):
        rows.append((t, *np.concatenate([fit.alpha[g], fit.beta[g], fit.gamma[g]])))
    write_csv(path, ("t", *names), rows)


def coordinate_names(fit: FitResult) -> list[str]:
    """1-based labels matching the column order of ``FitResult.eta``."""
    if fit.pooled:
        return ["alpha", "beta"] + [f"gamma_{k + 1}" for k in range(fit.p)]
    n = fit.n_nodes
    return (
        [f"alpha_{i + 1}" for i in range(n)]
        + [f"beta_{j + 1}" for j in range(n - 1)]
        + [f"gamma_{k + 1}" for k in range(fit.p)]
    )
