"""Scenario presets and exact simulation of the interaction process.

A :class:`TruthBundle` packages true parameter curves (per-node degree curves,
a homophily coefficient curve) together with sampled covariates. Events are
drawn by Lewis-Shedler thinning, pair by pair, under a dominating rate
``1.05 * max`` of the intensity over a fixed 2048-point grid.

Randomness is counter-based (Philox). Pairs are enumerated row-major without
the diagonal and split into fixed blocks of 1024 consecutive pairs; block ``b``
draws from the substream at counter offset ``b * 2**128``, in a fixed order
(candidate counts, then times, then acceptance variables). The result is
byte-identical for a given seed and independent of how blocks would be
scheduled across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable

import numpy as np

from .data import CovariateSet, EventLog
from .errors import NumericalError, ValidationError
from .ioutil import atomic_write_text
from .kernels import OVERFLOW_EXPONENT

SCENARIOS = ("main", "heterogeneity_compare", "trend_test", "het_test")

ENVELOPE_GRID = 2048
ENVELOPE_MARGIN = 1.05
_PAIR_BLOCK = 1024

# Stream tags keeping covariate sampling and event sampling independent.
_COVARIATE_STREAM = 0x5EED_C07A
_EVENT_STREAM = 0x5EED_E7E7


def _curve_const(t, value):
    return np.full(np.shape(t), float(value))


def _curve_linear(t, base, slope):
    return base + slope * np.asarray(t, dtype=float)


def _curve_sin(t, base, amp):
    return base + amp * np.sin(2.0 * math.pi * np.asarray(t, dtype=float))


def _curve_cos(t, base, amp):
    return base + amp * np.cos(2.0 * math.pi * np.asarray(t, dtype=float))


def _gamma_sin(t, amps):
    t = np.asarray(t, dtype=float)
    return np.sin(2.0 * math.pi * t)[:, None] * np.asarray(amps, dtype=float)[None, :]


def _gamma_zero(t, p):
    return np.zeros((np.shape(t)[0] if np.ndim(t) else 1, p))


@dataclass(frozen=True)
class CurveFamily:
    """Per-node curves: a group id per node plus one callable per group."""

    groups: np.ndarray  # (n,) int
    curves: tuple[Callable, ...]

    def grid(self, times: np.ndarray) -> np.ndarray:
        """(n_groups, T) values of each group curve."""
        times = np.asarray(times, dtype=float)
        return np.stack([np.broadcast_to(fn(times), times.shape) for fn in self.curves])

    def node_grid(self, times: np.ndarray) -> np.ndarray:
        """(T, n) values per node."""
        return self.grid(times)[self.groups].T

    def at(self, nodes: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Elementwise values for matched (node, time) arrays."""
        nodes = np.asarray(nodes)
        times = np.asarray(times, dtype=float)
        out = np.empty(times.shape)
        g = self.groups[nodes]
        for k, fn in enumerate(self.curves):
            m = g == k
            if m.any():
                out[m] = fn(times[m])
        return out


@dataclass(frozen=True)
class ScenarioSpec:
    """A named simulation preset with its knobs.

    Knobs: ``b`` scales degree heterogeneity in ``heterogeneity_compare``;
    ``c1``/``c2`` set the degree/homophily trend amplitudes in ``trend_test``;
    ``c`` offsets the last sender's out-degree curve in ``het_test`` and
    ``c_in`` mirrors it on the last testable receiver (node n-1, since the
    anchor's in-degree is pinned at zero).
    """

    name: str
    n_nodes: int
    seed: int
    tau: float = 1.0
    c0: float = 0.5
    b: float = 1.0
    c1: float = 0.0
    c2: float = 0.0
    c: float = 0.0
    c_in: float = 0.0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.name!r}; choose from {SCENARIOS}")
        if self.n_nodes < 2:
            raise ValidationError(f"need at least 2 nodes, got {self.n_nodes}")
        if not self.tau > 0.0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if self.c0 <= 0.0:
            raise ValidationError(f"c0 must be positive, got {self.c0}")
        for knob in ("b", "c1", "c2", "c", "c_in"):
            if getattr(self, knob) < 0.0:
                raise ValidationError(f"knob {knob} must be nonnegative")


@dataclass(frozen=True)
class TruthBundle:
    """True curves and covariates defining the intensities
    ``lambda_ij(t) = exp(alpha_i(t) + beta_j(t) + Z_ij(t)' gamma(t))``."""

    n_nodes: int
    tau: float
    p: int
    alpha: CurveFamily
    beta: CurveFamily
    gamma: Callable  # times (T,) -> (T, p)
    covariates: CovariateSet
    spec: ScenarioSpec | None = None

    def gamma_grid(self, times: np.ndarray) -> np.ndarray:
        out = np.asarray(self.gamma(np.asarray(times, dtype=float)), dtype=float)
        return out.reshape(np.shape(times)[0], self.p)

    def curve_values(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(alpha (T, n), beta (T, n), gamma (T, p)) truth on a time grid."""
        return self.alpha.node_grid(times), self.beta.node_grid(times), self.gamma_grid(times)

    def log_intensity(self, i: np.ndarray, j: np.ndarray, times: np.ndarray) -> np.ndarray:
        i = np.asarray(i)
        j = np.asarray(j)
        times = np.asarray(times, dtype=float)
        out = self.alpha.at(i, times) + self.beta.at(j, times)
        if self.p:
            seg = self.covariates.segment_index(times)
            z = self.covariates.at_events(seg, i, j)
            out = out + np.einsum("ep,ep->e", z, self.gamma_grid(times))
        return out

    def intensity(self, i, j, times) -> np.ndarray:
        return np.exp(self.log_intensity(i, j, times))


def scenario(spec: ScenarioSpec) -> TruthBundle:
    """Build the truth bundle for a preset, sampling its covariates."""
    n, tau = spec.n_nodes, spec.tau
    q = spec.c0 * math.log(n)
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, _COVARIATE_STREAM)))
    idx = np.arange(n)
    first_half = (idx + 1) * 2 < n  # 1-based i < n/2

    if spec.name == "main":
        ga = np.where(first_half, 0, 1)
        alpha = CurveFamily(
            ga,
            (partial(_curve_sin, base=2.5 - q, amp=1.0), partial(_curve_linear, base=1.5 - q, slope=0.5)),
        )
        gb = np.where(first_half, 0, 1)
        gb[n - 1] = 2  # anchored receiver
        beta = CurveFamily(
            gb,
            (
                partial(_curve_cos, base=2.5 - q, amp=1.0),
                partial(_curve_linear, base=1.5 - q, slope=0.5),
                partial(_curve_const, value=0.0),
            ),
        )
        p = 2
        gamma = partial(_gamma_sin, amps=np.array([1.0 / 3.0, 1.0 / 3.0]))
        Z = rng.standard_normal((n, n, p))
    elif spec.name == "heterogeneity_compare":
        groups = np.where(first_half, 0, 1)
        fam = CurveFamily(
            groups,
            (partial(_curve_linear, base=spec.b * (3.0 - q), slope=spec.b * 0.5), partial(_curve_const, value=0.0)),
        )
        alpha = beta = fam
        p = 1
        gamma = partial(_gamma_sin, amps=np.array([1.0 / 3.0]))
        Z = (((idx[:, None] + 1) <= 4) & ((idx[None, :] + 1) * 3 <= n)).astype(float)[:, :, None]
    elif spec.name == "trend_test":
        alpha = CurveFamily(np.zeros(n, dtype=int), (partial(_curve_sin, base=2.5 - q, amp=spec.c1),))
        gb = np.zeros(n, dtype=int)
        gb[n - 1] = 1
        beta = CurveFamily(
            gb, (partial(_curve_sin, base=2.5 - q, amp=spec.c1), partial(_curve_const, value=0.0))
        )
        p = 1
        gamma = partial(_gamma_sin, amps=np.array([spec.c2 / 3.0]))
        Z = rng.standard_normal((n, n, p))
    else:  # het_test
        ga = np.zeros(n, dtype=int)
        ga[n - 1] = 1
        alpha = CurveFamily(
            ga, (partial(_curve_linear, base=0.0, slope=0.5), partial(_curve_linear, base=spec.c, slope=0.5))
        )
        gb = np.zeros(n, dtype=int)
        gb[n - 2] = 1
        gb[n - 1] = 2
        beta = CurveFamily(
            gb,
            (
                partial(_curve_linear, base=0.0, slope=0.5),
                partial(_curve_linear, base=spec.c_in, slope=0.5),
                partial(_curve_const, value=0.0),
            ),
        )
        p = 1
        gamma = partial(_gamma_sin, amps=np.array([1.0 / 3.0]))
        Z = rng.standard_normal((n, n, p))

    Z[idx, idx, :] = 0.0
    return TruthBundle(
        n_nodes=n,
        tau=tau,
        p=p,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        covariates=CovariateSet.constant(Z, tau),
        spec=spec,
    )


def envelope_rates(truth: TruthBundle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dominating rates for every ordered pair.

    Returns (senders, receivers, rates) with pairs row-major excluding the
    diagonal; ``rates`` is ``1.05 * max`` of the intensity over the uniform
    2048-point grid on [0, tau].
    """
    n = truth.n_nodes
    off = ~np.eye(n, dtype=bool)
    iidx, jidx = np.nonzero(off)
    lam = np.empty(iidx.shape[0])
    for lo in range(0, iidx.shape[0], _PAIR_BLOCK):
        sl = slice(lo, min(lo + _PAIR_BLOCK, iidx.shape[0]))
        lam[sl] = _block_envelope(truth, iidx[sl], jidx[sl])
    return iidx, jidx, lam


def _envelope_parts(truth: TruthBundle):
    tg = np.linspace(0.0, truth.tau, ENVELOPE_GRID)
    Ag = truth.alpha.grid(tg)
    Bg = truth.beta.grid(tg)
    Gg = truth.gamma_grid(tg)
    seg = truth.covariates.segment_index(tg) if truth.p else None
    gamma_active = truth.p > 0 and bool(np.any(Gg))
    combo_max = None
    if Ag.shape[0] * Bg.shape[0] <= 64:
        combo_max = (Ag[:, None, :] + Bg[None, :, :]).max(axis=2)
    return tg, Ag, Bg, Gg, seg, gamma_active, combo_max


def _block_envelope(truth, bi, bj, parts=None):
    tg, Ag, Bg, Gg, seg, gamma_active, combo_max = parts or _envelope_parts(truth)
    cov = truth.covariates
    if gamma_active:
        zero_path = ~np.any(cov.values[:, bi, bj, :], axis=(0, 2))
    else:
        zero_path = np.ones(bi.shape[0], dtype=bool)
    if combo_max is not None and zero_path.all():
        mx = combo_max[truth.alpha.groups[bi], truth.beta.groups[bj]]
    else:
        M = Ag[truth.alpha.groups[bi]] + Bg[truth.beta.groups[bj]]
        if gamma_active:
            W = np.zeros_like(M)
            for k in range(cov.n_segments):
                cols = seg == k
                if cols.any():
                    W[:, cols] = cov.values[k, bi, bj, :] @ Gg[cols].T
            M = M + W
        mx = M.max(axis=1)
    if mx.size and float(mx.max()) > OVERFLOW_EXPONENT:
        raise NumericalError("intensity overflow while building thinning envelope")
    return ENVELOPE_MARGIN * np.exp(mx)


def simulate(truth: TruthBundle, seed: int) -> EventLog:
    """Draw one event log from the truth by per-pair thinning.

    Deterministic in ``seed``: identical seeds give byte-identical logs.
    """
    n, tau = truth.n_nodes, truth.tau
    key = np.random.SeedSequence((seed, _EVENT_STREAM)).generate_state(2, np.uint64)
    off = ~np.eye(n, dtype=bool)
    iidx, jidx = np.nonzero(off)
    n_pairs = iidx.shape[0]
    parts = _envelope_parts(truth)

    snd, rcv, tms = [], [], []
    for block, lo in enumerate(range(0, n_pairs, _PAIR_BLOCK)):
        sl = slice(lo, min(lo + _PAIR_BLOCK, n_pairs))
        bi, bj = iidx[sl], jidx[sl]
        lam_bar = _block_envelope(truth, bi, bj, parts)
        gen = np.random.Generator(
            np.random.Philox(key=key, counter=np.array([0, 0, block, 0], dtype=np.uint64))
        )
        counts = gen.poisson(lam_bar * tau)
        total = int(counts.sum())
        if total == 0:
            continue
        u = gen.random(total) * tau
        v = gen.random(total)
        ci = np.repeat(bi, counts)
        cj = np.repeat(bj, counts)
        keep = v * np.repeat(lam_bar, counts) <= truth.intensity(ci, cj, u)
        snd.append(ci[keep])
        rcv.append(cj[keep])
        tms.append(u[keep])

    if snd:
        s = np.concatenate(snd)
        r = np.concatenate(rcv)
        t = np.concatenate(tms)
    else:
        s = r = np.zeros(0, dtype=np.int64)
        t = np.zeros(0)
    return EventLog.from_arrays(s, r, t, n_nodes=n, tau=tau)


def write_truth(truth: TruthBundle, path: str) -> None:
    """Serialize a scenario-generated truth (curves by name, knobs, seed)."""
    if truth.spec is None:
        raise ValidationError("only scenario-generated truth bundles are serializable")
    s = truth.spec
    doc = {
        "scenario": s.name,
        "n": s.n_nodes,
        "seed": s.seed,
        "tau": s.tau,
        "c0": s.c0,
        "knobs": {"b": s.b, "c1": s.c1, "c2": s.c2, "c": s.c, "c_in": s.c_in},
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_truth(path: str) -> TruthBundle:
    """Rebuild a truth bundle (including covariates) from its JSON."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    try:
        spec = ScenarioSpec(
            name=doc["scenario"],
            n_nodes=int(doc["n"]),
            seed=int(doc["seed"]),
            tau=float(doc.get("tau", 1.0)),
            c0=float(doc.get("c0", 0.5)),
            **{k: float(v) for k, v in doc.get("knobs", {}).items()},
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: bad truth file: {exc}") from None
    return scenario(spec)


def shifted(truth: TruthBundle, c: float) -> TruthBundle:
    """Same intensities, reparameterized: alpha + c, beta - c (all nodes,
    including the anchored one). Useful for identifiability checks."""

    def shift_family(fam: CurveFamily, delta: float) -> CurveFamily:
        return CurveFamily(fam.groups, tuple(_Shifted(fn, delta) for fn in fam.curves))

    return replace(truth, alpha=shift_family(truth.alpha, c), beta=shift_family(truth.beta, -c), spec=None)


class _Shifted:
    """A curve plus a constant (picklable, unlike a closure)."""

    def __init__(self, fn, delta):
        self.fn = fn
        self.delta = delta

    def __call__(self, t):
        return self.fn(t) + self.delta
