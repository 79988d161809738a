"""Event logs, covariate paths, node features, and their file formats.

An :class:`EventLog` holds timestamped directed interactions on ``n`` nodes
over an observation window ``(0, tau]``. A :class:`CovariateSet` holds one
piecewise-constant R^p path per ordered pair. Covariates may also be derived
from static node features through a pairing rule (:func:`build_pair_covariates`).

File formats
------------
* Events: CSV with header ``sender,receiver,time``; node ids are 1-based.
* Covariates: JSON ``{"n": ..., "p": ..., "tau": ..., "pairs": [...]}`` where
  each pair entry carries its own ``breaks``/``values`` arrays; pairs omitted
  from the list have an identically-zero path.
* Node features: CSV with header ``node,<name1>,<name2>,...``; one row per node.

Internally all pair paths share one break grid (the union of the per-pair
breaks), which is exact for piecewise-constant paths and keeps the kernel
integrals vectorized.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .ioutil import atomic_write_text, fmt
from .kernels import GAUSSIAN, kernel_weight, support_radius, validate_kernel

EVENT_HEADER = ("sender", "receiver", "time")

PAIR_RULES = ("inner_product", "l2_distance", "kronecker")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EventLog:
    """Immutable, time-sorted directed interaction events.

    Attributes
    ----------
    n_nodes : int
    tau : float
        Right end of the observation window.
    sender, receiver : (E,) int arrays, 0-based.
    time : (E,) float array, ascending; ties broken by (sender, receiver).
    """

    n_nodes: int
    tau: float
    sender: np.ndarray
    receiver: np.ndarray
    time: np.ndarray
    # CSR layout over row-major pair ids, for per-pair access.
    pair_ptr: np.ndarray = field(repr=False)
    pair_order: np.ndarray = field(repr=False)

    @property
    def n_events(self) -> int:
        return int(self.time.shape[0])

    @classmethod
    def from_arrays(
        cls,
        sender: np.ndarray,
        receiver: np.ndarray,
        time: np.ndarray,
        n_nodes: int,
        tau: float,
        one_based: bool = False,
    ) -> "EventLog":
        """Validate, sort, and freeze raw event arrays."""
        if n_nodes < 2:
            raise ValidationError(f"need at least 2 nodes, got {n_nodes}")
        if not tau > 0.0:
            raise ValidationError(f"tau must be positive, got {tau}")
        s = np.asarray(sender, dtype=np.int64)
        r = np.asarray(receiver, dtype=np.int64)
        t = np.asarray(time, dtype=float)
        if not (s.shape == r.shape == t.shape) or s.ndim != 1:
            raise ValidationError("sender, receiver, time must be equal-length 1-d arrays")
        if one_based:
            s = s - 1
            r = r - 1
        if s.size:
            if s.min() < 0 or s.max() >= n_nodes or r.min() < 0 or r.max() >= n_nodes:
                raise ValidationError("node id out of range")
            if np.any(s == r):
                k = int(np.nonzero(s == r)[0][0])
                raise ValidationError(f"self-loop at event {k}: node {s[k] + 1}")
            if np.any(t <= 0.0) or np.any(t > tau):
                k = int(np.nonzero((t <= 0.0) | (t > tau))[0][0])
                raise ValidationError(f"event time {t[k]} outside (0, {tau}] at event {k}")
        order = np.lexsort((r, s, t))
        s, r, t = s[order], r[order], t[order]
        pair_id = s * n_nodes + r
        pair_order = np.argsort(pair_id, kind="stable")
        ptr = np.searchsorted(pair_id[pair_order], np.arange(n_nodes * n_nodes + 1))
        return cls(
            n_nodes=n_nodes,
            tau=float(tau),
            sender=_frozen(s),
            receiver=_frozen(r),
            time=_frozen(t),
            pair_ptr=_frozen(ptr),
            pair_order=_frozen(pair_order),
        )

    def pair_times(self, i: int, j: int) -> np.ndarray:
        """Event times of the ordered pair (i, j), 0-based, ascending."""
        pid = i * self.n_nodes + j
        sl = self.pair_order[self.pair_ptr[pid] : self.pair_ptr[pid + 1]]
        return np.sort(self.time[sl])

    def count_matrix(
        self, t: float, h: float, kernel: str = GAUSSIAN, squared: bool = False
    ) -> np.ndarray:
        """(n, n) matrix of kernel-weighted event counts around time t.

        Entry (i, j) is sum over events of pair (i, j) of K_h(t_e - t),
        or of K_h(t_e - t)^2 with ``squared=True``. Events outside the
        numerical support of the kernel are skipped.
        """
        n = self.n_nodes
        rad = support_radius(h, kernel)
        lo = np.searchsorted(self.time, t - rad, side="left")
        hi = np.searchsorted(self.time, t + rad, side="right")
        if hi <= lo:
            return np.zeros((n, n))
        w = kernel_weight(self.time[lo:hi] - t, h, kernel)
        if squared:
            w = w * w
        pid = self.sender[lo:hi] * n + self.receiver[lo:hi]
        return np.bincount(pid, weights=w, minlength=n * n).reshape(n, n)

    def counts_total(self) -> np.ndarray:
        """(n, n) matrix of raw event counts."""
        n = self.n_nodes
        pid = self.sender * n + self.receiver
        return np.bincount(pid, weights=None, minlength=n * n).reshape(n, n).astype(float)


def ingest_events(path: str, n_nodes: int | None, tau: float) -> EventLog:
    """Read an event CSV (header ``sender,receiver,time``, 1-based ids).

    ``n_nodes=None`` infers the node count as the largest id seen. Raises
    :class:`ValidationError` with the offending row number on: bad header,
    non-numeric fields, ids outside [1, n], self-loops, or times outside
    (0, tau].
    """
    senders: list[int] = []
    receivers: list[int] = []
    times: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [c.strip().lstrip("﻿") for c in header]
        if tuple(header) != EVENT_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(EVENT_HEADER)!r}, got {','.join(header)!r}"
            )
        for rownum, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: row {rownum}: expected 3 fields, got {len(row)}")
            try:
                i = int(row[0])
                j = int(row[1])
                t = float(row[2])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {rownum}: {exc}") from None
            if i < 1 or j < 1 or (n_nodes is not None and max(i, j) > n_nodes):
                bound = n_nodes if n_nodes is not None else "n"
                raise ValidationError(f"{path}: row {rownum}: node id outside [1, {bound}]")
            if i == j:
                raise ValidationError(f"{path}: row {rownum}: self-loop on node {i}")
            if not (0.0 < t <= tau):
                raise ValidationError(f"{path}: row {rownum}: time {t} outside (0, {tau}]")
            senders.append(i)
            receivers.append(j)
            times.append(t)
    if n_nodes is None:
        if not senders:
            raise ValidationError(f"{path}: cannot infer the node count from an empty event list")
        n_nodes = max(max(senders), max(receivers))
    return EventLog.from_arrays(
        np.array(senders, dtype=np.int64),
        np.array(receivers, dtype=np.int64),
        np.array(times, dtype=float),
        n_nodes=n_nodes,
        tau=tau,
        one_based=True,
    )


def write_events(log: EventLog, path: str) -> None:
    """Write an event CSV with 1-based ids (inverse of :func:`ingest_events`)."""
    lines = [",".join(EVENT_HEADER)]
    for i, j, t in zip(log.sender, log.receiver, log.time):
        lines.append(f"{i + 1},{j + 1},{fmt(float(t))}")
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class CovariateSet:
    """Piecewise-constant covariate paths for every ordered pair.

    All pairs share one break grid; ``values[k, i, j]`` is Z_ij on
    [breaks[k], breaks[k+1]). Paths are right-continuous and the diagonal
    is ignored. ``p`` may be zero (no covariates).
    """

    n_nodes: int
    p: int
    tau: float
    breaks: np.ndarray  # (K+1,), breaks[0] = 0, breaks[-1] = tau
    values: np.ndarray  # (K, n, n, p)

    @property
    def n_segments(self) -> int:
        return int(self.breaks.shape[0] - 1)

    @classmethod
    def constant(cls, values: np.ndarray, tau: float) -> "CovariateSet":
        """Time-constant covariates from an (n, n, p) array."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[0] != values.shape[1]:
            raise ValidationError(f"expected (n, n, p) array, got shape {values.shape}")
        n, _, p = values.shape
        return cls.from_segments(np.array([0.0, tau]), values[None, ...], n_nodes=n, p=p, tau=tau)

    @classmethod
    def empty(cls, n_nodes: int, tau: float) -> "CovariateSet":
        """No covariates (p = 0)."""
        return cls.constant(np.zeros((n_nodes, n_nodes, 0)), tau)

    @classmethod
    def from_segments(
        cls, breaks: np.ndarray, values: np.ndarray, n_nodes: int, p: int, tau: float
    ) -> "CovariateSet":
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        if not tau > 0.0:
            raise ValidationError(f"tau must be positive, got {tau}")
        if breaks.ndim != 1 or breaks.shape[0] < 2:
            raise ValidationError("breaks must hold at least two edges")
        if abs(breaks[0]) > 1e-12 or abs(breaks[-1] - tau) > 1e-12:
            raise ValidationError(f"breaks must span [0, {tau}], got [{breaks[0]}, {breaks[-1]}]")
        if np.any(np.diff(breaks) <= 0.0):
            raise ValidationError("breaks must be strictly increasing")
        expect = (breaks.shape[0] - 1, n_nodes, n_nodes, p)
        if values.shape != expect:
            raise ValidationError(f"values shape {values.shape} != expected {expect}")
        breaks = breaks.copy()
        breaks[0] = 0.0
        breaks[-1] = tau
        return cls(n_nodes=n_nodes, p=p, tau=float(tau), breaks=_frozen(breaks), values=_frozen(values))

    def segment_index(self, t) -> np.ndarray:
        """Index of the segment containing each time (right-continuous;
        t = tau falls in the last segment)."""
        t = np.asarray(t, dtype=float)
        if t.size and (float(np.min(t)) < 0.0 or float(np.max(t)) > self.tau):
            raise ValidationError(f"time outside [0, {self.tau}]")
        idx = np.searchsorted(self.breaks, t, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def at(self, t: float) -> np.ndarray:
        """(n, n, p) covariate values at time t."""
        return self.values[int(self.segment_index(t))]

    def at_events(self, seg_idx: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """(m, p) values for given segment indices and pair indices."""
        return self.values[seg_idx, i, j, :]

    def pair_path(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(breaks, (K, p) values) for one ordered pair."""
        return self.breaks, self.values[:, i, j, :]


def covariates_to_json(cov: CovariateSet) -> dict:
    """JSON-ready dict with per-pair break/value arrays (zero paths omitted)."""
    pairs = []
    br = [float(x) for x in cov.breaks]
    for i in range(cov.n_nodes):
        for j in range(cov.n_nodes):
            if i == j:
                continue
            vals = cov.values[:, i, j, :]
            if not np.any(vals):
                continue
            pairs.append(
                {
                    "sender": i + 1,
                    "receiver": j + 1,
                    "breaks": br,
                    "values": [[float(v) for v in row] for row in vals],
                }
            )
    return {"n": cov.n_nodes, "p": cov.p, "tau": cov.tau, "pairs": pairs}


def write_covariates(cov: CovariateSet, path: str) -> None:
    atomic_write_text(path, json.dumps(covariates_to_json(cov)))


def read_covariates(path: str) -> CovariateSet:
    """Read the per-pair covariate JSON; per-pair breaks are merged onto
    their union grid (exact for piecewise-constant paths)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    for key in ("n", "p", "tau", "pairs"):
        if key not in doc:
            raise ValidationError(f"{path}: missing key {key!r}")
    n, p, tau = int(doc["n"]), int(doc["p"]), float(doc["tau"])
    if n < 2 or p < 0 or tau <= 0.0:
        raise ValidationError(f"{path}: bad dimensions n={n} p={p} tau={tau}")

    edge_set = {0.0, tau}
    parsed = []
    for k, entry in enumerate(doc["pairs"]):
        try:
            i, j = int(entry["sender"]) - 1, int(entry["receiver"]) - 1
            breaks = np.asarray(entry["breaks"], dtype=float)
            vals = np.asarray(entry["values"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: pairs[{k}]: {exc}") from None
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ValidationError(f"{path}: pairs[{k}]: bad pair ({i + 1}, {j + 1})")
        if breaks.ndim != 1 or abs(breaks[0]) > 1e-12 or abs(breaks[-1] - tau) > 1e-12:
            raise ValidationError(f"{path}: pairs[{k}]: breaks must span [0, {tau}]")
        if np.any(np.diff(breaks) <= 0.0):
            raise ValidationError(f"{path}: pairs[{k}]: breaks must be increasing")
        if vals.ndim == 1 and p == 1:
            vals = vals[:, None]
        if vals.shape != (breaks.shape[0] - 1, p):
            raise ValidationError(
                f"{path}: pairs[{k}]: values shape {vals.shape} != ({breaks.shape[0] - 1}, {p})"
            )
        edge_set.update(float(x) for x in breaks[1:-1])
        parsed.append((i, j, breaks, vals))

    union = np.array(sorted(edge_set))
    union[0], union[-1] = 0.0, tau
    values = np.zeros((union.shape[0] - 1, n, n, p))
    left = union[:-1]
    for i, j, breaks, vals in parsed:
        seg = np.clip(np.searchsorted(breaks, left, side="right") - 1, 0, vals.shape[0] - 1)
        values[:, i, j, :] = vals[seg]
    return CovariateSet.from_segments(union, values, n_nodes=n, p=p, tau=tau)


@dataclass(frozen=True)
class NodeFeatureSet:
    """Static per-node feature vectors."""

    n_nodes: int
    features: np.ndarray  # (n, d)
    names: tuple[str, ...]

    @property
    def d(self) -> int:
        return int(self.features.shape[1])


def read_node_features(path: str, n_nodes: int) -> NodeFeatureSet:
    """Read a node-feature CSV with header ``node,<name1>,...`` (1-based ids,
    every node exactly once)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip().lstrip("﻿") for c in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if not header or header[0] != "node" or len(header) < 2:
            raise ValidationError(f"{path}: expected header 'node,<feature names>'")
        names = tuple(header[1:])
        feats = np.full((n_nodes, len(names)), np.nan)
        for rownum, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: row {rownum}: expected {len(header)} fields")
            try:
                node = int(row[0])
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path}: row {rownum}: {exc}") from None
            if not (1 <= node <= n_nodes):
                raise ValidationError(f"{path}: row {rownum}: node id outside [1, {n_nodes}]")
            if not np.all(np.isnan(feats[node - 1])):
                raise ValidationError(f"{path}: row {rownum}: duplicate node {node}")
            feats[node - 1] = vals
    if np.any(np.isnan(feats)):
        missing = int(np.nonzero(np.isnan(feats).any(axis=1))[0][0]) + 1
        raise ValidationError(f"{path}: node {missing} has no feature row")
    return NodeFeatureSet(n_nodes=n_nodes, features=_frozen(feats), names=names)


def build_pair_covariates(features: NodeFeatureSet, rule: str, tau: float) -> CovariateSet:
    """Derive constant pair covariates from node features.

    Rules: ``inner_product`` (p=1, <X_i, X_j>), ``l2_distance`` (p=1,
    ||X_i - X_j||_2), ``kronecker`` (p=d^2, X_i tensor X_j in row-major
    order, i.e. component a*d+b equals X_i[a] * X_j[b]).
    """
    X = features.features
    n, d = X.shape
    if rule == "inner_product":
        Z = (X @ X.T)[:, :, None]
    elif rule == "l2_distance":
        diff = X[:, None, :] - X[None, :, :]
        Z = np.sqrt((diff * diff).sum(axis=2))[:, :, None]
    elif rule == "kronecker":
        Z = np.einsum("ia,jb->ijab", X, X).reshape(n, n, d * d)
    else:
        raise ValidationError(f"unknown pairing rule {rule!r}; choose from {PAIR_RULES}")
    Z = Z.copy()
    Z[np.arange(n), np.arange(n), :] = 0.0
    return CovariateSet.constant(Z, tau)
