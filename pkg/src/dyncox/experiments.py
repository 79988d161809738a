"""Replicated simulation studies over the scenario presets.

Every replicate derives its seed from the study seed, the design cell, and
the replicate index, so studies can be rerun in any order (or restricted to
one cell) without changing results. Outputs are plain row dicts; the CLI
writes them as CSV next to a manifest that fingerprints inputs and outputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import replace

import numpy as np

from . import __version__
from .boottest import TestSpec, run_test
from .errors import ValidationError
from .fitting import FitConfig, fit_grid, fit_homogeneous
from .inference import confidence_intervals
from .ioutil import atomic_write_text, write_csv
from .simulate import ScenarioSpec, scenario, simulate

_MISE, _COVER, _BIAS, _POWER = 1, 2, 3, 4

POWER_SCENARIOS = {
    "trend-eta": ("trend_test", "c1"),
    "trend-gamma": ("trend_test", "c2"),
    "het-alpha": ("het_test", "c"),
    "het-beta": ("het_test", "c_in"),
}

DEFAULT_KNOBS = {
    "trend-eta": (0.0, 0.5, 1.0),
    "trend-gamma": (0.0, 1.0, 2.0),
    "het-alpha": (0.0, 0.75, 1.5),
    "het-beta": (0.0, 0.75, 1.5),
}


def replicate_seed(base: int, *parts: int) -> int:
    """A stable per-replicate seed from the study seed and cell indices."""
    return int(np.random.SeedSequence((base,) + parts).generate_state(1, np.uint64)[0])


def _simulate_cell(name: str, n: int, seed: int, **knobs):
    spec = ScenarioSpec(name, n, seed=seed, **knobs)
    truth = scenario(spec)
    log = simulate(truth, seed)
    return truth, log


def _interior(grid: np.ndarray, values: np.ndarray) -> float:
    """Integrated squared error by the trapezoid rule over the grid span."""
    return float(np.trapezoid(values, grid))


def run_mise(
    n_values=(100,),
    reps: int = 100,
    seed: int = 0,
    config: FitConfig | None = None,
) -> list[dict]:
    """Integrated squared error of fitted curves under the main scenario.

    Tracks one sender and one receiver curve from each degree group plus
    every homophily component.
    """
    rows = []
    for n in n_values:
        cfg = (config or FitConfig()).resolve(n, 1.0)
        half = n // 2  # 0-based index of a second-group node
        names = ["alpha_1", f"alpha_{half + 1}", "beta_1", f"beta_{half + 1}", "gamma_1", "gamma_2"]
        ises = np.empty((reps, len(names)))
        for rep in range(reps):
            truth, log = _simulate_cell("main", n, replicate_seed(seed, _MISE, n, rep))
            fit = fit_grid(log, truth.covariates, cfg)
            ta, tb, tg = truth.curve_values(fit.grid)
            err = [
                fit.alpha[:, 0] - ta[:, 0],
                fit.alpha[:, half] - ta[:, half],
                fit.beta[:, 0] - tb[:, 0],
                fit.beta[:, half] - tb[:, half],
                fit.gamma[:, 0] - tg[:, 0],
                fit.gamma[:, 1] - tg[:, 1],
            ]
            ises[rep] = [_interior(fit.grid, e**2) for e in err]
        for k, name in enumerate(names):
            col = ises[:, k]
            rows.append(
                {
                    "scenario": "main",
                    "n": n,
                    "reps": reps,
                    "coordinate": name,
                    "t_min": float(cfg.grid[0]),
                    "t_max": float(cfg.grid[-1]),
                    "mise": float(col.mean()),
                    "mc_se": float(col.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0,
                }
            )
    return rows


def run_coverage(
    n_values=(100,),
    reps: int = 200,
    t_values=(0.4, 0.6, 0.8),
    seed: int = 0,
    level: float = 0.95,
    config: FitConfig | None = None,
) -> list[dict]:
    """Empirical coverage and length of pointwise intervals (main scenario)."""
    t_values = tuple(float(t) for t in t_values)
    rows = []
    for n in n_values:
        cfg = replace(config or FitConfig(), grid=np.asarray(t_values)).resolve(n, 1.0)
        half = n // 2
        hits = {}
        lens = {}
        for rep in range(reps):
            truth, log = _simulate_cell("main", n, replicate_seed(seed, _COVER, n, rep))
            fit = fit_grid(log, truth.covariates, cfg)
            ci = confidence_intervals(fit, log, truth.covariates, level=level)
            ta, tb, tg = truth.curve_values(fit.grid)
            for g, t in enumerate(t_values):
                for name, true_val, lo, hi in (
                    ("alpha_1", ta[g, 0], ci.eta_lo[g, 0], ci.eta_hi[g, 0]),
                    (f"alpha_{half + 1}", ta[g, half], ci.eta_lo[g, half], ci.eta_hi[g, half]),
                    ("beta_1", tb[g, 0], ci.eta_lo[g, n], ci.eta_hi[g, n]),
                    (f"beta_{half + 1}", tb[g, half], ci.eta_lo[g, n + half], ci.eta_hi[g, n + half]),
                    ("gamma_1", tg[g, 0], ci.gamma_lo[g, 0], ci.gamma_hi[g, 0]),
                ):
                    ok = lo <= true_val <= hi if np.isfinite(lo) and np.isfinite(hi) else np.nan
                    hits.setdefault((name, t), []).append(ok)
                    lens.setdefault((name, t), []).append(hi - lo)
        for (name, t), hh in hits.items():
            hh = np.asarray(hh, dtype=float)
            ll = np.asarray(lens[(name, t)], dtype=float)
            rows.append(
                {
                    "scenario": "main",
                    "n": n,
                    "t": t,
                    "coordinate": name,
                    "level": level,
                    "reps": reps,
                    "coverage": float(np.nanmean(hh)),
                    "mean_length": float(np.nanmean(ll)),
                    "mc_se": float(np.nanstd(hh, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0,
                }
            )
    return rows


def run_bias_compare(
    b_values=(0.0, 1.0 / 3.0, 0.5, 1.0),
    n: int = 200,
    reps: int = 100,
    seed: int = 0,
    level: float = 0.95,
    config: FitConfig | None = None,
) -> list[dict]:
    """Degree-corrected versus pooled homophily estimates as heterogeneity grows.

    Reports, per (b, t): the truth, each estimator's mean and central 95
    percent band across replicates, and the average model interval of the
    degree-corrected fit.
    """
    rows = []
    for kb, b in enumerate(b_values):
        cfg = (config or FitConfig()).resolve(n, 1.0)
        G = cfg.grid.size
        dc = np.full((reps, G), np.nan)
        hom = np.full((reps, G), np.nan)
        ci_lo = np.full((reps, G), np.nan)
        ci_hi = np.full((reps, G), np.nan)
        truth = None
        for rep in range(reps):
            truth, log = _simulate_cell(
                "heterogeneity_compare", n, replicate_seed(seed, _BIAS, kb, rep), b=b
            )
            fit = fit_grid(log, truth.covariates, cfg)
            dc[rep] = fit.gamma[:, 0]
            ci = confidence_intervals(fit, log, truth.covariates, level=level)
            ci_lo[rep] = ci.gamma_lo[:, 0]
            ci_hi[rep] = ci.gamma_hi[:, 0]
            hom[rep] = fit_homogeneous(log, truth.covariates, cfg).gamma[:, 0]
        tg = truth.gamma_grid(cfg.grid)[:, 0]
        for g, t in enumerate(cfg.grid):
            dc_band = np.nanpercentile(dc[:, g], [2.5, 97.5])
            hom_band = np.nanpercentile(hom[:, g], [2.5, 97.5])
            rows.append(
                {
                    "scenario": "heterogeneity_compare",
                    "n": n,
                    "b": b,
                    "t": float(t),
                    "reps": reps,
                    "truth": float(tg[g]),
                    "dc_mean": float(np.nanmean(dc[:, g])),
                    "dc_band_lo": float(dc_band[0]),
                    "dc_band_hi": float(dc_band[1]),
                    "dc_ci_lo": float(np.nanmean(ci_lo[:, g])),
                    "dc_ci_hi": float(np.nanmean(ci_hi[:, g])),
                    "hom_mean": float(np.nanmean(hom[:, g])),
                    "hom_band_lo": float(hom_band[0]),
                    "hom_band_hi": float(hom_band[1]),
                }
            )
    return rows


def run_power(
    kind: str,
    knobs=None,
    n_values=(100,),
    reps: int = 200,
    resamples: int = 200,
    seed: int = 0,
    level: float = 0.05,
    config: FitConfig | None = None,
) -> list[dict]:
    """Rejection rate of one test across its scenario's signal strengths.

    Knob zero is the null, so the first row of each size-one sweep doubles as
    an empirical size check.
    """
    if kind not in POWER_SCENARIOS:
        raise ValidationError(f"unknown test {kind!r}; choose from {tuple(POWER_SCENARIOS)}")
    scen, knob_name = POWER_SCENARIOS[kind]
    knobs = tuple(float(k) for k in (knobs if knobs is not None else DEFAULT_KNOBS[kind]))
    rows = []
    for n in n_values:
        for kk, knob in enumerate(knobs):
            rejects = np.zeros(reps, dtype=bool)
            for rep in range(reps):
                rseed = replicate_seed(seed, _POWER, n, kk, rep)
                truth, log = _simulate_cell(scen, n, rseed, **{knob_name: knob})
                spec = TestSpec(kind=kind, level=level, resamples=resamples, seed=rseed)
                rejects[rep] = run_test(log, truth.covariates, spec, config).reject
            rate = float(rejects.mean())
            rows.append(
                {
                    "test": kind,
                    "scenario": scen,
                    "n": n,
                    "knob": knob,
                    "level": level,
                    "reps": reps,
                    "resamples": resamples,
                    "rate": rate,
                    "mc_se": float(np.sqrt(max(rate * (1.0 - rate), 1e-12) / reps)),
                }
            )
    return rows


def write_rows(path: str, rows: list[dict]) -> None:
    """Write row dicts as CSV, columns in first-row order."""
    if not rows:
        raise ValidationError("no rows to write")
    cols = list(rows[0])
    write_csv(path, tuple(cols), [tuple(r[c] for c in cols) for r in rows])


def write_manifest(
    path: str,
    experiment: str,
    params: dict,
    outputs: list[str],
    elapsed_seconds: float | None = None,
) -> None:
    """Record what was run and fingerprints of what it produced.

    The data files hashed in ``outputs`` are reproducible bit-for-bit from
    the params; ``elapsed_seconds`` is the only run-specific field.
    """
    entries = []
    for out in outputs:
        with open(out, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        entries.append({"file": out.rsplit("/", 1)[-1], "sha256": digest})
    doc = {
        "experiment": experiment,
        "params": params,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "outputs": entries,
    }
    if elapsed_seconds is not None:
        doc["elapsed_seconds"] = round(float(elapsed_seconds), 3)
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
