import math

import numpy as np
import pytest
from scipy import integrate

from dyncox.errors import ValidationError
from dyncox.simulate import (
    ScenarioSpec,
    TruthBundle,
    envelope_rates,
    read_truth,
    scenario,
    shifted,
    simulate,
    write_truth,
)


def spec(name="main", n=10, seed=1, **kw):
    return ScenarioSpec(name=name, n_nodes=n, seed=seed, **kw)


def test_spec_validation():
    with pytest.raises(ValidationError, match="unknown scenario"):
        spec(name="bursty")
    with pytest.raises(ValidationError, match="at least 2 nodes"):
        spec(n=1)
    with pytest.raises(ValidationError, match="nonnegative"):
        spec(name="het_test", c=-0.5)
    with pytest.raises(ValidationError, match="c0"):
        ScenarioSpec(name="main", n_nodes=10, seed=0, c0=0.0)


def test_main_curve_values():
    truth = scenario(spec(n=10))
    q = 0.5 * math.log(10)
    a, b, g = truth.curve_values(np.array([0.25]))
    # 1-based nodes below n/2 follow the sine sender curve, the rest the linear one
    assert a[0, 0] == pytest.approx(2.5 - q + 1.0)
    assert a[0, 3] == pytest.approx(2.5 - q + 1.0)
    assert a[0, 4] == pytest.approx(1.5 - q + 0.125)
    assert b[0, 0] == pytest.approx(2.5 - q + math.cos(math.pi / 2), abs=1e-12)
    assert b[0, 9] == 0.0  # anchored receiver
    np.testing.assert_allclose(g[0], [1.0 / 3.0, 1.0 / 3.0])
    assert truth.p == 2


def test_het_test_offset_sits_on_last_sender():
    truth = scenario(spec(name="het_test", n=8, c=1.5))
    a, b, _ = truth.curve_values(np.array([0.4]))
    assert a[0, 0] == pytest.approx(0.2)
    assert a[0, 7] == pytest.approx(1.5 + 0.2)
    assert b[0, 7] == 0.0


def test_het_test_receiver_offset_spares_the_anchor():
    truth = scenario(spec(name="het_test", n=8, c_in=0.9))
    a, b, _ = truth.curve_values(np.array([0.4]))
    np.testing.assert_allclose(a[0], 0.2)  # sender side stays homogeneous
    assert b[0, 6] == pytest.approx(0.9 + 0.2)
    assert b[0, 5] == pytest.approx(0.2)
    assert b[0, 7] == 0.0


def test_trend_test_knobs_scale_amplitudes():
    flat = scenario(spec(name="trend_test", n=8))
    a0, _, g0 = flat.curve_values(np.array([0.25, 0.75]))
    assert a0[0, 0] == pytest.approx(a0[1, 0])  # c1 = 0: constant senders
    np.testing.assert_allclose(g0, 0.0)
    bent = scenario(spec(name="trend_test", n=8, c1=1.0, c2=2.0))
    a1, _, g1 = bent.curve_values(np.array([0.25]))
    assert a1[0, 0] - a0[0, 0] == pytest.approx(1.0)
    assert g1[0, 0] == pytest.approx(2.0 / 3.0)


def test_heterogeneity_compare_b_zero_is_homogeneous():
    truth = scenario(spec(name="heterogeneity_compare", n=10, b=0.0))
    a, b, _ = truth.curve_values(np.array([0.3, 0.8]))
    np.testing.assert_allclose(a, 0.0)
    np.testing.assert_allclose(b[:, :9], 0.0)
    # the covariate is the fixed block design, not a random draw
    z = truth.covariates.at(0.5)
    assert z[0, 1, 0] == 1.0 and z[4, 1, 0] == 0.0


def test_covariates_deterministic_in_seed():
    z1 = scenario(spec(seed=5)).covariates.at(0.2)
    z2 = scenario(spec(seed=5)).covariates.at(0.2)
    z3 = scenario(spec(seed=6)).covariates.at(0.2)
    np.testing.assert_array_equal(z1, z2)
    assert np.any(z1 != z3)
    assert np.all(z1[np.arange(10), np.arange(10)] == 0.0)


def test_simulate_byte_identical():
    truth = scenario(spec(n=33, seed=2))  # more pairs than one sampling block
    a = simulate(truth, 9)
    b = simulate(truth, 9)
    c = simulate(truth, 10)
    assert a.time.tobytes() == b.time.tobytes()
    assert a.sender.tobytes() == b.sender.tobytes()
    assert a.receiver.tobytes() == b.receiver.tobytes()
    assert a.time.tobytes() != c.time.tobytes()


def test_envelope_dominates_intensity():
    truth = scenario(spec(n=12, seed=3))
    si, ri, rates = envelope_rates(truth)
    rng = np.random.default_rng(0)
    pick = rng.integers(0, si.size, size=300)
    times = rng.uniform(0.0, truth.tau, size=300)
    lam = truth.intensity(si[pick], ri[pick], times)
    assert np.all(lam <= rates[pick] * (1.0 + 1e-9))


def test_event_total_matches_integrated_intensity():
    truth = scenario(spec(n=15, seed=4))
    total = 0.0
    for i in range(15):
        for j in range(15):
            if i == j:
                continue
            f = lambda s: float(truth.intensity(np.array([i]), np.array([j]), np.array([s]))[0])
            val, _ = integrate.quad(f, 0.0, 1.0, limit=100)
            total += val
    counts = [simulate(truth, sd).n_events for sd in range(8)]
    z = (np.mean(counts) - total) / math.sqrt(total / len(counts))
    assert abs(z) < 3.29  # level 0.001


def test_truth_round_trip(tmp_path):
    truth = scenario(spec(name="het_test", n=9, seed=12, c=0.75))
    path = str(tmp_path / "truth.json")
    write_truth(truth, path)
    back = read_truth(path)
    grid = np.linspace(0.1, 0.9, 5)
    for x, y in zip(truth.curve_values(grid), back.curve_values(grid)):
        np.testing.assert_allclose(x, y, atol=1e-12)
    np.testing.assert_array_equal(truth.covariates.values, back.covariates.values)


def test_shifted_preserves_intensities():
    truth = scenario(spec(n=6, seed=2))
    moved = shifted(truth, 0.8)
    i = np.array([0, 3, 4])
    j = np.array([5, 1, 2])
    t = np.array([0.2, 0.5, 0.9])
    np.testing.assert_allclose(moved.log_intensity(i, j, t), truth.log_intensity(i, j, t), atol=1e-12)
    a0, b0, _ = truth.curve_values(t)
    a1, b1, _ = moved.curve_values(t)
    np.testing.assert_allclose(a1 - a0, 0.8, atol=1e-12)
    np.testing.assert_allclose(b1 - b0, -0.8, atol=1e-12)
    with pytest.raises(ValidationError):
        write_truth(moved, "unused.json")
