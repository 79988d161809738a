import numpy as np
import pytest

import oracles
from dyncox.data import (
    CovariateSet,
    EventLog,
    NodeFeatureSet,
    build_pair_covariates,
    ingest_events,
    read_covariates,
    read_node_features,
    write_covariates,
    write_events,
)
from dyncox.errors import ValidationError


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def small_log():
    return EventLog.from_arrays(
        np.array([0, 0, 1, 2, 1]),
        np.array([1, 2, 0, 0, 2]),
        np.array([0.5, 0.2, 0.9, 0.4, 0.7]),
        n_nodes=3,
        tau=1.0,
    )


def test_from_arrays_sorts_and_freezes():
    log = small_log()
    assert log.n_events == 5
    assert np.all(np.diff(log.time) >= 0.0)
    with pytest.raises(ValueError):
        log.time[0] = 0.0


def test_pair_times():
    log = small_log()
    np.testing.assert_allclose(log.pair_times(0, 2), [0.2])
    np.testing.assert_allclose(log.pair_times(1, 2), [0.7])
    assert log.pair_times(2, 1).size == 0


def test_counts_total():
    tot = small_log().counts_total()
    assert tot.sum() == 5
    assert tot[0, 1] == 1 and tot[2, 0] == 1 and tot[0, 0] == 0


@pytest.mark.parametrize("squared", [False, True])
def test_count_matrix_matches_loop(squared):
    log = small_log()
    got = log.count_matrix(0.45, 0.12, squared=squared)
    np.testing.assert_allclose(got, oracles.loop_counts(log, 0.45, 0.12, squared=squared), atol=1e-12)


def test_from_arrays_rejects_bad_input():
    t = np.array([0.5])
    with pytest.raises(ValidationError, match="self-loop"):
        EventLog.from_arrays(np.array([1]), np.array([1]), t, n_nodes=3, tau=1.0)
    with pytest.raises(ValidationError, match="out of range"):
        EventLog.from_arrays(np.array([3]), np.array([0]), t, n_nodes=3, tau=1.0)
    with pytest.raises(ValidationError, match="outside"):
        EventLog.from_arrays(np.array([0]), np.array([1]), np.array([1.5]), n_nodes=3, tau=1.0)
    with pytest.raises(ValidationError, match="at least 2 nodes"):
        EventLog.from_arrays(np.array([]), np.array([]), np.array([]), n_nodes=1, tau=1.0)


def test_ingest_round_trip(tmp_path):
    log = small_log()
    path = str(tmp_path / "ev.csv")
    write_events(log, path)
    back = ingest_events(path, 3, 1.0)
    np.testing.assert_array_equal(back.sender, log.sender)
    np.testing.assert_array_equal(back.receiver, log.receiver)
    np.testing.assert_allclose(back.time, log.time)


def test_ingest_infers_node_count(tmp_path):
    path = _write(tmp_path, "ev.csv", "sender,receiver,time\n1,5,0.3\n2,1,0.6\n")
    assert ingest_events(path, None, 1.0).n_nodes == 5


def test_ingest_empty_cannot_infer(tmp_path):
    path = _write(tmp_path, "ev.csv", "sender,receiver,time\n")
    with pytest.raises(ValidationError, match="cannot infer"):
        ingest_events(path, None, 1.0)
    # with an explicit count an empty list is a valid (if useless) log
    assert ingest_events(path, 4, 1.0).n_events == 0


@pytest.mark.parametrize(
    "body,match",
    [
        ("a,b,time\n1,2,0.5\n", "expected header"),
        ("sender,receiver,time\n1,2\n", "row 2: expected 3 fields"),
        ("sender,receiver,time\n1,2,0.5\nx,2,0.5\n", "row 3"),
        ("sender,receiver,time\n0,2,0.5\n", r"row 2: node id outside"),
        ("sender,receiver,time\n1,4,0.5\n", r"row 2: node id outside \[1, 3\]"),
        ("sender,receiver,time\n2,2,0.5\n", "row 2: self-loop"),
        ("sender,receiver,time\n1,2,1.5\n", "row 2: time"),
        ("sender,receiver,time\n1,2,0\n", "row 2: time"),
    ],
)
def test_ingest_rejects_with_row_numbers(tmp_path, body, match):
    path = _write(tmp_path, "bad.csv", body)
    with pytest.raises(ValidationError, match=match):
        ingest_events(path, 3, 1.0)


def test_covariate_segments_and_lookup():
    breaks = np.array([0.0, 0.4, 1.0])
    values = np.zeros((2, 3, 3, 1))
    values[0, 0, 1, 0] = 2.0
    values[1, 0, 1, 0] = -1.0
    cov = CovariateSet.from_segments(breaks, values, n_nodes=3, p=1, tau=1.0)
    assert cov.at(0.0)[0, 1, 0] == 2.0
    assert cov.at(0.4)[0, 1, 0] == -1.0  # right-continuous
    assert cov.at(1.0)[0, 1, 0] == -1.0
    np.testing.assert_array_equal(cov.segment_index(np.array([0.1, 0.4, 0.9])), [0, 1, 1])
    with pytest.raises(ValidationError):
        cov.segment_index(np.array([1.2]))


def test_covariate_validation():
    with pytest.raises(ValidationError, match="increasing"):
        CovariateSet.from_segments(np.array([0.0, 0.5, 0.5, 1.0]), np.zeros((3, 2, 2, 0)), 2, 0, 1.0)
    with pytest.raises(ValidationError, match="span"):
        CovariateSet.from_segments(np.array([0.1, 1.0]), np.zeros((1, 2, 2, 0)), 2, 0, 1.0)
    with pytest.raises(ValidationError, match="shape"):
        CovariateSet.from_segments(np.array([0.0, 1.0]), np.zeros((2, 2, 2, 1)), 2, 1, 1.0)


def test_covariate_json_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    vals = rng.standard_normal((2, 4, 4, 2))
    vals[:, np.arange(4), np.arange(4), :] = 0.0
    vals[:, 1, 2, :] = 0.0  # an identically-zero path should survive omission
    cov = CovariateSet.from_segments(np.array([0.0, 0.6, 1.0]), vals, n_nodes=4, p=2, tau=1.0)
    path = str(tmp_path / "cov.json")
    write_covariates(cov, path)
    back = read_covariates(path)
    assert back.n_nodes == 4 and back.p == 2 and back.tau == 1.0
    for t in (0.1, 0.7):
        np.testing.assert_allclose(back.at(t), cov.at(t), atol=1e-12)


def test_read_covariates_merges_unequal_breaks(tmp_path):
    doc = {
        "n": 3,
        "p": 1,
        "tau": 1.0,
        "pairs": [
            {"sender": 1, "receiver": 2, "breaks": [0.0, 0.5, 1.0], "values": [[1.0], [2.0]]},
            {"sender": 2, "receiver": 1, "breaks": [0.0, 0.25, 1.0], "values": [[5.0], [6.0]]},
        ],
    }
    import json

    path = _write(tmp_path, "cov.json", json.dumps(doc))
    cov = read_covariates(path)
    assert cov.at(0.3)[0, 1, 0] == 1.0 and cov.at(0.6)[0, 1, 0] == 2.0
    assert cov.at(0.1)[1, 0, 0] == 5.0 and cov.at(0.3)[1, 0, 0] == 6.0
    assert cov.at(0.3)[0, 2, 0] == 0.0


def test_read_covariates_rejects_bad_docs(tmp_path):
    path = _write(tmp_path, "bad.json", "{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        read_covariates(path)
    path = _write(tmp_path, "missing.json", '{"n": 3, "p": 1, "tau": 1.0}')
    with pytest.raises(ValidationError, match="missing key"):
        read_covariates(path)


def test_node_features_and_rules(tmp_path):
    path = _write(tmp_path, "feat.csv", "node,x,y\n1,1,0\n3,0,2\n2,1,1\n")
    feats = read_node_features(path, 3)
    assert feats.names == ("x", "y")
    np.testing.assert_allclose(feats.features, [[1, 0], [1, 1], [0, 2]])

    inner = build_pair_covariates(feats, "inner_product", 1.0)
    assert inner.p == 1
    assert inner.at(0.5)[0, 1, 0] == pytest.approx(1.0)
    assert inner.at(0.5)[1, 2, 0] == pytest.approx(2.0)

    dist = build_pair_covariates(feats, "l2_distance", 1.0)
    assert dist.at(0.5)[0, 2, 0] == pytest.approx(np.sqrt(5.0))

    kron = build_pair_covariates(feats, "kronecker", 1.0)
    assert kron.p == 4
    # component a*d + b is X_i[a] * X_j[b]
    assert kron.at(0.5)[0, 1, 1] == pytest.approx(1.0 * 1.0)
    assert kron.at(0.5)[1, 2, 3] == pytest.approx(1.0 * 2.0)

    with pytest.raises(ValidationError):
        build_pair_covariates(feats, "hadamard", 1.0)


def test_node_features_rejections(tmp_path):
    path = _write(tmp_path, "f.csv", "node,x\n1,0.5\n1,0.7\n2,0.1\n")
    with pytest.raises(ValidationError, match="duplicate node 1"):
        read_node_features(path, 2)
    path = _write(tmp_path, "g.csv", "node,x\n1,0.5\n")
    with pytest.raises(ValidationError, match="node 2 has no feature row"):
        read_node_features(path, 2)
