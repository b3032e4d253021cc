import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedgcc.data import WindowedDataset
from fedgcc.fedcore import RoundRecord
from fedgcc.model import MlpModel
from fedgcc.report import (HISTORY_HEADER, SUMMARY_KEYS, MetricsSnapshot, evaluate, history_csv, mae,
                           pooled_predictions, r2_score, rmse, summary_dict, write_comparison, write_correlation,
                           write_results)


@pytest.mark.parametrize("pred,truth,expected", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([1.0, 1.0], [0.0, 2.0], 1.0),
    ([2.0, 0.0], [0.0, 0.0], np.sqrt(2.0)),
])
def test_rmse_examples(pred, truth, expected):
    assert rmse(pred, truth) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("pred,truth,expected", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([1.0, 1.0], [0.0, 2.0], 1.0),
    ([2.0, 0.0], [0.0, 0.0], 1.0),
])
def test_mae_examples(pred, truth, expected):
    assert mae(pred, truth) == expected


def test_r2_examples():
    assert r2_score([1.0, 3.0], [1.0, 3.0]) == 1.0
    assert r2_score([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == 0.0
    assert r2_score([0.0, 0.0], [-1.0, 1.0]) == 0.0
    with pytest.raises(ValueError):
        r2_score([1.0, 1.0], [2.0, 2.0])
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-50, 50)), arrays(np.float64, 8, elements=st.floats(-50, 50)))
def test_mae_never_exceeds_rmse(a, b):
    assert mae(a, b) <= rmse(a, b) + 1e-12


def _constant_model(value):
    return MlpModel((2, 1), np.array([0.0, 0.0, value]))


def test_pooled_metrics_across_clients():
    sets = [WindowedDataset(np.zeros((2, 2)), np.array([1.0, 1.0]), 2),
            WindowedDataset(np.zeros((0, 2)), np.zeros(0), 2),
            WindowedDataset(np.zeros((1, 2)), np.array([4.0]), 2)]
    pred, truth = pooled_predictions(_constant_model(1.0), sets)
    assert list(truth) == [1.0, 1.0, 4.0]
    m = evaluate(_constant_model(1.0), sets)
    assert m.n_samples == 3
    assert m.rmse == pytest.approx(np.sqrt(3.0))
    assert m.mae == 1.0


def test_memorized_single_sample():
    sets = [WindowedDataset(np.zeros((1, 2)), np.array([0.5]), 2)]
    pred, truth = pooled_predictions(_constant_model(0.5), sets)
    assert rmse(pred, truth) == 0.0 and mae(pred, truth) == 0.0


def _history(n):
    return [RoundRecord(t, 1.0 / (t + 1), 100 * (t + 1), 400 * (t + 1), 0.5 + 0.1 / (t + 1)) for t in range(n)]


CONFIG = dict(algorithm="fedgcc", strategy="k-relevant", gamma=0.01, k=4, delta=0.5, seed=0, rounds=200)


def test_history_and_summary_files(tmp_path):
    metrics = MetricsSnapshot(0.2, 0.15, 0.8, 100)
    s_path, h_path = write_results(_history(200), metrics, CONFIG, tmp_path)
    lines = h_path.read_text().split("\n")
    assert lines[0] == ",".join(HISTORY_HEADER)
    assert len([x for x in lines[1:] if x]) == 200
    assert b"\r" not in h_path.read_bytes()
    summary = json.loads(s_path.read_text())
    assert list(summary)[:len(SUMMARY_KEYS)] == list(SUMMARY_KEYS)
    assert summary["uplink_bytes"] == 20_000
    assert summary["config"] == CONFIG
    first = (s_path.read_bytes(), h_path.read_bytes())
    write_results(_history(200), metrics, CONFIG, tmp_path / "again")
    assert first == ((tmp_path / "again" / "summary.json").read_bytes(),
                     (tmp_path / "again" / "history.csv").read_bytes())


def test_history_floats_roundtrip_exactly():
    rec = RoundRecord(0, 0.1 + 0.2, 8, 16, None)
    row = history_csv([rec]).split("\n")[1].split(",")
    assert float(row[1]) == 0.1 + 0.2
    assert row[4] == ""


def test_summary_without_history():
    s = summary_dict(MetricsSnapshot(1.0, 1.0, 0.0, 3), [], CONFIG)
    assert s["uplink_bytes"] == 0 and s["downlink_bytes"] == 0


def test_correlation_and_comparison_writers(tmp_path):
    write_correlation(np.array([[1.0, -0.25], [-0.25, 1.0]]), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "1.0,-0.25\n-0.25,1.0\n"
    write_comparison([{"run": "fedavg", "rmse": 0.5, "mu": ""}], tmp_path / "cmp.csv", ("run", "rmse", "mu"))
    assert (tmp_path / "cmp.csv").read_text() == "run,rmse,mu\nfedavg,0.5,\n"
