"""End-to-end smoke tests for the compiled extension."""

import math
import statistics

import pytest

import leakgnn


def test_version():
    assert leakgnn.__version__ == "0.1.0"


def test_fuzzy_memberships_basics():
    low, med, high = leakgnn.fuzzy_memberships(0.0, 10.0, 5.0)
    assert med == pytest.approx(1.0)
    # The terms are smooth, so neighbours keep a small degree at each center.
    assert low == pytest.approx(0.0625)
    assert high == pytest.approx(0.0625)
    # Adjacent terms cross at one half, and every degree sits in [0, 1].
    low, med, _ = leakgnn.fuzzy_memberships(0.0, 10.0, 2.5)
    assert low == pytest.approx(0.5)
    assert med == pytest.approx(0.5)
    for x in (-3.0, 0.0, 1.7, 9.9, 14.0):
        assert all(0.0 <= d <= 1.0 for d in leakgnn.fuzzy_memberships(0.0, 10.0, x))


def test_window_stats_matches_statistics_module():
    values = [3.5, -1.0, 4.25, 0.5, 2.0]
    stats = leakgnn.window_stats(values)
    assert stats["mean"] == pytest.approx(statistics.fmean(values))
    assert stats["stddev"] == pytest.approx(statistics.pstdev(values))
    assert stats["min"] == min(values)
    assert stats["max"] == max(values)
    with pytest.raises(ValueError):
        leakgnn.window_stats([])


def test_synth_train_evaluate_explain_roundtrip(tmp_path):
    corpus = leakgnn.synth(
        out=str(tmp_path / "corpus"),
        scenarios=8,
        steps=48,
        noise=0.05,
        leak_rate=0.6,
        seed=7,
    )
    assert corpus["scenarios"] == 8

    trained = leakgnn.train(
        data=corpus["dir"],
        out=str(tmp_path / "run"),
        layer="gcn",
        depth=2,
        hidden=16,
        fuzzy=True,
        window=24,
        stride=24,
        epochs=6,
        batch_size=8,
        lr=0.01,
        train_frac=0.5,
        val_frac=0.25,
        test_frac=0.25,
        seed=3,
    )
    metrics = trained["metrics"]
    assert 0.0 <= metrics["graph_f1"] <= 1.0
    assert metrics["config"]["model"]["layer"] == "gcn"
    assert metrics["config"]["model"]["fuzzy"] is True

    evaluated = leakgnn.evaluate(
        data=corpus["dir"], out=str(tmp_path / "eval"), checkpoint=trained["checkpoint"]
    )
    # Same split, scaling, and threshold as training time: identical numbers.
    assert evaluated["graph_f1"] == metrics["graph_f1"]
    assert evaluated["test_loss"] == metrics["test_loss"]

    explained = leakgnn.explain(
        data=corpus["dir"],
        out=str(tmp_path / "explain"),
        checkpoint=trained["checkpoint"],
        rules=True,
        top_k=3,
        mask_threshold=0.01,
        seed=3,
    )
    masks = explained["explanation"]["edge_mask"]  # pipe id -> mask value
    assert masks and all(0.0 <= m <= 1.0 for m in masks.values())
    if explained["rule"]["rule"] is not None:
        assert explained["rule_text"].startswith("IF ")
        assert "THEN Leak probability" in explained["rule_text"]


def test_errors_surface_as_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        leakgnn.synth(out=str(tmp_path / "c"), scenarios=0)
    with pytest.raises(ValueError):
        leakgnn.train(data=str(tmp_path / "missing"), out=str(tmp_path / "r"))
    assert math.isfinite(leakgnn.window_stats([1.0])["stddev"])
