"""Smoke tests for the python bindings: wiring, shapes, and a few known values."""

import math

import numpy as np
import pytest

import drumtl


def test_coeff_matrix_values():
    b = drumtl.coeff_matrix("I", 5)
    assert b.shape == (15, 5)
    assert b[0, 0] == 1.0
    assert np.all(b[10:, :] == 0.0)
    b3 = drumtl.coeff_matrix("III", 3)
    assert b3.shape == (15, 3)
    with pytest.raises(drumtl.ConfigError):
        drumtl.coeff_matrix("I", 4)


def test_fbar_plugin_value():
    x = np.zeros(15)
    a = np.zeros(5)
    a[0] = 1.0
    assert drumtl.fbar_eval("I", x, a) == pytest.approx(0.2)


def test_simulation_shapes_and_determinism():
    X, A, Y = drumtl.gen_source("I", seed=3, n=200)
    assert X.shape == (200, 15)
    assert A.shape == (200, 5)
    assert Y.shape == (200,)
    X2, A2, Y2 = drumtl.gen_source("I", seed=3, n=200)
    assert np.array_equal(X, X2) and np.array_equal(Y, Y2)

    Xt, At, Yt, fbar = drumtl.gen_perturbed_test("I", seed=3, scale=0.0, mc_index=0, n=50,
                                                 target_n=50)
    assert fbar.shape == (50,)


def test_net_training_and_grad_check():
    net = drumtl.net_new([2, 8, 1], ["relu", "identity"], seed=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(256, 2))
    y = (2.0 * x[:, :1]) + 0.5
    losses = drumtl.train(net, x, y, loss="mse", lr=3e-3, epochs=40, seed=7)
    assert losses[-1] < losses[0]
    assert drumtl.grad_check(net, x[:8], y[:8], "mse") < 1e-4


def test_metrics_known_values():
    p = np.full(10, 0.2)
    y = np.array([1.0, 1.0] + [0.0] * 8)
    assert drumtl.brier(p, y) == pytest.approx(0.16, abs=1e-12)
    scores = np.array([0.9, 0.8, 0.2, 0.1])
    labels = np.array([1.0, 1.0, 0.0, 0.0])
    assert drumtl.auroc(scores, labels) == 1.0
    assert drumtl.ess(np.ones(50)) == pytest.approx(50.0)
    assert drumtl.chisq_robust_loss(np.full(5, 1.5), 0.5) == pytest.approx(1.5)


def test_small_drum_pipeline():
    Xs, As, Ys = drumtl.gen_source("I", seed=5, n=300)
    Xt = drumtl.gen_target("I", seed=5, target_n=150)
    f = drumtl.fit_outcome_model(Xs, As, Ys, lr=1e-3, epochs=5, seed=6)
    gen, trajectory = drumtl.fit_worstcase_unconstrained(f, Xt, q=2, L=8, lr=1e-3, epochs=3,
                                                         seed=7)
    assert len(trajectory) == 3
    pred = drumtl.predict_robust(f, gen, Xt, L=16, seed=8)
    assert pred.shape == (150,)
    assert np.all(np.isfinite(pred))


def test_run_experiment_roundtrip(tmp_path):
    cfg = {
        "setting": "I",
        "seed": 9,
        "n": 250,
        "N": 100,
        "mc_count": 2,
        "scales": [0.6],
        "methods": ["Baseline-ERM"],
        "out_dir": str(tmp_path / "run"),
        "hp": {"Baseline-ERM": {"epochs": 3}},
    }
    import json

    manifest_path = drumtl.run_experiment(json.dumps(cfg))
    manifest = json.loads(open(manifest_path).read())
    assert "Baseline-ERM" in manifest["methods"]
    metrics = json.loads(open(tmp_path / "run" / "metrics" / "Baseline-ERM_s0.6.json").read())
    assert len(metrics["per_set"]) == 2
    assert metrics["worst"] >= metrics["mean"]
    assert math.isfinite(metrics["worst"])
