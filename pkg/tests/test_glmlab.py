import numpy as np
import pytest

from conftest import bayes_accuracy_oracle
from xferlab.errors import NonFiniteLoss
from xferlab.glmlab import (CorrelationSpec, GlmConfig, GlmDataset, build_covariance, evaluate_glm,
                            finetune_bob_scalar, run_glm_cell, sample_glm_dataset, sweep_alpha,
                            train_alice_glm)
from xferlab.numkit import RngStream

LAM = GlmConfig().lam


def _corr(a, b):
    return float(np.corrcoef(a.astype(float), b.astype(float))[0, 1])


def _alice(alpha, k=1, n=50000, seed=0, scenario="pairwise"):
    data = sample_glm_dataset(CorrelationSpec(alpha, k, scenario), n, RngStream(seed).derive("alice"))
    return train_alice_glm(data, LAM), data


@pytest.mark.parametrize("k", [1, 3])
def test_pairwise_zero_alpha_is_identity(k):
    np.testing.assert_array_equal(build_covariance(CorrelationSpec(0.0, k, "pairwise")), np.eye(2 * k))


def test_pairwise_half_alpha():
    np.testing.assert_allclose(build_covariance(CorrelationSpec(0.5, 1, "pairwise")), [[1, 0.5], [0.5, 1]])


def test_global_negative_alpha_entries():
    m = build_covariance(CorrelationSpec(-0.5, 2, "global"))
    np.testing.assert_allclose(np.diag(m), 2.0)
    assert m[0, 1] == m[1, 0] == m[2, 3] == 0.5
    np.testing.assert_allclose(m[:2, 2:], -0.5)
    np.testing.assert_array_equal(m, m.T)


def test_spec_validation():
    with pytest.raises(ValueError):
        CorrelationSpec(1.5, 1, "pairwise")
    with pytest.raises(ValueError):
        CorrelationSpec(0.5, 0, "global")


def test_independent_labels_at_zero_alpha():
    d = sample_glm_dataset(CorrelationSpec(0.0, 1, "pairwise"), 200000, RngStream(2))
    assert abs(_corr(d.y_alice, d.y_bob)) < 0.01
    assert abs(d.y_alice.mean() - 0.5) < 0.01


def test_label_correlation_at_alpha_one():
    # shared feature x: corr = 4 E[s(x)^2] - 1, evaluated by quadrature
    x, w = np.polynomial.hermite_e.hermegauss(200)
    s = 1 / (1 + np.exp(-x))
    ref = 4 * np.sum(w * s * s) / np.sqrt(2 * np.pi) - 1
    d = sample_glm_dataset(CorrelationSpec(1.0, 1, "pairwise"), 200000, RngStream(3))
    assert np.allclose(d.x[:, 0], d.x[:, 1], atol=1e-9)
    assert abs(_corr(d.y_alice, d.y_bob) - ref) < 0.01
    assert abs(d.y_alice.mean() - 0.5) < 0.01


@pytest.mark.parametrize("scenario,alpha,k", [("pairwise", 0.6, 4), ("global", 0.5, 4), ("global", -0.5, 4),
                                              ("global", 0.25, 8)])
def test_variance_identity(scenario, alpha, k):
    d = sample_glm_dataset(CorrelationSpec(alpha, k, scenario), 200000, RngStream(5))
    var = d.x[:, :k].sum(axis=1).var()
    expected = k if scenario == "pairwise" else (1 - alpha) * k + abs(alpha) * k * k
    assert abs(var / expected - 1) < 0.03


def test_alice_ignores_bob_feature_at_zero_alpha():
    p, _ = _alice(0.0)
    assert p.converged and p.v == 1.0
    assert abs(p.w[1]) < 0.05 * abs(p.w[0])


@pytest.mark.parametrize("alpha,lo,hi", [(0.99, 0.8, 1.05), (-0.99, -1.05, -0.8)])
def test_alice_weight_ratio_near_one(alpha, lo, hi):
    p, _ = _alice(alpha)
    assert lo <= p.w[1] / p.w[0] <= hi


def test_gd_loss_monotone_for_small_lr():
    d = sample_glm_dataset(CorrelationSpec(0.5, 2, "pairwise"), 5000, RngStream(7))
    p = train_alice_glm(d, LAM, steps=300, lr=0.5, method="gd", tol=0.0)
    tail = np.array(p.losses[len(p.losses) // 10:])
    assert np.all(np.diff(tail) <= 1e-15)


def test_gd_and_newton_agree():
    d = sample_glm_dataset(CorrelationSpec(0.3, 1, "pairwise"), 5000, RngStream(8))
    a = train_alice_glm(d, LAM, steps=5000, lr=1.0, method="gd", tol=1e-9)
    b = train_alice_glm(d, LAM, tol=1e-9)
    np.testing.assert_allclose(a.w, b.w, atol=1e-6)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_lr_raises():
    d = sample_glm_dataset(CorrelationSpec(0.3, 1, "pairwise"), 2000, RngStream(8))
    with pytest.raises(NonFiniteLoss):
        train_alice_glm(d, LAM, steps=50, lr=1e308, method="gd")


def test_lambda_must_be_positive():
    d = sample_glm_dataset(CorrelationSpec(0.3, 1, "pairwise"), 100, RngStream(8))
    with pytest.raises(ValueError):
        train_alice_glm(d, 0.0)


def test_bob_flips_sign_at_negative_alpha():
    p, data = _alice(-1.0)
    v = finetune_bob_scalar(p.w, data)
    assert v < 0
    test = sample_glm_dataset(CorrelationSpec(-1.0, 1, "pairwise"), 50000, RngStream(1).derive("t"))
    p_pos, data_pos = _alice(1.0)
    test_pos = sample_glm_dataset(CorrelationSpec(1.0, 1, "pairwise"), 50000, RngStream(1).derive("t"))
    acc_neg = evaluate_glm(p.w, v, test)
    acc_pos = evaluate_glm(p_pos.w, finetune_bob_scalar(p_pos.w, data_pos), test_pos)
    assert abs(acc_neg - acc_pos) < 2.0


def test_bob_is_at_chance_at_zero_alpha():
    p, data = _alice(0.0)
    v = finetune_bob_scalar(p.w, data)
    test = sample_glm_dataset(CorrelationSpec(0.0, 1, "pairwise"), 50000, RngStream(1).derive("t"))
    assert abs(evaluate_glm(p.w, v, test) - 50) < 2
    assert abs(evaluate_glm(p.w, -v, test) - 50) < 2


def test_bob_with_his_own_feature_reaches_bayes():
    d = sample_glm_dataset(CorrelationSpec(0.0, 1, "pairwise"), 50000, RngStream(12))
    v = finetune_bob_scalar([0.0, 1.0], d)
    assert v > 0
    test = sample_glm_dataset(CorrelationSpec(0.0, 1, "pairwise"), 200000, RngStream(13))
    assert abs(evaluate_glm([0.0, 1.0], v, test) - 100 * bayes_accuracy_oracle()) < 1.0


def test_alice_oracle_direction_on_her_labels():
    test = sample_glm_dataset(CorrelationSpec(0.0, 1, "pairwise"), 200000, RngStream(14))
    assert abs(evaluate_glm([1.0, 0.0], 1.0, test, labels="alice") - 100 * bayes_accuracy_oracle()) < 1.0


def test_zero_weights_predict_class_zero():
    test = sample_glm_dataset(CorrelationSpec(0.0, 1, "pairwise"), 50000, RngStream(15))
    acc = evaluate_glm([0.0, 0.0], 1.0, test)
    assert acc == pytest.approx(100 * np.mean(test.y_bob == 0))
    assert abs(acc - 50) < 1


def test_tie_goes_to_class_zero():
    d = GlmDataset(np.zeros((4, 2)), np.zeros(4, np.uint8), np.array([0, 0, 1, 1], np.uint8))
    assert evaluate_glm([1.0, 1.0], 1.0, d) == 50.0


def test_sweep_rows_and_columns():
    cfg = GlmConfig(n_train=4000, n_test=4000, seeds=2)
    rows = sweep_alpha([-1.0, 0.0, 1.0], [1], "pairwise", cfg)
    assert [r["alpha"] for r in rows] == [-1.0, 0.0, 1.0]
    assert set(rows[0]) == {"scenario", "alpha", "k", "seed_count", "acc_pretrained", "acc_finetuned",
                            "stderr_pretrained", "stderr_finetuned"}
    assert rows[0]["acc_pretrained"] < 50
    assert all(r["seed_count"] == 2 for r in rows)


def test_sweep_is_order_independent():
    cfg = GlmConfig(n_train=3000, n_test=3000, seeds=2)
    a = sweep_alpha([0.5, -0.5], [1, 2], "global", cfg)
    b = sweep_alpha([0.5, -0.5], [1, 2], "global", cfg, map_fn=lambda f, xs: [f(x) for x in reversed(list(xs))][::-1])
    assert a == b
    single = run_glm_cell("global", 0.5, 2, 1, cfg, RngStream(0))
    assert single == run_glm_cell("global", 0.5, 2, 1, cfg, RngStream(0))


@pytest.mark.parametrize("scenario", ["pairwise", "global"])
def test_finetuned_minimum_at_zero_alpha(scenario):
    cfg = GlmConfig(n_train=20000, n_test=20000, seeds=2)
    rows = sweep_alpha([-1.0, -0.5, 0.0, 0.5, 1.0], [2], scenario, cfg)
    accs = [r["acc_finetuned"] for r in rows]
    assert min(accs) == accs[2]


def test_global_finetuned_accuracy_grows_with_k():
    cfg = GlmConfig(n_train=20000, n_test=20000, seeds=2)
    rows = sweep_alpha([0.25], [1, 4, 16], "global", cfg)
    accs = [r["acc_finetuned"] for r in rows]
    assert all(b >= a - 1.0 for a, b in zip(accs, accs[1:]))
    assert accs[-1] > accs[0]


def test_pairwise_sign_symmetry():
    cfg = GlmConfig(n_train=20000, n_test=20000, seeds=3)
    grid = [0.2, 0.6, 1.0]
    pos = sweep_alpha(grid, [1], "pairwise", cfg)
    neg = sweep_alpha([-a for a in grid], [1], "pairwise", cfg)
    for p, n in zip(pos, neg):
        assert abs(p["acc_finetuned"] - n["acc_finetuned"]) < 2.0


def test_finetuned_monotone_in_abs_alpha():
    cfg = GlmConfig(n_train=20000, n_test=20000, seeds=2)
    rows = sweep_alpha([0.0, 0.25, 0.5, 0.75, 1.0], [1], "pairwise", cfg)
    accs = [r["acc_finetuned"] for r in rows]
    assert all(b >= a - 1.0 for a, b in zip(accs, accs[1:]))
