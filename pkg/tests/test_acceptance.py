"""Acceptance gate: criteria 1-9, each at its stated tolerance.

Every check is recorded with ``record`` and summarised as one PASS/FAIL line
per criterion at the end of the pytest run. Failing checks also fail their test.
"""
import json
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

from conftest import DESK_SHAPE, bayes_accuracy_oracle, record
from xferlab.attrib import integrated_gradients, integrated_gradients_batch
from xferlab.glmlab import CorrelationSpec, GlmConfig, sample_glm_dataset, train_alice_glm
from xferlab.nncore import GRADCHECK_KINDS, Flatten, Network, SoftmaxOutput, gradient_check
from xferlab.numkit import RngStream
from xferlab.runlab import run, validate_config

ALPHAS_11 = [round(-1.0 + 0.2 * i, 1) for i in range(11)]


def _rank(v):
    v = np.asarray(v, dtype=float)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v))
    ranks[order] = np.arange(len(v), dtype=float)
    for val in np.unique(v):          # ties share their average rank
        tie = v == val
        ranks[tie] = ranks[tie].mean()
    return ranks


def spearman(a, b) -> float:
    return float(np.corrcoef(_rank(a), _rank(b))[0, 1])


def _run(tmp_path, experiment, **raw):
    cfg = validate_config({"experiment": experiment, **raw})
    t0 = time.time()
    table = run(cfg, tmp_path / experiment)
    return table, time.time() - t0


def _finish(criterion, results):
    assert all(results), f"criterion {criterion} failed"


def test_spearman_helper():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    # ties: |alpha| symmetric grid against a curve that is flat on each tie
    assert spearman([1, 0, 1], [5.0, 1.0, 5.0]) == pytest.approx(1.0)


# 1. Corr = beta


@pytest.mark.slow
def test_criterion_1_corr_equals_beta(tmp_path):
    table, dt = _run(tmp_path, "corr_check", corr={"n": 100000, "per_class": 1000,
                                                   "betas": [0.0, 0.25, 0.5, 0.75, 1.0]})
    res = []
    for r in table.rows:
        res.append(record(1, f"beta={r['beta']:g}", r["abs_error"] <= 0.02,
                          f"mean corr {r['mean_corr']:.4f}, |err| {r['abs_error']:.4f} <= 0.02"))
    res.append(record(1, "runtime", dt < 60, f"{dt:.1f}s < 60s"))
    _finish(1, res)


# 2. GLM weight path


def test_criterion_2_weight_path():
    t0 = time.time()
    res = []
    cfg = GlmConfig()
    for alpha in (0.0, 0.99, -0.99):
        for s in range(cfg.seeds):
            data = sample_glm_dataset(CorrelationSpec(alpha, 1, "pairwise"), cfg.n_train,
                                      RngStream(2024).derive(f"alpha={alpha}").derive(s))
            w = train_alice_glm(data, cfg.lam).w
            ratio = w[1] / w[0]
            if alpha == 0.0:
                ok, want = abs(ratio) < 0.05, "|ratio| < 0.05"
            else:
                ok, want = 0.8 <= abs(ratio) <= 1.05 and np.sign(ratio) == np.sign(alpha), \
                    "|ratio| in [0.8, 1.05], sign of alpha"
            res.append(record(2, f"alpha={alpha:g} seed={s}", ok, f"w2/w1 = {ratio:.4f}, {want}"))
    dt = time.time() - t0
    res.append(record(2, "runtime", dt < 60, f"{dt:.1f}s < 60s"))
    _finish(2, res)


# 3. GLM accuracy curves


@pytest.mark.slow
def test_criterion_3_scenario_1(tmp_path):
    table, dt = _run(tmp_path, "glm_sweep", glm={"scenarios": ["pairwise"], "alphas": ALPHAS_11, "ks": [1]})
    rows = {r["alpha"]: r for r in table.rows}
    res = [
        record(3, "S1 pretrained at alpha=-1 < 40", rows[-1.0]["acc_pretrained"] < 40,
               f"{rows[-1.0]['acc_pretrained']:.2f}%"),
        record(3, "S1 finetuned at alpha=0 in 50+-2", abs(rows[0.0]["acc_finetuned"] - 50) <= 2,
               f"{rows[0.0]['acc_finetuned']:.2f}%"),
    ]
    rho = spearman([abs(a) for a in ALPHAS_11], [rows[a]["acc_finetuned"] for a in ALPHAS_11])
    res.append(record(3, "S1 Spearman(|alpha|, finetuned) >= 0.95", rho >= 0.95, f"rho = {rho:.4f}"))
    bayes = 100 * bayes_accuracy_oracle()
    gap = abs(rows[1.0]["acc_finetuned"] - bayes)
    res.append(record(3, "S1 alpha=1 vs Bayes oracle within 2", gap <= 2,
                      f"{rows[1.0]['acc_finetuned']:.2f}% vs {bayes:.2f}%"))
    res.append(record(3, "S1 runtime", dt < 600, f"{dt:.1f}s"))
    _finish(3, res)


@pytest.mark.slow
def test_criterion_3_scenario_2(tmp_path):
    table, dt = _run(tmp_path, "glm_sweep", glm={"scenarios": ["global"], "alphas": [-1.0, 1.0], "ks": [32]})
    res = []
    for r in table.rows:
        acc = r["acc_finetuned"]
        res.append(record(3, f"S2 k=32 alpha={r['alpha']:g} finetuned >= 95", acc >= 95,
                          f"{acc:.2f}% +- {r['stderr_finetuned']:.2f}"))
    res.append(record(3, "S2 runtime", dt < 600, f"{dt:.1f}s"))
    _finish(3, res)


# 4. gradients


def test_criterion_4_gradient_checks():
    t0 = time.time()
    res = []
    for kind in GRADCHECK_KINDS:
        errs = [gradient_check(kind, RngStream(4).derive(kind).derive(i)) for i in range(5)]
        res.append(record(4, kind, max(errs) < 1e-4, f"max rel err {max(errs):.2e} over 5 configs"))
    dt = time.time() - t0
    res.append(record(4, "runtime", dt < 60, f"{dt:.1f}s < 60s"))
    _finish(4, res)


# 5. task-correlation trend


@pytest.mark.slow
def test_criterion_5_task_correlation_trend(tmp_path):
    table, dt = _run(tmp_path, "task_sweep", seeds=[0, 1, 2], data={"betas": [0.0, 0.5, 1.0]},
                     model={"arch": "fc"})
    r = {row["beta"]: row for row in table.rows}
    res = []
    for lo, hi in ((0.0, 0.5), (0.5, 1.0)):
        gap = r[hi]["bob_acc"] - r[lo]["bob_acc"]
        margin = 3 + r[hi]["stderr_bob"] + r[lo]["stderr_bob"]
        res.append(record(5, f"bob({hi:g}) - bob({lo:g})", gap >= margin,
                          f"gap {gap:.2f} >= 3 + stderrs = {margin:.2f}"))
    res.append(record(5, "bob at beta=0 > 15", r[0.0]["bob_acc"] > 15, f"{r[0.0]['bob_acc']:.2f}%"))
    diff = abs(r[1.0]["alice_acc"] - r[1.0]["bob_acc"])
    res.append(record(5, "bob within 5 of alice at beta=1", diff <= 5,
                      f"alice {r[1.0]['alice_acc']:.2f}%, bob {r[1.0]['bob_acc']:.2f}%"))
    res.append(record(5, "runtime", dt < 900, f"{dt:.1f}s < 900s"))
    _finish(5, res)


# 6. layer sweep


@pytest.mark.slow
def test_criterion_6_layer_sweep(tmp_path):
    table, dt = _run(tmp_path, "layer_sweep", seeds=[0, 1, 2], data={"betas": [0.0, 1.0]})
    acc = {(row["beta"], row["ell"]): row["bob_acc"] for row in table.rows}
    ells = sorted({row["ell"] for row in table.rows})
    gain = acc[(0.0, 1)] - acc[(0.0, ells[-1])]
    res = [record(6, "beta=0 acc(ell=1) - acc(ell=m+1) >= 10", gain >= 10,
                  f"{acc[(0.0, 1)]:.2f} - {acc[(0.0, ells[-1])]:.2f} = {gain:.2f}")]
    spread = max(acc[(1.0, e)] for e in ells) - min(acc[(1.0, e)] for e in ells)
    res.append(record(6, "beta=1 spread <= 5", spread <= 5, f"spread {spread:.2f} over ell={ells}"))
    res.append(record(6, "runtime", dt < 1200, f"{dt:.1f}s < 1200s"))
    _finish(6, res)


# 7. integrated gradients


def test_criterion_7_integrated_gradients(alice_beta0):
    t0 = time.time()
    res = []
    lin = Network([Flatten(), SoftmaxOutput(10)], (4, 6, 3), RngStream(7), dtype=np.float64)
    x = np.random.default_rng(7).random((4, 6, 3))
    w = lin.layers[1].params["W"][:, 4].reshape(4, 6, 3)
    err = max(np.abs(integrated_gradients(lin, x, 4, steps=s).values - w * x).max() for s in (1, 16, 128))
    res.append(record(7, "linear closed form", err <= 1e-10, f"max |IG - w x| = {err:.1e} <= 1e-10"))

    net, _, test = alice_beta0
    maps = integrated_gradients_batch(net, test.x[:200], test.y_alice[:200], 128)
    rel = np.array([m.relative_gap for m in maps])
    res.append(record(7, "completeness at 128 steps < 1%", rel.mean() < 0.01,
                      f"mean relative gap {100 * rel.mean():.3f}% over 200 inputs "
                      f"(median {100 * np.median(rel):.3f}%, max {100 * rel.max():.2f}%)"))
    black = integrated_gradients(net, np.zeros(DESK_SHAPE, np.uint8), 0)
    res.append(record(7, "black input gives zero map", bool(np.all(black.values == 0)),
                      f"max |IG| = {np.abs(black.values).max():g}"))
    dt = time.time() - t0
    res.append(record(7, "runtime", dt < 60, f"{dt:.1f}s < 60s (trained net from a shared fixture)"))
    _finish(7, res)


# 8. oracle initialisation


@pytest.mark.slow
def test_criterion_8_oracle_init(tmp_path):
    table, dt = _run(tmp_path, "oracle_init", seeds=[0, 1, 2], data={"betas": [0.0]},
                     attribution={"samples": 200})
    r = {row["init"]: row for row in table.rows}
    zr, sr = r["zero_right_half"]["right_left_ratio"], r["standard"]["right_left_ratio"]
    res = [
        record(8, "zero init right/left |IG| < 10%", zr < 0.10, f"ratio {zr:.4f}"),
        record(8, "standard init right/left |IG| >= 30%", sr >= 0.30, f"ratio {sr:.4f}"),
    ]
    za, sa = r["zero_right_half"]["alice_acc"], r["standard"]["alice_acc"]
    res.append(record(8, "zero-init accuracy >= standard - 0.5", za >= sa - 0.5, f"{za:.2f}% vs {sa:.2f}%"))
    res.append(record(8, "runtime", dt < 600, f"{dt:.1f}s < 600s"))
    _finish(8, res)


# 9. reproducibility


def _cli(args):
    return subprocess.run([sys.executable, "-m", "xferlab", *args], capture_output=True, text=True)


@pytest.mark.slow
@pytest.mark.parametrize("experiment,extra", [
    ("glm_sweep", {"glm": {"alphas": [-1.0, 0.0, 0.5, 1.0], "ks": [1, 4], "n_train": 5000, "n_test": 5000}}),
    ("task_sweep", {"seeds": [0, 1], "data": {"betas": [0.0, 1.0], "samples_per_epoch": 2000,
                                              "test_samples": 500}, "alice": {"epochs": 2}, "bob": {"epochs": 2}}),
])
def test_criterion_9_reproducibility(tmp_path, experiment, extra):
    cfg = tmp_path / "config.yaml"
    cfg.write_text(yaml.safe_dump({"experiment": experiment, "seed": 3, **extra}))
    sub = experiment.replace("_", "-")
    outs = []
    for d in ("first", "second"):
        proc = _cli([sub, "--config", str(cfg), "--jobs", "1", "--out", str(tmp_path / d)])
        assert proc.returncode == 0, proc.stderr
        outs.append((tmp_path / d / "results.csv").read_bytes())
    same = outs[0] == outs[1]
    prov = json.loads((tmp_path / "first" / "provenance.json").read_text())
    res = [record(9, f"{experiment} byte-identical CSV", same, f"{len(outs[0])} bytes, two --jobs 1 runs"),
           record(9, f"{experiment} disjoint streams", prov["streams_disjoint"],
                  f"{prov['streams_logged']} streams logged")]
    _finish(9, res)
