"""Experiment runners. Each sweep is split into independent cells keyed by (beta, seed) or
(scenario, alpha, k, seed); cells seed themselves from their key, cache their result as JSON
and may run on a process pool.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from .. import __version__
from ..attrib import (SideSummary, integrated_gradients_batch, side_histograms, side_means,
                      write_attributions_csv)
from ..dataforge import (EpochSource, estimate_task_correlation, glyph_domain, load_idx, rescale_domain,
                         sample_concat, save_dataset)
from ..glmlab import GlmConfig, _cell_task, sweep_alpha
from ..nncore import (PROFILES, FreezePlan, Init, OptimizerConfig, build_network, evaluate, finetune,
                      layer_sweep, load_network, save_network, train)
from .config import ExperimentConfig, IdxDomainSpec
from .emit import ResultTable, emit
from .plot import plot_svg
from .seeds import StreamAudit, experiment_stream

log = logging.getLogger(__name__)

COLUMNS = {
    "glm_sweep": ["scenario", "alpha", "k", "seed_count", "acc_pretrained", "acc_finetuned",
                  "stderr_pretrained", "stderr_finetuned"],
    "task_sweep": ["beta", "seed_count", "alice_acc", "bob_acc", "stderr_alice", "stderr_bob"],
    "layer_sweep": ["beta", "ell", "seed_count", "bob_acc", "stderr_bob", "alice_acc"],
    "oracle_init": ["beta", "init", "seed_count", "alice_acc", "stderr_alice", "left_ig", "right_ig",
                    "right_left_ratio"],
    "attribution": ["beta", "network", "samples", "left_mean", "right_mean", "overlap", "median_relative_gap"],
    "corr_check": ["beta", "n", "mean_corr", "abs_error", "degenerate_classes"],
}
NN_SUBSTREAMS = (("data", "train"), ("data", "test"), "init", ("alice", "dropout"), ("alice", "shuffle"),
                 ("bob", "head"), ("bob", "dropout"), ("bob", "shuffle"))


# ---------------------------------------------------------------- shared helpers

def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def _stderr(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def _optimizer(spec) -> OptimizerConfig:
    return OptimizerConfig(**spec.model_dump())


@dataclass
class Domains:
    left: object
    right: object
    left_test: object
    right_test: object


def _load_domain(choice, cfg: ExperimentConfig, split: str, per_class: int):
    d = cfg.data
    if isinstance(choice, IdxDomainSpec):
        if split == "train":
            dom = load_idx(choice.images, choice.labels, choice.name)
        else:
            dom = load_idx(choice.test_images, choice.test_labels, choice.name)
        return rescale_domain(dom, d.height, d.width, d.channels)
    return glyph_domain(choice, per_class, d.height, d.width, d.channels, split=split, seed=cfg.seed)


def load_domains(cfg: ExperimentConfig) -> Domains:
    d = cfg.data
    return Domains(_load_domain(d.left, cfg, "train", d.train_per_class),
                   _load_domain(d.right, cfg, "train", d.train_per_class),
                   _load_domain(d.left, cfg, "test", d.test_per_class),
                   _load_domain(d.right, cfg, "test", d.test_per_class))


def input_shape(cfg: ExperimentConfig) -> tuple:
    return (cfg.data.height, 2 * cfg.data.width, cfg.data.channels)


def _cell_data(cfg: ExperimentConfig, domains: Domains, beta: float, cell):
    data = cell.derive("data")
    src = EpochSource(beta, domains.left, domains.right, data.derive("train"), cfg.data.samples_per_epoch)
    test = sample_concat(beta, domains.left_test, domains.right_test, cfg.data.test_samples, data.derive("test"))
    return src, test


def _train_alice(cfg: ExperimentConfig, src, cell, init=None):
    net = build_network(cfg.model.arch, input_shape(cfg), cell.derive("init"), init=init or cfg.model.init,
                        profile=PROFILES[cfg.model.profile])
    train(net, src, "alice", _optimizer(cfg.alice), rng=cell.derive("alice"))
    return net


def _cell_key(beta, seed) -> str:
    return f"beta={beta:.6g}_seed={seed}"


# ---------------------------------------------------------------- cell bodies (top level for pickling)

def _task_cell(args):
    cfg, domains, beta, seed, cell, ckpt_dir = args
    src, test = _cell_data(cfg, domains, beta, cell)
    alice = _train_alice(cfg, src, cell)
    bob, _ = finetune(alice, src, _optimizer(cfg.bob), None, cell.derive("bob"))
    if ckpt_dir:
        save_network(alice, Path(ckpt_dir) / f"alice_{_cell_key(beta, seed)}.xfn")
    return {"alice_acc": evaluate(alice, test, "alice"), "bob_acc": evaluate(bob, test, "bob")}


def _layer_cell(args):
    cfg, domains, beta, cell, ells = args
    src, test = _cell_data(cfg, domains, beta, cell)
    alice = _train_alice(cfg, src, cell)
    rows = layer_sweep(alice, src, test, ells, _optimizer(cfg.bob), cell.derive("bob"))
    return {"alice_acc": evaluate(alice, test, "alice"), "bob_acc": {str(r["ell"]): r["bob_acc"] for r in rows}}


def _side_summaries(net, test, target, cfg: ExperimentConfig, absolute=None):
    absolute = cfg.attribution.absolute if absolute is None else absolute
    n = min(cfg.attribution.samples, len(test))
    labels = test.labels(target)[:n]
    maps = integrated_gradients_batch(net, test.x[:n], labels, cfg.attribution.steps, cfg.attribution.space)
    return maps, [side_means(m, absolute=absolute) for m in maps]


def _oracle_cell(args):
    cfg, domains, beta, cell = args
    src, test = _cell_data(cfg, domains, beta, cell)
    out = {}
    for init in (Init.STANDARD, Init.ZERO_RIGHT_HALF):
        # same init stream: the two networks differ only in the zeroed weights
        alice = _train_alice(cfg, src, cell, init=init)
        # the oracle comparison is on magnitudes, whatever the histogram convention
        _, sums = _side_summaries(alice, test, "alice", cfg, absolute=True)
        out[init.value] = {"alice_acc": evaluate(alice, test, "alice"),
                           "left_ig": _mean([s.left_mean for s in sums]),
                           "right_ig": _mean([s.right_mean for s in sums])}
    return out


def _attribution_cell(args):
    cfg, domains, beta, cell, dump_dir = args
    src, test = _cell_data(cfg, domains, beta, cell)
    alice = _train_alice(cfg, src, cell)
    bob, _ = finetune(alice, src, _optimizer(cfg.bob), None, cell.derive("bob"))
    out = {}
    for name, net, target in (("alice", alice, "alice"), ("bob", bob, "bob")):
        maps, sums = _side_summaries(net, test, target, cfg)
        if dump_dir:
            write_attributions_csv(Path(dump_dir) / f"ig_{name}_beta={beta:.6g}.csv", maps)
        out[name] = {"left": [s.left_mean for s in sums], "right": [s.right_mean for s in sums],
                     "relative_gaps": [m.relative_gap for m in maps]}
    return out


def _corr_cell(args):
    left, right, beta, n, cell = args
    ds = sample_concat(beta, left, right, n, cell)
    rep = estimate_task_correlation(ds)
    return {"mean_corr": rep.mean_corr, "degenerate_classes": len(rep.degenerate_classes)}


def _glm_cell(args):
    return list(_cell_task(args))


# ---------------------------------------------------------------- orchestration

@dataclass
class Runner:
    """Runs cells serially or on a process pool, caching each result under ``out_dir/cells``."""

    cfg: ExperimentConfig
    out_dir: Path
    jobs: int = 1
    resume: bool = False
    audit: StreamAudit = field(default_factory=StreamAudit)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.cell_dir = self.out_dir / "cells"
        self.cell_dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = self.cfg.config_hash()

    def _cache_path(self, key):
        return self.cell_dir / f"{key}.json"

    def _cached(self, key):
        p = self._cache_path(key)
        if not (self.resume and p.exists()):
            return None
        rec = json.loads(p.read_text())
        if rec.get("config_hash") != self.config_hash:
            return None
        return rec

    def _store(self, key, result):
        tmp = self._cache_path(key).with_suffix(".tmp")
        tmp.write_text(json.dumps({"key": key, "config_hash": self.config_hash, "result": result}))
        tmp.replace(self._cache_path(key))

    def map(self, fn, items) -> list:
        """``items`` is a list of (key, args); returns results in the same order."""
        results = [None] * len(items)
        todo = []
        for i, (key, args) in enumerate(items):
            rec = self._cached(key)
            if rec is not None:
                results[i] = rec["result"]
                log.info("cell %s: reused", key)
            else:
                todo.append(i)
        if self.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                futures = {i: pool.submit(fn, items[i][1]) for i in todo}
                for i in todo:
                    results[i] = futures[i].result()
                    self._store(items[i][0], results[i])
                    log.info("cell %s: done", items[i][0])
        else:
            for i in todo:
                results[i] = fn(items[i][1])
                self._store(items[i][0], results[i])
                log.info("cell %s: done", items[i][0])
        # round-trip through JSON so fresh and resumed results are indistinguishable
        return [json.loads(json.dumps(r)) for r in results]


def _nn_cells(runner: Runner, experiment: str, betas, seeds, subs=NN_SUBSTREAMS):
    base = experiment_stream(runner.cfg.seed, experiment)
    cells = []
    for beta in betas:
        beta_stream = base.derive(f"beta={beta:.6g}")
        for s in seeds:
            cells.append((beta, s, runner.audit.cell(beta_stream, f"{experiment}/{_cell_key(beta, s)}", s, subs)))
    return cells


def run_glm_sweep(runner: Runner) -> ResultTable:
    cfg = runner.cfg
    g = cfg.glm
    gcfg = GlmConfig(lam=g.lam, n_train=g.n_train, n_test=g.n_test, seeds=len(cfg.seeds), steps=g.steps,
                     lr=g.lr, method=g.method)
    base = experiment_stream(cfg.seed, "glm_sweep")

    def map_fn(fn, arglist):
        arglist = list(arglist)
        items = []
        for args in arglist:
            (scenario, alpha, k, s), _, _ = args
            label = f"{scenario}/alpha={alpha:.6g}/k={k}/seed={s}"
            runner.audit.cell(base, f"glm_sweep/{label}", label, ("train", "test"))
            items.append((f"{scenario}_alpha={alpha:.6g}_k={k}_seed={s}", args))
        return runner.map(_glm_cell, items)

    rows = []
    for scenario in g.scenarios:
        rows += sweep_alpha(g.alphas, g.ks, scenario, gcfg, base, map_fn=map_fn, seed_indices=cfg.seeds)
    return ResultTable(COLUMNS["glm_sweep"], rows)


def run_task_sweep(runner: Runner, domains: Domains) -> ResultTable:
    cfg = runner.cfg
    ckpt_dir = None
    if cfg.save_checkpoints:
        ckpt_dir = runner.out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
    cells = _nn_cells(runner, "task_sweep", cfg.data.betas, cfg.seeds)
    results = runner.map(_task_cell, [(_cell_key(b, s), (cfg, domains, b, s, c, ckpt_dir)) for b, s, c in cells])
    rows = []
    for beta in cfg.data.betas:
        res = [r for (b, _, _), r in zip(cells, results) if b == beta]
        a, bb = [r["alice_acc"] for r in res], [r["bob_acc"] for r in res]
        rows.append({"beta": float(beta), "seed_count": len(res), "alice_acc": _mean(a), "bob_acc": _mean(bb),
                     "stderr_alice": _stderr(a), "stderr_bob": _stderr(bb)})
    return ResultTable(COLUMNS["task_sweep"], rows)


def default_ells(cfg: ExperimentConfig) -> list[int]:
    net = build_network(cfg.model.arch, input_shape(cfg), np.random.default_rng(0),
                        profile=PROFILES[cfg.model.profile])
    return list(range(1, net.num_blocks + 1))


def run_layer_sweep(runner: Runner, domains: Domains) -> ResultTable:
    cfg = runner.cfg
    ells = cfg.layers.ells or default_ells(cfg)
    cells = _nn_cells(runner, "layer_sweep", cfg.data.betas, cfg.seeds)
    results = runner.map(_layer_cell, [(_cell_key(b, s), (cfg, domains, b, c, ells)) for b, s, c in cells])
    rows = []
    for beta in cfg.data.betas:
        res = [r for (b, _, _), r in zip(cells, results) if b == beta]
        alice = _mean([r["alice_acc"] for r in res])
        for ell in ells:
            accs = [r["bob_acc"][str(ell)] for r in res]
            rows.append({"beta": float(beta), "ell": int(ell), "seed_count": len(res), "bob_acc": _mean(accs),
                         "stderr_bob": _stderr(accs), "alice_acc": alice})
    return ResultTable(COLUMNS["layer_sweep"], rows)


def run_oracle_init(runner: Runner, domains: Domains) -> ResultTable:
    cfg = runner.cfg
    subs = (("data", "train"), ("data", "test"), "init", ("alice", "dropout"), ("alice", "shuffle"))
    cells = _nn_cells(runner, "oracle_init", cfg.data.betas, cfg.seeds, subs)
    results = runner.map(_oracle_cell, [(_cell_key(b, s), (cfg, domains, b, c)) for b, s, c in cells])
    rows = []
    for beta in cfg.data.betas:
        res = [r for (b, _, _), r in zip(cells, results) if b == beta]
        for init in (Init.STANDARD.value, Init.ZERO_RIGHT_HALF.value):
            acc = [r[init]["alice_acc"] for r in res]
            left = _mean([r[init]["left_ig"] for r in res])
            right = _mean([r[init]["right_ig"] for r in res])
            rows.append({"beta": float(beta), "init": init, "seed_count": len(res), "alice_acc": _mean(acc),
                         "stderr_alice": _stderr(acc), "left_ig": left, "right_ig": right,
                         "right_left_ratio": right / left if left else float("nan")})
    return ResultTable(COLUMNS["oracle_init"], rows)


def run_attribution(runner: Runner, domains: Domains) -> ResultTable:
    """Alice's and Bob's (output layer only) side summaries for each beta, using the first seed."""
    cfg = runner.cfg
    dump_dir = runner.out_dir / "attributions" if cfg.attribution.dump_maps else None
    if dump_dir:
        dump_dir.mkdir(exist_ok=True)
    hist_dir = runner.out_dir / "histograms"
    hist_dir.mkdir(exist_ok=True)
    cells = _nn_cells(runner, "attribution", cfg.data.betas, cfg.seeds[:1])
    results = runner.map(_attribution_cell, [(_cell_key(b, s), (cfg, domains, b, c, dump_dir)) for b, s, c in cells])
    rows = []
    for (beta, _, _), res in zip(cells, results):
        for name in ("alice", "bob"):
            r = res[name]
            sums = [SideSummary(left, right) for left, right in zip(r["left"], r["right"])]
            hist = side_histograms(sums, cfg.attribution.bins)
            (hist_dir / f"{name}_beta={beta:.6g}.json").write_text(json.dumps(hist.to_dict(), indent=2) + "\n")
            rows.append({"beta": float(beta), "network": name, "samples": len(sums),
                         "left_mean": _mean(r["left"]), "right_mean": _mean(r["right"]),
                         "overlap": hist.overlap(), "median_relative_gap": float(np.median(r["relative_gaps"]))})
    return ResultTable(COLUMNS["attribution"], rows)


def run_corr_check(runner: Runner) -> ResultTable:
    cfg = runner.cfg
    d = cfg.data
    per = cfg.corr.per_class
    left = _load_domain(d.left, cfg, "train", per)
    right = _load_domain(d.right, cfg, "train", per)
    base = experiment_stream(cfg.seed, "corr_check")
    items = []
    for beta in cfg.corr.betas:
        cell = runner.audit.cell(base, f"corr_check/beta={beta:.6g}", f"beta={beta:.6g}")
        items.append((f"beta={beta:.6g}", (left, right, beta, cfg.corr.n, cell)))
    results = runner.map(_corr_cell, items)
    rows = [{"beta": float(b), "n": cfg.corr.n, "mean_corr": r["mean_corr"],
             "abs_error": abs(r["mean_corr"] - b), "degenerate_classes": r["degenerate_classes"]}
            for b, r in zip(cfg.corr.betas, results)]
    return ResultTable(COLUMNS["corr_check"], rows)


PLOTS = {
    "glm_sweep": dict(x="alpha", ys=["acc_pretrained", "acc_finetuned"], group="scenario,k"),
    "task_sweep": dict(x="beta", ys=["alice_acc", "bob_acc"]),
    "layer_sweep": dict(x="ell", ys=["bob_acc"], group="beta"),
    "oracle_init": dict(x="beta", ys=["alice_acc"], group="init"),
    "corr_check": dict(x="beta", ys=["mean_corr"]),
}


def _write_run_files(cfg: ExperimentConfig, out_dir: Path, table: ResultTable, config_text, runner: Runner,
                     started: float, started_at: str):
    emit(table, out_dir / "results.csv", "csv")
    emit(table, out_dir / "results.json", "json")
    if config_text is not None:
        (out_dir / "config.yaml").write_text(config_text)
    else:
        (out_dir / "config.yaml").write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False))
    (out_dir / "config.resolved.json").write_text(json.dumps(cfg.model_dump(mode="json"), indent=2) + "\n")
    (out_dir / "streams.json").write_text(json.dumps(runner.audit.to_list(), indent=1) + "\n")
    table.provenance = {
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "numpy_version": np.__version__,
        "started_at": started_at,
        "wall_time_s": round(time.time() - started, 3),
        "jobs": runner.jobs,
        "streams_logged": len(runner.audit.entries),
        "streams_disjoint": runner.audit.disjoint(),
    }
    (out_dir / "provenance.json").write_text(json.dumps(table.provenance, indent=2) + "\n")
    if cfg.experiment in PLOTS and table.rows:
        plot_svg(table, out=out_dir / "results.svg", title=cfg.experiment, **PLOTS[cfg.experiment])


def run(cfg: ExperimentConfig, out_dir=None, jobs: int = 1, resume: bool = False,
        config_text: str | None = None) -> ResultTable:
    """Run ``cfg.experiment`` and write results.csv/json, the config copy and provenance to ``out_dir``."""
    if cfg.experiment is None:
        raise ValueError("config does not name an experiment")
    out_dir = Path(out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started, started_at = time.time(), datetime.now(timezone.utc).isoformat(timespec="seconds")
    runner = Runner(cfg, out_dir, jobs=max(1, int(jobs)), resume=resume)
    exp = cfg.experiment
    if exp == "glm_sweep":
        table = run_glm_sweep(runner)
    elif exp == "corr_check":
        table = run_corr_check(runner)
    else:
        domains = load_domains(cfg)
        table = {"task_sweep": run_task_sweep, "layer_sweep": run_layer_sweep, "oracle_init": run_oracle_init,
                 "attribution": run_attribution}[exp](runner, domains)
    _write_run_files(cfg, out_dir, table, config_text, runner, started, started_at)
    return table


# ---------------------------------------------------------------- single-shot commands

def make_dataset(cfg: ExperimentConfig, beta: float, n: int, split: str, path) -> dict:
    left, right = (_load_domain(c, cfg, split, cfg.data.train_per_class if split == "train" else cfg.data.test_per_class)
                   for c in (cfg.data.left, cfg.data.right))
    stream = experiment_stream(cfg.seed, "make_dataset").derive(f"beta={beta:.6g}").derive(split)
    ds = sample_concat(beta, left, right, n, stream)
    save_dataset(ds, path)
    rep = estimate_task_correlation(ds)
    return {"beta": float(beta), "n": n, "split": split, "mean_corr": rep.mean_corr}


def _single_cell(cfg: ExperimentConfig, beta: float, seed: int):
    return experiment_stream(cfg.seed, "single").derive(f"beta={beta:.6g}").derive(seed)


def train_single(cfg: ExperimentConfig, beta: float, seed: int, out_dir) -> ResultTable:
    """Train one Alice network and save it as ``alice.xfn``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    domains = load_domains(cfg)
    cell = _single_cell(cfg, beta, seed)
    src, test = _cell_data(cfg, domains, beta, cell)
    net = build_network(cfg.model.arch, input_shape(cfg), cell.derive("init"), init=cfg.model.init,
                        profile=PROFILES[cfg.model.profile])
    history = train(net, src, "alice", _optimizer(cfg.alice), rng=cell.derive("alice"))
    save_network(net, out_dir / "alice.xfn")
    row = {"beta": float(beta), "seed": seed, "init": cfg.model.init, "final_loss": history.final_loss,
           "alice_acc": evaluate(net, test, "alice"), "bob_acc_no_finetune": evaluate(net, test, "bob")}
    return ResultTable(list(row), [row])


def finetune_single(cfg: ExperimentConfig, checkpoint, ell: int | None, beta: float, seed: int,
                    out_dir) -> ResultTable:
    """Fine-tune a saved Alice network for Bob's labels, freezing layers ``1..ell-1``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    alice = load_network(checkpoint)
    domains = load_domains(cfg)
    cell = _single_cell(cfg, beta, seed)
    src, test = _cell_data(cfg, domains, beta, cell)
    ell = alice.num_blocks if ell is None else ell
    alice.apply_plan(None)
    bob, history = finetune(alice, src, _optimizer(cfg.bob), ell, cell.derive("bob"))
    bob.apply_plan(FreezePlan(ell))
    save_network(bob, out_dir / "bob.xfn")
    row = {"beta": float(beta), "seed": seed, "ell": ell, "final_loss": history.final_loss,
           "bob_acc": evaluate(bob, test, "bob")}
    return ResultTable(list(row), [row])
