"""Toy study with generalized linear models and controlled feature correlation.

Inputs ``x`` in R^{2k} are zero-mean Gaussian with covariance ``Sigma(alpha)``.
Alice's label depends on the first k features, Bob's on the last k. Alice fits
``sigma(w.x)`` with an L2 penalty; Bob keeps ``w`` frozen and refits only a
scalar ``v'`` on top of it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss
from .numkit import RngStream, cholesky, log1p_exp, sample_mvn, stable_sigmoid


class Scenario(str, enum.Enum):
    PAIRWISE = "pairwise"
    GLOBAL = "global"


@dataclass(frozen=True)
class CorrelationSpec:
    alpha: float
    k: int
    scenario: Scenario = Scenario.PAIRWISE

    def __post_init__(self):
        if not -1.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [-1, 1], got {self.alpha}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "scenario", Scenario(self.scenario))


@dataclass
class GlmParams:
    w: np.ndarray
    v: float
    lam: float
    grad_norm: float = float("nan")
    steps: int = 0
    converged: bool = False
    losses: list = field(default_factory=list)


@dataclass
class GlmDataset:
    x: np.ndarray
    y_alice: np.ndarray
    y_bob: np.ndarray

    def __post_init__(self):
        n = self.x.shape[0]
        if self.y_alice.shape != (n,) or self.y_bob.shape != (n,):
            raise ValueError("label vectors must have one entry per row of x")


@dataclass
class GlmConfig:
    lam: float = 0.03
    n_train: int = 50_000
    n_test: int = 50_000
    seeds: int = 3
    steps: int = 200
    lr: float = 1.0
    method: str = "newton"


def build_covariance(spec: CorrelationSpec) -> np.ndarray:
    k, a = spec.k, spec.alpha
    eye = np.eye(2 * k)
    if spec.scenario is Scenario.PAIRWISE:
        ik = np.eye(k)
        d = np.block([[ik, ik], [ik, ik]])
        return (1.0 - a) * eye + a * d
    ones = np.ones((k, k))
    d = np.block([[abs(a) * ones, a * ones], [a * ones, abs(a) * ones]])
    return (1.0 - a) * eye + d


def sample_glm_dataset(spec: CorrelationSpec, n: int, rng: RngStream) -> GlmDataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    factor = cholesky(build_covariance(spec))
    x = sample_mvn(factor, n, rng.derive("features"))
    u = rng.derive("labels").generator().random((2, n))
    k = spec.k
    y_alice = (u[0] < stable_sigmoid(x[:, :k].sum(axis=1))).astype(np.uint8)
    y_bob = (u[1] < stable_sigmoid(x[:, k:].sum(axis=1))).astype(np.uint8)
    return GlmDataset(x, y_alice, y_bob)


def _alice_objective(w, x, y, lam):
    z = x @ w
    loss = float(np.mean(log1p_exp(z) - y * z) + lam * w @ w)
    p = stable_sigmoid(z)
    grad = x.T @ (p - y) / len(y) + 2.0 * lam * w
    return loss, grad, p


def train_alice_glm(data: GlmDataset, lam: float, steps: int = 200, lr: float = 1.0,
                    method: str = "newton", tol: float = 1e-5) -> GlmParams:
    """Fit Alice's first-layer weights with ``v`` clamped to 1.

    ``method="gd"`` runs plain full-batch gradient descent with step ``lr``.
    ``method="newton"`` takes Newton steps of at most ``lr`` with Armijo
    backtracking, which reaches the gradient tolerance in a handful of
    iterations even when ``|alpha|`` is close to 1.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if method not in ("gd", "newton"):
        raise ValueError(f"unknown method {method!r}")
    x = np.asarray(data.x, dtype=np.float64)
    y = data.y_alice.astype(np.float64)
    w = np.zeros(x.shape[1])
    loss, grad, p = _alice_objective(w, x, y, lam)
    losses = [loss]
    done = 0
    while done < steps and np.linalg.norm(grad) >= tol:
        if method == "gd":
            w = w - lr * grad
            loss, grad, p = _alice_objective(w, x, y, lam)
        else:
            hess = (x.T * (p * (1.0 - p))) @ x / len(y) + 2.0 * lam * np.eye(len(w))
            direction = -np.linalg.solve(hess, grad)
            slope = grad @ direction
            t = lr
            while True:
                w_new = w + t * direction
                new_loss, new_grad, new_p = _alice_objective(w_new, x, y, lam)
                if new_loss <= loss + 1e-4 * t * slope or t < 1e-10:
                    break
                t *= 0.5
            w, loss, grad, p = w_new, new_loss, new_grad, new_p
        done += 1
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"Alice's loss became {loss} at step {done}; lr={lr} is too large")
        losses.append(loss)
    gnorm = float(np.linalg.norm(grad))
    return GlmParams(w=w, v=1.0, lam=lam, grad_norm=gnorm, steps=done,
                     converged=gnorm < tol, losses=losses)


def bob_loss_grad(v: float, w_star, data: GlmDataset) -> tuple[float, float]:
    f = data.x @ np.asarray(w_star, dtype=np.float64)
    y = data.y_bob.astype(np.float64)
    z = v * f
    loss = float(np.mean(log1p_exp(z) - y * z))
    grad = float(np.mean((stable_sigmoid(z) - y) * f))
    return loss, grad


def finetune_bob_scalar(w_star, data: GlmDataset, steps: int = 100, lr: float = 1.0,
                        tol: float = 1e-6) -> float:
    """Refit the scalar output weight ``v'`` on Bob's labels with ``w_star`` frozen."""
    w_star = np.asarray(w_star, dtype=np.float64)
    if not np.all(np.isfinite(w_star)):
        raise ValueError("w_star must be finite")
    f = data.x @ w_star
    y = data.y_bob.astype(np.float64)

    def objective(v):
        z = v * f
        p = stable_sigmoid(z)
        return float(np.mean(log1p_exp(z) - y * z)), float(np.mean((p - y) * f)), p

    v = 0.0
    loss, grad, p = objective(v)
    for _ in range(steps):
        if abs(grad) < tol:
            break
        curv = float(np.mean(p * (1.0 - p) * f * f))
        if curv <= 0.0:
            break
        step = -grad / curv
        t = lr
        while True:
            new_loss, new_grad, new_p = objective(v + t * step)
            if new_loss <= loss - 1e-4 * t * abs(grad * step) or t < 1e-12:
                break
            t *= 0.5
        v, loss, grad, p = v + t * step, new_loss, new_grad, new_p
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"Bob's loss became {loss}")
    return float(v)


def evaluate_glm(w, v: float, data: GlmDataset, labels: str = "bob") -> float:
    """Accuracy in percent; ``sigma(v w.x) > 0.5`` predicts 1, ties go to 0."""
    y = data.y_bob if labels == "bob" else data.y_alice
    pred = (v * (data.x @ np.asarray(w, dtype=np.float64)) > 0.0).astype(np.uint8)
    return 100.0 * float(np.mean(pred == y))


def run_glm_cell(scenario, alpha: float, k: int, seed_index: int, cfg: GlmConfig,
                 base: RngStream) -> tuple[float, float]:
    """Train Alice, evaluate Bob without and with fine-tuning. Returns both accuracies."""
    spec = CorrelationSpec(alpha, k, Scenario(scenario))
    cell = base.derive(f"{spec.scenario.value}/alpha={alpha:.6g}/k={k}/seed={seed_index}")
    train = sample_glm_dataset(spec, cfg.n_train, cell.derive("train"))
    test = sample_glm_dataset(spec, cfg.n_test, cell.derive("test"))
    alice = train_alice_glm(train, cfg.lam, steps=cfg.steps, lr=cfg.lr, method=cfg.method)
    acc_pre = evaluate_glm(alice.w, alice.v, test, labels="bob")
    v_bob = finetune_bob_scalar(alice.w, train)
    acc_ft = evaluate_glm(alice.w, v_bob, test, labels="bob")
    return acc_pre, acc_ft


def _stderr(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def sweep_alpha(grid, ks, scenario, cfg: GlmConfig | None = None,
                base: RngStream | None = None, map_fn=map, seed_indices=None) -> list[dict]:
    """One row per (alpha, k) with seed-averaged accuracies and standard errors.

    ``map_fn`` lets callers run cells on a worker pool; each cell seeds itself
    from its own coordinates, so results do not depend on execution order.
    ``seed_indices`` overrides the default seeds ``0..cfg.seeds-1``.
    """
    cfg = cfg or GlmConfig()
    base = base or RngStream(0)
    scenario = Scenario(scenario)
    for a in grid:
        if not -1.0 <= a <= 1.0:
            raise ValueError(f"alpha {a} outside [-1, 1]")
    seeds = list(range(cfg.seeds)) if seed_indices is None else [int(s) for s in seed_indices]
    cells = [(scenario.value, float(a), int(k), s) for k in ks for a in grid for s in seeds]
    results = list(map_fn(_cell_task, [(c, cfg, base) for c in cells]))
    rows = []
    for k in ks:
        for a in grid:
            vals = [r for c, r in zip(cells, results) if c[1] == float(a) and c[2] == int(k)]
            pre = [r[0] for r in vals]
            ft = [r[1] for r in vals]
            rows.append({
                "scenario": scenario.value,
                "alpha": float(a),
                "k": int(k),
                "seed_count": len(vals),
                "acc_pretrained": float(np.mean(pre)),
                "acc_finetuned": float(np.mean(ft)),
                "stderr_pretrained": _stderr(pre),
                "stderr_finetuned": _stderr(ft),
            })
    return rows


def _cell_task(args):
    (scenario, alpha, k, s), cfg, base = args
    return run_glm_cell(scenario, alpha, k, s, cfg, base)
