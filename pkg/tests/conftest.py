import numpy as np
import pytest

from xferlab.dataforge import EpochSource, glyph_domain, sample_concat
from xferlab.nncore import DESK, OptimizerConfig, build_network, train
from xferlab.numkit import RngStream

DESK_SHAPE = (16, 32, 3)


def bayes_accuracy_oracle(scale=1.0, nodes=200):
    """E[max(s(x), 1 - s(x))] for x ~ N(0, scale^2), by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    p = 1.0 / (1.0 + np.exp(-scale * x))
    return float(np.sum(w * np.maximum(p, 1 - p)) / np.sqrt(2 * np.pi))


@pytest.fixture(scope="session")
def desk_domains():
    return {
        "left": glyph_domain("glyphA", 600, 16, 16, 3),
        "right": glyph_domain("glyphB", 600, 16, 16, 3),
        "left_test": glyph_domain("glyphA", 200, 16, 16, 3, split="test"),
        "right_test": glyph_domain("glyphB", 200, 16, 16, 3, split="test"),
    }


def _train_alice(domains, beta, label):
    d = domains
    cell = RngStream(11).derive(label)
    src = EpochSource(beta, d["left"], d["right"], cell.derive("train"), 10000)
    test = sample_concat(beta, d["left_test"], d["right_test"], 2000, cell.derive("test"))
    net = build_network("fc", DESK_SHAPE, cell.derive("init"), profile=DESK)
    train(net, src, "alice", OptimizerConfig(), rng=cell.derive("alice"))
    return net, src, test


@pytest.fixture(scope="session")
def alice_beta0(desk_domains):
    """Alice's desk FC network trained at beta=0, with its data source and test pairs."""
    return _train_alice(desk_domains, 0.0, "fixture")


@pytest.fixture(scope="session")
def alice_beta1(desk_domains):
    return _train_alice(desk_domains, 1.0, "fixture-beta1")


# criterion number -> list of (check name, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion: int, check: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    print(f"criterion {criterion} [{check}]: {'PASS' if passed else 'FAIL'} ({detail})")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        failed = [c for c, p, _ in checks if not p]
        detail = "; ".join(f"{c}: {d}" for c, _, d in checks)
        status = "PASS" if ok else f"FAIL (failing: {', '.join(failed)})"
        terminalreporter.write_line(f"CRITERION {crit}: {status} | {detail}")
