import numpy as np
import pytest

from conftest import DESK_SHAPE
from xferlab.dataforge import PairedDataset
from xferlab.errors import BadMagic, NonFiniteLoss, ShapeMismatch, Truncated
from xferlab.nncore import (DESK, GRADCHECK_KINDS, BatchNorm, Dense, Dropout, Flatten, FreezePlan,
                            Network, OptimizerConfig, ReLU, SoftmaxOutput, build_network, cosine_lr,
                            dump_network, evaluate, finetune, gradient_check, layer_sweep, load_network,
                            parse_network, right_half_mask, save_network, softmax_cross_entropy, train)
from xferlab.numkit import RngStream

SHORT = OptimizerConfig(lr=0.01, epochs=1)


def _tiny_data(n=300, seed=0, shape=DESK_SHAPE):
    g = np.random.default_rng(seed)
    x = g.integers(0, 256, size=(n, *shape), dtype=np.uint8)
    y = g.integers(0, 10, size=n).astype(np.uint8)
    return PairedDataset(x, y, y[::-1].copy(), 0.0, "a", "b")


# ---- construction


def test_fc_full_width_shapes():
    net = build_network("fc", (32, 64, 3), RngStream(0))
    dense = [l for l in net.layers if l.has_params and isinstance(l, Dense)]
    assert [l.params["W"].shape for l in dense] == [(6144, 1024), (1024, 512), (512, 10)]
    assert net.m == 2


def test_conv_desk_forward_on_zero_image():
    net = build_network("conv", (32, 64, 3), RngStream(0), profile=DESK)
    assert net.m == 8 and net.num_classes == 10
    p = net.forward(np.zeros((2, 32, 64, 3), np.float32))
    assert p.shape == (2, 10)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_conv_full_width_filter_counts():
    net = build_network("conv", (32, 64, 3), RngStream(0))
    filters = [l.params["W"].shape[-1] for l in net.layers if l.kind == "conv2d"]
    assert filters == [32, 64, 128, 256, 512, 1024]
    assert all(l.params["W"].shape[:2] == (3, 3) for l in net.layers if l.kind == "conv2d")


def test_custom_layer_list_needs_output_last():
    with pytest.raises(ValueError):
        build_network([Flatten(), Dense(4)], (2, 2, 1), RngStream(0))
    with pytest.raises(ShapeMismatch):
        build_network("fc", (4, 4), RngStream(0))


def test_shape_mismatch_on_forward():
    net = build_network("fc", DESK_SHAPE, RngStream(0), profile=DESK)
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((1, 16, 16, 3), np.float32))


def test_zero_right_half_init():
    net = build_network("fc", (32, 64, 3), RngStream(1), init="zero_right_half")
    w = net.layers[1].params["W"]
    mask = right_half_mask((32, 64, 3))
    assert mask.sum() == 3072
    assert np.abs(w[mask]).sum() == 0.0 and np.abs(w[~mask]).sum() > 0
    with pytest.raises(ValueError):
        build_network("conv", (32, 64, 3), RngStream(1), init="zero_right_half", profile=DESK)


# ---- forward


def test_init_probabilities_are_near_uniform():
    net = build_network("fc", DESK_SHAPE, RngStream(2), profile=DESK)
    x = np.random.default_rng(0).integers(0, 256, size=(1000, *DESK_SHAPE), dtype=np.uint8)
    p = net.forward(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert p.max() < 0.3


def test_eval_mode_is_deterministic():
    net = build_network("conv", DESK_SHAPE, RngStream(2), profile=DESK)
    x = np.random.default_rng(1).random((1, *DESK_SHAPE)).astype(np.float32)
    p = net.forward(np.concatenate([x, x]))
    np.testing.assert_array_equal(p[0], p[1])
    np.testing.assert_array_equal(p, net.forward(np.concatenate([x, x])))


def test_cross_entropy_is_stable_for_huge_logits():
    logits = np.array([[1e3, -1e3, 0.0], [-1e3, -1e3, -1e3]])
    loss, grad = softmax_cross_entropy(logits, np.array([1, 2]))
    assert np.isfinite(loss) and np.all(np.isfinite(grad))
    assert loss == pytest.approx((2e3 + np.log(3)) / 2)


def test_dropout_expectation_matches_eval():
    d = Dropout(0.25)
    d.rng = np.random.default_rng(0)
    x = np.ones((100000, 1))
    assert abs(d.forward(x, train=True).mean() - 1.0) < 0.01
    np.testing.assert_array_equal(d.forward(x, train=False), x)
    with pytest.raises(ValueError):
        Dropout(1.0)


# ---- gradients


@pytest.mark.parametrize("kind", GRADCHECK_KINDS)
def test_gradient_check_random_configs(kind):
    for i in range(5):
        assert gradient_check(kind, RngStream(100).derive(kind).derive(i)) < 1e-4


def test_gradient_check_named_examples():
    assert gradient_check("dense", RngStream(1), **{"in": 7, "out": 5}) < 1e-4
    assert gradient_check("conv2d", RngStream(2), n=1, h=6, w=6, cin=1, filters=2) < 1e-4
    assert gradient_check("batchnorm", RngStream(3), shape=(8, 4), train=True) < 1e-4
    assert gradient_check("batchnorm", RngStream(3), shape=(8, 4), train=False) < 1e-4


def test_network_input_gradient_matches_finite_differences():
    net = Network([Flatten(), Dense(6), BatchNorm(), ReLU(), SoftmaxOutput(3)], (2, 3, 1), RngStream(4),
                  dtype=np.float64)
    x = np.random.default_rng(0).standard_normal((1, 2, 3, 1))
    net.logits(x)
    d = np.zeros((1, 3))
    d[0, 2] = 1.0
    g = net.backward(d, input_grad=True, param_grads=False)
    num = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = 1e-5
        num[i] = (net.logits(x + e)[0, 2] - net.logits(x - e)[0, 2]) / 2e-5
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)


# ---- optimizer and training


def test_cosine_schedule():
    assert cosine_lr(0, 100, 0.3, 0.0) == pytest.approx(0.3)
    assert cosine_lr(100, 100, 0.3, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert cosine_lr(50, 100, 0.3, 0.0) == pytest.approx(0.15)
    lrs = [cosine_lr(t, 40, 0.3, 0.0) for t in range(41)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(lr=-1)
    with pytest.raises(ValueError):
        OptimizerConfig(batch_size=0)


def test_zero_lr_leaves_parameters_identical():
    net = build_network("conv", DESK_SHAPE, RngStream(5), profile=DESK)
    before = [p for l in net.layers for p in l.params.values()]
    before = [p.copy() for p in before]
    train(net, _tiny_data(), "alice", OptimizerConfig(lr=0.0, weight_decay=0.0, epochs=1), rng=RngStream(1))
    after = [p for l in net.layers for p in l.params.values()]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


@pytest.mark.parametrize("ell", [2, 3])
def test_freeze_integrity_is_bitwise(ell):
    net = build_network("fc", DESK_SHAPE, RngStream(6), profile=DESK)
    frozen = [net.block_snapshot(b) for b in range(1, ell)]
    train(net, _tiny_data(), "bob", SHORT, FreezePlan(ell), RngStream(2))
    for b in range(1, ell):
        assert all(np.array_equal(x, y) for x, y in zip(frozen[b - 1], net.block_snapshot(b)))
    assert not all(np.array_equal(x, y) for x, y in
                   zip(build_network("fc", DESK_SHAPE, RngStream(6), profile=DESK).block_snapshot(ell),
                       net.block_snapshot(ell)))


def test_freeze_plan_range():
    net = build_network("fc", DESK_SHAPE, RngStream(6), profile=DESK)
    with pytest.raises(ValueError):
        net.apply_plan(FreezePlan(4))


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        net = build_network("fc", DESK_SHAPE, RngStream(7), profile=DESK)
        log = train(net, _tiny_data(), "alice", OptimizerConfig(lr=0.01, epochs=2), rng=RngStream(3))
        runs.append((log.epochs, dump_network(net)))
    assert runs[0] == runs[1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_training_raises():
    net = build_network("fc", DESK_SHAPE, RngStream(8), profile=DESK)
    with pytest.raises(NonFiniteLoss):
        train(net, _tiny_data(), "alice", OptimizerConfig(lr=1e30, epochs=10), rng=RngStream(0))


def test_constant_predictor_on_balanced_data():
    net = Network([Flatten(), SoftmaxOutput(10)], (1, 2, 1), RngStream(0))
    net.layers[1].params["W"][:] = 0
    net.layers[1].params["b"][:] = np.eye(10, dtype=np.float32)[4]
    y = np.repeat(np.arange(10, dtype=np.uint8), 50)
    ds = PairedDataset(np.zeros((500, 1, 2, 1), np.uint8), y, y, 1.0, "a", "b")
    assert evaluate(net, ds, "alice") == pytest.approx(10.0)


# ---- on Alice's trained desk network


def test_alice_learns_her_task(alice_beta0):
    net, _, test = alice_beta0
    assert evaluate(net, test, "alice") >= 90.0


def test_bob_output_layer_only_at_beta_zero(alice_beta0):
    net, src, test = alice_beta0
    bob, _ = finetune(net, src, OptimizerConfig(lr=0.3, epochs=3, schedule="cosine"), rng=RngStream(1))
    acc = evaluate(bob, test, "bob")
    assert 12.0 < acc < evaluate(net, test, "alice") - 20


def test_layer_sweep_last_row_matches_direct_finetune(alice_beta0):
    net, src, test = alice_beta0
    opt = OptimizerConfig(lr=0.3, epochs=1, schedule="cosine")
    rows = layer_sweep(net, src, test, [net.m + 1], opt, RngStream(4))
    bob, _ = finetune(net, src, opt, None, RngStream(4))
    assert rows == [{"ell": net.m + 1, "bob_acc": evaluate(bob, test, "bob")}]
    with pytest.raises(ValueError):
        layer_sweep(net, src, test, [0], opt, RngStream(4))


def test_finetune_leaves_alice_untouched(alice_beta0):
    net, src, _ = alice_beta0
    before = dump_network(net)
    finetune(net, src, OptimizerConfig(lr=0.3, epochs=1), ell=1, rng=RngStream(2))
    assert dump_network(net) == before


# ---- checkpoints


def test_checkpoint_round_trip(tmp_path, alice_beta0):
    net, _, test = alice_beta0
    path = tmp_path / "alice.xfn"
    save_network(net, path)
    back = load_network(path)
    np.testing.assert_array_equal(back.logits(test.x[:50]), net.logits(test.x[:50]))
    assert dump_network(back) == path.read_bytes()


def test_checkpoint_errors():
    raw = dump_network(build_network("fc", DESK_SHAPE, RngStream(0), profile=DESK))
    with pytest.raises(BadMagic):
        parse_network(b"NOPE" + raw[4:])
    with pytest.raises(Truncated):
        parse_network(raw[:-2])
