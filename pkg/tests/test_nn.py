import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hamgen.nn import Adam, LatentSpec, Mlp, MlpSpec, NonFiniteGradient, ShapeError, make_rng, sample_latent

from gradcheck import RTOL, fd_compare, max_rel


def test_identity_layer():
    spec = MlpSpec((2, 2), ("identity",))
    net = Mlp(spec, [np.eye(2)], [np.zeros(2)])
    np.testing.assert_array_equal(net(np.array([3.0, -1.0])), [3.0, -1.0])


def test_relu_clamp():
    spec = MlpSpec((2, 1), ("relu",))
    net = Mlp(spec, [np.array([[1.0], [1.0]])], [np.array([-5.0])])
    np.testing.assert_array_equal(net(np.array([2.0, 2.0])), [0.0])


def test_infer_is_deterministic():
    spec = MlpSpec.build((4, 8, 3), hidden="leaky_relu", dropout=0.2)
    net = Mlp.init(spec, make_rng(0))
    x = np.linspace(-1, 1, 4)
    assert net(x).tobytes() == net(x).tobytes()


def test_shape_error_names_layer():
    net = Mlp.init(MlpSpec.build((3, 4, 2)), make_rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        net(np.ones(5))
    with pytest.raises(ShapeError, match="layer 1"):
        Mlp(net.spec, [np.ones((3, 4)), np.ones((5, 2))], [np.ones(4), np.ones(2)])


def test_backward_linear_case():
    spec = MlpSpec((2, 2), ("identity",))
    net = Mlp(spec, [np.eye(2)], [np.zeros(2)])
    x = np.array([1.0, 2.0])
    out, tape = net.forward(x, train=True)
    # L = 0.5 |out|^2 -> dL/dout = out
    grads, gx = net.backward(tape, out)
    np.testing.assert_allclose(grads[0], np.outer(x, out))
    np.testing.assert_allclose(grads[1], [1.0, 2.0])
    np.testing.assert_allclose(gx, out)


def test_backward_without_forward():
    net = Mlp.init(MlpSpec.build((2, 2)), make_rng(0))
    with pytest.raises(RuntimeError):
        net.backward(None, np.zeros(2))


def test_zero_upstream_gives_zero_grads():
    net = Mlp.init(MlpSpec.build((3, 5, 2), hidden="leaky_relu", layer_norm=True), make_rng(1))
    _, tape = net.forward(np.ones((4, 3)), train=True)
    grads, gx = net.backward(tape, np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(gx == 0)


@pytest.mark.parametrize("hidden,output,ln,p", [
    ("relu", "identity", False, 0.0),
    ("leaky_relu", "sigmoid", False, 0.2),
    ("relu", "identity", True, 0.0),
    ("tanh", "tanh", True, 0.3),
])
def test_backward_matches_finite_differences(hidden, output, ln, p):
    spec = MlpSpec.build((5, 7, 6, 3), hidden=hidden, output=output, layer_norm=ln, dropout=p)
    net = Mlp.init(spec, make_rng(2))
    for b in net.biases:
        b += make_rng(3).normal(0, 0.1, b.shape)
    x = make_rng(4).normal(size=(6, 5))
    target = make_rng(5).normal(size=(6, 3))

    def loss():
        out, _ = net.forward(x, train=True, rng=make_rng(9))
        return 0.5 * np.sum((out - target) ** 2)

    out, tape = net.forward(x, train=True, rng=make_rng(9))
    grads, gx = net.backward(tape, out - target)
    res = fd_compare(loss, net.parameters(), grads, make_rng(7))
    assert max_rel(res) < RTOL
    # input gradient too
    res = fd_compare(loss, [x], [gx], make_rng(8), n_probe=10)
    assert max_rel(res) < RTOL


def test_inverted_dropout_expectation():
    spec = MlpSpec((6, 4, 3), ("identity", "identity"), dropout=0.3)
    net = Mlp.init(spec, make_rng(0))
    x = make_rng(1).normal(size=6)
    rng = make_rng(2)
    xs = np.broadcast_to(x, (10_000, 6))
    mc = net.forward(xs, train=True, rng=rng)[0].mean(axis=0)
    ref = net(x)
    assert np.max(np.abs(mc - ref) / np.abs(ref)) < 0.05


def test_adam_zero_grad():
    w = np.array([1.0, -2.0])
    opt = Adam([w], lr=0.1)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(w, [1.0, -2.0])
    assert opt.t == 1


def test_adam_first_step():
    # m1 = 0.1, v1 = 0.001 -> mhat = 1, vhat = 1 -> w = -0.1 / (1 + 1e-8)
    w = np.array([0.0])
    Adam([w], lr=0.1).step([np.array([1.0])])
    assert w[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_two_steps_by_hand():
    w = np.array([0.0])
    opt = Adam([w], lr=0.1)
    opt.step([np.array([1.0])])
    opt.step([np.array([-2.0])])
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.999 * 0.001 + 0.001 * 4.0
    w2 = -0.1 / (1 + 1e-8) - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert w[0] == pytest.approx(w2, rel=1e-12)


def test_adam_nonfinite():
    opt = Adam([np.zeros(2), np.zeros(3), np.zeros((2, 2))], lr=0.1)
    with pytest.raises(NonFiniteGradient) as err:
        opt.step([np.zeros(2), np.zeros(3), np.array([[0.0, np.nan], [0, 0]])])
    assert err.value.layer == 1


def test_training_determinism():
    def run():
        spec = MlpSpec.build((3, 8, 2), hidden="leaky_relu", dropout=0.2)
        net = Mlp.init(spec, make_rng(11))
        opt = Adam(net.parameters(), lr=0.01)
        rng = make_rng(12)
        for _ in range(5):
            x = rng.normal(size=(4, 3))
            out, tape = net.forward(x, train=True, rng=rng)
            grads, _ = net.backward(tape, out)
            opt.step(grads)
        return b"".join(p.tobytes() for p in net.parameters())

    assert run() == run()


def test_latent_uniform_hypercube():
    z = sample_latent(LatentSpec(20, "uniform"), make_rng(0), n=1000)
    assert z.shape == (1000, 20)
    assert z.min() >= -1 and z.max() <= 1


def test_latent_normal_mean():
    z = sample_latent(LatentSpec(32, "normal"), make_rng(0), n=100_000)
    assert np.max(np.abs(z.mean(axis=0))) < 0.02


def test_latent_empty():
    assert sample_latent(LatentSpec(0), make_rng(0)).shape == (0,)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1), st.text(max_size=8))
def test_rng_streams_reproducible(seed, label):
    a = make_rng(seed, label, 3).random(4)
    b = make_rng(seed, label, 3).random(4)
    assert a.tobytes() == b.tobytes()
