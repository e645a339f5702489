import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hamgen.data import Layout
from hamgen.fileio import ChecksumError
from hamgen.models import (
    GanModel, SplitVaeModel, VaeModel, adversarial_terms, build_model, discriminator_terms,
    generate, kl_normal, load_model, save_model, splitvae_loss, vae_losses,
)
from hamgen.nn import Adam, make_rng
from hamgen.physics import heading_residual_sq, zermelo_hamiltonian_sq
from hamgen.synth import MinThreatConfig, ZermeloConfig, build_dataset

from gradcheck import RTOL, fd_compare, max_rel

ZL = Layout.zermelo(25)


@pytest.fixture(scope="module")
def otd():
    return build_dataset(ZermeloConfig(), 16, seed=5)


def test_discriminator_perfect_and_constant():
    assert discriminator_terms(np.ones((4, 1)), np.zeros((3, 1)))[0] == 0.0
    assert discriminator_terms(np.full((4, 1), 0.5), np.full((4, 1), 0.5))[0] == pytest.approx(0.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_discriminator_loss_bounded(r, f):
    loss = discriminator_terms(np.array(r)[:, None], np.array(f)[:, None])[0]
    assert 0.0 <= loss <= 2.0


def test_discriminator_rejects_empty():
    with pytest.raises(ValueError):
        discriminator_terms(np.zeros((0, 1)), np.zeros((2, 1)))


def test_bce_option():
    loss, _, _ = discriminator_terms(np.full((2, 1), 0.5), np.full((2, 1), 0.5), "bce")
    assert loss == pytest.approx(2 * np.log(2))
    assert adversarial_terms(np.full((2, 1), 0.5), "bce")[0] == pytest.approx(np.log(2))
    with pytest.raises(ValueError):
        adversarial_terms(np.zeros((1, 1)), "hinge")


def test_kl_closed_form_values():
    assert kl_normal(np.zeros(4), np.zeros(4))[0] == 0.0
    assert kl_normal(np.array([1.0, 0, 0]), np.zeros(3))[0] == pytest.approx(0.5)


def test_kl_matches_monte_carlo():
    rng = make_rng(0)
    for _ in range(5):
        mu, lv = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        sd = np.exp(0.5 * lv)
        z = mu + sd * rng.standard_normal((100_000, 3))
        logq = -0.5 * np.sum(((z - mu) / sd) ** 2 + lv, axis=1)
        logp = -0.5 * np.sum(z * z, axis=1)
        mc = np.mean(logq - logp)
        exact = kl_normal(mu, lv)[0]
        assert abs(mc - exact) < 0.02 * exact + 2e-3


def test_kl_gradient_fd():
    rng = make_rng(1)
    mu, lv = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
    _, gm, gl = kl_normal(mu, lv)
    res = fd_compare(lambda: kl_normal(mu, lv)[0], [mu, lv], [gm, gl], rng, n_probe=12)
    assert max_rel(res) < RTOL


def _gan_with_constant_disc(variant):
    # zero last layer and a large bias: D == 1 to machine precision
    m = GanModel.build(variant, ZL, 1.0, make_rng(0), dropout=0.0)
    m.disc.weights[-1][:] = 0.0
    m.disc.biases[-1][:] = 40.0
    return m


def test_generator_loss_zero_on_optimal_data(otd):
    # adversarial part vanishes when D says "real"; physics parts vanish on extremals
    for variant in ("s_gan", "z_gan1", "z_gan2"):
        m = _gan_with_constant_disc(variant)
        terms, _ = m.physics_terms(otd.X)
        adv = adversarial_terms(m.discriminate(otd.X)[0])[0]
        assert adv < 1e-30
        assert all(v < 1e-12 for v in terms.values())


def test_hamiltonian_penalty_convention():
    # p = 0 makes H = 1 everywhere; set wind/heading so that H = 2 instead: p1 = 1, u = 0, V = 1, w = 0
    x = np.zeros((1, 175))
    x[0, ZL.out_index(3)] = 1.0
    h, _ = zermelo_hamiltonian_sq(ZL, x, 1.0)
    assert h[0] == pytest.approx(25 * 4.0)
    m = _gan_with_constant_disc("z_gan1")
    terms, _ = m.physics_terms(x)
    assert terms["hamiltonian"] == pytest.approx(100.0)


def test_z_gan2_reduces_to_z_gan1():
    a = GanModel.build("z_gan1", ZL, 1.0, make_rng(3), dropout=0.0)
    b = GanModel.build("z_gan2", ZL, 1.0, make_rng(3), dropout=0.0, alpha2=0.0)
    z = make_rng(4).uniform(-1, 1, (5, 20))
    assert a.generator_loss(z).total == pytest.approx(b.generator_loss(z).total, rel=1e-12)


def test_z_losses_dominate_s_loss():
    z = make_rng(4).uniform(-1, 1, (5, 20))
    vals = [GanModel.build(v, ZL, 1.0, make_rng(3), dropout=0.0).generator_loss(z).total
            for v in ("s_gan", "z_gan1", "z_gan2")]
    assert 0 <= vals[0] <= vals[1] <= vals[2]


def test_heading_residual_literal_form():
    x = np.zeros((1, 175))
    x[0, ZL.out_index(2)] = 0.3
    x[0, ZL.out_index(3)] = -np.cos(0.3)
    x[0, ZL.out_index(4)] = -np.sin(0.3)
    assert heading_residual_sq(ZL, x)[0][0] < 1e-30
    assert heading_residual_sq(ZL, x, literal=True)[0][0] < 1e-25


@pytest.mark.parametrize("literal", [False, True])
def test_physics_gradients_fd(literal):
    rng = make_rng(7)
    x = rng.normal(size=(3, 175))
    x[:, ZL.out_index(3)] += 2.0  # keep p1 away from the quotient pole
    for fn in (lambda X: zermelo_hamiltonian_sq(ZL, X, 1.3),
               lambda X: heading_residual_sq(ZL, X, literal)):
        _, g = fn(x)
        res = fd_compare(lambda: float(np.sum(fn(x)[0])), [x], [g], rng, n_probe=30)
        assert max_rel(res) < RTOL


def test_vae_encoder_shapes():
    m = VaeModel.build("z_vae", ZL, 1.0, make_rng(0))
    mu, lv = m.encode(np.zeros((2, 175)))
    assert mu.shape == lv.shape == (2, 32)


def test_perfect_autoencoding_total_is_tiny(otd):
    # decoder returns the datum exactly, encoder returns mu = 0 and logvar = 0
    m = VaeModel.build("z_vae", ZL, 1.0, make_rng(0))
    for w in m.enc.weights:
        w[:] = 0
    x = otd.X[:1]
    m.dec.weights[-1][:] = 0
    m.dec.biases[-1][:] = x[0]
    res = m.loss(x, make_rng(1))
    assert res.terms["recon"] < 1e-20 and res.terms["kl"] == 0.0
    assert res.terms["hamiltonian"] < 2.5e-5
    assert res.total < 1e-6


def _split_batch():
    rng = make_rng(2)
    return rng.normal(size=(6, 175)), np.array([1, 0, 1, 0, 0, 1], bool)


def test_split_requires_observed():
    m = SplitVaeModel.build(ZL, 1.0, make_rng(0), split=(3, 2))
    X, _ = _split_batch()
    with pytest.raises(ValueError):
        m.loss(X, np.zeros(6, bool), make_rng(1))


def test_split_all_observed_drops_kl2():
    m = SplitVaeModel.build(ZL, 1.0, make_rng(0), split=(3, 2))
    X, _ = _split_batch()
    assert m.loss(X, np.ones(6, bool), make_rng(1)).terms["kl2"] == 0.0
    m.kl2_on_observed = True
    assert m.loss(X, np.ones(6, bool), make_rng(1)).terms["kl2"] > 0.0


def test_split_standard_normal_posteriors_give_pure_recon():
    m = SplitVaeModel.build(ZL, 1.0, make_rng(0), split=(3, 2))
    for w in m.enc.weights:
        w[:] = 0
    for b in m.enc.biases:
        b[:] = 0
    X, obs = _split_batch()
    res = m.loss(X, obs, make_rng(1))
    assert res.terms["kl1"] == 0.0 and res.terms["kl2"] == 0.0
    assert res.total == res.terms["recon"]
    # model rows never enter the reconstruction: changing them leaves it unchanged
    X2 = X.copy()
    X2[~obs] += 100.0
    assert m.loss(X2, obs, make_rng(1)).terms["recon"] == res.terms["recon"]


def _check_grads(model, loss_fn, seed):
    res = loss_fn()
    for name, net in model.networks.items():
        if name not in res.grads:
            continue
        r = fd_compare(lambda: loss_fn().total, net.parameters(), res.grads[name], make_rng(seed), n_probe=20)
        assert max_rel(r) < RTOL, (name, r)


@pytest.mark.parametrize("variant", ["s_gan", "z_gan1", "z_gan2"])
def test_gan_gradients_fd(variant, otd):
    m = build_model(variant, ZL, 1.0, make_rng(10))
    z = make_rng(11).uniform(-1, 1, (4, 20))
    fake = m.gen(z)
    _check_grads(m, lambda: m.discriminator_loss(otd.X[:4], fake, make_rng(12)), 13)
    _check_grads(m, lambda: m.generator_loss(z, make_rng(14)), 15)


@pytest.mark.parametrize("variant", ["s_vae", "z_vae"])
def test_vae_gradients_fd(variant, otd):
    m = build_model(variant, ZL, 1.0, make_rng(20))
    _check_grads(m, lambda: vae_losses(m, otd.X[:4], make_rng(21)), 22)


def test_z_vae_prior_penalty_gradients_fd(otd):
    m = build_model("z_vae", ZL, 1.0, make_rng(23), alpha2=30.0, prior_penalty=True)
    m.fit_scaler(otd.X)
    res = vae_losses(m, otd.X[:4], make_rng(21))
    assert res.terms["hamiltonian_prior"] > 0
    _check_grads(m, lambda: vae_losses(m, otd.X[:4], make_rng(21)), 24)


def test_prior_penalty_ignored_by_s_vae(otd):
    m = build_model("s_vae", ZL, 1.0, make_rng(23), prior_penalty=True)
    assert set(vae_losses(m, otd.X[:4], make_rng(21)).terms) == {"recon", "kl"}


@pytest.mark.parametrize("kl2_obs", [False, True])
def test_split_gradients_fd(kl2_obs):
    lay = Layout.lti(3, 20)
    m = build_model("split_vae", lay, 1.0, make_rng(30), kl2_on_observed=kl2_obs)
    X = make_rng(31).normal(size=(6, 60))
    obs = np.array([1, 1, 0, 0, 1, 0], bool)
    _check_grads(m, lambda: splitvae_loss(m, X, obs, make_rng(32)), 33)


def test_architectures_follow_tables():
    g = build_model("s_gan", ZL, 1.0, make_rng(0))
    assert g.gen.spec.layer_sizes == (20, 64, 100, 225, 324, 400, 441, 625, 900, 175)
    assert g.disc.spec.layer_sizes == (50, 900, 625, 441, 400, 324, 225, 100, 25, 1)
    assert g.disc.spec.activations[-1] == "sigmoid" and g.gen.spec.dropout == 0.2
    s = build_model("s_vae", ZL, 1.0, make_rng(0))
    assert s.enc.spec.layer_sizes == (175, 324, 225, 196, 125, 100, 81, 64)
    assert s.dec.spec.layer_sizes == (32, 81, 100, 125, 196, 225, 324, 175)
    z = build_model("z_vae", ZL, 1.0, make_rng(0))
    assert z.enc.spec.layer_sizes == (175, 225, 196, 125, 100, 81, 64)
    mt = MinThreatConfig().layout()
    sp = build_model("split_vae", mt, 1.0, make_rng(0))
    assert sp.enc.spec.layer_sizes == (2057, 625, 400, 225, 80)
    assert sp.dec.spec.layer_sizes == (40, 225, 400, 625, 2057) and sp.enc.spec.layer_norm
    lti = build_model("split_vae", Layout.lti(10, 1001), 1.0, make_rng(0))
    assert lti.split == (16, 16)


def test_physics_variants_need_zermelo():
    with pytest.raises(ValueError):
        build_model("z_vae", Layout.lti(2, 5), 1.0, make_rng(0))
    with pytest.raises(ValueError):
        build_model("nope", ZL, 1.0, make_rng(0))


def test_discriminator_output_in_unit_interval():
    g = build_model("s_gan", ZL, 1.0, make_rng(0))
    d = g.discriminate(make_rng(1).normal(size=(10, 175)) * 10)[0]
    assert np.all((d > 0) & (d < 1))


@pytest.mark.parametrize("variant", ["s_gan", "s_vae", "split_vae"])
def test_generate(variant):
    lay = ZL if variant != "split_vae" else Layout.lti(2, 30)
    m = build_model(variant, lay, 1.0, make_rng(0))
    a = generate(m, 7, make_rng(1))
    b = generate(m, 7, make_rng(1))
    assert a.X.shape == (7, lay.n_x) and a.X.tobytes() == b.X.tobytes()
    assert a.provenance == ["generated"] * 7
    assert len(generate(m, 0, make_rng(1))) == 0


def test_gan_latent_is_uniform_hypercube():
    m = build_model("s_gan", ZL, 1.0, make_rng(0))
    assert m.latent.law == "uniform" and m.latent.dim == 20


@pytest.mark.parametrize("variant", ["z_gan2", "z_vae", "split_vae"])
def test_checkpoint_roundtrip(tmp_path, variant):
    lay = ZL if variant != "split_vae" else Layout.lti(2, 30)
    m = build_model(variant, lay, 1.3, make_rng(0), alpha1=0.5)
    opts = {k: Adam(n.parameters(), lr=0.01) for k, n in m.networks.items()}
    for k, net in m.networks.items():
        opts[k].step([np.ones_like(p) for p in net.parameters()])
    save_model(m, tmp_path / "m.ckpt", opts, {"seed": 4})
    back, header, restore = load_model(tmp_path / "m.ckpt")
    assert header["variant"] == variant and header["meta"]["seed"] == 4
    assert back.V == 1.3 and back.alpha1 == 0.5
    for k, net in m.networks.items():
        for p, q in zip(net.parameters(), back.networks[k].parameters()):
            assert p.tobytes() == q.tobytes()
        opt = restore(k, 0.01)
        assert opt.t == 1 and opt.m[0].tobytes() == opts[k].m[0].tobytes()
    assert generate(back, 3, make_rng(5)).X.tobytes() == generate(m, 3, make_rng(5)).X.tobytes()


def test_checkpoint_corruption(tmp_path):
    m = build_model("s_vae", Layout.lti(2, 10), 1.0, make_rng(0))
    save_model(m, tmp_path / "m.ckpt")
    blob = bytearray((tmp_path / "m.ckpt").read_bytes())
    blob[len(blob) // 2] ^= 0x40
    (tmp_path / "m.ckpt").write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_model(tmp_path / "m.ckpt")
