"""Generative models and their losses.

Three adversarial variants share one generator/discriminator pair:

* ``s_gan``: plain least-squares GAN;
* ``z_gan1``: generator also penalized by ``alpha1 * sum_k H_k^2``;
* ``z_gan2``: additionally ``alpha2 *`` the heading/costate relation residual.

Three autoencoders:

* ``s_vae``: reconstruction plus ``alpha1 * KL``;
* ``z_vae``: adds ``alpha2 * sum_k H_k^2`` of the reconstruction;
* ``split_vae``: latent split into a block for observed-only structure and a
  block shared with model data, trained on a mixed dataset.

Every loss returns its value, a per-term breakdown and parameter gradients.
"""
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Layout
from .fileio import read_arrays, write_arrays
from .nn import Adam, LatentSpec, Mlp, MlpSpec, sample_latent
from .physics import heading_residual_sq, zermelo_hamiltonian_sq

GAN_VARIANTS = ("s_gan", "z_gan1", "z_gan2")
VAE_VARIANTS = ("s_vae", "z_vae")
VARIANTS = GAN_VARIANTS + VAE_VARIANTS + ("split_vae",)

GEN_HIDDEN = (64, 100, 225, 324, 400, 441, 625, 900)
DISC_HIDDEN = (900, 625, 441, 400, 324, 225, 100, 25)
GAN_LATENT = 20

# encoder hidden widths; decoders mirror them
VAE_HIDDEN = {
    ("s_vae", "zermelo"): (324, 225, 196, 125, 100, 81),
    ("z_vae", "zermelo"): (225, 196, 125, 100, 81),
}
VAE_HIDDEN_DEFAULT = (225, 196, 125, 100, 81)
VAE_LATENT = 32
SPLIT_HIDDEN = (625, 400, 225)
SPLIT_DIMS = {"minthreat": (20, 20), "lti": (16, 16)}


@dataclass
class LossResult:
    total: float
    terms: dict
    grads: dict = field(default_factory=dict)  # network name -> list mirroring parameters()


# ---------------------------------------------------------------- loss pieces


def discriminator_terms(d_real, d_fake, kind="mse"):
    """Discriminator loss and its gradient with respect to both output batches."""
    d_real, d_fake = np.asarray(d_real, float), np.asarray(d_fake, float)
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("discriminator loss needs non-empty batches")
    nr, nf = d_real.shape[0], d_fake.shape[0]
    if kind == "mse":
        loss = np.mean((d_real - 1.0) ** 2) + np.mean(d_fake**2)
        return float(loss), 2.0 * (d_real - 1.0) / nr, 2.0 * d_fake / nf
    if kind == "bce":
        e = 1e-12
        loss = -np.mean(np.log(d_real + e)) - np.mean(np.log(1.0 - d_fake + e))
        return float(loss), -1.0 / ((d_real + e) * nr), 1.0 / ((1.0 - d_fake + e) * nf)
    raise ValueError(f"unknown adversarial loss {kind!r}")


def adversarial_terms(d_fake, kind="mse"):
    """Generator's adversarial term and its gradient with respect to ``D(G(z))``."""
    d_fake = np.asarray(d_fake, float)
    n = d_fake.shape[0]
    if kind == "mse":
        return float(np.mean((d_fake - 1.0) ** 2)), 2.0 * (d_fake - 1.0) / n
    if kind == "bce":
        e = 1e-12
        return float(-np.mean(np.log(d_fake + e))), -1.0 / ((d_fake + e) * n)
    raise ValueError(f"unknown adversarial loss {kind!r}")


def kl_normal(mu, logvar):
    """Per-row ``KL(N(mu, diag exp(logvar)) || N(0, I))`` and its partials."""
    ev = np.exp(logvar)
    kl = 0.5 * np.sum(mu * mu + ev - 1.0 - logvar, axis=-1)
    return kl, mu, 0.5 * (ev - 1.0)


class _Scaled:
    """Per-feature affine map between data units and network units.

    Networks see ``(x - shift) / scale``; physics terms are evaluated after
    mapping back, with the chain rule applied to their gradients. The identity
    map is the default until :meth:`fit_scaler` is called.
    """

    def _init_scaler(self):
        n = self.layout.n_x
        if getattr(self, "shift", None) is None:
            self.shift = np.zeros(n)
        if getattr(self, "scale", None) is None:
            self.scale = np.ones(n)
        self.shift = np.asarray(self.shift, float)
        self.scale = np.asarray(self.scale, float)

    def fit_scaler(self, X, floor=1e-6):
        X = np.asarray(X, float)
        sd = X.std(axis=0)
        self.shift = X.mean(axis=0)
        self.scale = np.where(sd > floor, sd, 1.0)

    def to_net(self, X):
        return (np.asarray(X, float) - self.shift) / self.scale

    def to_data(self, Y):
        return Y * self.scale + self.shift


# ---------------------------------------------------------------- GANs


def _positions_index(layout: Layout):
    k = np.arange(layout.K) * layout.n_out
    return np.stack([k, k + 1], axis=1).ravel()


@dataclass
class GanModel(_Scaled):
    variant: str
    layout: Layout
    V: float
    gen: Mlp
    disc: Mlp
    alpha1: float = 1.0
    alpha2: float = 1.0
    loss_kind: str = "mse"
    literal_heading: bool = False
    shift: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        self._init_scaler()
        if self.variant not in GAN_VARIANTS:
            raise ValueError(f"not a GAN variant: {self.variant!r}")
        if self.variant != "s_gan" and self.layout.kind != "zermelo":
            raise ValueError("physics-informed GANs are defined for Zermelo data")
        self.pos_idx = _positions_index(self.layout)
        self.latent = LatentSpec(self.gen.spec.layer_sizes[0], "uniform", -1.0, 1.0)

    @classmethod
    def build(cls, variant, layout: Layout, V, rng, dropout=0.2, slope=0.01, **kw):
        gspec = MlpSpec.build((GAN_LATENT, *GEN_HIDDEN, layout.n_x), hidden="leaky_relu",
                              output="identity", leaky_slope=slope, dropout=dropout)
        dspec = MlpSpec.build((2 * layout.K, *DISC_HIDDEN, 1), hidden="leaky_relu",
                              output="sigmoid", leaky_slope=slope, dropout=dropout)
        return cls(variant, layout, V, Mlp.init(gspec, rng), Mlp.init(dspec, rng), **kw)

    @property
    def networks(self):
        return {"gen": self.gen, "disc": self.disc}

    def discriminate(self, Y, train=False, rng=None):
        """``D`` on network-unit data (positions only)."""
        return self.disc.forward(np.asarray(Y)[:, self.pos_idx], train, rng)

    def discriminator_loss(self, real, fake, rng=None, train=True):
        """``mean (D(real) - 1)^2 + mean D(fake)^2`` with gradients for D only.

        Both batches are in network units.
        """
        dr, tr = self.discriminate(real, train, rng)
        df, tf = self.discriminate(fake, train, rng)
        loss, gr, gf = discriminator_terms(dr, df, self.loss_kind)
        g1, _ = self.disc.backward(tr, gr)
        g2, _ = self.disc.backward(tf, gf)
        return LossResult(loss, {"disc": loss}, {"disc": [a + b for a, b in zip(g1, g2)]})

    def physics_terms(self, X):
        """Physics penalties of this variant on data-unit ``X`` and their gradients."""
        B = X.shape[0]
        terms, grad = {}, np.zeros_like(X)
        if self.variant in ("z_gan1", "z_gan2"):
            h, gh = zermelo_hamiltonian_sq(self.layout, X, self.V)
            terms["hamiltonian"] = float(np.mean(h))
            grad += self.alpha1 * gh / B
        if self.variant == "z_gan2":
            e, ge = heading_residual_sq(self.layout, X, self.literal_heading)
            terms["heading"] = float(np.mean(e))
            grad += self.alpha2 * ge / B
        return terms, grad

    def generator_loss(self, z, rng=None, train=True):
        fake, tg = self.gen.forward(z, train, rng)
        d, td = self.discriminate(fake, train, rng)
        adv, gd = adversarial_terms(d, self.loss_kind)
        _, gpos = self.disc.backward(td, gd)
        terms, gx = self.physics_terms(self.to_data(fake))
        gx *= self.scale
        gx[:, self.pos_idx] += gpos
        total = adv + self.alpha1 * terms.get("hamiltonian", 0.0) + self.alpha2 * terms.get("heading", 0.0)
        grads, _ = self.gen.backward(tg, gx)
        return LossResult(total, {"adversarial": adv, **terms}, {"gen": grads})

    def sample(self, n, rng):
        return self.to_data(self.gen(sample_latent(self.latent, rng, n)))

    def config(self):
        return {"alpha1": self.alpha1, "alpha2": self.alpha2, "loss_kind": self.loss_kind,
                "literal_heading": self.literal_heading}


def discriminator_loss(model: GanModel, real, fake, rng=None, train=True):
    return model.discriminator_loss(real, fake, rng, train)


def generator_loss(model: GanModel, z, rng=None, train=True):
    return model.generator_loss(z, rng, train)


# ---------------------------------------------------------------- VAEs


def _autoencoder(n_x, hidden, latent_in, latent_out, layer_norm, rng):
    enc = MlpSpec.build((n_x, *hidden, latent_out), hidden="relu", output="identity", layer_norm=layer_norm)
    dec = MlpSpec.build((latent_in, *reversed(hidden), n_x), hidden="relu", output="identity",
                        layer_norm=layer_norm)
    return Mlp.init(enc, rng), Mlp.init(dec, rng)


@dataclass
class VaeModel(_Scaled):
    variant: str
    layout: Layout
    V: float
    enc: Mlp
    dec: Mlp
    alpha1: float = 1.0
    alpha2: float = 1.0
    prior_penalty: bool = False
    shift: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        self._init_scaler()
        if self.variant not in VAE_VARIANTS:
            raise ValueError(f"not a VAE variant: {self.variant!r}")
        if self.variant == "z_vae" and self.layout.kind != "zermelo":
            raise ValueError("the Hamiltonian-penalized VAE is defined for Zermelo data")
        self.latent = LatentSpec(self.dec.spec.layer_sizes[0], "normal")

    @classmethod
    def build(cls, variant, layout: Layout, V, rng, hidden=None, latent=VAE_LATENT, **kw):
        if hidden is None:
            hidden = VAE_HIDDEN.get((variant, layout.kind), VAE_HIDDEN_DEFAULT)
        enc, dec = _autoencoder(layout.n_x, hidden, latent, 2 * latent, False, rng)
        return cls(variant, layout, V, enc, dec, **kw)

    @property
    def networks(self):
        return {"enc": self.enc, "dec": self.dec}

    def encode(self, X):
        h = self.enc(self.to_net(X))
        L = self.latent.dim
        return h[..., :L], h[..., L:]

    def loss(self, X, rng, train=True):
        """Reconstruction + ``alpha1`` KL (+ ``alpha2`` Hamiltonian for ``z_vae``).

        ``X`` is in data units; reconstruction is measured in network units.
        """
        X = self.to_net(X)
        B, L = X.shape[0], self.latent.dim
        if B == 0:
            raise ValueError("empty batch")
        h, te = self.enc.forward(X, train, rng)
        mu, lv = h[:, :L], h[:, L:]
        sd = np.exp(0.5 * lv)
        eps = rng.standard_normal(mu.shape)
        xh, td = self.dec.forward(mu + sd * eps, train, rng)
        diff = xh - X
        recon = float(np.sum(diff * diff) / B)
        kl, gmu, glv = kl_normal(mu, lv)
        kl = float(np.mean(kl))
        gx = 2.0 * diff / B
        terms = {"recon": recon, "kl": kl}
        total = recon + self.alpha1 * kl
        if self.variant == "z_vae":
            hv, gh = zermelo_hamiltonian_sq(self.layout, self.to_data(xh), self.V)
            terms["hamiltonian"] = float(np.mean(hv))
            total += self.alpha2 * terms["hamiltonian"]
            gx += self.alpha2 * gh * self.scale / B
        gdec, gz = self.dec.backward(td, gx)
        if self.variant == "z_vae" and self.prior_penalty:
            # Same penalty on decoded prior draws, i.e. on what generation will emit.
            xp, tp = self.dec.forward(sample_latent(self.latent, rng, B), train, rng)
            hv, gh = zermelo_hamiltonian_sq(self.layout, self.to_data(xp), self.V)
            terms["hamiltonian_prior"] = float(np.mean(hv))
            total += self.alpha2 * terms["hamiltonian_prior"]
            gp, _ = self.dec.backward(tp, self.alpha2 * gh * self.scale / B)
            gdec = [a + b for a, b in zip(gdec, gp)]
        gh_enc = np.concatenate([gz + self.alpha1 * gmu / B,
                                 gz * eps * 0.5 * sd + self.alpha1 * glv / B], axis=1)
        genc, _ = self.enc.backward(te, gh_enc)
        return LossResult(total, terms, {"enc": genc, "dec": gdec})

    def sample(self, n, rng):
        return self.to_data(self.dec(sample_latent(self.latent, rng, n)))

    def config(self):
        return {"alpha1": self.alpha1, "alpha2": self.alpha2, "prior_penalty": self.prior_penalty}


def vae_losses(model: VaeModel, X, rng, train=True):
    return model.loss(X, rng, train)


@dataclass
class SplitVaeModel(_Scaled):
    """Autoencoder with latent ``(zeta1, zeta2)``.

    Encoder output layout: ``mu1, logvar1, mu2, logvar2``.
    """

    layout: Layout
    V: float
    enc: Mlp
    dec: Mlp
    split: tuple
    alpha1: float = 1.0
    alpha2: float = 1.0
    kl2_on_observed: bool = False
    variant: str = "split_vae"
    shift: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        self._init_scaler()
        self.split = tuple(int(s) for s in self.split)
        self.latent = LatentSpec(sum(self.split), "normal")

    @classmethod
    def build(cls, layout: Layout, V, rng, split=None, hidden=SPLIT_HIDDEN, layer_norm=True, **kw):
        split = tuple(split or SPLIT_DIMS.get(layout.kind, (16, 16)))
        enc, dec = _autoencoder(layout.n_x, hidden, sum(split), 2 * sum(split), layer_norm, rng)
        return cls(layout, V, enc, dec, split, **kw)

    @property
    def networks(self):
        return {"enc": self.enc, "dec": self.dec}

    def loss(self, X, observed, rng, train=True):
        """Mixed-batch loss; ``observed`` flags rows from the observed set.

        Reconstruction and the ``zeta1`` KL use observed rows only; the
        ``zeta2`` KL uses model rows (and observed rows too when
        ``kl2_on_observed``). Every term is averaged over the whole batch.
        """
        X = self.to_net(X)
        obs = np.asarray(observed, bool)
        if not obs.any():
            raise ValueError("split-VAE batch has no observed rows to reconstruct")
        B = X.shape[0]
        d1, d2 = self.split
        h, te = self.enc.forward(X, train, rng)
        mu1, lv1 = h[:, :d1], h[:, d1 : 2 * d1]
        mu2, lv2 = h[:, 2 * d1 : 2 * d1 + d2], h[:, 2 * d1 + d2 :]
        mu, lv = np.concatenate([mu1, mu2], axis=1), np.concatenate([lv1, lv2], axis=1)
        sd = np.exp(0.5 * lv)
        eps = rng.standard_normal(mu.shape)
        xh, td = self.dec.forward(mu + sd * eps, train, rng)
        w_obs = obs[:, None].astype(float)
        w2 = np.ones((B, 1)) if self.kl2_on_observed else 1.0 - w_obs
        diff = (xh - X) * w_obs
        recon = float(np.sum(diff * diff) / B)
        k1, gm1, gl1 = kl_normal(mu1, lv1)
        k2, gm2, gl2 = kl_normal(mu2, lv2)
        kl1 = float(np.sum(k1 * w_obs[:, 0]) / B)
        kl2 = float(np.sum(k2 * w2[:, 0]) / B)
        total = recon + self.alpha1 * kl1 + self.alpha2 * kl2
        gdec, gz = self.dec.backward(td, 2.0 * diff / B)
        gmu = gz * 1.0
        glv = gz * eps * 0.5 * sd
        gmu[:, :d1] += self.alpha1 * w_obs * gm1 / B
        glv[:, :d1] += self.alpha1 * w_obs * gl1 / B
        gmu[:, d1:] += self.alpha2 * w2 * gm2 / B
        glv[:, d1:] += self.alpha2 * w2 * gl2 / B
        gh = np.concatenate([gmu[:, :d1], glv[:, :d1], gmu[:, d1:], glv[:, d1:]], axis=1)
        genc, _ = self.enc.backward(te, gh)
        return LossResult(total, {"recon": recon, "kl1": kl1, "kl2": kl2}, {"enc": genc, "dec": gdec})

    def sample(self, n, rng):
        return self.to_data(self.dec(sample_latent(self.latent, rng, n)))

    def config(self):
        return {"alpha1": self.alpha1, "alpha2": self.alpha2, "kl2_on_observed": self.kl2_on_observed,
                "split": list(self.split)}


def splitvae_loss(model: SplitVaeModel, X, observed, rng, train=True):
    return model.loss(X, observed, rng, train)


# ---------------------------------------------------------------- construction, sampling, checkpoints


def build_model(variant, layout: Layout, V, rng, **kw):
    if variant in GAN_VARIANTS:
        return GanModel.build(variant, layout, V, rng, **kw)
    if variant in VAE_VARIANTS:
        return VaeModel.build(variant, layout, V, rng, **kw)
    if variant == "split_vae":
        return SplitVaeModel.build(layout, V, rng, **kw)
    raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")


def generate(model, count, rng, meta=None):
    """``count`` generated data, each the image of a fresh latent draw."""
    if count < 0:
        raise ValueError("count must be >= 0")
    X = model.sample(count, rng) if count else np.empty((0, model.layout.n_x))
    info = {"variant": model.variant, "V": model.V, **(meta or {})}
    return Dataset(model.layout, X, ["generated"] * count, None, None, info)


def _net_arrays(name, net: Mlp):
    return {f"{name}.{i}": p for i, p in enumerate(net.parameters())}


def save_model(model, path, optimizers=None, meta=None):
    """Write model, optional optimizer states and metadata as one checkpoint."""
    arrays, nets = {"scaler.shift": model.shift, "scaler.scale": model.scale}, {}
    for name, net in model.networks.items():
        arrays.update(_net_arrays(name, net))
        nets[name] = net.spec.to_dict()
    opt_t = {}
    for name, opt in (optimizers or {}).items():
        arrays.update(opt.state_arrays(f"opt.{name}"))
        opt_t[name] = opt.t
    header = {"variant": model.variant, "layout": model.layout.to_dict(), "V": model.V,
              "networks": nets, "config": model.config(), "optimizers": opt_t, "meta": meta or {}}
    write_arrays(path, header, arrays)


def load_model(path):
    """Returns ``(model, header, optimizer_states)`` where the last maps a network
    name to a callable restoring an :class:`Adam` built on that network."""
    header, arrays = read_arrays(path)
    nets = {}
    for name, sd in header["networks"].items():
        spec = MlpSpec.from_dict(sd)
        params = [arrays[f"{name}.{i}"] for i in range(2 * spec.n_layers)]
        nets[name] = Mlp(spec, params[0::2], params[1::2])
    layout = Layout.from_dict(header["layout"])
    cfg = dict(header["config"], shift=arrays["scaler.shift"], scale=arrays["scaler.scale"])
    variant = header["variant"]
    if variant in GAN_VARIANTS:
        model = GanModel(variant, layout, header["V"], nets["gen"], nets["disc"], **cfg)
    elif variant in VAE_VARIANTS:
        model = VaeModel(variant, layout, header["V"], nets["enc"], nets["dec"], **cfg)
    else:
        split = cfg.pop("split")
        model = SplitVaeModel(layout, header["V"], nets["enc"], nets["dec"], split, **cfg)

    def restorer(name, lr):
        opt = Adam(model.networks[name].parameters(), lr=lr)
        opt.load_state(arrays, f"opt.{name}", header["optimizers"][name])
        return opt

    return model, header, restorer
