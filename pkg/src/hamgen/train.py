"""Minibatch training loops.

GANs alternate one discriminator step (generator frozen) with one generator
step on a fresh latent batch. Autoencoders take one joint encoder/decoder step
per batch. Each epoch reshuffles with the run's seeded stream and drops the
last partial batch, so there are ``floor(N_D / M_b)`` updates per network per
epoch.
"""
from dataclasses import asdict, dataclass, field
import csv
import logging
import os
import time

import numpy as np

from .data import Dataset
from .models import GAN_VARIANTS, GanModel, SplitVaeModel, VaeModel, save_model
from .nn import Adam, NonFiniteGradient, make_rng, sample_latent

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, batch, what, checkpoint=None):
        where = f"epoch {epoch}, batch {batch}"
        tail = f"; last good checkpoint: {checkpoint}" if checkpoint else ""
        super().__init__(f"non-finite {what} at {where}{tail}")
        self.epoch, self.batch, self.checkpoint = epoch, batch, checkpoint


@dataclass
class TrainConfig:
    variant: str = "s_vae"
    epochs: int = None
    batch_size: int = None
    lr: dict = None  # network name -> learning rate
    seed: int = 0
    alpha1: float = 1.0
    alpha2: float = 1.0
    loss_kind: str = "mse"
    literal_heading: bool = False
    kl2_on_observed: bool = False
    prior_penalty: bool = False  # z_vae: also penalize H on decoded prior draws
    model_count: int = None  # split-VAE: number of model data to mix in (default all)
    standardize: bool = True
    checkpoint_every: int = 100

    def __post_init__(self):
        gan = self.variant in GAN_VARIANTS
        if self.epochs is None:
            self.epochs = 500 if gan else 2000
        if self.batch_size is None:
            self.batch_size = 64 if gan else 32
        if self.lr is None:
            if gan:
                self.lr = {"gen": 0.01, "disc": 0.001 if self.variant == "s_gan" else 0.01}
            else:
                self.lr = {"enc": 0.001, "dec": 0.001}
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be >= 1 and epochs >= 0")
        if any(v <= 0 for v in self.lr.values()):
            raise ValueError("learning rates must be positive")

    def model_kwargs(self):
        if self.variant in GAN_VARIANTS:
            return {"alpha1": self.alpha1, "alpha2": self.alpha2, "loss_kind": self.loss_kind,
                    "literal_heading": self.literal_heading}
        if self.variant == "split_vae":
            return {"alpha1": self.alpha1, "alpha2": self.alpha2, "kl2_on_observed": self.kl2_on_observed}
        return {"alpha1": self.alpha1, "alpha2": self.alpha2, "prior_penalty": self.prior_penalty}

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    history: list = field(default_factory=list)  # one dict of mean loss terms per epoch
    wall_time: float = 0.0
    epoch_times: list = field(default_factory=list)
    updates: dict = field(default_factory=dict)
    checkpoint: str = None

    def column(self, name):
        return np.array([h[name] for h in self.history])


class _Logger:
    """Writes the deterministic loss log and, separately, per-epoch wall times."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.loss_fh = self.time_fh = None

    def __enter__(self):
        return self

    def row(self, epoch, terms, seconds):
        if self.out_dir is None:
            return
        if self.loss_fh is None:
            self.names = list(terms)
            self.loss_fh = open(os.path.join(self.out_dir, "losses.csv"), "w", newline="")
            self.time_fh = open(os.path.join(self.out_dir, "timing.csv"), "w", newline="")
            self.loss_w = csv.writer(self.loss_fh, lineterminator="\n")
            self.time_w = csv.writer(self.time_fh, lineterminator="\n")
            self.loss_w.writerow(["epoch", *self.names])
            self.time_w.writerow(["epoch", "seconds"])
        self.loss_w.writerow([epoch, *(repr(float(terms[n])) for n in self.names)])
        self.time_w.writerow([epoch, f"{seconds:.6f}"])
        self.loss_fh.flush()
        self.time_fh.flush()

    def __exit__(self, *exc):
        for fh in (self.loss_fh, self.time_fh):
            if fh is not None:
                fh.close()


def _check(res, epoch, batch, what, last_ckpt):
    if not np.isfinite(res.total):
        raise TrainingDiverged(epoch, batch, f"{what} loss", last_ckpt)


def _step(opt, grads, epoch, batch, what, last_ckpt):
    try:
        opt.step(grads)
    except NonFiniteGradient as err:
        raise TrainingDiverged(epoch, batch, f"{what} gradient (layer {err.layer})", last_ckpt) from err


def _checkpoint(model, opts, out_dir, epoch, cfg, final):
    if out_dir is None:
        return None
    name = "model.ckpt" if final else f"epoch_{epoch:05d}.ckpt"
    path = os.path.join(out_dir, name)
    save_model(model, path, opts, {"epoch": epoch, "train_config": cfg.to_dict()})
    return path


def _finish_epoch(acc, n):
    return {k: v / n for k, v in acc.items()}


def _accumulate(acc, prefix, res):
    acc[f"{prefix}total"] = acc.get(f"{prefix}total", 0.0) + res.total
    for k, v in res.terms.items():
        acc[f"{prefix}{k}"] = acc.get(f"{prefix}{k}", 0.0) + v


def _loop(model, cfg, out_dir, n_batches, epoch_body, opts):
    """Shared epoch loop: logging, checkpoints, timing."""
    report = TrainReport(updates={k: 0 for k in opts})
    last_ckpt = None
    t0 = time.perf_counter()
    with _Logger(out_dir) as logger:
        for epoch in range(1, cfg.epochs + 1):
            te = time.perf_counter()
            acc = {}
            for b in range(n_batches):
                epoch_body(epoch, b, acc, last_ckpt)
            for k in opts:
                report.updates[k] += n_batches
            terms = _finish_epoch(acc, max(n_batches, 1))
            report.history.append(terms)
            dt = time.perf_counter() - te
            report.epoch_times.append(dt)
            logger.row(epoch, terms, dt)
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs:
                last_ckpt = _checkpoint(model, opts, out_dir, epoch, cfg, False)
            log.debug("epoch %d %s", epoch, terms)
    report.checkpoint = _checkpoint(model, opts, out_dir, cfg.epochs, cfg, True)
    report.wall_time = time.perf_counter() - t0
    return report


def train_gan(model: GanModel, dataset: Dataset, cfg: TrainConfig, out_dir=None) -> TrainReport:
    """Alternating discriminator / generator updates over shuffled minibatches."""
    if dataset.kind != "zermelo":
        raise ValueError("GAN training is defined for Zermelo data")
    Mb = cfg.batch_size
    n_batches = len(dataset) // Mb
    if n_batches == 0:
        raise ValueError(f"dataset of {len(dataset)} is smaller than one batch of {Mb}")
    if cfg.standardize:
        model.fit_scaler(dataset.X)
    X = model.to_net(dataset.X)
    rng = make_rng(cfg.seed, "train")
    opts = {"disc": Adam(model.disc.parameters(), lr=cfg.lr["disc"]),
            "gen": Adam(model.gen.parameters(), lr=cfg.lr["gen"])}
    state = {}

    def body(epoch, b, acc, last_ckpt):
        if b == 0:
            state["perm"] = rng.permutation(len(X))
        real = X[state["perm"][b * Mb : (b + 1) * Mb]]
        fake = model.gen.forward(sample_latent(model.latent, rng, Mb), True, rng)[0]
        rd = model.discriminator_loss(real, fake, rng)
        _check(rd, epoch, b, "discriminator", last_ckpt)
        _step(opts["disc"], rd.grads["disc"], epoch, b, "discriminator", last_ckpt)
        rg = model.generator_loss(sample_latent(model.latent, rng, Mb), rng)
        _check(rg, epoch, b, "generator", last_ckpt)
        _step(opts["gen"], rg.grads["gen"], epoch, b, "generator", last_ckpt)
        _accumulate(acc, "d_", rd)
        acc.pop("d_disc")
        _accumulate(acc, "g_", rg)

    return _loop(model, cfg, out_dir, n_batches, body, opts)


def split_batches(n_obs, n_model, batch_size):
    """Observed/model rows per stratified batch and the number of batches."""
    n = n_obs + n_model
    if n_obs == 0:
        raise ValueError("split-VAE training needs observed data")
    k_obs = max(1, int(round(batch_size * n_obs / n)))
    k_obs = min(k_obs, batch_size)
    k_mod = batch_size - k_obs
    count = n // batch_size
    count = min(count, n_obs // k_obs)
    if k_mod:
        count = min(count, n_model // k_mod)
    return k_obs, k_mod, count


def train_vae(model, dataset: Dataset, cfg: TrainConfig, out_dir=None, model_data: Dataset = None) -> TrainReport:
    """Joint encoder/decoder updates; the split variant mixes in ``model_data``."""
    rng = make_rng(cfg.seed, "train")
    opts = {"enc": Adam(model.enc.parameters(), lr=cfg.lr["enc"]),
            "dec": Adam(model.dec.parameters(), lr=cfg.lr["dec"])}
    Mb = cfg.batch_size
    state = {}
    if isinstance(model, SplitVaeModel):
        if model_data is None:
            raise ValueError("split-VAE training requires a model dataset")
        if model_data.layout != dataset.layout:
            raise ValueError("observed and model data have different layouts")
        Xo = dataset.X
        Xm = model_data.X if cfg.model_count is None else model_data.X[: cfg.model_count]
        if cfg.standardize:
            model.fit_scaler(np.concatenate([Xo, Xm]))
        k_obs, k_mod, n_batches = split_batches(len(Xo), len(Xm), Mb)
        if n_batches == 0:
            raise ValueError("not enough data for one stratified batch")
        flags = np.r_[np.ones(k_obs, bool), np.zeros(k_mod, bool)]

        def body(epoch, b, acc, last_ckpt):
            if b == 0:
                state["po"], state["pm"] = rng.permutation(len(Xo)), rng.permutation(len(Xm))
            rows = np.concatenate([Xo[state["po"][b * k_obs : (b + 1) * k_obs]],
                                   Xm[state["pm"][b * k_mod : (b + 1) * k_mod]]])
            res = model.loss(rows, flags, rng)
            _check(res, epoch, b, "split-VAE", last_ckpt)
            _step(opts["enc"], res.grads["enc"], epoch, b, "encoder", last_ckpt)
            _step(opts["dec"], res.grads["dec"], epoch, b, "decoder", last_ckpt)
            _accumulate(acc, "", res)
    else:
        if not isinstance(model, VaeModel):
            raise TypeError("train_vae expects a VAE or split-VAE model")
        X = dataset.X
        n_batches = len(X) // Mb
        if n_batches == 0:
            raise ValueError(f"dataset of {len(X)} is smaller than one batch of {Mb}")
        if cfg.standardize:
            model.fit_scaler(X)

        def body(epoch, b, acc, last_ckpt):
            if b == 0:
                state["perm"] = rng.permutation(len(X))
            res = model.loss(X[state["perm"][b * Mb : (b + 1) * Mb]], rng)
            _check(res, epoch, b, "VAE", last_ckpt)
            _step(opts["enc"], res.grads["enc"], epoch, b, "encoder", last_ckpt)
            _step(opts["dec"], res.grads["dec"], epoch, b, "decoder", last_ckpt)
            _accumulate(acc, "", res)

    return _loop(model, cfg, out_dir, n_batches, body, opts)


def train(model, dataset, cfg: TrainConfig, out_dir=None, model_data=None) -> TrainReport:
    if isinstance(model, GanModel):
        return train_gan(model, dataset, cfg, out_dir)
    return train_vae(model, dataset, cfg, out_dir, model_data)
