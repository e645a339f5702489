"""Acceptance criteria 1-9.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the run. The training criteria
(4-7) take most of the runtime.
"""
import filecmp
import time

import numpy as np
import pytest

from hamgen.data import Layout, decode_dataset, encode_dataset, load_dataset, save_dataset
from hamgen.evaluation import delta_indices, dispersion_score, ndrr_dataset, pc_moments, total_variance
from hamgen.fileio import ChecksumError
from hamgen.models import build_model, generate, load_model
from hamgen.nn import make_rng
from hamgen.synth import LtiConfig, MinThreatConfig, ZermeloConfig, build_dataset, build_paired
from hamgen.train import TrainConfig, train, train_vae

from gradcheck import RTOL, fd_compare, max_rel

pytestmark = pytest.mark.slow

N_SAMPLES = 1000
SEEDS = (0, 1, 2, 3)
# Z-VAE vs S-VAE: the Hamiltonian weight is unpublished; 30 makes the term
# visible next to the standardized reconstruction (see the decisions ledger).
VAE_EPOCHS = 200
ZVAE_KW = {"alpha2": 30.0, "prior_penalty": True}
SPLIT_EPOCHS = 200
LTI_EPOCHS = 20
GAN_EPOCHS = 100


def _note(request, detail, verdict=None):
    request.node.user_properties.append(("detail", detail))
    if verdict is not None:
        request.node.user_properties.append(("verdict", verdict))


@pytest.fixture(scope="module")
def zermelo100():
    t0 = time.perf_counter()
    ds = build_dataset(ZermeloConfig(), 100, seed=1)
    return ds, time.perf_counter() - t0


@pytest.mark.criterion(1)
def test_tpbvp_fidelity(zermelo100, request):
    ds, seconds = zermelo100
    stats = ds.meta["stats"]
    max_h = float(stats["max_abs_H"])
    _note(request, f"convergence {stats['convergence_rate']:.3f}, endpoint {stats['max_endpoint_residual']:.1e}, "
                   f"max|H| {max_h:.1e}, {seconds:.0f} s")
    assert stats["convergence_rate"] >= 0.95
    assert stats["max_endpoint_residual"] < 1e-6
    assert max_h < 1e-3
    assert seconds < 300


@pytest.mark.criterion(2)
def test_costate_identities(zermelo100, request):
    ds, _ = zermelo100
    di = delta_indices(ds, 1.0)
    mt = build_dataset(MinThreatConfig(), 30, seed=2)
    d1 = delta_indices(mt, 1.0).delta1
    _note(request, f"max delta2 {di.delta2.max():.1e}, max delta3 {di.delta3.max():.1e}, "
                   f"min-threat max delta1 {d1.max():.1e}")
    assert di.delta2.max() < 1e-9 and di.delta3.max() < 1e-9
    assert d1.max() < 2.5e-5


# ---------------------------------------------------------------- 3: gradients


WEIGHTS = {"s_gan": (), "z_gan1": ("alpha1",), "z_gan2": ("alpha1", "alpha2"),
           "s_vae": ("alpha1",), "z_vae": ("alpha1", "alpha2"), "split_vae": ("alpha1", "alpha2")}


def _term_checks(model, loss_fn, weights, seed):
    """Max relative FD error and kink count per (network, term).

    The base term is checked with every weight at zero; each weighted term
    via the difference between weight 1 and weight 0.
    """
    out = {}
    saved = {w: getattr(model, w) for w in weights}

    def value(on):
        for w in weights:
            setattr(model, w, 1.0 if w in on else 0.0)
        return loss_fn()

    cases = [("base", ())] + [(w, (w,)) for w in weights]
    for label, on in cases:
        hi, lo = value(on), value(())
        for name, net in model.networks.items():
            if name not in hi.grads:
                continue
            if label == "base":
                ana, fn = hi.grads[name], lambda: value(()).total
            else:
                ana = [a - b for a, b in zip(hi.grads[name], lo.grads[name])]
                fn = lambda on=on: value(on).total - value(()).total
            res = fd_compare(fn, net.parameters(), ana, make_rng(seed), n_probe=20, kinks=True)
            smooth = [r for r in res if not r[3]]
            out[(name, label)] = (max_rel(smooth) if smooth else 0.0, len(res) - len(smooth))
    for w, v in saved.items():
        setattr(model, w, v)
    return out


@pytest.mark.criterion(3)
def test_gradients_all_variants(zermelo100, request):
    ds, _ = zermelo100
    X = ds.X[:4]
    worst = {}
    for variant in ("s_gan", "z_gan1", "z_gan2"):
        m = build_model(variant, ds.layout, 1.0, make_rng(3, variant))
        m.fit_scaler(ds.X)
        z = make_rng(4).uniform(-1, 1, (4, 20))
        real, fake = m.to_net(X), m.gen(z)
        worst.update({(variant, *k): v for k, v in _term_checks(
            m, lambda: m.discriminator_loss(real, fake, make_rng(5)), (), 6).items()})
        worst.update({(variant, *k): v for k, v in _term_checks(
            m, lambda: m.generator_loss(z, make_rng(7)), WEIGHTS[variant], 8).items()})
    for variant in ("s_vae", "z_vae"):
        m = build_model(variant, ds.layout, 1.0, make_rng(3, variant), prior_penalty=True)
        m.fit_scaler(ds.X)
        worst.update({(variant, *k): v for k, v in _term_checks(
            m, lambda: m.loss(X, make_rng(9)), WEIGHTS[variant], 10).items()})
    lay = Layout.lti(4, 30)
    m = build_model("split_vae", lay, 1.0, make_rng(3, "split"))
    Xs = make_rng(11).normal(size=(6, lay.n_x))
    m.fit_scaler(Xs)
    obs = np.array([1, 0, 1, 0, 1, 0], bool)
    worst.update({("split_vae", *k): v for k, v in _term_checks(
        m, lambda: m.loss(Xs, obs, make_rng(12)), WEIGHTS["split_vae"], 13).items()})
    top = max(worst, key=lambda k: worst[k][0])
    kinks = sum(v[1] for v in worst.values())
    _note(request, f"{len(worst)} (variant, network, term) checks of 20 probes, worst {worst[top][0]:.1e} "
                   f"at {top}, {kinks} probes on activation kinks")
    assert worst[top][0] < RTOL, worst
    assert kinks <= len(worst)  # kinks are rare; many would point at a broken gradient


# ---------------------------------------------------------------- 4 and 7: Zermelo VAEs


@pytest.fixture(scope="module")
def zermelo_vaes():
    ds = build_dataset(ZermeloConfig(), 500, seed=2024)
    out = []
    for seed in SEEDS:
        row = {}
        for variant in ("s_vae", "z_vae"):
            cfg = TrainConfig(variant, epochs=VAE_EPOCHS, seed=seed, **(ZVAE_KW if variant == "z_vae" else {}))
            m = build_model(variant, ds.layout, 1.0, make_rng(seed, "init"), **cfg.model_kwargs())
            train_vae(m, ds, cfg)
            g = generate(m, N_SAMPLES, make_rng(seed, "generate"))
            row[variant] = (float(delta_indices(g, 1.0).delta1.mean()), dispersion_score(g, ds))
        out.append(row)
    return out


@pytest.mark.criterion(4)
def test_z_vae_beats_s_vae(zermelo_vaes, request):
    wins = [r["z_vae"][0] < r["s_vae"][0] for r in zermelo_vaes]
    pairs = ", ".join(f"{r['z_vae'][0]:.2e}<{r['s_vae'][0]:.2e}" for r in zermelo_vaes)
    _note(request, f"Z-VAE wins {sum(wins)}/4 (mean delta1 Z<S: {pairs})")
    assert sum(wins) >= 3


# ---------------------------------------------------------------- 5: min-threat smoothness


@pytest.mark.criterion(5)
def test_split_vae_smoother_than_s_vae(request):
    lines, ok = [], []
    for lam in (2.0, 5.0, 10.0):
        obs, mod = build_paired(MinThreatConfig(lams=(lam,)), 200, seed=500 + int(lam))
        tv = {}
        for variant in ("s_vae", "split_vae"):
            cfg = TrainConfig(variant, epochs=SPLIT_EPOCHS, seed=0)
            m = build_model(variant, obs.layout, 1.0, make_rng(0, "init"), **cfg.model_kwargs())
            train(m, obs, cfg, model_data=mod if variant == "split_vae" else None)
            g = generate(m, N_SAMPLES, make_rng(0, "generate"))
            tv[variant] = float(total_variance(g.layout.positions(g.X)).mean())
        ref = float(total_variance(obs.layout.positions(obs.X)).mean())
        ok.append(tv["split_vae"] < tv["s_vae"])
        lines.append(f"lam {lam:g}: split {tv['split_vae']:.4f} vs s {tv['s_vae']:.4f} (otd {ref:.4f})")
    _note(request, "; ".join(lines))
    assert all(ok)


# ---------------------------------------------------------------- 6: LTI NDRR


@pytest.mark.criterion(6)
def test_lti_ndrr_ordering(request):
    obs, mod = build_paired(LtiConfig(), 500, seed=600)
    base = float(ndrr_dataset(obs).mean())
    gaps, wins = [], []
    for seed in SEEDS:
        gap = {}
        for variant in ("s_vae", "split_vae"):
            cfg = TrainConfig(variant, epochs=LTI_EPOCHS, seed=seed)
            m = build_model(variant, obs.layout, 1.0, make_rng(seed, "init"), **cfg.model_kwargs())
            train(m, obs, cfg, model_data=mod if variant == "split_vae" else None)
            g = generate(m, N_SAMPLES, make_rng(seed, "generate"), {"A": obs.meta["A"], "dt": obs.meta["dt"]})
            gap[variant] = abs(float(ndrr_dataset(g).mean()) - base)
        wins.append(gap["split_vae"] < gap["s_vae"])
        gaps.append(f"{gap['split_vae']:.2f}<{gap['s_vae']:.2f}")
    _note(request, f"otd NDRR {base:.2f}; split closer {sum(wins)}/4 (|gap| split<s: {', '.join(gaps)})")
    assert sum(wins) >= 3


# ---------------------------------------------------------------- 7: mode collapse


@pytest.mark.criterion(7)
def test_mode_collapse_diagnostic(zermelo_vaes, request):
    ds = build_dataset(ZermeloConfig(), 1000, seed=700)

    def s_gan(epochs, lr=None):
        cfg = TrainConfig("s_gan", epochs=epochs, seed=0, lr=lr)
        m = build_model("s_gan", ds.layout, 1.0, make_rng(0, "init"), **cfg.model_kwargs())
        train(m, ds, cfg)
        return dispersion_score(generate(m, N_SAMPLES, make_rng(0, "generate")), ds)

    gan = s_gan(GAN_EPOCHS)
    # Same network with a slower generator, so the discriminator dominates.
    slow = s_gan(30, {"gen": 0.001, "disc": 0.001})
    zvae = float(np.mean([r["z_vae"][1] for r in zermelo_vaes]))
    met = gan < 0.2 and zvae > 0.5
    # Informative threshold: a miss is reported on the criterion line, not raised.
    _note(request, f"S-GAN dispersion {gan:.3f} (<0.2), Z-VAE {zvae:.3f} (>0.5); "
                   f"S-GAN with generator lr 0.001: {slow:.3f}", "PASS" if met else "FAIL (informative)")
    assert np.isfinite(gan) and np.isfinite(zvae)


# ---------------------------------------------------------------- 8 and 9


@pytest.mark.criterion(8)
def test_moment_oracle(request):
    X = np.random.default_rng(8).standard_normal((100_000, 6))
    m = pc_moments(X, X)["candidate"]
    _note(request, f"var {np.round(m['variance'], 3)}, skew {np.round(m['skewness'], 3)}, "
                   f"kurt {np.round(m['kurtosis'], 3)}")
    assert np.all(np.abs(m["variance"] - 1) < 0.02)
    assert np.all(np.abs(m["skewness"]) < 0.05)
    assert np.all(np.abs(m["kurtosis"] - 3) < 0.1)


@pytest.mark.criterion(9)
def test_determinism_and_formats(tmp_path, request):
    paths = [tmp_path / f"d{i}.ds" for i in range(2)]
    for p in paths:
        save_dataset(build_dataset(ZermeloConfig(), 8, seed=9), p)
    same_data = filecmp.cmp(paths[0], paths[1], shallow=False)
    ds = load_dataset(paths[0])
    assert decode_dataset(encode_dataset(ds)) == ds

    runs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        out.mkdir()
        cfg = TrainConfig("z_vae", epochs=3, batch_size=4, seed=9)
        m = build_model("z_vae", ds.layout, 1.0, make_rng(9, "init"), **cfg.model_kwargs())
        runs.append(train(m, ds, cfg, out))
    same_log = filecmp.cmp(tmp_path / "run0" / "losses.csv", tmp_path / "run1" / "losses.csv", shallow=False)

    m, _, _ = load_model(runs[0].checkpoint)
    m2, _, _ = load_model(runs[1].checkpoint)
    assert all(np.array_equal(a, b) for a, b in zip(m.dec.parameters(), m2.dec.parameters()))

    detected = 0
    for path in (paths[0], runs[0].checkpoint):
        blob = bytearray(open(path, "rb").read())
        blob[len(blob) // 3] ^= 0x01
        bad = tmp_path / "bad.bin"
        bad.write_bytes(bytes(blob))
        loader = load_dataset if str(path).endswith(".ds") else load_model
        with pytest.raises(ChecksumError):
            loader(bad)
        detected += 1
    _note(request, f"dataset bytes equal {same_data}, loss logs equal {same_log}, corruption detected {detected}/2")
    assert same_data and same_log
