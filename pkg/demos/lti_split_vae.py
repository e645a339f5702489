"""Split-VAE on noisy LTI rollouts, scored by the dynamics residual ratio.

Run: python3 demos/lti_split_vae.py [epochs]
"""
import sys

from hamgen.evaluation import ndrr_dataset
from hamgen.models import build_model, generate
from hamgen.nn import make_rng
from hamgen.synth import LtiConfig, build_paired
from hamgen.train import TrainConfig, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
obs, mod = build_paired(LtiConfig(), 200, seed=3)
meta = {"A": obs.meta["A"], "dt": obs.meta["dt"]}
print(f"observed NDRR {ndrr_dataset(obs).mean():.2f}, model NDRR {ndrr_dataset(mod).mean():.2e}")
for variant in ("s_vae", "split_vae"):
    cfg = TrainConfig(variant, epochs=epochs, seed=0)
    m = build_model(variant, obs.layout, 1.0, make_rng(0, "init"), **cfg.model_kwargs())
    train(m, obs, cfg, model_data=mod if variant == "split_vae" else None)
    g = generate(m, 500, make_rng(0, "generate"), meta)
    print(f"{variant:10s} NDRR {ndrr_dataset(g).mean():.2f}")
