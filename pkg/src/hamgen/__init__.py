"""Physics-informed generative models for optimally controlled trajectories."""
from .data import Dataset, Grid, Layout, TrajectoryDatum, load_dataset, save_dataset
from .evaluation import (
    EvalReport, delta_indices, dispersion_score, evaluate, ndrr, pc_moments, total_variance,
)
from .models import build_model, generate, load_model, save_model
from .synth import (
    LtiConfig, MinThreatConfig, ShootingConfig, ZermeloConfig, build_dataset, build_paired,
    model_counterpart, solve_minthreat, solve_zermelo,
)
from .train import TrainConfig, TrainReport, TrainingDiverged, train

__version__ = "0.1.0"
