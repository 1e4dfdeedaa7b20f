"""Run profiles: `desk` (minutes-scale, CI-friendly) and `paper` (full-size
campaign and training budgets matching the published experiment scale)."""

from dataclasses import dataclass, field

from .dataset import CampaignSpec
from .ilc import IlcConfig
from .training import TrainConfig

WINDOW_LEN = 50


@dataclass
class Profile:
    name: str
    campaign: CampaignSpec
    train_forward: TrainConfig
    train_inverse: TrainConfig
    ilc: IlcConfig
    window_len: int = WINDOW_LEN
    hidden_size: int = 32
    forward_depth: int = 4
    inverse_depth: int = 2
    experiment_samples: int = 500
    square_period_s: float = 10.0
    feedback_gain: float = 0.3


def desk_profile(seed: int = 0) -> Profile:
    """Small campaign and short training runs; full pipeline in minutes."""
    return Profile(
        name="desk",
        campaign=CampaignSpec(
            n_random=10, n_sinusoid=40, samples_per_traj=500, rng_seed=seed
        ),
        train_forward=TrainConfig(
            learning_rate=1e-3, batch_size=64, dropout_keep=1.0,
            max_iters=3000, rng_seed=seed, log_every=250, lr_final_factor=0.1,
        ),
        train_inverse=TrainConfig(
            learning_rate=1e-3, batch_size=64, dropout_keep=1.0,
            max_iters=2500, rng_seed=seed, log_every=250, lr_final_factor=0.1,
        ),
        ilc=IlcConfig(max_iters=30, convergence_tol=1e-3),
        hidden_size=32,
        experiment_samples=500,
        square_period_s=10.0,
    )


def paper_profile(seed: int = 0) -> Profile:
    """Full-scale settings: 500 x 2500 campaign, 10k iterations, batch 256."""
    return Profile(
        name="paper",
        campaign=CampaignSpec(
            n_random=100, n_sinusoid=400, samples_per_traj=2500, rng_seed=seed
        ),
        train_forward=TrainConfig(
            learning_rate=1e-3, batch_size=256, dropout_keep=0.5,
            max_iters=10000, rng_seed=seed, lr_final_factor=0.1,
        ),
        train_inverse=TrainConfig(
            learning_rate=1e-3, batch_size=256, dropout_keep=0.5,
            max_iters=10000, rng_seed=seed, lr_final_factor=0.1,
        ),
        ilc=IlcConfig(max_iters=100, convergence_tol=1e-4),
        hidden_size=64,
        experiment_samples=2500,
        square_period_s=20.0,
    )


def get_profile(name: str, seed: int = 0) -> Profile:
    if name == "desk":
        return desk_profile(seed)
    if name == "paper":
        return paper_profile(seed)
    raise ValueError(f"unknown profile {name!r} (expected 'desk' or 'paper')")
