"""Mini-batch training loop for the recurrent models.

Deterministic end to end: the run seed drives the train/validation split,
batch sampling and dropout masks, so a fixed (seed, config, dataset) triple
reproduces the training history bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .model import RecurrentModel, loss_and_grads, model_forward_batch, parameters, set_parameters
from .optim import adam_step, init_adam


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3   # initial; decays geometrically to lr * lr_final_factor
    batch_size: int = 256
    dropout_keep: float = 0.5
    max_iters: int = 10000
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.2
    log_every: int = 100
    lr_final_factor: float = 1.0  # 1.0 = constant learning rate
    normalize: bool = True        # fit input/output standardization from the train split
    val_subset_cap: int = 4096    # validation mse is computed on at most this many samples

    def __post_init__(self):
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")


def mse_of(model: RecurrentModel, inputs, targets, chunk: int = 8192) -> float:
    """Inference-mode mean squared error over a sample set."""
    total = 0.0
    count = 0
    for start in range(0, len(inputs), chunk):
        x = inputs[start:start + chunk]
        y = targets[start:start + chunk]
        err = model_forward_batch(model, x) - y
        total += float(np.sum(err * err))
        count += err.size
    return total / max(count, 1)


def normalized_mse(model: RecurrentModel, inputs, targets) -> float:
    """MSE divided by the mean per-joint variance of the targets."""
    var = float(np.mean(np.var(targets, axis=0)))
    return mse_of(model, inputs, targets) / max(var, 1e-300)


def train(model: RecurrentModel, inputs, targets, config: TrainConfig):
    """Train on (S, n, T) windows and (S, n) targets.

    Returns (trained model, history) where history is a list of
    {iteration, train_mse, val_mse} records. The history carries no wall-clock
    data, so a fixed seed reproduces it bit for bit. The input model is not
    modified.
    """
    model = model.copy()
    if config.max_iters == 0:
        return model, []

    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n_samples = inputs.shape[0]
    rng = np.random.default_rng(config.rng_seed)

    perm = rng.permutation(n_samples)
    n_val = int(round(n_samples * config.validation_fraction))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if len(train_idx) < config.batch_size:
        raise ValueError(
            f"training split ({len(train_idx)} samples) is smaller than one batch "
            f"({config.batch_size})"
        )
    val_x = inputs[val_idx[: config.val_subset_cap]]
    val_y = targets[val_idx[: config.val_subset_cap]]

    if config.normalize:
        tr_in = inputs[train_idx]
        tr_out = targets[train_idx]
        model.in_shift = tr_in.mean(axis=(0, 2))
        model.in_scale = np.maximum(tr_in.std(axis=(0, 2)), 1e-6)
        model.out_shift = tr_out.mean(axis=0)
        model.out_scale = np.maximum(tr_out.std(axis=0), 1e-6)

    params = parameters(model)
    opt = init_adam(params)
    history = []
    for it in range(1, config.max_iters + 1):
        batch = rng.choice(len(train_idx), size=config.batch_size, replace=False)
        idx = train_idx[batch]
        train_mse, grads = loss_and_grads(
            model, inputs[idx], targets[idx], config.dropout_keep, rng
        )
        lr = config.learning_rate * config.lr_final_factor ** (it / config.max_iters)
        opt, params = adam_step(
            opt, params, grads, lr,
            beta1=config.beta1, beta2=config.beta2, eps=config.eps,
        )
        set_parameters(model, params)
        if it % config.log_every == 0 or it == config.max_iters:
            val_mse = mse_of(model, val_x, val_y) if len(val_x) else float("nan")
            history.append({
                "iteration": it,
                "train_mse": train_mse,
                "val_mse": val_mse,
            })
    return model, history
