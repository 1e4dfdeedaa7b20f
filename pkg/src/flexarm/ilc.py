"""Gradient-based iterative learning control on the learned forward model.

For a fixed desired trajectory q_d the input iterate is refined as

    u_{k+1} = u_k - alpha_k * grad_k

where grad_k is the adjoint (vector-Jacobian) gradient of the windowed
rollout error through the trained forward model and alpha_k comes from a 1-d
line search. The first T samples have no model prediction: the error there is
excluded from the objective and u is frozen to its initial values on that
prefix. `ilc_on_plant` runs the same loop but measures the error on the
simulated plant, accepting only error-decreasing steps.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import RecurrentModel, input_vjp, model_forward_batch
from .plant import PlantConfig, simulate
from .trajectory import Trajectory


@dataclass
class IlcConfig:
    max_iters: int = 100
    convergence_tol: float = 1e-4   # relative improvement over a 3-iteration window
    grid_lo_exp: int = -8           # line-search grid alpha_ref * 2^k, k in [lo, hi]
    grid_hi_exp: int = 2
    golden_iters: int = 10
    clamp_to_limits: bool = True
    joint_limits: np.ndarray = None  # (n, 2); required if clamp_to_limits

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.joint_limits is not None:
            self.joint_limits = np.asarray(self.joint_limits, dtype=np.float64)


def sliding_windows(data: np.ndarray, window_len: int) -> np.ndarray:
    """(N - T + 1, n, T) contiguous windows of an (n, N) array."""
    views = np.lib.stride_tricks.sliding_window_view(data, window_len, axis=1)
    return np.ascontiguousarray(views.transpose(1, 0, 2))


def predict_rollout(model: RecurrentModel, u: Trajectory) -> Trajectory:
    """Slide the model over u; output j is the predicted q at sample j + T."""
    T = model.window_len
    if u.n_samples <= T:
        raise ValueError(f"rollout needs more than T={T} samples, got {u.n_samples}")
    windows = sliding_windows(u.data, T)[:-1]  # positions 0 .. N-T-1
    pred = model_forward_batch(model, windows)
    return Trajectory(pred.T, u.sample_rate)


def _rollout_error_l2(model, u_data, target_suffix, sample_rate):
    windows = sliding_windows(u_data, model.window_len)[:-1]
    pred = model_forward_batch(model, windows).T
    return float(np.sqrt(np.sum((pred - target_suffix) ** 2))), pred


def ilc_gradient(model: RecurrentModel, u: Trajectory, q_d: Trajectory) -> np.ndarray:
    """Gradient of (1/2) || predict_rollout(u) - q_d[T:] ||^2 w.r.t. u.

    Overlapping window gradients are summed into a full-length (n, N) array.
    """
    if u.n_joints != model.n_joints or q_d.n_joints != model.n_joints:
        raise ShapeError("joint-count mismatch between model and trajectories")
    if u.data.shape != q_d.data.shape:
        raise ShapeError("u and q_d must have equal shapes")
    T = model.window_len
    pred = predict_rollout(model, u)
    err = pred.data - q_d.data[:, T:]
    return gradient_from_error(model, u, err)


def gradient_from_error(model: RecurrentModel, u: Trajectory, err: np.ndarray) -> np.ndarray:
    """Adjoint accumulation with explicit per-window cotangents err (n, N-T)."""
    T = model.window_len
    n, N = u.data.shape
    if err.shape != (n, N - T):
        raise ShapeError(f"error must be (n, N-T) = {(n, N - T)}, got {err.shape}")
    windows = sliding_windows(u.data, T)[:-1]
    vjps = input_vjp(model, windows, err.T)  # (N-T, n, T)
    grad = np.zeros((n, N))
    for j in range(vjps.shape[0]):
        grad[:, j:j + T] += vjps[j]
    return grad


def _apply_step(u_data, direction, alpha, cfg: IlcConfig):
    cand = u_data - alpha * direction
    if cfg.clamp_to_limits and cfg.joint_limits is not None:
        np.clip(cand, cfg.joint_limits[:, 0:1], cfg.joint_limits[:, 1:2], out=cand)
    return cand


def line_search(model: RecurrentModel, u: Trajectory, direction: np.ndarray,
                q_d: Trajectory, cfg: IlcConfig, objective=None) -> float:
    """1-d search for the step size minimizing the rollout error along -direction.

    Geometric grid {2^lo .. 2^hi} * alpha_ref walked from the quadratic
    estimate alpha_ref, then golden-section refinement of the bracketing
    interval. Returns 0.0 when no step improves the objective (convergence
    signal for the caller).
    """
    T = model.window_len
    target_suffix = q_d.data[:, T:]

    if objective is None:
        def objective(u_data):
            err, _ = _rollout_error_l2(model, u_data, target_suffix, u.sample_rate)
            return err

    def phi(alpha):
        return objective(_apply_step(u.data, direction, alpha, cfg))

    d_norm = float(np.sqrt(np.sum(direction ** 2)))
    if d_norm == 0.0:
        return 0.0
    phi0 = phi(0.0)
    if phi0 == 0.0:
        return 0.0

    # quadratic reference step from a directional finite difference:
    # alpha* ~ (e . G d) / ||G d||^2, exact for a linear rollout
    eps = 1e-4 / max(np.abs(direction).max(), 1e-30)
    err0, pred0 = _rollout_error_l2(model, u.data, target_suffix, u.sample_rate)
    _, pred1 = _rollout_error_l2(model, u.data - eps * direction, target_suffix,
                                 u.sample_rate)
    gd = (pred0 - pred1) / eps
    gd_sq = float(np.sum(gd * gd))
    e0 = pred0 - target_suffix
    alpha_ref = float(np.sum(e0 * gd)) / gd_sq if gd_sq > 0 else 1.0
    if not np.isfinite(alpha_ref) or alpha_ref <= 0:
        alpha_ref = 1.0

    # walk the grid outward from k = 0 while it keeps improving
    cache = {}

    def phi_k(k):
        if k not in cache:
            cache[k] = phi(alpha_ref * 2.0 ** k)
        return cache[k]

    best_k = 0
    best_val = phi_k(0)
    for step in (1, -1):
        k = step
        while cfg.grid_lo_exp <= k <= cfg.grid_hi_exp:
            val = phi_k(k)
            if val < best_val:
                best_val, best_k = val, k
                k += step
            else:
                break

    if best_val >= phi0:
        return 0.0

    # golden-section refinement on the bracketing interval
    lo = alpha_ref * 2.0 ** max(best_k - 1, cfg.grid_lo_exp - 1)
    hi = alpha_ref * 2.0 ** min(best_k + 1, cfg.grid_hi_exp + 1)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = phi(c), phi(d)
    for _ in range(cfg.golden_iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = phi(d)
    alpha = c if fc < fd else d
    val = min(fc, fd)
    if best_val < val:
        alpha, val = alpha_ref * 2.0 ** best_k, best_val
    return float(alpha) if val < phi0 else 0.0


def _refine_loop(u0: Trajectory, q_d: Trajectory, cfg: IlcConfig, model: RecurrentModel,
                 objective, gradient):
    """Shared descent loop; objective(u_data) -> scalar, gradient(u_data) -> (n, N)."""
    T = model.window_len
    u = u0.copy()
    history = [objective(u.data)]
    for _ in range(cfg.max_iters):
        if history[-1] == 0.0:
            break
        grad = gradient(u.data)
        grad[:, :T] = 0.0  # prefix frozen to the initial iterate
        if not np.any(grad):
            break
        alpha = line_search(model, u, grad, q_d, cfg, objective=objective)
        if alpha == 0.0:
            break
        new_data = _apply_step(u.data, grad, alpha, cfg)
        new_err = objective(new_data)
        if new_err > history[-1]:
            break  # line search is non-increasing by construction; stop defensively
        u = Trajectory(new_data, u.sample_rate)
        history.append(new_err)
        if len(history) >= 4:
            window_drop = history[-4] - history[-1]
            if window_drop < cfg.convergence_tol * max(history[-4], 1e-300):
                break
    return u, history


def ilc_refine(model: RecurrentModel, q_d: Trajectory, cfg: IlcConfig):
    """Refine the input for q_d against the learned forward model.

    Starts from u0 = q_d. Returns (u_star, history of predicted l2 errors);
    the history is monotone non-increasing.
    """
    if q_d.n_joints != model.n_joints:
        raise ShapeError("joint-count mismatch between model and q_d")
    T = model.window_len
    if q_d.n_samples <= T:
        raise ValueError(f"q_d must be longer than T={T}")
    target_suffix = q_d.data[:, T:]

    def objective(u_data):
        err, _ = _rollout_error_l2(model, u_data, target_suffix, q_d.sample_rate)
        return err

    def gradient(u_data):
        return ilc_gradient(model, Trajectory(u_data, q_d.sample_rate), q_d)

    return _refine_loop(q_d.copy(), q_d, cfg, model, objective, gradient)


def ilc_on_plant(plant_config: PlantConfig, q_d: Trajectory, u0: Trajectory,
                 cfg: IlcConfig, model: RecurrentModel):
    """Plant-in-the-loop refinement from an existing feedforward u0.

    The error is measured on the simulated plant; the descent direction still
    comes from the learned model's adjoint. Only error-decreasing steps are
    accepted, so the history never increases.
    """
    T = model.window_len
    target_suffix = q_d.data[:, T:]

    def objective(u_data):
        q = simulate(plant_config, Trajectory(u_data, q_d.sample_rate))
        return float(np.sqrt(np.sum((q.data[:, T:] - target_suffix) ** 2)))

    def gradient(u_data):
        q = simulate(plant_config, Trajectory(u_data, q_d.sample_rate))
        err = q.data[:, T:] - target_suffix
        return gradient_from_error(model, Trajectory(u_data, q_d.sample_rate), err)

    return _refine_loop(u0.copy(), q_d, cfg, model, objective, gradient)
