"""Resolved-velocity control as a small dense QP.

Variables x = [qdot (n); alpha_r; alpha_p] minimize

    || J qdot - alpha(alpha_r, alpha_p) v_d ||^2
      + eps_r (alpha_r - 1)^2 + eps_p (alpha_p - 1)^2 + mu ||qdot||^2

where alpha_r scales the angular (first three) components of the commanded
spatial velocity and alpha_p the linear ones. The tiny Tikhonov term mu makes
the redundant-arm problem strictly convex so the solution is unique (without
it the Jacobian null space is free). Constraints:

  equality:   orientation lock, J[0:3] qdot = alpha_r * omega_d
              (plus arbitrary extra rows over qdot)
  inequality: joint speed caps and position limits linearized as velocity
              bounds, qdot <= (hi - q)/dt and qdot >= (lo - q)/dt

Solved with a primal active-set method; deterministic.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import QpInfeasibleError, ShapeError


@dataclass
class QpProblem:
    J: np.ndarray                   # (6, n)
    v_d: np.ndarray                 # (6,) = [omega_d (rad/s); v_lin_d (m/s)]
    eps_r: float = 100.0
    eps_p: float = 100.0
    orientation_lock: bool = False  # equality rows J_ang qdot = alpha_r omega_d
    extra_eq: tuple = None          # (A (m, n), b (m,)) rows over qdot
    qdot_max: np.ndarray = None     # (n,) symmetric speed cap
    q: np.ndarray = None            # current joints, for limit linearization
    dt: float = None
    joint_limits: np.ndarray = None  # (n, 2)
    damping: float = 1e-7

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=np.float64)
        self.v_d = np.asarray(self.v_d, dtype=np.float64).reshape(6)
        if self.J.ndim != 2 or self.J.shape[0] != 6:
            raise ShapeError(f"J must be 6 x n, got {self.J.shape}")
        if not np.all(np.isfinite(self.J)) or not np.all(np.isfinite(self.v_d)):
            raise ValueError("QP inputs contain non-finite values")
        if self.eps_r <= 0 or self.eps_p <= 0:
            raise ValueError("eps_r and eps_p must be positive")

    @property
    def n_joints(self) -> int:
        return self.J.shape[1]


@dataclass
class QpSolution:
    qdot: np.ndarray
    alpha_r: float
    alpha_p: float
    lam_eq: np.ndarray = field(default=None, repr=False)
    lam_in: np.ndarray = field(default=None, repr=False)
    active_set: tuple = ()
    iterations: int = 0


def assemble(p: QpProblem):
    """(H, g, A_eq, b_eq, A_in, b_in) of the QP in x = [qdot; alpha_r; alpha_p].

    Objective is 1/2 x^T H x + g^T x (constant dropped); inequalities are
    A_in x <= b_in. Shared by the solver, the tests' reference solver and the
    KKT checks.
    """
    n = p.n_joints
    dim = n + 2
    d_map = np.zeros((6, 2))
    d_map[0:3, 0] = p.v_d[0:3]
    d_map[3:6, 1] = p.v_d[3:6]
    m_mat = np.hstack([p.J, -d_map])  # residual = M x
    h = 2.0 * (m_mat.T @ m_mat)
    h[:n, :n] += 2.0 * p.damping * np.eye(n)
    h[n, n] += 2.0 * p.eps_r
    h[n + 1, n + 1] += 2.0 * p.eps_p
    g = np.zeros(dim)
    g[n] = -2.0 * p.eps_r
    g[n + 1] = -2.0 * p.eps_p

    eq_rows, eq_rhs = [], []
    if p.orientation_lock:
        block = np.zeros((3, dim))
        block[:, :n] = p.J[0:3]
        block[:, n] = -p.v_d[0:3]
        eq_rows.append(block)
        eq_rhs.append(np.zeros(3))
    if p.extra_eq is not None:
        a_extra, b_extra = p.extra_eq
        a_extra = np.asarray(a_extra, dtype=np.float64)
        block = np.zeros((a_extra.shape[0], dim))
        block[:, :n] = a_extra
        eq_rows.append(block)
        eq_rhs.append(np.asarray(b_extra, dtype=np.float64))
    a_eq = np.vstack(eq_rows) if eq_rows else np.zeros((0, dim))
    b_eq = np.concatenate(eq_rhs) if eq_rhs else np.zeros(0)

    in_rows, in_rhs = [], []
    lo = hi = None
    if p.qdot_max is not None:
        cap = np.asarray(p.qdot_max, dtype=np.float64)
        hi = cap.copy()
        lo = -cap.copy()
    if p.q is not None and p.dt is not None and p.joint_limits is not None:
        q = np.asarray(p.q, dtype=np.float64)
        lim = np.asarray(p.joint_limits, dtype=np.float64)
        pos_hi = (lim[:, 1] - q) / p.dt
        pos_lo = (lim[:, 0] - q) / p.dt
        hi = pos_hi if hi is None else np.minimum(hi, pos_hi)
        lo = pos_lo if lo is None else np.maximum(lo, pos_lo)
    if hi is not None:
        sel = np.zeros((n, dim))
        sel[:, :n] = np.eye(n)
        in_rows.extend([sel, -sel])
        in_rhs.extend([hi, -lo])
    a_in = np.vstack(in_rows) if in_rows else np.zeros((0, dim))
    b_in = np.concatenate(in_rhs) if in_rhs else np.zeros(0)
    return h, g, a_eq, b_eq, a_in, b_in


def _solve_kkt(h, g_vec, c_mat, x):
    """Step direction p and multipliers for min .5 p'Hp + (Hx+g)'p s.t. C p = 0."""
    dim = h.shape[0]
    m = c_mat.shape[0]
    kkt = np.zeros((dim + m, dim + m))
    kkt[:dim, :dim] = h
    kkt[:dim, dim:] = c_mat.T
    kkt[dim:, :dim] = c_mat
    rhs = np.zeros(dim + m)
    rhs[:dim] = -(h @ x + g_vec)
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:dim], sol[dim:]


def solve_qp(h, g_vec, a_eq, b_eq, a_in, b_in, x0, max_iters: int = 200,
             tol: float = 1e-10):
    """Primal active-set QP for strictly convex H; x0 must be feasible."""
    x = x0.copy()
    n_eq = a_eq.shape[0]
    working = []  # active inequality indices
    last_lam = (np.zeros(n_eq), np.zeros(a_in.shape[0]))
    for it in range(1, max_iters + 1):
        rows = [a_eq] if n_eq else []
        if working:
            rows.append(a_in[working])
        c_mat = np.vstack(rows) if rows else np.zeros((0, h.shape[0]))
        p, lam = _solve_kkt(h, g_vec, c_mat, x)
        if np.max(np.abs(p)) < tol:
            lam_eq = lam[:n_eq]
            lam_w = lam[n_eq:]
            lam_in = np.zeros(a_in.shape[0])
            for idx, li in zip(working, lam_w):
                lam_in[idx] = li
            last_lam = (lam_eq, lam_in)
            if len(working) == 0 or np.all(lam_w >= -1e-9):
                return x, lam_eq, lam_in, tuple(sorted(working)), it
            drop = working[int(np.argmin(lam_w))]
            working.remove(drop)
            continue
        # longest feasible step along p
        step = 1.0
        blocker = -1
        for i in range(a_in.shape[0]):
            if i in working:
                continue
            denom = a_in[i] @ p
            if denom > tol:
                dist = (b_in[i] - a_in[i] @ x) / denom
                if dist < step - 1e-14:
                    step = max(dist, 0.0)
                    blocker = i
        x = x + step * p
        if blocker >= 0:
            working.append(blocker)
    return x, last_lam[0], last_lam[1], tuple(sorted(working)), max_iters


def _feasible_start(a_eq, b_eq, a_in, b_in, dim, n):
    seeds = [np.concatenate([np.zeros(n), [1.0, 1.0]]),
             np.zeros(dim)]
    for seed in seeds:
        x = seed.copy()
        if a_eq.shape[0]:
            resid = a_eq @ x - b_eq
            correction, residuals, rank, _ = np.linalg.lstsq(a_eq, resid, rcond=None)
            x = x - correction
            if np.max(np.abs(a_eq @ x - b_eq)) > 1e-8:
                raise QpInfeasibleError("equality constraints are inconsistent")
        if a_in.shape[0] == 0 or np.all(a_in @ x <= b_in + 1e-12):
            return x
    raise QpInfeasibleError("no feasible starting point found")


def resolved_velocity_solve(p: QpProblem) -> QpSolution:
    """Solve the resolved-velocity QP; deterministic KKT-satisfying solution."""
    h, g_vec, a_eq, b_eq, a_in, b_in = assemble(p)
    n = p.n_joints
    x0 = _feasible_start(a_eq, b_eq, a_in, b_in, n + 2, n)
    x, lam_eq, lam_in, active, iters = solve_qp(h, g_vec, a_eq, b_eq, a_in, b_in, x0)
    return QpSolution(
        qdot=x[:n],
        alpha_r=float(x[n]),
        alpha_p=float(x[n + 1]),
        lam_eq=lam_eq,
        lam_in=lam_in,
        active_set=active,
        iterations=iters,
    )


def kkt_residual(p: QpProblem, sol: QpSolution) -> dict:
    """Stationarity / feasibility / complementarity residuals of a solution."""
    h, g_vec, a_eq, b_eq, a_in, b_in = assemble(p)
    x = np.concatenate([sol.qdot, [sol.alpha_r, sol.alpha_p]])
    stat = h @ x + g_vec
    if a_eq.shape[0]:
        stat = stat + a_eq.T @ sol.lam_eq
    if a_in.shape[0]:
        stat = stat + a_in.T @ sol.lam_in
    eq_viol = np.max(np.abs(a_eq @ x - b_eq)) if a_eq.shape[0] else 0.0
    in_viol = np.max(a_in @ x - b_in) if a_in.shape[0] else 0.0
    comp = np.max(np.abs(sol.lam_in * (a_in @ x - b_in))) if a_in.shape[0] else 0.0
    return {
        "stationarity": float(np.max(np.abs(stat))),
        "eq_violation": float(eq_viol),
        "in_violation": float(max(in_viol, 0.0)),
        "complementarity": float(comp),
        "dual_feasibility": float(max(-(sol.lam_in.min() if sol.lam_in is not None and len(sol.lam_in) else 0.0), 0.0)),
    }


def qp_objective(p: QpProblem, qdot, alpha_r, alpha_p) -> float:
    """Full (constant-included) objective value for optimality spot checks."""
    resid = p.J @ qdot - np.concatenate([alpha_r * p.v_d[0:3], alpha_p * p.v_d[3:6]])
    return float(
        resid @ resid
        + p.eps_r * (alpha_r - 1.0) ** 2
        + p.eps_p * (alpha_p - 1.0) ** 2
        + p.damping * (qdot @ qdot)
    )
