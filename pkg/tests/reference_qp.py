"""Log-barrier interior-point reference solver for the resolved-velocity QP.

Independent of the package's active-set implementation: equality-constrained
Newton steps on the barrier objective, barrier parameter driven to 1e-12, then
a KKT polish on the identified active set.
"""

import numpy as np


def solve_reference(h, g, a_eq, b_eq, a_in, b_in, tol: float = 1e-12):
    dim = h.shape[0]
    m_in = a_in.shape[0]
    m_eq = a_eq.shape[0]

    # strictly feasible start: center of the box-ish feasible set via lstsq
    x = np.zeros(dim)
    if m_eq:
        x = np.linalg.lstsq(a_eq, b_eq, rcond=None)[0]
    if m_in:
        slack = b_in - a_in @ x
        if np.any(slack <= 0):
            # pull strictly inside along the most violated constraints
            for _ in range(100):
                slack = b_in - a_in @ x
                bad = slack <= 1e-9
                if not np.any(bad):
                    break
                step = a_in[bad].sum(axis=0)
                if m_eq:
                    # stay on the equality manifold
                    z = np.linalg.lstsq(a_eq, a_eq @ step, rcond=None)[0]
                    step = step - z
                norm = np.linalg.norm(step)
                if norm < 1e-14:
                    raise RuntimeError("reference solver: no strictly feasible point")
                x = x - 0.1 * step / norm
        if np.any(b_in - a_in @ x <= 0):
            raise RuntimeError("reference solver: could not find interior point")

    if m_in == 0:
        # plain equality-constrained QP
        kkt = np.block([[h, a_eq.T], [a_eq, np.zeros((m_eq, m_eq))]]) if m_eq else h
        rhs = np.concatenate([-g, b_eq]) if m_eq else -g
        sol = np.linalg.solve(kkt, rhs)
        return sol[:dim]

    t_bar = 1.0
    for _ in range(80):
        for _newton in range(60):
            slack = b_in - a_in @ x
            grad = t_bar * (h @ x + g) + a_in.T @ (1.0 / slack)
            hess = t_bar * h + a_in.T @ np.diag(1.0 / slack**2) @ a_in
            if m_eq:
                kkt = np.block([[hess, a_eq.T], [a_eq, np.zeros((m_eq, m_eq))]])
                rhs = np.concatenate([-grad, b_eq - a_eq @ x])
                step = np.linalg.solve(kkt, rhs)[:dim]
            else:
                step = np.linalg.solve(hess, -grad)
            # fraction-to-boundary line search
            alpha = 1.0
            a_step = a_in @ step
            for i in range(m_in):
                if a_step[i] > 0:
                    alpha = min(alpha, 0.99 * slack[i] / a_step[i])
            x_new = x + alpha * step
            decr = np.linalg.norm(step)
            x = x_new
            if decr * alpha < 1e-13:
                break
        if m_in / t_bar < tol:
            break
        t_bar *= 10.0

    # polish: solve the equality-KKT on the active set identified by the barrier
    slack = b_in - a_in @ x
    lam = 1.0 / (t_bar * slack)
    active = np.where(lam > 1e-5)[0]
    rows = [a_eq] if m_eq else []
    rhs_rows = [b_eq] if m_eq else []
    if len(active):
        rows.append(a_in[active])
        rhs_rows.append(b_in[active])
    if rows:
        c_mat = np.vstack(rows)
        c_rhs = np.concatenate(rhs_rows)
        m = c_mat.shape[0]
        kkt = np.block([[h, c_mat.T], [c_mat, np.zeros((m, m))]])
        rhs = np.concatenate([-g, c_rhs])
        sol = np.linalg.solve(kkt, rhs)
        x_pol = sol[:dim]
        lam_pol = sol[dim + m_eq:]
        feasible = (not m_in) or np.all(a_in @ x_pol <= b_in + 1e-9)
        if feasible and (len(active) == 0 or np.all(lam_pol >= -1e-9)):
            return x_pol
    else:
        x_pol = np.linalg.solve(h, -g)
        if (not m_in) or np.all(a_in @ x_pol <= b_in + 1e-9):
            return x_pol
    return x
