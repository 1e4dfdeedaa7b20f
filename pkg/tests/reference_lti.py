"""Independent dense state-space realization of the single-joint plant.

Derived by hand from the documented update scheme (implicit own-body damping,
positions advanced with the new velocities), without reusing any plant code:

    D_m v_m' = J_m v_m + dt (kp (u - q_m) - ks (q_m - q_l) + ds v_l),
        D_m = J_m + dt (kd + ds)
    D_l v_l' = v_l + dt (ks (q_m - q_l) + ds v_m - g sin(q_l)) / J_l,
        D_l = 1 + dt ds / J_l
    q' = q + dt v'

With gravity_gain = 0 this is exactly linear: x(t+1) = A x(t) + B u(t) over
x = [q_m, v_m, q_l, v_l]; the measured output is q_l.
"""

import numpy as np


def single_joint_state_space(motor_inertia, link_inertia, spring_stiffness,
                             spring_damping, servo_kp, servo_kd, dt):
    jm, jl = motor_inertia, link_inertia
    ks, ds = spring_stiffness, spring_damping
    kp, kd = servo_kp, servo_kd
    d_m = jm + dt * (kd + ds)
    d_l = 1.0 + dt * ds / jl

    row_vm = np.array([-dt * (kp + ks) / d_m, jm / d_m, dt * ks / d_m, dt * ds / d_m])
    b_vm = dt * kp / d_m
    row_vl = np.array([dt * ks / (jl * d_l), dt * ds / (jl * d_l),
                       -dt * ks / (jl * d_l), 1.0 / d_l])

    a = np.zeros((4, 4))
    b = np.zeros(4)
    a[1] = row_vm
    b[1] = b_vm
    a[3] = row_vl
    a[0] = np.array([1.0, 0.0, 0.0, 0.0]) + dt * row_vm
    b[0] = dt * b_vm
    a[2] = np.array([0.0, 0.0, 1.0, 0.0]) + dt * row_vl
    return a, b


def simulate_lti(a, b, commands, x0=None):
    """x(t+1) = A x(t) + B u(t); returns the link-position sequence."""
    x = np.zeros(4) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    out = np.empty(len(commands))
    for t, u in enumerate(commands):
        x = a @ x + b * u
        out[t] = x[2]
    return out
