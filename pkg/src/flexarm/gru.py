"""GRU layer parameters and sequence kernels.

Cell convention (update gate weights the candidate):

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    hbar = tanh(W_h x + U_h (r o h) + b_h)
    h' = (1 - z) o h + z o hbar

so with all-zero parameters h' = 0.5 h. A `linear` flag forces both gates
open (z = r = 1) and replaces tanh by the identity, turning the cell into the
linear recurrence h' = W_h x + U_h h + b_h; this exactly linear variant backs
the ILC and adjoint oracles.

Sequence kernels process a whole (T, B, d) block per layer. Input projections
and weight-gradient accumulations are single large GEMMs; the sequential
recurrence uses preallocated buffers and in-place ufuncs (out=) because ufunc
dispatch would otherwise dominate the per-step cost.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

PARAM_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class GruLayerParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        h, d = self.W_z.shape
        for name in ("W_r", "W_h"):
            if getattr(self, name).shape != (h, d):
                raise ShapeError(f"{name} must have shape {(h, d)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (h, h):
                raise ShapeError(f"{name} must have shape {(h, h)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (h,):
                raise ShapeError(f"{name} must have shape {(h,)}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    def copy(self) -> "GruLayerParams":
        return GruLayerParams(*(getattr(self, n).copy() for n in PARAM_NAMES))


def init_gru_layer(input_size: int, hidden_size: int, rng: np.random.Generator) -> GruLayerParams:
    """Uniform(-s, s) weights with s = 1/sqrt(fan_in); zero biases."""
    s_in = 1.0 / np.sqrt(input_size)
    s_hid = 1.0 / np.sqrt(hidden_size)

    def w():
        return rng.uniform(-s_in, s_in, size=(hidden_size, input_size))

    def u():
        return rng.uniform(-s_hid, s_hid, size=(hidden_size, hidden_size))

    zeros = lambda: np.zeros(hidden_size)
    return GruLayerParams(w(), w(), w(), u(), u(), u(), zeros(), zeros(), zeros())


def zero_grads(params: GruLayerParams) -> dict:
    return {name: np.zeros_like(getattr(params, name)) for name in PARAM_NAMES}


def _sigmoid_inplace(a):
    # a <- 1 / (1 + exp(-a)); exp overflow on very negative inputs gives the
    # correctly saturated 0.0
    np.negative(a, out=a)
    np.exp(a, out=a)
    a += 1.0
    np.reciprocal(a, out=a)


class _LayerCache:
    """Forward intermediates of one layer over one sequence."""

    __slots__ = ("xs", "h_prev", "z", "r", "hbar", "rh", "linear")

    def __init__(self, xs, h_prev, z, r, hbar, rh, linear):
        self.xs = xs
        self.h_prev = h_prev
        self.z = z
        self.r = r
        self.hbar = hbar
        self.rh = rh
        self.linear = linear


def layer_forward_seq(params: GruLayerParams, xs: np.ndarray, linear: bool = False,
                      collect_cache: bool = False):
    """Run one layer over a (T, B, d) input block from a zero initial state.

    Returns (outputs (T, B, H), cache or None).
    """
    steps, batch, d = xs.shape
    hid = params.hidden_size
    flat = xs.reshape(steps * batch, d)

    if linear:
        pre_h = (flat @ params.W_h.T + params.b_h).reshape(steps, batch, hid)
        u_h_t = np.ascontiguousarray(params.U_h.T)
        outs = np.empty((steps, batch, hid))
        h_prev = np.empty((steps, batch, hid)) if collect_cache else None
        h = np.zeros((batch, hid))
        rec = np.empty((batch, hid))
        for t in range(steps):
            if collect_cache:
                h_prev[t] = h
            np.dot(h, u_h_t, out=rec)
            np.add(pre_h[t], rec, out=outs[t])
            h = outs[t]
        cache = _LayerCache(xs, h_prev, None, None, None, None, True) if collect_cache else None
        return outs, cache

    pre_z = (flat @ params.W_z.T + params.b_z).reshape(steps, batch, hid)
    pre_r = (flat @ params.W_r.T + params.b_r).reshape(steps, batch, hid)
    pre_h = (flat @ params.W_h.T + params.b_h).reshape(steps, batch, hid)
    u_zr_t = np.ascontiguousarray(np.hstack([params.U_z.T, params.U_r.T]))  # (H, 2H)
    u_h_t = np.ascontiguousarray(params.U_h.T)

    outs = np.empty((steps, batch, hid))
    if collect_cache:
        h_prev = np.empty((steps, batch, hid))
        z_s = np.empty((steps, batch, hid))
        r_s = np.empty((steps, batch, hid))
        hbar_s = pre_h  # reuse: overwritten in place with tanh values
        rh_s = np.empty((steps, batch, hid))
    h = np.zeros((batch, hid))
    rec = np.empty((batch, 2 * hid))
    buf_z = np.empty((batch, hid))
    buf_r = np.empty((batch, hid))
    buf_rh = np.empty((batch, hid))
    tmp = np.empty((batch, hid))

    with np.errstate(over="ignore"):
        for t in range(steps):
            z = z_s[t] if collect_cache else buf_z
            r = r_s[t] if collect_cache else buf_r
            rh = rh_s[t] if collect_cache else buf_rh
            hbar = pre_h[t]  # becomes tanh(. + U_h rh) in place
            np.dot(h, u_zr_t, out=rec)
            np.add(pre_z[t], rec[:, :hid], out=z)
            _sigmoid_inplace(z)
            np.add(pre_r[t], rec[:, hid:], out=r)
            _sigmoid_inplace(r)
            np.multiply(r, h, out=rh)
            np.dot(rh, u_h_t, out=tmp)
            hbar += tmp
            np.tanh(hbar, out=hbar)
            if collect_cache:
                h_prev[t] = h
            # h' = h + z * (hbar - h)
            np.subtract(hbar, h, out=tmp)
            np.multiply(tmp, z, out=tmp)
            np.add(h, tmp, out=outs[t])
            h = outs[t]

    cache = _LayerCache(xs, h_prev, z_s, r_s, hbar_s, rh_s, False) if collect_cache else None
    return outs, cache


def layer_backward_seq(params: GruLayerParams, cache: _LayerCache, d_outs: np.ndarray,
                       t_start: int):
    """Backprop one layer. d_outs: (T, B, H) grads w.r.t. outputs; positions
    after t_start are known zero and skipped. Returns (dxs (T, B, d), grads)."""
    xs = cache.xs
    steps, batch, d = xs.shape
    hid = params.hidden_size
    grads = zero_grads(params)
    hi = t_start + 1
    m = hi * batch
    flat_x = xs[:hi].reshape(m, d)

    if cache.linear:
        da_h = np.empty((hi, batch, hid))
        dh_rec = np.zeros((batch, hid))
        for t in range(t_start, -1, -1):
            np.add(d_outs[t], dh_rec, out=da_h[t])
            np.dot(da_h[t], params.U_h, out=dh_rec)
        flat_da = da_h.reshape(m, hid)
        grads["W_h"] = flat_da.T @ flat_x
        grads["U_h"] = flat_da.T @ cache.h_prev[:hi].reshape(m, hid)
        grads["b_h"] = flat_da.sum(axis=0)
        dxs = np.zeros((steps, batch, d))
        dxs[:hi] = (flat_da @ params.W_h).reshape(hi, batch, d)
        return dxs, grads

    u_zr = np.ascontiguousarray(np.vstack([params.U_z, params.U_r]))  # (2H, H)
    da_zr = np.empty((hi, batch, 2 * hid))
    da_h = np.empty((hi, batch, hid))
    dh_rec = np.zeros((batch, hid))
    dh = np.empty((batch, hid))
    drh = np.empty((batch, hid))
    tmp = np.empty((batch, hid))
    tmp2 = np.empty((batch, hid))
    for t in range(t_start, -1, -1):
        z = cache.z[t]
        r = cache.r[t]
        hbar = cache.hbar[t]
        h_prev = cache.h_prev[t]
        da_z = da_zr[t, :, :hid]
        da_r = da_zr[t, :, hid:]
        np.add(d_outs[t], dh_rec, out=dh)
        # dz = dh (hbar - h); da_h = dh z (1 - hbar^2); dh_prev = dh (1 - z)
        np.subtract(hbar, h_prev, out=tmp)
        np.multiply(dh, tmp, out=da_z)           # raw dz, gate derivative applied below
        np.multiply(hbar, hbar, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        np.multiply(dh, z, out=tmp2)
        np.multiply(tmp2, tmp, out=da_h[t])
        np.subtract(1.0, z, out=tmp)
        np.multiply(dh, tmp, out=dh_rec)
        # through the candidate's recurrent term
        np.dot(da_h[t], params.U_h, out=drh)
        np.multiply(drh, r, out=tmp)
        dh_rec += tmp
        # dr = drh h_prev; gate derivatives
        np.multiply(drh, h_prev, out=da_r)
        np.multiply(da_r, r, out=da_r)
        np.subtract(1.0, r, out=tmp)
        np.multiply(da_r, tmp, out=da_r)
        np.multiply(da_z, z, out=da_z)
        np.subtract(1.0, z, out=tmp)
        np.multiply(da_z, tmp, out=da_z)
        # recurrent flow through both gate terms in one GEMM
        np.dot(da_zr[t], u_zr, out=tmp)
        dh_rec += tmp

    flat_zr = da_zr.reshape(m, 2 * hid)
    flat_h = da_h.reshape(m, hid)
    flat_hp = cache.h_prev[:hi].reshape(m, hid)
    d_wzr = flat_zr.T @ flat_x
    grads["W_z"] = d_wzr[:hid]
    grads["W_r"] = d_wzr[hid:]
    grads["W_h"] = flat_h.T @ flat_x
    d_uzr = flat_zr.T @ flat_hp
    grads["U_z"] = d_uzr[:hid]
    grads["U_r"] = d_uzr[hid:]
    grads["U_h"] = flat_h.T @ cache.rh[:hi].reshape(m, hid)
    grads["b_z"] = flat_zr[:, :hid].sum(axis=0)
    grads["b_r"] = flat_zr[:, hid:].sum(axis=0)
    grads["b_h"] = flat_h.sum(axis=0)

    w_zr = np.vstack([params.W_z, params.W_r])  # (2H, d)
    dxs = np.zeros((steps, batch, d))
    dxs[:hi] = (flat_zr @ w_zr + flat_h @ params.W_h).reshape(hi, batch, d)
    return dxs, grads


def gru_cell_forward(params: GruLayerParams, x, h) -> np.ndarray:
    """Single cell step: x (d,), h (H,) -> h' (H,).

    Reference-style direct evaluation (the sequence kernels always start from
    a zero state; this accepts an arbitrary incoming state).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if x.shape[0] != params.input_size:
        raise ShapeError(f"x has {x.shape[0]} features, cell expects {params.input_size}")
    if h.shape[0] != params.hidden_size:
        raise ShapeError(f"h has {h.shape[0]} units, cell expects {params.hidden_size}")
    with np.errstate(over="ignore"):
        z = 1.0 / (1.0 + np.exp(-(params.W_z @ x + params.U_z @ h + params.b_z)))
        r = 1.0 / (1.0 + np.exp(-(params.W_r @ x + params.U_r @ h + params.b_r)))
    hbar = np.tanh(params.W_h @ x + params.U_h @ (r * h) + params.b_h)
    return (1.0 - z) * h + z * hbar
