"""Stacked recurrent models for forward and inverse dynamics.

Two topologies share one parameter container:

* unidirectional (default depth 4): reads an n x T window left to right,
  prediction is an affine readout of the top layer's final hidden state.
* bidirectional (default depth 2): two independent direction stacks read the
  window forwards and backwards; the prediction is an affine readout of their
  top-layer hidden states at the window centre (index T // 2), concatenated
  forward-then-backward.

Both apply an affine input/output normalization (identity by default, fitted
by the trainer) so the recurrent core works on standardized signals. Dropout
is inverted and applied to every layer-output boundary (between layers and
before the readout), never on recurrent connections.
"""

import io
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ShapeError
from .gru import (
    PARAM_NAMES,
    GruLayerParams,
    init_gru_layer,
    layer_backward_seq,
    layer_forward_seq,
)

UNIDIRECTIONAL = "unidirectional"
BIDIRECTIONAL = "bidirectional"

CHECKPOINT_MAGIC = b"FXCK"
CHECKPOINT_VERSION = 1


@dataclass
class RecurrentModel:
    direction: str
    layers: list                 # forward stack, bottom to top
    layers_back: list            # backward stack (bidirectional only, else [])
    w_out: np.ndarray            # (n_joints, H) or (n_joints, 2H)
    b_out: np.ndarray            # (n_joints,)
    window_len: int
    n_joints: int
    hidden_size: int
    in_shift: np.ndarray = None
    in_scale: np.ndarray = None
    out_shift: np.ndarray = None
    out_scale: np.ndarray = None
    linear_mode: bool = False    # gates forced open + identity activation (analysis)

    def __post_init__(self):
        if self.direction not in (UNIDIRECTIONAL, BIDIRECTIONAL):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.direction == UNIDIRECTIONAL and self.layers_back:
            raise ValueError("unidirectional model must not have a backward stack")
        if self.direction == BIDIRECTIONAL and len(self.layers_back) != len(self.layers):
            raise ValueError("bidirectional model needs equal-depth direction stacks")
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = np.asarray(self.b_out, dtype=np.float64)
        readout_in = self.hidden_size * (2 if self.direction == BIDIRECTIONAL else 1)
        if self.w_out.shape != (self.n_joints, readout_in):
            raise ShapeError(f"readout must be {(self.n_joints, readout_in)}, got {self.w_out.shape}")
        if self.b_out.shape != (self.n_joints,):
            raise ShapeError("readout bias shape mismatch")
        n = self.n_joints
        self.in_shift = np.zeros(n) if self.in_shift is None else np.asarray(self.in_shift, dtype=np.float64)
        self.in_scale = np.ones(n) if self.in_scale is None else np.asarray(self.in_scale, dtype=np.float64)
        self.out_shift = np.zeros(n) if self.out_shift is None else np.asarray(self.out_shift, dtype=np.float64)
        self.out_scale = np.ones(n) if self.out_scale is None else np.asarray(self.out_scale, dtype=np.float64)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "RecurrentModel":
        return RecurrentModel(
            direction=self.direction,
            layers=[p.copy() for p in self.layers],
            layers_back=[p.copy() for p in self.layers_back],
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
            window_len=self.window_len,
            n_joints=self.n_joints,
            hidden_size=self.hidden_size,
            in_shift=self.in_shift.copy(),
            in_scale=self.in_scale.copy(),
            out_shift=self.out_shift.copy(),
            out_scale=self.out_scale.copy(),
            linear_mode=self.linear_mode,
        )


def build_model(direction: str, n_joints: int, window_len: int,
                hidden_size: int = 64, depth: int = None, seed: int = 0) -> RecurrentModel:
    """Fresh model with seeded uniform(-1/sqrt(fan_in), ..) weights."""
    if depth is None:
        depth = 4 if direction == UNIDIRECTIONAL else 2
    rng = np.random.default_rng(seed)

    def stack():
        layers = []
        d_in = n_joints
        for _ in range(depth):
            layers.append(init_gru_layer(d_in, hidden_size, rng))
            d_in = hidden_size
        return layers

    layers = stack()
    layers_back = stack() if direction == BIDIRECTIONAL else []
    readout_in = hidden_size * (2 if direction == BIDIRECTIONAL else 1)
    s = 1.0 / np.sqrt(readout_in)
    w_out = rng.uniform(-s, s, size=(n_joints, readout_in))
    b_out = np.zeros(n_joints)
    return RecurrentModel(
        direction=direction, layers=layers, layers_back=layers_back,
        w_out=w_out, b_out=b_out, window_len=window_len,
        n_joints=n_joints, hidden_size=hidden_size,
    )


# -- forward -----------------------------------------------------------------


def _check_windows(model, windows):
    windows = np.asarray(windows, dtype=np.float64)
    single = windows.ndim == 2
    if single:
        windows = windows[None]
    if windows.shape[1:] != (model.n_joints, model.window_len):
        raise ShapeError(
            f"window shape {windows.shape[1:]} does not match model "
            f"({model.n_joints}, {model.window_len})"
        )
    return windows, single


def _run_stack(layers, xs_block, linear, dropout_keep, rng, collect_cache):
    """Run a direction stack over a (T, B, d) input block.

    Returns (top-layer outputs after dropout (T, B, H), caches). Dropout is
    inverted and applied to every layer's output sequence.
    """
    caches = []  # per layer: (layer cache, dropout mask block or None)
    current = xs_block
    for params in layers:
        outs, cache = layer_forward_seq(params, current, linear, collect_cache)
        mask = None
        if dropout_keep < 1.0:
            mask = (rng.random(outs.shape) < dropout_keep) / dropout_keep
            outs = outs * mask
        caches.append((cache, mask))
        current = outs
    return current, caches


def _backprop_stack(layers, caches, d_top, t_start, linear):
    """Backprop a direction stack. d_top: (T, B, H) grads of the top layer's
    post-dropout outputs, zero after t_start. Returns (d_inputs (T, B, d), grads)."""
    grads = [None] * len(layers)
    d_outs = d_top
    for li in range(len(layers) - 1, -1, -1):
        cache, mask = caches[li]
        if mask is not None:
            d_outs = d_outs * mask
        d_outs, grads[li] = layer_backward_seq(layers[li], cache, d_outs, t_start)
    return d_outs, grads


def _forward_core(model, windows, dropout_keep=1.0, rng=None, collect_cache=False):
    """Shared forward: returns (prediction (B, n), readout input, backward ctx)."""
    T = windows.shape[2]
    x_norm = (windows - model.in_shift[None, :, None]) / model.in_scale[None, :, None]
    xs_block = np.ascontiguousarray(x_norm.transpose(2, 0, 1))  # (T, B, n)
    if dropout_keep < 1.0 and rng is None:
        raise ValueError("dropout requires an rng")

    if model.direction == UNIDIRECTIONAL:
        outs, caches = _run_stack(model.layers, xs_block, model.linear_mode,
                                  dropout_keep, rng, collect_cache)
        readout_in = outs[T - 1]
        ctx = (caches, None, T)
    else:
        c = T // 2
        outs_f, caches_f = _run_stack(model.layers, xs_block, model.linear_mode,
                                      dropout_keep, rng, collect_cache)
        outs_b, caches_b = _run_stack(model.layers_back,
                                      np.ascontiguousarray(xs_block[::-1]),
                                      model.linear_mode, dropout_keep, rng, collect_cache)
        # backward stack processes reversed time; original index t sits at T-1-t
        readout_in = np.concatenate([outs_f[c], outs_b[T - 1 - c]], axis=1)
        ctx = (caches_f, caches_b, T)

    y_norm = readout_in @ model.w_out.T + model.b_out
    y = y_norm * model.out_scale + model.out_shift
    return y, readout_in, ctx


def model_forward(model: RecurrentModel, window) -> np.ndarray:
    """Prediction for one n x T window (dropout disabled)."""
    windows, single = _check_windows(model, window)
    y, _, _ = _forward_core(model, windows)
    return y[0] if single else y


def model_forward_batch(model: RecurrentModel, windows) -> np.ndarray:
    """Predictions for a (B, n, T) stack of windows (dropout disabled)."""
    windows, _ = _check_windows(model, windows)
    y, _, _ = _forward_core(model, windows)
    return y


# -- backward ----------------------------------------------------------------


def _backward_core(model, ctx, readout_in, dy):
    """Backprop dy (B, n) through readout and stacks.

    Returns (d_window (B, n, T), grads dict). Gradient w.r.t. the raw
    (unnormalized) window.
    """
    caches_f, caches_b, T = ctx
    dy_norm = dy * model.out_scale
    d_readout_in = dy_norm @ model.w_out
    g_w_out = dy_norm.T @ readout_in
    g_b_out = dy_norm.sum(axis=0)

    batch = dy.shape[0]
    hid = model.hidden_size

    def seeded(pos, val):
        d = np.zeros((T, batch, hid))
        d[pos] = val
        return d

    if model.direction == UNIDIRECTIONAL:
        d_top = seeded(T - 1, d_readout_in)
        d_inputs, grads_f = _backprop_stack(
            model.layers, caches_f, d_top, T - 1, model.linear_mode
        )
        grads_b = []
        d_window = d_inputs.transpose(1, 2, 0)
    else:
        c = T // 2
        d_f = seeded(c, d_readout_in[:, :hid])
        d_b = seeded(T - 1 - c, d_readout_in[:, hid:])
        d_inputs_f, grads_f = _backprop_stack(
            model.layers, caches_f, d_f, c, model.linear_mode
        )
        d_inputs_b, grads_b = _backprop_stack(
            model.layers_back, caches_b, d_b, T - 1 - c, model.linear_mode
        )
        # undo the backward stack's time reversal before summing
        d_window = (d_inputs_f + d_inputs_b[::-1]).transpose(1, 2, 0)

    d_window = d_window / model.in_scale[None, :, None]

    grads = OrderedDict()
    for prefix, layer_grads in (("fwd", grads_f), ("bwd", grads_b)):
        for li, g in enumerate(layer_grads):
            for name in PARAM_NAMES:
                grads[f"{prefix}.{li}.{name}"] = g[name]
    grads["readout.W"] = g_w_out
    grads["readout.b"] = g_b_out
    return d_window, grads


def loss_and_grads(model: RecurrentModel, inputs, targets, dropout_keep: float = 1.0,
                   rng: np.random.Generator = None):
    """Mean squared error over a batch and its exact parameter gradients.

    inputs: (B, n, T) windows (or a list of WindowSample), targets: (B, n).
    Gradients are exact for the realized dropout masks.
    """
    if isinstance(inputs, (list, tuple)):
        from .dataset import stack_samples

        inputs, targets = stack_samples(inputs)
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[0] == 0:
        raise ShapeError("loss_and_grads requires a nonempty (B, n, T) batch")
    if targets.shape != inputs.shape[:1] + (model.n_joints,):
        raise ShapeError(f"targets shape {targets.shape} mismatches batch")
    windows, _ = _check_windows(model, inputs)

    y, readout_in, ctx = _forward_core(model, windows, dropout_keep, rng, collect_cache=True)
    err = y - targets
    mse = float(np.mean(err * err))
    dy = 2.0 * err / err.size
    _, grads = _backward_core(model, ctx, readout_in, dy)
    return mse, grads


def input_vjp(model: RecurrentModel, window, cotangent) -> np.ndarray:
    """Gradient of <cotangent, model_forward(window)> w.r.t. the window.

    Realizes the adjoint of the learned dynamics at the current input; dropout
    is disabled. window: (n, T) or (B, n, T); cotangent matches (n,)/(B, n).
    """
    windows, single = _check_windows(model, window)
    cot = np.asarray(cotangent, dtype=np.float64)
    if single:
        cot = cot.reshape(1, model.n_joints)
    if cot.shape != (windows.shape[0], model.n_joints):
        raise ShapeError(f"cotangent shape {cot.shape} mismatches windows")
    y, readout_in, ctx = _forward_core(model, windows, collect_cache=True)
    d_window, _ = _backward_core(model, ctx, readout_in, cot)
    return d_window[0] if single else d_window


# -- parameter access --------------------------------------------------------


def parameters(model: RecurrentModel) -> OrderedDict:
    """Live parameter arrays keyed by stable names (matches gradient keys)."""
    out = OrderedDict()
    for prefix, layers in (("fwd", model.layers), ("bwd", model.layers_back)):
        for li, p in enumerate(layers):
            for name in PARAM_NAMES:
                out[f"{prefix}.{li}.{name}"] = getattr(p, name)
    out["readout.W"] = model.w_out
    out["readout.b"] = model.b_out
    return out


def set_parameters(model: RecurrentModel, values: dict):
    """Install new parameter arrays (shapes must match)."""
    for prefix, layers in (("fwd", model.layers), ("bwd", model.layers_back)):
        for li, p in enumerate(layers):
            for name in PARAM_NAMES:
                key = f"{prefix}.{li}.{name}"
                arr = np.asarray(values[key], dtype=np.float64)
                if arr.shape != getattr(p, name).shape:
                    raise ShapeError(f"parameter {key} shape mismatch")
                setattr(p, name, arr)
    model.w_out = np.asarray(values["readout.W"], dtype=np.float64)
    model.b_out = np.asarray(values["readout.b"], dtype=np.float64)


# -- checkpointing -----------------------------------------------------------

_NORM_NAMES = ("norm.in_shift", "norm.in_scale", "norm.out_shift", "norm.out_scale")


def save_checkpoint(model: RecurrentModel) -> bytes:
    """Self-describing checkpoint: topology header + named float64 arrays."""
    arrays = OrderedDict(parameters(model))
    arrays["norm.in_shift"] = model.in_shift
    arrays["norm.in_scale"] = model.in_scale
    arrays["norm.out_shift"] = model.out_shift
    arrays["norm.out_scale"] = model.out_scale
    header = {
        "version": CHECKPOINT_VERSION,
        "direction": model.direction,
        "depth": model.depth,
        "hidden_size": model.hidden_size,
        "window_len": model.window_len,
        "n_joints": model.n_joints,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(np.uint32(CHECKPOINT_VERSION).tobytes())
    buf.write(np.uint32(len(header_bytes)).tobytes())
    buf.write(header_bytes)
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return buf.getvalue()


def load_checkpoint(data: bytes, expect_direction: str = None,
                    expect_depth: int = None) -> RecurrentModel:
    """Rebuild a model from checkpoint bytes; validates magic, version,
    completeness, and (optionally) the expected topology."""
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    version = int(np.frombuffer(data[4:8], dtype=np.uint32)[0])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(data[8:12], dtype=np.uint32)[0])
    if len(data) < 12 + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc

    direction = header["direction"]
    depth = int(header["depth"])
    if expect_direction is not None and direction != expect_direction:
        raise CheckpointError(
            f"topology mismatch: checkpoint is {direction}, expected {expect_direction}"
        )
    if expect_depth is not None and depth != expect_depth:
        raise CheckpointError(
            f"topology mismatch: checkpoint has {depth} layers, expected {expect_depth}"
        )

    offset = 12 + header_len
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"truncated checkpoint: array {spec['name']} incomplete")
        arrays[spec["name"]] = np.frombuffer(
            data[offset:offset + nbytes], dtype=np.float64
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")

    hidden = int(header["hidden_size"])
    n = int(header["n_joints"])

    def stack(prefix):
        layers = []
        for li in range(depth):
            try:
                fields = [arrays[f"{prefix}.{li}.{name}"] for name in PARAM_NAMES]
            except KeyError as exc:
                raise CheckpointError(f"missing array {exc} in checkpoint") from exc
            layers.append(GruLayerParams(*fields))
        return layers

    layers = stack("fwd")
    layers_back = stack("bwd") if direction == BIDIRECTIONAL else []
    model = RecurrentModel(
        direction=direction,
        layers=layers,
        layers_back=layers_back,
        w_out=arrays["readout.W"],
        b_out=arrays["readout.b"],
        window_len=int(header["window_len"]),
        n_joints=n,
        hidden_size=hidden,
        in_shift=arrays["norm.in_shift"],
        in_scale=arrays["norm.in_scale"],
        out_shift=arrays["norm.out_shift"],
        out_scale=arrays["norm.out_scale"],
    )
    return model
