"""Residual policy-value network with exact numpy backpropagation.

The architecture follows the familiar two-headed residual design: a 3x3
convolution stem over the four binary input planes, `blocks` residual
blocks of two 3x3 convolutions each, a 2-filter 1x1 policy head feeding
a linear layer to one logit per board point (NoGo has no pass move), and
a 1-filter 1x1 value head feeding a small MLP with a tanh output.
Batch normalization is replaced by plain per-channel biases so that
gradients stay exact and cheap at desk scale.

Policy logits are masked to the legal moves (taken from input plane 2)
and renormalized; illegal moves get exactly zero probability.  The
training loss is squared value error plus policy cross-entropy plus an
L2 penalty.  `loss_and_grads` returns analytic gradients for every
parameter; they are verified against central finite differences in the
test suite.

Parameters live in an ordered dict of numpy arrays (float32 by default;
float64 mode for gradient checks).  The model file format is:
magic ``MPVN``, u32 version, u32 board_size/filters/blocks/value_hidden,
then each tensor as little-endian float32 in architecture order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .evaluators import Evaluator, NetShape, PVOutput, cost_of, DEFAULT_REFERENCE
from .game import Position

MODEL_MAGIC = b"MPVN"
MODEL_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    board_size: int
    filters: int
    blocks: int
    l2: float = 1e-4
    value_hidden: int = 32

    def __post_init__(self):
        if self.board_size < 3:
            raise ValueError("board_size must be >= 3")
        if self.filters < 4:
            raise ValueError("filters must be >= 4")
        if self.blocks < 1 or self.value_hidden < 1:
            raise ValueError("blocks and value_hidden must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")

    @property
    def shape(self) -> NetShape:
        return NetShape(self.filters, self.blocks)

    @property
    def points(self) -> int:
        return self.board_size * self.board_size


def param_order(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Fixed (name, shape) order used everywhere, including on disk."""
    x, n = cfg.filters, cfg.points
    order = [("stem.w", (x, 4, 3, 3)), ("stem.b", (x,))]
    for i in range(cfg.blocks):
        order += [
            (f"block{i}.c1.w", (x, x, 3, 3)), (f"block{i}.c1.b", (x,)),
            (f"block{i}.c2.w", (x, x, 3, 3)), (f"block{i}.c2.b", (x,)),
        ]
    order += [
        ("policy.conv.w", (2, x)), ("policy.conv.b", (2,)),
        ("policy.fc.w", (n, 2 * n)), ("policy.fc.b", (n,)),
        ("value.conv.w", (1, x)), ("value.conv.b", (1,)),
        ("value.fc1.w", (cfg.value_hidden, n)), ("value.fc1.b", (cfg.value_hidden,)),
        ("value.fc2.w", (1, cfg.value_hidden)), ("value.fc2.b", (1,)),
    ]
    return order


def init_params(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-scaled Gaussian weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_order(cfg):
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return params


def zero_params(cfg: NetworkConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=dtype) for name, shape in param_order(cfg)}


def params_checksum(params: dict[str, np.ndarray]) -> float:
    return float(sum(np.abs(v).sum() for v in params.values()))


# ----------------------------------------------------------------------
# Layers
# ----------------------------------------------------------------------

@lru_cache(maxsize=None)
def _im2col_index(c: int, h: int, w: int) -> np.ndarray:
    """Gather index into the zero-padded flat input, shape (C*9, H*W),
    row order (channel, kernel offset) to match w.reshape(F, C*9)."""
    hp, wp = h + 2, w + 2
    idx = np.empty((c, 9, h * w), dtype=np.intp)
    for ci in range(c):
        for k in range(9):
            di, dj = divmod(k, 3)
            rows = (np.arange(h)[:, None] + di) * wp + (np.arange(w)[None, :] + dj)
            idx[ci, k] = ci * hp * wp + rows.reshape(-1)
    return idx.reshape(c * 9, h * w)


def _im2col3(x: np.ndarray) -> np.ndarray:
    # x: (N, C, H, W) -> (N, C*9, H*W), channel-major to match w.reshape(F, C*9)
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    return xp.reshape(n, -1)[:, _im2col_index(c, h, w)]


def _col2im3(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, 9, h * w)
    k = 0
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di:di + h, dj:dj + w] += dcols[:, :, k, :].reshape(n, c, h, w)
            k += 1
    return dxp[:, :, 1:-1, 1:-1]


def _conv3(x, w, b):
    n, c, h, ww = x.shape
    f = w.shape[0]
    cols = _im2col3(x)
    out = np.matmul(w.reshape(f, c * 9), cols) + b[:, None]
    return out.reshape(n, f, h, ww), cols


def _conv3_backward(dout, cols, w, x_shape):
    n, c, h, ww = x_shape
    f = w.shape[0]
    dflat = dout.reshape(n, f, h * ww)
    dw = np.tensordot(dflat, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = dflat.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, c * 9).T, dflat)
    return _col2im3(dcols, x_shape), dw, db


def _conv1(x, w, b):
    # 1x1 convolution: plain channel mixing.  x: (N, C, HW) -> (N, F, HW)
    return np.matmul(w, x) + b[:, None]


def _conv1_backward(dout, x, w):
    dw = np.tensordot(dout, x, axes=([0, 2], [0, 2]))
    db = dout.sum(axis=(0, 2))
    dx = np.matmul(w.T, dout)
    return dx, dw, db


def _fc(x, w, b):
    return x @ w.T + b


def _fc_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


# ----------------------------------------------------------------------
# Forward / loss / backward
# ----------------------------------------------------------------------

def _trunk_forward(cfg, params, planes, cache=None):
    out, cols = _conv3(planes, params["stem.w"], params["stem.b"])
    act = np.maximum(out, 0)
    if cache is not None:
        cache["stem"] = (planes.shape, cols, out, act)
    x = act
    for i in range(cfg.blocks):
        o1, c1 = _conv3(x, params[f"block{i}.c1.w"], params[f"block{i}.c1.b"])
        a1 = np.maximum(o1, 0)
        o2, c2 = _conv3(a1, params[f"block{i}.c2.w"], params[f"block{i}.c2.b"])
        pre = o2 + x
        act2 = np.maximum(pre, 0)
        if cache is not None:
            cache[f"block{i}"] = (x, c1, o1, a1, c2, pre)
        x = act2
    return x


def forward_batch(cfg: NetworkConfig, params: dict, planes: np.ndarray,
                  cache: dict | None = None):
    """Batched forward pass.

    planes: (N, 4, size, size); legality is read from plane 2.
    Returns (policies (N, points) with exact zeros on illegal moves,
    values (N,)).  Pass `cache` to keep intermediates for backward.
    """
    n = planes.shape[0]
    hw = cfg.points
    trunk = _trunk_forward(cfg, params, planes, cache)
    tflat = trunk.reshape(n, cfg.filters, hw)

    p_pre = _conv1(tflat, params["policy.conv.w"], params["policy.conv.b"])
    p_act = np.maximum(p_pre, 0)
    logits = _fc(p_act.reshape(n, 2 * hw), params["policy.fc.w"], params["policy.fc.b"])

    v_pre = _conv1(tflat, params["value.conv.w"], params["value.conv.b"])
    v_act = np.maximum(v_pre, 0)
    h1_pre = _fc(v_act.reshape(n, hw), params["value.fc1.w"], params["value.fc1.b"])
    h1 = np.maximum(h1_pre, 0)
    u = _fc(h1, params["value.fc2.w"], params["value.fc2.b"])[:, 0]
    values = np.tanh(u)

    legal = planes[:, 2, :, :].reshape(n, hw) > 0
    masked = np.where(legal, logits, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    policies = exp / denom

    if cache is not None:
        cache.update(tflat=tflat, p_pre=p_pre, p_act=p_act, logits=logits,
                     v_pre=v_pre, v_act=v_act, h1_pre=h1_pre, h1=h1,
                     values=values, legal=legal, shifted=shifted,
                     denom=denom, policies=policies)
    return policies, values


def forward(cfg: NetworkConfig, params: dict, planes: np.ndarray):
    """Single-position forward: returns (policy (points,), value float)."""
    policies, values = forward_batch(cfg, params, planes[None])
    return policies[0], float(values[0])


@dataclass
class TrainingBatch:
    """states as feature planes, visit-count target policies (dense over
    board points), and game outcomes z in {-1, +1}."""

    planes: np.ndarray      # (N, 4, size, size)
    target_pi: np.ndarray   # (N, points)
    target_z: np.ndarray    # (N,)

    def __post_init__(self):
        assert self.planes.ndim == 4 and self.planes.shape[1] == 4
        assert len(self.target_pi) == len(self.planes) == len(self.target_z)
        assert np.allclose(self.target_pi.sum(axis=1), 1.0, atol=1e-5)
        assert np.all(np.abs(self.target_z) == 1)

    def __len__(self) -> int:
        return len(self.planes)


def _l2_term(cfg: NetworkConfig, params: dict) -> float:
    if cfg.l2 == 0:
        return 0.0
    return cfg.l2 * float(sum((v.astype(np.float64) ** 2).sum() for v in params.values()))


def _loss_terms(cache, batch):
    n = len(batch)
    value_err = float(np.mean((batch.target_z - cache["values"]) ** 2))
    logp = cache["shifted"] - np.log(cache["denom"])
    pi = batch.target_pi
    # logp is -inf exactly where pi is 0 (illegal moves); mask before the
    # product to keep 0 * -inf out of the arithmetic.
    safe_logp = np.where(pi > 0, logp, 0.0)
    ce = -float((pi * safe_logp).sum() / n)
    return value_err, ce


def loss(cfg: NetworkConfig, params: dict, batch: TrainingBatch) -> float:
    cache = {}
    forward_batch(cfg, params, batch.planes.astype(params["stem.w"].dtype), cache)
    value_err, ce = _loss_terms(cache, batch)
    return value_err + ce + _l2_term(cfg, params)


def loss_and_grads(cfg: NetworkConfig, params: dict, batch: TrainingBatch):
    """Exact gradient of the loss for every parameter tensor."""
    dtype = params["stem.w"].dtype
    cache = {}
    forward_batch(cfg, params, batch.planes.astype(dtype), cache)
    value_err, ce = _loss_terms(cache, batch)
    total = value_err + ce + _l2_term(cfg, params)

    n = len(batch)
    hw = cfg.points
    grads = {}

    # Policy head.  p - pi is already zero on illegal moves.
    dlogits = ((cache["policies"] - batch.target_pi) / n).astype(dtype)
    dp_act, grads["policy.fc.w"], grads["policy.fc.b"] = _fc_backward(
        dlogits, cache["p_act"].reshape(n, 2 * hw), params["policy.fc.w"])
    dp_pre = dp_act.reshape(n, 2, hw) * (cache["p_pre"] > 0)
    dtf_p, grads["policy.conv.w"], grads["policy.conv.b"] = _conv1_backward(
        dp_pre, cache["tflat"], params["policy.conv.w"])

    # Value head.
    values = cache["values"]
    du = (2.0 * (values - batch.target_z) / n) * (1.0 - values ** 2)
    dh1, grads["value.fc2.w"], grads["value.fc2.b"] = _fc_backward(
        du[:, None].astype(dtype), cache["h1"], params["value.fc2.w"])
    dh1_pre = dh1 * (cache["h1_pre"] > 0)
    dv_act, grads["value.fc1.w"], grads["value.fc1.b"] = _fc_backward(
        dh1_pre, cache["v_act"].reshape(n, hw), params["value.fc1.w"])
    dv_pre = dv_act.reshape(n, 1, hw) * (cache["v_pre"] > 0)
    dtf_v, grads["value.conv.w"], grads["value.conv.b"] = _conv1_backward(
        dv_pre, cache["tflat"], params["value.conv.w"])

    dtrunk = (dtf_p + dtf_v).reshape(n, cfg.filters, cfg.board_size, cfg.board_size)

    for i in range(cfg.blocks - 1, -1, -1):
        x_in, c1, o1, a1, c2, pre = cache[f"block{i}"]
        dpre = dtrunk * (pre > 0)
        da1, grads[f"block{i}.c2.w"], grads[f"block{i}.c2.b"] = _conv3_backward(
            dpre, c2, params[f"block{i}.c2.w"], a1.shape)
        do1 = da1 * (o1 > 0)
        dx, grads[f"block{i}.c1.w"], grads[f"block{i}.c1.b"] = _conv3_backward(
            do1, c1, params[f"block{i}.c1.w"], x_in.shape)
        dtrunk = dx + dpre  # skip connection

    in_shape, cols, out, act = cache["stem"]
    dout = dtrunk * (out > 0)
    _, grads["stem.w"], grads["stem.b"] = _conv3_backward(
        dout, cols, params["stem.w"], in_shape)

    if cfg.l2 > 0:
        for name, v in params.items():
            grads[name] = grads[name] + 2.0 * cfg.l2 * v
    return total, grads


# ----------------------------------------------------------------------
# Optimization
# ----------------------------------------------------------------------

def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """theta <- theta - lr * grad.  Raises on non-finite gradients."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    new = {}
    for name, v in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        new[name] = v - lr * g.astype(v.dtype)
    return new


class MomentumSGD:
    """Plain SGD with momentum and step-count lr milestones (x decay each)."""

    def __init__(self, lr: float = 0.02, momentum: float = 0.9,
                 milestones: tuple[int, ...] = (), decay: float = 0.1):
        self.base_lr = lr
        self.momentum = momentum
        self.milestones = tuple(sorted(milestones))
        self.decay = decay
        self.steps = 0
        self._velocity: dict[str, np.ndarray] = {}

    @property
    def lr(self) -> float:
        passed = sum(1 for m in self.milestones if self.steps >= m)
        return self.base_lr * self.decay ** passed

    def step(self, params: dict, grads: dict) -> dict:
        lr = self.lr
        new = {}
        for name, v in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            vel = self._velocity.get(name)
            vel = g if vel is None else self.momentum * vel + g
            self._velocity[name] = vel
            new[name] = v - (lr * vel).astype(v.dtype)
        self.steps += 1
        return new


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

def save_params(path, cfg: NetworkConfig, params: dict) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<5I", MODEL_VERSION, cfg.board_size, cfg.filters,
                            cfg.blocks, cfg.value_hidden))
        for name, shape in param_order(cfg):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            if arr.shape != shape:
                raise ModelFileError(f"{name} has shape {arr.shape}, expected {shape}")
            f.write(arr.tobytes())


def load_params(path) -> tuple[NetworkConfig, dict]:
    """Returns (config, params).  The regularization coefficient is a
    training hyperparameter and is not stored; the loaded config has l2=0."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MODEL_MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    if len(blob) < 24:
        raise ModelFileError(f"{path}: truncated header")
    version, board_size, filters, blocks, value_hidden = struct.unpack("<5I", blob[4:24])
    if version != MODEL_VERSION:
        raise ModelFileError(f"{path}: unsupported version {version}")
    try:
        cfg = NetworkConfig(board_size, filters, blocks, l2=0.0, value_hidden=value_hidden)
    except ValueError as e:
        raise ModelFileError(f"{path}: bad header: {e}") from None
    params = {}
    offset = 24
    for name, shape in param_order(cfg):
        nbytes = int(np.prod(shape)) * 4
        chunk = blob[offset:offset + nbytes]
        if len(chunk) < nbytes:
            raise ModelFileError(f"{path}: truncated at tensor {name}")
        params[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise ModelFileError(f"{path}: {len(blob) - offset} trailing bytes")
    return cfg, params


# ----------------------------------------------------------------------
# Evaluator adapter
# ----------------------------------------------------------------------

class NetEvaluator(Evaluator):
    """Search-facing adapter around a parameter snapshot."""

    def __init__(self, cfg: NetworkConfig, params: dict,
                 reference: NetShape = DEFAULT_REFERENCE):
        super().__init__()
        self.cfg = cfg
        self.params = params
        self.cost = cost_of(cfg.shape, reference)

    def _evaluate(self, position: Position) -> PVOutput:
        if position.size != self.cfg.board_size:
            raise ValueError(
                f"board size {position.size} != network size {self.cfg.board_size}")
        policy, value = forward(self.cfg, self.params, position.encode_features())
        moves = tuple(position.legal_moves())
        probs = policy[list(moves)]
        total = probs.sum()
        if total <= 0:  # defensive: cannot happen with masked softmax
            probs = np.full(len(moves), 1.0 / len(moves))
        else:
            probs = probs / total
        return PVOutput(moves, probs, value)
