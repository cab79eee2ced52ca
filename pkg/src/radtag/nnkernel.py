"""Small dense numeric kernel for the tagger: peephole LSTM with hand-written
backpropagation through time, softmax cross-entropy, Nesterov SGD, AdaGrad,
a finite-difference gradient checker and a checkpoint container.

Parameters are plain ``dict[str, np.ndarray]``; gradients use the same keys.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

Params = dict[str, np.ndarray]


def sigmoid(x):
    # Split by sign so neither branch overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# --------------------------------------------------------------------------
# LSTM

# Gate blocks inside the stacked 4k columns: input, forget, candidate, output.


def init_lstm(rng: np.random.Generator, d: int, k: int, peephole: bool = True, dtype=np.float64) -> Params:
    Wx = np.concatenate([glorot(rng, d, k, (d, k), dtype) for _ in range(4)], axis=1)
    Wh = np.concatenate([glorot(rng, k, k, (k, k), dtype) for _ in range(4)], axis=1)
    b = np.zeros(4 * k, dtype=dtype)
    b[k:2 * k] = 1.0
    p = {"Wx": Wx, "Wh": Wh, "b": b}
    if peephole:
        p["peep"] = glorot(rng, k, k, (3, k), dtype)
    return p


def _check_shapes(params: Params, d: int, k: int) -> None:
    if params["Wx"].shape != (d, 4 * k) or params["Wh"].shape != (k, 4 * k) or params["b"].shape != (4 * k,):
        raise ValueError(
            f"LSTM shape mismatch: Wx{params['Wx'].shape} Wh{params['Wh'].shape} "
            f"b{params['b'].shape} for input {d}, cells {k}"
        )
    if "peep" in params and params["peep"].shape != (3, k):
        raise ValueError(f"peephole shape {params['peep'].shape} != (3, {k})")


def _cell(params: Params, x, h_prev, c_prev):
    k = h_prev.shape[-1]
    a = x @ params["Wx"] + h_prev @ params["Wh"] + params["b"]
    peep = params.get("peep")
    zi, zf, zc, zo = a[..., :k], a[..., k:2 * k], a[..., 2 * k:3 * k], a[..., 3 * k:]
    if peep is not None:
        zi = zi + peep[0] * c_prev
        zf = zf + peep[1] * c_prev
    i = sigmoid(zi)
    f = sigmoid(zf)
    g = np.tanh(zc)
    c = f * c_prev + i * g
    if peep is not None:
        zo = zo + peep[2] * c
    o = sigmoid(zo)
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, tc)


def lstm_cell_step(params: Params, x_t, h_prev, c_prev):
    """One peephole LSTM step. Works on single vectors or on batches (leading axis)."""
    x_t, h_prev, c_prev = np.asarray(x_t), np.asarray(h_prev), np.asarray(c_prev)
    k = h_prev.shape[-1]
    _check_shapes(params, x_t.shape[-1], k)
    if c_prev.shape != h_prev.shape:
        raise ValueError("h_prev and c_prev shapes differ")
    h, c, _ = _cell(params, x_t, h_prev, c_prev)
    return h, c


@dataclass
class LayerCache:
    params: Params
    inputs: np.ndarray
    mask: np.ndarray
    order: list[int]
    h_prev: list
    c_prev: list
    c_new: list
    gates: list


def lstm_layer_forward(params: Params, inputs, mask=None, reverse: bool = False, h0=None, c0=None, return_state=False):
    """Run a layer over ``inputs`` shaped (n, d) or (batch, n, d).

    Masked-out steps carry the state through unchanged and emit zero rows. With
    ``reverse`` the sequence is read back to front; output rows stay aligned to
    the original positions. Returns ``(H, cache)`` or ``(H, cache, (h, c))``.
    """
    inputs = np.asarray(inputs)
    squeeze = inputs.ndim == 2
    if squeeze:
        inputs = inputs[None]
        mask = None if mask is None else np.asarray(mask)[None]
    bsz, n, d = inputs.shape
    k = params["Wh"].shape[0]
    _check_shapes(params, d, k)
    if mask is None:
        mask = np.ones((bsz, n), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    dtype = inputs.dtype if inputs.dtype.kind == "f" else params["Wx"].dtype
    h = np.zeros((bsz, k), dtype) if h0 is None else np.broadcast_to(h0, (bsz, k)).astype(dtype)
    c = np.zeros((bsz, k), dtype) if c0 is None else np.broadcast_to(c0, (bsz, k)).astype(dtype)
    H = np.zeros((bsz, n, k), dtype)
    order = list(range(n - 1, -1, -1)) if reverse else list(range(n))
    cache = LayerCache(params, inputs, mask, order, [], [], [], [])
    for t in order:
        m = mask[:, t][:, None]
        h_new, c_new, gates = _cell(params, inputs[:, t], h, c)
        cache.h_prev.append(h)
        cache.c_prev.append(c)
        cache.c_new.append(c_new)
        cache.gates.append(gates)
        if m.all():
            H[:, t] = h_new
            h, c = h_new, c_new
        else:
            H[:, t] = np.where(m, h_new, 0.0)
            h = np.where(m, h_new, h)
            c = np.where(m, c_new, c)
    out = H[0] if squeeze else H
    if return_state:
        return out, cache, ((h[0], c[0]) if squeeze else (h, c))
    return out, cache


def lstm_layer_backward(cache: LayerCache, dH):
    """Gradients of a layer given dL/dH. Returns ``(d_inputs, grads)``."""
    params = cache.params
    squeeze = np.ndim(dH) == 2
    dH = np.asarray(dH)[None] if squeeze else np.asarray(dH)
    bsz, n, k = dH.shape
    peep = params.get("peep")
    grads = {key: np.zeros_like(v) for key, v in params.items()}
    dX = np.zeros_like(cache.inputs, dtype=dH.dtype)
    dh_state = np.zeros((bsz, k), dH.dtype)
    dc_state = np.zeros((bsz, k), dH.dtype)
    WxT, WhT = params["Wx"].T, params["Wh"].T
    for step in range(len(cache.order) - 1, -1, -1):
        t = cache.order[step]
        m = cache.mask[:, t][:, None]
        h_prev, c_prev, c_new = cache.h_prev[step], cache.c_prev[step], cache.c_new[step]
        i, f, g, o, tc = cache.gates[step]
        full = m.all()
        if full:
            dh_new = dH[:, t] + dh_state
            dc_new = dc_state.copy()
            dh_prev = 0.0
            dc_prev = 0.0
        else:
            dh_new = np.where(m, dH[:, t] + dh_state, 0.0)
            dc_new = np.where(m, dc_state, 0.0)
            dh_prev = np.where(m, 0.0, dh_state)
            dc_prev = np.where(m, 0.0, dc_state)
        do = dh_new * tc
        dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
        dzo = do * o * (1.0 - o)
        if peep is not None:
            dc_new = dc_new + dzo * peep[2]
            grads["peep"][2] += np.sum(dzo * c_new, axis=0)
        dzi = dc_new * g * i * (1.0 - i)
        dzf = dc_new * c_prev * f * (1.0 - f)
        dzc = dc_new * i * (1.0 - g * g)
        dc_prev = dc_prev + dc_new * f
        if peep is not None:
            dc_prev = dc_prev + dzi * peep[0] + dzf * peep[1]
            grads["peep"][0] += np.sum(dzi * c_prev, axis=0)
            grads["peep"][1] += np.sum(dzf * c_prev, axis=0)
        da = np.concatenate([dzi, dzf, dzc, dzo], axis=1)
        grads["Wx"] += cache.inputs[:, t].T @ da
        grads["Wh"] += h_prev.T @ da
        grads["b"] += da.sum(axis=0)
        dX[:, t] = da @ WxT
        dh_state = dh_prev + da @ WhT
        dc_state = dc_prev
    return (dX[0] if squeeze else dX), grads


# --------------------------------------------------------------------------
# softmax / cross-entropy


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_xent(logits, target: int) -> tuple[float, np.ndarray]:
    """Loss and gradient of -log softmax(logits)[target]."""
    logits = np.asarray(logits, dtype=np.float64)
    T = logits.shape[-1]
    if T < 2:
        raise ValueError("need at least two classes")
    if not 0 <= target < T:
        raise IndexError(f"target {target} outside [0, {T})")
    z = logits - logits.max()
    logz = np.log(np.sum(np.exp(z)))
    loss = float(logz - z[target])
    grad = np.exp(z - logz)
    grad[target] -= 1.0
    return loss, grad


# --------------------------------------------------------------------------
# optimizers


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


def check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name!r}")


def clip_by_global_norm(grads: dict[str, np.ndarray], clip_norm: float | None) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients together so their joint norm is at most ``clip_norm``."""
    norm = global_norm(grads)
    if clip_norm is None or norm <= clip_norm or norm == 0.0:
        return grads, 1.0
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}, scale


@dataclass
class NesterovSGD:
    """SGD with Nesterov momentum and global-norm clipping.

    v <- mu*v - lr*g ; theta <- theta + mu*v - lr*g
    """

    learning_rate: float = 0.5
    momentum: float = 0.9
    clip_norm: float | None = 5.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def step(self, params: Params, grads: dict[str, np.ndarray]) -> Params:
        check_finite(grads)
        grads, _ = clip_by_global_norm(grads, self.clip_norm)
        lr, mu = self.learning_rate, self.momentum
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            step = lr * g
            v *= mu
            v -= step
            p += mu * v
            p -= step
        return params


def adagrad_update(param, acc, grad, learning_rate: float, eps: float = 1e-8) -> None:
    """In-place AdaGrad update on arrays or array views."""
    acc += grad * grad
    param -= learning_rate * grad / (np.sqrt(acc) + eps)


@dataclass
class AdaGrad:
    learning_rate: float = 0.05
    eps: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Params, grads: dict[str, np.ndarray]) -> Params:
        check_finite(grads)
        for name, g in grads.items():
            acc = self.accumulators.get(name)
            if acc is None:
                acc = self.accumulators[name] = np.zeros_like(params[name])
            adagrad_update(params[name], acc, g, self.learning_rate, self.eps)
        return params


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` with respect to the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        fp = f()
        flat[j] = orig - step
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(f: Callable[[Params], float], params: Params, analytic: dict[str, np.ndarray],
               tolerance: float = 1e-4, step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central differences of ``f(params)``.

    All tensors are promoted to float64. Element-wise relative error uses
    max(|a|, |n|, 1e-6) as the denominator so vanishing entries do not blow up.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    errors = {}
    for name, g in analytic.items():
        num = numeric_gradient(lambda: float(f(params)), params[name], step)
        errors[name] = relative_error(g, num)
    return GradCheckReport(errors, tolerance)


# --------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"RADTAG-CKPT"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write tensors as little-endian float64 with a JSON header.

    Layout: magic, u32 version, u64 header length, header JSON, raw data.
    Tensor order is sorted by name so identical inputs give identical bytes.
    """
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint")
    pos = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    base = pos + hlen
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=start).reshape(e["shape"]).copy()
    return tensors, header["meta"]
