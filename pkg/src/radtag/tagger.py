"""Joint entity + negation tagger: embedding -> forward/backward LSTM ->
linear projection -> per-channel softmax over IOBES tags."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nnkernel as nk
from .corpus import CHANNELS, TAGS, O, TagGrid, Vocabulary

log = logging.getLogger(__name__)

Params = dict[str, np.ndarray]
Example = tuple[np.ndarray, np.ndarray]  # word ids (n,), targets (n, C)

# Decode preference when probabilities tie: O, S, B, I, E.
TIE_ORDER = np.array([TAGS.index(t) for t in "OSBIE"])


@dataclass
class TaggerConfig:
    d: int = 50
    k: int = 100
    max_len: int = 40
    C: int = 5
    T: int = 5
    epochs: int = 20
    batch_size: int = 10
    learning_rate: float = 0.5
    momentum: float = 0.9
    clip_norm: float = 5.0
    fine_tune_embeddings: bool = True
    peephole: bool = True
    projection: str = "flat"  # or "per_position"
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "k", "max_len", "epochs", "batch_size", "C", "T"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.projection not in ("flat", "per_position"):
            raise ValueError(f"unknown projection {self.projection!r}")

    def check_schema(self) -> None:
        if (self.C, self.T) != (len(CHANNELS), len(TAGS)):
            raise ValueError(f"tagger needs C={len(CHANNELS)} and T={len(TAGS)}")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TaggerConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TaggerConfig":
        """Parse flat ``key = value`` lines; unknown keys are ignored with a warning."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in types:
                log.warning("ignoring unknown config key %r", key)
                continue
            values[key] = _coerce(raw, types[key])
        values.update(overrides)
        return cls(**values)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(raw: str, typ):
    typ = str(typ)
    if "bool" in typ:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "int" in typ:
        return int(raw)
    if "float" in typ:
        return float(raw)
    return raw


def init_params(config: TaggerConfig, vocab_size: int, W: np.ndarray | None = None) -> Params:
    rng = np.random.default_rng(config.seed)
    dt = np.dtype(config.dtype)
    d, k, L, C, T = config.d, config.k, config.max_len, config.C, config.T
    if W is None:
        W = rng.uniform(-0.01, 0.01, size=(vocab_size, d))
    W = np.array(W, dtype=dt)
    if W.shape != (vocab_size, d):
        raise ValueError(f"embedding matrix shape {W.shape} != ({vocab_size}, {d})")
    params = {"W": W}
    for prefix in ("fwd", "bwd"):
        for name, arr in nk.init_lstm(rng, d, k, config.peephole, dt).items():
            params[f"{prefix}.{name}"] = arr
    if config.projection == "flat":
        fan_in, fan_out = 2 * k * L, L * C * T
    else:
        fan_in, fan_out = 2 * k, C * T
    params["P"] = nk.glorot(rng, fan_in, fan_out, (fan_in, fan_out), dt)
    params["Pb"] = np.zeros(fan_out, dtype=dt)
    return params


def _layer(params: Params, prefix: str) -> Params:
    n = len(prefix) + 1
    return {key[n:]: v for key, v in params.items() if key.startswith(prefix + ".")}


# --------------------------------------------------------------------------
# batched forward / backward on padded (B, max_len) inputs


def _pad(batch: Sequence[np.ndarray], L: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.zeros((len(batch), L), dtype=np.int64)
    mask = np.zeros((len(batch), L), dtype=bool)
    for b, ids in enumerate(batch):
        n = len(ids)
        if n > L:
            raise ValueError(f"sequence of {n} exceeds max_len {L}")
        X[b, :n] = ids
        mask[b, :n] = True
    return X, mask


def _forward_batch(params: Params, config: TaggerConfig, X: np.ndarray, mask: np.ndarray):
    L, k, C, T = config.max_len, config.k, config.C, config.T
    bsz = X.shape[0]
    emb = params["W"][X]
    Hf, cf = nk.lstm_layer_forward(_layer(params, "fwd"), emb, mask, reverse=False)
    Hb, cb = nk.lstm_layer_forward(_layer(params, "bwd"), emb, mask, reverse=True)
    if config.projection == "flat":
        p = np.concatenate([Hf.reshape(bsz, L * k), Hb.reshape(bsz, L * k)], axis=1)
    else:
        p = np.concatenate([Hf, Hb], axis=2)
    logits = (p @ params["P"] + params["Pb"]).reshape(bsz, L, C, T)
    probs = nk.softmax(logits.astype(np.float64), axis=-1)
    return probs, (X, mask, cf, cb, p)


def _batch_loss_grad(params: Params, config: TaggerConfig, batch: Sequence[Example], want_grad: bool = True,
                     fine_tune: bool = True):
    """Mean over sentences of the per-sentence mean cross-entropy over n*C cells."""
    L, k, C = config.max_len, config.k, config.C
    X, mask = _pad([ids for ids, _ in batch], L)
    Y = np.zeros((len(batch), L, C), dtype=np.int64)
    for b, (_, tgt) in enumerate(batch):
        Y[b, : len(tgt)] = tgt
    probs, (X, mask, cf, cb, p) = _forward_batch(params, config, X, mask)
    bsz = len(batch)
    lengths = mask.sum(axis=1)
    picked = np.take_along_axis(probs, Y[..., None], axis=-1)[..., 0]
    cell_w = (mask / (lengths[:, None] * C * bsz))[..., None]  # (B, L, 1)
    loss = float(-np.sum(np.log(np.maximum(picked, 1e-300)) * cell_w))
    if not want_grad:
        return loss, None
    dlogits = probs.copy()
    np.put_along_axis(dlogits, Y[..., None], np.take_along_axis(dlogits, Y[..., None], -1) - 1.0, axis=-1)
    dlogits *= cell_w[..., None]
    dt = params["P"].dtype
    grads = {}
    if config.projection == "flat":
        dflat = dlogits.reshape(bsz, -1).astype(dt)
        grads["P"] = p.T @ dflat
        grads["Pb"] = dflat.sum(axis=0)
        dp = dflat @ params["P"].T
        dHf = dp[:, : L * k].reshape(bsz, L, k)
        dHb = dp[:, L * k:].reshape(bsz, L, k)
    else:
        dflat = dlogits.reshape(bsz, L, -1).astype(dt)
        grads["P"] = np.einsum("blh,blo->ho", p, dflat)
        grads["Pb"] = dflat.sum(axis=(0, 1))
        dp = dflat @ params["P"].T
        dHf, dHb = dp[..., :k], dp[..., k:]
    # Masked H rows are zero in the forward pass, so their gradient is dropped.
    dHf = dHf * mask[..., None]
    dHb = dHb * mask[..., None]
    dEf, gf = nk.lstm_layer_backward(cf, dHf)
    dEb, gb = nk.lstm_layer_backward(cb, dHb)
    for name, g in gf.items():
        grads[f"fwd.{name}"] = g
    for name, g in gb.items():
        grads[f"bwd.{name}"] = g
    if fine_tune:
        dW = np.zeros_like(params["W"])
        np.add.at(dW, X[mask], (dEf + dEb)[mask])
        grads["W"] = dW
    return loss, grads


def _chunks(ids: Sequence[int], L: int) -> list[tuple[int, int]]:
    return [(s, min(s + L, len(ids))) for s in range(0, len(ids), L)]


# --------------------------------------------------------------------------
# public operations


def forward(params: Params, config: TaggerConfig, x: Sequence[int]) -> np.ndarray:
    """Tag probabilities, shape (n, C, T).

    Inputs longer than ``max_len`` are cut into consecutive chunks that are
    tagged independently.
    """
    x = np.asarray(x, dtype=np.int64)
    if x.size == 0:
        raise ValueError("empty input")
    V = params["W"].shape[0]
    if x.min() < 0 or x.max() >= V:
        raise IndexError("word index outside the vocabulary")
    spans = _chunks(x, config.max_len)
    X, mask = _pad([x[s:e] for s, e in spans], config.max_len)
    probs, _ = _forward_batch(params, config, X, mask)
    return np.concatenate([probs[b, : e - s] for b, (s, e) in enumerate(spans)], axis=0)


def loss(params: Params, config: TaggerConfig, x: Sequence[int], grid: TagGrid | np.ndarray) -> float:
    """Mean of -log p(true tag) over the n*C token/channel cells."""
    tags = grid.tags if isinstance(grid, TagGrid) else np.asarray(grid)
    if tags.shape != (len(x), config.C):
        raise ValueError(f"grid shape {tags.shape} != ({len(x)}, {config.C})")
    probs = forward(params, config, x)
    picked = np.take_along_axis(probs, tags[..., None].astype(np.int64), axis=-1)
    return float(-np.mean(np.log(picked)))


def loss_and_grad(params: Params, config: TaggerConfig, x: Sequence[int], grid, fine_tune: bool = True):
    """Single-sentence loss and gradient (n <= max_len)."""
    tags = grid.tags if isinstance(grid, TagGrid) else np.asarray(grid)
    return _batch_loss_grad(params, config, [(np.asarray(x), tags)], fine_tune=fine_tune)


def decode(probs: np.ndarray) -> np.ndarray:
    """Per-cell argmax with ties resolved in the order O, S, B, I, E."""
    reordered = probs[..., TIE_ORDER]
    return TIE_ORDER[np.argmax(reordered, axis=-1)]


def predict_tags(params: Params, config: TaggerConfig, x: Sequence[int]) -> TagGrid:
    return TagGrid(decode(forward(params, config, x)))


def split_examples(examples: Sequence[Example], L: int) -> list[Example]:
    out = []
    for ids, tgt in examples:
        ids, tgt = np.asarray(ids), np.asarray(tgt)
        out.extend((ids[s:e], tgt[s:e]) for s, e in _chunks(ids, L))
    return out


def dataset_loss(params: Params, config: TaggerConfig, examples: Sequence[Example], batch_size: int = 64) -> float:
    """Mean per-sentence loss over a dataset."""
    examples = split_examples(examples, config.max_len)
    total = 0.0
    for s in range(0, len(examples), batch_size):
        batch = examples[s:s + batch_size]
        bl, _ = _batch_loss_grad(params, config, batch, want_grad=False)
        total += bl * len(batch)
    return total / len(examples)


def train_loop(params: Params, config: TaggerConfig, make_epoch: Callable[[int, np.random.Generator], list[Example]],
               fine_tune: bool, epochs: int | None = None, on_epoch: Callable[[int, float], None] | None = None):
    """Mini-batch Nesterov SGD. ``make_epoch`` supplies the examples for each epoch."""
    rng = np.random.default_rng(config.seed + 1)
    opt = nk.NesterovSGD(config.learning_rate, config.momentum, config.clip_norm)
    history = []
    for epoch in range(epochs if epochs is not None else config.epochs):
        examples = split_examples(make_epoch(epoch, rng), config.max_len)
        order = rng.permutation(len(examples))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            batch = [examples[j] for j in order[s:s + config.batch_size]]
            bl, grads = _batch_loss_grad(params, config, batch, fine_tune=fine_tune)
            if not np.isfinite(bl):
                raise FloatingPointError(f"non-finite loss in epoch {epoch}")
            opt.step(params, grads)
            total += bl * len(batch)
        history.append(total / len(examples))
        log.info("epoch %d loss %.5f", epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return params, history


def train(params: Params, config: TaggerConfig, examples: Sequence[Example], W: np.ndarray | None = None,
          fine_tune: bool | None = None, epochs: int | None = None, on_epoch=None):
    """Train on ``(word ids, n x C tag matrix)`` pairs.

    ``W`` replaces the embedding matrix before training. With fine-tuning off the
    embedding matrix receives no update at all. Returns ``(params, per-epoch loss)``.
    """
    if not examples:
        raise ValueError("empty training set")
    if fine_tune is None:
        fine_tune = config.fine_tune_embeddings
    if W is not None:
        if W.shape != params["W"].shape:
            raise ValueError(f"embedding matrix shape {W.shape} != {params['W'].shape}")
        params["W"] = np.array(W, dtype=params["W"].dtype)
    data = [(np.asarray(ids, dtype=np.int64), np.asarray(t.tags if isinstance(t, TagGrid) else t, dtype=np.int64))
            for ids, t in examples]
    return train_loop(params, config, lambda epoch, rng: data, fine_tune, epochs, on_epoch)


# --------------------------------------------------------------------------
# checkpoints


def save_tagger(path: str | Path, params: Params, config: TaggerConfig, vocab: Vocabulary) -> None:
    meta = {"config": asdict(config), "vocab": vocab.words, "min_count": vocab.min_count}
    nk.save_checkpoint(path, params, meta)


def load_tagger(path: str | Path) -> tuple[Params, TaggerConfig, Vocabulary]:
    tensors, meta = nk.load_checkpoint(path)
    config = TaggerConfig(**meta["config"])
    dt = np.dtype(config.dtype)
    params = {k: v.astype(dt) for k, v in tensors.items()}
    return params, config, Vocabulary(meta["vocab"], meta.get("min_count", 1))


def all_o(n: int, C: int = 5) -> np.ndarray:
    return np.full((n, C), O, dtype=np.int64)
