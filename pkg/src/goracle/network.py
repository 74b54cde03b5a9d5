"""Transformer-encoder trace classifier with hand-written backpropagation.

Pipeline: token embedding + fixed sinusoidal positions, num_layers of
(masked multi-head self-attention, residual + layer norm, position-wise
feed-forward, residual + layer norm), masked mean-pool over non-PAD
positions, then a two-layer classification head producing pass/fail
logits.  Everything is plain numpy; gradients are derived by hand so
the whole graph stays inspectable and finite-difference checkable.

Determinism contract: a fixed (seed, config, data) triple produces a
bit-identical trained model when run single-threaded.  Dropout is
active only when an RNG is passed, so evaluation is a pure function of
(params, batch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .events import Verdict
from .tokenizer import TokenSequence

LN_EPS = 1e-5
# Additive attention bias for PAD key positions.  Large enough that
# exp(bias - max) underflows to exactly 0.0 in float32, so PAD columns
# contribute nothing to the softmax.
MASK_BIAS = -1e30


class DimensionMismatch(Exception):
    pass


class EmptyDataset(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    seq_len: int = 2048
    embed_dim: int = 128
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: int = 0  # 0 means the 4*embed_dim default
    mlp_hidden: int = 64
    dropout: float = 0.1
    num_classes: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.embed_dim)
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        for name in ("vocab_size", "seq_len", "embed_dim", "num_layers",
                     "num_heads", "ffn_dim", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.num_classes != 2:
            raise ValueError("num_classes is fixed at 2")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2500
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    class_weights: tuple[float, float] | None = None

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.class_weights is not None:
            if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
                raise ValueError("class_weights must be two positive reals")


@dataclass
class ModelParams:
    """Named parameter tensors in a fixed, checkpoint-stable order."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def equal(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def tensor_layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Name and shape of every parameter tensor, in canonical order."""
    d, f, m = cfg.embed_dim, cfg.ffn_dim, cfg.mlp_hidden
    layout: list[tuple[str, tuple[int, ...]]] = [("embed", (cfg.vocab_size, d))]
    for i in range(cfg.num_layers):
        pre = f"layers.{i}"
        layout += [
            # Q/K/V projections are bias-free: a key bias cancels in the
            # softmax and q/v biases are absorbed by wo/bo, so their
            # gradients would be degenerate.
            (f"{pre}.attn.wq", (d, d)),
            (f"{pre}.attn.wk", (d, d)),
            (f"{pre}.attn.wv", (d, d)),
            (f"{pre}.attn.wo", (d, d)), (f"{pre}.attn.bo", (d,)),
            (f"{pre}.ln1.g", (d,)), (f"{pre}.ln1.b", (d,)),
            (f"{pre}.ffn.w1", (d, f)), (f"{pre}.ffn.b1", (f,)),
            (f"{pre}.ffn.w2", (f, d)), (f"{pre}.ffn.b2", (d,)),
            (f"{pre}.ln2.g", (d,)), (f"{pre}.ln2.b", (d,)),
        ]
    layout += [
        ("head.w1", (d, m)), ("head.b1", (m,)),
        ("head.w2", (m, cfg.num_classes)), ("head.b2", (cfg.num_classes,)),
    ]
    return layout


def init_model(cfg: ModelConfig, seed: int) -> ModelParams:
    """Xavier-uniform matrices, normal(0, d^-1/2) embeddings, zero biases."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_layout(cfg):
        if name == "embed":
            t = rng.normal(0.0, cfg.embed_dim ** -0.5, shape)
        elif name.endswith((".g",)):
            t = np.ones(shape)
        elif len(shape) == 1:
            t = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            t = rng.uniform(-bound, bound, shape)
        tensors[name] = t.astype(dtype)
    return ModelParams(tensors)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """The fixed sin/cos positional table, float64, shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(idx / 2.0)) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def stack_batch(batch: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """TokenSequences -> (ids (B,L) int32, true lengths (B,) int32)."""
    if not batch:
        raise EmptyDataset("batch is empty")
    lengths = {len(s.ids) for s in batch}
    if len(lengths) != 1:
        raise DimensionMismatch(f"mixed sequence lengths in batch: {sorted(lengths)}")
    ids = np.array([s.ids for s in batch], dtype=np.int32)
    lens = np.array([s.true_len for s in batch], dtype=np.int32)
    return ids, lens


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv_std
    return g * xhat + b, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, g):
    dgamma = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dbeta = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _dropout_mask(rng, shape, p: float, dtype) -> np.ndarray:
    keep = (rng.random(shape) >= p).astype(dtype)
    return keep / dtype.type(1.0 - p)


def _forward_ids(params: ModelParams, cfg: ModelConfig, ids: np.ndarray,
                 lens: np.ndarray, rng=None, need_cache: bool = False):
    """Forward pass over already-stacked ids; trims to the batch's longest
    row (PAD beyond every true_len is masked out, so trimming is exact)."""
    dtype = np.dtype(cfg.dtype)
    t_max = max(int(lens.max()), 1)
    ids = ids[:, :t_max]
    b, t = ids.shape

    pe = sinusoidal_positions(t, cfg.embed_dim).astype(dtype)
    x = params["embed"][ids] + pe
    valid = np.arange(t)[None, :] < lens[:, None]            # (B,T) bool
    attn_bias = np.where(valid, 0.0, MASK_BIAS).astype(dtype)[:, None, None, :]
    vmask = valid.astype(dtype)[:, :, None]                  # (B,T,1)

    use_dropout = rng is not None and cfg.dropout > 0.0
    scale = dtype.type(1.0 / math.sqrt(cfg.head_dim))
    layer_caches = []
    for i in range(cfg.num_layers):
        pre = f"layers.{i}"
        x_in = x
        q = _split_heads(x_in @ params[f"{pre}.attn.wq"], cfg.num_heads)
        k = _split_heads(x_in @ params[f"{pre}.attn.wk"], cfg.num_heads)
        v = _split_heads(x_in @ params[f"{pre}.attn.wv"], cfg.num_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + attn_bias
        scores -= scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=-1, keepdims=True)
        concat = _merge_heads(probs @ v)
        attn = concat @ params[f"{pre}.attn.wo"] + params[f"{pre}.attn.bo"]
        mask1 = _dropout_mask(rng, attn.shape, cfg.dropout, dtype) if use_dropout else None
        if mask1 is not None:
            attn = attn * mask1
        x1, xhat1, inv1 = _layer_norm(x_in + attn, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])

        pre_act = x1 @ params[f"{pre}.ffn.w1"] + params[f"{pre}.ffn.b1"]
        hidden = np.maximum(pre_act, 0.0)
        ffn = hidden @ params[f"{pre}.ffn.w2"] + params[f"{pre}.ffn.b2"]
        mask2 = _dropout_mask(rng, ffn.shape, cfg.dropout, dtype) if use_dropout else None
        if mask2 is not None:
            ffn = ffn * mask2
        x2, xhat2, inv2 = _layer_norm(x1 + ffn, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])

        if need_cache:
            layer_caches.append({
                "x_in": x_in, "q": q, "k": k, "v": v, "probs": probs,
                "concat": concat, "mask1": mask1, "xhat1": xhat1, "inv1": inv1,
                "x1": x1, "hidden": hidden, "mask2": mask2,
                "xhat2": xhat2, "inv2": inv2,
            })
        x = x2

    lens_f = lens.astype(dtype)[:, None]
    pooled = (x * vmask).sum(axis=1) / lens_f
    h_pre = pooled @ params["head.w1"] + params["head.b1"]
    h = np.maximum(h_pre, 0.0)
    logits = h @ params["head.w2"] + params["head.b2"]

    cache = None
    if need_cache:
        cache = {
            "ids": ids, "lens": lens, "vmask": vmask, "x_final": x,
            "pooled": pooled, "h": h, "layers": layer_caches,
        }
    return logits, pooled, cache


def forward(params: ModelParams, cfg: ModelConfig,
            batch: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode forward: (logits (B,2), pooled (B,d)).

    Raises DimensionMismatch when the batch's sequence length is not the
    configured seq_len.
    """
    ids, lens = stack_batch(batch)
    if ids.shape[1] != cfg.seq_len:
        raise DimensionMismatch(
            f"batch sequence length {ids.shape[1]} != configured {cfg.seq_len}"
        )
    if int(ids.max(initial=0)) >= cfg.vocab_size:
        raise DimensionMismatch("token id out of vocabulary range")
    logits, pooled, _ = _forward_ids(params, cfg, ids, lens)
    return logits, pooled


def _backward(params: ModelParams, cfg: ModelConfig, cache: dict,
              dlogits: np.ndarray) -> dict[str, np.ndarray]:
    dtype = np.dtype(cfg.dtype)
    grads = {name: np.zeros_like(params[name]) for name in params.names()}
    ids, lens, vmask = cache["ids"], cache["lens"], cache["vmask"]
    b, t = ids.shape

    h, pooled = cache["h"], cache["pooled"]
    grads["head.w2"] += h.T @ dlogits
    grads["head.b2"] += dlogits.sum(axis=0)
    dh = dlogits @ params["head.w2"].T
    dh *= h > 0
    grads["head.w1"] += pooled.T @ dh
    grads["head.b1"] += dh.sum(axis=0)
    dpooled = dh @ params["head.w1"].T

    lens_f = lens.astype(dtype)[:, None]
    dx = (dpooled / lens_f)[:, None, :] * vmask

    scale = dtype.type(1.0 / math.sqrt(cfg.head_dim))
    for i in reversed(range(cfg.num_layers)):
        pre = f"layers.{i}"
        lc = cache["layers"][i]

        dres2, dg2, db2 = _layer_norm_backward(dx, lc["xhat2"], lc["inv2"], params[f"{pre}.ln2.g"])
        grads[f"{pre}.ln2.g"] += dg2
        grads[f"{pre}.ln2.b"] += db2
        dx1 = dres2.copy()
        dffn = dres2 if lc["mask2"] is None else dres2 * lc["mask2"]

        hidden = lc["hidden"]
        flat_h = hidden.reshape(-1, cfg.ffn_dim)
        flat_df = dffn.reshape(-1, cfg.embed_dim)
        grads[f"{pre}.ffn.w2"] += flat_h.T @ flat_df
        grads[f"{pre}.ffn.b2"] += flat_df.sum(axis=0)
        dhidden = dffn @ params[f"{pre}.ffn.w2"].T
        dhidden *= hidden > 0
        flat_x1 = lc["x1"].reshape(-1, cfg.embed_dim)
        flat_dh = dhidden.reshape(-1, cfg.ffn_dim)
        grads[f"{pre}.ffn.w1"] += flat_x1.T @ flat_dh
        grads[f"{pre}.ffn.b1"] += flat_dh.sum(axis=0)
        dx1 += dhidden @ params[f"{pre}.ffn.w1"].T

        dres1, dg1, db1 = _layer_norm_backward(dx1, lc["xhat1"], lc["inv1"], params[f"{pre}.ln1.g"])
        grads[f"{pre}.ln1.g"] += dg1
        grads[f"{pre}.ln1.b"] += db1
        dx_in = dres1.copy()
        dattn = dres1 if lc["mask1"] is None else dres1 * lc["mask1"]

        concat = lc["concat"]
        flat_c = concat.reshape(-1, cfg.embed_dim)
        flat_da = dattn.reshape(-1, cfg.embed_dim)
        grads[f"{pre}.attn.wo"] += flat_c.T @ flat_da
        grads[f"{pre}.attn.bo"] += flat_da.sum(axis=0)
        dconcat = dattn @ params[f"{pre}.attn.wo"].T
        do_heads = _split_heads(dconcat, cfg.num_heads)

        probs, q, k, v = lc["probs"], lc["q"], lc["k"], lc["v"]
        dprobs = do_heads @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ do_heads
        dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
        dscores *= scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        x_in = lc["x_in"]
        flat_x = x_in.reshape(-1, cfg.embed_dim)
        for name, dheads in (("wq", dq), ("wk", dk), ("wv", dv)):
            dm = _merge_heads(dheads).reshape(-1, cfg.embed_dim)
            grads[f"{pre}.attn.{name}"] += flat_x.T @ dm
            dx_in += dm.reshape(b, t, cfg.embed_dim) @ params[f"{pre}.attn.{name}"].T
        dx = dx_in

    np.add.at(grads["embed"], ids.reshape(-1), dx.reshape(-1, cfg.embed_dim))
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(params: ModelParams, cfg: ModelConfig,
                  batch: Sequence[TokenSequence], labels: Sequence[int],
                  class_weights: tuple[float, float] | None = None,
                  rng=None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean (optionally class-weighted) cross-entropy and its gradient.

    Labels: 0 = pass, 1 = fail.  Deterministic when rng is None.
    """
    ids, lens = stack_batch(batch)
    return _loss_and_grad_ids(params, cfg, ids, lens, np.asarray(labels), class_weights, rng)


def _loss_and_grad_ids(params, cfg, ids, lens, labels, class_weights=None, rng=None):
    if len(labels) != ids.shape[0]:
        raise DimensionMismatch("labels and batch size differ")
    logits, _, cache = _forward_ids(params, cfg, ids, lens, rng=rng, need_cache=True)
    b = ids.shape[0]
    probs = softmax(logits)
    w = np.ones(b) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[labels]
    picked = probs[np.arange(b), labels]
    loss = float(np.sum(w * -np.log(np.maximum(picked, 1e-300))) / b)

    dlogits = probs
    dlogits[np.arange(b), labels] -= 1.0
    dlogits *= w[:, None] / b
    grads = _backward(params, cfg, cache, dlogits.astype(np.dtype(cfg.dtype)))
    return loss, grads


def train(params: ModelParams, cfg: ModelConfig,
          data: Sequence[tuple[TokenSequence, int]], tcfg: TrainConfig,
          log_every: int = 0) -> tuple[ModelParams, list[float]]:
    """Adam training loop; returns (trained params, per-step loss log).

    Batches are sampled uniformly with replacement by a generator seeded
    from tcfg.seed; the same seed reproduces the loss log bit for bit.
    """
    if not data:
        raise EmptyDataset("training data is empty")
    ids = np.array([s.ids for s, _ in data], dtype=np.int32)
    lens = np.array([s.true_len for s, _ in data], dtype=np.int32)
    labels = np.array([y for _, y in data], dtype=np.int64)
    if ids.shape[1] != cfg.seq_len:
        raise DimensionMismatch(
            f"data sequence length {ids.shape[1]} != configured {cfg.seq_len}"
        )

    params = params.copy()
    rng = np.random.default_rng(tcfg.seed)
    dtype = np.dtype(cfg.dtype)
    moment1 = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    moment2 = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    lr = tcfg.learning_rate

    losses: list[float] = []
    for step in range(1, tcfg.steps + 1):
        pick = rng.integers(0, len(data), size=tcfg.batch_size)
        loss, grads = _loss_and_grad_ids(
            params, cfg, ids[pick], lens[pick], labels[pick],
            class_weights=tcfg.class_weights,
            rng=rng if cfg.dropout > 0 else None,
        )
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        bc1 = 1.0 - beta1 ** step
        bc2 = 1.0 - beta2 ** step
        for name in params.names():
            g = grads[name]
            m = moment1[name]
            v = moment2[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + eps)
            params[name] -= dtype.type(lr) * update
        if not params.all_finite():
            raise FloatingPointError(f"non-finite parameter after step {step}")
        losses.append(loss)
        if log_every and step % log_every == 0:
            mean = sum(losses[-log_every:]) / log_every
            print(f"step {step}/{tcfg.steps} loss {mean:.4f}")
    return params, losses


def predict(params: ModelParams, cfg: ModelConfig,
            seq: TokenSequence) -> tuple[Verdict, tuple[float, float]]:
    """Classify one sequence; exact ties resolve to Fail for human review."""
    logits, _ = forward(params, cfg, [seq])
    p_pass, p_fail = softmax(logits)[0]
    verdict = Verdict.Fail if p_fail >= p_pass else Verdict.Pass
    return verdict, (float(p_pass), float(p_fail))


def predict_many(params: ModelParams, cfg: ModelConfig,
                 seqs: Sequence[TokenSequence],
                 batch_size: int = 32) -> list[tuple[Verdict, tuple[float, float]]]:
    out: list[tuple[Verdict, tuple[float, float]]] = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start : start + batch_size]
        logits, _ = forward(params, cfg, chunk)
        for p_pass, p_fail in softmax(logits):
            verdict = Verdict.Fail if p_fail >= p_pass else Verdict.Pass
            out.append((verdict, (float(p_pass), float(p_fail))))
    return out
