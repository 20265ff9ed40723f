"""Encoder-decoder transformer: the AR teacher and the NAR student backbone.

Pre-LN residual blocks, sinusoidal positional encodings at the embedding
layer, shared source/target embedding table optionally tied to the output
projection.  All batched entry points take rectangular id arrays: callers
group sentences by exact length, so no padding is ever present inside the
model and attention masks reduce to the causal mask alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .util import rng_for
from .vocab import BOS_ID, EOS_ID, N_RESERVED

# paper-scale base configuration, recorded for reference configs; desk-scale
# defaults live on ModelConfig itself
PAPER_SCALE = {"num_layers": 6, "num_heads": 8, "model_dim": 512, "hidden_dim": 2048}

AR = "AR"
NAR = "NAR"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    hidden_dim: int = 256
    max_len: int = 64
    dropout_rate: float = 0.0
    flavor: str = AR
    weight_tying: bool = True
    # NAR-only switches (ignored for AR flavor)
    per_layer_pos_tables: bool = False
    kernel_normalize: bool = True

    def __post_init__(self):
        if self.flavor not in (AR, NAR):
            raise ValueError(f"flavor must be AR or NAR, got {self.flavor!r}")
        if self.vocab_size <= N_RESERVED:
            raise ValueError(f"vocab_size must exceed the {N_RESERVED} reserved ids")
        for name in ("num_layers", "num_heads", "model_dim", "hidden_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)

    def as_nar(self) -> "ModelConfig":
        return replace(self, flavor=NAR)


# ---------------------------------------------------------------------
# parameter schema and initialization
# ---------------------------------------------------------------------

def _attn_shapes(prefix: str, d: int, null_slot: bool = False) -> dict:
    shapes = {}
    for w in ("Wq", "Wk", "Wv", "Wo"):
        shapes[f"{prefix}.{w}"] = (d, d)
    for b in ("bq", "bk", "bv", "bo"):
        shapes[f"{prefix}.{b}"] = (d,)
    if null_slot:
        # learned off-the-edge attention target (one extra kv row; gives the
        # decoder somewhere to look when its alignment leaves the source)
        shapes[f"{prefix}.null"] = (1, d)
    return shapes


def _ffn_shapes(prefix: str, d: int, h: int) -> dict:
    return {
        f"{prefix}.W1": (d, h),
        f"{prefix}.b1": (h,),
        f"{prefix}.W2": (h, d),
        f"{prefix}.b2": (d,),
    }


def _ln_shapes(prefix: str, d: int) -> dict:
    return {f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)}


def param_schema(config: ModelConfig) -> dict:
    """Map parameter path -> shape for the given configuration."""
    d, h = config.model_dim, config.hidden_dim
    shapes = {"embedding": (config.vocab_size, d)}
    if not config.weight_tying:
        shapes["output_proj"] = (config.vocab_size, d)
    for i in range(config.num_layers):
        shapes.update(_attn_shapes(f"encoder.layer{i}.attn", d))
        shapes.update(_ffn_shapes(f"encoder.layer{i}.ffn", d, h))
        shapes.update(_ln_shapes(f"encoder.layer{i}.ln1", d))
        shapes.update(_ln_shapes(f"encoder.layer{i}.ln2", d))
        shapes.update(_attn_shapes(f"decoder.layer{i}.self_attn", d))
        shapes.update(_attn_shapes(f"decoder.layer{i}.cross_attn", d, null_slot=True))
        shapes.update(_ffn_shapes(f"decoder.layer{i}.ffn", d, h))
        shapes.update(_ln_shapes(f"decoder.layer{i}.ln1", d))
        shapes.update(_ln_shapes(f"decoder.layer{i}.ln2", d))
        shapes.update(_ln_shapes(f"decoder.layer{i}.ln3", d))
    shapes.update(_ln_shapes("encoder.ln", d))
    shapes.update(_ln_shapes("decoder.ln", d))
    if config.flavor == NAR:
        shapes["soft_copy.rho"] = ()
        if config.per_layer_pos_tables:
            for i in range(config.num_layers):
                shapes[f"decoder.layer{i}.pos_embedding"] = (config.max_len, d)
        else:
            shapes["decoder.pos_embedding"] = (config.max_len, d)
    return shapes


def init_params(config: ModelConfig, seed: int) -> dict:
    """Xavier-uniform weights, zero biases, N(0, d^-1/2) embeddings, rho = 0."""
    d = config.model_dim
    params = {}
    for name, shape in sorted(param_schema(config).items()):
        rng = rng_for(seed, "init", name)
        if name == "soft_copy.rho":
            val = np.zeros(())  # sigma^2 = exp(0) = 1 initially
        elif name.endswith(".gain"):
            val = np.ones(shape)
        elif name.endswith((".b1", ".b2", ".bq", ".bk", ".bv", ".bo", ".bias")):
            val = np.zeros(shape)
        elif (name in ("embedding", "output_proj")
              or name.endswith(("pos_embedding", ".null"))):
            val = rng.standard_normal(shape) / math.sqrt(d)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            val = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(val, requires_grad=True)
    return params


def copy_param_values(params: dict) -> dict:
    """Detached float copies of a parameter set (for checkpoint ring buffers)."""
    return {k: v.data.copy() for k, v in params.items()}


def sinusoid_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-math.log(10000.0) / d))
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: d // 2])
    return table


def make_causal_mask(n: int) -> np.ndarray:
    """Boolean (n, n) mask: entry (t, k) True iff position t may attend k <= t."""
    return np.tril(np.ones((n, n), dtype=bool))


# ---------------------------------------------------------------------
# sublayers
# ---------------------------------------------------------------------

def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def _attention(params: dict, prefix: str, q_in: Tensor, kv_in: Tensor,
               num_heads: int, allowed: np.ndarray | None = None) -> Tensor:
    """Multi-head attention; ``allowed`` broadcasts over (B, H, Lq, Lk)."""
    B, Lq, d = q_in.shape
    Lk = kv_in.shape[1]
    dh = d // num_heads
    q = T.matmul(q_in, params[f"{prefix}.Wq"]) + params[f"{prefix}.bq"]
    k = T.matmul(kv_in, params[f"{prefix}.Wk"]) + params[f"{prefix}.bk"]
    v = T.matmul(kv_in, params[f"{prefix}.Wv"]) + params[f"{prefix}.bv"]
    q = q.reshape(B, Lq, num_heads, dh).transpose((0, 2, 1, 3))
    k = k.reshape(B, Lk, num_heads, dh).transpose((0, 2, 1, 3))
    v = v.reshape(B, Lk, num_heads, dh).transpose((0, 2, 1, 3))
    scores = T.matmul(q, k.transpose((0, 1, 3, 2))) * Tensor(1.0 / math.sqrt(dh))
    if allowed is not None:
        scores = T.masked_fill(scores, allowed)
    ctx = T.matmul(T.softmax(scores), v)
    ctx = ctx.transpose((0, 2, 1, 3)).reshape(B, Lq, d)
    return T.matmul(ctx, params[f"{prefix}.Wo"]) + params[f"{prefix}.bo"]


def _ffn(params: dict, prefix: str, x: Tensor) -> Tensor:
    h = T.relu(T.matmul(x, params[f"{prefix}.W1"]) + params[f"{prefix}.b1"])
    return T.matmul(h, params[f"{prefix}.W2"]) + params[f"{prefix}.b2"]


def _ln(params: dict, prefix: str, x: Tensor) -> Tensor:
    """Layer norm with learned per-dim gain and bias (the usual affine)."""
    return T.layer_norm(x) * params[f"{prefix}.gain"] + params[f"{prefix}.bias"]


def _with_null_row(params: dict, prefix: str, kv: Tensor) -> Tensor:
    """Prepend the learned null kv row, broadcast across the batch."""
    B = kv.shape[0]
    row = T.gather_rows(params[f"{prefix}.null"], np.zeros((B, 1), dtype=np.int64))
    return T.concat([row, kv], axis=1)


# ---------------------------------------------------------------------
# model
# ---------------------------------------------------------------------

class Transformer:
    """AR encoder-decoder.  Batched internals take (B, L) int64 id arrays
    where every row has the same true length (callers group by length)."""

    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int = 0):
        if config.flavor != AR and type(self) is Transformer:
            raise ValueError("use NARTransformer for NAR-flavor configs")
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        missing = set(param_schema(config)) ^ set(self.params)
        if missing:
            raise ValueError(f"parameter set does not match schema: {sorted(missing)}")
        self._pos = sinusoid_table(config.max_len, config.model_dim)

    # -- shared pieces -------------------------------------------------
    def _check_ids(self, seq, what: str):
        seq = np.asarray(seq, dtype=np.int64)
        if seq.size == 0:
            raise ValueError(f"empty {what} sequence rejected")
        if seq.min() < 0 or seq.max() >= self.config.vocab_size:
            raise ValueError(
                f"{what} token id out of range [0, {self.config.vocab_size}): "
                f"min={seq.min()}, max={seq.max()}"
            )
        return seq

    def _embed(self, ids: np.ndarray, rng=None) -> Tensor:
        # (B, L) -> (B, L, d), scaled embedding plus sinusoidal positions
        L = ids.shape[1]
        if L > self.config.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        x = T.gather_rows(self.params["embedding"], ids) * Tensor(
            math.sqrt(self.config.model_dim)
        )
        x = x + Tensor(self._pos[:L])
        return _dropout(x, self.config.dropout_rate, rng)

    def _project(self, hidden: Tensor) -> Tensor:
        table = self.params["embedding" if self.config.weight_tying else "output_proj"]
        return T.matmul(hidden, T.transpose(table))

    def encode_batch(self, src_ids: np.ndarray, rng=None) -> Tensor:
        p, cfg = self.params, self.config
        x = self._embed(src_ids, rng)
        for i in range(cfg.num_layers):
            pre = f"encoder.layer{i}"
            n = _ln(p, f"{pre}.ln1", x)
            a = _attention(p, f"{pre}.attn", n, n, cfg.num_heads)
            x = x + _dropout(a, cfg.dropout_rate, rng)
            f = _ffn(p, f"{pre}.ffn", _ln(p, f"{pre}.ln2", x))
            x = x + _dropout(f, cfg.dropout_rate, rng)
        return _ln(p, "encoder.ln", x)

    def _decode_hidden(self, dec_in: Tensor, enc_out: Tensor, rng=None) -> Tensor:
        # dec_in (B, Lt, d) already embedded; causal self-attention
        p, cfg = self.params, self.config
        allowed = make_causal_mask(dec_in.shape[1])
        x = dec_in
        for i in range(cfg.num_layers):
            pre = f"decoder.layer{i}"
            n = _ln(p, f"{pre}.ln1", x)
            a = _attention(p, f"{pre}.self_attn", n, n, cfg.num_heads, allowed)
            x = x + _dropout(a, cfg.dropout_rate, rng)
            c = _attention(p, f"{pre}.cross_attn", _ln(p, f"{pre}.ln2", x),
                           _with_null_row(p, f"{pre}.cross_attn", enc_out),
                           cfg.num_heads)
            x = x + _dropout(c, cfg.dropout_rate, rng)
            f = _ffn(p, f"{pre}.ffn", _ln(p, f"{pre}.ln3", x))
            x = x + _dropout(f, cfg.dropout_rate, rng)
        return _ln(p, "decoder.ln", x)

    def ar_logits_batch(self, src_ids: np.ndarray, tgt_in_ids: np.ndarray,
                        rng=None, enc_out: Tensor | None = None) -> Tensor:
        """Teacher-forced logits (B, Lt, V); row t conditions on tgt_in[:, :t+1]."""
        if enc_out is None:
            enc_out = self.encode_batch(src_ids, rng)
        dec_in = self._embed(tgt_in_ids, rng)
        return self._project(self._decode_hidden(dec_in, enc_out, rng))

    # -- public single-sentence API ------------------------------------
    def encode(self, src) -> Tensor:
        """Encoder output for one sentence: (T, model_dim)."""
        ids = self._check_ids(src, "source")
        with T.no_grad():
            out = self.encode_batch(ids[None, :])
        return Tensor(out.data[0])

    def ar_decode_step(self, enc_out: Tensor, prefix) -> np.ndarray:
        """Next-token probability vector given a BOS-initial decoded prefix."""
        ids = self._check_ids(prefix, "prefix")
        if ids[0] != BOS_ID:
            raise ValueError(f"prefix must start with BOS id {BOS_ID}, got {ids[0]}")
        if len(ids) > self.config.max_len:
            raise ValueError(
                f"prefix length {len(ids)} exceeds max_len {self.config.max_len}"
            )
        enc = enc_out if isinstance(enc_out, Tensor) else Tensor(enc_out)
        with T.no_grad():
            dec_in = self._embed(ids[None, :])
            h = self._decode_hidden(dec_in, Tensor(enc.data[None, :, :]))
            probs = T.softmax(self._project(h))
        return probs.data[0, -1]

    def greedy_decode(self, src, max_len: int | None = None) -> list:
        return self.greedy_decode_batch([src], max_len=max_len)[0]

    def greedy_decode_batch(self, srcs, max_len: int | None = None) -> list:
        """Greedy decode many sentences; groups by source length internally.

        Output length is hard-capped at 2*T + 8 (or ``max_len`` if given);
        EOS is consumed, not returned.
        """
        srcs = [self._check_ids(s, "source") for s in srcs]
        out: list = [None] * len(srcs)
        by_len: dict = {}
        for i, s in enumerate(srcs):
            by_len.setdefault(len(s), []).append(i)
        for T_src, idxs in sorted(by_len.items()):
            cap = 2 * T_src + 8 if max_len is None else max_len
            cap = min(cap, self.config.max_len - 1)
            batch = np.stack([srcs[i] for i in idxs])
            for i, hyp in zip(idxs, self._greedy_group(batch, cap)):
                out[i] = hyp
        return out

    def _greedy_group(self, src_ids: np.ndarray, cap: int) -> list:
        B = src_ids.shape[0]
        with T.no_grad():
            enc_out = self.encode_batch(src_ids)
            prefix = np.full((B, 1), BOS_ID, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            hyps: list = [[] for _ in range(B)]
            for _ in range(cap):
                dec_in = self._embed(prefix)
                h = self._decode_hidden(dec_in, enc_out)
                logits = self._project(Tensor(h.data[:, -1:, :]))
                nxt = np.argmax(logits.data[:, 0, :], axis=-1)
                for b in range(B):
                    if done[b]:
                        continue
                    if nxt[b] == EOS_ID:
                        done[b] = True
                    else:
                        hyps[b].append(int(nxt[b]))
                if done.all():
                    break
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        return hyps

    def sequence_logprob(self, src, tgt) -> tuple:
        """(sum, per-token mean) of log P(tgt_t | tgt_<t, src); no EOS term."""
        total, mean = self.sequence_logprob_batch([src], [tgt])
        return float(total[0]), float(mean[0])

    def sequence_logprob_batch(self, srcs, tgts) -> tuple:
        """Batched scoring; all srcs share one length and all tgts another."""
        src_ids = np.stack([self._check_ids(s, "source") for s in srcs])
        tgt_ids = np.stack([self._check_ids(t, "target") for t in tgts])
        n = tgt_ids.shape[1]
        tgt_in = np.concatenate(
            [np.full((len(srcs), 1), BOS_ID, dtype=np.int64), tgt_ids[:, : n - 1]], axis=1
        )
        with T.no_grad():
            logits = self.ar_logits_batch(src_ids, tgt_in)
            logp = T.log_softmax(logits).data
        rows = np.take_along_axis(logp, tgt_ids[:, :, None], axis=2)[:, :, 0]
        totals = rows.sum(axis=1)
        return totals, totals / n
