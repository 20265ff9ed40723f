"""NAR student: Gaussian soft-copy decoder input, non-causal self-attention,
learned positional embeddings added at the input of every decoder layer.

There is no positional self-attention module; target positions get their
position information solely from these per-layer embeddings, and the
decoder emits all positions in one parallel pass.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .transformer import (NAR, Transformer, _attention, _dropout, _ffn, _ln,
                          _with_null_row)


def soft_copy_weights(src_len: int, target_len: int, sigma_sq: Tensor,
                      normalize: bool = True) -> Tensor:
    """Gaussian kernel weights W (target_len, src_len).

    Positions are 1-based: W[t, i] ~ exp(-(i - (T/T')*t)^2 / (2 sigma^2)),
    so the last target position centers on the last source position.  With
    ``normalize`` each row sums to 1; otherwise the raw Gaussian density
    (including its 1/sqrt(2 pi sigma^2) factor) is used.
    """
    if src_len < 1 or target_len < 1:
        raise ValueError(f"soft_copy needs positive lengths, got T={src_len}, T'={target_len}")
    i = np.arange(1, src_len + 1, dtype=np.float64)[None, :]
    t = np.arange(1, target_len + 1, dtype=np.float64)[:, None]
    sq_dist = (i - (src_len / target_len) * t) ** 2
    scaled = Tensor(-0.5 * sq_dist) / sigma_sq
    if normalize:
        return T.softmax(scaled)
    norm = T.exp(T.log(sigma_sq) * Tensor(-0.5)) * Tensor(1.0 / math.sqrt(2.0 * math.pi))
    return T.exp(scaled) * norm


def soft_copy(enc_out: Tensor, target_len: int, sigma_sq: Tensor,
              normalize: bool = True) -> Tensor:
    """Soft-copy one encoded sentence (T, d) to (target_len, d)."""
    w = soft_copy_weights(enc_out.shape[0], target_len, sigma_sq, normalize)
    return T.matmul(w, enc_out)


class NARTransformer(Transformer):
    """Non-autoregressive flavor; shares the AR encoder and param naming."""

    def __init__(self, config, params=None, seed: int = 0):
        if config.flavor != NAR:
            raise ValueError(f"NARTransformer needs flavor NAR, got {config.flavor}")
        super().__init__(config, params, seed)

    @property
    def sigma_sq(self) -> Tensor:
        return T.exp(self.params["soft_copy.rho"])

    def _pos_table(self, layer: int) -> Tensor:
        if self.config.per_layer_pos_tables:
            return self.params[f"decoder.layer{layer}.pos_embedding"]
        return self.params["decoder.pos_embedding"]

    def _decode_hidden(self, dec_in: Tensor, enc_out: Tensor, rng=None) -> Tensor:
        # non-causal: no self-attention mask; positions re-added every layer
        p, cfg = self.params, self.config
        Lt = dec_in.shape[1]
        x = dec_in
        for i in range(cfg.num_layers):
            x = x + T.gather_rows(self._pos_table(i), np.arange(Lt))
            pre = f"decoder.layer{i}"
            n = _ln(p, f"{pre}.ln1", x)
            a = _attention(p, f"{pre}.self_attn", n, n, cfg.num_heads)
            x = x + _dropout(a, cfg.dropout_rate, rng)
            c = _attention(p, f"{pre}.cross_attn", _ln(p, f"{pre}.ln2", x),
                           _with_null_row(p, f"{pre}.cross_attn", enc_out),
                           cfg.num_heads)
            x = x + _dropout(c, cfg.dropout_rate, rng)
            f = _ffn(p, f"{pre}.ffn", _ln(p, f"{pre}.ln3", x))
            x = x + _dropout(f, cfg.dropout_rate, rng)
        return _ln(p, "decoder.ln", x)

    def _soft_copy_batch(self, enc_out: Tensor, target_len: int) -> Tensor:
        # one weight matrix serves the whole rectangular batch
        w = soft_copy_weights(enc_out.shape[1], target_len, self.sigma_sq,
                              self.config.kernel_normalize)
        return T.matmul(w, enc_out)

    def nar_logits_batch(self, src_ids: np.ndarray, target_len: int, rng=None,
                         enc_out: Tensor | None = None,
                         dec_in: Tensor | None = None) -> Tensor:
        """Parallel logits (B, target_len, V).  ``enc_out`` / ``dec_in``
        overrides exist for perturbation tests and training reuse."""
        if not 1 <= target_len <= self.config.max_len:
            raise ValueError(
                f"target_len {target_len} outside [1, {self.config.max_len}]"
            )
        if enc_out is None:
            enc_out = self.encode_batch(src_ids, rng)
        if dec_in is None:
            dec_in = self._soft_copy_batch(enc_out, target_len)
        return self._project(self._decode_hidden(dec_in, enc_out, rng))

    # -- public single-sentence API ------------------------------------
    def nar_forward(self, src, target_len: int) -> np.ndarray:
        """Per-position distributions (target_len, vocab); rows sum to 1."""
        ids = self._check_ids(src, "source")
        with T.no_grad():
            logits = self.nar_logits_batch(ids[None, :], target_len)
            probs = T.softmax(logits)
        return probs.data[0]

    def nar_greedy_emit(self, src, target_len: int) -> list:
        return self.nar_greedy_emit_batch([src], target_len)[0]

    def nar_greedy_emit_batch(self, srcs, target_len: int) -> list:
        """Position-wise argmax emissions; every output has length target_len.
        All sources in the batch must share one length."""
        src_ids = np.stack([self._check_ids(s, "source") for s in srcs])
        with T.no_grad():
            logits = self.nar_logits_batch(src_ids, target_len)
        ids = np.argmax(logits.data, axis=-1)
        return [[int(t) for t in row] for row in ids]
