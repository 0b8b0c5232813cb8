"""Cloud-side transformer: encoder over token features, decoder with
learnable queries emitting one activity distribution per query per layer."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear
from .tensor import ShapeError, Tensor


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal positions: sin on even columns, cos on odd, 0-based time."""
    if d % 2:
        raise ShapeError(f"positional encoding needs an even width, got {d}")
    t = np.arange(length)[:, None]
    j = np.arange(d // 2)[None, :]
    angle = t / np.power(10000.0, 2.0 * j / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


class MultiHeadAttention:
    """Scaled dot-product attention over N_h heads with output projection."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ShapeError(f"width {d} not divisible by {n_heads} heads")
        self.d = d
        self.n_heads = n_heads
        self.d_k = d // n_heads
        scale = 1.0 / np.sqrt(d)
        self.wq = Tensor(rng.uniform(-scale, scale, (d, d)), requires_grad=True)
        self.wk = Tensor(rng.uniform(-scale, scale, (d, d)), requires_grad=True)
        self.wv = Tensor(rng.uniform(-scale, scale, (d, d)), requires_grad=True)
        self.wo = Tensor(rng.uniform(-scale, scale, (d, d)), requires_grad=True)

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return x.reshape(b, n, self.n_heads, self.d_k).transpose(0, 2, 1, 3)

    def __call__(self, xq: Tensor, xk: Tensor, xv: Tensor) -> Tensor:
        if xk.shape[1] != xv.shape[1]:
            raise ShapeError(
                f"keys and values disagree on rows: {xk.shape} vs {xv.shape}"
            )
        if xq.shape[-1] != self.d or xk.shape[-1] != self.d or xv.shape[-1] != self.d:
            raise ShapeError(
                f"attention width {self.d} but inputs "
                f"{xq.shape}/{xk.shape}/{xv.shape}"
            )
        b, nq = xq.shape[0], xq.shape[1]
        nk = xk.shape[1]
        q = self._split(xq @ self.wq, b, nq)
        k = self._split(xk @ self.wk, b, nk)
        v = self._split(xv @ self.wv, b, nk)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.d_k))
        attn = T.softmax(scores, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, nq, self.d)
        return out @ self.wo

    def parameters(self, prefix):
        return {
            f"{prefix}.wq": self.wq,
            f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
        }


class FeedForward:
    """Two-layer ReLU block.  The hidden width is d/2 rather than the usual
    4d: the deployment target is parameter-bound, and the bottleneck keeps
    the ten attention stacks within the intended model-size budget."""

    def __init__(self, d: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = max(d // 2, 4) if hidden is None else hidden
        self.lin1 = Linear(d, hidden, rng)
        self.lin2 = Linear(hidden, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.relu(self.lin1(x)))

    def parameters(self, prefix):
        return {**self.lin1.parameters(f"{prefix}.lin1"), **self.lin2.parameters(f"{prefix}.lin2")}


class EncoderLayer:
    def __init__(self, d: int, n_heads: int, rng):
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.ffn = FeedForward(d, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x + self.attn(x, x, x))
        return self.norm2(h + self.ffn(h))

    def parameters(self, prefix):
        out = self.attn.parameters(f"{prefix}.attn")
        out.update(self.ffn.parameters(f"{prefix}.ffn"))
        out.update(self.norm1.parameters(f"{prefix}.norm1"))
        out.update(self.norm2.parameters(f"{prefix}.norm2"))
        return out


class Encoder:
    """Self-attention stack; positions are added on entry and re-added to
    the final state before it is handed to the decoder."""

    def __init__(self, d: int, n_heads: int, n_layers: int, rng):
        self.layers = [EncoderLayer(d, n_heads, rng) for _ in range(n_layers)]
        self.d = d

    def __call__(self, b_feats: Tensor) -> Tensor:
        pe = positional_encoding(b_feats.shape[1], self.d)
        h = b_feats + pe
        for layer in self.layers:
            h = layer(h)
        return h + pe

    def parameters(self, prefix="encoder"):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.layer{i}"))
        return out


class DecoderLayer:
    def __init__(self, d: int, n_heads: int, rng):
        self.cross = MultiHeadAttention(d, n_heads, rng)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.ffn = FeedForward(d, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.norm3 = LayerNorm(d)

    def __call__(self, d_prev: Tensor, queries: Tensor, enc: Tensor,
                 queries_in_self_attn: bool = False) -> Tensor:
        h = self.norm1(d_prev + self.cross(d_prev + queries, enc, enc))
        sa_in = h + queries if queries_in_self_attn else h
        h = self.norm2(h + self.self_attn(sa_in, sa_in, sa_in))
        return self.norm3(h + self.ffn(h))

    def parameters(self, prefix):
        out = self.cross.parameters(f"{prefix}.cross")
        out.update(self.self_attn.parameters(f"{prefix}.self"))
        out.update(self.ffn.parameters(f"{prefix}.ffn"))
        out.update(self.norm1.parameters(f"{prefix}.norm1"))
        out.update(self.norm2.parameters(f"{prefix}.norm2"))
        out.update(self.norm3.parameters(f"{prefix}.norm3"))
        return out


class Decoder:
    """N_dec layers over N_q learnable query rows, with a classification
    head shared across layers (deep supervision reads every layer)."""

    def __init__(
        self,
        d: int,
        n_heads: int,
        n_layers: int,
        n_queries: int,
        n_classes: int,
        rng: np.random.Generator,
        queries_in_self_attn: bool = False,
    ):
        self.layers = [DecoderLayer(d, n_heads, rng) for _ in range(n_layers)]
        self.queries = Tensor(rng.normal(0, 0.5, (n_queries, d)), requires_grad=True)
        self.head = Linear(d, n_classes, rng)
        self.n_queries = n_queries
        self.n_classes = n_classes
        self.d = d
        self.queries_in_self_attn = queries_in_self_attn

    def __call__(self, enc: Tensor) -> list[Tensor]:
        """Return per-layer logits, each (B, N_q, n_classes)."""
        b = enc.shape[0]
        state = Tensor(np.zeros((b, self.n_queries, self.d)))
        logits = []
        for layer in self.layers:
            state = layer(state, self.queries, enc, self.queries_in_self_attn)
            logits.append(self.head(state))
        return logits

    def parameters(self, prefix="decoder"):
        out = {f"{prefix}.queries": self.queries}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.layer{i}"))
        out.update(self.head.parameters(f"{prefix}.head"))
        return out
