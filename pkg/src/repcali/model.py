"""A small pre-norm encoder-decoder transformer.

The encoder output is exposed as an explicit latent tensor and the decoder
accepts an arbitrary latent, so anything (a calibration block, a probe)
can be spliced between the two. Parameters live in a flat named registry;
a parameter's trainable flag is its tensor's `requires_grad`.

Hooks for the fine-tuning strategies are built in but dormant: linear
layers accept an optional low-rank update, blocks accept optional
bottleneck adapters, attentions accept optional key/value prefixes and the
model accepts an optional soft-prompt table. They stay `None` until a
tuning method injects them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .tensor import (
    Tensor,
    concat,
    dropout,
    embedding_lookup,
    layer_norm,
    matmul,
    permute,
    relu,
    reshape,
    softmax,
    tile_batch,
)

MASK_NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    d_h: int = 64
    heads: int = 4
    ffn_mult: int = 4
    vocab: int = 64
    n_max: int = 32
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.layers, self.d_h, self.heads, self.ffn_mult, self.vocab, self.n_max) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.d_h % self.heads != 0:
            raise ValueError(f"d_h={self.d_h} must be divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def _weight(rng: SplitMix64, d_in: int, d_out: int) -> Tensor:
    bound = 1.0 / math.sqrt(d_in)
    return Tensor(rng.uniform((d_in, d_out), -bound, bound).astype(np.float32),
                  requires_grad=True)


def _embedding(rng: SplitMix64, rows: int, d: int) -> Tensor:
    return Tensor(rng.normal((rows, d), std=0.02).astype(np.float32), requires_grad=True)


class Linear:
    def __init__(self, rng: SplitMix64, d_in: int, d_out: int, bias: bool = True):
        self.w = _weight(rng, d_in, d_out)
        self.b = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None
        self.lora_a: Tensor | None = None
        self.lora_b: Tensor | None = None
        self.lora_scale = 1.0

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        if self.b is not None:
            out = out + self.b
        if self.lora_a is not None:
            out = out + matmul(matmul(x, self.lora_a), self.lora_b) * self.lora_scale
        return out

    def named_params(self, prefix: str, out: list) -> None:
        out.append((f"{prefix}.w", self.w))
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        if self.lora_a is not None:
            out.append((f"{prefix}.lora_a", self.lora_a))
            out.append((f"{prefix}.lora_b", self.lora_b))


class LayerNorm:
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)

    def named_params(self, prefix: str, out: list) -> None:
        out.append((f"{prefix}.gain", self.gain))
        out.append((f"{prefix}.bias", self.bias))


class Adapter:
    """Bias-free bottleneck with inner residual: z + relu(z W_down) W_up."""

    def __init__(self, rng: SplitMix64, d_h: int, d_m: int):
        self.down = _weight(rng, d_h, d_m)
        self.up = Tensor(np.zeros((d_m, d_h), dtype=np.float32), requires_grad=True)

    def __call__(self, z: Tensor) -> Tensor:
        return z + matmul(relu(matmul(z, self.down)), self.up)

    def named_params(self, prefix: str, out: list) -> None:
        out.append((f"{prefix}.down", self.down))
        out.append((f"{prefix}.up", self.up))


class MultiHeadAttention:
    def __init__(self, rng: SplitMix64, d_h: int, heads: int):
        self.heads = heads
        self.head_dim = d_h // heads
        self.d_h = d_h
        self.wq = Linear(rng, d_h, d_h)
        self.wk = Linear(rng, d_h, d_h)
        self.wv = Linear(rng, d_h, d_h)
        self.wo = Linear(rng, d_h, d_h)
        # key/value prefix hook: (seed, shared, k_head, v_head); seed and
        # shared are owned by the tuning method and shared across sites
        self.prefix: tuple[Tensor, Tensor, Tensor, Tensor] | None = None

    def _split(self, x: Tensor, b: int, t: int) -> Tensor:
        return permute(reshape(x, (b, t, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask: np.ndarray | None,
                 rng: SplitMix64 | None, p: float) -> Tensor:
        b, t_q = x_q.shape[0], x_q.shape[1]
        q = self.wq(x_q)
        k = self.wk(x_kv)
        v = self.wv(x_kv)
        n_pre = 0
        if self.prefix is not None:
            seed, shared, k_head, v_head = self.prefix
            hidden = relu(matmul(seed, shared))
            pk = tile_batch(matmul(hidden, k_head), b)
            pv = tile_batch(matmul(hidden, v_head), b)
            k = concat([pk, k], axis=1)
            v = concat([pv, v], axis=1)
            n_pre = seed.shape[0]
        t_k = x_kv.shape[1] + n_pre
        q = self._split(q, b, t_q)
        k = self._split(k, b, t_k)
        v = self._split(v, b, t_k)
        scores = matmul(q, permute(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            if n_pre:
                mask = np.concatenate(
                    [np.zeros((mask.shape[0], n_pre), dtype=mask.dtype), mask], axis=1)
            scores = scores + Tensor(mask.astype(scores.dtype))
        attn = softmax(scores)
        if rng is not None and p > 0:
            attn = dropout(attn, p, rng)
        out = matmul(attn, v)
        out = reshape(permute(out, (0, 2, 1, 3)), (b, t_q, self.d_h))
        return self.wo(out)

    def named_params(self, prefix: str, out: list) -> None:
        self.wq.named_params(f"{prefix}.wq", out)
        self.wk.named_params(f"{prefix}.wk", out)
        self.wv.named_params(f"{prefix}.wv", out)
        self.wo.named_params(f"{prefix}.wo", out)
        if self.prefix is not None:
            out.append((f"{prefix}.prefix_k", self.prefix[2]))
            out.append((f"{prefix}.prefix_v", self.prefix[3]))


class FeedForward:
    def __init__(self, rng: SplitMix64, d_h: int, d_ff: int):
        self.w1 = Linear(rng, d_h, d_ff)
        self.w2 = Linear(rng, d_ff, d_h)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(relu(self.w1(x)))

    def named_params(self, prefix: str, out: list) -> None:
        self.w1.named_params(f"{prefix}.w1", out)
        self.w2.named_params(f"{prefix}.w2", out)


def _residual(x: Tensor, y: Tensor, rng, p: float) -> Tensor:
    return x + (dropout(y, p, rng) if rng is not None else y)


class EncoderBlock:
    def __init__(self, rng: SplitMix64, cfg: ModelConfig):
        self.ln1 = LayerNorm(cfg.d_h)
        self.attn = MultiHeadAttention(rng, cfg.d_h, cfg.heads)
        self.ln2 = LayerNorm(cfg.d_h)
        self.ffn = FeedForward(rng, cfg.d_h, cfg.d_h * cfg.ffn_mult)
        self.attn_adapter: Adapter | None = None
        self.ffn_adapter: Adapter | None = None

    def __call__(self, x: Tensor, rng, p: float) -> Tensor:
        nx = self.ln1(x)
        a = self.attn(nx, nx, None, rng, p)
        if self.attn_adapter is not None:
            a = self.attn_adapter(a)
        x = _residual(x, a, rng, p)
        f = self.ffn(self.ln2(x))
        if self.ffn_adapter is not None:
            f = self.ffn_adapter(f)
        return _residual(x, f, rng, p)

    def named_params(self, prefix: str, out: list) -> None:
        self.ln1.named_params(f"{prefix}.ln1", out)
        self.attn.named_params(f"{prefix}.attn", out)
        if self.attn_adapter is not None:
            self.attn_adapter.named_params(f"{prefix}.attn_adapter", out)
        self.ln2.named_params(f"{prefix}.ln2", out)
        self.ffn.named_params(f"{prefix}.ffn", out)
        if self.ffn_adapter is not None:
            self.ffn_adapter.named_params(f"{prefix}.ffn_adapter", out)


class DecoderBlock:
    def __init__(self, rng: SplitMix64, cfg: ModelConfig):
        self.ln1 = LayerNorm(cfg.d_h)
        self.self_attn = MultiHeadAttention(rng, cfg.d_h, cfg.heads)
        self.ln2 = LayerNorm(cfg.d_h)
        self.cross_attn = MultiHeadAttention(rng, cfg.d_h, cfg.heads)
        self.ln3 = LayerNorm(cfg.d_h)
        self.ffn = FeedForward(rng, cfg.d_h, cfg.d_h * cfg.ffn_mult)
        self.attn_adapter: Adapter | None = None
        self.ffn_adapter: Adapter | None = None

    def __call__(self, x: Tensor, latent: Tensor, mask: np.ndarray, rng, p: float) -> Tensor:
        nx = self.ln1(x)
        a = self.self_attn(nx, nx, mask, rng, p)
        if self.attn_adapter is not None:
            a = self.attn_adapter(a)
        x = _residual(x, a, rng, p)
        c = self.cross_attn(self.ln2(x), latent, None, rng, p)
        x = _residual(x, c, rng, p)
        f = self.ffn(self.ln3(x))
        if self.ffn_adapter is not None:
            f = self.ffn_adapter(f)
        return _residual(x, f, rng, p)

    def named_params(self, prefix: str, out: list) -> None:
        self.ln1.named_params(f"{prefix}.ln1", out)
        self.self_attn.named_params(f"{prefix}.self_attn", out)
        if self.attn_adapter is not None:
            self.attn_adapter.named_params(f"{prefix}.attn_adapter", out)
        self.ln2.named_params(f"{prefix}.ln2", out)
        self.cross_attn.named_params(f"{prefix}.cross_attn", out)
        self.ln3.named_params(f"{prefix}.ln3", out)
        self.ffn.named_params(f"{prefix}.ffn", out)
        if self.ffn_adapter is not None:
            self.ffn_adapter.named_params(f"{prefix}.ffn_adapter", out)


class Seq2SeqModel:
    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        rng = SplitMix64(seed)
        self.tok_emb = _embedding(rng.fork("tok_emb"), cfg.vocab, cfg.d_h)
        self.pos_emb = _embedding(rng.fork("pos_emb"), cfg.n_max, cfg.d_h)
        self.enc_blocks = [EncoderBlock(rng.fork(f"enc.{i}"), cfg) for i in range(cfg.layers)]
        self.enc_ln_f = LayerNorm(cfg.d_h)
        self.dec_blocks = [DecoderBlock(rng.fork(f"dec.{i}"), cfg) for i in range(cfg.layers)]
        self.dec_ln_f = LayerNorm(cfg.d_h)
        self.out_proj = Linear(rng.fork("out_proj"), cfg.d_h, cfg.vocab, bias=False)
        # tuning-method hooks (dormant until attached)
        self.prompt: Tensor | None = None
        self.prefix_seed: Tensor | None = None
        self.prefix_shared: Tensor | None = None
        self.calibration = None
        self.method_kind: str | None = None
        self.method_spec = None
        self.injected_names: list[str] = []

    # ------------------------------------------------------------------
    def _embed(self, ids: np.ndarray, what: str) -> Tensor:
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ValueError(f"{what} ids must be 2-d [batch, time], got {ids.shape}")
        t = ids.shape[1]
        if t > self.cfg.n_max:
            raise ValueError(f"{what} length {t} exceeds n_max={self.cfg.n_max}")
        tok = embedding_lookup(self.tok_emb, ids)
        pos = embedding_lookup(self.pos_emb, np.arange(t))
        return tok + pos

    def encode(self, src: np.ndarray, rng: SplitMix64 | None = None) -> Tensor:
        """Latent representation of the source, shape [B, T, d_h].

        With a soft prompt attached the latent is [B, prompt_len + T, d_h].
        Pass `rng` to enable dropout (training); omit it for pure eval.
        """
        p = self.cfg.dropout
        x = self._embed(src, "source")
        if self.prompt is not None:
            x = concat([tile_batch(self.prompt, x.shape[0]), x], axis=1)
        if rng is not None:
            x = dropout(x, p, rng)
        for block in self.enc_blocks:
            x = block(x, rng, p)
        return self.enc_ln_f(x)

    def decode(self, latent: Tensor, y_prefix: np.ndarray,
               rng: SplitMix64 | None = None) -> Tensor:
        """Next-token logits [B, T_tgt, V] under a causal mask over y_prefix."""
        if latent.shape[-1] != self.cfg.d_h:
            raise ValueError(
                f"latent width {latent.shape[-1]} does not match d_h={self.cfg.d_h}")
        p = self.cfg.dropout
        x = self._embed(y_prefix, "target")
        if rng is not None:
            x = dropout(x, p, rng)
        t = x.shape[1]
        mask = np.triu(np.full((t, t), MASK_NEG, dtype=np.float32), k=1)
        for block in self.dec_blocks:
            x = block(x, latent, mask, rng, p)
        return self.out_proj(self.dec_ln_f(x))

    def greedy_decode(self, latent: Tensor, bos: int, eos: int, max_len: int) -> list[np.ndarray]:
        """Argmax continuation per sequence, stopping at eos (eos included).

        Ties break toward the smaller token id. Returns one array per batch
        element; the leading bos is not part of the output.
        """
        if max_len > self.cfg.n_max:
            raise ValueError(f"max_len {max_len} exceeds n_max={self.cfg.n_max}")
        b = latent.shape[0]
        ys = np.full((b, 1), bos, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        for _ in range(max_len):
            logits = self.decode(latent, ys)
            nxt = np.argmax(logits.data[:, -1, :], axis=-1).astype(np.int64)
            nxt = np.where(done, eos, nxt)
            ys = np.concatenate([ys, nxt[:, None]], axis=1)
            done |= nxt == eos
            if done.all():
                break
        out = []
        for row in ys[:, 1:]:
            stop = np.argwhere(row == eos)
            out.append(row[: int(stop[0, 0]) + 1] if stop.size else row)
        return out

    # ------------------------------------------------------------------
    def named_params(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        out.append(("tok_emb", self.tok_emb))
        out.append(("pos_emb", self.pos_emb))
        if self.prompt is not None:
            out.append(("prompt.table", self.prompt))
        if self.prefix_seed is not None:
            out.append(("prefix.seed", self.prefix_seed))
            out.append(("prefix.shared", self.prefix_shared))
        for i, blk in enumerate(self.enc_blocks):
            blk.named_params(f"enc.{i}", out)
        self.enc_ln_f.named_params("enc.ln_f", out)
        for i, blk in enumerate(self.dec_blocks):
            blk.named_params(f"dec.{i}", out)
        self.dec_ln_f.named_params("dec.ln_f", out)
        self.out_proj.named_params("out_proj", out)
        if self.calibration is not None:
            self.calibration.named_params("calibration", out)
        return out

    def param(self, name: str) -> Tensor:
        for n, t in self.named_params():
            if n == name:
                return t
        raise KeyError(name)

    def set_trainable(self, predicate) -> None:
        for name, t in self.named_params():
            t.requires_grad = bool(predicate(name))

    def astype(self, dtype) -> "Seq2SeqModel":
        """Cast every parameter in place (used by the gradient-check suite)."""
        for _, t in self.named_params():
            t.data = t.data.astype(dtype)
        return self


def count_trainable_params(model) -> int:
    """Exact number of scalars whose trainable flag is set."""
    return sum(t.size for _, t in model.named_params() if t.requires_grad)
