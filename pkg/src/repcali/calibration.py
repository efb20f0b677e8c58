"""Latent-space representation calibration.

A calibration block builds a fixed integer seed matrix, embeds it through
a learnable table, layer-normalizes the result and adds it, scaled by
lambda, to the encoder latent before the decoder consumes it:

    p = h + lambda * layer_norm(embed(seed))

The calibration field depends only on the block parameters and the
sequence length, never on the input tokens, so it is a learned constant
realignment of the latent space. Two seed modes are supported:

* ``constant_ones`` - every seed entry is 1, so one embedding row is
  broadcast to every position (d_h + 2*d_h parameters).
* ``positional`` - seed row is 0..n-1, giving a per-position field
  (n_max*d_h + 2*d_h parameters). This is the default: it is the only
  reading consistent with published per-model size growth of roughly a
  million parameters (about 0.35% of a 220M-parameter base).

The widely quoted closed-form count for the block is plain ``2*d_h``;
``repcali_param_count`` reports that literal value alongside the actual
registry count so the discrepancy stays visible instead of being patched
over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .tensor import Tensor, embedding_lookup, layer_norm

SEED_MODES = ("positional", "constant_ones")


@dataclass(frozen=True)
class CalibrationOptions:
    """Config-facing switches for the block."""
    enabled: bool = False
    lam: float = 1.0
    seed_mode: str = "positional"
    zero_init: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.seed_mode not in SEED_MODES:
            raise ValueError(f"unknown seed mode {self.seed_mode!r}")


@dataclass(frozen=True)
class RepcaliCount:
    """Actual parameter count plus the quoted 2*d_h literal."""
    count: int
    literal_2dh: int

    @property
    def literal_matches(self) -> bool:
        return self.count == self.literal_2dh


def repcali_param_count(mode: str, n_max: int, d_h: int) -> RepcaliCount:
    if mode not in SEED_MODES:
        raise ValueError(f"unknown seed mode {mode!r}")
    if n_max < 1 or d_h < 1:
        raise ValueError("n_max and d_h must be positive")
    if mode == "constant_ones":
        count = d_h + 2 * d_h
    else:
        count = n_max * d_h + 2 * d_h
    return RepcaliCount(count=count, literal_2dh=2 * d_h)


def build_shape_seed(mode: str, batch: int, n: int, n_max: int) -> np.ndarray:
    """Integer seed matrix [batch, n] fed to the calibration embedding."""
    if mode not in SEED_MODES:
        raise ValueError(f"unknown seed mode {mode!r}")
    if batch < 1 or n < 1:
        raise ValueError("batch and n must be positive")
    if n > n_max:
        raise ValueError(f"seed length {n} exceeds n_max={n_max}")
    if mode == "constant_ones":
        return np.ones((batch, n), dtype=np.int64)
    return np.tile(np.arange(n, dtype=np.int64), (batch, 1))


class CalibrationBlock:
    """Learnable calibration field: lambda * layer_norm(embed(shape seed))."""

    def __init__(self, d_h: int, n_max: int, lam: float = 1.0,
                 seed_mode: str = "positional", zero_init: bool = False,
                 seed: int = 0):
        if seed_mode not in SEED_MODES:
            raise ValueError(f"unknown seed mode {seed_mode!r}")
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        self.d_h = d_h
        self.n_max = n_max
        self.lam = float(lam)
        self.seed_mode = seed_mode
        # constant_ones keeps exactly one live row so the registry count is
        # d_h + 2*d_h; the all-ones seed addresses that row
        rows = n_max if seed_mode == "positional" else 1
        if zero_init:
            table = np.zeros((rows, d_h), dtype=np.float32)
        else:
            table = SplitMix64(seed).normal((rows, d_h), std=0.02).astype(np.float32)
        self.embed_table = Tensor(table, requires_grad=True)
        self.ln_gain = Tensor(np.ones(d_h, dtype=np.float32), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(d_h, dtype=np.float32), requires_grad=True)

    def named_params(self, prefix: str, out: list) -> None:
        out.append((f"{prefix}.embed_table", self.embed_table))
        out.append((f"{prefix}.ln_gain", self.ln_gain))
        out.append((f"{prefix}.ln_bias", self.ln_bias))

    def param_count(self) -> RepcaliCount:
        return repcali_param_count(self.seed_mode, self.n_max, self.d_h)


def compute_calibration(block: CalibrationBlock, batch: int, n: int) -> Tensor:
    """The calibration field d, shape [batch, n, d_h]; input-independent."""
    seed = build_shape_seed(block.seed_mode, batch, n, block.n_max)
    if block.seed_mode == "constant_ones":
        seed = seed - 1  # every (all-ones) entry addresses the single live row
    emb = embedding_lookup(block.embed_table, seed)
    return layer_norm(emb, block.ln_gain, block.ln_bias)


def calibrate(block: CalibrationBlock, latent: Tensor) -> Tensor:
    """latent + lambda * field. lambda == 0 returns the latent unchanged."""
    if latent.shape[-1] != block.d_h:
        raise ValueError(
            f"latent width {latent.shape[-1]} does not match block d_h={block.d_h}")
    if block.lam == 0.0:
        return latent
    field = compute_calibration(block, latent.shape[0], latent.shape[1])
    return latent + field * block.lam


def calibrated_forward(model, block: CalibrationBlock | None, src: np.ndarray,
                       y_prefix: np.ndarray, rng=None) -> Tensor:
    """decode(calibrate(encode(src)), y_prefix); plain decode if block is None."""
    latent = model.encode(src, rng)
    if block is not None:
        latent = calibrate(block, latent)
    return model.decode(latent, y_prefix, rng)
