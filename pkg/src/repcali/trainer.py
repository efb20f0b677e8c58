"""Optimization loop, freeze enforcement, and deterministic evaluation.

Adam over token-level cross entropy with global gradient-norm clipping.
Only tensors whose trainable flag is set get moment buffers or updates,
so frozen parameters are conserved bitwise. Batches are bucketed by
sequence length (no padding needed for the synthetic tasks) and the whole
run is a pure function of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import calibrate, calibrated_forward
from .metrics import corpus_bleu4, exact_match, token_accuracy
from .model import Seq2SeqModel
from .rng import SplitMix64, derive
from .tasks import BOS, EOS, PAD, Dataset
from .tensor import Tape, Tensor, backward, cross_entropy

LOG_COLUMNS = ["step", "split", "loss", "token_acc", "exact_match", "bleu4"]


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite training loss at step {step}")
        self.step = step


class Adam:
    """Adam with bias correction and global-norm clipping.

    Moment buffers exist only for trainable-flagged parameters.
    """

    def __init__(self, named_params, lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip: float = 1.0):
        self.trainable = [(n, t) for n, t in named_params if t.requires_grad]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip = clip
        self.m = {n: np.zeros_like(t.data) for n, t in self.trainable}
        self.v = {n: np.zeros_like(t.data) for n, t in self.trainable}
        self.t = 0

    def zero_grad(self) -> None:
        for _, t in self.trainable:
            t.grad = None

    def step(self) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        self.t += 1
        live = [(n, t) for n, t in self.trainable if t.grad is not None]
        sq = sum(float((t.grad.astype(np.float64) ** 2).sum()) for _, t in live)
        gnorm = math.sqrt(sq)
        scale = self.clip / gnorm if (self.clip > 0 and gnorm > self.clip) else 1.0
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, t in live:
            g = t.grad.astype(np.float32) * np.float32(scale)
            self.m[n] = self.b1 * self.m[n] + (1.0 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1.0 - self.b2) * (g * g)
            m_hat = self.m[n] / c1
            v_hat = self.v[n] / c2
            t.data = t.data - np.float32(self.lr) * m_hat / (np.sqrt(v_hat) + self.eps)
        return gnorm


# ---------------------------------------------------------------------------
# batching


def _bucket_batches(examples, batch_size: int, rng: SplitMix64 | None):
    """Group examples of equal source length into batches of at most
    batch_size, following the (optionally shuffled) example order."""
    order = list(range(len(examples)))
    if rng is not None:
        rng.shuffle(order)
    open_buckets: dict[int, list[int]] = {}
    batches: list[list[int]] = []
    for idx in order:
        n = len(examples[idx][0])
        bucket = open_buckets.setdefault(n, [])
        bucket.append(idx)
        if len(bucket) == batch_size:
            batches.append(bucket)
            open_buckets[n] = []
    for n in sorted(open_buckets):
        if open_buckets[n]:
            batches.append(open_buckets[n])
    return batches


def _pack(examples, idxs):
    src = np.stack([examples[i][0] for i in idxs])
    tgt = np.stack([examples[i][1] for i in idxs])
    b = len(idxs)
    bos_col = np.full((b, 1), BOS, dtype=np.int64)
    eos_col = np.full((b, 1), EOS, dtype=np.int64)
    y_in = np.concatenate([bos_col, tgt], axis=1)
    y_out = np.concatenate([tgt, eos_col], axis=1)
    return src, y_in, y_out


# ---------------------------------------------------------------------------
# evaluation


def teacher_forced_loss(model: Seq2SeqModel, examples, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    for idxs in _bucket_batches(examples, batch_size, None):
        src, y_in, y_out = _pack(examples, idxs)
        logits = calibrated_forward(model, model.calibration, src, y_in)
        loss = cross_entropy(logits, y_out, ignore_id=PAD)
        total += loss.item() * y_out.size
        count += y_out.size
    return total / count


def evaluate(model: Seq2SeqModel, examples, batch_size: int = 64,
             with_loss: bool = False, smooth_eps: float = 0.0) -> dict[str, float]:
    """Greedy-decode the split and score it. Pure and deterministic."""
    if not examples:
        raise ValueError("evaluate needs a nonempty split")
    max_len = min(model.cfg.n_max, max(len(t) for _, t in examples) + 1)
    preds: list[list[int] | None] = [None] * len(examples)
    for idxs in _bucket_batches(examples, batch_size, None):
        src = np.stack([examples[i][0] for i in idxs])
        latent = model.encode(src)
        if model.calibration is not None:
            latent = calibrate(model.calibration, latent)
        outs = model.greedy_decode(latent, BOS, EOS, max_len)
        for i, out in zip(idxs, outs):
            toks = list(out)
            if toks and toks[-1] == EOS:
                toks = toks[:-1]
            preds[i] = toks
    targets = [list(t) for _, t in examples]
    report = {
        "token_acc": token_accuracy(preds, targets),
        "exact_match": exact_match(preds, targets),
        "bleu4": corpus_bleu4(preds, targets, smooth_eps=smooth_eps),
    }
    if with_loss:
        report["loss"] = teacher_forced_loss(model, examples, batch_size)
    for k, v in report.items():
        if not math.isfinite(v):
            raise ValueError(f"metric {k} is non-finite")
    return report


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    log: list[list] = field(default_factory=list)  # LOG_COLUMNS rows
    steps: int = 0
    epochs_run: int = 0
    final_dev: dict[str, float] = field(default_factory=dict)
    train_losses: list[float] = field(default_factory=list)


def train(model: Seq2SeqModel, dataset: Dataset, train_cfg, seed: int | None = None,
          eval_dev: bool = True) -> TrainResult:
    """Run Adam for up to train_cfg.epochs with early stopping on dev
    exact match (patience in epochs). Updates touch only trainable
    parameters; everything else is conserved bitwise.
    """
    seed = train_cfg.seed if seed is None else seed
    order_rng = SplitMix64(derive(seed, "order"))
    drop_rng = SplitMix64(derive(seed, "dropout"))
    opt = Adam(model.named_params(), lr=train_cfg.lr)
    result = TrainResult()
    best_em = -1.0
    stale = 0
    step = 0
    for epoch in range(train_cfg.epochs):
        for idxs in _bucket_batches(dataset.train, train_cfg.batch, order_rng):
            src, y_in, y_out = _pack(dataset.train, idxs)
            opt.zero_grad()
            with Tape() as tape:
                logits = calibrated_forward(model, model.calibration, src, y_in,
                                            rng=drop_rng)
                loss = cross_entropy(logits, y_out, ignore_id=PAD)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise TrainingDivergedError(step)
            if loss.node_id is not None:  # a fully frozen model records nothing
                backward(tape, loss)
                opt.step()
            step += 1
            result.train_losses.append(loss_val)
            result.log.append([step, "train", loss_val, None, None, None])
        result.epochs_run = epoch + 1
        if eval_dev:
            report = evaluate(model, dataset.dev, with_loss=True)
            result.final_dev = report
            result.log.append([step, "dev", report["loss"], report["token_acc"],
                               report["exact_match"], report["bleu4"]])
            if report["exact_match"] > best_em:
                best_em = report["exact_match"]
                stale = 0
            else:
                stale += 1
                if stale >= train_cfg.patience:
                    break
    result.steps = step
    return result


def average_reports(reports: list[dict[str, float]]) -> dict[str, float]:
    keys = sorted(set().union(*(r.keys() for r in reports)))
    return {k: sum(r[k] for r in reports) / len(reports) for k in keys}


def multi_seed_seeds(base_seed: int, seeds_n: int) -> list[int]:
    return [base_seed + i for i in range(seeds_n)]
