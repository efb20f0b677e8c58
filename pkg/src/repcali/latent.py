"""Latent extraction, 2-D projection and compactness statistics.

Pools encoder latents (optionally calibrated) to one vector per example,
projects with PCA or t-SNE, quantifies class compactness, and writes
plot artifacts: a delimited coordinate table plus a self-contained SVG
scatter. Everything is deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import CalibrationBlock, calibrate
from .rng import SplitMix64

POOLING_MODES = ("mean", "first")

_PALETTE = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
            "#aa3377", "#bbbbbb", "#000000", "#e07b39", "#7b68ae"]


@dataclass
class LatentSet:
    matrix: np.ndarray  # [N, d_h]
    labels: np.ndarray  # [N] integer class tags
    provenance: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 2:
            raise ValueError("latent matrix must be [N >= 2, d]")
        if self.labels.shape != (self.matrix.shape[0],):
            raise ValueError("one label per latent row required")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("latents must be finite")


@dataclass
class Projection2D:
    coords: np.ndarray  # [N, k]
    method: str
    diagnostics: dict[str, float | list[float]] = field(default_factory=dict)


def extract_latents(model, block: CalibrationBlock | None, examples,
                    pooling: str = "mean", provenance: str = "") -> LatentSet:
    """Pooled encoder latents for a split; labels are source lengths."""
    if pooling not in POOLING_MODES:
        raise ValueError(f"pooling must be one of {POOLING_MODES}")
    if not examples:
        raise ValueError("cannot extract latents from an empty split")
    by_len: dict[int, list[int]] = {}
    for i, (src, _) in enumerate(examples):
        by_len.setdefault(len(src), []).append(i)
    rows_out = [None] * len(examples)
    for n in sorted(by_len):
        idxs = by_len[n]
        src = np.stack([examples[i][0] for i in idxs])
        latent = model.encode(src)
        if block is not None:
            latent = calibrate(block, latent)
        if pooling == "mean":
            pooled = latent.data.mean(axis=1)
        else:
            pooled = latent.data[:, 0, :]
        for j, i in enumerate(idxs):
            rows_out[i] = pooled[j]
    matrix = np.stack(rows_out)
    labels = np.array([len(src) for src, _ in examples], dtype=np.int64)
    return LatentSet(matrix=matrix, labels=labels, provenance=provenance)


# ---------------------------------------------------------------------------
# PCA


def pca_project(latents: LatentSet, k: int = 2) -> Projection2D:
    """Center, eigendecompose the covariance, project on the top-k axes.

    Component signs are fixed (largest-magnitude coordinate positive) so
    the projection is invariant to input row order up to nothing at all.
    """
    x = latents.matrix
    n = x.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    tol = max(float(eigvals[0]), 0.0) * 1e-10 + 1e-30
    rank = int((eigvals > tol).sum())
    if rank < k:
        raise ValueError(f"rank-deficient input: achieved rank {rank} < k={k}")
    comps = eigvecs[:, :k].T.copy()
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    coords = centered @ comps.T
    total = float(eigvals.sum())
    evr = [float(v / total) for v in eigvals[:k]]
    return Projection2D(coords=coords, method="pca",
                        diagnostics={"explained_variance": evr})


# ---------------------------------------------------------------------------
# t-SNE


def _entropy_row(dist_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    p = np.exp(-dist_row * beta)
    sum_p = p.sum()
    if sum_p <= 0:
        return 0.0, np.zeros_like(p)
    h = math.log(sum_p) + beta * float((dist_row * p).sum()) / sum_p
    return h, p / sum_p


def _conditional_affinities(dist: np.ndarray, perplexity: float,
                            iters: int = 50, tol: float = 1e-5) -> np.ndarray:
    """Per-point Gaussian bandwidths found by binary search on entropy."""
    n = dist.shape[0]
    target = math.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        row = np.delete(dist[i], i)
        beta, beta_min, beta_max = 1.0, -math.inf, math.inf
        h, this_p = _entropy_row(row, beta)
        for _ in range(iters):
            if abs(h - target) <= tol:
                break
            if h > target:
                beta_min = beta
                beta = beta * 2.0 if beta_max == math.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -math.inf else (beta + beta_min) / 2.0
            h, this_p = _entropy_row(row, beta)
        p[i, np.arange(n) != i] = this_p
    return p


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    return float((p * np.log(p / q)).sum())


def tsne_project(latents: LatentSet, perplexity: float = 30.0, iters: int = 1000,
                 seed: int = 0) -> Projection2D:
    """Standard t-SNE to 2-D: perplexity-calibrated Gaussian affinities,
    Student-t low-dimensional kernel, momentum gradient descent with 12x
    early exaggeration for the first 250 iterations.
    """
    x = latents.matrix
    n = x.shape[0]
    if n > 5000:
        raise ValueError("exact t-SNE is limited to 5000 points")
    if not 5 <= perplexity <= (n - 1) / 3:
        raise ValueError(
            f"perplexity {perplexity} infeasible for N={n}; need 5 <= p <= (N-1)/3")
    sq = (x * x).sum(axis=1)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    cond = _conditional_affinities(dist, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    exaggeration_iters = min(250, iters)
    lr = max(50.0, n / 12.0)
    y = SplitMix64(seed).normal((n, 2), std=1e-4)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_post_exaggeration = None
    kl_final = None
    for it in range(iters):
        p_eff = p * 12.0 if it < exaggeration_iters else p
        sq_y = (y * y).sum(axis=1)
        num = 1.0 / (1.0 + np.maximum(sq_y[:, None] + sq_y[None, :] - 2.0 * (y @ y.T), 0.0))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        w = (p_eff - q) * num
        grad = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)
        momentum = 0.5 if it < 250 else 0.8
        flipped = np.sign(grad) != np.sign(velocity)
        gains = np.where(flipped, gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - lr * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if it == exaggeration_iters:
            kl_post_exaggeration = _kl(p, q)
    sq_y = (y * y).sum(axis=1)
    num = 1.0 / (1.0 + np.maximum(sq_y[:, None] + sq_y[None, :] - 2.0 * (y @ y.T), 0.0))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    kl_final = _kl(p, q)
    if kl_post_exaggeration is None:
        kl_post_exaggeration = kl_final
    return Projection2D(coords=y, method="tsne",
                        diagnostics={"kl_final": kl_final,
                                     "kl_post_exaggeration": kl_post_exaggeration,
                                     "perplexity": perplexity,
                                     "affinity_sum": float(p.sum())})


# ---------------------------------------------------------------------------
# compactness


@dataclass
class CompactnessStats:
    mean_intra_class_distance: float
    mean_inter_centroid_distance: float
    silhouette: float


def compactness_stats(latents: LatentSet, labels: np.ndarray | None = None) -> CompactnessStats:
    """Euclidean class-compactness statistics over the full latent set."""
    x = latents.matrix
    labels = latents.labels if labels is None else np.asarray(labels)
    classes = sorted(set(int(v) for v in labels))
    if len(classes) < 2:
        raise ValueError("compactness needs at least two classes")
    members = {c: np.where(labels == c)[0] for c in classes}
    for c, idx in members.items():
        if len(idx) < 2:
            raise ValueError(f"class {c} is degenerate (fewer than 2 members)")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))

    intra_sum, intra_count = 0.0, 0
    for c, idx in members.items():
        block = dist[np.ix_(idx, idx)]
        upper = block[np.triu_indices(len(idx), k=1)]
        intra_sum += float(upper.sum())
        intra_count += upper.size
    mean_intra = intra_sum / intra_count

    centroids = np.stack([x[members[c]].mean(axis=0) for c in classes])
    cd = centroids[:, None, :] - centroids[None, :, :]
    cdist = np.sqrt((cd * cd).sum(axis=-1))
    mean_inter = float(cdist[np.triu_indices(len(classes), k=1)].mean())

    sil_total = 0.0
    for i in range(x.shape[0]):
        own = members[int(labels[i])]
        a = float(dist[i, own[own != i]].mean())
        b = min(float(dist[i, members[c]].mean())
                for c in classes if c != int(labels[i]))
        denom = max(a, b)
        sil_total += 0.0 if denom == 0 else (b - a) / denom
    silhouette = sil_total / x.shape[0]
    return CompactnessStats(mean_intra_class_distance=mean_intra,
                            mean_inter_centroid_distance=mean_inter,
                            silhouette=silhouette)


# ---------------------------------------------------------------------------
# plot artifacts


def emit_plot(projection: Projection2D, labels: np.ndarray, base_path: Path) -> list[Path]:
    """Write `<base>.csv` (x,y,label) and `<base>.svg` (scatter, legend,
    fixed palette by sorted label order, no axes). Returns written paths."""
    coords = np.asarray(projection.coords)
    labels = np.asarray(labels)
    if coords.size == 0:
        raise ValueError("cannot plot an empty projection")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("emit_plot expects [N, 2] coordinates")
    if labels.shape[0] != coords.shape[0]:
        raise ValueError("one label per point required")
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    svg_path = base.with_suffix(".svg")

    lines = ["x,y,label"]
    for (px, py), lab in zip(coords, labels):
        lines.append(f"{px:.6f},{py:.6f},{lab}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    classes = sorted(set(labels.tolist()))
    color = {c: _PALETTE[i % len(_PALETTE)] for i, c in enumerate(classes)}
    width, height, margin = 640, 480, 40
    x0, x1 = float(coords[:, 0].min()), float(coords[:, 0].max())
    y0, y1 = float(coords[:, 1].min()), float(coords[:, 1].max())
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0

    def sx(v):
        return margin + (v - x0) / span_x * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y0) / span_y * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin}" y="20" font-size="13" font-family="sans-serif">'
        f'{projection.method} projection</text>',
    ]
    for (px, py), lab in zip(coords, labels):
        parts.append(f'<circle cx="{sx(px):.2f}" cy="{sy(py):.2f}" r="3" '
                     f'fill="{color[lab]}" fill-opacity="0.8"/>')
    for i, c in enumerate(classes):
        ly = margin + 16 * i
        parts.append(f'<rect x="{width - margin - 70}" y="{ly - 9}" width="10" '
                     f'height="10" fill="{color[c]}"/>')
        parts.append(f'<text x="{width - margin - 55}" y="{ly}" font-size="11" '
                     f'font-family="sans-serif">{c}</text>')
    parts.append("</svg>")
    svg_path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return [csv_path, svg_path]


def read_plot_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "x,y,label":
        raise ValueError(f"{path}: not a plot coordinate table")
    xs, labs = [], []
    for line in lines[1:]:
        px, py, lab = line.split(",")
        xs.append((float(px), float(py)))
        labs.append(int(lab))
    return np.array(xs), np.array(labs)


# ---------------------------------------------------------------------------
# persistence through the checkpoint container


def save_latents(path: Path, latents: LatentSet) -> None:
    from .checkpoint import save_tensors

    named = {
        "latents/matrix": latents.matrix.astype(np.float32),
        "latents/labels": latents.labels.astype(np.float32),
    }
    save_tensors(path, named, config_text=latents.provenance)


def load_latents(path: Path) -> LatentSet:
    from .checkpoint import load_tensors

    ckpt = load_tensors(path)
    try:
        matrix = ckpt.tensors["latents/matrix"]
        labels = ckpt.tensors["latents/labels"]
    except KeyError as exc:
        raise ValueError(f"{path}: not a latent container") from exc
    return LatentSet(matrix=matrix.astype(np.float64),
                     labels=labels.astype(np.int64),
                     provenance=ckpt.config_text)
