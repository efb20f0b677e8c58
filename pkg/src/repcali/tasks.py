"""Deterministic synthetic sequence-to-sequence tasks.

copy (target = source), reverse, and sort (ascending). Token ids 0..3 are
reserved for pad/bos/eos/unk; payload symbols run from 4 to vocab-1.
Generation is a pure function of the TaskSpec: the same spec produces
byte-identical splits on every platform, and the three splits are
pairwise disjoint as multisets of examples.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import SplitMix64

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = 4

TASK_KINDS = ("copy", "reverse", "sort")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "copy"
    vocab: int = 16
    len_min: int = 4
    len_max: int = 8
    n_train: int = 512
    n_dev: int = 64
    n_test: int = 64
    seed: int = 7

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.vocab < RESERVED + 1:
            raise ValueError(f"task vocab must be at least {RESERVED + 1} "
                             "(pad/bos/eos/unk plus one payload symbol)")
        if not 1 <= self.len_min <= self.len_max:
            raise ValueError("need 1 <= len_min <= len_max")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ValueError("split sizes must be positive")

    def header(self, split: str) -> str:
        return (f"# kind={self.kind} vocab={self.vocab} len_min={self.len_min} "
                f"len_max={self.len_max} sizes={self.n_train}/{self.n_dev}/{self.n_test} "
                f"seed={self.seed} split={split}")


@dataclass
class Dataset:
    spec: TaskSpec
    train: list[tuple[np.ndarray, np.ndarray]]
    dev: list[tuple[np.ndarray, np.ndarray]]
    test: list[tuple[np.ndarray, np.ndarray]]

    def split(self, name: str) -> list[tuple[np.ndarray, np.ndarray]]:
        try:
            return getattr(self, name)
        except AttributeError:
            raise KeyError(f"unknown split {name!r}") from None


def target_for(kind: str, source: np.ndarray) -> np.ndarray:
    if kind == "copy":
        return source.copy()
    if kind == "reverse":
        return source[::-1].copy()
    if kind == "sort":
        return np.sort(source)
    raise ValueError(f"unknown task kind {kind!r}")


def _distinct_sources(vocab: int, len_min: int, len_max: int) -> int:
    symbols = vocab - RESERVED
    return sum(symbols ** n for n in range(len_min, len_max + 1))


def generate_task(spec: TaskSpec) -> Dataset:
    """Materialize disjoint train/dev/test splits for a task spec."""
    need = spec.n_train + spec.n_dev + spec.n_test
    capacity = _distinct_sources(spec.vocab, spec.len_min, spec.len_max)
    if need > capacity:
        raise ValueError(
            f"requested {need} examples but only {capacity} distinct sources exist")
    rng = SplitMix64(spec.seed).fork(f"task-{spec.kind}")
    seen: set[bytes] = set()
    sources: list[np.ndarray] = []
    while len(sources) < need:
        n = int(rng.integers(spec.len_min, spec.len_max + 1, (1,))[0])
        src = rng.integers(RESERVED, spec.vocab, (n,))
        key = src.tobytes()  # int64 encoding makes length part of the key
        if key in seen:
            continue
        seen.add(key)
        sources.append(src)
    examples = [(src, target_for(spec.kind, src)) for src in sources]
    train = examples[: spec.n_train]
    dev = examples[spec.n_train: spec.n_train + spec.n_dev]
    test = examples[spec.n_train + spec.n_dev:]
    return Dataset(spec=spec, train=train, dev=dev, test=test)


# ---------------------------------------------------------------------------
# persistence: one example per line, space-separated ints, TAB between
# source and target, '#' header recording the task spec


def save_split(path: Path, spec: TaskSpec, split_name: str,
               examples: list[tuple[np.ndarray, np.ndarray]]) -> None:
    lines = [spec.header(split_name)]
    for src, tgt in examples:
        lines.append(" ".join(map(str, src)) + "\t" + " ".join(map(str, tgt)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_dataset(out_dir: Path, data: Dataset) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("train", "dev", "test"):
        p = out_dir / f"{name}.txt"
        save_split(p, data.spec, name, data.split(name))
        written.append(p)
    return written


def load_split(path: Path) -> tuple[dict, list[tuple[np.ndarray, np.ndarray]]]:
    """Parse a split file; returns (header fields, examples)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing spec header line")
    fields = dict(item.split("=", 1) for item in lines[0][1:].split())
    examples = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            src_s, tgt_s = line.split("\t")
            src = np.array([int(t) for t in src_s.split()], dtype=np.int64)
            tgt = np.array([int(t) for t in tgt_s.split()], dtype=np.int64)
        except ValueError as exc:
            raise ValueError(f"{path}:{ln}: malformed example line") from exc
        examples.append((src, tgt))
    return fields, examples
