"""Dataset ingestion and sequencing.

Two pipelines feed the cell:

* digit images in the big-endian IDX container, standardized with global
  training statistics and unrolled either pixel-wise (T=784, m=1) or
  row-wise (T=28, m=28);
* token sequences in a plain-text line format ``<label> <id> <id> ...``
  where ids are frequency ranks (0 = padding, 1 = out-of-vocabulary,
  2 = most frequent word), padded/truncated to a fixed length.

``convert_text`` builds the token file from raw labeled text.
"""

from __future__ import annotations

import re
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConsistencyError,
    ContractViolationError,
    DegenerateDataError,
    FormatError,
    TruncatedDataError,
)

__all__ = [
    "IMAGES_MAGIC",
    "LABELS_MAGIC",
    "LabeledImages",
    "SequenceDataset",
    "Standardizer",
    "load_idx",
    "write_idx",
    "standardize",
    "pixelwise",
    "rowwise",
    "pad_truncate",
    "load_token_dataset",
    "batch_iter",
    "tokenize",
    "convert_text",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

PAD_ID = 0
OOV_ID = 1
FIRST_WORD_ID = 2


@dataclass
class LabeledImages:
    images: np.ndarray  # (count, H, W) uint8
    labels: np.ndarray  # (count,) uint8

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )


@dataclass
class SequenceDataset:
    """Uniform container of (sequence, label) pairs.

    ``inputs`` is (N, T, m) float64 for kind "dense" or (N, T) int64 token
    ids for kind "tokens".
    """
    inputs: np.ndarray
    labels: np.ndarray
    kind: str  # "dense" | "tokens"
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def seq_len(self) -> int:
        return self.inputs.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[2] if self.kind == "dense" else 1


def _read_exact(f, nbytes: int, what: str) -> bytes:
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise TruncatedDataError(f"{what}: expected {nbytes} bytes, got {len(data)}")
    return data


def _read_be32(f, what: str) -> int:
    return struct.unpack(">i", _read_exact(f, 4, what))[0]


def load_idx(images_path, labels_path) -> LabeledImages:
    """Parse a big-endian IDX image/label file pair."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, "image magic")
        if magic != IMAGES_MAGIC:
            raise FormatError(
                f"bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
            )
        count = _read_be32(f, "image count")
        rows = _read_be32(f, "row count")
        cols = _read_be32(f, "column count")
        pixels = _read_exact(f, count * rows * cols, "image pixels")
        images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows, cols)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, "label magic")
        if magic != LABELS_MAGIC:
            raise FormatError(
                f"bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
            )
        label_count = _read_be32(f, "label count")
        labels = np.frombuffer(_read_exact(f, label_count, "labels"), dtype=np.uint8)
    return LabeledImages(images=images, labels=labels)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of load_idx; also used to materialize fixture datasets."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGES_MAGIC, count, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


@dataclass(frozen=True)
class Standardizer:
    """Global scalar mean/std over all training pixels."""
    mean: float
    std: float

    @classmethod
    def fit(cls, images: np.ndarray) -> "Standardizer":
        pixels = np.asarray(images, dtype=np.float64)
        mean = float(pixels.mean())
        std = float(pixels.std())
        if std == 0.0:
            raise DegenerateDataError("constant pixel data: zero variance")
        return cls(mean=mean, std=std)


def standardize(images: np.ndarray, stats: Standardizer) -> np.ndarray:
    """(x - mean) / std with training statistics; test data reuses them."""
    if stats.std == 0.0:
        raise DegenerateDataError("standardizer has zero std")
    return (np.asarray(images, dtype=np.float64) - stats.mean) / stats.std


def pixelwise(images: np.ndarray, labels: np.ndarray) -> SequenceDataset:
    """Scan each HxW image row by row into a (H*W, 1) scalar sequence."""
    images = np.asarray(images, dtype=np.float64)
    count, rows, cols = images.shape
    return SequenceDataset(
        inputs=images.reshape(count, rows * cols, 1),
        labels=np.asarray(labels, dtype=np.int64),
        kind="dense",
        num_classes=10,
    )


def rowwise(images: np.ndarray, labels: np.ndarray) -> SequenceDataset:
    """Treat each image row as one input vector: (H, W) sequences."""
    images = np.asarray(images, dtype=np.float64)
    return SequenceDataset(
        inputs=images.copy(),
        labels=np.asarray(labels, dtype=np.int64),
        kind="dense",
        num_classes=10,
    )


def pad_truncate(tokens, maxlen: int) -> list[int]:
    """Fix a token list to exactly ``maxlen``: keep the trailing maxlen
    tokens when too long, append padding id 0 when too short."""
    if maxlen < 1:
        raise ContractViolationError(f"maxlen must be >= 1, got {maxlen}")
    tokens = list(tokens)
    if len(tokens) > maxlen:
        return tokens[-maxlen:]
    return tokens + [PAD_ID] * (maxlen - len(tokens))


def load_token_dataset(path, vocab_limit: int, maxlen: int) -> SequenceDataset:
    """Read the documented line format and build a fixed-length dataset.

    Ids at or above ``vocab_limit`` are remapped to the reserved OOV id 1.
    """
    sequences = []
    labels = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                values = [int(p) for p in parts]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer token") from None
            label, ids = values[0], values[1:]
            if label not in (0, 1):
                raise FormatError(f"{path}:{lineno}: label must be 0 or 1, got {label}")
            if any(t < 0 for t in ids):
                raise FormatError(f"{path}:{lineno}: negative token id")
            ids = [t if t < vocab_limit else OOV_ID for t in ids]
            sequences.append(pad_truncate(ids, maxlen))
            labels.append(label)
    return SequenceDataset(
        inputs=np.asarray(sequences, dtype=np.int64).reshape(len(labels), maxlen),
        labels=np.asarray(labels, dtype=np.int64),
        kind="tokens",
        num_classes=2,
    )


def batch_iter(dataset: SequenceDataset, batch_size: int, seed: int, epoch: int):
    """Yield (inputs, labels) mini-batches in a per-epoch shuffled order.

    The permutation is a pure function of (seed, epoch); the final short
    batch is retained.
    """
    if batch_size < 1:
        raise ContractViolationError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(epoch)])
    perm = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = perm[start:start + batch_size]
        yield dataset.inputs[idx], dataset.labels[idx]


_TOKEN_RE = re.compile(r"[^a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def convert_text(in_path, out_path, vocab_limit: int) -> int:
    """Convert raw labeled text to the token line format.

    Input: one sample per line, ``<label><TAB><text>`` with label 0 or 1.
    A frequency-ranked vocabulary is built over the whole file (rank 2 =
    most frequent; ties broken alphabetically); words ranked at or beyond
    ``vocab_limit`` are written as the OOV id 1.  Returns the number of
    samples written.
    """
    samples = []
    counts: Counter = Counter()
    with open(in_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise FormatError(f"{in_path}:{lineno}: expected '<label>\\t<text>'")
            label_str, text = line.split("\t", 1)
            if label_str not in ("0", "1"):
                raise FormatError(f"{in_path}:{lineno}: label must be 0 or 1")
            tokens = tokenize(text)
            counts.update(tokens)
            samples.append((int(label_str), tokens))

    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    word_id = {
        word: FIRST_WORD_ID + rank
        for rank, (word, _) in enumerate(ranked)
        if FIRST_WORD_ID + rank < vocab_limit
    }
    with open(out_path, "w", encoding="utf-8") as f:
        for label, tokens in samples:
            ids = [word_id.get(t, OOV_ID) for t in tokens]
            f.write(" ".join([str(label)] + [str(i) for i in ids]) + "\n")
    return len(samples)
