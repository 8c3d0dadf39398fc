"""Experiment orchestration: configs, training runs, checkpoints, metrics.

``train`` wires the data pipelines into the estimator and returns the
per-epoch history plus a checkpoint of the best-scoring epoch.  Checkpoints
use a versioned binary layout (magic, version, canonical-JSON header,
float64 tensor directory, trailing SHA-256) so a save/load/save round trip
is byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as datamod
from .bptt import backward_sequence, finite_difference_grads, forward_sequence, max_relative_error
from .cell import CellDims, CellParams, CellState, GateVariant, init_params, param_count
from .errors import ContractViolationError, CorruptionError, FormatError
from .estimator import MetricsRecord, SequenceLstmClassifier, forward_scores, model_tensors
from .layers import DenseHead, EmbeddingTable, dense_backward, dense_forward, sigmoid_xent, softmax_xent

__all__ = [
    "ExperimentConfig",
    "MetricsRecord",
    "Checkpoint",
    "train",
    "evaluate",
    "load_datasets",
    "save_checkpoint",
    "load_checkpoint",
    "emit_metrics_csv",
    "emit_curves_svg",
    "cli_params_table",
    "gradcheck",
]

CHECKPOINT_MAGIC = b"SLIMLSTM"
CHECKPOINT_VERSION = 1

_TASK_DEFAULTS = {
    "pixelwise": dict(hidden=100, max_epochs=100),
    "rowwise": dict(hidden=50, max_epochs=200),
    "tokens": dict(hidden=128, max_epochs=100, embedding_dim=128, maxlen=80,
                   vocab_limit=20000, signal_dropout=0.2, weight_row_dropout=0.2),
}


@dataclass
class ExperimentConfig:
    variant: str = "standard"
    task: str = "rowwise"  # pixelwise | rowwise | tokens
    hidden: int = 50
    eta0: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 25
    seed: int = 0
    signal_dropout: float = 0.0
    weight_row_dropout: float = 0.0
    forget_bias: float = 0.0
    embedding_dim: int = 128
    vocab_limit: int = 20000
    maxlen: int = 80
    train_size: int = 0  # 0 = full
    test_size: int = 0
    out_dir: str = "."
    record_timing: bool = True
    # data locations
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_file: str = ""
    test_file: str = ""

    @classmethod
    def for_task(cls, task: str, **overrides) -> "ExperimentConfig":
        """Config with the experiment defaults for one task."""
        if task not in _TASK_DEFAULTS:
            raise ContractViolationError(f"unknown task {task!r}")
        kw = dict(task=task, **_TASK_DEFAULTS[task])
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ContractViolationError(f"unknown config fields: {sorted(unknown)}")
        if "task" in d:
            base = dict(_TASK_DEFAULTS[d["task"]]) if d["task"] in _TASK_DEFAULTS else {}
            base.update(d)
            d = base
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, assignments: list[str]) -> "ExperimentConfig":
        """Apply ``key=value`` strings with field-typed coercion."""
        d = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ContractViolationError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            if key not in d:
                raise ContractViolationError(f"unknown config field {key!r}")
            current = d[key]
            if isinstance(current, bool):
                d[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                d[key] = int(value)
            elif isinstance(current, float):
                d[key] = float(value)
            else:
                d[key] = value
        return ExperimentConfig(**d)


@dataclass
class Checkpoint:
    config: dict
    meta: dict  # variant, m, n, head_units, input_kind, classes, best_epoch, rho, eps
    tensors: dict[str, np.ndarray]
    rms: dict[str, np.ndarray]
    version: int = CHECKPOINT_VERSION


def _subset(dataset: datamod.SequenceDataset, size: int) -> datamod.SequenceDataset:
    if size and size < len(dataset):
        return datamod.SequenceDataset(dataset.inputs[:size], dataset.labels[:size],
                                       dataset.kind, dataset.num_classes)
    return dataset


def load_datasets(config: ExperimentConfig):
    """Build (train, test) SequenceDatasets for the configured task."""
    if config.task in ("pixelwise", "rowwise"):
        train_raw = datamod.load_idx(config.train_images, config.train_labels)
        test_raw = datamod.load_idx(config.test_images, config.test_labels)
        sequencer = datamod.pixelwise if config.task == "pixelwise" else datamod.rowwise
        train_imgs = train_raw.images[:config.train_size] if config.train_size else train_raw.images
        train_lbls = train_raw.labels[:config.train_size] if config.train_size else train_raw.labels
        test_imgs = test_raw.images[:config.test_size] if config.test_size else test_raw.images
        test_lbls = test_raw.labels[:config.test_size] if config.test_size else test_raw.labels
        stats = datamod.Standardizer.fit(train_imgs)
        train = sequencer(datamod.standardize(train_imgs, stats), train_lbls)
        test = sequencer(datamod.standardize(test_imgs, stats), test_lbls)
        return train, test
    if config.task == "tokens":
        train = _subset(datamod.load_token_dataset(config.train_file,
                                                   config.vocab_limit, config.maxlen),
                        config.train_size)
        test = _subset(datamod.load_token_dataset(config.test_file,
                                                  config.vocab_limit, config.maxlen),
                       config.test_size)
        return train, test
    raise ContractViolationError(f"unknown task {config.task!r}")


def _make_estimator(config: ExperimentConfig) -> SequenceLstmClassifier:
    return SequenceLstmClassifier(
        variant=config.variant,
        hidden_size=config.hidden,
        eta0=config.eta0,
        batch_size=config.batch_size,
        max_epochs=config.max_epochs,
        patience=config.patience,
        embedding_dim=config.embedding_dim if config.task == "tokens" else None,
        vocab_size=config.vocab_limit if config.task == "tokens" else None,
        signal_dropout=config.signal_dropout,
        weight_row_dropout=config.weight_row_dropout,
        forget_bias=config.forget_bias,
        random_state=config.seed,
        record_timing=config.record_timing,
    )


def train(config: ExperimentConfig):
    """Run one experiment; returns (history, best-epoch Checkpoint)."""
    train_ds, test_ds = load_datasets(config)
    est = _make_estimator(config)
    est.fit(train_ds.inputs, train_ds.labels,
            eval_set=(test_ds.inputs, test_ds.labels))
    meta = {
        "variant": GateVariant.coerce(config.variant).value,
        "m": est.cell_.dims.m,
        "n": est.cell_.dims.n,
        "head_units": est.head_.w.shape[0],
        "input_kind": est.input_kind_,
        "classes": [int(c) for c in est.classes_],
        "best_epoch": est.best_epoch_,
        "rho": est.rms_state_.rho,
        "eps": est.rms_state_.eps,
    }
    tensors = {k: v.copy() for k, v in
               model_tensors(est.cell_, est.head_, est.embedding_).items()}
    rms = {k: v.copy() for k, v in est.rms_state_.acc.items()}
    cp = Checkpoint(config=config.to_dict(), meta=meta, tensors=tensors, rms=rms)
    return est.history_, cp


def _rebuild_model(cp: Checkpoint):
    variant = GateVariant.coerce(cp.meta["variant"])
    dims = CellDims(m=int(cp.meta["m"]), n=int(cp.meta["n"]))
    cell = CellParams(variant, dims)
    for name, value in cp.tensors.items():
        if name.startswith("cell."):
            setattr(cell, name[len("cell."):], value.copy())
    head = DenseHead(w=cp.tensors["head.w"].copy(), b=cp.tensors["head.b"].copy())
    embedding = (EmbeddingTable(table=cp.tensors["emb.table"].copy())
                 if "emb.table" in cp.tensors else None)
    return cell, head, embedding


def evaluate(cp: Checkpoint, dataset: datamod.SequenceDataset):
    """Pure forward evaluation of a checkpoint; returns (loss, accuracy).

    Argmax ties break toward the lowest class index; the binary head
    predicts class 1 only on a strictly positive logit.
    """
    cell, head, embedding = _rebuild_model(cp)
    if (dataset.kind == "tokens") != (embedding is not None):
        raise ContractViolationError(
            f"checkpoint expects {cp.meta['input_kind']!r} input, dataset is {dataset.kind!r}"
        )
    scores = forward_scores(cell, head, embedding, dataset.inputs)
    labels = dataset.labels
    if scores.shape[0] == 1:
        loss, _ = sigmoid_xent(scores, labels)
        preds = (scores[0] > 0.0).astype(np.int64)
    else:
        loss, _ = softmax_xent(scores, labels)
        preds = np.argmax(scores, axis=0)
    return loss, float(np.mean(preds == labels))


# -- checkpoint serialization ------------------------------------------------

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(cp: Checkpoint, path) -> None:
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", cp.version)
    header = _canonical_json({"config": cp.config, "meta": cp.meta})
    body += struct.pack("<I", len(header))
    body += header
    entries = [(name, arr) for name, arr in cp.tensors.items()]
    entries += [(f"rms/{name}", arr) for name, arr in cp.rms.items()]
    body += struct.pack("<I", len(entries))
    for name, arr in entries:
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded))
        body += encoded
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        body += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            body += struct.pack("<I", d)
        body += arr.astype("<f8").tobytes()
    body += hashlib.sha256(bytes(body)).digest()
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"checkpoint version {version} not supported (expected {CHECKPOINT_VERSION})"
        )
    if len(raw) < pos + 32:
        raise CorruptionError("checkpoint truncated")
    digest = raw[-32:]
    if hashlib.sha256(raw[:-32]).digest() != digest:
        raise CorruptionError("checkpoint checksum mismatch")

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw) - 32:
            raise CorruptionError("checkpoint truncated")
        values = struct.unpack_from(fmt, raw, pos)
        pos += size
        return values

    (header_len,) = take("<I")
    header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
    pos += header_len
    (count,) = take("<I")
    tensors: dict[str, np.ndarray] = {}
    rms: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = tuple(take("<" + "I" * ndim)) if ndim else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if ndim else 8
        if pos + nbytes > len(raw) - 32:
            raise CorruptionError("checkpoint truncated")
        arr = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
        pos += nbytes
        if name.startswith("rms/"):
            rms[name[4:]] = arr
        else:
            tensors[name] = arr
    return Checkpoint(config=header["config"], meta=header["meta"],
                      tensors=tensors, rms=rms, version=version)


# -- metrics emission ----------------------------------------------------------

CSV_HEADER = "epoch,train_loss,train_acc,test_acc,lr,seconds"


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def emit_metrics_csv(history: list[MetricsRecord], path) -> None:
    lines = [CSV_HEADER]
    for r in history:
        lines.append(",".join([str(r.epoch), _fmt(r.train_loss), _fmt(r.train_acc),
                               _fmt(r.test_acc), _fmt(r.lr), _fmt(r.seconds)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_curves_svg(history: list[MetricsRecord], path) -> None:
    """Accuracy-vs-epoch SVG with one train and one test polyline."""
    if not history:
        raise ContractViolationError("cannot plot curves for an empty history")
    width, height = 640, 480
    left, right, top, bottom = 60, 20, 20, 50
    max_epoch = max(r.epoch for r in history)
    span = max(max_epoch, 1)

    def sx(epoch):
        return left + (width - left - right) * epoch / span

    def sy(acc):
        return height - bottom - (height - top - bottom) * acc

    def points(values):
        return " ".join(f"{sx(r.epoch):.2f},{sy(v):.2f}"
                        for r, v in zip(history, values) if np.isfinite(v))

    train_pts = points([r.train_acc for r in history])
    test_pts = points([r.test_acc for r in history])
    svg = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">
  <rect width="{width}" height="{height}" fill="white"/>
  <line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>
  <line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>
  <text x="{(left + width - right) / 2}" y="{height - 12}" text-anchor="middle">epoch</text>
  <text x="18" y="{(top + height - bottom) / 2}" text-anchor="middle" transform="rotate(-90 18 {(top + height - bottom) / 2})">accuracy</text>
  <text x="{left}" y="{height - bottom + 18}" text-anchor="middle">0</text>
  <text x="{width - right}" y="{height - bottom + 18}" text-anchor="middle">{max_epoch}</text>
  <text x="{left - 8}" y="{sy(0.0) + 4}" text-anchor="end">0.0</text>
  <text x="{left - 8}" y="{sy(1.0) + 4}" text-anchor="end">1.0</text>
  <polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{train_pts}"/>
  <polyline fill="none" stroke="crimson" stroke-width="1.5" points="{test_pts}"/>
  <text x="{width - right - 150}" y="{top + 16}" fill="steelblue">train accuracy</text>
  <text x="{width - right - 150}" y="{top + 34}" fill="crimson">test accuracy</text>
</svg>
"""
    Path(path).write_text(svg, encoding="utf-8")


# -- CLI-facing reports --------------------------------------------------------

PARAM_TABLE_SETTINGS = ((1, 100), (28, 50), (128, 128))


def cli_params_table() -> str:
    """Parameter counts of the LSTM layer for the three experiment setups."""
    lines = [f"{'variant':<10}" + "".join(f"{f'm={m},n={n}':>16}" for m, n in PARAM_TABLE_SETTINGS)]
    for variant in GateVariant:
        counts = [param_count(variant, CellDims(m, n)) for m, n in PARAM_TABLE_SETTINGS]
        lines.append(f"{variant.value:<10}" + "".join(f"{c:>16,}" for c in counts))
    return "\n".join(lines)


def gradcheck(variant, m: int, n: int, seq_len: int, seed: int,
              corrupt: bool = False, tolerance: float = 1e-6):
    """Compare BPTT gradients against central finite differences.

    Builds a seeded random instance (cell + dense softmax head over three
    classes, batch of two) and returns (max relative error, passed).  The
    ``corrupt`` hook perturbs one analytic gradient entry as a negative
    control.
    """
    variant = GateVariant.coerce(variant)
    dims = CellDims(m=m, n=n)
    rng = np.random.default_rng(seed)
    params = init_params(variant, dims, rng)
    head = DenseHead.init(n, 3, rng)
    batch = 2
    inputs = rng.standard_normal((seq_len, m, batch))
    labels = rng.integers(0, 3, batch)

    def loss_fn(p: CellParams) -> float:
        state, _ = forward_sequence(p, inputs, CellState.zeros(n, batch))
        loss, _ = softmax_xent(dense_forward(head, state.h), labels)
        return loss

    state, cache = forward_sequence(params, inputs, CellState.zeros(n, batch))
    _, d_logits = softmax_xent(dense_forward(head, state.h), labels)
    _, _, dh = dense_backward(head, state.h, d_logits)
    analytic, _ = backward_sequence(params, cache, dh)
    if corrupt:
        first = next(analytic.named_tensors())[1]
        first.ravel()[0] += 1.0
    numeric = finite_difference_grads(loss_fn, params)
    err = max_relative_error(analytic, numeric)
    return err, err <= tolerance
