"""Non-recurrent pieces: embedding lookup, the two dropout schemes, the
dense classifier head, and numerically stable losses.

Dropout is inverted (survivors scaled by 1/(1-rate) at train time) so that
evaluation is a plain unmodified forward pass.  Row dropout over the cell's
weight matrices samples one mask per matrix per mini-batch, held fixed for
every timestep of that batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bptt import CellGrads
from .cell import CellParams
from .errors import ContractViolationError, DimensionError, OutOfVocabularyError
from .linalg import _gemm_kernel, map_sigmoid

__all__ = [
    "EmbeddingTable",
    "DenseHead",
    "DropoutSpec",
    "embed",
    "embed_batch",
    "embedding_grad",
    "signal_dropout",
    "weight_row_dropout",
    "apply_row_masks",
    "dense_forward",
    "dense_backward",
    "softmax_xent",
    "sigmoid_xent",
]


def _check_rate(rate: float) -> float:
    rate = float(rate)
    if not (0.0 <= rate < 1.0):
        raise ContractViolationError(f"dropout rate must be in [0, 1), got {rate}")
    return rate


@dataclass(frozen=True)
class DropoutSpec:
    signal_rate: float = 0.0
    weight_row_rate: float = 0.0

    def __post_init__(self):
        _check_rate(self.signal_rate)
        _check_rate(self.weight_row_rate)


@dataclass
class EmbeddingTable:
    table: np.ndarray  # (V, d); row 0 is the padding row, kept at zero

    @classmethod
    def init(cls, vocab_size: int, dim: int, seed) -> "EmbeddingTable":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        table = rng.uniform(-0.05, 0.05, (vocab_size, dim))
        table[0] = 0.0
        return cls(table=table)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def _check_ids(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise OutOfVocabularyError(
            f"token ids must lie in [0, {vocab_size}), got range "
            f"[{ids.min()}, {ids.max()}]"
        )
    return ids


def embed(table: EmbeddingTable, indices) -> np.ndarray:
    """Row lookups for one sequence of token ids; returns (T, d)."""
    ids = _check_ids(indices, table.vocab_size)
    return table.table[ids]


def embed_batch(table: EmbeddingTable, ids) -> np.ndarray:
    """Batched lookup: ids (B, T) -> activations (T, d, B) ready for the cell."""
    ids = _check_ids(ids, table.vocab_size)
    return np.ascontiguousarray(table.table[ids].transpose(1, 2, 0))


def embedding_grad(table: EmbeddingTable, ids, d_xs) -> np.ndarray:
    """Scatter per-timestep input gradients (d, B) back onto table rows.

    Row 0 (padding) never receives gradient.
    """
    ids = np.asarray(ids)
    grad = np.zeros_like(table.table)
    for t, dx in enumerate(d_xs):
        np.add.at(grad, ids[:, t], dx.T)
    grad[0] = 0.0
    return grad


def signal_dropout(x, rate: float, rng: np.random.Generator, training: bool = True):
    """Inverted elementwise dropout.

    Returns (output, mask) where mask already carries the 1/(1-rate)
    survivor scaling; in evaluation mode the input passes through untouched
    and the mask is None.
    """
    rate = _check_rate(rate)
    x = np.asarray(x, dtype=np.float64)
    if not training:
        return x, None
    if rate == 0.0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def weight_row_dropout(params: CellParams, rate: float, rng: np.random.Generator):
    """Row dropout over every present W and U matrix of the cell.

    One Bernoulli row mask per matrix, sampled here and meant to be held
    fixed for a whole mini-batch.  Returns (masked parameter copy, masks);
    masks map tensor name -> (n, 1) multiplier (0 or 1/(1-rate)).  Biases
    are never masked.
    """
    rate = _check_rate(rate)
    if rate == 0.0:
        return params, {}
    masked = params.copy()
    masks: dict[str, np.ndarray] = {}
    for name, tensor in params.named_tensors():
        if not (name.startswith("w_") or name.startswith("u_")):
            continue
        keep = rng.random((tensor.shape[0], 1)) >= rate
        mask = keep / (1.0 - rate)
        masks[name] = mask
        setattr(masked, name, tensor * mask)
    return masked, masks


def apply_row_masks(grads: CellGrads, masks: dict) -> CellGrads:
    """Chain rule through the row masks: gradients w.r.t. the unmasked
    parameters are the masked-model gradients scaled by the same masks."""
    for name, mask in masks.items():
        g = getattr(grads, name)
        if g is not None:
            setattr(grads, name, g * mask)
    return grads


@dataclass
class DenseHead:
    w: np.ndarray  # (K, n)
    b: np.ndarray  # (K,)

    @classmethod
    def init(cls, n_in: int, n_out: int, seed) -> "DenseHead":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (n_in + n_out))
        return cls(w=rng.uniform(-limit, limit, (n_out, n_in)), b=np.zeros(n_out))


def dense_forward(head: DenseHead, h) -> np.ndarray:
    """logits = W h + b for h of shape (n, B)."""
    h = np.ascontiguousarray(h, dtype=np.float64)
    if h.ndim == 1:
        h = h.reshape(-1, 1)
    if h.shape[0] != head.w.shape[1]:
        raise DimensionError(f"dense head expects ({head.w.shape[1]}, B), got {h.shape}")
    logits = np.zeros((head.w.shape[0], h.shape[1]))
    _gemm_kernel(head.w, h, logits)
    logits += head.b[:, None]
    return logits


def dense_backward(head: DenseHead, h, d_logits):
    """Returns (dW, db, d_h) for upstream gradient d_logits of shape (K, B)."""
    h = np.ascontiguousarray(h, dtype=np.float64)
    d_logits = np.ascontiguousarray(d_logits, dtype=np.float64)
    dw = np.zeros_like(head.w)
    _gemm_kernel(d_logits, np.ascontiguousarray(h.T), dw)
    db = d_logits.sum(axis=1)
    dh = np.zeros_like(h)
    _gemm_kernel(np.ascontiguousarray(head.w.T), d_logits, dh)
    return dw, db, dh


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch for logits (K, B) and integer labels.

    Returns (loss, d_logits) with d_logits = (softmax - onehot) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 2:
        raise ContractViolationError(f"softmax_xent needs (K>=2, B) logits, got {logits.shape}")
    labels = np.asarray(labels)
    k, batch = logits.shape
    if labels.shape != (batch,):
        raise ContractViolationError(f"labels shape {labels.shape} != ({batch},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractViolationError(f"label out of range for {k} classes")
    shifted = logits - logits.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=0, keepdims=True)
    log_z = np.log(exp.sum(axis=0))
    cols = np.arange(batch)
    loss = float(np.mean(log_z - shifted[labels, cols]))
    d_logits = probs.copy()
    d_logits[labels, cols] -= 1.0
    d_logits /= batch
    return loss, d_logits


def sigmoid_xent(logits, labels):
    """Stable binary cross-entropy on logits: max(z,0) - z y + log(1 + e^-|z|).

    logits may be (B,) or (1, B); labels are 0/1.  Returns (loss, d_logits)
    with d_logits shaped like the input and equal to (sigmoid(z) - y) / B.
    """
    z = np.asarray(logits, dtype=np.float64)
    shape = z.shape
    zf = z.reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape != zf.shape:
        raise ContractViolationError(f"labels shape {y.shape} != logits shape {zf.shape}")
    if y.size and not np.all((y == 0.0) | (y == 1.0)):
        raise ContractViolationError("sigmoid_xent labels must be 0 or 1")
    loss = float(np.mean(np.maximum(zf, 0.0) - zf * y + np.log1p(np.exp(-np.abs(zf)))))
    d = (map_sigmoid(zf) - y) / zf.size
    return loss, d.reshape(shape)
