"""Scikit-learn style estimator wrapping the whole training stack.

``SequenceLstmClassifier`` accepts either dense sequences, X of shape
(N, T, m) float, or token-id sequences, X of shape (N, T) integer (which
route through an embedding table).  Training follows the experiment
recipe: shuffled mini-batches, RMSprop, cross-entropy, per-batch dynamic
learning rate eta0 * exp(loss), and early stopping on the accuracy of an
optional ``eval_set``.

All randomness derives from ``random_state`` through three named streams
(init, shuffling, dropout), so a fit is bit-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import bptt, layers
from .cell import CellDims, CellParams, CellState, GateVariant, init_params
from .data import SequenceDataset, batch_iter
from .errors import ContractViolationError, DivergenceError
from .layers import DenseHead, EmbeddingTable
from .linalg import map_sigmoid
from .optim import EPS_DEFAULT, RHO_DEFAULT, EarlyStop, LrSchedule, RmsState, lr_from_loss, rmsprop_step

__all__ = ["MetricsRecord", "SequenceLstmClassifier"]


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    lr: float
    seconds: float


def model_tensors(cell: CellParams, head: DenseHead,
                  embedding: EmbeddingTable | None) -> dict[str, np.ndarray]:
    """Flat, ordered name -> array view of every trainable tensor."""
    tensors = {f"cell.{name}": t for name, t in cell.named_tensors()}
    tensors["head.w"] = head.w
    tensors["head.b"] = head.b
    if embedding is not None:
        tensors["emb.table"] = embedding.table
    return tensors


def forward_scores(cell: CellParams, head: DenseHead, embedding: EmbeddingTable | None,
                   inputs: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Pure batched forward pass to logits, dropout off; returns (K, N)."""
    n = cell.dims.n
    outputs = []
    for start in range(0, len(inputs), chunk):
        xb = inputs[start:start + chunk]
        if embedding is not None:
            seq = layers.embed_batch(embedding, xb)
        else:
            seq = np.ascontiguousarray(xb.transpose(1, 2, 0))
        state, _ = bptt.forward_sequence(cell, seq, CellState.zeros(n, seq.shape[2]))
        outputs.append(layers.dense_forward(head, state.h))
    return np.concatenate(outputs, axis=1)


class SequenceLstmClassifier(BaseEstimator, ClassifierMixin):
    """Sequence classifier built on the four-variant LSTM cell.

    Parameters mirror the experiment setup: ``variant`` selects the gate
    family ("standard", "lstm1", "lstm2", "lstm3"); ``eta0`` is the base
    coefficient of the dynamic learning rate; ``patience`` drives early
    stopping when ``fit`` is given an ``eval_set``.
    """

    def __init__(self, variant="standard", hidden_size=50, eta0=1e-3,
                 batch_size=32, max_epochs=100, patience=25,
                 embedding_dim=None, vocab_size=None,
                 signal_dropout=0.0, weight_row_dropout=0.0,
                 forget_bias=0.0, rho=RHO_DEFAULT, eps=EPS_DEFAULT,
                 random_state=0, record_timing=True):
        self.variant = variant
        self.hidden_size = hidden_size
        self.eta0 = eta0
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.embedding_dim = embedding_dim
        self.vocab_size = vocab_size
        self.signal_dropout = signal_dropout
        self.weight_row_dropout = weight_row_dropout
        self.forget_bias = forget_bias
        self.rho = rho
        self.eps = eps
        self.random_state = random_state
        self.record_timing = record_timing

    # -- validation helpers -------------------------------------------------

    def _validate_X(self, X, fitted: bool = False):
        X = np.asarray(X)
        if X.ndim == 2 and np.issubdtype(X.dtype, np.integer):
            kind = "tokens"
            X = X.astype(np.int64)
        elif X.ndim == 3:
            kind = "dense"
            X = np.ascontiguousarray(X, dtype=np.float64)
        else:
            raise ContractViolationError(
                "X must be (N, T, m) float sequences or (N, T) integer token ids, "
                f"got shape {X.shape} dtype {X.dtype}"
            )
        if fitted and kind != self.input_kind_:
            raise ContractViolationError(
                f"model was fit on {self.input_kind_!r} input, got {kind!r}"
            )
        return X, kind

    def _encode_labels(self, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ContractViolationError("need at least two classes")
        return np.searchsorted(self.classes_, y)

    # -- training -----------------------------------------------------------

    def fit(self, X, y, eval_set=None):
        X, kind = self._validate_X(X)
        self.input_kind_ = kind
        y_idx = self._encode_labels(y)
        if len(X) != len(y_idx):
            raise ContractViolationError(f"{len(X)} samples but {len(y_idx)} labels")
        n_classes = len(self.classes_)
        head_units = 1 if n_classes == 2 else n_classes
        variant = GateVariant.coerce(self.variant)

        if kind == "tokens":
            if not self.embedding_dim or not self.vocab_size:
                raise ContractViolationError(
                    "token input requires embedding_dim and vocab_size"
                )
            input_dim = int(self.embedding_dim)
        else:
            input_dim = X.shape[2]
        dims = CellDims(m=input_dim, n=int(self.hidden_size))

        seed = int(self.random_state)
        init_rng = np.random.default_rng([seed, 0])
        cell = init_params(variant, dims, init_rng, forget_bias=self.forget_bias)
        head = DenseHead.init(dims.n, head_units, init_rng)
        embedding = (EmbeddingTable.init(int(self.vocab_size), input_dim, init_rng)
                     if kind == "tokens" else None)
        tensors = model_tensors(cell, head, embedding)
        rms = RmsState.zeros(tensors, rho=self.rho, eps=self.eps)
        schedule = LrSchedule(self.eta0)

        eval_X = eval_y = None
        if eval_set is not None:
            eval_X, _ = self._validate_X(eval_set[0], fitted=True)
            eval_y = np.searchsorted(self.classes_, np.asarray(eval_set[1]))

        self.cell_, self.head_, self.embedding_ = cell, head, embedding
        stopper = EarlyStop(patience=int(self.patience))
        history: list[MetricsRecord] = []
        best = self._snapshot(rms, epoch=-1)

        for epoch in range(int(self.max_epochs)):
            t0 = time.perf_counter()
            dropout_rng = np.random.default_rng([seed, 2, epoch])
            loss_sum = 0.0
            correct = 0
            eta = float("nan")
            for batch_no, (xb, yb) in enumerate(
                    batch_iter(SequenceDataset(X, y_idx, kind, n_classes),
                               int(self.batch_size), seed, epoch)):
                try:
                    loss, eta, n_correct = self._train_batch(
                        cell, head, embedding, tensors, rms, schedule,
                        xb, yb, dropout_rng)
                except DivergenceError as exc:
                    raise DivergenceError(
                        f"epoch {epoch}, batch {batch_no}: {exc}") from None
                loss_sum += loss * len(yb)
                correct += n_correct
            train_loss = loss_sum / len(X)
            train_acc = correct / len(X)

            test_acc = float("nan")
            if eval_X is not None:
                _, test_acc = self._evaluate_encoded(eval_X, eval_y)
            seconds = time.perf_counter() - t0 if self.record_timing else 0.0
            history.append(MetricsRecord(epoch=epoch, train_loss=train_loss,
                                         train_acc=train_acc, test_acc=test_acc,
                                         lr=eta, seconds=seconds))
            if eval_X is not None:
                stop = stopper.observe(test_acc, epoch)
                if stopper.best_epoch == epoch:
                    best = self._snapshot(rms, epoch=epoch)
                if stop:
                    break
            else:
                best = self._snapshot(rms, epoch=epoch)

        self._restore(best)
        self.history_ = history
        self.best_epoch_ = best["epoch"]
        self.rms_state_ = best["rms"]
        return self

    def _train_batch(self, cell, head, embedding, tensors, rms, schedule,
                     xb, yb, dropout_rng):
        n = cell.dims.n
        if embedding is not None:
            seq = layers.embed_batch(embedding, xb)
        else:
            seq = np.ascontiguousarray(xb.transpose(1, 2, 0))
        signal_mask = None
        if self.signal_dropout > 0.0:
            seq, signal_mask = layers.signal_dropout(seq, self.signal_dropout,
                                                     dropout_rng, training=True)
            seq = np.ascontiguousarray(seq)
        run_cell, row_masks = layers.weight_row_dropout(
            cell, self.weight_row_dropout, dropout_rng)

        batch = seq.shape[2]
        state, cache = bptt.forward_sequence(run_cell, seq, CellState.zeros(n, batch))
        logits = layers.dense_forward(head, state.h)
        if head.w.shape[0] == 1:
            loss, d_logits = layers.sigmoid_xent(logits, yb)
            preds = (logits[0] > 0.0).astype(np.int64)
        else:
            loss, d_logits = layers.softmax_xent(logits, yb)
            preds = np.argmax(logits, axis=0)
        n_correct = int(np.sum(preds == yb))

        eta = lr_from_loss(schedule, loss)

        dw, db, dh = layers.dense_backward(head, state.h, d_logits)
        cell_grads, d_xs = bptt.backward_sequence(run_cell, cache, dh)
        layers.apply_row_masks(cell_grads, row_masks)

        grads = {f"cell.{name}": t for name, t in cell_grads.named_tensors()}
        grads["head.w"] = dw
        grads["head.b"] = db
        if embedding is not None:
            if signal_mask is not None:
                d_xs = [d_xs[t] * signal_mask[t] for t in range(len(d_xs))]
            grads["emb.table"] = layers.embedding_grad(embedding, xb, d_xs)
        rmsprop_step(tensors, grads, rms, eta)
        return loss, eta, n_correct

    # -- checkpoint snapshots -----------------------------------------------

    def _snapshot(self, rms: RmsState, epoch: int) -> dict:
        return {
            "epoch": epoch,
            "tensors": {k: v.copy() for k, v in
                        model_tensors(self.cell_, self.head_, self.embedding_).items()},
            "rms": rms.copy(),
        }

    def _restore(self, snap: dict) -> None:
        live = model_tensors(self.cell_, self.head_, self.embedding_)
        for name, value in snap["tensors"].items():
            live[name][...] = value

    # -- inference ----------------------------------------------------------

    def decision_scores(self, X) -> np.ndarray:
        """Raw logits, shape (K_out, N)."""
        X, _ = self._validate_X(X, fitted=True)
        return forward_scores(self.cell_, self.head_, self.embedding_, X)

    def predict(self, X):
        scores = self.decision_scores(X)
        if scores.shape[0] == 1:
            idx = (scores[0] > 0.0).astype(np.int64)
        else:
            idx = np.argmax(scores, axis=0)
        return self.classes_[idx]

    def predict_proba(self, X):
        scores = self.decision_scores(X)
        if scores.shape[0] == 1:
            p1 = map_sigmoid(scores[0])
            return np.column_stack([1.0 - p1, p1])
        shifted = scores - scores.max(axis=0, keepdims=True)
        exp = np.exp(shifted)
        return (exp / exp.sum(axis=0, keepdims=True)).T

    def _evaluate_encoded(self, X, y_idx) -> tuple[float, float]:
        scores = forward_scores(self.cell_, self.head_, self.embedding_, X)
        if scores.shape[0] == 1:
            loss, _ = layers.sigmoid_xent(scores, y_idx)
            preds = (scores[0] > 0.0).astype(np.int64)
        else:
            loss, _ = layers.softmax_xent(scores, y_idx)
            preds = np.argmax(scores, axis=0)
        return loss, float(np.mean(preds == y_idx))

    def evaluate(self, X, y) -> tuple[float, float]:
        """Pure forward pass; returns (mean loss, accuracy)."""
        X, _ = self._validate_X(X, fitted=True)
        y_idx = np.searchsorted(self.classes_, np.asarray(y))
        return self._evaluate_encoded(X, y_idx)
