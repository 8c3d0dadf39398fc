"""Full-sequence forward pass and hand-derived backpropagation through time.

The loss is assumed to attach only at the final hidden state h_T; the
backward pass propagates through both the hidden and the cell recurrence
with no truncation.  Gradients exist exactly for the tensors the variant
owns: e.g. for lstm3 the gate pre-activations depend only on the biases,
so nothing flows from the gates into h_{t-1} or x_t.

``finite_difference_grads`` is the independent numerical oracle used by the
test suite and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .cell import GATE_NAMES, CellParams, CellState, StepCache, TensorStruct, step
from .errors import ContractViolationError, DimensionError
from .linalg import _gemm_kernel, map_tanh

__all__ = [
    "SequenceCache",
    "CellGrads",
    "forward_sequence",
    "backward_sequence",
    "finite_difference_grads",
    "finite_difference_tensor",
    "max_relative_error",
]


@dataclass
class SequenceCache:
    steps: list  # StepCache per timestep, t = 1..T
    h0: np.ndarray
    c0: np.ndarray


@dataclass
class CellGrads(TensorStruct):
    w_i: Optional[np.ndarray] = None
    u_i: Optional[np.ndarray] = None
    b_i: Optional[np.ndarray] = None
    w_f: Optional[np.ndarray] = None
    u_f: Optional[np.ndarray] = None
    b_f: Optional[np.ndarray] = None
    w_o: Optional[np.ndarray] = None
    u_o: Optional[np.ndarray] = None
    b_o: Optional[np.ndarray] = None
    w_c: Optional[np.ndarray] = None
    u_c: Optional[np.ndarray] = None
    b_c: Optional[np.ndarray] = None

    @classmethod
    def zeros_like(cls, params: CellParams) -> "CellGrads":
        g = cls()
        for name, t in params.named_tensors():
            setattr(g, name, np.zeros_like(t))
        return g


def forward_sequence(params: CellParams, inputs: Sequence, initial: CellState):
    """Iterate the cell over t = 1..T; returns final state and full cache."""
    if len(inputs) == 0:
        raise ContractViolationError("forward_sequence requires at least one timestep")
    state = initial
    steps: list[StepCache] = []
    for x_t in inputs:
        state, cache = step(params, x_t, state)
        steps.append(cache)
    return state, SequenceCache(steps=steps, h0=np.asarray(initial.h, dtype=np.float64),
                                c0=np.asarray(initial.c, dtype=np.float64))


def _contiguous_t(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


def backward_sequence(params: CellParams, cache: SequenceCache, d_hT: np.ndarray):
    """Reverse-mode gradients of a scalar loss attached at h_T.

    Returns (CellGrads, [d_x_t for t = 1..T]).  Gradient tensors exist for
    exactly the parameters present in ``params``.
    """
    if not cache.steps:
        raise ContractViolationError("empty cache")
    last = cache.steps[-1]
    d_hT = np.ascontiguousarray(d_hT, dtype=np.float64)
    if d_hT.ndim == 1:
        d_hT = d_hT.reshape(-1, 1)
    n = params.dims.n
    if last.h.shape[0] != n or last.x.shape[0] != params.dims.m:
        raise ContractViolationError(
            f"cache (m={last.x.shape[0]}, n={last.h.shape[0]}) does not match "
            f"params (m={params.dims.m}, n={n})"
        )
    if d_hT.shape != last.h.shape:
        raise DimensionError(f"d_hT shape {d_hT.shape} does not match h_T {last.h.shape}")

    grads = CellGrads.zeros_like(params)
    # Recurrent/input kernels are constant over time; transpose them once.
    u_t = {name: _contiguous_t(getattr(params, f"u_{name}"))
           for name in (*GATE_NAMES, "c") if getattr(params, f"u_{name}") is not None}
    w_t = {name: _contiguous_t(getattr(params, f"w_{name}"))
           for name in (*GATE_NAMES, "c") if getattr(params, f"w_{name}") is not None}

    dh = d_hT
    dc = np.zeros_like(d_hT)
    d_xs: list[np.ndarray] = [None] * len(cache.steps)

    for t in range(len(cache.steps) - 1, -1, -1):
        s = cache.steps[t]
        tanh_c = map_tanh(s.c)
        d_o = dh * tanh_c
        dc = dc + dh * s.o * (1.0 - tanh_c * tanh_c)
        d_i = dc * s.g
        d_g = dc * s.i
        d_f = dc * s.c_prev
        dc_prev = dc * s.f

        d_pre = {
            "i": d_i * s.i * (1.0 - s.i),
            "f": d_f * s.f * (1.0 - s.f),
            "o": d_o * s.o * (1.0 - s.o),
            "c": d_g * (1.0 - s.g * s.g),
        }

        h_prev_t = _contiguous_t(s.h_prev)
        x_t = _contiguous_t(s.x)
        dh_prev = np.zeros_like(dh)
        dx = np.zeros((params.dims.m, s.x.shape[1]))
        for name, dp in d_pre.items():
            if name in u_t:
                _gemm_kernel(dp, h_prev_t, getattr(grads, f"u_{name}"))
                _gemm_kernel(u_t[name], dp, dh_prev)
            if name in w_t:
                _gemm_kernel(dp, x_t, getattr(grads, f"w_{name}"))
                _gemm_kernel(w_t[name], dp, dx)
            b = getattr(grads, f"b_{name}")
            if b is not None:
                b += dp.sum(axis=1)

        d_xs[t] = dx
        dh = dh_prev
        dc = dc_prev
    return grads, d_xs


def finite_difference_grads(loss_fn: Callable[[CellParams], float],
                            params: CellParams, step_h: float = 1e-5) -> CellGrads:
    """Central-difference gradient of ``loss_fn`` per scalar parameter.

    Perturbs the tensors of ``params`` in place and restores them; the
    returned container mirrors the parameter presence pattern.
    """
    grads = CellGrads.zeros_like(params)
    for name, tensor in params.named_tensors():
        out = getattr(grads, name)
        flat = tensor.ravel()
        gflat = out.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step_h
            lp = loss_fn(params)
            flat[idx] = orig - step_h
            lm = loss_fn(params)
            flat[idx] = orig
            gflat[idx] = (lp - lm) / (2.0 * step_h)
    return grads


def finite_difference_tensor(loss_fn: Callable[[], float],
                             tensor: np.ndarray, step_h: float = 1e-5) -> np.ndarray:
    """Central differences over a single array; ``loss_fn`` takes no
    arguments and must observe the in-place perturbations."""
    grad = np.zeros_like(tensor)
    flat = tensor.ravel()
    gflat = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step_h
        lp = loss_fn()
        flat[idx] = orig - step_h
        lm = loss_fn()
        flat[idx] = orig
        gflat[idx] = (lp - lm) / (2.0 * step_h)
    return grad


def max_relative_error(analytic: CellGrads, numeric: CellGrads) -> float:
    """max over parameters of |a - b| / max(1e-8, |a| + |b|)."""
    worst = 0.0
    names_a = [n for n, _ in analytic.named_tensors()]
    names_b = [n for n, _ in numeric.named_tensors()]
    if names_a != names_b:
        raise ContractViolationError(
            f"gradient containers disagree on presence: {names_a} vs {names_b}"
        )
    for name, a in analytic.named_tensors():
        b = getattr(numeric, name)
        denom = np.maximum(1e-8, np.abs(a) + np.abs(b))
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst
