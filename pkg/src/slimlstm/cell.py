"""The four-variant LSTM cell.

The standard cell computes

    i = sigmoid(U_i h + W_i x + b_i)
    f = sigmoid(U_f h + W_f x + b_f)
    o = sigmoid(U_o h + W_o x + b_o)
    g = tanh(U_c h + W_c x + b_c)
    c' = f * c + i * g
    h' = o * tanh(c')

The reduced variants drop terms from the three gate pre-activations only
(the candidate path always keeps all three terms):

    lstm1:  gates use U h + b          (input signal removed)
    lstm2:  gates use U h              (input signal and bias removed)
    lstm3:  gates use b                (input and hidden signals removed)

Activations are batched column-wise: a batch of B samples is an (n, B)
matrix and biases broadcast across columns.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Iterator, Optional

import numpy as np

from .errors import ContractViolationError, DimensionError
from .linalg import _gemm_kernel, map_sigmoid, map_tanh

__all__ = [
    "GateVariant",
    "CellDims",
    "CellParams",
    "CellState",
    "StepCache",
    "init_params",
    "gates",
    "step",
    "param_count",
]

GATE_NAMES = ("i", "f", "o")


class GateVariant(enum.Enum):
    STANDARD = "standard"
    LSTM1 = "lstm1"
    LSTM2 = "lstm2"
    LSTM3 = "lstm3"

    @classmethod
    def coerce(cls, value) -> "GateVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ContractViolationError(
                f"unknown gate variant {value!r}; expected one of "
                f"{[v.value for v in cls]}"
            ) from None

    @property
    def gate_has_w(self) -> bool:
        return self is GateVariant.STANDARD

    @property
    def gate_has_u(self) -> bool:
        return self in (GateVariant.STANDARD, GateVariant.LSTM1, GateVariant.LSTM2)

    @property
    def gate_has_b(self) -> bool:
        return self in (GateVariant.STANDARD, GateVariant.LSTM1, GateVariant.LSTM3)


@dataclass(frozen=True)
class CellDims:
    m: int  # input dimension
    n: int  # hidden / cell dimension

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ContractViolationError(f"dims must be positive, got m={self.m} n={self.n}")


class TensorStruct:
    """Mixin for containers holding one optional array per cell tensor slot."""

    SLOTS = (
        "w_i", "u_i", "b_i",
        "w_f", "u_f", "b_f",
        "w_o", "u_o", "b_o",
        "w_c", "u_c", "b_c",
    )

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Present tensors in a fixed, documented order."""
        for name in self.SLOTS:
            t = getattr(self, name)
            if t is not None:
                yield name, t

    def num_elements(self) -> int:
        return sum(t.size for _, t in self.named_tensors())


@dataclass
class CellParams(TensorStruct):
    variant: GateVariant
    dims: CellDims
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

    def copy(self) -> "CellParams":
        kw = {n: (t.copy() if t is not None else None)
              for n in self.SLOTS for t in [getattr(self, n)]}
        return CellParams(self.variant, self.dims, **kw)


@dataclass
class CellState:
    h: np.ndarray  # (n, B)
    c: np.ndarray  # (n, B)

    @classmethod
    def zeros(cls, n: int, batch: int = 1) -> "CellState":
        return cls(np.zeros((n, batch)), np.zeros((n, batch)))


@dataclass
class StepCache:
    """Everything the backward pass needs about one timestep."""
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray  # candidate tanh(U_c h + W_c x + b_c)
    c: np.ndarray
    h: np.ndarray


def param_count(variant, dims: CellDims) -> int:
    """Closed-form parameter count: 4(mn + n^2 + n) for the standard cell,
    minus 3mn / 3(mn+n) / 3(mn+n^2) for lstm1/lstm2/lstm3."""
    variant = GateVariant.coerce(variant)
    m, n = dims.m, dims.n
    total = 4 * (m * n + n * n + n)
    if variant is GateVariant.LSTM1:
        total -= 3 * m * n
    elif variant is GateVariant.LSTM2:
        total -= 3 * (m * n + n)
    elif variant is GateVariant.LSTM3:
        total -= 3 * (m * n + n * n)
    return total


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    # QR of a Gaussian draw; sign of the triangular factor's diagonal is
    # folded into Q so the result is unique for a given draw.
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    return np.ascontiguousarray(q * d)


def init_params(variant, dims: CellDims, seed, forget_bias: float = 0.0) -> CellParams:
    """Seeded initialization: input kernels uniform in +-sqrt(6/(m+n)),
    recurrent kernels random orthogonal, biases zero.

    ``seed`` may be an integer or a numpy Generator.  Draw order is fixed
    (W then U, gates i/f/o then candidate) so identical seeds give
    bit-identical containers.  ``forget_bias`` offsets b_f when present.
    """
    variant = GateVariant.coerce(variant)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m, n = dims.m, dims.n
    limit = np.sqrt(6.0 / (m + n))

    def uniform_w():
        return rng.uniform(-limit, limit, (n, m))

    kw = {}
    for gate in GATE_NAMES:
        if variant.gate_has_w:
            kw[f"w_{gate}"] = uniform_w()
        if variant.gate_has_u:
            kw[f"u_{gate}"] = _orthogonal(rng, n)
        if variant.gate_has_b:
            b = np.zeros(n)
            if gate == "f":
                b += forget_bias
            kw[f"b_{gate}"] = b
    kw["w_c"] = uniform_w()
    kw["u_c"] = _orthogonal(rng, n)
    kw["b_c"] = np.zeros(n)
    return CellParams(variant, dims, **kw)


def _as_batch(a, rows: int, what: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] != rows:
        raise DimensionError(f"{what}: expected ({rows}, B), got {a.shape}")
    return a


def _affine(u, w, b, h, x, n, batch) -> np.ndarray:
    pre = np.zeros((n, batch))
    if u is not None:
        _gemm_kernel(u, h, pre)
    if w is not None:
        _gemm_kernel(w, x, pre)
    if b is not None:
        pre += b[:, None]
    return pre


def gates(params: CellParams, x, h_prev) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gate activations (i, f, o), each sigma of the variant's present terms."""
    m, n = params.dims.m, params.dims.n
    x = _as_batch(x, m, "x")
    h_prev = _as_batch(h_prev, n, "h_prev")
    if x.shape[1] != h_prev.shape[1]:
        raise DimensionError(
            f"batch mismatch: x has {x.shape[1]} columns, h_prev has {h_prev.shape[1]}"
        )
    batch = x.shape[1]
    out = []
    for gate in GATE_NAMES:
        pre = _affine(
            getattr(params, f"u_{gate}"),
            getattr(params, f"w_{gate}"),
            getattr(params, f"b_{gate}"),
            h_prev, x, n, batch,
        )
        out.append(map_sigmoid(pre))
    return tuple(out)


def step(params: CellParams, x, state: CellState) -> tuple[CellState, StepCache]:
    """One timestep: returns the new state and a cache of all intermediates."""
    m, n = params.dims.m, params.dims.n
    x = _as_batch(x, m, "x")
    h_prev = _as_batch(state.h, n, "state.h")
    c_prev = _as_batch(state.c, n, "state.c")
    if not (x.shape[1] == h_prev.shape[1] == c_prev.shape[1]):
        raise DimensionError(
            f"batch mismatch: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )
    batch = x.shape[1]
    i, f, o = gates(params, x, h_prev)
    g = map_tanh(_affine(params.u_c, params.w_c, params.b_c, h_prev, x, n, batch))
    c = f * c_prev + i * g
    h = o * map_tanh(c)
    cache = StepCache(x=x, h_prev=h_prev, c_prev=c_prev, i=i, f=f, o=o, g=g, c=c, h=h)
    return CellState(h=h, c=c), cache
