"""Dense numerical core: primitives with hand-written backward passes, Adam, gradient checking."""

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.special import expit

BCE_EPS = 1e-7


class ContractError(ValueError):
    """Raised when an operation is called outside its documented preconditions."""


class NonFiniteError(ArithmeticError):
    """Raised when a loss, gradient or parameter becomes NaN or Inf."""


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a 2D float64 matrix and check every entry is finite."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# Parameter storage
# ---------------------------------------------------------------------------

class ParamStore:
    """Ordered, name-addressable collection of float64 parameter arrays.

    Iteration order is insertion order, so flattening is deterministic.
    """

    def __init__(self, entries: dict[str, np.ndarray] | None = None):
        self._entries: dict[str, np.ndarray] = {}
        for name, values in (entries or {}).items():
            self.add(name, values)

    def add(self, name: str, values) -> None:
        if name in self._entries:
            raise ContractError(f"duplicate parameter name: {name}")
        self._entries[name] = np.array(values, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, values) -> None:
        if name not in self._entries:
            raise KeyError(name)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self._entries[name].shape:
            raise ContractError(
                f"shape mismatch for {name}: {values.shape} != {self._entries[name].shape}"
            )
        self._entries[name] = values.copy()

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: arr.shape for name, arr in self._entries.items()}

    @property
    def size(self) -> int:
        return sum(arr.size for arr in self._entries.values())

    def copy(self) -> "ParamStore":
        return ParamStore({name: arr.copy() for name, arr in self._entries.items()})

    def zeros_like(self) -> "ParamStore":
        return ParamStore({name: np.zeros_like(arr) for name, arr in self._entries.items()})

    def flat(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([arr.ravel() for arr in self._entries.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise ContractError(f"flat vector has {flat.size} values, expected {self.size}")
        offset = 0
        for name, arr in self._entries.items():
            self._entries[name] = flat[offset:offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size

    def accumulate(self, other: "ParamStore", scale: float = 1.0) -> None:
        """In-place self += scale * other, names must match."""
        if other.names() != self.names():
            raise ContractError("parameter names do not match")
        for name in self._entries:
            self._entries[name] += scale * other[name]

    def equals(self, other: "ParamStore") -> bool:
        """Bit-exact comparison of names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(
            self[name].shape == other[name].shape
            and self[name].tobytes() == other[name].tobytes()
            for name in self._entries
        )


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = xW + b with b broadcast over rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or W.ndim != 2:
        raise ContractError(f"affine expects 2D x and W, got {x.shape} and {W.shape}")
    if x.shape[1] != W.shape[0]:
        raise ContractError(f"affine: x.cols={x.shape[1]} != W.rows={W.shape[0]}")
    if b.shape != (W.shape[1],):
        raise ContractError(f"affine: bias length {b.shape} != W.cols={W.shape[1]}")
    return x @ W + b


def affine_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Returns (dx, dW, db) for y = xW + b."""
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(np.asarray(x, dtype=np.float64))


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def bce(p, gt, eps: float = BCE_EPS, reduction: str = "mean") -> tuple[float, np.ndarray]:
    """Binary cross entropy over flat vectors.

    p is clamped into [eps, 1 - eps] before the logs; clamped entries get zero
    gradient. reduction is "mean" (default) or "sum".

    Returns:
        (loss, dL/dp)
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if p.shape != gt.shape:
        raise ContractError(f"bce: length mismatch {p.size} != {gt.size}")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"bce: unknown reduction {reduction!r}")

    pc = np.clip(p, eps, 1.0 - eps)
    losses = -(gt * np.log(pc) + (1.0 - gt) * np.log1p(-pc))
    grad = (pc - gt) / (pc * (1.0 - pc))
    grad = np.where((p < eps) | (p > 1.0 - eps), 0.0, grad)

    if reduction == "mean":
        n = max(p.size, 1)
        return float(losses.sum() / n), grad / n
    return float(losses.sum()), grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        zeros = {name: np.zeros_like(arr) for name, arr in params.items()}
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                   m={k: v.copy() for k, v in zeros.items()},
                   v={k: v.copy() for k, v in zeros.items()})


def adam_step(params: ParamStore, grads: ParamStore, state: AdamState) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if grads.names() != params.names():
        raise ContractError("gradient names do not mirror parameter names")
    for name in params:
        if grads[name].shape != params[name].shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params = params.copy()
    new_m, new_v = {}, {}
    for name in params:
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        new_params[name] = params[name] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v

    new_state = AdamState(lr=state.lr, beta1=b1, beta2=b2, eps=state.eps,
                          step=step, m=new_m, v=new_v)
    return new_params, new_state


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def grad_check(
    loss_and_grad: Callable[[ParamStore], tuple[float, ParamStore]],
    params: ParamStore,
    h: float = 1e-5,
) -> GradCheckResult:
    """Compare analytic gradients against central differences, coordinate by coordinate.

    Args:
        loss_and_grad: params -> (loss, analytic gradient ParamStore); must be deterministic
        params: point at which to check
        h: finite-difference step

    Returns:
        GradCheckResult with the max relative error overall and per parameter
    """
    loss, analytic = loss_and_grad(params)
    if not np.isfinite(loss):
        raise NonFiniteError("grad_check: loss is not finite at the base point")

    probe = params.copy()
    per_param = {}
    for name in params.names():
        base = params[name]
        a_grad = analytic[name].ravel()
        worst = 0.0
        for i in range(base.size):
            shifted = base.ravel().copy()
            shifted[i] = base.ravel()[i] + h
            probe[name] = shifted.reshape(base.shape)
            loss_plus, _ = loss_and_grad(probe)
            shifted[i] = base.ravel()[i] - h
            probe[name] = shifted.reshape(base.shape)
            loss_minus, _ = loss_and_grad(probe)
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NonFiniteError(f"grad_check: non-finite loss perturbing {name}[{i}]")
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(abs(a_grad[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_grad[i] - numeric) / denom)
        probe[name] = base
        per_param[name] = worst

    return GradCheckResult(max_rel_error=max(per_param.values(), default=0.0), per_param=per_param)
