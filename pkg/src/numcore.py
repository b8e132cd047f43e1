"""
Motor numérico mínimo com diferenciação automática (modo reverso).

Responsabilidades:
- Tensor denso (float32 no treino, float64 sob `float64_mode()` para verificação).
- Conjunto exato de operadores usados pelas redes: conv2d, group_norm, relu,
  sigmoid, bilinear_upsample, max_pool2d, concat, fatias de canal e perdas.
- Backpropagation por ordenação topológica da fita de operações.
- Otimizador Adam e decaimento polinomial da taxa de aprendizado.

Nenhum broadcasting implícito: operações elementares exigem formas idênticas;
os únicos parâmetros difundidos são os afins por canal (bias, gamma, beta).
"""
import contextlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from src.core.errors import ShapeError

logger = logging.getLogger(__name__)

_DTYPE = np.float32

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


@contextlib.contextmanager
def float64_mode() -> Iterator[None]:
    """Todos os tensores criados dentro do bloco usam float64 (suites de gradcheck)."""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = previous


def default_dtype() -> type:
    return _DTYPE


class Function:
    """
    Operação diferenciável gravada na fita.

    `forward` recebe os arrays dos tensores de entrada; `backward` recebe o
    gradiente da saída e devolve uma tupla alinhada com as entradas (None
    para entradas sem gradiente).
    """

    name = "function"

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, creator=func if requires_grad else None)


class Tensor:
    """Tensor denso NCHW (ou escalar) com gradiente opcional."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 creator: Optional[Function] = None, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.creator = creator
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", "size", 1, self.data.size)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def sum(self) -> "Tensor":
        return Sum.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def __add__(self, other: Union["Tensor", float, int]) -> "Tensor":
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return AddScalar.apply(self, value=float(other))

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", float, int]) -> "Tensor":
        if isinstance(other, Tensor):
            return Add.apply(self, Scale.apply(other, factor=-1.0))
        return AddScalar.apply(self, value=-float(other))

    def __rsub__(self, other: Union[float, int]) -> "Tensor":
        return AddScalar.apply(Scale.apply(self, factor=-1.0), value=float(other))

    def __mul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return Scale.apply(self, factor=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Union[float, int]) -> "Tensor":
        return Scale.apply(self, factor=1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return Scale.apply(self, factor=-1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _require_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, "shape", a.shape, b.shape)


def _require_ndim(op: str, x: np.ndarray, ndim: int, label: str = "input") -> None:
    if x.ndim != ndim:
        raise ShapeError(op, f"{label}.ndim", ndim, x.ndim)


# ---------------------------------------------------------------------------
#  Operações elementares
# ---------------------------------------------------------------------------

class Add(Function):
    name = "add"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Scale(Function):
    name = "scale"

    def forward(self, x, factor: float):
        self.factor = factor
        return x * factor

    def backward(self, grad):
        return (grad * self.factor,)


class AddScalar(Function):
    name = "add_scalar"

    def forward(self, x, value: float):
        return x + value

    def backward(self, grad):
        return (grad,)


class Exp(Function):
    name = "exp"

    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Sum(Function):
    name = "sum"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.shape, grad, dtype=grad.dtype),)


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        # Subgradiente em 0 é 0
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        self.out = expit(x).astype(x.dtype)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Concat(Function):
    """Concatenação no eixo de canais (NCHW)."""
    name = "concat"

    def forward(self, *xs):
        base = xs[0]
        for x in xs[1:]:
            _require_ndim(self.name, x, 4)
            if x.shape[0] != base.shape[0] or x.shape[2:] != base.shape[2:]:
                raise ShapeError(self.name, "N/H/W", base.shape, x.shape)
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=1))


class TakeChannels(Function):
    name = "take_channels"

    def forward(self, x, start: int, stop: int):
        _require_ndim(self.name, x, 4)
        if not 0 <= start < stop <= x.shape[1]:
            raise ShapeError(self.name, "C", f"[{start}, {stop}) dentro de {x.shape[1]}", (start, stop))
        self.shape, self.start, self.stop = x.shape, start, stop
        return x[:, start:stop]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        out[:, self.start:self.stop] = grad
        return (out,)


# ---------------------------------------------------------------------------
#  Operações de rede
# ---------------------------------------------------------------------------

class Conv2d(Function):
    name = "conv2d"

    def forward(self, x, w, b, stride: int = 1, padding: int = 0):
        _require_ndim(self.name, x, 4)
        _require_ndim(self.name, w, 4, "weight")
        _require_ndim(self.name, b, 1, "bias")
        n, c, h, wd = x.shape
        o, i, kh, kw = w.shape
        if i != c:
            raise ShapeError(self.name, "weight.in_channels", c, i)
        if kh != kw or kh % 2 == 0:
            raise ShapeError(self.name, "kernel", "quadrado e ímpar", (kh, kw))
        if b.shape[0] != o:
            raise ShapeError(self.name, "bias", o, b.shape[0])
        if stride < 1:
            raise ShapeError(self.name, "stride", ">= 1", stride)
        if padding < 0:
            raise ShapeError(self.name, "padding", ">= 0", padding)
        k = kh
        h_out = (h + 2 * padding - k) // stride + 1
        w_out = (wd + 2 * padding - k) // stride + 1
        if h_out < 1 or w_out < 1:
            raise ShapeError(self.name, "H/W", f">= {k - 2 * padding}", (h, wd))

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        # (N, C, H', W', k, k) -> amostragem pelo stride
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
        out = out.transpose(0, 3, 1, 2) + b.reshape(1, o, 1, 1)

        self.windows, self.w = windows, w
        self.k, self.stride, self.padding = k, stride, padding
        self.x_shape, self.xp_shape = x.shape, xp.shape
        return np.ascontiguousarray(out, dtype=x.dtype)

    def backward(self, grad):
        k, s, p = self.k, self.stride, self.padding
        n, o, h_out, w_out = grad.shape
        grad_w = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))  # O, C, k, k
        grad_b = grad.sum(axis=(0, 2, 3))

        grad_xp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for di in range(k):
            for dj in range(k):
                # (N, Ho, Wo, C)
                contrib = np.tensordot(grad, self.w[:, :, di, dj], axes=([1], [0]))
                grad_xp[:, :, di:di + s * h_out:s, dj:dj + s * w_out:s] += contrib.transpose(0, 3, 1, 2)
        h, wd = self.x_shape[2], self.x_shape[3]
        grad_x = grad_xp[:, :, p:p + h, p:p + wd] if p else grad_xp
        return grad_x, grad_w.astype(grad.dtype), grad_b


class GroupNorm(Function):
    name = "group_norm"

    def forward(self, x, gamma, beta, groups: int, eps: float = 1e-5):
        _require_ndim(self.name, x, 4)
        n, c, h, w = x.shape
        if groups < 1 or c % groups != 0:
            raise ShapeError(self.name, "C", f"divisível por {groups}", c)
        if gamma.shape != (c,):
            raise ShapeError(self.name, "gamma", (c,), gamma.shape)
        if beta.shape != (c,):
            raise ShapeError(self.name, "beta", (c,), beta.shape)
        if eps <= 0:
            raise ShapeError(self.name, "eps", "> 0", eps)
        xg = x.reshape(n, groups, -1)
        mean = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = ((xg - mean) * inv_std).reshape(n, c, h, w)
        self.xhat, self.inv_std, self.gamma, self.groups = xhat, inv_std, gamma, groups
        return (xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)).astype(x.dtype)

    def backward(self, grad):
        n, c, h, w = grad.shape
        g = self.groups
        grad_gamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        grad_beta = grad.sum(axis=(0, 2, 3))
        dxhat = (grad * self.gamma.reshape(1, c, 1, 1)).reshape(n, g, -1)
        xhat = self.xhat.reshape(n, g, -1)
        m = dxhat.shape[2]
        dx = (self.inv_std / m) * (
            m * dxhat - dxhat.sum(axis=2, keepdims=True) - xhat * (dxhat * xhat).sum(axis=2, keepdims=True)
        )
        return dx.reshape(n, c, h, w), grad_gamma, grad_beta


def _bilinear_matrix(size_in: int, factor: int, dtype) -> np.ndarray:
    """Matriz de interpolação 1-D na convenção align-corners=False (centros de célula)."""
    size_out = size_in * factor
    src = (np.arange(size_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, size_in - 1)
    frac = src - i0
    mat = np.zeros((size_out, size_in), dtype=dtype)
    rows = np.arange(size_out)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


class BilinearUpsample(Function):
    name = "bilinear_upsample"

    def forward(self, x, factor: int):
        _require_ndim(self.name, x, 4)
        if factor < 2:
            raise ShapeError(self.name, "factor", ">= 2", factor)
        _, _, h, w = x.shape
        self.ah = _bilinear_matrix(h, factor, x.dtype)
        self.aw = _bilinear_matrix(w, factor, x.dtype)
        return np.matmul(np.matmul(self.ah, x), self.aw.T)

    def backward(self, grad):
        return (np.matmul(self.ah.T, np.matmul(grad, self.aw)),)


class MaxPool2d(Function):
    name = "max_pool2d"

    def forward(self, x, window: int, stride: int):
        _require_ndim(self.name, x, 4)
        if window < 1 or stride < 1:
            raise ShapeError(self.name, "window/stride", ">= 1", (window, stride))
        n, c, h, w = x.shape
        if window > h or window > w:
            raise ShapeError(self.name, "window", f"<= {min(h, w)}", window)
        h_out = (h - window) // stride + 1
        w_out = (w - window) // stride + 1
        windows = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
        flat = windows.reshape(n, c, h_out, w_out, window * window)
        # argmax devolve a primeira ocorrência: empates seguem a ordem de varredura
        self.arg = flat.argmax(axis=4)
        self.x_shape, self.window, self.stride = x.shape, window, stride
        return np.take_along_axis(flat, self.arg[..., None], axis=4)[..., 0]

    def backward(self, grad):
        n, c, h_out, w_out = grad.shape
        k, s = self.window, self.stride
        nn, cc, oh, ow = np.indices((n, c, h_out, w_out))
        rows = oh * s + self.arg // k
        cols = ow * s + self.arg % k
        grad_x = np.zeros(self.x_shape, dtype=grad.dtype)
        np.add.at(grad_x, (nn, cc, rows, cols), grad)
        return (grad_x,)


class WeightedL1(Function):
    """sum(weight * |pred - target|) sobre todos os elementos."""
    name = "weighted_l1"

    def forward(self, pred, target: np.ndarray, weight: np.ndarray):
        target = np.asarray(target, dtype=pred.dtype)
        weight = np.asarray(weight, dtype=pred.dtype)
        _require_same_shape(self.name, pred, target)
        _require_same_shape(self.name, pred, weight)
        diff = pred - target
        self.dsign = weight * np.sign(diff)
        return np.asarray((weight * np.abs(diff)).sum(), dtype=pred.dtype)

    def backward(self, grad):
        return (grad * self.dsign,)


class WeightedSquaredError(Function):
    """sum(weight * (pred - target)^2) sobre todos os elementos."""
    name = "weighted_squared_error"

    def forward(self, pred, target: np.ndarray, weight: np.ndarray):
        target = np.asarray(target, dtype=pred.dtype)
        weight = np.asarray(weight, dtype=pred.dtype)
        _require_same_shape(self.name, pred, target)
        _require_same_shape(self.name, pred, weight)
        self.dw = 2.0 * weight * (pred - target)
        return np.asarray((weight * (pred - target) ** 2).sum(), dtype=pred.dtype)

    def backward(self, grad):
        return (grad * self.dw,)


# ---------------------------------------------------------------------------
#  API funcional
# ---------------------------------------------------------------------------

def conv2d(input: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(input, weight, bias, stride=stride, padding=padding)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return GroupNorm.apply(x, gamma, beta, groups=groups, eps=eps)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    return BilinearUpsample.apply(x, factor=factor)


def max_pool2d(x: Tensor, window: int, stride: int) -> Tensor:
    return MaxPool2d.apply(x, window=window, stride=stride)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    return Concat.apply(*tensors)


def take_channels(x: Tensor, start: int, stop: int) -> Tensor:
    return TakeChannels.apply(x, start=start, stop=stop)


def weighted_l1(pred: Tensor, target: np.ndarray, weight: np.ndarray) -> Tensor:
    return WeightedL1.apply(pred, target=target, weight=weight)


def weighted_squared_error(pred: Tensor, target: np.ndarray, weight: np.ndarray) -> Tensor:
    return WeightedSquaredError.apply(pred, target=target, weight=weight)


def backward(loss: Tensor) -> None:
    """
    Propaga o gradiente de uma loss escalar até as folhas com requires_grad.

    Gradientes de folhas são acumulados entre chamadas; nós intermediários
    usam um buffer local, de modo que chamadas repetidas somam corretamente.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", "loss", "escalar", loss.shape)
    if not loss.requires_grad:
        return

    order: List[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, children_done = stack.pop()
        if id(node) in visited:
            continue
        if children_done:
            visited.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.tensors:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.creator is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        input_grads = node.creator.backward(g)
        for parent, pg in zip(node.creator.tensors, input_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
#  Otimização
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            step=0,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: OptimizerState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> Tuple[Sequence[Tensor], OptimizerState]:
    """Atualização de Adam com correção de viés; o contador de passos avança 1."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"betas fora de [0, 1): {beta1}, {beta2}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step", "param_count", len(params), (len(grads), len(state.m), len(state.v)))
    for idx, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if g is not None and g.shape != p.shape:
            raise ShapeError("adam_step", f"grad[{idx}]", p.shape, g.shape)
        if m.shape != p.shape:
            raise ShapeError("adam_step", f"state[{idx}]", p.shape, m.shape)

    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for idx, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        state.m[idx] = beta1 * state.m[idx] + (1.0 - beta1) * g
        state.v[idx] = beta2 * state.v[idx] + (1.0 - beta2) * g * g
        m_hat = state.m[idx] / bc1
        v_hat = state.v[idx] / bc2
        # Novo array: tensores antigos na fita permanecem imutáveis
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return params, state


class Adam:
    """Envoltório com estado para `adam_step`."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = OptimizerState.zeros_like(self.params)

    def step(self, lr: float) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def reset(self) -> None:
        self.state = OptimizerState.zeros_like(self.params)


def poly_lr(lr0: float, step: int, total_steps: int, power: float = 0.9) -> float:
    """lr0 * (1 - step/total)^power; passos além do total ficam em 0."""
    if lr0 <= 0:
        raise ValueError(f"lr0 deve ser positivo: {lr0}")
    if step < 0:
        raise ValueError(f"step negativo: {step}")
    if step >= total_steps:
        return 0.0
    return lr0 * (1.0 - step / total_steps) ** power


# ---------------------------------------------------------------------------
#  Verificação numérica
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Diferença central de uma função escalar em relação a `tensor.data`."""
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = fn().item()
        flat[i] = original - eps
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| normalizado pela escala do gradiente."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Compara autodiff com diferença central; devolve o pior erro relativo."""
    for t in tensors:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_gradient(fn, t, eps)))
    if math.isnan(worst):
        return float("inf")
    return worst
