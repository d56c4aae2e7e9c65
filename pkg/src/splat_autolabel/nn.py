"""
A small reverse-mode automatic differentiation engine.

Values are numpy arrays wrapped in `Tensor` nodes. Every operation records
its parents and a closure computing the parents' gradients from the output
gradient, so a `Tape` (the nodes reachable from an output, in topological
order) is enough to run the backward pass. Trainable arrays live in
`Parameter` objects whose `.grad` accumulates across backward passes until
cleared; this is what lets several forward/backward passes share one
optimizer step.

Only what the networks and the rasterizer need is here: dense layers,
elementwise arithmetic and activations, reductions, gathers and
concatenation, plus `custom` for operations that bring their own adjoint.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from splat_autolabel.constants import CHECKPOINT_VERSION
from splat_autolabel.errors import ShapeMismatch, StaleTape
from splat_autolabel.util import atomic_write

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union["Tensor", np.ndarray, float, int]

ACTIVATIONS = ("relu", "sigmoid", "tanh", "none")


class Parameter:
    """
    A trainable array with an accumulating gradient.

    The version number increases whenever the value changes, which lets a tape
    detect that it was recorded against values that no longer exist.
    """

    def __init__(self, value: np.ndarray, name: str = "") -> None:
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.version = 0

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def assign(self, value: np.ndarray) -> None:
        """
        Replace the value (possibly with a new shape) and clear the gradient.
        """
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.version += 1

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "param", "requires_grad", "needs_grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: Tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        *,
        param: Optional[Parameter] = None,
        requires_grad: bool = False,
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.param = param
        self.requires_grad = requires_grad
        self.needs_grad = param is not None or requires_grad or any(p.needs_grad for p in parents)
        # nodes that cannot reach a trainable leaf do not keep their history
        self.parents = parents if self.needs_grad else ()
        self.backward_fn = backward_fn if self.needs_grad else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, needs_grad={self.needs_grad})"

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: Operand) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        return index(self, key)


def as_tensor(x: Operand) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def leaf(param: Parameter) -> Tensor:
    """
    A graph node reading a parameter; gradients flow into param.grad.
    """
    return Tensor(param.value, param=param)


def variable(value: np.ndarray) -> Tensor:
    """
    A graph input whose gradient the tape reports back.
    """
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def custom(value: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """
    An operation with a hand-written adjoint.

    backward_fn maps the output gradient to one gradient (or None) per parent.
    """
    return Tensor(value, tuple(parents), backward_fn)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return Tensor(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)),
    )


def matmul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:  # noqa: PLR2004
        msg = f"cannot multiply {a.shape} by {b.shape}"
        raise ShapeMismatch(msg)
    return Tensor(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def _unary(a: Operand, out: np.ndarray, local: Callable[[], np.ndarray]) -> Tensor:
    a = as_tensor(a)
    return Tensor(out, (a,), lambda g: (g * local(),))


def relu(a: Operand) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.value, 0.0), lambda: (a.value > 0).astype(np.float64))


def sigmoid(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return _unary(a, out, lambda: out * (1.0 - out))


def tanh(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _unary(a, out, lambda: 1.0 - out * out)


def exp(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _unary(a, out, lambda: out)


def sqrt(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _unary(a, out, lambda: 0.5 / out)


def sin(a: Operand) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.sin(a.value), lambda: np.cos(a.value))


def cos(a: Operand) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.cos(a.value), lambda: -np.sin(a.value))


def square(a: Operand) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.value * a.value, lambda: 2.0 * a.value)


def clip(a: Operand, lo: float, hi: float) -> Tensor:
    """
    Clamp to [lo, hi]; the gradient is zero wherever the clamp is active.
    """
    a = as_tensor(a)
    inside = (a.value > lo) & (a.value < hi)
    return _unary(a, np.clip(a.value, lo, hi), lambda: inside.astype(np.float64))


def stop_gradient(a: Operand) -> Tensor:
    """
    Identity in the forward pass; contributes no gradient to a.
    """
    return Tensor(np.array(as_tensor(a).value))


def sum(a: Operand, axis: Optional[int] = None, *, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, (a,), backward)


def mean(a: Operand, axis: Optional[int] = None, *, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis, keepdims=keepdims) * (1.0 / count)


def concat(tensors: Sequence[Operand], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> List[np.ndarray]:
        return list(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), backward)


def index(a: Operand, key: Any) -> Tensor:
    """
    a[key] for any numpy index; repeated indices accumulate gradient.
    """
    a = as_tensor(a)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        out = np.zeros_like(a.value)
        np.add.at(out, key, g)
        return (out,)

    return Tensor(a.value[key], (a,), backward)


def reshape(a: Operand, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        msg = f"shapes differ: {a.shape} vs {b.shape}"
        raise ShapeMismatch(msg)


def smooth_l1(a: Operand, b: Operand, beta: float = 1.0) -> Tensor:
    """
    Mean smooth-L1 (Huber) loss: 0.5 d^2 / beta if |d| < beta, else |d| - 0.5 beta.
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b)
    d = a.value - b.value
    small = np.abs(d) < beta
    n = max(d.size, 1)
    value = np.where(small, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta).sum() / n
    local = np.where(small, d / beta, np.sign(d)) / n
    return Tensor(np.asarray(value), (a, b), lambda g: (g * local, -g * local))


def mse(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b)
    d = a.value - b.value
    n = max(d.size, 1)
    local = 2.0 * d / n
    return Tensor(np.asarray((d * d).sum() / n), (a, b), lambda g: (g * local, -g * local))


class Tape:
    """
    The recorded computation behind an output, ready for a backward pass.
    """

    def __init__(self, output: Tensor) -> None:
        self.output = output
        self._nodes = _topological_order(output)
        self._versions: List[Tuple[Parameter, int]] = []
        seen = set()
        for node in self._nodes:
            if node.param is not None and id(node.param) not in seen:
                seen.add(id(node.param))
                self._versions.append((node.param, node.param.version))

    @property
    def parameters(self) -> List[Parameter]:
        return [p for p, _ in self._versions]

    def check(self) -> None:
        for param, version in self._versions:
            if param.version != version:
                msg = f"parameter {param.name or '<unnamed>'} changed since the forward pass"
                raise StaleTape(msg)

    def backward(self, grad: Optional[np.ndarray] = None) -> "Gradients":
        """
        Propagate grad from the output, accumulating into every Parameter.grad.

        Returns the gradients produced by this call alone: per parameter, and
        per `variable` input.
        """
        self.check()
        if grad is None:
            grad = np.ones_like(self.output.value)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.output.shape:
            msg = f"output gradient has shape {grad.shape}, expected {self.output.shape}"
            raise ShapeMismatch(msg)
        pending: Dict[int, np.ndarray] = {id(self.output): grad}
        result = Gradients()
        for node in reversed(self._nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.param is not None:
                result.add_param(node.param, g)
            if node.requires_grad:
                result.add_input(node, g)
            if node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.needs_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = np.asarray(pg, dtype=np.float64)
        for param, g in result.params:
            param.grad = param.grad + g
        return result


@dataclass
class Gradients:
    params: List[Tuple[Parameter, np.ndarray]] = field(default_factory=list)
    inputs: List[Tuple[Tensor, np.ndarray]] = field(default_factory=list)

    def add_param(self, param: Parameter, grad: np.ndarray) -> None:
        for i, (p, g) in enumerate(self.params):
            if p is param:
                self.params[i] = (p, g + grad)
                return
        self.params.append((param, grad))

    def add_input(self, node: Tensor, grad: np.ndarray) -> None:
        self.inputs.append((node, grad))

    def for_param(self, param: Parameter) -> np.ndarray:
        for p, g in self.params:
            if p is param:
                return g
        return np.zeros_like(param.value)

    def for_input(self, node: Tensor) -> np.ndarray:
        for n, g in self.inputs:
            if n is node:
                return g
        return np.zeros_like(node.value)


def _topological_order(output: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(output: Tensor, grad: Optional[np.ndarray] = None) -> Gradients:
    return Tape(output).backward(grad)


@dataclass(frozen=True)
class MlpSpec:
    """
    Layer widths (input first) and one activation per layer.
    """

    widths: Tuple[int, ...]
    activations: Tuple[str, ...]
    final_bias: float = 0.0
    zero_final: bool = False
    final_scale: float = 1.0

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):  # noqa: PLR2004
            msg = f"an MLP needs at least one layer of positive width, got widths {self.widths}"
            raise ShapeMismatch(msg)
        if len(self.activations) != len(self.widths) - 1:
            msg = f"{len(self.widths) - 1} layers but {len(self.activations)} activations"
            raise ShapeMismatch(msg)
        for act in self.activations:
            if act not in ACTIVATIONS:
                msg = f"unknown activation {act!r}"
                raise ShapeMismatch(msg)

    @classmethod
    def uniform(
        cls,
        n_in: int,
        width: int,
        depth: int,
        n_out: int,
        *,
        hidden: str = "relu",
        output: str = "none",
        final_bias: float = 0.0,
        zero_final: bool = False,
        final_scale: float = 1.0,
    ) -> "MlpSpec":
        """
        depth hidden layers of the same width followed by an output layer.
        """
        widths = (n_in,) + (width,) * depth + (n_out,)
        activations = (hidden,) * depth + (output,)
        return cls(widths, activations, final_bias, zero_final, final_scale)

    def to_json(self) -> Dict[str, Any]:
        return {
            "widths": list(self.widths),
            "activations": list(self.activations),
            "final_bias": self.final_bias,
            "zero_final": self.zero_final,
            "final_scale": self.final_scale,
        }

    @classmethod
    def from_json(cls, rep: Dict[str, Any]) -> "MlpSpec":
        return cls(
            tuple(rep["widths"]),
            tuple(rep["activations"]),
            float(rep.get("final_bias", 0.0)),
            bool(rep.get("zero_final", False)),
            float(rep.get("final_scale", 1.0)),
        )


class Mlp:
    """
    A stack of dense layers y = act(x @ W + b) evaluated on row batches.
    """

    def __init__(self, spec: MlpSpec, rng: np.random.Generator, name: str = "mlp") -> None:
        self.spec = spec
        self.name = name
        self.weights: List[Parameter] = []
        self.biases: List[Parameter] = []
        layers = len(spec.activations)
        for i, (n_in, n_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            last = i == layers - 1
            if last and spec.zero_final:
                w = np.zeros((n_in, n_out))
            else:
                gain = 2.0 if spec.activations[i] == "relu" else 1.0
                w = rng.normal(0.0, np.sqrt(gain / n_in), size=(n_in, n_out))
                if last:
                    w *= spec.final_scale
            b = np.full(n_out, spec.final_bias if last else 0.0)
            self.weights.append(Parameter(w, f"{name}.{i}.weight"))
            self.biases.append(Parameter(b, f"{name}.{i}.bias"))

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def __call__(self, x: Operand) -> Tensor:
        h = as_tensor(x)
        if h.value.ndim != 2 or h.shape[1] != self.spec.widths[0]:  # noqa: PLR2004
            msg = f"{self.name} expects input rows of width {self.spec.widths[0]}, got shape {h.shape}"
            raise ShapeMismatch(msg)
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            h = matmul(h, leaf(w)) + leaf(b)
            if act == "relu":
                h = relu(h)
            elif act == "sigmoid":
                h = sigmoid(h)
            elif act == "tanh":
                h = tanh(h)
        return h

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def mlp_forward(mlp: Mlp, x: Operand) -> Tuple[Tensor, Tape]:
    out = mlp(x)
    return out, Tape(out)


def mlp_backward(tape: Tape, grad_output: np.ndarray) -> Gradients:
    return tape.backward(grad_output)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0


def adam_step(state: AdamState, params: List[np.ndarray], grads: List[np.ndarray]) -> List[np.ndarray]:
    """
    One bias-corrected Adam update; returns the new parameter arrays.

    Moment buffers are created on first use and must keep the parameter shapes.
    """
    if len(params) != len(grads):
        msg = f"{len(params)} parameters but {len(grads)} gradients"
        raise ShapeMismatch(msg)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        msg = f"optimizer tracks {len(state.m)} parameters, got {len(params)}"
        raise ShapeMismatch(msg)
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or state.m[i].shape != p.shape:
            msg = f"parameter {i}: value {p.shape}, gradient {g.shape}, moments {state.m[i].shape}"
            raise ShapeMismatch(msg)
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[i] / bc2) + state.eps
        out.append(p - (state.lr / bc1) * state.m[i] / denom)
    return out


class Adam:
    """
    Adam over a list of Parameters, with an optional learning rate per parameter.
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float,
        *,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        lrs: Optional[Dict[str, float]] = None,
    ) -> None:
        self.params = list(params)
        self.lr = lr
        self.lrs = dict(lrs or {})
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        for i, p in enumerate(self.params):
            state = AdamState(
                self.lrs.get(p.name, self.lr),
                self.beta1,
                self.beta2,
                self.eps,
                [self.m[i]],
                [self.v[i]],
                self.step_count - 1,
            )
            (new_value,) = adam_step(state, [p.value], [p.grad])
            self.m[i], self.v[i] = state.m[0], state.v[0]
            p.value = new_value
            p.version += 1

    def remap_rows(self, param: Parameter, source_rows: np.ndarray) -> None:
        """
        Reindex the moments of a row-structured parameter after densification.

        Row j of the new moments is row source_rows[j] of the old ones, or zero
        where source_rows[j] < 0.
        """
        i = self._position(param)
        source_rows = np.asarray(source_rows, dtype=np.int64)
        for buf in (self.m, self.v):
            old = buf[i]
            new = np.zeros((len(source_rows),) + old.shape[1:])
            keep = source_rows >= 0
            new[keep] = old[source_rows[keep]]
            buf[i] = new

    def _position(self, param: Parameter) -> int:
        for i, p in enumerate(self.params):
            if p is param:
                return i
        msg = f"{param!r} is not managed by this optimizer"
        raise ShapeMismatch(msg)


_MAGIC = b"SPLATNN1"


def save_networks(path: str, networks: Dict[str, Mlp], extra: Optional[Dict[str, Any]] = None) -> None:
    """
    Write networks as a JSON header file plus a raw little-endian float64 file.

    `<path>.json` holds the format version, each network's MlpSpec, the table
    of blocks (name, shape, byte offset into the data file) and `extra`.
    `<path>.bin` starts with an 8-byte magic and a little-endian uint64 block
    count, followed by the blocks back to back.
    """
    blocks = []
    chunks = []
    offset = len(_MAGIC) + 8
    specs = {}
    for net_name in sorted(networks):
        mlp = networks[net_name]
        specs[net_name] = mlp.spec.to_json()
        for p in mlp.parameters():
            data = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
            blocks.append({"name": p.name, "network": net_name, "shape": list(p.shape), "offset": offset})
            chunks.append(data)
            offset += len(data)
    header = {
        "version": CHECKPOINT_VERSION,
        "networks": specs,
        "blocks": blocks,
        "extra": extra or {},
    }
    atomic_write((json.dumps(header, indent=2) + "\n").encode("utf8"), f"{path}.json")
    atomic_write(_MAGIC + struct.pack("<Q", len(blocks)) + b"".join(chunks), f"{path}.bin")


def load_networks(path: str) -> Tuple[Dict[str, Mlp], Dict[str, Any]]:
    with open(f"{path}.json") as f:
        header = json.load(f)
    if header.get("version") != CHECKPOINT_VERSION:
        msg = f"expected network checkpoint version {CHECKPOINT_VERSION}, got {header.get('version')}"
        raise ShapeMismatch(msg)
    with open(f"{path}.bin", "rb") as f:
        data = f.read()
    if data[: len(_MAGIC)] != _MAGIC:
        msg = f"{path}.bin is not a network checkpoint"
        raise ShapeMismatch(msg)
    (count,) = struct.unpack("<Q", data[len(_MAGIC) : len(_MAGIC) + 8])
    if count != len(header["blocks"]):
        msg = f"{path}.bin has {count} blocks, header lists {len(header['blocks'])}"
        raise ShapeMismatch(msg)
    rng = np.random.default_rng(0)
    networks = {name: Mlp(MlpSpec.from_json(rep), rng, name) for name, rep in header["networks"].items()}
    params = {p.name: p for mlp in networks.values() for p in mlp.parameters()}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        size = int(np.prod(shape)) * 8
        raw = data[block["offset"] : block["offset"] + size]
        if len(raw) != size:
            msg = f"{path}.bin is truncated at block {block['name']}"
            raise ShapeMismatch(msg)
        params[block["name"]].assign(np.frombuffer(raw, dtype="<f8").reshape(shape))
    return networks, header.get("extra", {})
