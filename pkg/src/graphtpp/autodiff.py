"""Reverse-mode automatic differentiation over dense numpy arrays.

A small define-by-run engine: every operation on `Value` records its parent
nodes and a vector-Jacobian closure. `Value.backward()` walks the graph once
in reverse topological order and *adds* the pass gradients into each node's
`.grad` accumulator, so calling backward twice without `zero_grad` yields
exactly twice the gradient.

Also hosts the recurrent/attention primitives (`gru_cell`, `softmax`), the
parameter registry, and the Adam optimizer with decoupled weight decay.
"""

from __future__ import annotations

import contextlib

import numpy as np

# graph-wide float width; 64-bit is mandatory for gradient checks, 32-bit is
# an opt-in for training runs via the `precision` context
DEFAULT_DTYPE = np.dtype(np.float64)


@contextlib.contextmanager
def precision(dtype):
    global DEFAULT_DTYPE
    previous = DEFAULT_DTYPE
    DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        DEFAULT_DTYPE = previous


def _as_array(x):
    if type(x) is np.ndarray and x.dtype == DEFAULT_DTYPE:
        return x
    return np.asarray(x, dtype=DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """ln(1 + e^x), overflow-safe; works on floats and arrays."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    return out if isinstance(x, np.ndarray) else float(out)


class Value:
    """Array node in the computation graph.

    `data` holds the forward value, `grad` the same-shape gradient
    accumulator. Operator overloads build the graph implicitly.
    """

    __slots__ = ("data", "_grad", "_parents", "_vjp")

    def __init__(self, data, _parents=(), _vjp=None):
        self.data = _as_array(data)
        self._grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def grad(self) -> np.ndarray:
        """Same-shape gradient accumulator, materialized on first access."""
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, data={self.data!r})"

    def detach(self) -> "Value":
        """Leaf copy: same numbers, no history (cuts backpropagation)."""
        return Value(self.data.copy())

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Value":
        return x if isinstance(x, Value) else Value(np.asarray(x, dtype=DEFAULT_DTYPE))

    def __add__(self, other):
        other = Value._lift(other)
        a, b = self.data, other.data
        return Value(a + b, (self, other),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = Value._lift(other)
        a, b = self.data, other.data
        return Value(a - b, (self, other),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return Value._lift(other) - self

    def __mul__(self, other):
        other = Value._lift(other)
        a, b = self.data, other.data
        return Value(a * b, (self, other),
                     lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __neg__(self):
        return Value(-self.data, (self,), lambda g: (-g,))

    def __truediv__(self, other):
        other = Value._lift(other)
        a, b = self.data, other.data
        return Value(a / b, (self, other),
                     lambda g: (_unbroadcast(g / b, a.shape),
                                _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other):
        return Value._lift(other) / self

    def __pow__(self, n):
        if not isinstance(n, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return Value(a ** n, (self,), lambda g: (g * n * a ** (n - 1),))

    def __matmul__(self, other):
        other = Value._lift(other)
        a, b = self.data, other.data
        out = a @ b
        if a.ndim == 2 and b.ndim == 1:
            vjp = lambda g: (np.outer(g, b), a.T @ g)
        elif a.ndim == 2 and b.ndim == 2:
            vjp = lambda g: (g @ b.T, a.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            vjp = lambda g: (b @ g, np.outer(a, g))
        elif a.ndim == 1 and b.ndim == 1:
            vjp = lambda g: (g * b, g * a)
        else:
            raise ValueError(f"unsupported matmul operand ranks {a.ndim} @ {b.ndim}")
        return Value(out, (self, other), vjp)

    # -- reductions and shape ops ---------------------------------------------

    def sum(self) -> "Value":
        a = self.data
        return Value(a.sum(), (self,), lambda g: (np.broadcast_to(g, a.shape).copy(),))

    def mean_rows(self) -> "Value":
        """Mean over axis 0 of a 2-d value."""
        a = self.data
        if a.ndim != 2:
            raise ValueError("mean_rows expects a 2-d value")
        n = a.shape[0]
        return Value(a.mean(axis=0), (self,),
                     lambda g: (np.broadcast_to(g / n, a.shape).copy(),))

    def row(self, i: int) -> "Value":
        a = self.data
        if a.ndim != 2:
            raise ValueError("row expects a 2-d value")
        if not 0 <= i < a.shape[0]:
            raise IndexError(f"row index {i} out of range [0, {a.shape[0]})")

        def vjp(g):
            pg = np.zeros_like(a)
            pg[i] = g
            return (pg,)

        return Value(a[i], (self,), vjp)

    def gather(self, idx) -> "Value":
        """Rows `idx` of a 2-d value as a new 2-d value."""
        a = self.data
        idx = np.asarray(idx, dtype=np.intp)
        if a.ndim != 2:
            raise ValueError("gather expects a 2-d value")

        def vjp(g):
            pg = np.zeros_like(a)
            np.add.at(pg, idx, g)
            return (pg,)

        return Value(a[idx], (self,), vjp)

    def cols(self, start: int, stop: int) -> "Value":
        """Column slice of a 2-d value."""
        a = self.data
        if a.ndim != 2:
            raise ValueError("cols expects a 2-d value")

        def vjp(g):
            pg = np.zeros_like(a)
            pg[:, start:stop] = g
            return (pg,)

        return Value(a[:, start:stop].copy(), (self,), vjp)

    def transpose(self) -> "Value":
        a = self.data
        if a.ndim != 2:
            raise ValueError("transpose expects a 2-d value")
        return Value(a.T.copy(), (self,), lambda g: (g.T,))

    def segment(self, start: int, stop: int) -> "Value":
        a = self.data
        if a.ndim != 1:
            raise ValueError("segment expects a 1-d value")

        def vjp(g):
            pg = np.zeros_like(a)
            pg[start:stop] = g
            return (pg,)

        return Value(a[start:stop], (self,), vjp)

    # -- elementwise nonlinearities --------------------------------------------

    def relu(self) -> "Value":
        a = self.data
        return Value(np.maximum(a, 0.0), (self,), lambda g: (g * (a > 0),))

    def sigmoid(self) -> "Value":
        out = _sigmoid(self.data)
        return Value(out, (self,), lambda g: (g * out * (1.0 - out),))

    def tanh(self) -> "Value":
        out = np.tanh(self.data)
        return Value(out, (self,), lambda g: (g * (1.0 - out * out),))

    def exp(self) -> "Value":
        out = np.exp(self.data)
        return Value(out, (self,), lambda g: (g * out,))

    def log(self) -> "Value":
        a = self.data
        return Value(np.log(a), (self,), lambda g: (g / a,))

    def cos(self) -> "Value":
        a = self.data
        return Value(np.cos(a), (self,), lambda g: (-g * np.sin(a),))

    def sin(self) -> "Value":
        a = self.data
        return Value(np.sin(a), (self,), lambda g: (g * np.cos(a),))

    def softplus(self) -> "Value":
        a = self.data
        out = np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))
        return Value(out, (self,), lambda g: (g * _sigmoid(a),))

    # -- backward --------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from this scalar root.

        Visits every reachable node exactly once (iterative topological
        order) and adds this pass's gradients into `.grad`.
        """
        if self.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {self.data.shape}")

        order: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        pass_grad: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pass_grad.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                acc = pass_grad.get(id(parent))
                pass_grad[id(parent)] = pg if acc is None else acc + pg

        for node in order:
            g = pass_grad.get(id(node))
            if g is None:
                continue
            if node._grad is not None:
                node._grad = node._grad + g
            elif node._vjp is None:
                # leaf grads outlive the pass and must own their buffer
                # (vjps may hand the same array to several parents)
                node._grad = g.copy()
            else:
                node._grad = g


def softmax(logits: Value) -> Value:
    """Numerically stable softmax of a 1-d value.

    All-equal logits (including all ReLU-zeroed attention scores) give the
    uniform distribution, which is the intended fallback for degenerate
    attention weights.
    """
    a = logits.data
    if a.ndim != 1 or a.size == 0:
        raise ValueError("softmax requires a non-empty 1-d vector (degenerate attention set)")
    shifted = a - a.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def vjp(g):
        return (out * (g - np.dot(g, out)),)

    return Value(out, (logits,), vjp)


def dot(a: Value, b: Value) -> Value:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError("dot expects 1-d operands")
    if a.data.shape != b.data.shape:
        raise ValueError(f"dot shape mismatch {a.data.shape} vs {b.data.shape}")
    return a @ b


def concat(values: list[Value]) -> Value:
    """Concatenate 1-d values into one vector."""
    if not values:
        raise ValueError("concat of empty list")
    datas = [v.data for v in values]
    if any(d.ndim != 1 for d in datas):
        raise ValueError("concat expects 1-d values")
    sizes = [d.shape[0] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(values)))

    return Value(np.concatenate(datas), tuple(values), vjp)


def stack(values: list[Value]) -> Value:
    """Stack 1-d values into a 2-d value, one row each."""
    if not values:
        raise ValueError("stack of empty list")
    datas = [v.data for v in values]
    if any(d.shape != datas[0].shape or d.ndim != 1 for d in datas):
        raise ValueError("stack expects equal-length 1-d values")

    def vjp(g):
        return tuple(g[i] for i in range(len(values)))

    return Value(np.stack(datas), tuple(values), vjp)


def gru_cell(x: Value, h: Value, w_x: Value, w_h: Value, b: Value) -> Value:
    """One GRU step: update/reset gates, candidate, convex combination.

    `w_x` is (3m, n), `w_h` is (3m, m), `b` is (3m,), with gate order
    update | reset | candidate. Returns the new m-dimensional state.
    """
    m = h.data.shape[0] if h.data.ndim == 1 else -1
    n = x.data.shape[0] if x.data.ndim == 1 else -1
    if m <= 0 or n <= 0 or w_x.shape != (3 * m, n) or w_h.shape != (3 * m, m) or b.shape != (3 * m,):
        raise ValueError(
            f"gru_cell dimension mismatch: x{x.shape} h{h.shape} "
            f"w_x{w_x.shape} w_h{w_h.shape} b{b.shape}")
    gx = w_x @ x + b
    gh = w_h @ h
    z = (gx.segment(0, m) + gh.segment(0, m)).sigmoid()
    r = (gx.segment(m, 2 * m) + gh.segment(m, 2 * m)).sigmoid()
    cand = (gx.segment(2 * m, 3 * m) + r * gh.segment(2 * m, 3 * m)).tanh()
    return (1.0 - z) * h + z * cand


def gru_matrix(x: Value, h: Value, w_x: Value, w_h: Value, b: Value) -> Value:
    """gru_cell applied to every row of x against the same row of h.

    x is (n, in), h is (n, m); returns (n, m). Row i equals
    gru_cell(x[i], h[i], ...) exactly.
    """
    if x.data.ndim != 2 or h.data.ndim != 2 or x.data.shape[0] != h.data.shape[0]:
        raise ValueError(f"gru_matrix expects aligned 2-d inputs, got {x.shape} and {h.shape}")
    m = h.data.shape[1]
    if w_x.shape != (3 * m, x.data.shape[1]) or w_h.shape != (3 * m, m) or b.shape != (3 * m,):
        raise ValueError("gru_matrix parameter shapes inconsistent with inputs")
    gx = x @ w_x.transpose() + b
    gh = h @ w_h.transpose()
    z = (gx.cols(0, m) + gh.cols(0, m)).sigmoid()
    r = (gx.cols(m, 2 * m) + gh.cols(m, 2 * m)).sigmoid()
    cand = (gx.cols(2 * m, 3 * m) + r * gh.cols(2 * m, 3 * m)).tanh()
    return (1.0 - z) * h + z * cand


# -- parameters and optimizer -----------------------------------------------


def glorot(rng: np.random.Generator, rows: int, cols: int, dtype=np.float64) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)


class Parameters:
    """Ordered registry of named trainable Values."""

    def __init__(self):
        self._store: dict[str, Value] = {}

    def add(self, name: str, array: np.ndarray) -> Value:
        if name in self._store:
            raise ValueError(f"duplicate parameter name {name!r}")
        v = Value(np.array(array, dtype=DEFAULT_DTYPE))
        self._store[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def items(self):
        return self._store.items()

    def names(self):
        return list(self._store)

    def zero_grad(self) -> None:
        for v in self._store.values():
            if v._grad is not None:
                v._grad[...] = 0.0

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: v.data.copy() for name, v in self._store.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, v in self._store.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in state")
            if arrays[name].shape != v.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arrays[name].shape} vs {v.data.shape}")
            v.data[...] = arrays[name]


class Adam:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params: Parameters, lr: float = 0.001, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {name: np.zeros_like(v.data) for name, v in params.items()}
        self._v = {name: np.zeros_like(v.data) for name, v in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self._m[name]
            v = self._v[name]
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        self.params.zero_grad()
