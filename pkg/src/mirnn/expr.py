"""Expression graphs with exact input derivatives and parameter gradients.

The engine is a small computational-graph DAG over float64 numpy arrays.
Leaves are named inputs (bound per evaluation, typically ``(N, 1)`` columns of
collocation points), named parameters (weight matrices / bias vectors), and
constants.  Interior nodes come from a closed primitive set: ``add``, ``mul``,
``matmul``, ``tanh``, ``sin``, ``cos``, ``exp``, ``square``, ``recip``,
``pow``, ``mean`` and ``stopgrad``.

Derivatives with respect to inputs are taken as a graph-to-graph transform
(:func:`derivative`): the result is itself an expression built from the same
primitives, so second derivatives are just the transform applied twice and the
whole augmented graph stays differentiable with respect to the parameters.
Parameter gradients are a single reverse-mode sweep over that augmented graph
(:func:`param_gradient`).  With 2-3 coordinates against thousands of weights,
forward-style input derivatives under one reverse pass is the cheap direction.

Nodes are hash-consed: structurally identical expressions are the same object,
so repeated differentiation shares subgraphs and evaluation memoizes for free.
Expressions are immutable; evaluation is pure (all state lives in the
per-call value table).

``matmul`` has two kernels.  ``stable`` (the default) uses ``np.einsum``,
whose per-row results are bitwise independent of the batch the row sits in;
model predictions therefore do not depend on evaluation order or batching.
``blas`` uses ``np.matmul`` and is ~4x faster; the trainer uses it for the
optimization loop, where only fixed-batch determinism matters.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BindingError,
    EvaluationOverflowError,
    ShapeError,
    UnsupportedOrderError,
)

__all__ = [
    "Expr",
    "Program",
    "DerivativeBundle",
    "FieldDerivatives",
    "inp",
    "par",
    "const",
    "add",
    "sum_of",
    "sub",
    "mul",
    "scale",
    "matmul",
    "tanh",
    "sin",
    "cos",
    "exp",
    "square",
    "recip",
    "powi",
    "mean",
    "stop_gradient",
    "derivative",
    "compile_program",
    "eval_expr",
    "param_gradient",
    "input_derivatives",
    "fd_check",
]

_LEAF_KINDS = ("input", "param", "const")

_intern_table: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    """One immutable node of the expression DAG.

    Do not construct directly; use the factory functions (:func:`inp`,
    :func:`add`, :func:`tanh`, ...) which intern structurally identical nodes.
    """

    __slots__ = ("kind", "children", "payload", "__weakref__")

    def __init__(self, kind, children, payload):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "payload", payload)

    def __setattr__(self, name, value):
        raise AttributeError("Expr nodes are immutable")

    def __repr__(self):
        if self.kind in ("input", "param"):
            return f"{self.kind}({self.payload})"
        if self.kind == "const":
            return f"const({np.asarray(self.payload).ravel()[:4]})"
        if self.kind == "pow":
            return f"pow{self.payload}({len(self.children)} child)"
        return f"{self.kind}(#{len(self.children)})"

    # Operator sugar keeps residual definitions readable.
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x):
    if isinstance(x, Expr):
        return x
    return const(x)


def _payload_key(payload):
    if isinstance(payload, np.ndarray):
        return ("arr", payload.shape, payload.tobytes())
    return payload


def _make(kind, children=(), payload=None):
    key = (kind, _payload_key(payload), tuple(id(c) for c in children))
    node = _intern_table.get(key)
    if node is None:
        node = Expr(kind, tuple(children), payload)
        _intern_table[key] = node
    return node


# ---------------------------------------------------------------------------
# Node factories (with light constant folding so derivative graphs stay small)
# ---------------------------------------------------------------------------

def inp(name: str) -> Expr:
    return _make("input", payload=name)


def par(name: str) -> Expr:
    return _make("param", payload=name)


def const(value) -> Expr:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return _make("const", payload=float(arr))
    return _make("const", payload=arr)


def _const_value(node):
    return node.payload if node.kind == "const" else None


def add(*terms: Expr) -> Expr:
    flat = []
    const_acc = 0.0
    saw_const = False
    for t in terms:
        if t.kind == "add":
            flat.extend(t.children)
        elif t.kind == "const" and np.ndim(t.payload) == 0:
            const_acc += t.payload
            saw_const = True
        else:
            flat.append(t)
    if saw_const and const_acc != 0.0:
        flat.append(const(const_acc))
    if not flat:
        return const(const_acc)
    if len(flat) == 1:
        return flat[0]
    return _make("add", flat)


def sum_of(*terms: Expr) -> Expr:
    """N-ary sum without flattening: evaluates left-to-right over exactly
    these terms, so a total stays the bitwise sum of its reported parts."""
    if len(terms) == 1:
        return terms[0]
    return _make("add", terms)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, scale(b, -1.0))


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _const_value(a), _const_value(b)
    if ca is not None and cb is not None and np.ndim(ca) == 0 and np.ndim(cb) == 0:
        return const(ca * cb)
    for c, other in ((ca, b), (cb, a)):
        if c is not None and np.ndim(c) == 0:
            if c == 0.0:
                return const(0.0)
            if c == 1.0:
                return other
    return _make("mul", (a, b))


def scale(x: Expr, c: float) -> Expr:
    return mul(const(c), x)


def matmul(a: Expr, b: Expr) -> Expr:
    return _make("matmul", (a, b))


def tanh(x: Expr) -> Expr:
    return _make("tanh", (x,))


def sin(x: Expr) -> Expr:
    return _make("sin", (x,))


def cos(x: Expr) -> Expr:
    return _make("cos", (x,))


def exp(x: Expr) -> Expr:
    return _make("exp", (x,))


def square(x: Expr) -> Expr:
    return _make("square", (x,))


def recip(x: Expr) -> Expr:
    return _make("recip", (x,))


def powi(x: Expr, n: int) -> Expr:
    if not isinstance(n, int) or n < 0:
        raise ValueError(f"integer exponent >= 0 required, got {n!r}")
    if n == 0:
        return const(1.0)
    if n == 1:
        return x
    if n == 2:
        return square(x)
    return _make("pow", (x,), payload=n)


def mean(x: Expr) -> Expr:
    return _make("mean", (x,))


def stop_gradient(x: Expr) -> Expr:
    return _make("stopgrad", (x,))


# ---------------------------------------------------------------------------
# Input derivatives as a graph transform
# ---------------------------------------------------------------------------

def derivative(expr: Expr, coord: str, order: int = 1) -> Expr:
    """Exact derivative of ``expr`` with respect to the input named ``coord``.

    Returns a new expression over the same leaves; applying the transform
    twice is exactly the second derivative.  Orders above 2 are outside the
    engine's contract.
    """
    if order < 1 or order > 2:
        raise UnsupportedOrderError(f"derivative order {order} not supported (max 2)")
    out = expr
    for _ in range(order):
        out = _diff(out, coord, {})
        if out is None:
            out = const(0.0)
    return out


def _diff(expr, coord, memo):
    """Graph derivative; returns None for a structural zero."""
    hit = memo.get(id(expr))
    if hit is not None or id(expr) in memo:
        return hit
    k = expr.kind
    ch = expr.children
    if k == "input":
        # Inputs are bound as (N, 1) columns; a 2-D seed keeps the derivative
        # graph valid through matmul and broadcasts everywhere else.
        d = const(np.ones((1, 1))) if expr.payload == coord else None
    elif k in ("param", "const"):
        d = None
    elif k == "add":
        terms = [t for t in (_diff(c, coord, memo) for c in ch) if t is not None]
        d = add(*terms) if terms else None
    elif k == "mul":
        a, b = ch
        da, db = _diff(a, coord, memo), _diff(b, coord, memo)
        terms = []
        if da is not None:
            terms.append(mul(da, b))
        if db is not None:
            terms.append(mul(a, db))
        d = add(*terms) if terms else None
    elif k == "matmul":
        a, b = ch
        da, db = _diff(a, coord, memo), _diff(b, coord, memo)
        terms = []
        if da is not None:
            terms.append(matmul(da, b))
        if db is not None:
            terms.append(matmul(a, db))
        d = add(*terms) if terms else None
    elif k == "tanh":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else mul(add(const(1.0), scale(square(expr), -1.0)), dx)
    elif k == "sin":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else mul(cos(ch[0]), dx)
    elif k == "cos":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else scale(mul(sin(ch[0]), dx), -1.0)
    elif k == "exp":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else mul(expr, dx)
    elif k == "square":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else scale(mul(ch[0], dx), 2.0)
    elif k == "recip":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else scale(mul(square(expr), dx), -1.0)
    elif k == "pow":
        dx = _diff(ch[0], coord, memo)
        n = expr.payload
        d = None if dx is None else scale(mul(powi(ch[0], n - 1), dx), float(n))
    elif k == "mean":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else mean(dx)
    elif k == "stopgrad":
        dx = _diff(ch[0], coord, memo)
        d = None if dx is None else stop_gradient(dx)
    else:  # pragma: no cover
        raise ValueError(f"unknown node kind {k!r}")
    memo[id(expr)] = d
    return d


# ---------------------------------------------------------------------------
# Compiled evaluation and reverse-mode parameter gradients
# ---------------------------------------------------------------------------

def _toposort(roots):
    order = []
    seen = set()
    stack = [(r, False) for r in reversed(roots)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in reversed(node.children):
            if id(c) not in seen:
                stack.append((c, False))
    return order


def _unbroadcast(adj, shape):
    """Reduce an adjoint to the shape its (possibly broadcast) source had."""
    adj = np.asarray(adj)
    while adj.ndim > len(shape):
        adj = adj.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and adj.shape[ax] != 1:
            adj = adj.sum(axis=ax, keepdims=True)
    return adj


class Program:
    """A topologically-ordered evaluation plan for a set of root expressions.

    Compiling once and re-running with fresh bindings is how the trainer
    avoids per-epoch graph traversal costs.
    """

    def __init__(self, roots):
        self.roots = tuple(roots)
        self.nodes = _toposort(self.roots)
        pos = {id(n): i for i, n in enumerate(self.nodes)}
        self.child_idx = [tuple(pos[id(c)] for c in n.children) for n in self.nodes]
        self.root_idx = [pos[id(r)] for r in self.roots]
        self.input_pos = {}
        self.param_pos = {}
        for i, n in enumerate(self.nodes):
            if n.kind == "input":
                self.input_pos.setdefault(n.payload, []).append(i)
            elif n.kind == "param":
                self.param_pos.setdefault(n.payload, []).append(i)

    @property
    def input_names(self):
        return set(self.input_pos)

    @property
    def param_names(self):
        return set(self.param_pos)

    def _forward(self, inputs, params, kernel, check_finite):
        vals = [None] * len(self.nodes)
        for name, positions in self.input_pos.items():
            if name not in inputs:
                raise BindingError(f"input {name!r} not bound")
            v = np.asarray(inputs[name], dtype=np.float64)
            for i in positions:
                vals[i] = v
        for name, positions in self.param_pos.items():
            if name not in params:
                raise BindingError(f"parameter {name!r} not bound")
            v = np.asarray(params[name], dtype=np.float64)
            for i in positions:
                vals[i] = v
        stable = kernel == "stable"
        nodes = self.nodes
        child_idx = self.child_idx
        for i, node in enumerate(nodes):
            k = node.kind
            if k in ("input", "param"):
                continue
            ci = child_idx[i]
            if k == "add":
                v = vals[ci[0]]
                for j in ci[1:]:
                    v = v + vals[j]
            elif k == "mul":
                v = vals[ci[0]] * vals[ci[1]]
            elif k == "matmul":
                a, b = vals[ci[0]], vals[ci[1]]
                if np.ndim(a) != 2 or np.ndim(b) != 2:
                    raise ShapeError(
                        f"matmul needs 2-D operands, got {np.shape(a)} @ {np.shape(b)}"
                    )
                v = np.einsum("nk,ko->no", a, b) if stable else np.matmul(a, b)
            elif k == "tanh":
                v = np.tanh(vals[ci[0]])
            elif k == "square":
                x = vals[ci[0]]
                v = x * x
            elif k == "mean":
                v = np.mean(vals[ci[0]])
            elif k == "sin":
                v = np.sin(vals[ci[0]])
            elif k == "cos":
                v = np.cos(vals[ci[0]])
            elif k == "exp":
                v = np.exp(vals[ci[0]])
            elif k == "recip":
                v = 1.0 / vals[ci[0]]
            elif k == "pow":
                v = vals[ci[0]] ** node.payload
            elif k == "const":
                v = node.payload
            elif k == "stopgrad":
                v = vals[ci[0]]
            else:  # pragma: no cover
                raise ValueError(f"unknown node kind {k!r}")
            if check_finite and not np.all(np.isfinite(v)):
                raise EvaluationOverflowError(f"non-finite value at node {i} ({node!r})")
            vals[i] = v
        return vals

    def run(self, inputs=None, params=None, kernel="stable", check_finite=True):
        """Evaluate all roots; returns a list of values aligned with ``roots``."""
        vals = self._forward(inputs or {}, params or {}, kernel, check_finite)
        return [vals[i] for i in self.root_idx]

    def value_and_grad(self, inputs=None, params=None, kernel="blas", check_finite=False):
        """Evaluate all roots and the gradient of ``roots[0]`` w.r.t. parameters.

        ``roots[0]`` must be scalar-valued.  Parameters the root does not
        depend on get explicit zero gradients.
        """
        inputs = inputs or {}
        params = params or {}
        vals = self._forward(inputs, params, kernel, check_finite)
        seed_idx = self.root_idx[0]
        if np.ndim(vals[seed_idx]) != 0:
            raise ShapeError(
                f"gradient root must be scalar, got shape {np.shape(vals[seed_idx])}"
            )
        adj = [None] * len(self.nodes)
        adj[seed_idx] = np.float64(1.0)
        nodes = self.nodes
        child_idx = self.child_idx

        def acc(j, g):
            a = adj[j]
            adj[j] = g if a is None else a + g

        for i in range(len(nodes) - 1, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = nodes[i]
            k = node.kind
            if k in _LEAF_KINDS:
                continue
            ci = child_idx[i]
            if k == "add":
                for j in ci:
                    acc(j, _unbroadcast(g, np.shape(vals[j])))
            elif k == "mul":
                a, b = ci
                acc(a, _unbroadcast(g * vals[b], np.shape(vals[a])))
                acc(b, _unbroadcast(g * vals[a], np.shape(vals[b])))
            elif k == "matmul":
                a, b = ci
                acc(a, np.matmul(g, vals[b].T))
                acc(b, np.matmul(vals[a].T, g))
            elif k == "tanh":
                acc(ci[0], g * (1.0 - vals[i] * vals[i]))
            elif k == "square":
                acc(ci[0], 2.0 * g * vals[ci[0]])
            elif k == "mean":
                x = vals[ci[0]]
                acc(ci[0], np.full(np.shape(x), g / np.size(x)))
            elif k == "sin":
                acc(ci[0], g * np.cos(vals[ci[0]]))
            elif k == "cos":
                acc(ci[0], -g * np.sin(vals[ci[0]]))
            elif k == "exp":
                acc(ci[0], g * vals[i])
            elif k == "recip":
                acc(ci[0], -g * vals[i] * vals[i])
            elif k == "pow":
                n = node.payload
                acc(ci[0], g * n * vals[ci[0]] ** (n - 1))
            elif k == "stopgrad":
                pass
            else:  # pragma: no cover
                raise ValueError(f"unknown node kind {k!r}")
        grads = {}
        for name, positions in self.param_pos.items():
            total = None
            for j in positions:
                if adj[j] is not None:
                    total = adj[j] if total is None else total + adj[j]
            if total is None:
                total = np.zeros_like(np.asarray(params[name], dtype=np.float64))
            grads[name] = np.asarray(total, dtype=np.float64)
        for name, value in params.items():
            # Parameters the loss does not touch still get explicit zeros.
            if name not in grads:
                grads[name] = np.zeros_like(np.asarray(value, dtype=np.float64))
        return [vals[i] for i in self.root_idx], grads


def compile_program(*roots: Expr) -> Program:
    return Program(roots)


def eval_expr(expr: Expr, inputs=None, params=None, kernel="stable", check_finite=True):
    """One-shot evaluation of a single expression."""
    return Program((expr,)).run(inputs, params, kernel=kernel, check_finite=check_finite)[0]


def param_gradient(loss: Expr, inputs=None, params=None, kernel="blas"):
    """Gradient of a scalar expression with respect to every bound parameter."""
    _, grads = Program((loss,)).value_and_grad(inputs, params, kernel=kernel)
    return grads


# ---------------------------------------------------------------------------
# Derivative bundles (what residual builders consume) and the FD oracle
# ---------------------------------------------------------------------------

@dataclass
class FieldDerivatives:
    """Lazy first/second derivative expressions of one scalar field.

    ``value`` is the field expression itself; ``d(c)`` and ``d2(c)`` build
    (and cache) the exact-derivative expressions used in PDE residuals.
    ``coords`` maps logical coordinate names to the graph's input-leaf names
    (a plain tuple means they coincide) so residual definitions stay written
    in terms of the PDE's own coordinates.
    """

    value: Expr
    coords: object
    _first: dict = field(default_factory=dict)
    _second: dict = field(default_factory=dict)

    def _leaf(self, coord: str) -> str:
        mapping = self.coords
        if not isinstance(mapping, dict):
            mapping = {c: c for c in mapping}
        if coord not in mapping:
            raise KeyError(f"coordinate {coord!r} not among {sorted(mapping)}")
        return mapping[coord]

    def d(self, coord: str) -> Expr:
        if coord not in self._first:
            self._first[coord] = derivative(self.value, self._leaf(coord))
        return self._first[coord]

    def d2(self, coord: str) -> Expr:
        if coord not in self._second:
            self._second[coord] = derivative(self.d(coord), self._leaf(coord))
        return self._second[coord]


@dataclass
class DerivativeBundle:
    """Numeric value and input derivatives of an expression at a point."""

    value: np.ndarray
    first: dict
    second: dict


def input_derivatives(fn: Expr, point: dict, orders, params=None) -> DerivativeBundle:
    """Evaluate ``fn`` and the requested ``(coordinate, order)`` derivatives.

    ``orders`` is an iterable of ``(coord, order)`` with order 1 or 2 (the
    second-order entries are the diagonal terms the benchmark residuals use).
    """
    exprs = [fn]
    keys = []
    for coord, order in orders:
        if order not in (1, 2):
            raise UnsupportedOrderError(f"order {order} for {coord!r} (only 1 and 2)")
        exprs.append(derivative(fn, coord, order=order))
        keys.append((coord, order))
    values = Program(exprs).run(point, params or {})
    first = {c: v for (c, o), v in zip(keys, values[1:]) if o == 1}
    second = {c: v for (c, o), v in zip(keys, values[1:]) if o == 2}
    return DerivativeBundle(value=values[0], first=first, second=second)


def fd_check(fn: Expr, point: dict, orders, step: float = 1e-4, params=None) -> float:
    """Max relative gap between graph derivatives and central finite differences.

    First derivatives are differenced from ``fn`` directly.  Second
    derivatives are the central difference of the exact first-derivative
    graph: double-differencing the raw function at step 1e-4 carries
    ~1e-6 of float64 cancellation noise, swamping small second derivatives,
    while a single difference of the first derivative stays at rounding
    level and still validates the second-order transform independently.

    The relative denominator is ``|autodiff| + step`` so zeros of the
    derivative do not blow the ratio up.  Returns the discrepancy even when
    it is large; callers assert on it.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    bundle = input_derivatives(fn, point, orders, params=params)
    params = params or {}

    def central(expr, shift_coord):
        prog = Program((expr,))
        shifted = dict(point)
        base = np.asarray(point[shift_coord], dtype=np.float64)
        shifted[shift_coord] = base + step
        hi = prog.run(shifted, params)[0]
        shifted[shift_coord] = base - step
        lo = prog.run(shifted, params)[0]
        return (hi - lo) / (2.0 * step)

    worst = 0.0
    for coord, order in orders:
        if order == 1:
            fd = central(fn, coord)
            ad = bundle.first[coord]
        else:
            fd = central(derivative(fn, coord), coord)
            ad = bundle.second[coord]
        gap = np.max(np.abs(ad - fd) / (np.abs(ad) + step))
        worst = max(worst, float(gap))
    return worst
