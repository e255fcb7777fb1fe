"""Scalar expression graphs with reverse-mode automatic differentiation.

Expressions are built by overloaded operators on :class:`Expr` nodes and
frozen into a :class:`FunctionGraph`, which compiles the DAG into flat
tape arrays (operation code, child indices, constants). Evaluation,
gradients, Jacobians and directional derivatives are single passes over
the tape; the hot loops are JIT-compiled with numba when available and
fall back to plain Python otherwise (set ``HVACLOOP_NO_NUMBA=1`` to force
the fallback).

Supported node kinds: variable, constant, add, mul, div, neg, pow
(integer exponent), tanh, square, exp. Division by zero propagates
IEEE inf/nan through results instead of raising; callers inspect
finiteness of the outputs.
"""

from __future__ import annotations

import math
import os

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, UsageError

# Tape operation codes. POW keeps its integer exponent in the a2 slot.
VAR = 0
CONST = 1
ADD = 2
MUL = 3
DIV = 4
NEG = 5
POW = 6
TANH = 7
SQUARE = 8
EXP = 9

_UNARY = (NEG, POW, TANH, SQUARE, EXP)
_BINARY = (ADD, MUL, DIV)


def _maybe_njit(fn):
    if os.environ.get("HVACLOOP_NO_NUMBA"):
        return fn
    try:
        import numba
    except ImportError:
        return fn
    return numba.njit(cache=True, error_model="numpy")(fn)


class Expr:
    """One node of an expression DAG.

    ``index`` is the variable index for VAR nodes and the integer
    exponent for POW nodes; ``value`` is the stored constant for CONST
    nodes. Arithmetic between two constants folds eagerly; no other
    simplification is performed.
    """

    __slots__ = ("kind", "a", "b", "value", "index")

    def __init__(self, kind, a=None, b=None, value=0.0, index=-1):
        self.kind = kind
        self.a = a
        self.b = b
        self.value = value
        self.index = index

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def variable(index: int) -> "Expr":
        if index < 0:
            raise UsageError(f"variable index must be >= 0, got {index}")
        return Expr(VAR, index=int(index))

    @staticmethod
    def const(value: float) -> "Expr":
        return Expr(CONST, value=float(value))

    def _is_const(self):
        return self.kind == CONST

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        if self._is_const() and other._is_const():
            return Expr.const(_f64(self.value) + _f64(other.value))
        return Expr(ADD, self, other)

    __radd__ = __add__

    def __mul__(self, other):
        other = _lift(other)
        if self._is_const() and other._is_const():
            return Expr.const(_f64(self.value) * _f64(other.value))
        return Expr(MUL, self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        if self._is_const() and other._is_const():
            with np.errstate(divide="ignore", invalid="ignore"):
                return Expr.const(_f64(self.value) / _f64(other.value))
        return Expr(DIV, self, other)

    def __rtruediv__(self, other):
        return _lift(other).__truediv__(self)

    def __neg__(self):
        if self._is_const():
            return Expr.const(-self.value)
        return Expr(NEG, self)

    def __sub__(self, other):
        return self.__add__(-_lift(other))

    def __rsub__(self, other):
        return _lift(other).__add__(-self)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, np.integer)):
            raise UsageError("only integer exponents are supported")
        exponent = int(exponent)
        if exponent == 0:
            return Expr.const(1.0)
        if exponent == 1:
            return self
        if self._is_const():
            with np.errstate(divide="ignore", invalid="ignore"):
                return Expr.const(_f64(self.value) ** exponent)
        if exponent == 2:
            return Expr(SQUARE, self)
        return Expr(POW, self, index=exponent)

    def __repr__(self):
        names = {VAR: "var", CONST: "const", ADD: "add", MUL: "mul",
                 DIV: "div", NEG: "neg", POW: "pow", TANH: "tanh",
                 SQUARE: "square", EXP: "exp"}
        if self.kind == VAR:
            return f"Expr(var {self.index})"
        if self.kind == CONST:
            return f"Expr(const {self.value})"
        return f"Expr({names[self.kind]})"


def _f64(v):
    return float(np.float64(v))


def _lift(x):
    if isinstance(x, Expr):
        return x
    return Expr.const(x)


def variables(n: int) -> list[Expr]:
    """n fresh variable nodes with indices 0..n-1."""
    return [Expr.variable(i) for i in range(n)]


def tanh(x):
    if isinstance(x, Expr):
        if x._is_const():
            return Expr.const(math.tanh(x.value))
        return Expr(TANH, x)
    return math.tanh(x)


def square(x):
    if isinstance(x, Expr):
        return x ** 2
    return x * x


def exp(x):
    if isinstance(x, Expr):
        if x._is_const():
            return Expr.const(math.exp(x.value))
        return Expr(EXP, x)
    return math.exp(x)


# -- tape kernels -------------------------------------------------------------


def _forward(op, a1, a2, cv, x, vals):
    n = op.shape[0]
    ops = 0
    for i in range(n):
        k = op[i]
        if k == 0:      # VAR
            vals[i] = x[a1[i]]
        elif k == 1:    # CONST
            vals[i] = cv[i]
        elif k == 2:    # ADD
            vals[i] = vals[a1[i]] + vals[a2[i]]
        elif k == 3:    # MUL
            vals[i] = vals[a1[i]] * vals[a2[i]]
        elif k == 4:    # DIV
            vals[i] = vals[a1[i]] / vals[a2[i]]
        elif k == 5:    # NEG
            vals[i] = -vals[a1[i]]
        elif k == 6:    # POW
            vals[i] = vals[a1[i]] ** a2[i]
        elif k == 7:    # TANH
            vals[i] = np.tanh(vals[a1[i]])
        elif k == 8:    # SQUARE
            t = vals[a1[i]]
            vals[i] = t * t
        else:           # EXP
            vals[i] = np.exp(vals[a1[i]])
        ops += 1
    return ops


def _reverse(op, a1, a2, vals, adj, grad):
    # adj must be pre-seeded at the output node(s); children of node i
    # always precede i on the tape, so one descending sweep completes
    # every adjoint before it is read.
    ops = 0
    for i in range(op.shape[0] - 1, -1, -1):
        ab = adj[i]
        if ab == 0.0:
            continue
        k = op[i]
        if k == 0:
            grad[a1[i]] += ab
        elif k == 2:
            adj[a1[i]] += ab
            adj[a2[i]] += ab
        elif k == 3:
            adj[a1[i]] += ab * vals[a2[i]]
            adj[a2[i]] += ab * vals[a1[i]]
        elif k == 4:
            d = vals[a2[i]]
            adj[a1[i]] += ab / d
            adj[a2[i]] -= ab * vals[i] / d
        elif k == 5:
            adj[a1[i]] -= ab
        elif k == 6:
            e = a2[i]
            adj[a1[i]] += ab * e * vals[a1[i]] ** (e - 1)
        elif k == 7:
            t = vals[i]
            adj[a1[i]] += ab * (1.0 - t * t)
        elif k == 8:
            adj[a1[i]] += ab * 2.0 * vals[a1[i]]
        elif k == 9:
            adj[a1[i]] += ab * vals[i]
        ops += 1
    return ops


def _tangent(op, a1, a2, vals, dx, dot):
    for i in range(op.shape[0]):
        k = op[i]
        if k == 0:
            dot[i] = dx[a1[i]]
        elif k == 1:
            dot[i] = 0.0
        elif k == 2:
            dot[i] = dot[a1[i]] + dot[a2[i]]
        elif k == 3:
            dot[i] = dot[a1[i]] * vals[a2[i]] + vals[a1[i]] * dot[a2[i]]
        elif k == 4:
            d = vals[a2[i]]
            dot[i] = (dot[a1[i]] - vals[i] * dot[a2[i]]) / d
        elif k == 5:
            dot[i] = -dot[a1[i]]
        elif k == 6:
            e = a2[i]
            dot[i] = e * vals[a1[i]] ** (e - 1) * dot[a1[i]]
        elif k == 7:
            t = vals[i]
            dot[i] = (1.0 - t * t) * dot[a1[i]]
        elif k == 8:
            dot[i] = 2.0 * vals[a1[i]] * dot[a1[i]]
        else:
            dot[i] = vals[i] * dot[a1[i]]


def _reach_mask(op, a1, a2, root, mark):
    for i in range(mark.shape[0]):
        mark[i] = False
    mark[root] = True
    for i in range(root, -1, -1):
        if mark[i]:
            k = op[i]
            if k == 2 or k == 3 or k == 4:
                mark[a1[i]] = True
                mark[a2[i]] = True
            elif k == 5 or k == 7 or k == 8 or k == 9 or k == 6:
                mark[a1[i]] = True


def _jac_rows(op, a1, a2, vals, reach_ptr, reach_nodes, roots,
              slot_ptr, slot_node, slot_pos, adj, data):
    # Per row: zero the reachable adjoints, seed the root, sweep the
    # reachable nodes (stored in descending tape order), then gather
    # variable-node adjoints into the CSR data slots.
    for r in range(roots.shape[0]):
        for q in range(reach_ptr[r], reach_ptr[r + 1]):
            adj[reach_nodes[q]] = 0.0
        adj[roots[r]] = 1.0
        for q in range(reach_ptr[r], reach_ptr[r + 1]):
            i = reach_nodes[q]
            ab = adj[i]
            if ab == 0.0:
                continue
            k = op[i]
            if k == 2:
                adj[a1[i]] += ab
                adj[a2[i]] += ab
            elif k == 3:
                adj[a1[i]] += ab * vals[a2[i]]
                adj[a2[i]] += ab * vals[a1[i]]
            elif k == 4:
                d = vals[a2[i]]
                adj[a1[i]] += ab / d
                adj[a2[i]] -= ab * vals[i] / d
            elif k == 5:
                adj[a1[i]] -= ab
            elif k == 6:
                e = a2[i]
                adj[a1[i]] += ab * e * vals[a1[i]] ** (e - 1)
            elif k == 7:
                t = vals[i]
                adj[a1[i]] += ab * (1.0 - t * t)
            elif k == 8:
                adj[a1[i]] += ab * 2.0 * vals[a1[i]]
            elif k == 9:
                adj[a1[i]] += ab * vals[i]
        for q in range(slot_ptr[r], slot_ptr[r + 1]):
            data[slot_pos[q]] += adj[slot_node[q]]


_forward = _maybe_njit(_forward)
_reverse = _maybe_njit(_reverse)
_tangent = _maybe_njit(_tangent)
_reach_mask = _maybe_njit(_reach_mask)
_jac_rows = _maybe_njit(_jac_rows)


class FunctionGraph:
    """A frozen multi-output expression DAG over a fixed variable space.

    The constructor flattens the DAG into topologically ordered tape
    arrays. Instances are immutable after construction; evaluation uses
    per-call workspaces, so one graph may be evaluated concurrently.
    """

    def __init__(self, outputs, n_vars: int):
        self.n_vars = int(n_vars)
        outputs = [_lift(o) for o in outputs]
        self._build_tape(outputs)
        self._jac_cache = None

    def _build_tape(self, outputs):
        index = {}
        op, a1, a2, cv = [], [], [], []

        def emit(node):
            key = id(node)
            if key in index:
                return index[key]
            # iterative postorder: push children first
            stack = [(node, False)]
            while stack:
                cur, expanded = stack.pop()
                ck = id(cur)
                if ck in index:
                    continue
                if expanded:
                    k = cur.kind
                    if k == VAR:
                        if cur.index >= self.n_vars:
                            raise UsageError(
                                f"variable index {cur.index} outside "
                                f"[0, {self.n_vars})")
                        op.append(k); a1.append(cur.index); a2.append(0)
                        cv.append(0.0)
                    elif k == CONST:
                        op.append(k); a1.append(0); a2.append(0)
                        cv.append(float(cur.value))
                    elif k in _BINARY:
                        op.append(k)
                        a1.append(index[id(cur.a)])
                        a2.append(index[id(cur.b)])
                        cv.append(0.0)
                    elif k == POW:
                        op.append(k)
                        a1.append(index[id(cur.a)])
                        a2.append(cur.index)
                        cv.append(0.0)
                    else:
                        op.append(k)
                        a1.append(index[id(cur.a)])
                        a2.append(0)
                        cv.append(0.0)
                    index[ck] = len(op) - 1
                else:
                    stack.append((cur, True))
                    if cur.kind in _BINARY:
                        stack.append((cur.b, False))
                        stack.append((cur.a, False))
                    elif cur.kind in _UNARY:
                        stack.append((cur.a, False))
            return index[key]

        out_idx = [emit(o) for o in outputs]
        self.op = np.asarray(op, dtype=np.int64)
        self.a1 = np.asarray(a1, dtype=np.int64)
        self.a2 = np.asarray(a2, dtype=np.int64)
        self.cv = np.asarray(cv, dtype=np.float64)
        self.out_idx = np.asarray(out_idx, dtype=np.int64)

    # -- introspection --------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return int(self.op.shape[0])

    @property
    def n_outputs(self) -> int:
        return int(self.out_idx.shape[0])

    def eval_op_count(self) -> int:
        """Tape operations performed by one eval() call."""
        return self.n_nodes

    def gradient_op_count(self) -> int:
        """Upper bound on tape operations performed by one gradient() call
        (forward sweep plus reverse sweep)."""
        return 2 * self.n_nodes

    # -- evaluation -----------------------------------------------------------

    def _check_point(self, point):
        point = np.asarray(point, dtype=np.float64)
        if point.shape != (self.n_vars,):
            raise DimensionError(
                f"point has shape {point.shape}, expected ({self.n_vars},)")
        return point

    def eval(self, point) -> np.ndarray:
        """Forward evaluation. Non-finite intermediates (e.g. division by
        zero) propagate into the returned values rather than raising."""
        point = self._check_point(point)
        vals = np.empty(self.n_nodes, dtype=np.float64)
        if self.n_nodes:
            _forward(self.op, self.a1, self.a2, self.cv, point, vals)
        return vals[self.out_idx].copy()

    def eval_counted(self, point):
        """eval plus the number of tape operations executed."""
        point = self._check_point(point)
        vals = np.empty(self.n_nodes, dtype=np.float64)
        ops = _forward(self.op, self.a1, self.a2, self.cv, point, vals) \
            if self.n_nodes else 0
        return vals[self.out_idx].copy(), int(ops)

    def gradient(self, point) -> np.ndarray:
        grad, _ = self.gradient_counted(point)
        return grad

    def gradient_counted(self, point):
        """Reverse-mode gradient of the single output, with the executed
        tape-operation count (forward + reverse)."""
        if self.n_outputs != 1:
            raise UsageError(
                f"gradient requires a single output, graph has "
                f"{self.n_outputs}")
        point = self._check_point(point)
        vals = np.empty(self.n_nodes, dtype=np.float64)
        ops = _forward(self.op, self.a1, self.a2, self.cv, point, vals)
        adj = np.zeros(self.n_nodes, dtype=np.float64)
        grad = np.zeros(self.n_vars, dtype=np.float64)
        adj[self.out_idx[0]] = 1.0
        ops += _reverse(self.op, self.a1, self.a2, vals, adj, grad)
        return grad, int(ops)

    def jvp(self, point, tangent) -> np.ndarray:
        """Forward-mode directional derivative of all outputs."""
        point = self._check_point(point)
        tangent = self._check_point(tangent)
        vals = np.empty(self.n_nodes, dtype=np.float64)
        _forward(self.op, self.a1, self.a2, self.cv, point, vals)
        dot = np.empty(self.n_nodes, dtype=np.float64)
        _tangent(self.op, self.a1, self.a2, vals, tangent, dot)
        return dot[self.out_idx].copy()

    # -- jacobian -------------------------------------------------------------

    def _build_jacobian_structure(self):
        n_out = self.n_outputs
        mark = np.zeros(self.n_nodes, dtype=np.bool_)
        reach_lists, row_cols, row_slots = [], [], []
        for r in range(n_out):
            root = int(self.out_idx[r])
            _reach_mask(self.op, self.a1, self.a2, root, mark)
            nodes = np.nonzero(mark)[0][::-1].copy()  # descending
            reach_lists.append(nodes)
            var_nodes = nodes[self.op[nodes] == VAR]
            cols = self.a1[var_nodes]
            order = np.argsort(cols, kind="stable")
            uniq_cols, inv = np.unique(cols[order], return_inverse=True)
            row_cols.append(uniq_cols)
            row_slots.append((var_nodes[order], inv))

        reach_ptr = np.zeros(n_out + 1, dtype=np.int64)
        for r, nodes in enumerate(reach_lists):
            reach_ptr[r + 1] = reach_ptr[r] + nodes.shape[0]
        reach_nodes = (np.concatenate(reach_lists)
                       if reach_lists else np.zeros(0, dtype=np.int64))

        indptr = np.zeros(n_out + 1, dtype=np.int64)
        for r, cols in enumerate(row_cols):
            indptr[r + 1] = indptr[r] + cols.shape[0]
        indices = (np.concatenate(row_cols)
                   if row_cols else np.zeros(0, dtype=np.int64))

        slot_ptr = np.zeros(n_out + 1, dtype=np.int64)
        slot_node_parts, slot_pos_parts = [], []
        for r, (nodes, inv) in enumerate(row_slots):
            slot_ptr[r + 1] = slot_ptr[r] + nodes.shape[0]
            slot_node_parts.append(nodes)
            slot_pos_parts.append(indptr[r] + inv)
        slot_node = (np.concatenate(slot_node_parts)
                     if slot_node_parts else np.zeros(0, dtype=np.int64))
        slot_pos = (np.concatenate(slot_pos_parts)
                    if slot_pos_parts else np.zeros(0, dtype=np.int64))

        self._jac_cache = dict(
            reach_ptr=reach_ptr,
            reach_nodes=np.ascontiguousarray(reach_nodes, dtype=np.int64),
            indptr=indptr,
            indices=np.ascontiguousarray(indices, dtype=np.int64),
            slot_ptr=slot_ptr,
            slot_node=np.ascontiguousarray(slot_node, dtype=np.int64),
            slot_pos=np.ascontiguousarray(slot_pos, dtype=np.int64),
        )

    def sparsity(self):
        """Jacobian sparsity pattern as (indptr, indices) CSR arrays; a
        superset of the true nonzero set at any point."""
        if self._jac_cache is None:
            self._build_jacobian_structure()
        return self._jac_cache["indptr"], self._jac_cache["indices"]

    def jacobian(self, point) -> sp.csr_matrix:
        """Sparse Jacobian (rows = outputs, cols = variables) via one
        reverse sweep per output restricted to its reachable subtape.
        Entries outside the cached sparsity pattern are exactly zero."""
        point = self._check_point(point)
        if self._jac_cache is None:
            self._build_jacobian_structure()
        c = self._jac_cache
        vals = np.empty(self.n_nodes, dtype=np.float64)
        if self.n_nodes:
            _forward(self.op, self.a1, self.a2, self.cv, point, vals)
        data = np.zeros(c["indices"].shape[0], dtype=np.float64)
        adj = np.zeros(self.n_nodes, dtype=np.float64)
        if self.n_outputs and self.n_nodes:
            _jac_rows(self.op, self.a1, self.a2, vals,
                      c["reach_ptr"], c["reach_nodes"], self.out_idx,
                      c["slot_ptr"], c["slot_node"], c["slot_pos"],
                      adj, data)
        return sp.csr_matrix(
            (data, c["indices"].astype(np.int32), c["indptr"]),
            shape=(self.n_outputs, self.n_vars))

    # -- composition ----------------------------------------------------------

    def compose(self, args) -> list:
        """Replay the tape with variables bound to the given expressions
        (or numbers), returning new output expressions. Used to instantiate
        a right-hand-side template at new inputs."""
        if len(args) != self.n_vars:
            raise DimensionError(
                f"compose needs {self.n_vars} arguments, got {len(args)}")
        vals = [None] * self.n_nodes
        for i in range(self.n_nodes):
            k = self.op[i]
            if k == VAR:
                vals[i] = args[self.a1[i]]
            elif k == CONST:
                vals[i] = Expr.const(self.cv[i])
            elif k == ADD:
                vals[i] = _lift(vals[self.a1[i]]) + vals[self.a2[i]]
            elif k == MUL:
                vals[i] = _lift(vals[self.a1[i]]) * vals[self.a2[i]]
            elif k == DIV:
                vals[i] = _lift(vals[self.a1[i]]) / vals[self.a2[i]]
            elif k == NEG:
                vals[i] = -_lift(vals[self.a1[i]])
            elif k == POW:
                vals[i] = _lift(vals[self.a1[i]]) ** int(self.a2[i])
            elif k == TANH:
                vals[i] = tanh(_lift(vals[self.a1[i]]))
            elif k == SQUARE:
                vals[i] = square(_lift(vals[self.a1[i]]))
            else:
                vals[i] = exp(_lift(vals[self.a1[i]]))
        return [vals[i] for i in self.out_idx]

    # -- debugging ------------------------------------------------------------

    def dump_text(self, path):
        """Write the tape as one s-expression per line for inspection."""
        names = {VAR: "var", CONST: "const", ADD: "add", MUL: "mul",
                 DIV: "div", NEG: "neg", POW: "pow", TANH: "tanh",
                 SQUARE: "square", EXP: "exp"}
        with open(path, "w") as fh:
            for i in range(self.n_nodes):
                k = self.op[i]
                if k == VAR:
                    fh.write(f"(n{i} (var {self.a1[i]}))\n")
                elif k == CONST:
                    fh.write(f"(n{i} (const {self.cv[i]!r}))\n")
                elif k in _BINARY:
                    fh.write(f"(n{i} ({names[k]} n{self.a1[i]} "
                             f"n{self.a2[i]}))\n")
                elif k == POW:
                    fh.write(f"(n{i} (pow n{self.a1[i]} {self.a2[i]}))\n")
                else:
                    fh.write(f"(n{i} ({names[k]} n{self.a1[i]}))\n")
            outs = " ".join(f"n{i}" for i in self.out_idx)
            fh.write(f"(outputs {outs})\n")
