"""Define-by-run computation graph with reverse-mode differentiation.

Nodes are appended in execution order, which is therefore a topological
order.  Recording validates shapes immediately and, when every input already
has a value, evaluates the node as well.  :meth:`Graph.forward` re-evaluates
the whole graph from new leaf bindings.  :meth:`Graph.backward` seeds the
scalar loss with 1 and visits nodes in reverse insertion order; each backward
is handed only the forward values its dependency mode retains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .. import dense
from ..dense import ToleranceConfig
from ..errors import GraphError, LinalgError, ShapeError, UnboundLeafError
from .ops import OpDef, get_op

__all__ = ["Graph", "Var", "GradStore", "MemoryPlan"]


@dataclass
class Node:
    index: int
    op: str
    flags: dict
    inputs: list  # [(node index, output slot)]
    shapes: list  # one shape per output
    name: str | None = None
    constant: bool = False

    @property
    def is_leaf(self):
        return self.op == "leaf"


class Var:
    """Handle to one output slot of a node in a :class:`Graph`."""

    __slots__ = ("graph", "node", "slot")
    __array_priority__ = 100  # numpy scalars defer to our reflected operators

    def __init__(self, graph, node, slot=0):
        self.graph = graph
        self.node = node
        self.slot = slot

    @property
    def key(self):
        return (self.node, self.slot)

    @property
    def shape(self):
        return self.graph.nodes[self.node].shapes[self.slot]

    @property
    def value(self):
        return self.graph.value(self)

    def __repr__(self):
        n = self.graph.nodes[self.node]
        return f"Var(node={self.node}, op={n.op}, slot={self.slot}, shape={self.shape})"

    def __hash__(self):
        return hash((id(self.graph), self.node, self.slot))

    def __eq__(self, other):
        return isinstance(other, Var) and other.graph is self.graph and other.key == self.key

    # arithmetic ------------------------------------------------------------
    def _scalar(self, c):
        return self.graph.constant(np.full((1, 1), c, dtype=self.graph.dtype_of(self)))

    def __add__(self, other):
        if np.isscalar(other):
            return self.graph.apply("shift", [self], c=float(other))
        return self.graph.apply("add", [self, other])

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return self.graph.apply("shift", [self], c=-float(other))
        return self.graph.apply("sub", [self, other])

    def __rsub__(self, other):
        return self.graph.apply("shift", [-self], c=float(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return self.graph.apply("scale", [self], alpha=float(other))
        return self.graph.apply("mul", [self, other])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return self.graph.apply("scale", [self], alpha=1.0 / float(other))
        return self.graph.apply("div", [self, other])

    def __rtruediv__(self, other):
        return self.graph.apply("div", [self._scalar(other), self])

    def __neg__(self):
        return self.graph.apply("neg", [self])

    def __matmul__(self, other):
        return self.graph.apply("gemm2", [self, other])

    @property
    def T(self):
        return self.graph.apply("transpose", [self])


class GradStore:
    """Cotangents keyed by :class:`Var`; missing entries read as zeros."""

    def __init__(self, graph, grads):
        self._graph = graph
        self._grads = grads

    def __getitem__(self, var: Var):
        self._graph._own(var)
        g = self._grads.get(var.key)
        if g is None:
            return np.zeros(var.shape, dtype=self._graph.dtype_of(var))
        return g

    def __contains__(self, var):
        return isinstance(var, Var) and var.key in self._grads

    def keys(self):
        return [Var(self._graph, n, s) for n, s in self._grads]

    def __len__(self):
        return len(self._grads)


@dataclass
class MemoryPlan:
    """Forward buffer reuse.

    ``reuse`` maps a node index to the ``(node, slot)`` whose buffer its
    in-place output takes over.
    """

    reuse: dict = field(default_factory=dict)
    peak_buffers: int = 0
    peak_buffers_without_reuse: int = 0


class Graph:
    def __init__(self, cfg: ToleranceConfig | None = None):
        self.nodes: list[Node] = []
        self._values: list[list] = []
        self.cfg = cfg
        self._dtypes: list = []

    # -- recording --------------------------------------------------------------
    def _own(self, var):
        if not isinstance(var, Var) or var.graph is not self:
            raise GraphError(f"{var!r} does not belong to this graph")
        if not (0 <= var.node < len(self.nodes)) or not (0 <= var.slot < len(self.nodes[var.node].shapes)):
            raise GraphError(f"dangling node id {var.key}")

    def dtype_of(self, var):
        return self._dtypes[var.node]

    def leaf(self, value=None, shape=None, name=None, dtype=None, constant=False) -> Var:
        """New input node, optionally bound to ``value`` right away."""
        if value is not None:
            value = dense.as_matrix(value, dtype=dtype, name=name or "leaf")
            shape = value.shape
        elif shape is None:
            raise ShapeError("a leaf needs a value or a shape")
        shape = tuple(int(s) for s in shape)
        if len(shape) != 2:
            raise ShapeError(f"leaves are matrices, got shape {shape}")
        node = Node(len(self.nodes), "leaf", {}, [], [shape], name=name, constant=constant)
        self.nodes.append(node)
        self._values.append([value])
        self._dtypes.append(np.dtype(value.dtype if value is not None else (dtype or np.float64)))
        return Var(self, node.index)

    def constant(self, value, name=None) -> Var:
        return self.leaf(value, name=name, constant=True)

    def apply(self, op_name: str, inputs, **flags):
        """Record ``op_name`` on ``inputs``; returns a Var (or a tuple for multi-output ops)."""
        op = get_op(op_name)
        for v in inputs:
            self._own(v)
        dtypes = {self.dtype_of(v) for v in inputs}
        if len(dtypes) > 1:
            dense.common_dtype(*(np.empty(0, dtype=d) for d in dtypes))
        in_shapes = [v.shape for v in inputs]
        out_shapes = op.shapes(in_shapes, **flags)
        node = Node(len(self.nodes), op_name, dict(flags), [v.key for v in inputs], [tuple(s) for s in out_shapes])
        values = [None] * op.n_outputs
        in_vals = [self._values[n][s] for n, s in node.inputs]
        if all(v is not None for v in in_vals):
            values = self._run(node, op, in_vals, out=None)
        self.nodes.append(node)
        self._values.append(list(values))
        self._dtypes.append(dtypes.pop() if dtypes else np.dtype(np.float64))
        outs = tuple(Var(self, node.index, s) for s in range(op.n_outputs))
        return outs if op.n_outputs > 1 else outs[0]

    def _run(self, node, op: OpDef, in_vals, out):
        try:
            res = op.forward(in_vals, out, **node.flags)
        except LinalgError as e:
            e.node = node.index
            msg = e.args[0] if e.args else ""
            e.args = (f"node {node.index} ({node.op}): {msg}",) + e.args[1:]
            raise
        return list(res)

    # -- evaluation -------------------------------------------------------------
    def value(self, var: Var):
        self._own(var)
        v = self._values[var.node][var.slot]
        if v is None:
            raise GraphError(f"node {var.node} ({self.nodes[var.node].op}) has no value")
        return v

    def _consumers(self):
        last_use = {}
        uses = {}
        for node in self.nodes:
            for key in node.inputs:
                last_use[key] = node.index
                uses[key] = uses.get(key, 0) + 1
        return last_use, uses

    def retained(self) -> set:
        """``(node, slot)`` keys some backward pass needs."""
        keep = set()
        for node in self.nodes:
            if node.is_leaf:
                continue
            op = get_op(node.op)
            for i in op.retained_input_slots(len(node.inputs)):
                keep.add(node.inputs[i])
            if op.retains_outputs():
                keep.update((node.index, s) for s in range(len(node.shapes)))
        return keep

    def _ancestors(self, targets):
        need = set()
        stack = [t.node for t in targets]
        while stack:
            k = stack.pop()
            if k in need:
                continue
            need.add(k)
            stack.extend(n for n, _ in self.nodes[k].inputs)
        return need

    def forward(self, bindings=None, targets=None, free_unused=False, plan: MemoryPlan | None = None):
        """Evaluate every node (or only the ancestors of ``targets``).

        Parameters
        ----------
        bindings : dict, optional
            Leaf ``Var`` (or leaf name) to value.  Leaves created with a value
            keep it unless rebound.
        free_unused : bool
            Drop values no backward pass retains once their last consumer ran.
        plan : MemoryPlan, optional
            Buffer reuse from :meth:`plan_memory`.  Values whose buffers are
            taken over are dropped.
        """
        bindings = bindings or {}
        by_name = {n.name: n.index for n in self.nodes if n.is_leaf and n.name}
        for key, val in bindings.items():
            if isinstance(key, Var):
                self._own(key)
                idx = key.node
            else:
                if key not in by_name:
                    raise GraphError(f"no leaf named {key!r}")
                idx = by_name[key]
            node = self.nodes[idx]
            if not node.is_leaf:
                raise GraphError(f"node {idx} is not a leaf")
            val = dense.as_matrix(val, dtype=self._dtypes[idx], name=node.name or f"leaf {idx}")
            if val.shape != node.shapes[0]:
                raise ShapeError(f"leaf {idx} expects shape {node.shapes[0]}, got {val.shape}")
            self._values[idx][0] = val
        need = self._ancestors(targets) if targets is not None else None
        last_use, _ = self._consumers()
        keep = self.retained() if free_unused else None
        reuse = plan.reuse if plan is not None else {}
        for node in self.nodes:
            if need is not None and node.index not in need:
                continue
            if node.is_leaf:
                if self._values[node.index][0] is None:
                    raise UnboundLeafError(f"leaf {node.index} ({node.name or 'unnamed'}) is not bound")
                continue
            op = get_op(node.op)
            in_vals = [self._values[n][s] for n, s in node.inputs]
            if any(v is None for v in in_vals):
                raise GraphError(f"node {node.index} ({node.op}) has an input without a value")
            out = None
            src = reuse.get(node.index)
            if src is not None:
                out = self._values[src[0]][src[1]]
            self._values[node.index] = self._run(node, op, in_vals, out)
            if src is not None:
                self._values[src[0]][src[1]] = None
            if free_unused:
                for key in node.inputs:
                    if last_use.get(key) == node.index and key not in keep and not self.nodes[key[0]].is_leaf:
                        self._values[key[0]][key[1]] = None
        if targets is not None:
            return [self.value(t) for t in targets]
        return None

    # -- differentiation -------------------------------------------------------
    def backward(self, loss: Var, keep_intermediate=False) -> GradStore:
        """Cotangents of every leaf (and, optionally, intermediate) value."""
        self._own(loss)
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        if self._values[loss.node][loss.slot] is None:
            raise GraphError("backward called before forward: loss has no value")
        cfg = self.cfg or ToleranceConfig.for_dtype(self.dtype_of(loss))
        store = {loss.key: [np.ones((1, 1), dtype=self.dtype_of(loss)), True]}
        for node in reversed(self.nodes[: loss.node + 1]):
            if node.is_leaf:
                continue
            keys = [(node.index, s) for s in range(len(node.shapes))]
            cots = [store[k][0] if k in store else None for k in keys]
            if all(c is None for c in cots):
                continue
            op = get_op(node.op)
            ins = [None] * len(node.inputs)
            for i in op.retained_input_slots(len(node.inputs)):
                ins[i] = self._need(node.inputs[i], node)
            outs = [None] * len(node.shapes)
            if op.retains_outputs():
                outs = [self._need(k, node) for k in keys]
            overwrite = False
            if op.overwrite_cot and not keep_intermediate:
                slot = op.inplace[0]
                overwrite = keys[slot] in store and store[keys[slot]][1]
            ctx = SimpleNamespace(flags=node.flags, in_shapes=[self.nodes[n].shapes[s] for n, s in node.inputs],
                                  out_shapes=node.shapes, cfg=cfg)
            try:
                grads = op.backward(cots, ins, outs, ctx, overwrite)
            except LinalgError as e:
                e.node = node.index
                msg = e.args[0] if e.args else ""
                e.args = (f"backward of node {node.index} ({node.op}): {msg}",) + e.args[1:]
                raise
            if not keep_intermediate:
                for k in keys:
                    store.pop(k, None)
            for key, g in zip(node.inputs, grads):
                if g is None or self.nodes[key[0]].constant:
                    continue
                owned = op.fresh_grads or overwrite
                if key in store:
                    entry = store[key]
                    if entry[1]:
                        entry[0] += g
                    else:
                        entry[0] = entry[0] + g
                        entry[1] = True
                else:
                    store[key] = [g, owned]
        grads = {k: v[0] for k, v in store.items() if keep_intermediate or self.nodes[k[0]].is_leaf}
        return GradStore(self, grads)

    def _need(self, key, node):
        v = self._values[key[0]][key[1]]
        if v is None:
            raise GraphError(
                f"backward of node {node.index} ({node.op}) needs the value of node {key[0]}, "
                "which was dropped or never computed"
            )
        return v

    # -- memory planning ---------------------------------------------------------
    def plan_memory(self, for_backward=True) -> MemoryPlan:
        """Let in-place capable outputs take over their input's buffer.

        An input buffer is reused only if it is not a leaf, this node is its
        sole and last consumer, shapes and dtypes match, and (when
        ``for_backward``) no backward pass retains it.
        """
        last_use, uses = self._consumers()
        keep = self.retained() if for_backward else set()
        plan = MemoryPlan()
        for node in self.nodes:
            if node.is_leaf:
                continue
            op = get_op(node.op)
            if op.inplace is None:
                continue
            out_slot, in_slot = op.inplace
            key = node.inputs[in_slot]
            src = self.nodes[key[0]]
            if src.is_leaf or key in keep:
                continue
            if last_use.get(key) != node.index or uses.get(key) != 1:
                continue
            if src.shapes[key[1]] != node.shapes[out_slot] or self._dtypes[key[0]] != self._dtypes[node.index]:
                continue
            plan.reuse[node.index] = key
        plan.peak_buffers = self._peak(plan.reuse, keep, last_use)
        plan.peak_buffers_without_reuse = self._peak({}, keep, last_use)
        return plan

    def _peak(self, reuse, keep, last_use):
        buf_of = {}
        live = set()
        next_id = 0
        peak = 0
        for node in self.nodes:
            for s in range(len(node.shapes)):
                key = (node.index, s)
                src = reuse.get(node.index)
                if src is not None and s == get_op(node.op).inplace[0]:
                    buf_of[key] = buf_of[src]
                else:
                    buf_of[key] = next_id
                    live.add(next_id)
                    next_id += 1
            peak = max(peak, len(live))
            for key in node.inputs:
                if last_use.get(key) == node.index and key not in keep and not self.nodes[key[0]].is_leaf:
                    if key in buf_of and not any(buf_of[k] == buf_of[key] for k in buf_of if k[0] == node.index):
                        live.discard(buf_of[key])
        return peak

    # -- debugging ------------------------------------------------------------------
    def dump(self) -> str:
        """One line per node: id, op, flags, output shapes and inputs."""
        lines = []
        for n in self.nodes:
            flags = ",".join(f"{k}={v}" for k, v in sorted(n.flags.items()))
            shapes = " ".join(f"{r}x{c}" for r, c in n.shapes)
            ins = " ".join(f"%{i}" + (f".{s}" if s else "") for i, s in n.inputs)
            label = n.op
            if n.is_leaf:
                label = "const" if n.constant else "leaf"
                if n.name:
                    label += f" {n.name}"
            lines.append(f"%{n.index} = {label}" + (f"[{flags}]" if flags else "") + (f"({ins})" if ins else "") + f" : {shapes}")
        return "\n".join(lines)
