"""Computation graphs: ordered nodes over declared entry inputs.

Graphs are declarative and topologically ordered by construction: every node
may only reference inputs or nodes that appear before it. Ops resolve either
in the executable catalog or in a caller-supplied set of known-but-unbacked
names (registry entries without an implementation); shapes are inferred where
a shape rule exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from safuzz.errors import GraphParseError
from safuzz.kernels import ALL_OPS
from safuzz.tensor import MAX_RANK


@dataclass(frozen=True)
class InputDecl:
    id: str
    shape: tuple[int, ...]
    bounds: Optional[tuple[float, float]] = None
    clamp: bool = False  # when set, the fuzzer keeps mutations inside bounds

    def __post_init__(self):
        if len(self.shape) > MAX_RANK:
            raise GraphParseError(f"input '{self.id}': rank exceeds {MAX_RANK}")
        if self.bounds is not None and not self.bounds[0] < self.bounds[1]:
            raise GraphParseError(f"input '{self.id}': bounds must satisfy lo < hi")


@dataclass(frozen=True, eq=False)
class Node:
    id: str
    op: str
    inputs: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)


class Graph:
    """Validated computation graph with inferred per-node shapes."""

    def __init__(
        self,
        inputs: Iterable[InputDecl],
        nodes: Iterable[Node],
        output: str,
        extra_ops: frozenset[str] = frozenset(),
    ):
        self.inputs = tuple(inputs)
        self.nodes = tuple(nodes)
        self.output = output
        self.extra_ops = extra_ops
        self.shapes: dict[str, Optional[tuple[int, ...]]] = {}
        self._validate()

    def _validate(self) -> None:
        seen: set[str] = set()
        for decl in self.inputs:
            if decl.id in seen:
                raise GraphParseError(f"duplicate id '{decl.id}'")
            seen.add(decl.id)
            self.shapes[decl.id] = tuple(decl.shape)
        for node in self.nodes:
            if node.id in seen:
                raise GraphParseError(f"duplicate id '{node.id}'")
            for ref in node.inputs:
                if ref not in seen:
                    raise GraphParseError(
                        f"node '{node.id}' references '{ref}' before its definition "
                        "(cycle or unknown id)"
                    )
            op = ALL_OPS.get(node.op)
            if op is None and node.op not in self.extra_ops:
                raise GraphParseError(f"node '{node.id}': unknown op '{node.op}'")
            if op is not None:
                if len(node.inputs) != op.arity:
                    raise GraphParseError(
                        f"node '{node.id}': op '{node.op}' takes {op.arity} operand(s), "
                        f"got {len(node.inputs)}"
                    )
                in_shapes = [self.shapes[r] for r in node.inputs]
                if any(s is None for s in in_shapes):
                    self.shapes[node.id] = None
                else:
                    try:
                        shape = op.shape_rule(node.params, *in_shapes)
                    except ValueError as exc:
                        raise GraphParseError(f"node '{node.id}': {exc}") from exc
                    self.shapes[node.id] = tuple(int(d) for d in shape)
            else:
                self.shapes[node.id] = None
            seen.add(node.id)
        if self.output not in seen:
            raise GraphParseError(f"output id '{self.output}' is not defined")

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def input_ids(self) -> list[str]:
        return [d.id for d in self.inputs]

    def shape_of(self, node_id: str) -> Optional[tuple[int, ...]]:
        return self.shapes[node_id]


def chain(ops: list[tuple[str, str, dict]], input_shape, bounds=None, name_prefix="x") -> Graph:
    """Build a single-input pipeline graph; convenient in tests.

    ops: list of (node_id, op_name, params); each node consumes the previous.
    """
    decl = InputDecl(id=name_prefix, shape=tuple(input_shape), bounds=bounds)
    nodes = []
    prev = decl.id
    for node_id, op_name, params in ops:
        nodes.append(Node(id=node_id, op=op_name, inputs=(prev,), params=params))
        prev = node_id
    return Graph([decl], nodes, prev)
