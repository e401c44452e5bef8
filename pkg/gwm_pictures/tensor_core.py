"""
Dense real tensors and the contraction primitives GWM evaluation is built on.

Every contraction goes through the same route: permute both operands so the
contracted modes are adjacent, reshape to (batch, rows, k) and (batch, k,
cols), then a batched matrix product. The unbatched API adds a batch axis of
one.
"""

import math
from functools import reduce
from typing import Callable, Hashable, Iterable, Optional, Sequence

import networkx as nx
import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from gwm_pictures.errors import ModeOutOfRangeError, ShapeMismatchError

Pairs = Sequence[tuple[int, int]]


class DenseTensor(BaseModel):
    """
    Immutable dense tensor of 64-bit reals.

    ``data`` is the flat row-major buffer (last index fastest); an empty
    ``shape`` denotes a scalar holding exactly one value.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    shape: tuple[int, ...]
    data: np.ndarray

    @field_validator("shape")
    @classmethod
    def _positive_extents(cls, shape: tuple[int, ...]) -> tuple[int, ...]:
        if any(extent < 1 for extent in shape):
            raise ValueError(f"tensor extents must be positive, got {shape}")
        return shape

    @field_validator("data", mode="before")
    @classmethod
    def _flat_float64(cls, data) -> np.ndarray:
        flat = np.array(data, dtype=np.float64).ravel()
        flat.setflags(write=False)
        return flat

    @model_validator(mode="after")
    def _size_matches_shape(self) -> "DenseTensor":
        if math.prod(self.shape) != self.data.size:
            raise ShapeMismatchError(
                f"shape {self.shape} needs {math.prod(self.shape)} entries, "
                f"got {self.data.size}"
            )
        return self

    @classmethod
    def from_array(cls, array) -> "DenseTensor":
        array = np.asarray(array, dtype=np.float64)
        return cls(shape=array.shape, data=array)

    @classmethod
    def scalar(cls, value: float) -> "DenseTensor":
        return cls(shape=(), data=[value])

    @property
    def order(self) -> int:
        return len(self.shape)

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the data with the tensor's shape."""
        return self.data.reshape(self.shape)

    def item(self) -> float:
        if self.order != 0:
            raise ShapeMismatchError(f"tensor of order {self.order} is not a scalar")
        return float(self.data[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def _check_pairs(shape_a: Sequence[int], shape_b: Sequence[int], pairs: Pairs) -> None:
    seen_a: set[int] = set()
    seen_b: set[int] = set()
    for mode_a, mode_b in pairs:
        if not 0 <= mode_a < len(shape_a):
            raise ModeOutOfRangeError(
                f"mode {mode_a} of the first operand is out of range for order {len(shape_a)}"
            )
        if not 0 <= mode_b < len(shape_b):
            raise ModeOutOfRangeError(
                f"mode {mode_b} of the second operand is out of range for order {len(shape_b)}"
            )
        if mode_a in seen_a or mode_b in seen_b:
            raise ModeOutOfRangeError(f"pair ({mode_a}, {mode_b}) reuses a contracted mode")
        if shape_a[mode_a] != shape_b[mode_b]:
            raise ShapeMismatchError(
                f"pair ({mode_a}, {mode_b}) joins extents {shape_a[mode_a]} and {shape_b[mode_b]}"
            )
        seen_a.add(mode_a)
        seen_b.add(mode_b)


def _layout(order_a: int, order_b: int, pairs: Pairs):
    # Modes are counted without the batch axis, array axes are mode + 1.
    con_a = [mode_a + 1 for mode_a, _ in pairs]
    con_b = [mode_b + 1 for _, mode_b in pairs]
    free_a = [axis for axis in range(1, order_a + 1) if axis not in con_a]
    free_b = [axis for axis in range(1, order_b + 1) if axis not in con_b]
    return con_a, con_b, free_a, free_b


def _as_matrices(a: np.ndarray, b: np.ndarray, pairs: Pairs):
    con_a, con_b, free_a, free_b = _layout(a.ndim - 1, b.ndim - 1, pairs)
    k = math.prod(a.shape[axis] for axis in con_a)
    rows = math.prod(a.shape[axis] for axis in free_a)
    cols = math.prod(b.shape[axis] for axis in free_b)
    a_mat = a.transpose([0, *free_a, *con_a]).reshape(a.shape[0], rows, k)
    b_mat = b.transpose([0, *con_b, *free_b]).reshape(b.shape[0], k, cols)
    out_shape = (
        max(a.shape[0], b.shape[0]),
        *(a.shape[axis] for axis in free_a),
        *(b.shape[axis] for axis in free_b),
    )
    return a_mat, b_mat, out_shape


def batched_contract(a: np.ndarray, b: np.ndarray, pairs: Pairs) -> np.ndarray:
    """
    Contract two arrays that share a leading batch axis.

    Args:
        a: array of shape (batch, *modes_a)
        b: array of shape (batch, *modes_b); a batch extent of one broadcasts
        pairs: (mode of a, mode of b) pairs, modes counted after the batch axis

    Returns:
        array of shape (batch, *free modes of a, *free modes of b)
    """
    _check_pairs(a.shape[1:], b.shape[1:], pairs)
    a_mat, b_mat, out_shape = _as_matrices(a, b, pairs)
    return np.matmul(a_mat, b_mat).reshape(out_shape)


def batched_contract_vjp(
    a: np.ndarray, b: np.ndarray, pairs: Pairs, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints of both operands of ``batched_contract`` given the output adjoint."""
    con_a, con_b, free_a, free_b = _layout(a.ndim - 1, b.ndim - 1, pairs)
    a_mat, b_mat, _ = _as_matrices(a, b, pairs)
    batch = grad_out.shape[0]
    g_mat = grad_out.reshape(batch, a_mat.shape[1], b_mat.shape[2])

    grad_a = np.matmul(g_mat, b_mat.transpose(0, 2, 1))
    grad_b = np.matmul(a_mat.transpose(0, 2, 1), g_mat)

    order_a = [0, *free_a, *con_a]
    order_b = [0, *con_b, *free_b]
    grad_a = grad_a.reshape(batch, *(a.shape[axis] for axis in order_a[1:]))
    grad_b = grad_b.reshape(batch, *(b.shape[axis] for axis in order_b[1:]))
    return grad_a.transpose(np.argsort(order_a)), grad_b.transpose(np.argsort(order_b))


def contract_arrays(a: np.ndarray, b: np.ndarray, pairs: Pairs) -> np.ndarray:
    return batched_contract(a[np.newaxis], b[np.newaxis], pairs)[0]


def contract(a: DenseTensor, b: DenseTensor, pairs: Pairs) -> DenseTensor:
    """
    Sum two tensors along the paired modes.

    The result's modes are the uncontracted modes of ``a`` in order,
    followed by those of ``b``. ``pairs=[]`` is the outer product.
    """
    return DenseTensor.from_array(contract_arrays(a.array, b.array, list(pairs)))


def self_contract(a: DenseTensor, pairs: Pairs) -> DenseTensor:
    """Trace ``a`` over each pair of its own modes."""
    _check_pairs(a.shape, a.shape, pairs)
    paired = [mode for pair in pairs for mode in pair]
    if len(set(paired)) != len(paired):
        raise ModeOutOfRangeError(f"pairs {list(pairs)} reuse a mode")

    labels = list(range(a.order))
    for mode_a, mode_b in pairs:
        labels[mode_b] = labels[mode_a]
    kept = [labels[mode] for mode in range(a.order) if mode not in paired]
    return DenseTensor.from_array(np.einsum(a.array, labels, kept))


def outer(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    return DenseTensor.from_array(np.multiply.outer(a.array, b.array))


def permute(a: DenseTensor, perm: Sequence[int]) -> DenseTensor:
    if sorted(perm) != list(range(a.order)):
        raise ModeOutOfRangeError(f"{list(perm)} is not a permutation of {a.order} modes")
    return DenseTensor.from_array(a.array.transpose(perm))


def finite_difference_gradient(
    f: Callable[[DenseTensor], float], x: DenseTensor, step: float
) -> DenseTensor:
    """Central-difference estimate of the gradient of a scalar function of ``x``."""
    if step <= 0:
        raise ValueError(f"finite difference step must be positive, got {step}")

    grad = np.empty(x.data.size)
    for index in range(x.data.size):
        forward = x.data.copy()
        backward = x.data.copy()
        forward[index] += step
        backward[index] -= step
        upper = f(DenseTensor(shape=x.shape, data=forward))
        lower = f(DenseTensor(shape=x.shape, data=backward))
        grad[index] = (upper - lower) / (2 * step)
    return DenseTensor(shape=x.shape, data=grad)


def contract_network(
    network: nx.MultiGraph, edge_order: Optional[Iterable[Hashable]] = None
) -> DenseTensor:
    """
    Contract a tensor network one edge at a time.

    Each node carries a ``tensor`` (DenseTensor) and ``legs``, the edge keys
    attached to its modes in mode order. Edges are visited in ``edge_order``
    (default: graph order). Merging two nodes can turn their other shared
    edges into self-loops; those are traced right away. Whatever remains
    after the last edge is combined by outer products in node order.
    """
    graph = network.copy()
    endpoints = {key: (u, v) for u, v, key in graph.edges(keys=True)}
    order = list(edge_order) if edge_order is not None else list(endpoints)
    if set(order) != set(endpoints):
        raise ModeOutOfRangeError("edge order must list every edge of the network exactly once")

    for key in order:
        if key not in endpoints:
            # traced when an earlier merge turned it into a self-loop
            continue
        u, v = endpoints.pop(key)
        if u == v:
            _trace_loops(graph, u, [key], endpoints)
        else:
            _merge_nodes(graph, u, v, key, endpoints)

    tensors = [data["tensor"] for _, data in graph.nodes(data=True)]
    logger.debug(f"Network contracted down to {len(tensors)} component(s)")
    return reduce(outer, tensors)


def _merge_nodes(graph: nx.MultiGraph, u, v, key, endpoints: dict) -> None:
    legs_u = graph.nodes[u]["legs"]
    legs_v = graph.nodes[v]["legs"]
    merged = contract(
        graph.nodes[u]["tensor"],
        graph.nodes[v]["tensor"],
        [(legs_u.index(key), legs_v.index(key))],
    )
    legs = [leg for leg in legs_u if leg != key] + [leg for leg in legs_v if leg != key]

    graph.remove_edge(u, v, key=key)
    for _, w, other in list(graph.edges(v, keys=True)):
        target = u if w == v else w
        graph.add_edge(u, target, key=other)
        endpoints[other] = (u, target)
    graph.remove_node(v)

    graph.nodes[u]["tensor"] = merged
    graph.nodes[u]["legs"] = legs
    loops = [leg for leg in dict.fromkeys(legs) if legs.count(leg) == 2]
    if loops:
        for leg in loops:
            endpoints.pop(leg, None)
        _trace_loops(graph, u, loops, endpoints)


def _trace_loops(graph: nx.MultiGraph, node, loops: list, endpoints: dict) -> None:
    legs = graph.nodes[node]["legs"]
    pairs = []
    for leg in loops:
        first = legs.index(leg)
        pairs.append((first, legs.index(leg, first + 1)))
        graph.remove_edge(node, node, key=leg)
    graph.nodes[node]["tensor"] = self_contract(graph.nodes[node]["tensor"], pairs)
    graph.nodes[node]["legs"] = [leg for leg in legs if leg not in loops]
