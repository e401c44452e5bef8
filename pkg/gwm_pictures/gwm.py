"""
Evaluation and differentiation of Graph Weighted Models on pictures.

A picture's value is the full contraction of its grid network: site (i, j)
carries the tensor of its symbol, east legs meet the west legs of the right
neighbour, south legs meet the north legs of the lower neighbour and the
outer legs meet the border vectors.

The contraction is a boundary sweep. Pictures taller than wide are handled
through the transposed model, so the sweep always runs along columns and
carries a boundary over the m <= n rows. Within a column, sites are absorbed
top to bottom; each absorption consumes the oldest horizontal leg and the
pending vertical leg and appends the site's east and south legs, so the
boundary modes behave as a queue and never need an explicit permutation.
"""

import json
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import networkx as nx
import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError, field_validator

from gwm_pictures.errors import MalformedInputError, SingularMatrixError
from gwm_pictures.structs.model import SIDES, GradientAccumulator, GwmModel
from gwm_pictures.structs.picture import Picture
from gwm_pictures.tensor_core import (
    DenseTensor,
    batched_contract,
    batched_contract_vjp,
    contract,
    contract_network,
    permute,
)

# Upper bound on the entries of one boundary intermediate across a chunk.
MAX_CHUNK_ENTRIES = 1 << 21

# Transposing a picture swaps west<->north and east<->south.
_TRANSPOSED_MODES = (1, 0, 3, 2)
_TRANSPOSED_SIDES = {"w": "n", "n": "w", "e": "s", "s": "e"}

Cotangent = Callable[[np.ndarray, np.ndarray], np.ndarray]


class _Step:
    __slots__ = ("boundary", "operand", "pairs", "source")

    def __init__(self, boundary, operand, pairs, source) -> None:
        self.boundary = boundary
        self.operand = operand
        self.pairs = pairs
        self.source = source


def _sweep(
    sites: np.ndarray, borders: dict[str, np.ndarray], codes: np.ndarray, tape: Optional[list]
) -> np.ndarray:
    """
    Contract a batch of same-size pictures with rows <= columns.

    Args:
        sites: site tensors stacked by symbol code, shape (S, d, d, d, d)
        borders: side -> border vector of extent d
        codes: symbol codes, shape (batch, m, n)
        tape: when a list, every contraction step is appended for the reverse pass

    Returns:
        the picture values, shape (batch,)
    """
    batch, m, n = codes.shape
    d = sites.shape[1]
    edge = {side: np.broadcast_to(borders[side], (batch, d)) for side in SIDES}

    def step(boundary, operand, pairs, source):
        if tape is not None:
            tape.append(_Step(boundary, operand, pairs, source))
        return batched_contract(boundary, operand, pairs)

    boundary = edge["w"]
    for _ in range(m - 1):
        boundary = step(boundary, edge["w"], [], ("border", "w"))

    for j in range(n):
        boundary = step(boundary, edge["n"], [], ("border", "n"))
        for i in range(m):
            # modes: pending west legs of rows i..m-1, east legs of rows < i, north leg
            boundary = step(boundary, sites[codes[:, i, j]], [(0, 0), (m, 1)], ("site", i, j))
        boundary = step(boundary, edge["s"], [(m, 0)], ("border", "s"))

    for _ in range(m):
        boundary = step(boundary, edge["e"], [(0, 0)], ("border", "e"))
    return boundary


def _backward(
    tape: list, seed: np.ndarray, codes: np.ndarray, grads: GradientAccumulator, symbols: Sequence[str]
) -> None:
    """Propagate ``seed`` (dL/dvalue per picture) back through a recorded sweep."""
    site_grad = np.zeros((len(symbols),) + grads.tensors[symbols[0]].shape)
    adjoint = seed
    for record in reversed(tape):
        adjoint, operand_grad = batched_contract_vjp(
            record.boundary, record.operand, record.pairs, adjoint
        )
        if record.source[0] == "site":
            _, i, j = record.source
            np.add.at(site_grad, codes[:, i, j], operand_grad)
        else:
            grads.borders[record.source[1]] += operand_grad.sum(axis=0)
    # the sweep starts from a broadcast west border
    grads.borders["w"] += adjoint.sum(axis=0)
    for code, symbol in enumerate(symbols):
        grads.tensors[symbol] += site_grad[code]


def _oriented(model: GwmModel, transposed: bool):
    sites = model.site_stack()
    borders = {side: model.border(side) for side in SIDES}
    if transposed:
        sites = sites.transpose(0, *(mode + 1 for mode in _TRANSPOSED_MODES))
        borders = {side: borders[_TRANSPOSED_SIDES[side]] for side in SIDES}
    return sites, borders


def _chunk_size(d: int, m: int, n: int) -> int:
    return max(1, MAX_CHUNK_ENTRIES // d ** (min(m, n) + 1))


def value_and_grad(
    model: GwmModel, pictures: Sequence[Picture], cotangent: Optional[Cotangent] = None
) -> tuple[np.ndarray, Optional[GradientAccumulator]]:
    """
    Values of ``model`` on ``pictures`` and, optionally, a weighted gradient.

    Pictures are grouped by size and each group is swept in chunks. With a
    ``cotangent``, it is called as ``cotangent(values, indices)`` on every
    chunk and must return dL/dvalue for those pictures; the returned
    accumulator then holds dL/dtheta summed over all pictures.
    """
    values = np.empty(len(pictures))
    grads = GradientAccumulator.zeros_like(model) if cotangent is not None else None

    groups: dict[tuple[int, int], list[int]] = {}
    for index, picture in enumerate(pictures):
        groups.setdefault(picture.shape, []).append(index)

    for (m, n), indices in groups.items():
        transposed = m > n
        sites, borders = _oriented(model, transposed)
        codes = np.stack([model.encode(pictures[index]) for index in indices])
        if transposed:
            codes = codes.transpose(0, 2, 1)
        chunk = _chunk_size(model.dim, m, n)
        logger.debug(
            f"Sweeping {len(indices)} picture(s) of size {m}x{n} in chunks of {chunk}"
            + (" (transposed)" if transposed else "")
        )

        group_grads = GradientAccumulator.zeros_like(model) if grads is not None else None
        for start in range(0, len(indices), chunk):
            chunk_indices = np.asarray(indices[start : start + chunk])
            chunk_codes = codes[start : start + chunk]
            tape = [] if group_grads is not None else None
            chunk_values = _sweep(sites, borders, chunk_codes, tape)
            values[chunk_indices] = chunk_values
            if group_grads is not None:
                seed = np.asarray(cotangent(chunk_values, chunk_indices), dtype=np.float64)
                _backward(tape, seed, chunk_codes, group_grads, model.alphabet)

        if group_grads is not None:
            if transposed:
                group_grads = _transpose_grads(group_grads)
            grads.add_(group_grads)
    return values, grads


def _transpose_grads(grads: GradientAccumulator) -> GradientAccumulator:
    return GradientAccumulator(
        tensors={symbol: grad.transpose(_TRANSPOSED_MODES) for symbol, grad in grads.tensors.items()},
        borders={side: grads.borders[_TRANSPOSED_SIDES[side]] for side in SIDES},
    )


def evaluate_batch(model: GwmModel, pictures: Sequence[Picture]) -> np.ndarray:
    values, _ = value_and_grad(model, pictures)
    return values


def evaluate(model: GwmModel, picture: Picture) -> float:
    return float(evaluate_batch(model, [picture])[0])


def gradient(model: GwmModel, picture: Picture) -> tuple[float, GradientAccumulator]:
    values, grads = value_and_grad(model, [picture], lambda batch_values, _: np.ones_like(batch_values))
    return float(values[0]), grads


def transpose_model(model: GwmModel) -> GwmModel:
    """The model whose value on a picture equals ``model``'s value on its transpose."""
    return GwmModel(
        dim=model.dim,
        alphabet=model.alphabet,
        tensors={symbol: permute(tensor, _TRANSPOSED_MODES) for symbol, tensor in model.tensors.items()},
        borders={side: model.borders[_TRANSPOSED_SIDES[side]] for side in SIDES},
    )


def change_of_basis(model: GwmModel, basis: np.ndarray) -> GwmModel:
    """
    Gauge transform every tensor with an invertible d x d matrix P.

    West and north modes receive P^-1, east and south modes receive P, so
    every internal edge carries P P^-1. The west/north borders become
    P^T alpha and the east/south borders P^-1 alpha, which leaves each
    boundary contraction unchanged.
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape != (model.dim, model.dim):
        raise SingularMatrixError(f"basis must be {model.dim}x{model.dim}, got {basis.shape}")
    identity = np.eye(model.dim)
    try:
        inverse = np.linalg.solve(basis, identity)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"basis matrix is singular: {exc}") from exc
    residual = np.max(np.abs(basis @ inverse - identity))
    if not residual < 1e-8:
        raise SingularMatrixError(f"basis matrix is numerically singular (residual {residual:.3g})")

    # mode k of T goes through map[k]: new[..., j, ...] = sum_i T[..., i, ...] map[k][i, j]
    mode_maps = [
        DenseTensor.from_array(inverse.T),
        DenseTensor.from_array(inverse.T),
        DenseTensor.from_array(basis),
        DenseTensor.from_array(basis),
    ]
    tensors = {}
    for symbol, tensor in model.tensors.items():
        for mode, mode_map in enumerate(mode_maps):
            moved = contract(tensor, mode_map, [(mode, 0)])
            # the transformed mode comes out last; put it back in place
            perm = list(range(mode)) + [3] + list(range(mode, 3))
            tensor = permute(moved, perm)
        tensors[symbol] = tensor

    borders = {
        "w": DenseTensor.from_array(basis.T @ model.border("w")),
        "n": DenseTensor.from_array(basis.T @ model.border("n")),
        "e": DenseTensor.from_array(inverse @ model.border("e")),
        "s": DenseTensor.from_array(inverse @ model.border("s")),
    }
    return GwmModel(dim=model.dim, alphabet=model.alphabet, tensors=tensors, borders=borders)


def random_init(dim: int, alphabet: Iterable[str], std: float, seed: int) -> GwmModel:
    """Model with every entry drawn i.i.d. from Normal(0, std^2), reproducibly from ``seed``."""
    if dim < 1:
        raise ValueError(f"dimension must be at least 1, got {dim}")
    if not std > 0:
        raise ValueError(f"init std must be positive, got {std}")
    alphabet = tuple(alphabet)
    rng = np.random.default_rng(seed)
    tensors = {symbol: rng.normal(0.0, std, size=(dim,) * 4) for symbol in alphabet}
    borders = {side: rng.normal(0.0, std, size=dim) for side in SIDES}
    return GwmModel.from_arrays(alphabet, tensors, borders)


def picture_network(model: GwmModel, picture: Picture) -> nx.MultiGraph:
    """
    The tensor network of ``picture`` as a graph.

    Horizontal edge ("h", i, j) is the bond left of column j of row i,
    vertical edge ("v", i, j) the bond above row i of column j.
    """
    m, n = picture.shape
    graph = nx.MultiGraph()
    for i in range(m):
        for j in range(n):
            legs = [("h", i, j), ("v", i, j), ("h", i, j + 1), ("v", i + 1, j)]
            graph.add_node(("site", i, j), tensor=model.tensors[picture.symbol(i, j)], legs=legs)
    for i in range(m):
        graph.add_node(("w", i), tensor=model.borders["w"], legs=[("h", i, 0)])
        graph.add_node(("e", i), tensor=model.borders["e"], legs=[("h", i, n)])
    for j in range(n):
        graph.add_node(("n", j), tensor=model.borders["n"], legs=[("v", 0, j)])
        graph.add_node(("s", j), tensor=model.borders["s"], legs=[("v", m, j)])

    owners: dict[tuple, list] = {}
    for node, legs in graph.nodes(data="legs"):
        for leg in legs:
            owners.setdefault(leg, []).append(node)
    for leg, (u, v) in owners.items():
        graph.add_edge(u, v, key=leg)
    return graph


def evaluate_network(model: GwmModel, picture: Picture, seed: int = 0) -> float:
    """
    Reference value: contract the picture network edge by edge.

    Border edges go first, then the internal edges, each group in a seeded
    random order.
    """
    graph = picture_network(model, picture)
    keys = [key for _, _, key in graph.edges(keys=True)]
    m, n = picture.shape
    outer = [
        key for key in keys if (key[0] == "h" and key[2] in (0, n)) or (key[0] == "v" and key[1] in (0, m))
    ]
    inner = [key for key in keys if key not in outer]
    rng = np.random.default_rng(seed)
    order = [outer[k] for k in rng.permutation(len(outer))] + [
        inner[k] for k in rng.permutation(len(inner))
    ]
    return contract_network(graph, order).item()


class _ModelDocument(BaseModel):
    dim: int
    alphabet: list[str]
    tensors: dict[str, list[float]]
    borders: dict[str, list[float]]

    @field_validator("dim")
    @classmethod
    def _positive(cls, dim: int) -> int:
        if dim < 1:
            raise ValueError("dim must be positive")
        return dim


def save(model: GwmModel) -> bytes:
    document = {
        "dim": model.dim,
        "alphabet": list(model.alphabet),
        "tensors": {symbol: model.tensors[symbol].data.tolist() for symbol in model.alphabet},
        "borders": {side: model.borders[side].data.tolist() for side in SIDES},
    }
    return json.dumps(document, indent=2).encode("utf-8")


def load(stream: Union[bytes, str]) -> GwmModel:
    try:
        document = _ModelDocument.model_validate_json(stream)
    except ValidationError as exc:
        error = exc.errors()[0]
        position = ".".join(str(part) for part in error["loc"]) or "document"
        raise MalformedInputError(f"invalid model file: {error['msg']}", position) from exc

    d = document.dim
    for symbol in document.alphabet:
        if symbol not in document.tensors:
            raise MalformedInputError("missing tensor", f"tensors.{symbol}")
        if len(document.tensors[symbol]) != d**4:
            raise MalformedInputError(
                f"expected {d**4} entries, got {len(document.tensors[symbol])}", f"tensors.{symbol}"
            )
    for side in SIDES:
        if len(document.borders.get(side, [])) != d:
            raise MalformedInputError(f"expected {d} entries", f"borders.{side}")

    try:
        return GwmModel.from_arrays(
            document.alphabet,
            {symbol: np.reshape(document.tensors[symbol], (d,) * 4) for symbol in document.alphabet},
            {side: document.borders[side] for side in SIDES},
        )
    except (ValidationError, ValueError) as exc:
        raise MalformedInputError(f"inconsistent model file: {exc}", "alphabet") from exc


def save_file(model: GwmModel, path: Union[str, Path]) -> None:
    Path(path).write_bytes(save(model))
    logger.info(f"Wrote model (d={model.dim}) to {path}")


def load_file(path: Union[str, Path]) -> GwmModel:
    return load(Path(path).read_bytes())

