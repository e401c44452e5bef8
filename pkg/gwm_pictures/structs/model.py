from typing import Iterator, Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gwm_pictures.errors import ShapeMismatchError, UnknownSymbolError
from gwm_pictures.structs.picture import Picture
from gwm_pictures.tensor_core import DenseTensor

# Global mode order of every site tensor: west, north, east, south.
SIDES = ("w", "n", "e", "s")


def tensor_key(symbol: str) -> str:
    return f"T[{symbol}]"


def border_key(side: str) -> str:
    return f"alpha[{side}]"


class GwmModel(BaseModel):
    """
    Graph Weighted Model on pictures.

    One order-4 tensor per symbol with modes (west, north, east, south) and
    four border vectors keyed by side.
    """

    model_config = ConfigDict(frozen=True)

    dim: int = Field(gt=0)
    alphabet: tuple[str, ...]
    tensors: dict[str, DenseTensor]
    borders: dict[str, DenseTensor]

    @model_validator(mode="after")
    def _shapes_agree(self) -> "GwmModel":
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ValueError(f"alphabet must be non-empty without repeats, got {self.alphabet}")
        if set(self.tensors) != set(self.alphabet):
            raise UnknownSymbolError(
                f"tensors are given for {sorted(self.tensors)} but the alphabet is {self.alphabet}"
            )
        if set(self.borders) != set(SIDES):
            raise ValueError(f"borders must be keyed by {SIDES}, got {sorted(self.borders)}")
        site_shape = (self.dim,) * 4
        for symbol, tensor in self.tensors.items():
            if tensor.shape != site_shape:
                raise ShapeMismatchError(
                    f"tensor for {symbol!r} has shape {tensor.shape}, expected {site_shape}"
                )
        for side, vector in self.borders.items():
            if vector.shape != (self.dim,):
                raise ShapeMismatchError(
                    f"border {side!r} has shape {vector.shape}, expected ({self.dim},)"
                )
        return self

    @classmethod
    def from_arrays(
        cls,
        alphabet,
        tensors: Mapping[str, np.ndarray],
        borders: Mapping[str, np.ndarray],
    ) -> "GwmModel":
        borders = {side: np.asarray(vector, dtype=np.float64) for side, vector in borders.items()}
        return cls(
            dim=borders["w"].shape[0] if "w" in borders and borders["w"].ndim == 1 else 0,
            alphabet=tuple(alphabet),
            tensors={symbol: DenseTensor.from_array(tensors[symbol]) for symbol in tensors},
            borders={side: DenseTensor.from_array(borders[side]) for side in borders},
        )

    def site_stack(self) -> np.ndarray:
        """All site tensors stacked in alphabet order, shape (|alphabet|, d, d, d, d)."""
        return np.stack([self.tensors[symbol].array for symbol in self.alphabet])

    def border(self, side: str) -> np.ndarray:
        return self.borders[side].array

    def parameters(self) -> dict[str, np.ndarray]:
        params = {tensor_key(symbol): self.tensors[symbol].array for symbol in self.alphabet}
        params.update({border_key(side): self.borders[side].array for side in SIDES})
        return params

    def with_parameters(self, params: Mapping[str, np.ndarray]) -> "GwmModel":
        """Copy of this model with the parameters named in ``params`` replaced."""
        tensors = dict(self.tensors)
        borders = dict(self.borders)
        for symbol in self.alphabet:
            if tensor_key(symbol) in params:
                tensors[symbol] = DenseTensor.from_array(params[tensor_key(symbol)])
        for side in SIDES:
            if border_key(side) in params:
                borders[side] = DenseTensor.from_array(params[border_key(side)])
        return GwmModel(dim=self.dim, alphabet=self.alphabet, tensors=tensors, borders=borders)

    def encode(self, picture: Picture) -> np.ndarray:
        """Cells of ``picture`` as indices into this model's alphabet."""
        if picture.alphabet == self.alphabet:
            return picture.grid
        index = {symbol: code for code, symbol in enumerate(self.alphabet)}
        missing = picture.symbols() - set(index)
        if missing:
            raise UnknownSymbolError(
                f"symbols {sorted(missing)} are not in the model alphabet {self.alphabet}"
            )
        lookup = np.array([index.get(symbol, -1) for symbol in picture.alphabet])
        return lookup[picture.grid]


class GradientAccumulator(BaseModel):
    """Gradients of a scalar with respect to every parameter of a GwmModel."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    tensors: dict[str, np.ndarray]
    borders: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, model: GwmModel) -> "GradientAccumulator":
        return cls(
            tensors={symbol: np.zeros((model.dim,) * 4) for symbol in model.alphabet},
            borders={side: np.zeros(model.dim) for side in SIDES},
        )

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        """Gradients under the same keys as ``GwmModel.parameters``."""
        for symbol, grad in self.tensors.items():
            yield tensor_key(symbol), grad
        for side in SIDES:
            yield border_key(side), self.borders[side]

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.items())

    def matches(self, model: GwmModel) -> bool:
        params = model.parameters()
        grads = self.as_dict()
        return set(params) == set(grads) and all(
            params[key].shape == grads[key].shape for key in params
        )

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(grad * grad) for _, grad in self.items())))

    def scaled(self, factor: float) -> "GradientAccumulator":
        return GradientAccumulator(
            tensors={symbol: grad * factor for symbol, grad in self.tensors.items()},
            borders={side: grad * factor for side, grad in self.borders.items()},
        )

    def add_(self, other: "GradientAccumulator") -> "GradientAccumulator":
        """In-place sum with ``other``; returns self."""
        for symbol, grad in other.tensors.items():
            self.tensors[symbol] += grad
        for side, grad in other.borders.items():
            self.borders[side] += grad
        return self
