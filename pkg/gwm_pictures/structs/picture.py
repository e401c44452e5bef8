from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from gwm_pictures.errors import MalformedInputError, UnknownSymbolError

# "a" is white, "b" is black
BINARY_ALPHABET = ("a", "b")


class Picture(BaseModel):
    """
    A non-empty m x n array of symbols.

    Cells are stored as indices into ``alphabet`` so batches of pictures of
    the same size can be stacked without re-encoding.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alphabet: tuple[str, ...] = BINARY_ALPHABET
    grid: np.ndarray

    @field_validator("grid", mode="before")
    @classmethod
    def _readonly_grid(cls, grid) -> np.ndarray:
        grid = np.array(grid, dtype=np.int16)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError(f"a picture needs a non-empty 2-D grid, got shape {grid.shape}")
        grid.setflags(write=False)
        return grid

    @model_validator(mode="after")
    def _cells_in_alphabet(self) -> "Picture":
        if self.grid.min() < 0 or self.grid.max() >= len(self.alphabet):
            raise UnknownSymbolError(
                f"grid holds codes outside the alphabet {self.alphabet}"
            )
        return self

    @classmethod
    def from_rows(
        cls, rows: Sequence[Sequence[str]], alphabet: Sequence[str] = BINARY_ALPHABET
    ) -> "Picture":
        """Build a picture from rows such as ``["ab", "ba"]`` or ``[["a", "b"], ...]``."""
        alphabet = tuple(alphabet)
        index = {symbol: code for code, symbol in enumerate(alphabet)}
        codes = []
        for row in rows:
            try:
                codes.append([index[symbol] for symbol in row])
            except KeyError as exc:
                raise UnknownSymbolError(
                    f"symbol {exc.args[0]!r} is not in the alphabet {alphabet}"
                ) from None
        if len({len(row) for row in codes}) > 1:
            raise ValueError("picture rows must all have the same width")
        return cls(alphabet=alphabet, grid=codes)

    @classmethod
    def parse(cls, text: str, alphabet: Sequence[str] = BINARY_ALPHABET) -> "Picture":
        """Parse one picture per line of single-character symbols; ``#`` lines are skipped."""
        rows = [
            line.strip()
            for line in text.splitlines()
            if line.strip() and not line.lstrip().startswith("#")
        ]
        if not rows:
            raise MalformedInputError("picture text has no rows")
        try:
            return cls.from_rows(rows, alphabet)
        except ValueError as exc:
            raise MalformedInputError(str(exc)) from exc

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def symbol(self, i: int, j: int) -> str:
        return self.alphabet[self.grid[i, j]]

    def symbols(self) -> set[str]:
        return {self.alphabet[code] for code in np.unique(self.grid)}

    def rows(self) -> list[str]:
        return ["".join(self.alphabet[code] for code in row) for row in self.grid]

    def transpose(self) -> "Picture":
        return Picture(alphabet=self.alphabet, grid=self.grid.T)

    def __str__(self) -> str:
        return "\n".join(self.rows())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Picture):
            return NotImplemented
        return self.alphabet == other.alphabet and np.array_equal(self.grid, other.grid)

    def __hash__(self) -> int:
        return hash((self.alphabet, self.grid.shape, self.grid.tobytes()))
