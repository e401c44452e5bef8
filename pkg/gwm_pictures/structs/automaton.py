from typing import NamedTuple

from pydantic import BaseModel, ConfigDict, model_validator

from gwm_pictures.errors import UnknownSymbolError
from gwm_pictures.structs.picture import Picture


class Rule(NamedTuple):
    label: str
    west: str
    north: str
    east: str
    south: str


class Wpa(BaseModel):
    """
    Weighted Picture Automaton over the reals.

    ``weights`` maps every rule of R to its weight, so the weight function is
    defined on exactly the rule set. ``accept`` maps each side (w, n, e, s) to
    its acceptance pole set.
    """

    model_config = ConfigDict(frozen=True)

    states: tuple[str, ...]
    alphabet: tuple[str, ...]
    weights: dict[Rule, float]
    accept: dict[str, frozenset[str]]

    @model_validator(mode="after")
    def _rules_use_known_states(self) -> "Wpa":
        states = set(self.states)
        if len(states) != len(self.states):
            raise ValueError(f"states must be distinct, got {self.states}")
        if set(self.accept) != {"w", "n", "e", "s"}:
            raise ValueError(f"acceptance sets must be keyed by w, n, e, s, got {sorted(self.accept)}")
        for side, poles in self.accept.items():
            if not poles <= states:
                raise ValueError(f"accept_{side} holds unknown states {sorted(poles - states)}")
        for rule in self.weights:
            if rule.label not in self.alphabet:
                raise UnknownSymbolError(f"rule {rule} uses label {rule.label!r} outside {self.alphabet}")
            unknown = set(rule[1:]) - states
            if unknown:
                raise ValueError(f"rule {rule} uses unknown states {sorted(unknown)}")
        return self

    @property
    def rules(self) -> tuple[Rule, ...]:
        return tuple(self.weights)


class Run(BaseModel):
    """An m x n assignment of rules to the cells of a picture."""

    model_config = ConfigDict(frozen=True)

    cells: tuple[tuple[Rule, ...], ...]

    def is_compatible(self, picture: Picture) -> bool:
        """Labels match the picture and neighbouring poles agree."""
        m, n = len(self.cells), len(self.cells[0])
        if (m, n) != picture.shape:
            return False
        for i, row in enumerate(self.cells):
            for j, rule in enumerate(row):
                if rule.label != picture.symbol(i, j):
                    return False
                if j + 1 < n and rule.east != row[j + 1].west:
                    return False
                if i + 1 < m and rule.south != self.cells[i + 1][j].north:
                    return False
        return True

    def is_accepted(self, automaton: Wpa) -> bool:
        """Outer poles lie in their acceptance sets."""
        accept = automaton.accept
        first, last = self.cells[0], self.cells[-1]
        return (
            all(row[0].west in accept["w"] for row in self.cells)
            and all(row[-1].east in accept["e"] for row in self.cells)
            and all(rule.north in accept["n"] for rule in first)
            and all(rule.south in accept["s"] for rule in last)
        )

    def weight(self, automaton: Wpa) -> float:
        product = 1.0
        for row in self.cells:
            for rule in row:
                product *= automaton.weights[rule]
        return product
