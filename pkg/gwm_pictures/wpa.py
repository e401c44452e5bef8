"""
Reference semantics of Weighted Picture Automata.

The value of a picture is the sum, over accepted runs, of the product of
the rule weights. Runs are enumerated by row-major backtracking: the west
pole of a cell is fixed by its left neighbour (or ranges over accept_w on
the first column) and its north pole by the cell above (or accept_n on the
first row), so only rules compatible with what is already placed are tried.
"""

import itertools
import json
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError

from gwm_pictures.errors import MalformedInputError, SizeGuardError, UnknownSymbolError
from gwm_pictures.structs.automaton import Rule, Run, Wpa
from gwm_pictures.structs.model import SIDES, GwmModel
from gwm_pictures.structs.picture import BINARY_ALPHABET, Picture

MAX_BRUTEFORCE_CELLS = 25

Q0, QF = "q0", "qf"
QA_H, QA_V, QB_H, QB_V = "qa_h", "qa_v", "qb_h", "qb_v"

# Each diagram lists the admissible (west, north, east, south) poles for its label.
BS_DIAGRAMS: tuple[tuple[str, tuple[tuple[str, ...], ...]], ...] = (
    ("a", ((Q0, QA_H), (Q0, QA_H, QB_H), (QF, QA_H), (QF, QA_H))),
    ("a", ((Q0, QA_V, QB_V), (Q0, QA_V), (QF, QA_V), (QF, QA_V))),
    ("b", ((Q0, QB_H), (Q0, QA_H, QB_H), (QF, QB_H), (QF, QB_H))),
    ("b", ((Q0, QB_V, QA_V), (Q0, QB_V), (QF, QB_V), (QF, QB_V))),
)


def expand_diagram(label: str, poles: Sequence[Sequence[str]]) -> list[Rule]:
    """Every rule whose four poles are drawn from the diagram's pole sets."""
    return [Rule(label, *combination) for combination in itertools.product(*poles)]


def bars_stripes_automaton() -> Wpa:
    """
    Six-state automaton whose support is Bars & Stripes.

    Horizontal states carry the colour of a constant row east and south,
    vertical states the colour of a constant column. All weights are 1, so
    the value counts accepted runs: 2 on constant pictures, 1 on the other
    members, 0 elsewhere.
    """
    weights: dict[Rule, float] = {}
    for label, poles in BS_DIAGRAMS:
        for rule in expand_diagram(label, poles):
            weights[rule] = 1.0
    return Wpa(
        states=(Q0, QA_H, QA_V, QB_H, QB_V, QF),
        alphabet=BINARY_ALPHABET,
        weights=weights,
        accept={"w": frozenset({Q0}), "n": frozenset({Q0}), "e": frozenset({QF}), "s": frozenset({QF})},
    )


def _rule_index(automaton: Wpa) -> dict[tuple[str, str, str], list[tuple[Rule, float]]]:
    index: dict[tuple[str, str, str], list[tuple[Rule, float]]] = {}
    for rule, weight in automaton.weights.items():
        index.setdefault((rule.label, rule.west, rule.north), []).append((rule, weight))
    return index


def _check_picture(automaton: Wpa, picture: Picture) -> None:
    m, n = picture.shape
    if m * n > MAX_BRUTEFORCE_CELLS:
        raise SizeGuardError(
            f"brute-force evaluation is limited to {MAX_BRUTEFORCE_CELLS} cells, got {m}x{n}"
        )
    missing = picture.symbols() - set(automaton.alphabet)
    if missing:
        raise UnknownSymbolError(f"symbols {sorted(missing)} are not in the automaton alphabet")


def _accepted(automaton: Wpa, picture: Picture) -> Iterator[tuple[list[list[Rule]], float]]:
    m, n = picture.shape
    index = _rule_index(automaton)
    accept = {side: sorted(poles) for side, poles in automaton.accept.items()}
    labels = [[picture.symbol(i, j) for j in range(n)] for i in range(m)]
    placed: list[list[Rule]] = [[None] * n for _ in range(m)]

    def place(cell: int, weight: float):
        if cell == m * n:
            yield placed, weight
            return
        i, j = divmod(cell, n)
        wests = accept["w"] if j == 0 else (placed[i][j - 1].east,)
        norths = accept["n"] if i == 0 else (placed[i - 1][j].south,)
        for west in wests:
            for north in norths:
                for rule, rule_weight in index.get((labels[i][j], west, north), ()):
                    if j == n - 1 and rule.east not in automaton.accept["e"]:
                        continue
                    if i == m - 1 and rule.south not in automaton.accept["s"]:
                        continue
                    placed[i][j] = rule
                    yield from place(cell + 1, weight * rule_weight)
        placed[i][j] = None

    yield from place(0, 1.0)


def iter_accepting_runs(automaton: Wpa, picture: Picture) -> Iterator[Run]:
    _check_picture(automaton, picture)
    for cells, _ in _accepted(automaton, picture):
        yield Run(cells=tuple(tuple(row) for row in cells))


def evaluate_bruteforce(automaton: Wpa, picture: Picture) -> float:
    """Sum of run weights over all accepted runs; 0.0 when there is none."""
    _check_picture(automaton, picture)
    total = 0.0
    runs = 0
    for _, weight in _accepted(automaton, picture):
        total += weight
        runs += 1
    logger.debug(f"{runs} accepted run(s) on a {picture.height}x{picture.width} picture")
    return total


def compile_to_gwm(automaton: Wpa) -> GwmModel:
    """
    Equivalent GWM with one dimension per state.

    T^sigma[w, n, e, s] is the weight of rule (sigma, w, n, e, s) or 0 when
    the rule is absent; each border vector is the indicator of its
    acceptance set.
    """
    position = {state: k for k, state in enumerate(automaton.states)}
    d = len(automaton.states)
    tensors = {symbol: np.zeros((d,) * 4) for symbol in automaton.alphabet}
    for rule, weight in automaton.weights.items():
        tensors[rule.label][tuple(position[state] for state in rule[1:])] = weight
    borders = {}
    for side in SIDES:
        indicator = np.zeros(d)
        indicator[[position[state] for state in automaton.accept[side]]] = 1.0
        borders[side] = indicator
    return GwmModel.from_arrays(automaton.alphabet, tensors, borders)


def transpose_automaton(automaton: Wpa) -> Wpa:
    """The automaton whose value on a picture is the original value on its transpose."""
    return Wpa(
        states=automaton.states,
        alphabet=automaton.alphabet,
        weights={
            Rule(rule.label, rule.north, rule.west, rule.south, rule.east): weight
            for rule, weight in automaton.weights.items()
        },
        accept={
            "w": automaton.accept["n"],
            "n": automaton.accept["w"],
            "e": automaton.accept["s"],
            "s": automaton.accept["e"],
        },
    )


def scale_weights(automaton: Wpa, factor: float) -> Wpa:
    return automaton.model_copy(
        update={"weights": {rule: weight * factor for rule, weight in automaton.weights.items()}}
    )


class _AutomatonDocument(BaseModel):
    states: list[str]
    alphabet: list[str]
    accept_w: list[str]
    accept_n: list[str]
    accept_e: list[str]
    accept_s: list[str]
    rules: list[tuple[str, str, str, str, str, float]]


def save_automaton(automaton: Wpa) -> bytes:
    document = {
        "states": list(automaton.states),
        "alphabet": list(automaton.alphabet),
        **{f"accept_{side}": sorted(automaton.accept[side]) for side in SIDES},
        "rules": [[*rule, weight] for rule, weight in automaton.weights.items()],
    }
    return json.dumps(document, indent=1).encode("utf-8")


def load_automaton(stream: Union[bytes, str]) -> Wpa:
    try:
        document = _AutomatonDocument.model_validate_json(stream)
    except ValidationError as exc:
        error = exc.errors()[0]
        position = ".".join(str(part) for part in error["loc"]) or "document"
        raise MalformedInputError(f"invalid automaton file: {error['msg']}", position) from exc

    weights: dict[Rule, float] = {}
    for k, (*poles, weight) in enumerate(document.rules):
        rule = Rule(*poles)
        if rule in weights:
            raise MalformedInputError(f"rule {tuple(rule)} is listed twice", f"rules.{k}")
        weights[rule] = weight
    try:
        return Wpa(
            states=tuple(document.states),
            alphabet=tuple(document.alphabet),
            weights=weights,
            accept={side: frozenset(getattr(document, f"accept_{side}")) for side in SIDES},
        )
    except (ValidationError, ValueError) as exc:
        raise MalformedInputError(f"inconsistent automaton file: {exc}") from exc


def load_automaton_file(path: Union[str, Path]) -> Wpa:
    return load_automaton(Path(path).read_bytes())

