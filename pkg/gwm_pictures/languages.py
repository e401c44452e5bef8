"""
Bars & Stripes and Shifting Bits: membership, targets and balanced datasets.

Pictures are over the binary alphabet ("a" white, "b" black). Shifting Bits
shifts range over 1..n (the picture width) and vacated cells are black.
"""

import math
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from loguru import logger

from gwm_pictures.errors import AlphabetError, InfeasibleRequestError, MalformedInputError
from gwm_pictures.structs.dataset import Dataset, DatasetMetadata, LabeledExample
from gwm_pictures.structs.dataset import positive_fraction as labelled_fraction
from gwm_pictures.structs.picture import BINARY_ALPHABET, Picture

WHITE, BLACK = 0, 1

# Sizes up to this many cells are enumerated exactly instead of sampled.
ENUMERATION_LIMIT = 16


def _require_binary(picture: Picture) -> np.ndarray:
    if picture.alphabet != BINARY_ALPHABET:
        raise AlphabetError(f"expected the alphabet {BINARY_ALPHABET}, got {picture.alphabet}")
    return picture.grid


def bs_membership(picture: Picture) -> bool:
    grid = _require_binary(picture)
    columns_constant = bool((grid == grid[0:1, :]).all())
    rows_constant = bool((grid == grid[:, 0:1]).all())
    return columns_constant or rows_constant


def bs_target(picture: Picture) -> float:
    """2 on constant pictures, 1 on the other Bars & Stripes members, 0 elsewhere."""
    if not bs_membership(picture):
        return 0.0
    return 2.0 if np.unique(picture.grid).size == 1 else 1.0


def _shifted(rows: np.ndarray, shift: int) -> np.ndarray:
    shifted = np.full_like(rows, BLACK)
    if shift < rows.shape[-1]:
        shifted[..., shift:] = rows[..., : rows.shape[-1] - shift]
    return shifted


def sb_membership(picture: Picture) -> bool:
    """True iff one shift s in 1..n turns every row into the next one."""
    grid = _require_binary(picture)
    m, n = grid.shape
    if m == 1:
        return True
    return any(
        np.array_equal(_shifted(grid[:-1], shift), grid[1:]) for shift in range(1, n + 1)
    )


def sb_target(picture: Picture) -> float:
    return 1.0 if sb_membership(picture) else 0.0


def sb_picture(first_row: Sequence[int], shift: int, height: int) -> Picture:
    """Stack ``height`` rows, each the previous one shifted right by ``shift``."""
    rows = [np.asarray(first_row, dtype=np.int16)]
    for _ in range(height - 1):
        rows.append(_shifted(rows[-1], shift))
    return Picture(alphabet=BINARY_ALPHABET, grid=np.stack(rows))


def all_pictures(m: int, n: int) -> Iterator[Picture]:
    """Every binary m x n picture, in increasing order of its bit pattern."""
    cells = m * n
    weights = 1 << np.arange(cells - 1, -1, -1)
    for code in range(1 << cells):
        grid = ((code & weights) > 0).astype(np.int16).reshape(m, n)
        yield Picture(alphabet=BINARY_ALPHABET, grid=grid)


class PictureLanguage:
    name: str = ""
    task: str = "regression"

    def member(self, picture: Picture) -> bool:
        raise NotImplementedError

    def target(self, picture: Picture) -> float:
        raise NotImplementedError

    def sample_positive(self, rng: np.random.Generator, m: int, n: int) -> Picture:
        raise NotImplementedError

    def positives(self, m: int, n: int) -> Optional[list[Picture]]:
        """All members of size m x n, or None when there are too many to list."""
        if m * n > ENUMERATION_LIMIT:
            return None
        return [picture for picture in all_pictures(m, n) if self.member(picture)]


class BarsAndStripes(PictureLanguage):
    name = "bs"
    task = "regression"

    def member(self, picture: Picture) -> bool:
        return bs_membership(picture)

    def target(self, picture: Picture) -> float:
        return bs_target(picture)

    def positives(self, m: int, n: int) -> list[Picture]:
        return list(_bs_positives(m, n))

    def sample_positive(self, rng: np.random.Generator, m: int, n: int) -> Picture:
        pool = _bs_positives(m, n)
        return pool[rng.integers(len(pool))]


@lru_cache(maxsize=None)
def _bs_positives(m: int, n: int) -> tuple[Picture, ...]:
    found: dict[Picture, None] = {}
    for code in range(1 << n):
        row = [(code >> (n - 1 - j)) & 1 for j in range(n)]
        found[Picture(alphabet=BINARY_ALPHABET, grid=[row] * m)] = None
    for code in range(1 << m):
        column = [(code >> (m - 1 - i)) & 1 for i in range(m)]
        found[Picture(alphabet=BINARY_ALPHABET, grid=[[bit] * n for bit in column])] = None
    return tuple(found)


class ShiftingBits(PictureLanguage):
    name = "sb"
    task = "classification"

    def member(self, picture: Picture) -> bool:
        return sb_membership(picture)

    def target(self, picture: Picture) -> float:
        return sb_target(picture)

    def sample_positive(self, rng: np.random.Generator, m: int, n: int) -> Picture:
        first_row = rng.integers(2, size=n)
        shift = int(rng.integers(1, n + 1))
        return sb_picture(first_row, shift, m)


LANGUAGES: dict[str, PictureLanguage] = {"bs": BarsAndStripes(), "sb": ShiftingBits()}


def get_language(language: Union[str, PictureLanguage]) -> PictureLanguage:
    if isinstance(language, PictureLanguage):
        return language
    try:
        return LANGUAGES[language]
    except KeyError:
        raise ValueError(f"Unsupported language: {language}") from None


def count_members(language: Union[str, PictureLanguage], m: int, n: int) -> int:
    lang = get_language(language)
    return sum(lang.member(picture) for picture in all_pictures(m, n))


def _pick_positives(
    lang: PictureLanguage,
    rng: np.random.Generator,
    size: tuple[int, int],
    need: int,
    excluded: set[Picture],
    distinct: bool,
) -> list[Picture]:
    m, n = size
    pool = lang.positives(m, n)
    if pool is None:
        return _sample_positives(lang, rng, size, need, excluded, distinct)

    if not need:
        return []
    if not pool:
        raise InfeasibleRequestError(f"the language has no positives of size {m}x{n}")
    if distinct and need > len(pool):
        raise InfeasibleRequestError(
            f"{need} distinct positives requested at size {m}x{n}, the language has only {len(pool)}"
        )
    fresh = [picture for picture in pool if picture not in excluded]
    partly_excluded = 0 < len(fresh) < len(pool)
    # only a fully used pool may overlap the excluded set
    if partly_excluded and need > len(fresh):
        raise InfeasibleRequestError(
            f"{need} positives requested at size {m}x{n}, only {len(fresh)} of the "
            f"{len(pool)} positives are outside the excluded set"
        )
    if not fresh:
        logger.warning(f"Every positive of size {m}x{n} is excluded; positives will overlap")
        fresh = list(pool)
    if distinct:
        return [fresh[k] for k in rng.choice(len(fresh), size=need, replace=False)]
    return [fresh[k] for k in rng.integers(len(fresh), size=need)]


def _sample_positives(lang, rng, size, need, excluded, distinct) -> list[Picture]:
    m, n = size
    chosen: list[Picture] = []
    seen: set[Picture] = set()
    budget = 1000 + 100 * need
    while len(chosen) < need:
        if budget == 0:
            raise InfeasibleRequestError(
                f"could not sample {need} {'distinct ' if distinct else ''}positives "
                f"of size {m}x{n} outside the excluded set"
            )
        budget -= 1
        picture = lang.sample_positive(rng, m, n)
        if picture in excluded or (distinct and picture in seen):
            continue
        seen.add(picture)
        chosen.append(picture)
    return chosen


def _pick_negatives(
    lang: PictureLanguage,
    rng: np.random.Generator,
    size: tuple[int, int],
    need: int,
    excluded: set[Picture],
    distinct: bool = True,
) -> list[Picture]:
    m, n = size
    if m * n <= ENUMERATION_LIMIT:
        positives = len(lang.positives(m, n))
        excluded_negatives = sum(
            1 for picture in excluded if picture.shape == size and not lang.member(picture)
        )
        available = (1 << (m * n)) - positives - excluded_negatives
        if need and (not available or (distinct and need > available)):
            raise InfeasibleRequestError(
                f"{need} {'distinct ' if distinct else ''}negatives requested at size {m}x{n}, "
                f"only {available} are available"
            )
        if distinct and need > available // 2:
            candidates = [
                picture
                for picture in all_pictures(m, n)
                if not lang.member(picture) and picture not in excluded
            ]
            return [candidates[k] for k in rng.choice(len(candidates), size=need, replace=False)]

    chosen: list[Picture] = []
    seen: set[Picture] = set()
    rejected = 0
    while len(chosen) < need:
        picture = Picture(alphabet=BINARY_ALPHABET, grid=rng.integers(2, size=(m, n)))
        if (distinct and picture in seen) or picture in excluded or lang.member(picture):
            rejected += 1
            continue
        seen.add(picture)
        chosen.append(picture)
    logger.debug(f"Sampled {need} negatives of size {m}x{n} ({rejected} rejected)")
    return chosen


def generate_dataset(
    language: Union[str, PictureLanguage],
    sizes: Sequence[tuple[int, int]],
    count: int,
    positive_fraction: float = 0.5,
    seed: int = 0,
    exclude: Optional[Dataset] = None,
    distinct_positives: bool = False,
    split: str = "train",
    distinct_negatives: bool = True,
) -> Dataset:
    """
    Balanced dataset of ``count`` labeled pictures.

    Every example draws its size uniformly from ``sizes``. Positives are
    sampled uniformly from the language (with replacement unless
    ``distinct_positives``), negatives by rejection from uniform pictures
    (distinct unless ``distinct_negatives`` is off). Pictures of ``exclude``
    never appear among the negatives. Positives stay outside it too, and asking for more than the
    positives left outside raises InfeasibleRequestError; only when every
    positive of a size is excluded do they overlap it.
    Labels are the language targets.
    """
    lang = get_language(language)
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError(f"positive fraction must lie in [0, 1], got {positive_fraction}")
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    sizes = [tuple(size) for size in sizes]
    if not sizes or any(m < 1 or n < 1 for m, n in sizes):
        raise ValueError(f"sizes must be a non-empty list of positive m x n, got {sizes}")

    rng = np.random.default_rng(seed)
    wanted_positives = round(count * positive_fraction)
    size_choice = rng.integers(len(sizes), size=count)
    excluded = set(exclude.pictures()) if exclude is not None else set()

    pictures: list[Picture] = []
    for k, size in enumerate(sizes):
        chosen = size_choice == k
        need_positive = int(np.count_nonzero(chosen[:wanted_positives]))
        need_negative = int(np.count_nonzero(chosen[wanted_positives:]))
        pictures += _pick_positives(lang, rng, size, need_positive, excluded, distinct_positives)
        pictures += _pick_negatives(lang, rng, size, need_negative, excluded, distinct_negatives)

    order = rng.permutation(len(pictures))
    examples = tuple(
        LabeledExample(picture=pictures[k], label=lang.target(pictures[k])) for k in order
    )
    metadata = DatasetMetadata(
        generator=lang.name,
        sizes=tuple(sizes),
        seed=seed,
        positive_fraction=labelled_fraction(examples),
        split=split,
    )
    logger.info(
        f"Generated {len(examples)} {lang.name} pictures ({wanted_positives} positive) "
        f"over sizes {', '.join(f'{m}x{n}' for m, n in sizes)}"
    )
    return Dataset(examples=examples, metadata=metadata)


def format_size(size: tuple[int, int]) -> str:
    return f"{size[0]}x{size[1]}"


def parse_size(text: str) -> tuple[int, int]:
    try:
        m, n = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"size must look like MxN, got {text!r}") from None
    if m < 1 or n < 1:
        raise ValueError(f"picture sizes must be positive, got {text!r}")
    return m, n


def write_dataset(dataset: Dataset) -> str:
    meta = dataset.metadata
    lines = [
        f"# generator: {meta.generator}",
        f"# sizes: {','.join(format_size(size) for size in meta.sizes)}",
        f"# seed: {meta.seed}",
        f"# positive_fraction: {meta.positive_fraction!r}",
        f"# split: {meta.split}",
    ]
    for example in dataset.examples:
        picture = example.picture
        lines.append(f"{picture.height} {picture.width} {example.label!r}")
        lines.extend(picture.rows())
    return "\n".join(lines) + "\n"


def read_dataset(text: str) -> Dataset:
    meta: dict[str, str] = {}
    examples: list[LabeledExample] = []
    lines = text.splitlines()
    k = 0
    while k < len(lines):
        line = lines[k].strip()
        k += 1
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
            continue
        try:
            m, n, label = line.split()
            m, n, label = int(m), int(n), float(label)
        except ValueError:
            raise MalformedInputError(f"expected 'm n label', got {line!r}", f"line {k}") from None
        rows = [row.strip() for row in lines[k : k + m]]
        if len(rows) != m or any(len(row) != n for row in rows):
            raise MalformedInputError(f"expected {m} rows of width {n}", f"line {k + 1}")
        try:
            picture = Picture.from_rows(rows, BINARY_ALPHABET)
            examples.append(LabeledExample(picture=picture, label=label))
        except ValueError as exc:
            raise MalformedInputError(str(exc), f"line {k + 1}") from None
        k += m

    try:
        seed = meta.get("seed", "None")
        metadata = DatasetMetadata(
            generator=meta.get("generator", "unknown"),
            sizes=tuple(parse_size(size) for size in meta["sizes"].split(","))
            if meta.get("sizes")
            else tuple(dict.fromkeys(example.picture.shape for example in examples)),
            seed=None if seed == "None" else int(seed),
            positive_fraction=float(meta.get("positive_fraction", labelled_fraction(examples))),
            split=meta.get("split", "train"),
        )
        return Dataset(examples=tuple(examples), metadata=metadata)
    except ValueError as exc:
        raise MalformedInputError(f"inconsistent dataset header: {exc}", "header") from None


def write_dataset_file(dataset: Dataset, path: Union[str, Path]) -> None:
    Path(path).write_text(write_dataset(dataset))
    logger.info(f"Wrote {len(dataset)} examples to {path}")


def read_dataset_file(path: Union[str, Path]) -> Dataset:
    return read_dataset(Path(path).read_text())


def read_picture(path: Union[str, Path]) -> Picture:
    return Picture.parse(Path(path).read_text())


def write_picture(picture: Picture, path: Union[str, Path]) -> None:
    Path(path).write_text(str(picture) + "\n")


def expected_positive_count(language: str, m: int, n: int) -> int:
    """Positive counts quoted for the two languages: 2^m + 2^n - 2 and n 2^n - 1."""
    if language == "bs":
        return 2**m + 2**n - 2
    return n * 2**n - 1


def balance_report(dataset: Dataset) -> dict[str, float]:
    labels = dataset.labels()
    return {
        "examples": float(len(labels)),
        "positive_fraction": dataset.metadata.positive_fraction,
        "mean_label": float(labels.mean()) if len(labels) else math.nan,
    }
