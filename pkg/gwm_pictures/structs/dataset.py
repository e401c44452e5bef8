import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from gwm_pictures.structs.picture import Picture


class LabeledExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    picture: Picture
    label: float

    @field_validator("label")
    @classmethod
    def _finite(cls, label: float) -> float:
        if not math.isfinite(label):
            raise ValueError(f"labels must be finite, got {label}")
        return label


class DatasetMetadata(BaseModel):
    model_config = ConfigDict(frozen=True)

    generator: str
    sizes: tuple[tuple[int, int], ...]
    seed: Optional[int] = None
    positive_fraction: float
    split: Literal["train", "test", "eval"] = "train"


class Dataset(BaseModel):
    """Labeled pictures plus the generation metadata; a label > 0 marks a positive."""

    model_config = ConfigDict(frozen=True)

    examples: tuple[LabeledExample, ...]
    metadata: DatasetMetadata

    @model_validator(mode="after")
    def _fraction_matches_labels(self) -> "Dataset":
        actual = positive_fraction(self.examples)
        if not math.isclose(actual, self.metadata.positive_fraction, abs_tol=1e-9):
            raise ValueError(
                f"metadata claims a positive fraction of {self.metadata.positive_fraction}, "
                f"the labels give {actual}"
            )
        return self

    def __len__(self) -> int:
        return len(self.examples)

    def pictures(self) -> list[Picture]:
        return [example.picture for example in self.examples]

    def labels(self) -> np.ndarray:
        return np.array([example.label for example in self.examples], dtype=np.float64)

    @property
    def alphabet(self) -> tuple[str, ...]:
        return self.examples[0].picture.alphabet


def positive_fraction(examples) -> float:
    if not examples:
        return 0.0
    return sum(example.label > 0 for example in examples) / len(examples)
