from gwm_pictures.structs.automaton import Rule, Run, Wpa
from gwm_pictures.structs.dataset import Dataset, DatasetMetadata, LabeledExample
from gwm_pictures.structs.model import SIDES, GradientAccumulator, GwmModel
from gwm_pictures.structs.picture import BINARY_ALPHABET, Picture

__all__ = [
    "BINARY_ALPHABET",
    "Dataset",
    "DatasetMetadata",
    "GradientAccumulator",
    "GwmModel",
    "LabeledExample",
    "Picture",
    "Rule",
    "Run",
    "SIDES",
    "Wpa",
]
