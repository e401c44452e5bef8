from gwm_pictures.gwm import evaluate, evaluate_batch, gradient, random_init
from gwm_pictures.languages import generate_dataset
from gwm_pictures.structs import Dataset, GwmModel, Picture, Wpa
from gwm_pictures.training import TrainConfig, train
from gwm_pictures.wpa import bars_stripes_automaton, compile_to_gwm, evaluate_bruteforce

__all__ = [
    "Dataset",
    "GwmModel",
    "Picture",
    "TrainConfig",
    "Wpa",
    "bars_stripes_automaton",
    "compile_to_gwm",
    "evaluate",
    "evaluate_batch",
    "evaluate_bruteforce",
    "generate_dataset",
    "gradient",
    "random_init",
    "train",
]
