"""
Command line front end.

    gwm-pictures gen bs --size 4x4 -n 10000 --seed 7 -o train.txt
    gwm-pictures count sb --size 2x3
    gwm-pictures wpa bars-stripes -o bs.wpa
    gwm-pictures wpa eval bs.wpa picture.pic
    gwm-pictures wpa compile bs.wpa -o bs.gwm
    gwm-pictures gwm eval bs.gwm picture.pic
    gwm-pictures train --train train.txt --eval test=test.txt --out run/
    gwm-pictures eval run/model.json test.txt --metric accuracy
    gwm-pictures reproduce bs-table1 --seed 3 --out run/

Failures print one JSON object on stderr and exit with status 1.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from gwm_pictures import gwm, languages, wpa
from gwm_pictures.errors import SizeGuardError
from gwm_pictures.structs.dataset import Dataset
from gwm_pictures.training import TrainConfig, TrainReport, evaluate_dataset, train

PRESETS = ("bs-table1", "bs-generalize-4", "bs-generalize-5", "sb-table2")


class DatasetSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    language: Literal["bs", "sb"]
    sizes: tuple[tuple[int, int], ...]
    count: int = Field(ge=0)
    positive_fraction: float = Field(0.5, ge=0, le=1)
    distinct_positives: bool = False
    distinct_negatives: bool = True
    # Keep the examples of the training set out of this one.
    exclude_train: bool = False


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    preset: Optional[str] = None
    config: TrainConfig
    train: DatasetSpec
    evals: tuple[DatasetSpec, ...] = ()
    out: Path


def _square(sizes: Sequence[int]) -> tuple[tuple[int, int], ...]:
    return tuple((k, k) for k in sizes)


def preset_spec(
    name: str,
    out: Path,
    seed: int = 0,
    n: Optional[int] = None,
    height: Optional[int] = None,
    iterations: Optional[int] = None,
    epochs: Optional[int] = None,
) -> ExperimentSpec:
    """Settings of one of the published experiments; keyword overrides replace the defaults."""
    if epochs is not None and iterations is not None:
        raise ValueError("give either --iters or --epochs, not both")
    budget = {"epochs": epochs} if epochs is not None else {}

    if name == "bs-table1":
        if not budget:
            budget = {"iterations": 5000 if iterations is None else iterations}
        config = TrainConfig(
            dim=6, init_std=0.4, learning_rate=0.01, batch_size=100, loss="mse", seed=seed, **budget
        )
        train_spec = DatasetSpec(name="train", language="bs", sizes=_square([4]), count=n or 10000)
        evals = (
            DatasetSpec(name="test", language="bs", sizes=_square([4]), count=100, exclude_train=True),
            DatasetSpec(name="test_5x5", language="bs", sizes=_square([5]), count=100),
        )
    elif name in ("bs-generalize-4", "bs-generalize-5"):
        largest = int(name[-1])
        if not budget:
            budget = {"iterations": 2000 if iterations is None else iterations}
        config = TrainConfig(
            dim=6, init_std=0.4, learning_rate=0.001, batch_size=1000, loss="mse", seed=seed, **budget
        )
        train_spec = DatasetSpec(
            name="train", language="bs", sizes=_square(range(2, largest + 1)), count=n or 10000
        )
        evals = (
            DatasetSpec(
                name=f"test_{largest + 1}x{largest + 1}",
                language="bs",
                sizes=_square([largest + 1]),
                count=200,
            ),
        )
    elif name == "sb-table2":
        height = height or 2
        if not budget:
            budget = {"iterations": iterations} if iterations is not None else {"epochs": 10}
        config = TrainConfig(
            dim=10,
            init_std=0.2,
            learning_rate=0.01,
            batch_size=128,
            loss="ce",
            clip_norm=1.0,
            sampling="epoch",
            seed=seed,
            **budget,
        )
        train_spec = DatasetSpec(
            name="train",
            language="sb",
            sizes=tuple((height, width) for width in range(5, 16)),
            count=n or 20000,
            distinct_negatives=False,
        )
        other = 3 if height == 2 else 2
        evals = tuple(
            DatasetSpec(
                name=f"test_{m}x{width}",
                language="sb",
                sizes=((m, width),),
                count=200,
                distinct_positives=True,
                exclude_train=True,
            )
            for m, width in [(height, 10), (height, 20), (height, 50), (height, 100), (other, 10)]
        )
    else:
        raise ValueError(f"Unsupported preset: {name}; choose one of {', '.join(PRESETS)}")

    return ExperimentSpec(preset=name, config=config, train=train_spec, evals=evals, out=out)


def _generate(spec: DatasetSpec, seed: int, split: str, exclude: Optional[Dataset]) -> Dataset:
    return languages.generate_dataset(
        spec.language,
        spec.sizes,
        spec.count,
        spec.positive_fraction,
        seed=seed,
        exclude=exclude if spec.exclude_train else None,
        distinct_positives=spec.distinct_positives,
        split=split,
        distinct_negatives=spec.distinct_negatives,
    )


def _provenance(spec: ExperimentSpec) -> dict[str, object]:
    header: dict[str, object] = {"preset": spec.preset or "custom"}
    header.update(spec.config.model_dump())
    for dataset in (spec.train, *spec.evals):
        sizes = ",".join(languages.format_size(size) for size in dataset.sizes)
        header[f"data.{dataset.name}"] = (
            f"{dataset.language} {sizes} n={dataset.count} fraction={dataset.positive_fraction}"
            + (" distinct" if dataset.distinct_positives else "")
            + ("" if dataset.distinct_negatives else " repeated-negatives")
            + (" exclude=train" if dataset.exclude_train else "")
        )
    return header


def run_experiment(spec: ExperimentSpec) -> TrainReport:
    """Generate the datasets, train, and write datasets, model.json and report.csv under ``spec.out``."""
    spec.out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(spec.config.seed).spawn(1 + len(spec.evals))
    data_seeds = [int(sequence.generate_state(1)[0]) for sequence in seeds]

    train_set = _generate(spec.train, data_seeds[0], "train", None)
    languages.write_dataset_file(train_set, spec.out / f"{spec.train.name}.txt")
    eval_sets = {}
    for dataset_spec, data_seed in zip(spec.evals, data_seeds[1:]):
        eval_sets[dataset_spec.name] = _generate(dataset_spec, data_seed, "test", train_set)
        languages.write_dataset_file(eval_sets[dataset_spec.name], spec.out / f"{dataset_spec.name}.txt")

    report = train(spec.config, train_set, eval_sets)
    gwm.save_file(report.model, spec.out / "model.json")
    (spec.out / "report.csv").write_text(report.to_csv(_provenance(spec)))
    logger.info(f"Wrote {len(report.records)} report rows to {spec.out / 'report.csv'}")
    return report


def _size(text: str) -> tuple[int, int]:
    try:
        return languages.parse_size(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_range(text: str) -> list[int]:
    """``5..15``, ``2,3`` or ``2``."""
    values: list[int] = []
    try:
        for part in text.split(","):
            low, _, high = part.partition("..")
            values.extend(range(int(low), int(high or low) + 1))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N, N..M or N,M, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"ranges must hold positive integers, got {text!r}")
    return values


def _named_path(text: str) -> tuple[str, Path]:
    name, sep, path = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    return name, Path(path)


def _format_value(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        logger.info(f"Wrote {out}")


def cmd_gen(args: argparse.Namespace) -> int:
    sizes = list(args.size or [])
    if args.heights or args.widths:
        if not (args.heights and args.widths):
            raise ValueError("--heights and --widths must be given together")
        sizes += [(m, n) for m in args.heights for n in args.widths]
    if not sizes:
        raise ValueError("give at least one --size or a --heights/--widths pair")
    exclude = languages.read_dataset_file(args.exclude) if args.exclude else None
    dataset = languages.generate_dataset(
        args.language,
        sizes,
        args.n,
        args.fraction,
        seed=args.seed,
        exclude=exclude,
        distinct_positives=args.distinct_positives,
        split=args.split,
        distinct_negatives=args.distinct_negatives,
    )
    logger.info(f"Generated {args.language} dataset: {languages.balance_report(dataset)}")
    _emit(languages.write_dataset(dataset), args.out)
    return 0


def cmd_count(args: argparse.Namespace) -> int:
    m, n = args.size
    if m * n > languages.ENUMERATION_LIMIT:
        raise SizeGuardError(
            f"counting enumerates every picture, limited to {languages.ENUMERATION_LIMIT} cells, got {m}x{n}"
        )
    summary = {
        "language": args.language,
        "size": languages.format_size(args.size),
        "members": languages.count_members(args.language, m, n),
        "closed_form": languages.expected_positive_count(args.language, m, n),
    }
    print(json.dumps(summary))
    return 0


def cmd_wpa_eval(args: argparse.Namespace) -> int:
    automaton = wpa.load_automaton_file(args.automaton)
    picture = languages.read_picture(args.picture)
    print(_format_value(wpa.evaluate_bruteforce(automaton, picture)))
    return 0


def cmd_wpa_compile(args: argparse.Namespace) -> int:
    model = wpa.compile_to_gwm(wpa.load_automaton_file(args.automaton))
    gwm.save_file(model, args.out)
    return 0


def cmd_wpa_bars_stripes(args: argparse.Namespace) -> int:
    _emit(wpa.save_automaton(wpa.bars_stripes_automaton()).decode("utf-8") + "\n", args.out)
    return 0


def cmd_gwm_eval(args: argparse.Namespace) -> int:
    model = gwm.load_file(args.model)
    picture = languages.read_picture(args.picture)
    print(_format_value(gwm.evaluate(model, picture)))
    return 0


def _config_from_args(args: argparse.Namespace) -> TrainConfig:
    fields = {
        "dim": args.dim,
        "init_std": args.init_std,
        "learning_rate": args.lr,
        "batch_size": args.batch,
        "iterations": args.iters,
        "epochs": args.epochs,
        "loss": args.loss,
        "clip_norm": args.clip,
        "seed": args.seed,
        "sampling": args.sampling,
        "log_every": args.log_every,
        "threshold": args.threshold,
    }
    return TrainConfig(**{key: value for key, value in fields.items() if value is not None})


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    train_set = languages.read_dataset_file(args.train)
    eval_sets = {name: languages.read_dataset_file(path) for name, path in args.eval or []}
    report = train(config, train_set, eval_sets)
    args.out.mkdir(parents=True, exist_ok=True)
    gwm.save_file(report.model, args.out / "model.json")
    header = {"preset": "custom", **config.model_dump(), "data.train": args.train}
    (args.out / "report.csv").write_text(report.to_csv(header))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = gwm.load_file(args.model)
    dataset = languages.read_dataset_file(args.dataset)
    loss = "ce" if args.metric == "ce" else args.loss
    metrics = evaluate_dataset(model, dataset, loss, args.threshold)
    value = metrics.accuracy if args.metric == "accuracy" else metrics.loss
    print(json.dumps({args.metric: value}))
    return 0


def cmd_reproduce(args: argparse.Namespace) -> int:
    spec = preset_spec(
        args.preset,
        args.out,
        seed=args.seed,
        n=args.n,
        height=args.height,
        iterations=args.iters,
        epochs=args.epochs,
    )
    report = run_experiment(spec)
    last = report.records[-1] if report.records else None
    if last is not None:
        summary = {name: metrics._asdict() for name, metrics in last.evaluations.items()}
        print(json.dumps({"iteration": last.iteration, **summary}))
    return 0


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gwm-pictures",
        description="Graph Weighted Models and Weighted Picture Automata on binary pictures.",
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["TRACE", "DEBUG", "INFO", "WARNING", "ERROR"]
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="generate a balanced dataset")
    gen.add_argument("language", choices=sorted(languages.LANGUAGES))
    gen.add_argument("--size", type=_size, action="append", help="picture size MxN, repeatable")
    gen.add_argument("--heights", type=_int_range, help="heights, e.g. 2 or 2..3")
    gen.add_argument("--widths", type=_int_range, help="widths, e.g. 5..15")
    gen.add_argument("-n", type=int, default=1000, help="number of examples")
    gen.add_argument("--fraction", type=float, default=0.5, help="share of positives")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--distinct-positives", action="store_true")
    gen.add_argument(
        "--repeat-negatives",
        dest="distinct_negatives",
        action="store_false",
        help="allow a negative picture to appear more than once",
    )
    gen.add_argument("--exclude", type=Path, help="dataset whose pictures must not reappear")
    gen.add_argument("--split", choices=["train", "test", "eval"], default="train")
    gen.add_argument("-o", "--out", type=Path)
    gen.set_defaults(handler=cmd_gen)

    count = commands.add_parser("count", help="brute-force number of positives of one size")
    count.add_argument("language", choices=sorted(languages.LANGUAGES))
    count.add_argument("--size", type=_size, required=True, help="picture size MxN")
    count.set_defaults(handler=cmd_count)

    automata = commands.add_parser("wpa", help="weighted picture automata").add_subparsers(
        dest="action", required=True
    )
    wpa_eval = automata.add_parser("eval", help="brute-force value of a picture")
    wpa_eval.add_argument("automaton", type=Path)
    wpa_eval.add_argument("picture", type=Path)
    wpa_eval.set_defaults(handler=cmd_wpa_eval)
    wpa_compile = automata.add_parser("compile", help="compile to an equivalent GWM")
    wpa_compile.add_argument("automaton", type=Path)
    wpa_compile.add_argument("-o", "--out", type=Path, required=True)
    wpa_compile.set_defaults(handler=cmd_wpa_compile)
    bars_stripes = automata.add_parser("bars-stripes", help="write the Bars & Stripes automaton")
    bars_stripes.add_argument("-o", "--out", type=Path)
    bars_stripes.set_defaults(handler=cmd_wpa_bars_stripes)

    models = commands.add_parser("gwm", help="graph weighted models").add_subparsers(
        dest="action", required=True
    )
    gwm_eval = models.add_parser("eval", help="value of a picture")
    gwm_eval.add_argument("model", type=Path)
    gwm_eval.add_argument("picture", type=Path)
    gwm_eval.set_defaults(handler=cmd_gwm_eval)

    training = commands.add_parser("train", help="train a model on a dataset file")
    training.add_argument("--train", type=Path, required=True)
    training.add_argument("--eval", type=_named_path, action="append", help="NAME=PATH, repeatable")
    training.add_argument("--dim", type=_positive_int)
    training.add_argument("--lr", type=float)
    training.add_argument("--batch", type=_positive_int)
    budget = training.add_mutually_exclusive_group()
    budget.add_argument("--iters", type=int)
    budget.add_argument("--epochs", type=int)
    training.add_argument("--init-std", type=float)
    training.add_argument("--loss", choices=["mse", "ce"])
    training.add_argument("--clip", type=float, help="global gradient norm threshold")
    training.add_argument("--sampling", choices=["replacement", "epoch"])
    training.add_argument("--log-every", type=_positive_int)
    training.add_argument("--threshold", type=float)
    training.add_argument("--seed", type=int, default=0)
    training.add_argument("--out", type=Path, required=True)
    training.set_defaults(handler=cmd_train)

    evaluation = commands.add_parser("eval", help="metrics of a model on a dataset file")
    evaluation.add_argument("model", type=Path)
    evaluation.add_argument("dataset", type=Path)
    evaluation.add_argument("--metric", choices=["mse", "ce", "accuracy"], default="mse")
    evaluation.add_argument(
        "--loss", choices=["mse", "ce"], default="mse", help="decision rule used for accuracy"
    )
    evaluation.add_argument("--threshold", type=float, default=0.5)
    evaluation.set_defaults(handler=cmd_eval)

    reproduce = commands.add_parser("reproduce", help="run a published experiment")
    reproduce.add_argument("preset", choices=PRESETS)
    reproduce.add_argument("--seed", type=int, default=0)
    reproduce.add_argument("--n", type=_positive_int, help="training set size")
    reproduce.add_argument("--height", type=_positive_int, help="picture height for sb-table2")
    reproduce_budget = reproduce.add_mutually_exclusive_group()
    reproduce_budget.add_argument("--iters", type=int)
    reproduce_budget.add_argument("--epochs", type=int)
    reproduce.add_argument("--out", type=Path, required=True)
    reproduce.set_defaults(handler=cmd_reproduce)
    return parser


def _configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (ValueError, OSError) as exc:
        logger.debug(f"{args.command} failed: {exc!r}")
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
