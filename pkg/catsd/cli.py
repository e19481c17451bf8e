#!/usr/bin/env python3

"""Command-line front end: one command per pipeline stage, plus ``demo`` and ``ablate``.

Exit codes:
    0  success
    1  gradient check failure
    2  configuration error
    3  data generation error
    4  missing or unusable input files
    5  method and hyperparameters do not fit together
"""

from __future__ import annotations

import argparse
import asyncio
from contextlib import contextmanager
import json
import logging
from pathlib import Path
import re
import sys
from typing import Iterator, Optional, Sequence, TextIO

try:
    from pydantic.v1 import ValidationError, validator
except ImportError:
    from pydantic import ValidationError, validator  # type: ignore[no-redef]

from catsd.const import CLASS_NAMES, LOGGER, Method, Split
from catsd.distill.cases import faulty_case, register_case, run_all, unregister_case
from catsd.exceptions import (
    ConfigError,
    ExceptionBase,
    InvalidWeightsFile,
    MethodConfigError,
    MissingInputError,
    PerturbationError,
    TaxonomyError,
)
from catsd.harness.config import ExperimentConfig
from catsd.harness.experiment import (
    REFERENCE_OVERRIDES,
    REFERENCE_SUITE,
    AblationRow,
    ablation_components,
    ablation_pseudo_exemplars,
    ablation_scales,
    ablation_temperatures,
    experiment_config_for,
    fitting_scale_settings,
    reference_experiment_async,
    run_continual,
    run_stage0,
)
from catsd.harness.metrics import GROUPS, ClassGroupMetrics, evaluate
from catsd.harness.perturb import FAMILIES, SEVERITIES, corruptions
from catsd.harness.report import MetricsReport, dump_predictions
from catsd.harness.robustness import RobustnessReport, robustness_report_async
from catsd.model import CatsdBaseModel
from catsd.model.manifest import DatasetManifest
from catsd.model.segnet import ModelWeights, load_weights, save_weights
from catsd.model.taxonomy import ClassTaxonomy
from catsd.synth.dataset import SuiteConfig, synth_suite_async


EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_SYNTHESIS = 3
EXIT_MISSING_INPUT = 4
EXIT_METHOD = 5

FAULT_CASE = "injected_fault"
TEACHER_WEIGHTS = "teacher.weights"
DATA_DIR = "data"


class RobustnessConfig(CatsdBaseModel):
    families: tuple[str, ...] = tuple(FAMILIES)
    severities: tuple[int, ...] = SEVERITIES

    class Config:  # noqa: D106
        extra = "forbid"

    @validator("families")
    def _families(cls, v: tuple[str, ...]) -> tuple[str, ...]:  # noqa: N805
        corruptions(v)
        return v

    @validator("severities")
    def _severities(cls, v: tuple[int, ...]) -> tuple[int, ...]:  # noqa: N805
        if not v or any(s not in SEVERITIES for s in v):
            raise ValueError(f"severities must be drawn from {SEVERITIES}")
        return v


class RunConfig(CatsdBaseModel):
    """A whole run in one JSON document; unknown keys are rejected."""

    seed: int = 0
    out_dir: str = "catsd-out"
    taxonomy: ClassTaxonomy = ClassTaxonomy()
    synth: SuiteConfig = REFERENCE_SUITE
    experiment: ExperimentConfig = ExperimentConfig().with_overrides(**REFERENCE_OVERRIDES)
    robustness: RobustnessConfig = RobustnessConfig()
    threads: Optional[int] = None

    class Config:  # noqa: D106
        extra = "forbid"

    @validator("seed")
    def _seed(cls, v: int) -> int:  # noqa: N805
        if not 0 <= v < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v

    def suite(self) -> SuiteConfig:
        return SuiteConfig(**{**self.synth.dict(), "taxonomy": self.taxonomy})

    def experiment_config(self, **changes: object) -> ExperimentConfig:
        """Experiment settings with the run's taxonomy and seed, and default dataset paths."""
        data = Path(self.out_dir) / DATA_DIR
        defaults = {
            "t0_train": str(data / f"{Split.T0_TRAIN}.json"),
            "t1_train": str(data / f"{Split.T1_TRAIN}.json"),
            "exemplar": str(data / f"{Split.EXEMPLAR}.json"),
            "val": str(data / f"{Split.VAL}.json"),
            "test": str(data / f"{Split.TEST}.json"),
        }
        fields = self.experiment.dict()
        for key, value in defaults.items():
            if fields.get(key) is None:
                fields[key] = value
        if not Path(fields["exemplar"]).is_file():
            fields["exemplar"] = None
        fields.update(taxonomy=self.taxonomy, seed=self.seed, **changes)
        try:
            return ExperimentConfig(**fields)
        except ValidationError as err:
            raise ConfigError(f"Invalid experiment settings: {_first_error(err)}") from err


def _first_error(err: ValidationError) -> str:
    first = err.errors()[0]
    where = ".".join(str(p) for p in first["loc"])
    return f"{where}: {first['msg']}"


def _line_of(text: str, loc: Sequence[object]) -> Optional[int]:
    """Line of the deepest key of ``loc`` that can be found in the document."""
    for key in reversed([k for k in loc if isinstance(k, str)]):
        match = re.search(rf'"{re.escape(key)}"\s*:', text)
        if match:
            return text.count("\n", 0, match.start()) + 1
    return None


def load_run_config(path: Optional[str]) -> RunConfig:
    """Parse a run document; errors carry the line they refer to."""
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{p}: cannot read config: {err.strerror}") from err
    try:
        document = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{p}:{err.lineno}:{err.colno}: {err.msg}", err.lineno, err.colno) from err
    if not isinstance(document, dict):
        raise ConfigError(f"{p}:1:1: config must be a JSON object", 1, 1)
    try:
        return RunConfig.parse_obj(document)
    except ValidationError as err:
        first = err.errors()[0]
        line = _line_of(text, first["loc"]) or 1
        raise ConfigError(f"{p}:{line}: {_first_error(err)}", line) from err


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def print_table(header: Sequence[str], rows: Sequence[Sequence[object]], stream: TextIO) -> None:
    """Tab-separated table, header first."""
    print("\t".join(header), file=stream)
    for row in rows:
        print("\t".join(_fmt(v) if isinstance(v, float) or v is None else str(v) for v in row), file=stream)


def _group_row(label: str, groups: dict[str, Optional[float]]) -> list[object]:
    return [label, *(groups.get(g) for g in GROUPS)]


def print_metrics(metrics: ClassGroupMetrics, stream: TextIO, label: str = "all") -> None:
    rows = [_group_row(label, metrics.group_miou)]
    rows += [_group_row(src, groups) for src, groups in metrics.per_dataset.items()]
    print_table(["dataset", *GROUPS], rows, stream)


class Runner:
    """Executes one command against a parsed run configuration."""

    def __init__(self, config: RunConfig, args: argparse.Namespace, stream: TextIO) -> None:
        self.config = config
        self.args = args
        self.out = stream
        self.out_dir = Path(config.out_dir)

    @property
    def method(self) -> str:
        return str(self.args.method or self.config.experiment.method)

    def _weights_path(self, default: str) -> Path:
        return Path(self.args.weights) if self.args.weights else self.out_dir / default

    def _load_weights(self, default: str) -> ModelWeights:
        path = self._weights_path(default)
        try:
            return load_weights(path)
        except InvalidWeightsFile as err:
            raise MissingInputError(f"Weights file {path} is unusable: {err.message}") from err

    def _test_manifest(self, experiment: ExperimentConfig) -> DatasetManifest:
        if experiment.test is None:
            raise MissingInputError("No test dataset configured")
        return DatasetManifest.read(experiment.test)

    async def synth(self) -> int:
        manifests = await synth_suite_async(
            self.config.suite(), self.config.seed, self.out_dir / DATA_DIR, threads=self.config.threads
        )
        rows = [
            [split, class_id, CLASS_NAMES.get(class_id, str(class_id)), total]
            for split, manifest in manifests.items()
            for class_id, total in sorted(manifest.class_totals.items())
        ]
        print_table(["split", "class", "name", "instances"], rows, self.out)
        return EXIT_OK

    async def train(self) -> int:
        experiment = self.config.experiment_config()
        teacher = await asyncio.to_thread(run_stage0, experiment)
        path = self.out_dir / TEACHER_WEIGHTS
        save_weights(teacher, path)
        print_table(["stage", "classes", "weights"], [["t0", len(teacher.class_list), path]], self.out)
        return EXIT_OK

    async def continual(self) -> int:
        experiment = self.config.experiment_config(method=self.method)
        teacher = self._load_weights(TEACHER_WEIGHTS)
        student = await asyncio.to_thread(run_continual, teacher, experiment)
        path = self.out_dir / f"{self.method}.weights"
        save_weights(student, path)
        print_table(["stage", "method", "classes", "weights"], [["t1", self.method, len(student.class_list), path]], self.out)
        return EXIT_OK

    async def eval(self) -> int:
        experiment = self.config.experiment_config()
        weights_path = self._weights_path(TEACHER_WEIGHTS)
        weights = self._load_weights(TEACHER_WEIGHTS)
        test = self._test_manifest(experiment)
        metrics = await asyncio.to_thread(evaluate, weights, test, self.config.taxonomy)
        report = MetricsReport.from_metrics(metrics, weights_path.stem, self.config.seed)
        report.write(self.out_dir / f"metrics-{weights_path.stem}.json")
        if self.args.dump_predictions:
            await asyncio.to_thread(dump_predictions, weights, test, self.args.dump_predictions)
        print_metrics(metrics, self.out)
        return EXIT_OK

    async def robust(self) -> int:
        experiment = self.config.experiment_config()
        weights_path = self._weights_path(TEACHER_WEIGHTS)
        weights = self._load_weights(TEACHER_WEIGHTS)
        report: RobustnessReport = await robustness_report_async(
            weights,
            self._test_manifest(experiment),
            self.config.taxonomy,
            self.config.robustness.families,
            self.config.robustness.severities,
            self.config.seed,
            self.config.threads,
        )
        MetricsReport.from_metrics(report.clean, weights_path.stem, self.config.seed, robustness=report).write(
            self.out_dir / f"robustness-{weights_path.stem}.json"
        )
        rows = [["clean", "none", 0, *(report.clean.group_miou.get(g) for g in GROUPS)]]
        rows += [[c.family, c.corruption, c.severity, *(c.metrics.group_miou.get(g) for g in GROUPS)] for c in report.cells]
        print_table(["family", "corruption", "severity", *GROUPS], rows, self.out)
        return EXIT_OK

    async def gradcheck(self) -> int:
        with _injected_fault(self.args.inject_fault):
            results = await asyncio.to_thread(run_all, 100, self.config.seed)
        rows = [[r.name, r.instances, f"{r.max_rel_error:.3e}", "pass" if r.passed else "FAIL"] for r in results]
        print_table(["loss", "instances", "max_rel_error", "result"], rows, self.out)
        return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK

    async def demo(self) -> int:
        base = self.config.experiment_config(t0_train=None, t1_train=None, exemplar=None, val=None, test=None)
        methods = [Method(self.args.method)] if self.args.method else [Method.FT, Method.CATSD]
        if Method.FT not in methods:
            methods.insert(0, Method.FT)
        result = await reference_experiment_async(
            self.out_dir / DATA_DIR, self.config.seed, self.config.suite(), base, methods, threads=self.config.threads
        )
        save_weights(result.teacher, self.out_dir / TEACHER_WEIGHTS)
        rows = [_group_row("teacher", result.teacher_metrics.group_miou)]
        for method, metrics in result.metrics.items():
            save_weights(result.students[method], self.out_dir / f"{method}.weights")
            MetricsReport.from_metrics(metrics, method, self.config.seed, forgetting=result.forgetting[method]).write(
                self.out_dir / f"metrics-{method}.json"
            )
            rows.append(_group_row(method, metrics.group_miou))
        print_table(["model", *GROUPS], rows, self.out)
        print_table(
            ["method", "old_delta", "plasticity", "rigidity"],
            [[m, f.deltas.get("old"), f.plasticity, f.rigidity] for m, f in result.forgetting.items()],
            self.out,
        )
        return EXIT_OK

    async def ablate(self) -> int:
        data = self.out_dir / DATA_DIR
        manifests = {
            split: DatasetManifest.read(data / f"{split}.json")
            for split in (Split.T1_TRAIN, Split.EXEMPLAR, Split.TEST)
            if (data / f"{split}.json").is_file()
        }
        if Split.TEST not in manifests:
            raise MissingInputError(f"No generated test split under {data}; run synth first")
        experiment = experiment_config_for(manifests, self.config.experiment_config())
        teacher = self._load_weights(TEACHER_WEIGHTS)
        test = manifests[Split.TEST]

        scale_settings = fitting_scale_settings(self.config.synth.image_size)

        def sweep() -> list[AblationRow]:
            return (
                ablation_components(teacher, experiment, test)
                + ablation_temperatures(teacher, experiment, test)
                + ablation_scales(teacher, experiment, test, scale_settings)
                + ablation_pseudo_exemplars(teacher, experiment, test)
            )

        rows = await asyncio.to_thread(sweep)
        print_table(["setting", *GROUPS], [_group_row(r.label, r.group_miou) for r in rows], self.out)
        return EXIT_OK


@contextmanager
def _injected_fault(enabled: bool) -> Iterator[None]:
    if not enabled:
        yield
        return
    register_case(FAULT_CASE, faulty_case)
    try:
        yield
    finally:
        unregister_case(FAULT_CASE)


COMMANDS = ("synth", "train", "continual", "eval", "robust", "gradcheck", "demo", "ablate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catsd",
        description=__doc__.split("\n", 1)[0],
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS, help="Pipeline stage to run")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="Override the configured seed")
    parser.add_argument("--method", choices=[m.value for m in Method], help="Continual learning method")
    parser.add_argument("--out", help="Override the configured output directory")
    parser.add_argument("--weights", help="Weights file to read (default: <out>/teacher.weights)")
    parser.add_argument("--dump-predictions", metavar="DIR", help="eval: write colorized prediction panels to DIR")
    parser.add_argument("--inject-fault", action="store_true", help="gradcheck: add a case with a wrong gradient")
    parser.add_argument("-v", "--verbose", action="store_true", help="Also log debug messages")
    return parser


def _exit_code(err: ExceptionBase) -> int:
    if isinstance(err, (ConfigError, PerturbationError)):
        return EXIT_CONFIG
    if isinstance(err, MethodConfigError):
        return EXIT_METHOD
    if isinstance(err, (MissingInputError, InvalidWeightsFile, TaxonomyError)):
        return EXIT_MISSING_INPUT
    # SynthesisError and any other library failure
    return EXIT_SYNTHESIS


async def run(argv: Optional[Sequence[str]] = None, stream: TextIO = sys.stdout) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format="%(name)s %(levelname)s %(message)s",
        level=logging.DEBUG if args.verbose else logging.WARNING,
    )
    try:
        config = load_run_config(args.config)
        overrides: dict[str, object] = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if overrides:
            try:
                config = RunConfig.parse_obj({**config.dict(), **overrides})
            except ValidationError as err:
                raise ConfigError(f"command line: {_first_error(err)}") from err
        runner = Runner(config, args, stream)
        return await getattr(runner, args.command)()
    except ExceptionBase as err:
        code = _exit_code(err)
        print(f"catsd: error: {err.message}", file=sys.stderr)
        LOGGER.debug("Command %s failed with exit code %d", args.command, code, exc_info=err)
        return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point of the CLI tool."""
    return asyncio.run(run(argv))


if __name__ == "__main__":
    sys.exit(main())
