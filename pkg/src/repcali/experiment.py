"""End-to-end experiment execution shared by the CLI and the test suite.

A run is fully determined by (config, run seed): dataset from the task
seed, model init from the run seed, method attachment, training, and
evaluation. Multi-seed experiments rerun the whole pipeline at seeds
{seed, seed+1, ...} and average the reported metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .checkpoint import save_checkpoint
from .config import ExperimentConfig, config_digest, serialize_config
from .csvio import provenance_line, write_table
from .methods import TuningMethodSpec, attach, audit_params
from .model import Seq2SeqModel
from .rng import derive
from .tasks import Dataset, generate_task
from .trainer import LOG_COLUMNS, TrainResult, evaluate, multi_seed_seeds, train


def method_spec_from(config: ExperimentConfig) -> TuningMethodSpec:
    m = config.method
    return TuningMethodSpec(kind=m.kind, d_m=m.d_m, prefix_len=m.prefix_len,
                            prompt_len=m.prompt_len, freeze_decoder=m.freeze_decoder)


def build_model(config: ExperimentConfig, run_seed: int) -> Seq2SeqModel:
    """Fresh model with the configured method attached."""
    model = Seq2SeqModel(config.model_config(), derive(run_seed, "model"))
    spec = method_spec_from(config)
    calib = config.calibration_options() if spec.kind in ("full", "repcali") else None
    attach(model, spec, derive(run_seed, "method"), calib)
    return model


@dataclass
class RunResult:
    seed: int
    train_result: TrainResult
    test_report: dict[str, float]
    model: Seq2SeqModel
    dataset: Dataset
    out_dir: Path | None = None


def run_experiment(config: ExperimentConfig, run_seed: int,
                   out_dir: Path | None = None,
                   dataset: Dataset | None = None) -> RunResult:
    if dataset is None:
        dataset = generate_task(config.task_spec())
    model = build_model(config, run_seed)
    echo = serialize_config(config)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out_dir / "model_init.ckpt", echo, step=0)
    tr = train(model, dataset, config.train, seed=run_seed)
    report = evaluate(model, dataset.test, with_loss=True)
    if out_dir is not None:
        save_checkpoint(model, out_dir / "model_final.ckpt", echo, step=tr.steps)
        prov = provenance_line(config_digest(config), run_seed)
        write_table(out_dir / "log.csv", LOG_COLUMNS, tr.log, prov)
        write_table(out_dir / "metrics.csv",
                    ["seed", "split", "loss", "token_acc", "exact_match", "bleu4"],
                    [[run_seed, "test", report["loss"], report["token_acc"],
                      report["exact_match"], report["bleu4"]]], prov)
    return RunResult(seed=run_seed, train_result=tr, test_report=report,
                     model=model, dataset=dataset, out_dir=out_dir)


def run_multi_seed(config: ExperimentConfig, out_dir: Path | None = None,
                   dataset: Dataset | None = None) -> tuple[list[RunResult], dict[str, float]]:
    if dataset is None:
        dataset = generate_task(config.task_spec())
    seeds = multi_seed_seeds(config.train.seed, config.train.seeds_n)
    results = []
    for s in seeds:
        sub = None if out_dir is None else Path(out_dir) / f"seed_{s}"
        results.append(run_experiment(config, s, out_dir=sub, dataset=dataset))
    reports = [r.test_report for r in results]
    keys = sorted(reports[0])
    averaged = {k: sum(r[k] for r in reports) / len(reports) for k in keys}
    if out_dir is not None:
        prov = provenance_line(config_digest(config), config.train.seed)
        rows = [[r.seed, "test", r.test_report["loss"], r.test_report["token_acc"],
                 r.test_report["exact_match"], r.test_report["bleu4"]] for r in results]
        rows.append(["mean", "test", averaged["loss"], averaged["token_acc"],
                     averaged["exact_match"], averaged["bleu4"]])
        write_table(Path(out_dir) / "metrics.csv",
                    ["seed", "split", "loss", "token_acc", "exact_match", "bleu4"],
                    rows, prov)
    return results, averaged
