"""Command-line surface: run, compare, audit, project and verify
experiments from INI config files.

    repcali <subcommand> [--config FILE] [--section.key=value ...] [flags]

Subcommands: train, eval, compare, audit, project, gradcheck, gen-task.
Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
Every run echoes its effective config into the output directory; no
subcommand writes outside [out].dir.
"""

from __future__ import annotations

import sys
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_digest,
    parse_config,
    serialize_config,
)
from .csvio import provenance_line, write_table

SUBCOMMANDS = ("train", "eval", "compare", "audit", "project", "gradcheck", "gen-task")

USAGE = __doc__


class UsageError(Exception):
    pass


def _split_args(args: list[str]) -> tuple[dict[str, str], list[str]]:
    """Separate plain --flag value pairs from --section.key=value overrides."""
    flags: dict[str, str] = {}
    overrides: list[str] = []
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--"):
            raise UsageError(f"unexpected argument {arg!r}")
        body = arg[2:]
        if "=" in body:
            name = body.split("=", 1)[0]
            if "." in name:
                overrides.append(arg)
            else:
                flags[name] = body.split("=", 1)[1]
            i += 1
        elif "." in body:
            raise UsageError(f"override {arg!r} needs =value")
        else:
            if i + 1 >= len(args):
                raise UsageError(f"flag {arg!r} needs a value")
            flags[body] = args[i + 1]
            i += 2
    return flags, overrides


def _load_config(flags: dict[str, str], overrides: list[str]) -> ExperimentConfig:
    if "config" in flags:
        path = Path(flags["config"])
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        config = parse_config(path.read_text(encoding="utf-8"))
    else:
        config = ExperimentConfig().validate()
    return apply_overrides(config, overrides)


def _echo_config(config: ExperimentConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_path = out_dir / "config_echo.cfg"
    echo_path.write_text(serialize_config(config), encoding="utf-8")
    return echo_path


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_task(config: ExperimentConfig) -> int:
    from .tasks import generate_task, save_dataset

    out_dir = Path(config.out.dir)
    _echo_config(config, out_dir)
    data = generate_task(config.task_spec())
    paths = save_dataset(out_dir / "dataset", data)
    for p in paths:
        print(p)
    return 0


def _cmd_train(config: ExperimentConfig) -> int:
    from .experiment import run_multi_seed
    from .figures import render_training_curves

    out_dir = Path(config.out.dir)
    _echo_config(config, out_dir)
    results, averaged = run_multi_seed(config, out_dir=out_dir)
    for r in results:
        render_training_curves(r.train_result.log,
                               Path(r.out_dir) / "training_curves.png")
        print(f"seed {r.seed}: " + " ".join(
            f"{k}={v:.4f}" for k, v in sorted(r.test_report.items())))
    print("mean:   " + " ".join(f"{k}={v:.4f}" for k, v in sorted(averaged.items())))
    return 0


def _cmd_eval(config: ExperimentConfig, flags: dict[str, str]) -> int:
    from .checkpoint import load_checkpoint
    from .experiment import build_model
    from .tasks import generate_task
    from .trainer import evaluate

    if "checkpoint" not in flags:
        raise UsageError("eval requires --checkpoint PATH")
    split = flags.get("split", "test")
    out_dir = Path(config.out.dir)
    _echo_config(config, out_dir)
    model = build_model(config, config.train.seed)
    load_checkpoint(Path(flags["checkpoint"]), model)
    data = generate_task(config.task_spec())
    report = evaluate(model, data.split(split), with_loss=True)
    prov = provenance_line(config_digest(config), config.train.seed)
    write_table(out_dir / "eval_metrics.csv",
                ["split", "loss", "token_acc", "exact_match", "bleu4"],
                [[split, report["loss"], report["token_acc"],
                  report["exact_match"], report["bleu4"]]], prov)
    print(" ".join(f"{k}={v:.4f}" for k, v in sorted(report.items())))
    return 0


def _cmd_compare(config: ExperimentConfig) -> int:
    from .figures import render_method_comparison
    from .methods import compare_methods

    out_dir = Path(config.out.dir)
    _echo_config(config, out_dir)
    rows = compare_methods(config)
    prov = provenance_line(config_digest(config), config.train.seed)
    table = [[r.method, r.params, r.pct_of_base, r.token_acc, r.exact_match, r.bleu4]
             for r in rows]
    path = write_table(out_dir / "comparison.csv",
                       ["method", "params", "pct_of_base", "token_acc",
                        "exact_match", "bleu4"], table, prov)
    render_method_comparison(rows, out_dir / "comparison.png")
    for r in rows:
        print(f"{r.method:8s} params={r.params:<8d} pct={r.pct_of_base:.4f} "
              f"token_acc={r.token_acc:.4f}")
    print(path)
    return 0


def _cmd_audit(config: ExperimentConfig) -> int:
    from .experiment import build_model, method_spec_from
    from .methods import audit_params

    out_dir = Path(config.out.dir)
    _echo_config(config, out_dir)
    model = build_model(config, config.train.seed)
    report = audit_params(model, method_spec_from(config))
    prov = provenance_line(config_digest(config), config.train.seed)
    write_table(out_dir / "audit.csv",
                ["kind", "seed_mode", "formula_count", "registry_count",
                 "match", "pct_of_base", "literal_2dh", "literal_match"],
                [[report.kind, report.seed_mode, report.formula_count,
                  report.registry_count, report.match_flag, report.pct_of_base,
                  report.literal_2dh, report.literal_match]], prov)
    print(f"kind={report.kind} registry={report.registry_count} "
          f"formula={report.formula_count} match={report.match_flag} "
          f"pct_of_base={report.pct_of_base:.4f}%")
    if report.literal_2dh is not None:
        print(f"literal 2*d_h count = {report.literal_2dh} "
              f"(matches registry: {report.literal_match})")
    return 0


def _cmd_project(config: ExperimentConfig, flags: dict[str, str]) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .experiment import build_model
    from .figures import render_projection_panels
    from .latent import (
        compactness_stats,
        emit_plot,
        extract_latents,
        pca_project,
        save_latents,
        tsne_project,
    )
    from .tasks import generate_task

    if "before" not in flags or "after" not in flags:
        raise UsageError("project requires --before CKPT and --after CKPT")
    out_dir = Path(config.out.dir)
    _echo_config(config, out_dir)
    data = generate_task(config.task_spec())
    examples = data.dev
    n = len(examples)
    perplexity = min(30.0, (n - 1) / 3.0)
    if perplexity < 5:
        raise UsageError(f"dev split too small for t-SNE (N={n})")
    prov = provenance_line(config_digest(config), config.train.seed)
    panels = []
    stats_rows = []
    for phase, ckpt_flag in (("before", "before"), ("after", "after")):
        model = build_model(config, config.train.seed)
        load_checkpoint(Path(flags[ckpt_flag]), model)
        latents = extract_latents(model, model.calibration, examples,
                                  provenance=f"{phase}:{flags[ckpt_flag]}")
        save_latents(out_dir / f"latents_{phase}.ckpt", latents)
        pca = pca_project(latents, k=2)
        tsne = tsne_project(latents, perplexity=perplexity,
                            seed=config.train.seed)
        emit_plot(pca, latents.labels, out_dir / f"pca_{phase}")
        emit_plot(tsne, latents.labels, out_dir / f"tsne_{phase}")
        stats = compactness_stats(latents)
        stats_rows.append([phase, stats.mean_intra_class_distance,
                           stats.mean_inter_centroid_distance, stats.silhouette,
                           tsne.diagnostics["kl_final"],
                           tsne.diagnostics["kl_post_exaggeration"]])
        panels.append((f"{phase} (t-SNE)", np.asarray(tsne.coords), latents.labels))
        print(f"{phase}: intra={stats.mean_intra_class_distance:.4f} "
              f"inter={stats.mean_inter_centroid_distance:.4f} "
              f"silhouette={stats.silhouette:.4f} "
              f"kl_final={tsne.diagnostics['kl_final']:.4f}")
    write_table(out_dir / "compactness.csv",
                ["phase", "mean_intra", "mean_inter_centroid", "silhouette",
                 "tsne_kl_final", "tsne_kl_post_exaggeration"], stats_rows, prov)
    render_projection_panels(panels, out_dir / "latent_panels.png")
    return 0


def _cmd_gradcheck(config: ExperimentConfig) -> int:
    from .gradchecks import TOLERANCE, run_suite

    results = run_suite()
    worst = 0.0
    for name, err in results:
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{name:42s} {err:12.3e} {status}")
        worst = max(worst, err)
    print(f"max relative error: {worst:.3e} (tolerance {TOLERANCE:g})")
    return 0 if worst <= TOLERANCE else 2


# ---------------------------------------------------------------------------


def dispatch(argv: list[str]) -> int:
    try:
        if not argv or argv[0] in ("-h", "--help", "help"):
            print(USAGE)
            return 0 if argv else 1
        sub = argv[0]
        if sub not in SUBCOMMANDS:
            print(f"unknown subcommand {sub!r}\n{USAGE}", file=sys.stderr)
            return 1
        flags, overrides = _split_args(argv[1:])
        config = _load_config(flags, overrides)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if sub == "train":
            return _cmd_train(config)
        if sub == "eval":
            return _cmd_eval(config, flags)
        if sub == "compare":
            return _cmd_compare(config)
        if sub == "audit":
            return _cmd_audit(config)
        if sub == "project":
            return _cmd_project(config, flags)
        if sub == "gradcheck":
            return _cmd_gradcheck(config)
        if sub == "gen-task":
            return _cmd_gen_task(config)
        raise AssertionError(sub)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
