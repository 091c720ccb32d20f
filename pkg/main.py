#!/usr/bin/env python3
"""
Text-guided weakly semi-supervised tumor detection: command-line entry point.

    python main.py gen-data --n 200 --full-fraction 0.3 --seed 1 --out ./data/phantoms
    python main.py run-wssl --config experiment.json --full-fraction 0.3 --out ./runs/wssl
    python main.py run-baseline --mode weak-only --out ./runs/weak
    python main.py evaluate --checkpoint ./runs/wssl/checkpoints/student --compare ./runs/weak/scores.json
    python main.py plot --scores ./runs/wssl/scores.json ./runs/weak/scores.json --names wssl weak --out ./plots

Exit codes: 0 success, 2 config/usage, 3 I/O, 4 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config import DATA_DIR, EMBEDDING_DIR, N_PHANTOMS, SPLIT_RATIOS, TEXT_DIM
from exceptions import ConfigError, PipelineStageError, exit_code_for
from logger_config import setup_logger
from models.phantom_models import PhantomConfig
from models.training_models import ExperimentConfig
from services.ablation import run_ablation_grid
from services.checkpoint_service import checkpoint_summary, read_checkpoint_meta
from services.metrics_service import delong_test
from services.phantom_service import assign_supervision, generate_dataset, MANIFEST_FILE
from services.pseudo_labels import load_pseudo_masks
from services.reporting import load_reports, plot_roc, read_scores, report_frame, summary_lines, write_roc_csv, write_table
from services.text_service import pseudo_table, write_embedding_table
from services import wssl_pipeline as pipeline

logger = setup_logger("WSSL_CLI")


# ==============================================================================
# CONFIG RESOLUTION
# ==============================================================================

def _read_json(path: str) -> Dict[str, Any]:
    if not Path(path).exists():
        raise ConfigError(f"config file {path} not found")
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e


def resolve_experiment(args: argparse.Namespace) -> ExperimentConfig:
    """Config file first, then command-line flags on top; re-validated strictly"""
    data = pipeline.load_experiment_config(args.config).model_dump()

    def both(key: str, value: Any) -> None:
        for stage in ("teacher", "student"):
            data[stage][key] = value

    if args.out:
        data["run_dir"] = args.out
    if args.dataset:
        data["dataset_dir"] = args.dataset
    if args.seed is not None:
        data["seed"] = args.seed
        both("seed", args.seed)
    if args.full_fraction is not None:
        data["full_fraction"] = args.full_fraction
    if args.alpha is not None:
        data["student"]["loss"]["alpha"] = args.alpha
    if args.beta is not None:
        data["student"]["loss"]["beta"] = args.beta
    if args.lambda_ is not None:
        data["teacher"]["loss"]["lambda_"] = args.lambda_
    if args.prompts is not None:
        data["student"]["prompts"] = args.prompts
    if args.epochs is not None:
        both("epochs", args.epochs)
        if args.warmup is None:
            for stage in ("teacher", "student"):
                data[stage]["warmup_epochs"] = min(data[stage]["warmup_epochs"], args.epochs - 1)
    if args.warmup is not None:
        both("warmup_epochs", args.warmup)
    if args.batch_size is not None:
        both("batch_size", args.batch_size)
    if args.text_dim is not None:
        data["text"]["dim"] = args.text_dim
    if args.embedding_table is not None:
        data["text"]["table_path"] = args.embedding_table
    if args.threshold is not None:
        data["pseudo_threshold"] = args.threshold
    if args.bosma_filter:
        data["bosma_filter"] = True
    if args.pseudo_dir:
        data["pseudo_dir"] = args.pseudo_dir
    if args.audit:
        data["audit"] = True
    if args.no_augment:
        both("augment", False)

    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


# ==============================================================================
# SUBCOMMANDS
# ==============================================================================

def cmd_gen_data(args: argparse.Namespace) -> int:
    phantom = PhantomConfig(**_read_json(args.config)) if args.config else PhantomConfig()
    if args.seed is not None:
        phantom = phantom.model_copy(update={"seed": args.seed})
    out = args.out or DATA_DIR
    manifest = generate_dataset(phantom, args.n, tuple(args.split_ratios), phantom.seed, out)
    manifest = assign_supervision(manifest, args.full_fraction, phantom.seed)
    manifest.write(Path(out) / MANIFEST_FILE)
    logger.info(f"✅ {len(manifest.full_train())} full / {len(manifest.weak_train())} weak train records in {out}")
    return 0


def cmd_train_teacher(args: argparse.Namespace) -> int:
    ctx = pipeline.open_run(resolve_experiment(args))
    try:
        result = pipeline.train_teacher(ctx)
    finally:
        ctx.close()
    logger.info(f"✅ Teacher checkpoint: {result.checkpoint} (epoch {result.best_epoch})")
    return 0


def cmd_pseudo_label(args: argparse.Namespace) -> int:
    cfg = resolve_experiment(args)
    ctx = pipeline.open_run(cfg)
    try:
        teacher = args.teacher or str(ctx.run_dir / "checkpoints" / "teacher")
        provenance, masks = pipeline.pseudo_label(ctx, teacher)
    finally:
        ctx.close()
    logger.info(f"✅ {len(masks)} pseudo masks, provenance {provenance[:16]}")
    return 0


def cmd_train_student(args: argparse.Namespace) -> int:
    cfg = resolve_experiment(args)
    ctx = pipeline.open_run(cfg)
    try:
        manifest = pipeline.run_manifest(ctx)
        weak = manifest.weak_train()
        pseudo_dir = cfg.pseudo_dir or str(ctx.run_dir / pipeline.PSEUDO_DIR)
        pseudo_set, masks = load_pseudo_masks(pseudo_dir, [r.id for r in weak])
        records = sorted(manifest.full_train() + weak, key=lambda r: r.id)
        result = pipeline.train_student(ctx, cfg.student, records, masks)
        reports, _ = pipeline.evaluate_checkpoint(ctx, result.checkpoint)
        outcome = pipeline.RunOutcome(run_dir=str(ctx.run_dir), reports=reports,
                                      pseudo_provenance=pseudo_set.provenance_hash)
        pipeline.write_run_report(ctx, outcome, cfg.student.mode.value)
    finally:
        ctx.close()
    _log_reports(reports)
    return 0


def cmd_run_wssl(args: argparse.Namespace) -> int:
    outcome = pipeline.run_wssl(resolve_experiment(args))
    _log_reports(outcome.reports)
    return 0


def cmd_run_baseline(args: argparse.Namespace) -> int:
    outcome = pipeline.run_baseline(resolve_experiment(args), args.mode)
    _log_reports(outcome.reports)
    return 0


def cmd_run_ablation(args: argparse.Namespace) -> int:
    if Path(args.grid).exists():
        grid = _read_json(args.grid)
    else:
        try:
            grid = json.loads(args.grid)
        except json.JSONDecodeError as e:
            raise ConfigError(f"--grid is neither a file nor inline JSON: {e}") from e
    cfg = resolve_experiment(args)
    frame = run_ablation_grid(cfg, grid, cfg.run_dir, workers=args.workers)
    logger.info(f"✅ {len(frame)} ablation runs written to {cfg.run_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint = str(Path(args.checkpoint).with_suffix(""))
    meta = read_checkpoint_meta(checkpoint)
    logger.info(f"🔎 Evaluating {checkpoint}: {checkpoint_summary(meta)}")
    run_dir = Path(checkpoint).parent.parent
    if not args.out:
        args.out = str(run_dir)
    if not args.config and (run_dir / pipeline.CONFIG_FILE).exists():
        args.config = str(run_dir / pipeline.CONFIG_FILE)
    cfg = resolve_experiment(args)
    splits = ("val", "test") if args.split == "all" else (args.split,)

    ctx = pipeline.open_run(cfg)
    try:
        reports, predictions = pipeline.evaluate_checkpoint(ctx, checkpoint, splits,
                                                            pipeline.EVALUATION_SCORES_FILE)
        if args.compare:
            other = read_scores(args.compare)
            for split, report in reports.items():
                if split in other and predictions[split].det_prob is not None:
                    result = delong_test(predictions[split].scoreset(), other[split])
                    reports[split] = report.model_copy(update={"delong": result})
                    logger.info(f"📊 DeLong [{split}]: AUC {result.auc_a:.4f} vs {result.auc_b:.4f}, "
                                f"z = {result.z:.3f}, p = {result.p_value:.4f}")
        outcome = pipeline.RunOutcome(run_dir=str(ctx.run_dir), reports=reports)
        pipeline.write_run_report(ctx, outcome, "evaluate", pipeline.EVALUATION_FILE)
    finally:
        ctx.close()
    _log_reports(reports)
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.scores:
        names = args.names or [Path(p).parent.name for p in args.scores]
        if len(names) != len(args.scores):
            raise ConfigError("--names must match --scores one to one")
        curves = {}
        for name, path in zip(names, args.scores):
            scoresets = read_scores(path)
            if args.split not in scoresets:
                raise ConfigError(f"{path} has no {args.split} scores")
            curves[name] = scoresets[args.split]
            write_roc_csv(curves[name], str(out / f"roc_{name}.csv"))
        areas = plot_roc(curves, str(out / "roc.svg"), title=f"ROC ({args.split})")
        for name, area in areas.items():
            logger.info(f"📈 {name}: AUC = {area:.6f}")
    if args.reports:
        reports = load_reports(args.reports, args.split)
        write_table(report_frame(reports), str(out / "table.csv"), str(out / "table.md"))
        for line in summary_lines(reports):
            logger.info(f"📋 {line}")
    if not args.scores and not args.reports:
        raise ConfigError("plot needs --scores and/or --reports")
    return 0


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    path = args.out or str(Path(EMBEDDING_DIR) / f"pseudo_d{args.dim}.json")
    write_embedding_table(pseudo_table(args.dim), path)
    logger.info(f"✅ Embedding table (D={args.dim}) written to {path}")
    return 0


def _log_reports(reports) -> None:
    for line in summary_lines(reports):
        logger.info(f"📋 {line}")


# ==============================================================================
# PARSER
# ==============================================================================

def _experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment JSON config (unknown keys are errors)")
    parser.add_argument("--out", help="run directory")
    parser.add_argument("--dataset", help="dataset directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--full-fraction", type=float)
    parser.add_argument("--alpha", type=float, help="student text-loss weight")
    parser.add_argument("--beta", type=float, help="detection-loss weight")
    parser.add_argument("--lambda", dest="lambda_", type=float, help="teacher text-loss weight")
    parser.add_argument("--prompts", choices=["none", "det", "loc", "det+loc"])
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--text-dim", type=int)
    parser.add_argument("--embedding-table")
    parser.add_argument("--threshold", type=float, help="pseudo-mask probability threshold")
    parser.add_argument("--bosma-filter", action="store_true", help="location-matched pseudo-mask filter")
    parser.add_argument("--pseudo-dir", help="reuse saved pseudo masks")
    parser.add_argument("--audit", action="store_true", help="record every dataset array read")
    parser.add_argument("--no-augment", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wssl", description="Text-guided WSSL tumor detection")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a phantom dataset")
    gen.add_argument("--config", help="phantom JSON config")
    gen.add_argument("--n", type=int, default=N_PHANTOMS)
    gen.add_argument("--full-fraction", type=float, default=0.3)
    gen.add_argument("--split-ratios", type=float, nargs=3, default=list(SPLIT_RATIOS))
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out")
    gen.set_defaults(handler=cmd_gen_data)

    for name, handler in (("train-teacher", cmd_train_teacher), ("train-student", cmd_train_student),
                          ("run-wssl", cmd_run_wssl)):
        command = sub.add_parser(name)
        _experiment_flags(command)
        command.set_defaults(handler=handler)

    pseudo = sub.add_parser("pseudo-label", help="pseudo masks for the weak train records")
    _experiment_flags(pseudo)
    pseudo.add_argument("--teacher", help="teacher checkpoint stem")
    pseudo.set_defaults(handler=cmd_pseudo_label)

    baseline = sub.add_parser("run-baseline")
    _experiment_flags(baseline)
    baseline.add_argument("--mode", required=True,
                          help="weak-only | full-<pct> | text-<pct> | wssl-no-text | table3-a..e")
    baseline.set_defaults(handler=cmd_run_baseline)

    ablation = sub.add_parser("run-ablation")
    _experiment_flags(ablation)
    ablation.add_argument("--grid", required=True, help="grid JSON file or inline JSON")
    ablation.add_argument("--workers", type=int, default=1)
    ablation.set_defaults(handler=cmd_run_ablation)

    evaluate = sub.add_parser("evaluate")
    _experiment_flags(evaluate)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--split", choices=["val", "test", "all"], default="all")
    evaluate.add_argument("--compare", help="scores.json of another run for a DeLong test")
    evaluate.set_defaults(handler=cmd_evaluate)

    plot = sub.add_parser("plot")
    plot.add_argument("--scores", nargs="*")
    plot.add_argument("--names", nargs="*")
    plot.add_argument("--reports", nargs="*", help="report.json files for the results table")
    plot.add_argument("--split", choices=["val", "test"], default="test")
    plot.add_argument("--out", required=True)
    plot.set_defaults(handler=cmd_plot)

    export = sub.add_parser("export-embeddings")
    export.add_argument("--dim", type=int, default=TEXT_DIM)
    export.add_argument("--out")
    export.set_defaults(handler=cmd_export_embeddings)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("🛑 Interrupted")
        return 130
    except Exception as e:
        code = exit_code_for(e)
        where = f" in stage {e.stage}" if isinstance(e, PipelineStageError) else ""
        logger.error(f"💥 {args.command} failed{where}: {e}")
        return code


if __name__ == "__main__":
    sys.exit(main())
