"""
WSSL Pipeline
Run-directory orchestration: supervision assignment, teacher training, pseudo
masks, student training, baselines, evaluation and teacher analysis.

Run directory layout:
    config.json  manifest.jsonl  report.json  scores.json  roc_<split>.csv
    checkpoints/ pseudo_masks/ logs/{train.jsonl, metrics.csv, audit.jsonl}
"""

import hashlib
import json
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
from pydantic import ValidationError

from config import AUDIT_ENABLED, AUDIT_LOG
from exceptions import ConfigError, PipelineStageError, RejectedInputError, StorageError
from logger_config import setup_logger
from models.eval_models import EvalReport
from models.phantom_models import Manifest, ManifestRecord, Split
from models.training_models import ExperimentConfig, PromptSet, TrainConfig, TrainMode
from models.text_models import LabelVocabulary
from services.array_store import ArrayStore
from services.checkpoint_service import load_checkpoint
from services.dataset import PreparedCase, attach_pseudo_masks, prepare_records
from services.metrics_service import (
    auc, dice_by_location, location_accuracy, mean_case_dice, roc_curve, sens_spec
)
from services.phantom_service import assign_supervision, load_manifest
from services.preprocess_service import prepare_case
from services.pseudo_labels import generate_pseudo_masks, load_pseudo_masks, pseudo_set_hash
from services.reporting import write_roc_csv, write_scores
from services.text_service import assemble_text_matrices, resolve_table
from services.trainer import Predictions, Trainer, TrainingResult, needs_masks, predict_cases

logger = setup_logger(__name__)

CONFIG_FILE = "config.json"
REPORT_FILE = "report.json"
SCORES_FILE = "scores.json"
EVALUATION_FILE = "evaluation.json"
EVALUATION_SCORES_FILE = "evaluation_scores.json"
RUN_MANIFEST_FILE = "manifest.jsonl"
PSEUDO_DIR = "pseudo_masks"

# Output location is not part of the experiment identity
HASH_EXCLUDED = {"run_dir", "name"}

BASELINE_PATTERN = re.compile(r"^(weak-only|wssl-no-text|full-\d{1,3}|text-\d{1,3}|table3-[a-e])$")


# ==============================================================================
# CONFIGURATION
# ==============================================================================

def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical sorted-key JSON (output location excluded), first 16 hex chars"""
    canonical = json.dumps(cfg.model_dump(mode="json", by_alias=True, exclude=HASH_EXCLUDED),
                           sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_experiment_config(path: Optional[str]) -> ExperimentConfig:
    """Strict JSON config; unknown keys and malformed values are config errors"""
    if path is None:
        return ExperimentConfig()
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        payload = json.loads(config_path.read_text(encoding="utf-8"))
        # a run directory's config.json wraps the resolved config
        if set(payload) == {"config", "config_hash"}:
            payload = payload["config"]
        return ExperimentConfig(**payload)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"config file {path} is invalid: {e}") from e


# ==============================================================================
# RUN CONTEXT
# ==============================================================================

@dataclass
class RunContext:
    cfg: ExperimentConfig
    run_dir: Path
    store: ArrayStore
    config_hash: str
    text_matrices: Tuple[np.ndarray, np.ndarray]
    manifest: Optional[Manifest] = None

    def close(self) -> None:
        self.store.close()


@dataclass
class RunOutcome:
    run_dir: str
    reports: Dict[str, EvalReport]
    teacher: Optional[Dict] = None
    pseudo_provenance: Optional[str] = None
    pseudo_content_hash: Optional[str] = None
    checkpoints: Dict[str, str] = field(default_factory=dict)


def open_run(cfg: ExperimentConfig) -> RunContext:
    run_dir = Path(cfg.run_dir)
    try:
        (run_dir / "logs").mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create run directory {run_dir}: {e}") from e

    digest = config_hash(cfg)
    payload = {"config": cfg.model_dump(mode="json", by_alias=True), "config_hash": digest}
    (run_dir / CONFIG_FILE).write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")

    audit_log = None
    if cfg.audit or AUDIT_ENABLED:
        audit_log = AUDIT_LOG or str(run_dir / "logs" / "audit.jsonl")
    store = ArrayStore(cfg.dataset_dir, audit_log=audit_log)

    table = resolve_table(cfg.text.table_path, cfg.text.dim, cfg.text.normalize)
    logger.info(f"📁 Run {cfg.name} -> {run_dir} (config {digest})")
    return RunContext(cfg=cfg, run_dir=run_dir, store=store, config_hash=digest,
                      text_matrices=assemble_text_matrices(table))


@contextmanager
def stage(ctx: RunContext, name: str) -> Iterator[None]:
    """Tag audit entries with the stage and attach its name to any failure"""
    previous = ctx.store.stage
    ctx.store.set_stage(name)
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as e:
        logger.error(f"❌ stage {name} failed: {e}")
        raise PipelineStageError(name, e) from e
    finally:
        ctx.store.set_stage(previous)


def run_manifest(ctx: RunContext) -> Manifest:
    """The run's supervision assignment; created once, then reused from the run directory"""
    if ctx.manifest is not None:
        return ctx.manifest
    path = ctx.run_dir / RUN_MANIFEST_FILE
    if path.exists():
        ctx.manifest = Manifest.read(path)
        if abs(ctx.manifest.full_fraction - ctx.cfg.full_fraction) > 1e-12:
            raise ConfigError(f"{path} was assigned with full_fraction {ctx.manifest.full_fraction}, "
                              f"config asks for {ctx.cfg.full_fraction}")
        return ctx.manifest
    with stage(ctx, "assign_supervision"):
        manifest = assign_supervision(load_manifest(ctx.cfg.dataset_dir), ctx.cfg.full_fraction, ctx.cfg.seed)
        manifest.write(path)
    ctx.manifest = manifest
    return manifest


def _trainer(ctx: RunContext, train: TrainConfig, name: str) -> Trainer:
    network = ctx.cfg.network_config(train, LabelVocabulary().num_locations)
    return Trainer(train, network, str(ctx.run_dir), name, augment=ctx.cfg.augment,
                   text_matrices=ctx.text_matrices, config_hash=ctx.config_hash)


def _val_cases(ctx: RunContext, with_masks: bool) -> List[PreparedCase]:
    return prepare_records(ctx.store, run_manifest(ctx).split(Split.VAL), ctx.cfg.roi, with_masks=with_masks)


# ==============================================================================
# STAGES
# ==============================================================================

def train_teacher(ctx: RunContext) -> TrainingResult:
    """Step 1: segmentation teacher on the fully supervised train records"""
    with stage(ctx, "train_teacher"):
        full = run_manifest(ctx).full_train()
        if not full:
            raise ConfigError("no fully supervised train records for the teacher")
        diagnoses = {r.diagnosis for r in full}
        if diagnoses != {0, 1}:
            raise ConfigError("the teacher needs full records with and without tumors")
        train = ctx.cfg.teacher.model_copy(update={"mode": TrainMode.TEACHER})
        cases = prepare_records(ctx.store, full, ctx.cfg.roi)
        return _trainer(ctx, train, "teacher").fit(cases, _val_cases(ctx, with_masks=True))


def pseudo_label(ctx: RunContext, teacher_ckpt: str) -> Tuple[str, Dict[str, np.ndarray]]:
    """Step 1b: pseudo masks for every weak train record; returns (provenance hash, masks)"""
    with stage(ctx, "pseudo_label"):
        weak = run_manifest(ctx).weak_train()
        out_dir = ctx.run_dir / PSEUDO_DIR
        generate_pseudo_masks(teacher_ckpt, weak, ctx.store, ctx.cfg.roi, str(out_dir),
                              threshold=ctx.cfg.pseudo_threshold, filter_by_location=ctx.cfg.bosma_filter,
                              save_probabilities=ctx.cfg.save_probabilities,
                              batch_size=ctx.cfg.teacher.batch_size)
        pseudo, masks = load_pseudo_masks(str(out_dir), [r.id for r in weak])
        return pseudo.provenance_hash, masks


def train_student(ctx: RunContext, train: TrainConfig, records: List[ManifestRecord],
                  pseudo: Optional[Dict[str, np.ndarray]], name: str = "student") -> TrainingResult:
    """Step 2: joint network on `records`; weak records train on their pseudo masks"""
    with stage(ctx, f"train_{name}"):
        with_masks = needs_masks(train)
        cases = prepare_records(ctx.store, records, ctx.cfg.roi, with_masks=with_masks)
        if with_masks:
            cases = attach_pseudo_masks(cases, pseudo or {})
        return _trainer(ctx, train, name).fit(cases, _val_cases(ctx, with_masks=with_masks))


# ==============================================================================
# EVALUATION
# ==============================================================================

def build_report(preds: Predictions, cases: List[PreparedCase], split: str, digest: str) -> EvalReport:
    report = {"split": split, "n_cases": len(cases), "config_hash": digest}
    if preds.seg_prob is not None:
        pairs = [(p > 0.5, c.mask) for p, c in zip(preds.seg_prob, cases) if c.mask is not None]
        report["dice_overall"] = mean_case_dice(pairs)
        report["dice_by_location"] = dice_by_location(pairs, [c.location for c in cases if c.mask is not None])
    if preds.det_prob is not None:
        scoreset = preds.scoreset()
        report["auc"] = auc(scoreset)
        report["sensitivity"], report["specificity"] = sens_spec(scoreset)
        report["roc_points"] = roc_curve(scoreset)
    if preds.text_det_prob is not None:
        report["text_det_auc"] = auc(preds.scoreset(text=True))
    if preds.loc_pred is not None:
        report["location_accuracy"] = location_accuracy(preds.loc_pred, preds.location)
    return EvalReport(**report)


def evaluate_checkpoint(ctx: RunContext, checkpoint: str,
                        splits: Tuple[str, ...] = ("val", "test"),
                        scores_file: str = SCORES_FILE) -> Tuple[Dict[str, EvalReport], Dict[str, Predictions]]:
    """Reports, score files and ROC exports for the selected checkpoint"""
    with stage(ctx, "evaluate"):
        net, _ = load_checkpoint(checkpoint)
        e_det, e_loc = (None, None)
        if net.det_projector is not None:
            e_det, e_loc = (torch.tensor(np.asarray(m), dtype=torch.float32) for m in ctx.text_matrices)
        reports, predictions = {}, {}
        for split in splits:
            cases = prepare_records(ctx.store, run_manifest(ctx).split(Split(split)), ctx.cfg.roi,
                                    with_masks=net.seg_head is not None)
            preds = predict_cases(net, cases, ctx.cfg.student.batch_size, e_det, e_loc)
            reports[split] = build_report(preds, cases, split, ctx.config_hash)
            predictions[split] = preds
            if preds.det_prob is not None:
                write_roc_csv(preds.scoreset(), str(ctx.run_dir / f"roc_{split}.csv"))
        scored = {split: p.scoreset() for split, p in predictions.items() if p.det_prob is not None}
        if scored:
            write_scores(scored, str(ctx.run_dir / scores_file))
        return reports, predictions


def analyze_teacher(ctx: RunContext, teacher_ckpt: str) -> Dict:
    """
    Teacher Dice on the hidden masks of the weak train records. Runs after all
    training; every hidden-mask read is tagged `analysis` in the audit log.
    """
    with stage(ctx, "analysis"):
        net, _ = load_checkpoint(teacher_ckpt)
        weak = run_manifest(ctx).weak_train()
        cases = []
        for record in weak:
            volume = ctx.store.read(record.volume, purpose="analysis")
            organ = ctx.store.read(record.organ_mask, purpose="analysis")
            hidden = ctx.store.read(ArrayStore.hidden_mask_path(record.id), purpose="analysis")
            volume, organ, mask = prepare_case(volume, organ, hidden, ctx.cfg.roi)
            cases.append(PreparedCase(record.id, volume, organ, mask, record.diagnosis,
                                      record.location, record.supervision))
        preds = predict_cases(net, cases, ctx.cfg.teacher.batch_size)
        pairs = [(p > 0.5, c.mask) for p, c in zip(preds.seg_prob or [], cases)]
        result = {"n_cases": len(cases), "dice_overall": mean_case_dice(pairs),
                  **{f"dice_{k}": v for k, v in dice_by_location(pairs, [c.location for c in cases]).items()}}
        logger.info(f"🔬 Teacher Dice on weak masks: {result['dice_overall']}")
        return result


def write_run_report(ctx: RunContext, outcome: RunOutcome, mode: str, filename: str = REPORT_FILE) -> None:
    payload = {split: report.model_dump(mode="json") for split, report in outcome.reports.items()}
    payload.update({
        "config_hash": ctx.config_hash,
        "mode": mode,
        "teacher_analysis": outcome.teacher,
        "pseudo_provenance": outcome.pseudo_provenance,
        "pseudo_content_hash": outcome.pseudo_content_hash,
    })
    (ctx.run_dir / filename).write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")


# ==============================================================================
# ENTRY POINTS
# ==============================================================================

def _execute(cfg: ExperimentConfig, student: TrainConfig, full_only: bool, label: str) -> RunOutcome:
    ctx = open_run(cfg)
    try:
        manifest = run_manifest(ctx)
        full, weak = manifest.full_train(), manifest.weak_train()
        records = full if full_only else full + weak
        records = sorted(records, key=lambda r: r.id)

        outcome = RunOutcome(run_dir=str(ctx.run_dir), reports={})
        teacher_ckpt = None
        pseudo = None
        if needs_masks(student) and not full_only and weak:
            if cfg.pseudo_dir:
                with stage(ctx, "pseudo_label"):
                    pseudo_set, pseudo = load_pseudo_masks(cfg.pseudo_dir, [r.id for r in weak])
                outcome.pseudo_provenance = pseudo_set.provenance_hash
                teacher_ckpt = None
            else:
                teacher_ckpt = train_teacher(ctx).checkpoint
                outcome.checkpoints["teacher"] = teacher_ckpt
                outcome.pseudo_provenance, pseudo = pseudo_label(ctx, teacher_ckpt)
            outcome.pseudo_content_hash = pseudo_set_hash(pseudo)
        elif not weak:
            logger.info("ℹ️ No weak records: single-step training on the fully supervised set")

        result = train_student(ctx, student, records, pseudo)
        outcome.checkpoints["student"] = result.checkpoint
        outcome.reports, _ = evaluate_checkpoint(ctx, result.checkpoint)

        if teacher_ckpt and cfg.analyze_teacher:
            outcome.teacher = analyze_teacher(ctx, teacher_ckpt)
        write_run_report(ctx, outcome, label)
        return outcome
    finally:
        ctx.close()


def run_wssl(cfg: ExperimentConfig) -> RunOutcome:
    """Teacher -> pseudo masks (optionally location-filtered) -> student -> val/test reports"""
    student = cfg.student
    if student.mode != TrainMode.STUDENT and student.mode not in (TrainMode.PANDA_LIKE_WSSL,
                                                                  TrainMode.MULTITASK_CLS_LOC):
        raise ConfigError(f"run-wssl cannot train a student in mode {student.mode.value}")
    return _execute(cfg, student, full_only=False, label=student.mode.value)


def baseline_plan(cfg: ExperimentConfig, baseline: str) -> Tuple[ExperimentConfig, TrainConfig, bool]:
    """(config, student TrainConfig, full records only) for a named baseline"""
    if not BASELINE_PATTERN.match(baseline):
        raise RejectedInputError(f'unknown baseline "{baseline}"')
    student = cfg.student

    if baseline == "weak-only":
        return cfg, student.model_copy(update={"mode": TrainMode.WEAK_ONLY_CLASSIFIER}), False
    if baseline == "wssl-no-text":
        return cfg, student.model_copy(update={"mode": TrainMode.PANDA_LIKE_WSSL}), False
    if baseline.startswith("table3-"):
        variant = baseline.split("-")[1]
        train = TrainConfig(**{**student.model_dump(), "mode": TrainMode.MULTITASK_CLS_LOC,
                               "table3_variant": variant, "prompts": PromptSet.NONE})
        return cfg, train, False

    kind, pct = baseline.split("-")
    fraction = int(pct) / 100
    if not 0 < fraction <= 1:
        raise RejectedInputError(f"percentage must be in (0, 100], got {pct}")
    cfg = cfg.model_copy(update={"full_fraction": fraction})
    mode = TrainMode.FULLY_SUPERVISED if kind == "full" else TrainMode.STUDENT
    return cfg, student.model_copy(update={"mode": mode}), True


def run_baseline(cfg: ExperimentConfig, baseline: str) -> RunOutcome:
    cfg, student, full_only = baseline_plan(cfg, baseline)
    logger.info(f"📐 Baseline {baseline}: {student.mode.value}"
                f"{' on the full subset only' if full_only else ''}")
    return _execute(cfg, student, full_only=full_only, label=baseline)
