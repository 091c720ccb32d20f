"""
Trainer
Seeded training loop shared by every mode: Adam with a warm-up cosine
schedule, per-mode objectives, per-epoch validation and best-checkpoint
selection. Epoch events go to logs/train.jsonl, tabular rows to logs/metrics.csv.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader

from config import NUM_THREADS
from exceptions import ConfigError, NumericalError, RejectedInputError, UndefinedMetricError
from logger_config import close_file_logger, setup_file_logger, setup_logger
from models.eval_models import ScoreSet
from models.training_models import AugmentSpec, NetworkConfig, TABLE3_VARIANTS, TrainConfig, TrainMode
from networks.wssl_net import HeadOutputs, WSSLNet
from services import losses
from services.checkpoint_service import CheckpointMeta, save_checkpoint
from services.dataset import CaseDataset, PreparedCase
from services.metrics_service import auc, location_accuracy, mean_case_dice

logger = setup_logger(__name__)

METRICS_FILE = "metrics.csv"
TRAIN_LOG_FILE = "train.jsonl"

# Modes whose objective contains the segmentation loss
SEGMENTATION_MODES = {
    TrainMode.TEACHER, TrainMode.STUDENT, TrainMode.FULLY_SUPERVISED,
    TrainMode.JOINT_NO_TEXT, TrainMode.PANDA_LIKE_WSSL,
}


def lr_schedule(step: int, total_steps: int, warmup_steps: int, lr0: float) -> float:
    """Linear warm-up from 0 to lr0, then cosine decay to 0 at total_steps"""
    if not 0 <= step <= total_steps:
        raise RejectedInputError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr0 * step / warmup_steps
    if total_steps == warmup_steps:
        return lr0
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * progress))


def needs_masks(train: TrainConfig) -> bool:
    if train.mode == TrainMode.MULTITASK_CLS_LOC:
        return TABLE3_VARIANTS[train.table3_variant][0]
    return train.mode in SEGMENTATION_MODES


# ==============================================================================
# INFERENCE
# ==============================================================================

@dataclass
class Predictions:
    """Per-case outputs of a trained network, aligned with `ids`"""
    ids: List[str]
    diagnosis: List[int]
    location: List[int]
    seg_prob: Optional[List[np.ndarray]] = None
    det_prob: Optional[np.ndarray] = None
    text_det_prob: Optional[np.ndarray] = None
    loc_pred: Optional[np.ndarray] = None

    def scoreset(self, text: bool = False) -> ScoreSet:
        scores = self.text_det_prob if text else self.det_prob
        return ScoreSet(ids=self.ids, scores=[float(s) for s in scores], labels=self.diagnosis)


def predict_cases(net: WSSLNet, cases: Sequence[PreparedCase], batch_size: int = 4,
                  e_det: Optional[torch.Tensor] = None, e_loc: Optional[torch.Tensor] = None) -> Predictions:
    """Forward every case once in eval mode without gradients"""
    net.eval()
    dtype = next(net.parameters()).dtype
    seg, det, text_det, loc = [], [], [], []
    with torch.no_grad():
        for start in range(0, len(cases), batch_size):
            chunk = cases[start:start + batch_size]
            volume = torch.from_numpy(np.stack([c.volume for c in chunk]))[:, None].to(dtype)
            out: HeadOutputs = net(volume)
            if out.seg_logits is not None:
                seg.extend(torch.softmax(out.seg_logits, dim=1)[:, 1].numpy())
            if out.det_logits is not None:
                det.append(torch.softmax(out.det_logits, dim=1)[:, 1].numpy())
            if out.i_det is not None and e_det is not None:
                s_det = losses.similarity(out.i_det, e_det.to(dtype))
                probs = losses.temperature_softmax(s_det, net.temperatures.det())
                text_det.append(probs[:, 1].numpy())
            if out.loc_logits is not None:
                loc.append(out.loc_logits.argmax(dim=1).numpy())
            elif out.i_loc is not None and e_loc is not None:
                loc.append(losses.similarity(out.i_loc, e_loc.to(dtype)).argmax(dim=1).numpy())

    return Predictions(
        ids=[c.id for c in cases],
        diagnosis=[c.diagnosis for c in cases],
        location=[c.location for c in cases],
        seg_prob=seg or None,
        det_prob=np.concatenate(det).astype(np.float64) if det else None,
        text_det_prob=np.concatenate(text_det).astype(np.float64) if text_det else None,
        loc_pred=np.concatenate(loc) if loc else None,
    )


# ==============================================================================
# TRAINER
# ==============================================================================

@dataclass
class TrainingResult:
    checkpoint: str
    meta: CheckpointMeta
    best_epoch: int
    best_metric: Optional[float]
    history: List[Dict] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"]


class Trainer:
    """
    Trains one network for one stage. `name` selects the checkpoint stem and
    tags every log row; `text_matrices` are the frozen (E_det, E_loc) arrays.
    """

    def __init__(self, train: TrainConfig, network: NetworkConfig, run_dir: str, name: str,
                 augment: Optional[AugmentSpec] = None,
                 text_matrices: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                 config_hash: str = "", num_threads: int = NUM_THREADS):
        self.train = train
        self.network = network
        self.run_dir = Path(run_dir)
        self.name = name
        self.augment = augment if train.augment else None
        self.config_hash = config_hash
        self.num_threads = num_threads
        self.e_det = self.e_loc = None
        if text_matrices is not None:
            self.e_det = torch.tensor(np.asarray(text_matrices[0]), dtype=torch.float32)
            self.e_loc = torch.tensor(np.asarray(text_matrices[1]), dtype=torch.float32)
        if network.heads.with_text and self.e_det is None:
            raise ConfigError(f"{name}: text heads need text embedding matrices")

    # ------------------------------------------------------------------

    def build_network(self) -> WSSLNet:
        torch.manual_seed(self.train.seed)
        return WSSLNet(self.network, temp_init=self.train.loss.temp_init)

    def selection_metric(self) -> str:
        if self.train.mode == TrainMode.TEACHER:
            return "val_dice"
        if self.network.heads.with_det:
            return "val_auc"
        return "val_location_accuracy"

    def text_inputs(self, net: WSSLNet, out: HeadOutputs, batch: Dict) -> Optional[losses.TextInputs]:
        if out.i_det is None:
            return None
        return losses.TextInputs(
            i_det=out.i_det, i_loc=out.i_loc, E_det=self.e_det, E_loc=self.e_loc,
            diagnosis=batch["diagnosis"], location=batch["location"],
            T_det=net.temperatures.det(), T_loc=net.temperatures.loc(), prompts=self.train.prompts,
        )

    def objective(self, net: WSSLNet, out: HeadOutputs, batch: Dict,
                  components: Dict[str, float]) -> torch.Tensor:
        mode = self.train.mode
        cfg = self.train.loss
        mask, diagnosis = batch["mask"], batch["diagnosis"]

        if mode == TrainMode.TEACHER:
            return losses.teacher_loss(out.seg_logits, mask, self.text_inputs(net, out, batch), cfg, components)
        if mode == TrainMode.STUDENT:
            return losses.student_loss(out.seg_logits, mask, out.det_logits, diagnosis,
                                       self.text_inputs(net, out, batch), cfg, components)
        if mode in (TrainMode.FULLY_SUPERVISED, TrainMode.JOINT_NO_TEXT, TrainMode.PANDA_LIKE_WSSL):
            return losses.joint_loss(out.seg_logits, mask, out.det_logits, diagnosis, cfg, components)
        if mode == TrainMode.WEAK_ONLY_CLASSIFIER:
            det = losses.det_loss(out.det_logits, diagnosis)
            components["det"] = float(det.detach())
            return det

        # multitask: any of seg, beta * det, beta * linear location CE
        total = None
        if out.seg_logits is not None:
            total = losses.seg_loss(out.seg_logits, mask, cfg.dice_smooth)
            components["seg"] = float(total.detach())
        if out.det_logits is not None:
            det = losses.det_loss(out.det_logits, diagnosis)
            components["det"] = float(det.detach())
            total = cfg.beta * det if total is None else total + cfg.beta * det
        if out.loc_logits is not None:
            loc = torch.nn.functional.cross_entropy(out.loc_logits, batch["location"])
            components["loc"] = float(loc.detach())
            total = cfg.beta * loc if total is None else total + cfg.beta * loc
        return total

    def validate(self, net: WSSLNet, val_cases: Sequence[PreparedCase]) -> Dict[str, Optional[float]]:
        preds = predict_cases(net, val_cases, self.train.batch_size, self.e_det, self.e_loc)
        metrics: Dict[str, Optional[float]] = {}
        if preds.seg_prob is not None:
            pairs = [(p > 0.5, c.mask) for p, c in zip(preds.seg_prob, val_cases) if c.mask is not None]
            metrics["val_dice"] = mean_case_dice(pairs)
        if preds.det_prob is not None:
            try:
                metrics["val_auc"] = auc(preds.scoreset())
            except UndefinedMetricError:
                metrics["val_auc"] = None
        if preds.loc_pred is not None:
            metrics["val_location_accuracy"] = location_accuracy(preds.loc_pred, preds.location)
        return metrics

    # ------------------------------------------------------------------

    def fit(self, train_cases: Sequence[PreparedCase],
            val_cases: Sequence[PreparedCase]) -> TrainingResult:
        if not train_cases:
            raise ConfigError(f"{self.name}: no training records")
        torch.set_num_threads(self.num_threads)

        net = self.build_network()
        dataset = CaseDataset(train_cases, self.augment, seed=self.train.seed,
                              require_masks=needs_masks(self.train))
        generator = torch.Generator().manual_seed(self.train.seed)
        loader = DataLoader(dataset, batch_size=self.train.batch_size, shuffle=True,
                            generator=generator, num_workers=0)

        steps_per_epoch = len(loader)
        total_steps = self.train.epochs * steps_per_epoch
        warmup_steps = self.train.warmup_epochs * steps_per_epoch
        optimizer = torch.optim.Adam(net.parameters(), lr=self.train.lr,
                                     weight_decay=self.train.weight_decay)
        scheduler = torch.optim.lr_scheduler.LambdaLR(
            optimizer, lambda step: lr_schedule(min(step, total_steps), total_steps, warmup_steps, 1.0)
        )

        logs_dir = self.run_dir / "logs"
        logs_dir.mkdir(parents=True, exist_ok=True)
        train_log = setup_file_logger("train", str(logs_dir / TRAIN_LOG_FILE))
        stem = str(self.run_dir / "checkpoints" / self.name)
        metric_name = self.selection_metric()

        logger.info(f"🏋️ {self.name}: {self.train.mode.value} on {len(train_cases)} records, "
                    f"{self.train.epochs} epochs x {steps_per_epoch} steps")

        history: List[Dict] = []
        best_metric: Optional[float] = None
        best_epoch = 0
        meta: Optional[CheckpointMeta] = None
        try:
            for epoch in range(1, self.train.epochs + 1):
                dataset.set_epoch(epoch)
                net.train()
                loss_sum, component_sums, samples = 0.0, {}, 0
                lr = optimizer.param_groups[0]["lr"]
                for batch in loader:
                    components: Dict[str, float] = {}
                    out = net(batch["volume"])
                    loss = self.objective(net, out, batch, components)
                    if not torch.isfinite(loss):
                        raise NumericalError(f"{self.name}: non-finite loss at epoch {epoch}")
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                    scheduler.step()

                    n = batch["volume"].shape[0]
                    samples += n
                    loss_sum += float(loss.detach()) * n
                    for key, value in components.items():
                        component_sums[key] = component_sums.get(key, 0.0) + value * n

                row = {"stage": self.name, "epoch": epoch, "split": "train", "lr": lr,
                       "loss": loss_sum / samples}
                row.update({key: value / samples for key, value in component_sums.items()})
                if net.temperatures is not None:
                    row["T_det"] = float(net.temperatures.det())
                    row["T_loc"] = float(net.temperatures.loc())
                val = self.validate(net, val_cases) if val_cases else {}
                row.update(val)
                history.append(row)

                metric = val.get(metric_name)
                # strict improvement only; ties keep the earlier epoch
                if meta is None or (metric is not None and (best_metric is None or metric > best_metric)):
                    best_metric, best_epoch = metric, epoch
                    meta = save_checkpoint(net, stem, epoch, metric_name, metric, self.train.mode,
                                           self.config_hash)

                train_log.info("epoch", extra={"event": "epoch", **row})
                logger.info(f"   epoch {epoch:3d} | loss {row['loss']:.4f} | {metric_name} "
                            f"{'n/a' if metric is None else f'{metric:.4f}'}")
        finally:
            close_file_logger(train_log)

        self._append_metrics(history)
        logger.info(f"✅ {self.name}: best {metric_name} = {best_metric} at epoch {best_epoch}")
        return TrainingResult(checkpoint=stem, meta=meta, best_epoch=best_epoch,
                              best_metric=best_metric, history=history)

    def _append_metrics(self, history: List[Dict]) -> None:
        path = self.run_dir / "logs" / METRICS_FILE
        frame = pd.DataFrame(history)
        if path.exists():
            frame = pd.concat([pd.read_csv(path), frame], ignore_index=True)
        frame.to_csv(path, index=False)
