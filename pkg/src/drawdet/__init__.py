"""Face and body detection in drawings via style-mixed pre-training,
teacher-student self-training and limited-data fine-tuning."""

from .geometry import Box, Klass, ScoredBox, iou, nms
from .detector import DetectorConfig, DetectorParams, HeadOutput, decode, forward, init_params, predict
from .losses import LossBreakdown, OhemConfig, gated_conf_loss, select_hard_examples, total_loss
from .selfsup import SelfSupConfig, TrainerState, ema_update, maybe_reset_student, run_stage2, selfsup_step
from .evaluation import APReport, AggregateReport, aggregate_runs, average_precision, match_detections
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Box", "Klass", "ScoredBox", "iou", "nms",
    "DetectorConfig", "DetectorParams", "HeadOutput", "decode", "forward", "init_params", "predict",
    "LossBreakdown", "OhemConfig", "gated_conf_loss", "select_hard_examples", "total_loss",
    "SelfSupConfig", "TrainerState", "ema_update", "maybe_reset_student", "run_stage2", "selfsup_step",
    "APReport", "AggregateReport", "aggregate_runs", "average_precision", "match_detections",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
]
