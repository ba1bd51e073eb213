"""Teacher-student self-training on unlabeled drawings.

One step: the teacher labels a weakly augmented image, the student learns
from a strongly augmented copy of it on the head picked for this iteration,
the teacher tracks the student by EMA, and every ``phi`` iterations the
student is overwritten with the teacher.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .datapipe.augment import AugmentationPolicy, augment_weak, strong_extras
from .datapipe.core import child_rng
from .detector import (DetectorConfig, DetectorParams, alternate_head, decode_arrays, filter_and_nms, forward,
                       forward_both, to_batch, _to_scored)
from .geometry import Box, Klass, KLASSES
from .losses import LossBreakdown, OhemConfig, selfsup_loss

log = logging.getLogger(__name__)

NEVER = "never"


class NumericError(FloatingPointError):
    """Non-finite values reached a parameter update."""


@dataclass(frozen=True)
class SelfSupConfig:
    phi: int | str = 500
    d: float = 0.9996
    beta: float = 2.0
    c_teac: float = 0.65
    ct_pos_thresh: float = 0.5
    ct_neg_thresh: float = 0.5
    lr: float = 1e-4
    momentum_gamma: float = 0.0
    pseudo_nms_thresh: float = 0.4
    max_iterations: int = 10000
    eval_interval: int = 500
    loss: str = "ohem"
    neg_pos_ratio: int = 3
    min_neg: int = 16
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.phi, str):
            if self.phi.lower() != NEVER:
                raise ValueError(f"phi must be a positive integer or 'never', got {self.phi!r}")
            object.__setattr__(self, "phi", NEVER)
        elif int(self.phi) < 1:
            raise ValueError(f"phi must be >= 1, got {self.phi}")
        if not 0.0 <= self.d <= 1.0:
            raise ValueError(f"d must lie in [0, 1], got {self.d}")
        if not 0.0 <= self.momentum_gamma < 1.0:
            raise ValueError(f"momentum_gamma must lie in [0, 1), got {self.momentum_gamma}")
        for name in ("c_teac", "pseudo_nms_thresh"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.loss not in ("ohem", "focal"):
            raise ValueError(f"loss must be 'ohem' or 'focal', got {self.loss!r}")
        if self.max_iterations < 0 or self.eval_interval < 1:
            raise ValueError("max_iterations must be >= 0 and eval_interval >= 1")
        OhemConfig(self.ct_pos_thresh, self.ct_neg_thresh, self.neg_pos_ratio, self.min_neg)

    @property
    def ohem(self) -> OhemConfig:
        return OhemConfig(self.ct_pos_thresh, self.ct_neg_thresh, self.neg_pos_ratio, self.min_neg)


@dataclass
class PseudoLabelSet:
    face_boxes: list[Box] = field(default_factory=list)
    body_boxes: list[Box] = field(default_factory=list)
    source_scores: list[float] = field(default_factory=list)  # face boxes first, then body boxes

    def labels(self) -> dict[Klass, list[Box]]:
        return {Klass.FACE: list(self.face_boxes), Klass.BODY: list(self.body_boxes)}

    def __len__(self) -> int:
        return len(self.face_boxes) + len(self.body_boxes)


@dataclass
class TrainerState:
    teacher: DetectorParams
    student: DetectorParams
    iteration: int = 0
    rng_seed: int = 0
    velocity: torch.Tensor | None = None

    def __post_init__(self):
        if not self.teacher.same_layout(self.student):
            raise ValueError("teacher and student layouts differ")

    @classmethod
    def from_init(cls, init: DetectorParams, seed: int = 0) -> "TrainerState":
        return cls(init.clone(), init.clone(), 0, seed)


def ema_update(teacher: DetectorParams, student: DetectorParams, d: float) -> DetectorParams:
    """``d * teacher + (1 - d) * student``; the result never leaves the interval spanned by the inputs."""
    if not teacher.same_layout(student):
        raise ValueError("teacher and student layouts differ")
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"d must lie in [0, 1], got {d}")
    t = teacher.vector.detach()
    s = student.vector.detach().to(t.dtype)
    if d == 1.0:
        return DetectorParams(teacher.layout, t.clone())
    if d == 0.0:
        return DetectorParams(teacher.layout, s.clone())
    out = d * t + (1.0 - d) * s
    out = torch.minimum(torch.maximum(out, torch.minimum(t, s)), torch.maximum(t, s))
    return DetectorParams(teacher.layout, out)


def maybe_reset_student(state: TrainerState, phi: int | str) -> TrainerState:
    """Copy the teacher into the student when ``iteration`` is a multiple of ``phi``."""
    if state.iteration < 1:
        raise ValueError("reset is checked after at least one iteration")
    if phi == NEVER or state.iteration % int(phi):
        return state
    velocity = torch.zeros_like(state.velocity) if state.velocity is not None else None
    return replace(state, student=state.teacher.clone(), velocity=velocity)


def sgd_step(params, grads, lr: float, momentum_gamma: float = 0.0, velocity=None):
    """Plain SGD (``momentum_gamma = 0``) or classic momentum ``v = g*v + grad; p -= lr*v``.

    Works on floats, numpy arrays or tensors.  Returns ``(params, velocity)``;
    velocity is ``None`` for plain SGD.
    """
    finite = torch.isfinite(grads).all().item() if isinstance(grads, torch.Tensor) else np.all(np.isfinite(grads))
    if not finite:
        raise NumericError("non-finite gradient in sgd_step")
    if momentum_gamma == 0.0:
        return params - lr * grads, None
    v = grads if velocity is None else momentum_gamma * velocity + grads
    return params - lr * v, v


def generate_pseudo_labels(teacher: DetectorParams, image: np.ndarray, cfg: SelfSupConfig,
                           config: DetectorConfig) -> PseudoLabelSet:
    """Teacher boxes with score >= ``c_teac`` after per-class NMS at ``pseudo_nms_thresh``."""
    with torch.no_grad():
        outs = forward_both(teacher, to_batch(image, teacher.vector.dtype), config)
    result = PseudoLabelSet()
    scores_by_class = {}
    for klass in KLASSES:
        out = outs[klass]
        logits = out.flat_logits()[0].double().numpy()
        reg = out.flat_reg()[0].double().numpy()
        corners, scores = decode_arrays(logits, reg, config)
        keep = filter_and_nms(corners, scores, cfg.c_teac, cfg.pseudo_nms_thresh)
        boxes = [sb.box for sb in _to_scored(corners[keep], scores[keep], klass)]
        (result.face_boxes if klass is Klass.FACE else result.body_boxes).extend(boxes)
        scores_by_class[klass] = [float(s) for s in scores[keep]]
    result.source_scores = scores_by_class[Klass.FACE] + scores_by_class[Klass.BODY]
    return result


def _step_seed(state: TrainerState) -> int:
    return int(child_rng(state.rng_seed, 0xA06, state.iteration).integers(2 ** 31))


def selfsup_step(state: TrainerState, raw_image: np.ndarray, cfg: SelfSupConfig, config: DetectorConfig,
                 augmentation: AugmentationPolicy = AugmentationPolicy(),
                 backward: bool = True) -> tuple[TrainerState, LossBreakdown]:
    """One teacher-student iteration; see the module docstring for the order of operations.

    ``backward=False`` skips the gradient step (the student only follows EMA/reset).
    """
    seed = _step_seed(state)
    weak, _ = augment_weak(raw_image, {}, seed)
    pseudo = generate_pseudo_labels(state.teacher, weak, cfg, config)
    strong, labels = strong_extras(weak, pseudo.labels(), seed, augmentation)
    klass = alternate_head(state.iteration)

    leaf = state.student.vector.detach().clone().requires_grad_(backward)
    student = DetectorParams(state.student.layout, leaf)
    out = forward(student, to_batch(strong, leaf.dtype), klass, config)
    loss = selfsup_loss(out, [labels[klass]], config, cfg.ohem, cfg.beta, cfg.loss)
    new_vec, velocity = leaf.detach(), state.velocity
    if backward:
        (grad,) = torch.autograd.grad(loss.total, leaf)
        new_vec, velocity = sgd_step(leaf.detach(), grad, cfg.lr, cfg.momentum_gamma, state.velocity)
    student = DetectorParams(state.student.layout, new_vec)
    teacher = ema_update(state.teacher, student, cfg.d)
    state = TrainerState(teacher, student, state.iteration + 1, state.rng_seed, velocity)
    state = maybe_reset_student(state, cfg.phi)
    return state, loss.detach()


@dataclass
class CurveRecord:
    iteration: int
    teacher_ap: dict[str, float]
    student_ap: dict[str, float]
    loss: LossBreakdown


CURVE_HEADER = ("iteration", "teacher_face_ap", "teacher_body_ap", "teacher_mean_ap",
                "student_face_ap", "student_body_ap", "student_mean_ap", "loss_conf", "loss_reg", "loss_total", "beta")


def _ap_cols(ap: Mapping[str, float]):
    vals = [ap.get("face"), ap.get("body")]
    present = [v for v in vals if v is not None]
    return [("" if v is None else f"{v:.6f}") for v in vals] + [f"{np.mean(present):.6f}" if present else ""]


def write_curve_log(records: Sequence[CurveRecord], path, append: bool = False) -> Path:
    """Tab-separated curve log with a fixed header."""
    path = Path(path)
    new = not (append and path.exists())
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        if new:
            w.writerow(CURVE_HEADER)
        for r in records:
            w.writerow([r.iteration, *_ap_cols(r.teacher_ap), *_ap_cols(r.student_ap),
                        f"{r.loss.conf:.6f}", f"{r.loss.reg:.6f}", f"{r.loss.total:.6f}", r.loss.beta])
    return path


def read_curve_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if rows and tuple(rows[0].keys()) != CURVE_HEADER:
        raise ValueError(f"{path}: unexpected curve-log header")
    return rows


@dataclass
class Stage2Result:
    best: Checkpoint
    curve: list[CurveRecord]
    init_ap: dict[str, float] | None
    final_state: TrainerState
    losses: list[LossBreakdown]


def run_stage2(init: DetectorParams, unlabeled: Sequence, cfg: SelfSupConfig, config: DetectorConfig,
               dev_eval: Callable[[DetectorParams], Mapping[str, float]] | None = None,
               augmentation: AugmentationPolicy = AugmentationPolicy(),
               on_record: Callable[[CurveRecord], None] | None = None) -> Stage2Result:
    """Self-training loop over a random unlabeled stream.

    Teacher and student are scored with ``dev_eval`` every ``eval_interval``
    iterations.  The returned checkpoint is the teacher with the best mean dev
    AP; the initialisation itself is scored first and competes as a candidate.
    Items of ``unlabeled`` may be rasters or objects with an ``image`` attribute.
    """
    if len(unlabeled) == 0:
        raise ValueError("stage 2 needs a non-empty unlabeled stream")
    state = TrainerState.from_init(init, cfg.seed)
    best_params, best_iter, best_score = init.clone(), 0, -np.inf
    init_ap = None
    if dev_eval is not None and cfg.max_iterations > 0:
        init_ap = dict(dev_eval(state.teacher))
        best_score = float(np.mean(list(init_ap.values())))
    pick = child_rng(cfg.seed, 0x57E4)
    curve, losses = [], []
    for _ in range(cfg.max_iterations):
        item = unlabeled[int(pick.integers(len(unlabeled)))]
        image = getattr(item, "image", item)
        state, loss = selfsup_step(state, image, cfg, config, augmentation)
        losses.append(loss)
        if not np.isfinite(loss.total):
            raise NumericError(f"non-finite loss at iteration {state.iteration}")
        if dev_eval is not None and state.iteration % cfg.eval_interval == 0:
            t_ap = dict(dev_eval(state.teacher))
            s_ap = dict(dev_eval(state.student))
            rec = CurveRecord(state.iteration, t_ap, s_ap, loss)
            curve.append(rec)
            if on_record:
                on_record(rec)
            score = float(np.mean(list(t_ap.values())))
            log.info("iter %d teacher %.4f student %.4f", state.iteration, score, np.mean(list(s_ap.values())))
            if score > best_score:
                best_params, best_iter, best_score = state.teacher.clone(), state.iteration, score
    if dev_eval is None and cfg.max_iterations > 0:
        best_params, best_iter = state.teacher.clone(), state.iteration
    meta = {"selfsup": asdict(cfg), "best_dev_ap": None if not np.isfinite(best_score) else best_score}
    best = Checkpoint(best_params, config, "stage2", best_iter, meta)
    return Stage2Result(best, curve, init_ap, state, losses)
