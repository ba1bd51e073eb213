"""Supervised training used by pre-training (stage 1) and fine-tuning (stage 3)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .datapipe.augment import AugmentationPolicy, apply_policy, schedule_augmentation
from .datapipe.core import AnnotatedImage, child_rng
from .datapipe.styles import StyleBank, apply_style
from .detector import DetectorConfig, DetectorParams, alternate_head, forward, to_batch
from .evaluation import evaluate
from .losses import supervised_loss

log = logging.getLogger(__name__)


class StyledView:
    """Read-only sequence view that styles each item on access, seeded by (seed, epoch, index)."""

    def __init__(self, dataset: Sequence[AnnotatedImage], bank: StyleBank, seed: int, epoch: int):
        self.dataset, self.bank, self.seed, self.epoch = dataset, bank, seed, epoch

    def __len__(self):
        return len(self.dataset)

    def __getitem__(self, i):
        item = self.dataset[i]
        if self.bank.mode == "none":
            return item
        s = int(child_rng(self.seed, 0x57, self.epoch, i).integers(2 ** 31))
        return item.with_content(apply_style(item.image, self.bank, s, item.id), item.labels())


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev_ap: dict[str, float] | None = None


@dataclass
class TrainResult:
    best: Checkpoint
    final: DetectorParams
    history: list[EpochRecord] = field(default_factory=list)


def train_supervised(init: DetectorParams, train: Sequence[AnnotatedImage], config: DetectorConfig, *,
                     epochs: int, batch_size: int = 8, lr: float = 1e-3, seed: int = 0,
                     style_bank: StyleBank | None = None, policy: AugmentationPolicy | None = None,
                     no_aug_epochs: int = 1, dev: Sequence[AnnotatedImage] | None = None,
                     eval_every: int = 1, beta: float = 1.0, stage: str = "stage1",
                     on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Adam on the flat parameter vector, one head per optimizer step (face first).

    The checkpoint with the best mean dev AP is kept (the initialisation
    competes when a dev set is given).  Without a dev set the last epoch wins.
    """
    if not train:
        raise ValueError("cannot train on an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    bank = style_bank or StyleBank.none()
    policy = policy or AugmentationPolicy(enabled=False)
    leaf = init.vector.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([leaf], lr=lr)
    params = DetectorParams(init.layout, leaf)

    def snapshot():
        return DetectorParams(init.layout, leaf.detach().clone())

    best, best_epoch, best_score = snapshot(), 0, -np.inf
    history = []
    if dev and epochs > 0:
        best_score = evaluate(best, dev, config).mean_ap
    step = 0
    for epoch in range(epochs):
        pol = schedule_augmentation(epoch, epochs, policy, no_aug_epochs)
        view = StyledView(train, bank, seed, epoch)
        order = child_rng(seed, 0xE90C, epoch).permutation(len(train))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            items = [apply_policy(view[int(i)], pol, int(child_rng(seed, 0xA9, epoch, int(i)).integers(2 ** 31)), view)
                     for i in idx]
            klass = alternate_head(step)
            out = forward(params, to_batch([x.image for x in items], leaf.dtype), klass, config)
            loss = supervised_loss(out, [x.boxes(klass) for x in items], config, beta)
            opt.zero_grad()
            loss.total.backward()
            if not torch.isfinite(leaf.grad).all():
                from .selfsup import NumericError
                raise NumericError(f"non-finite gradient at epoch {epoch}, step {step}")
            opt.step()
            total += float(loss.total.detach())
            step += 1
        rec = EpochRecord(epoch, total / max(1, -(-len(order) // batch_size)))
        if dev and ((epoch + 1) % eval_every == 0 or epoch == epochs - 1):
            rep = evaluate(snapshot(), dev, config)
            rec.dev_ap = rep.per_class_ap
            if rep.mean_ap > best_score:
                best, best_epoch, best_score = snapshot(), epoch + 1, rep.mean_ap
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        log.info("%s epoch %d loss %.4f dev %s", stage, epoch, rec.loss, rec.dev_ap)
    final = snapshot()
    if not dev and epochs > 0:
        best, best_epoch = final, epochs
    meta = {"best_epoch": best_epoch, "best_dev_ap": None if not np.isfinite(best_score) else float(best_score)}
    return TrainResult(Checkpoint(best, config, stage, best_epoch, meta), final, history)
