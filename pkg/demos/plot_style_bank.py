"""
Synthetic corpus and the procedural style bank
==============================================

Renders a few natural-look training scenes, then pushes one of them through
every slot of the style bank.  The figure is written to ``style_bank.png``.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from drawdet.datapipe.styles import STYLE_SLOTS, StyleBank, apply_style
from drawdet.datapipe.synthetic import generate_split
from drawdet.viz import draw_boxes
from drawdet.geometry import Klass, ScoredBox

# natural-look scenes with their face and body boxes
natural = generate_split("natural_train", 4, 128, seed=0)
drawings = generate_split("drawing_dev", 4, 128, seed=0)

fig, axes = plt.subplots(3, 6, figsize=(12, 6.5))
for ax in axes.ravel():
    ax.axis("off")

for ax, item in zip(axes[0, :4], natural):
    dets = {k: [ScoredBox(b, 1.0, k) for b in item.boxes(k)] for k in Klass}
    ax.imshow(draw_boxes(item.image, dets, labels=False))
    ax.set_title(item.id, fontsize=7)

# the drawing domain the detector has to transfer to
for ax, item in zip(axes[0, 4:], drawings):
    ax.imshow(item.image)
    ax.set_title("drawing", fontsize=7)

# one scene under each style slot
scene = natural[0].image
for ax, slot in zip(axes[1:].ravel(), STYLE_SLOTS):
    ax.imshow(apply_style(scene, StyleBank.single(slot), seed=3))
    ax.set_title(slot, fontsize=7)

fig.tight_layout()
fig.savefig("style_bank.png", dpi=90)
print("wrote style_bank.png")
