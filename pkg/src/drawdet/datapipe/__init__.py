"""Datasets, preprocessing filters, style bank, augmentation and the synthetic corpus."""

from .core import AnnotatedImage, child_rng
from .coco import animals_as_bodies, filter_small_faces, load_coco_annotations, write_coco
from .styles import STYLE_SLOTS, TOP5_SLOTS, PrecomputedStyle, StyleBank, StyleTransform, apply_style
from .augment import AugmentationPolicy, augment_strong, augment_weak, mosaic, schedule_augmentation
from .sampling import subset_sampler
from .synthetic import CorpusSizes, generate_synthetic_corpus

__all__ = [
    "AnnotatedImage", "child_rng", "animals_as_bodies", "filter_small_faces", "load_coco_annotations", "write_coco",
    "STYLE_SLOTS", "TOP5_SLOTS", "PrecomputedStyle", "StyleBank", "StyleTransform", "apply_style",
    "AugmentationPolicy", "augment_strong", "augment_weak", "mosaic", "schedule_augmentation",
    "subset_sampler", "CorpusSizes", "generate_synthetic_corpus",
]
