"""Detection-annotation JSON ingestion/emission and stage-1 preprocessing filters."""

from __future__ import annotations

import json
import os
import warnings
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from ..geometry import Box, InvalidBoxError
from .core import AnnotatedImage

ANIMAL_SUPERCATEGORY = "animal"
PERSON = "person"


class CorpusFormatError(ValueError):
    """Annotation file is unreadable or structurally invalid."""


def animals_as_bodies(categories: Sequence[dict], include_animals: bool = True) -> set[int]:
    """Category ids whose boxes count as bodies: persons, plus animals unless excluded."""
    ids = set()
    for cat in categories:
        if cat.get("name") == PERSON:
            ids.add(int(cat["id"]))
        elif include_animals and cat.get("supercategory") == ANIMAL_SUPERCATEGORY:
            ids.add(int(cat["id"]))
    return ids


def _require(obj, key, kind):
    if key not in obj:
        raise CorpusFormatError(f"{kind} record missing {key!r}: {obj}")
    return obj[key]


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def load_coco_annotations(annotation_file, image_root, body_categories: Iterable[int] | None = None,
                          face_categories: Iterable[int] | None = None,
                          source: str = "natural", include_animals: bool = True) -> list[AnnotatedImage]:
    """Load a detection JSON file into center-form :class:`AnnotatedImage` records.

    ``body_categories`` defaults to :func:`animals_as_bodies` over the file's
    categories (persons only when ``include_animals`` is false); ``face_categories`` defaults to categories named ``face``.
    Boxes are clipped to the image; boxes with no area after clipping are
    dropped.  Images that cannot be found are skipped with a warning.
    """
    try:
        data = json.loads(Path(annotation_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"cannot parse {annotation_file}: {exc}") from exc
    if not isinstance(data, dict) or not all(isinstance(data.get(k, []), list)
                                             for k in ("images", "annotations", "categories")):
        raise CorpusFormatError(f"{annotation_file}: expected images/annotations/categories arrays")
    categories = data.get("categories", [])
    body_ids = set(body_categories) if body_categories is not None else animals_as_bodies(categories, include_animals)
    face_ids = (set(face_categories) if face_categories is not None
                else {int(c["id"]) for c in categories if c.get("name") == "face"})

    per_image: dict = {}
    for ann in data.get("annotations", []):
        img_id = _require(ann, "image_id", "annotation")
        bbox = _require(ann, "bbox", "annotation")
        cat = int(_require(ann, "category_id", "annotation"))
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise CorpusFormatError(f"bad bbox {bbox!r}")
        per_image.setdefault(img_id, []).append((cat, [float(v) for v in bbox]))

    root = Path(image_root)
    out = []
    for rec in data.get("images", []):
        img_id = _require(rec, "id", "image")
        path = root / _require(rec, "file_name", "image")
        if not path.exists():
            warnings.warn(f"image {path} not found; skipping record {img_id}")
            continue
        image = read_image(path)
        h, w = image.shape[:2]
        faces, bodies = [], []
        for cat, (x, y, bw, bh) in per_image.get(img_id, []):
            if cat not in body_ids and cat not in face_ids:
                continue
            x1, y1 = max(x, 0.0), max(y, 0.0)
            x2, y2 = min(x + bw, float(w)), min(y + bh, float(h))
            try:
                box = Box.from_corner(x1, y1, x2, y2)
            except InvalidBoxError:
                continue
            (faces if cat in face_ids else bodies).append(box)
        out.append(AnnotatedImage(image, faces, bodies, rec.get("source", source), str(img_id)))
    return out


def write_coco(dataset: Sequence[AnnotatedImage], annotation_file, image_dir=None) -> Path:
    """Emit ``dataset`` as detection JSON (face=1, person=2) plus PNG rasters.

    Image files go to ``image_dir`` (default: ``images/`` next to the JSON) and
    are referenced relative to the JSON's directory, which is then the
    ``image_root`` to load with.
    """
    annotation_file = Path(annotation_file)
    image_dir = Path(image_dir) if image_dir is not None else annotation_file.parent / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    images, anns = [], []
    for n, item in enumerate(dataset):
        fname = f"{item.id or n}.png"
        Image.fromarray(np.round(np.clip(item.image, 0, 1) * 255).astype(np.uint8)).save(image_dir / fname)
        rel = os.path.relpath(image_dir / fname, annotation_file.parent)
        images.append({"id": item.id or str(n), "file_name": rel, "width": item.width,
                       "height": item.height, "source": item.source})
        for cat, boxes in ((1, item.face_boxes), (2, item.body_boxes)):
            for b in boxes:
                x1, y1, x2, y2 = b.to_corner()
                anns.append({"id": len(anns) + 1, "image_id": item.id or str(n), "category_id": cat,
                             "bbox": [x1, y1, x2 - x1, y2 - y1], "area": b.area, "iscrowd": 0})
    data = {"images": images, "annotations": anns,
            "categories": [{"id": 1, "name": "face", "supercategory": "person"},
                           {"id": 2, "name": "person", "supercategory": "person"}]}
    annotation_file.parent.mkdir(parents=True, exist_ok=True)
    annotation_file.write_text(json.dumps(data, indent=1))
    return annotation_file


def filter_small_faces(dataset: Sequence[AnnotatedImage], ratio: float = 0.02) -> list[AnnotatedImage]:
    """Drop every image holding a face whose longer side is below ``ratio`` of the image's shorter side."""
    kept = []
    for item in dataset:
        limit = ratio * min(item.height, item.width)
        if all(max(b.w, b.h) >= limit for b in item.face_boxes):
            kept.append(item)
    return kept
