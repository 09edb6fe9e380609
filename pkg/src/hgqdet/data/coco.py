"""COCO-format annotation I/O."""
from __future__ import annotations

import json
import logging
import os
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .sample import Sample, xywh_to_normalized

log = logging.getLogger(__name__)

CATEGORY = {"id": 1, "name": "astrocyte"}


class CocoFormatError(ValueError):
    pass


def _require(record: dict, keys: tuple[str, ...], where: str) -> None:
    if not isinstance(record, dict):
        raise CocoFormatError(f"{where}: expected an object, got {type(record).__name__}")
    missing = [k for k in keys if k not in record]
    if missing:
        raise CocoFormatError(f"{where}: missing field(s) {missing}")


def read_image(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


@dataclass
class CocoRecord:
    image_id: int
    file_name: str
    width: int
    height: int
    gts: np.ndarray
    stain_tag: str


class CocoDataset(Sequence):
    """Samples described by one COCO annotation file; images load on access."""

    def __init__(self, records: list[CocoRecord], image_root: str | os.PathLike | None, dropped: int = 0):
        self.records = records
        self.image_root = Path(image_root) if image_root is not None else None
        self.dropped = dropped

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        r = self.records[i]
        if self.image_root is None:
            image = np.zeros((r.height, r.width, 3), dtype=np.float32)
        else:
            image = read_image(self.image_root / r.file_name)
            if image.shape[:2] != (r.height, r.width):
                raise CocoFormatError(
                    f"image {r.file_name}: size {image.shape[1]}x{image.shape[0]} "
                    f"differs from annotation {r.width}x{r.height}"
                )
        return Sample(image, r.gts.copy(), r.image_id, r.stain_tag, r.file_name)

    def filter_stain(self, stain: str | None) -> "CocoDataset":
        if stain is None:
            return self
        return CocoDataset([r for r in self.records if r.stain_tag == stain], self.image_root, self.dropped)


def parse_coco(data: dict, default_stain: str = "synthetic") -> tuple[list[CocoRecord], int]:
    _require(data, ("images", "annotations"), "annotation file")
    images: dict[int, dict] = {}
    for k, im in enumerate(data["images"]):
        _require(im, ("id", "width", "height"), f"images[{k}]")
        if im["id"] in images:
            raise CocoFormatError(f"images[{k}]: duplicate image id {im['id']}")
        if im["width"] <= 0 or im["height"] <= 0:
            raise CocoFormatError(f"images[{k}] (id {im['id']}): non-positive size")
        images[im["id"]] = im
    boxes: dict[int, list[list[float]]] = {i: [] for i in images}
    dropped = 0
    for k, ann in enumerate(data["annotations"]):
        _require(ann, ("image_id", "bbox"), f"annotations[{k}]")
        bbox = ann["bbox"]
        if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
            raise CocoFormatError(f"annotations[{k}] (id {ann.get('id')}): bbox must be [x, y, w, h]")
        try:
            bbox = [float(x) for x in bbox]
        except (TypeError, ValueError):
            raise CocoFormatError(f"annotations[{k}] (id {ann.get('id')}): non-numeric bbox {bbox}") from None
        if ann["image_id"] not in images:
            raise CocoFormatError(f"annotations[{k}] (id {ann.get('id')}): unknown image_id {ann['image_id']}")
        if bbox[2] <= 0 or bbox[3] <= 0:
            dropped += 1
            continue
        boxes[ann["image_id"]].append(bbox)
    records = []
    for iid, im in images.items():
        w, h = float(im["width"]), float(im["height"])
        xywh = np.asarray(boxes[iid], dtype=np.float64).reshape(-1, 4)
        records.append(
            CocoRecord(
                image_id=iid,
                file_name=im.get("file_name", f"{iid}.png"),
                width=int(im["width"]),
                height=int(im["height"]),
                gts=xywh_to_normalized(xywh, w, h),
                stain_tag=im.get("stain", default_stain),
            )
        )
    return records, dropped


def load_coco(
    annotation_file: str | os.PathLike,
    image_root: str | os.PathLike | None = None,
    default_stain: str = "synthetic",
) -> CocoDataset:
    """Read a COCO detection annotation file into normalized samples.

    Zero-area boxes are dropped (count logged and kept on ``.dropped``).
    ``image_root=None`` skips image loading and yields blank images of the
    annotated size, which is enough for evaluation.
    """
    try:
        with open(annotation_file) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise CocoFormatError(f"{annotation_file}: invalid JSON ({err})") from None
    records, dropped = parse_coco(data, default_stain)
    if dropped:
        log.warning("%s: dropped %d zero-area annotation(s)", annotation_file, dropped)
    return CocoDataset(records, image_root, dropped)


def coco_dict(samples) -> dict:
    """Build a COCO annotation dict from samples (or CocoRecords)."""
    images, annotations = [], []
    ann_id = 1
    for s in samples:
        if isinstance(s, CocoRecord):
            w, h, name, stain = s.width, s.height, s.file_name, s.stain_tag
        else:
            w, h, name, stain = s.width, s.height, s.file_name or f"{s.image_id}.png", s.stain_tag
        images.append({"id": s.image_id, "file_name": name, "width": w, "height": h, "stain": stain})
        g = np.asarray(s.gts, dtype=np.float64).reshape(-1, 4)
        for cx, cy, bw, bh in g:
            x, y, pw, ph = (cx - bw / 2) * w, (cy - bh / 2) * h, bw * w, bh * h
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": s.image_id,
                    "category_id": CATEGORY["id"],
                    "bbox": [float(x), float(y), float(pw), float(ph)],
                    "area": float(pw * ph),
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    return {"images": images, "annotations": annotations, "categories": [dict(CATEGORY)]}


def save_coco(samples, out_dir: str | os.PathLike, annotation_name: str = "annotations.json",
              write_images: bool = True) -> Path:
    """Write samples as PNG images plus one COCO annotation file."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    named = []
    for s in samples:
        name = s.file_name
        if not name:
            name = f"{s.image_id:06d}.png" if isinstance(s.image_id, int) else f"{s.image_id}.png"
        s = s.with_(file_name=name)
        if write_images:
            img = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(img).save(out / "images" / name)
        named.append(s)
    path = out / annotation_name
    with open(path, "w") as fh:
        json.dump(coco_dict(named), fh)
    return path
