from .augment import AugmentationConfig, augment, letterbox
from .coco import CocoDataset, CocoFormatError, coco_dict, load_coco, save_coco
from .sample import STAIN_TAGS, Sample, valid_boxes
from .synth import SynthSpec, synth_generate

__all__ = [
    "AugmentationConfig",
    "CocoDataset",
    "CocoFormatError",
    "STAIN_TAGS",
    "Sample",
    "SynthSpec",
    "augment",
    "coco_dict",
    "letterbox",
    "load_coco",
    "save_coco",
    "synth_generate",
    "valid_boxes",
]
