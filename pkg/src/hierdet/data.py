"""Synthetic scenes and VOC-style datasets on disk.

Images are binary PGM/PPM (8-bit), annotations are VOC XML, and a dataset
is a JSON manifest listing ``(image, annotation)`` pairs relative to the
manifest's directory. Synthetic datasets are written in the same layout,
so one loader serves both.
"""

from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from hierdet.environment import Scene
from hierdet.errors import InfeasiblePlacement, MissingImage, ParseError
from hierdet.features import ImageRaster
from hierdet.geometry import Box, HierarchyScheme, children

PLACEMENTS = ("uniform", "aligned")


@dataclass
class SyntheticSpec:
    n_scenes: int = 100
    image_size: int = 64
    channels: int = 1
    objects: tuple = (1, 1)
    size_range: tuple = (0.1, 0.9)
    placement: str = "uniform"
    scheme: str = "overlapped"
    depths: tuple = (1, 3)
    noise: float = 0.1
    foreground: float = 0.8
    label: str = "object"
    seed: int = 0

    def __post_init__(self):
        self.objects = tuple(int(v) for v in self.objects)
        self.size_range = tuple(float(v) for v in self.size_range)
        self.depths = tuple(int(v) for v in self.depths)
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 (grey) or 3 (RGB)")
        if self.n_scenes < 1 or not 1 <= self.objects[0] <= self.objects[1]:
            raise ValueError("need at least one scene and 1 <= min objects <= max objects")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def _paint(img: np.ndarray, box: Box, value: np.ndarray) -> None:
    h, w = img.shape[:2]
    # pixels whose centers fall inside the box
    r0, r1 = max(math.ceil(box.y0 - 0.5), 0), min(math.ceil(box.y1 - 0.5), h)
    c0, c1 = max(math.ceil(box.x0 - 0.5), 0), min(math.ceil(box.x1 - 0.5), w)
    img[r0:r1, c0:c1] = value[r0:r1, c0:c1]


def _uniform_box(spec: SyntheticSpec, rng: np.random.Generator) -> Box:
    size = spec.image_size
    lo, hi = spec.size_range
    w = max(1, int(round(rng.uniform(lo, hi) * size)))
    h = max(1, int(round(rng.uniform(lo, hi) * size)))
    x0 = int(rng.integers(0, size - w + 1))
    y0 = int(rng.integers(0, size - h + 1))
    return Box(float(x0), float(y0), float(x0 + w), float(y0 + h))


def generate(spec: SyntheticSpec) -> list[Scene]:
    """Noisy background with filled foreground rectangles; boxes match them exactly."""
    size = spec.image_size
    lo, hi = spec.size_range
    if size < 16:
        raise InfeasiblePlacement("images must be at least 16 pixels wide")
    if spec.placement == "uniform":
        if not 0.0 < lo <= hi <= 1.0:
            raise InfeasiblePlacement(f"object size range {spec.size_range} not inside (0, 1]")
        if hi * size < 1.0:
            raise InfeasiblePlacement("objects would be smaller than one pixel")
    else:
        d0, d1 = spec.depths
        if not 0 <= d0 <= d1:
            raise InfeasiblePlacement(f"invalid depth range {spec.depths}")
        scheme = HierarchyScheme.parse(spec.scheme)
        if size * math.sqrt(scheme.area_ratio) ** d1 < 1.0:
            raise InfeasiblePlacement(f"depth {d1} nodes are smaller than one pixel")

    rng = np.random.default_rng(spec.seed)
    scenes = []
    for k in range(spec.n_scenes):
        n_obj = int(rng.integers(spec.objects[0], spec.objects[1] + 1))
        boxes = []
        for _ in range(n_obj):
            if spec.placement == "uniform":
                boxes.append(_uniform_box(spec, rng))
            else:
                # every node has five children, so a uniform path is a uniform node
                node = Box(0.0, 0.0, float(size), float(size))
                for _ in range(int(rng.integers(spec.depths[0], spec.depths[1] + 1))):
                    node = children(node, scheme)[int(rng.integers(5))]
                boxes.append(node)
        shape = (size, size, spec.channels)
        img = rng.uniform(0.0, spec.noise, shape)
        fg = spec.foreground + rng.uniform(-spec.noise / 2, spec.noise / 2, shape)
        for box in boxes:
            _paint(img, box, fg)
        scenes.append(Scene(ImageRaster(_quantize(img)), boxes, [spec.label] * n_obj, f"synth_{k:05d}"))
    return scenes


# --- image files -----------------------------------------------------------

def save_pnm(path: Path, image: ImageRaster) -> None:
    data = np.round(image.data * 255.0).astype(np.uint8)
    if image.channels == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path, format="PPM")
    elif image.channels == 3:
        Image.fromarray(data, mode="RGB").save(path, format="PPM")
    else:
        raise ValueError("only grey or RGB images can be written")


def load_pnm(path: Path) -> ImageRaster:
    path = Path(path)
    if not path.is_file():
        raise MissingImage(f"image not found: {path}")
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return ImageRaster(arr)


# --- VOC annotations -------------------------------------------------------

def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_voc_annotation(path: Path, filename: str, image: ImageRaster,
                         objects: Sequence[tuple[str, Box]]) -> None:
    """Boxes are written with 1-based inclusive corners, as in VOC."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = filename
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(image.width)
    ET.SubElement(size, "height").text = str(image.height)
    ET.SubElement(size, "depth").text = str(image.channels)
    for label, box in objects:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = label
        ET.SubElement(obj, "difficult").text = "0"
        bb = ET.SubElement(obj, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), (box.x0 + 1, box.y0 + 1, box.x1, box.y1)):
            ET.SubElement(bb, tag).text = _fmt(v)
    ET.indent(root)
    Path(path).write_text(ET.tostring(root, encoding="unicode") + "\n")


def _line_of(text: str, tag: str, value: str) -> int:
    m = re.search(rf"<{tag}>\s*{re.escape(value)}\s*</{tag}>", text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


@dataclass
class VocAnnotation:
    filename: str
    width: int
    height: int
    objects: list[tuple[str, Box, bool]] = field(default_factory=list)


def parse_voc_annotation(path: Path) -> VocAnnotation:
    path = Path(path)
    text = path.read_text()
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"{path}:{exc.position[0]}: malformed XML ({exc})") from None

    def number(node, tag, kind=float):
        el = node.find(tag)
        if el is None or el.text is None:
            raise ParseError(f"{path}: missing <{tag}>")
        raw = el.text.strip()
        try:
            return kind(float(raw)) if kind is int else kind(raw)
        except ValueError:
            raise ParseError(f"{path}:{_line_of(text, tag, raw)}: bad <{tag}> value {raw!r}") from None

    size = root.find("size")
    if size is None:
        raise ParseError(f"{path}: missing <size>")
    ann = VocAnnotation(root.findtext("filename", default="").strip(),
                        number(size, "width", int), number(size, "height", int))
    for obj in root.iter("object"):
        name = (obj.findtext("name") or "").strip()
        difficult = (obj.findtext("difficult") or "0").strip() == "1"
        bb = obj.find("bndbox")
        if bb is None:
            raise ParseError(f"{path}: object {name!r} has no <bndbox>")
        xmin, ymin, xmax, ymax = (number(bb, t) for t in ("xmin", "ymin", "xmax", "ymax"))
        try:
            box = Box(xmin - 1, ymin - 1, xmax, ymax)
        except ValueError as exc:
            raise ParseError(f"{path}:{_line_of(text, 'xmin', obj.find('bndbox/xmin').text.strip())}: "
                             f"{exc}") from None
        ann.objects.append((name, box, difficult))
    return ann


@dataclass
class DatasetManifest:
    entries: list[tuple[str, str]]
    split: str = "train"
    root: Path = Path(".")

    @classmethod
    def read(cls, path: Path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise MissingImage(f"manifest not found: {path}")
        try:
            doc = json.loads(path.read_text())
            entries = [(e["image"], e["annotation"]) for e in doc["scenes"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: invalid manifest ({exc})") from None
        return cls(entries, doc.get("split", "train"), path.parent)

    def write(self, path: Path) -> None:
        doc = {"split": self.split,
               "scenes": [{"image": i, "annotation": a} for i, a in self.entries]}
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_voc_annotations(manifest: DatasetManifest, class_name: Optional[str] = "object") -> list[Scene]:
    """Scenes holding at least one non-difficult object of ``class_name``.

    ``class_name=None`` keeps every class.
    """
    scenes = []
    for image_rel, ann_rel in manifest.entries:
        ann_path = manifest.root / ann_rel
        if not ann_path.is_file():
            raise ParseError(f"{ann_path}: annotation file not found")
        ann = parse_voc_annotation(ann_path)
        image = load_pnm(manifest.root / image_rel)
        if (ann.width, ann.height) != (image.width, image.height):
            raise ParseError(f"{ann_path}: size {ann.width}x{ann.height} does not match "
                             f"image {image.width}x{image.height}")
        keep = [(name, box) for name, box, difficult in ann.objects
                if not difficult and (class_name is None or name == class_name)]
        if not keep:
            continue
        scenes.append(Scene(image, [b for _, b in keep], [n for n, _ in keep], Path(image_rel).stem))
    return scenes


def write_dataset(scenes: Sequence[Scene], out_dir: Path, split: str = "train") -> Path:
    """Write images, annotations and ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    for scene in scenes:
        ext = ".pgm" if scene.image.channels == 1 else ".ppm"
        img_rel = f"images/{scene.scene_id}{ext}"
        ann_rel = f"annotations/{scene.scene_id}.xml"
        save_pnm(out_dir / img_rel, scene.image)
        write_voc_annotation(out_dir / ann_rel, Path(img_rel).name, scene.image,
                             list(zip(scene.labels, scene.boxes)))
        entries.append((img_rel, ann_rel))
    manifest = out_dir / "manifest.json"
    DatasetManifest(entries, split).write(manifest)
    return manifest
