"""
Synthetic desk-scale counting scenes.

A scene is an image plus dot annotations (one per instance, any class),
exemplar boxes (all of the target class) and, for multi-class scenes made
by concatenating two single-class scenes, the side holding the objects of
interest.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from maskcount import imageio
from maskcount.errors import PlacementError, SceneFormatError, SynthesisError
from maskcount.numerics import gaussian_smooth

logger = logging.getLogger(__name__)

ANNOTATIONS = "annotations.json"
IMAGE = "image.ppm"
FORMAT_VERSION = 1

# Instances may overlap this much (box IoU) before a placement is rejected
MAX_IOU = 0.3
MAX_ATTEMPTS = 1000
MAX_CROP_ATTEMPTS = 100


@dataclass(frozen=True)
class DotAnnotation:
    x: float
    y: float
    class_id: int


@dataclass(frozen=True)
class ExemplarBox:
    x0: float
    y0: float
    x1: float
    y1: float
    class_id: int

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0


@dataclass(frozen=True)
class ShapeSpec:
    """
    How one object class looks: a coloured shape of a given radius.
    """

    shape: str
    base_color: Tuple[float, float, float]
    radius_px: float
    color_jitter: float = 0.06
    count_range: Tuple[int, int] = (5, 20)

    def __post_init__(self):
        if self.shape not in ("disc", "square", "triangle"):
            raise ValueError(f"Unknown shape {self.shape}")
        if self.radius_px < 2:
            raise ValueError("radius_px must be at least 2")
        if self.count_range[0] < 1 or self.count_range[0] > self.count_range[1]:
            raise ValueError(f"Invalid count_range {self.count_range}")


# The desk-scale object classes, indexed by class id
SHAPE_LIBRARY = [
    ShapeSpec("disc", (0.85, 0.20, 0.20), 5.0),
    ShapeSpec("square", (0.20, 0.70, 0.25), 5.0),
    ShapeSpec("triangle", (0.20, 0.35, 0.85), 6.0),
    ShapeSpec("disc", (0.90, 0.80, 0.20), 4.0),
    ShapeSpec("square", (0.75, 0.30, 0.80), 4.0),
    ShapeSpec("triangle", (0.15, 0.80, 0.80), 5.0),
]


@dataclass(eq=False)
class Scene:
    image: np.ndarray
    dots: List[DotAnnotation]
    exemplars: List[ExemplarBox]
    target_class: int
    interest_region: Optional[str] = None
    meta: Dict = field(default_factory=dict)

    @property
    def height(self):
        return self.image.shape[1]

    @property
    def width(self):
        return self.image.shape[2]

    @property
    def target_dots(self):
        return [d for d in self.dots if d.class_id == self.target_class]

    @property
    def count(self):
        """
        Ground-truth count: dots of the target class.
        """
        return len(self.target_dots)

    @property
    def is_multiclass(self):
        return self.interest_region is not None

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.image.shape == other.image.shape
            and np.array_equal(self.image, other.image)
            and self.dots == other.dots
            and self.exemplars == other.exemplars
            and self.target_class == other.target_class
            and self.interest_region == other.interest_region
            and self.meta == other.meta
        )

    def validate(self):
        """
        Raise ValueError if the scene breaks any of its invariants.
        """
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"Scene image must be (3, h, w), got {self.image.shape}")
        if np.any(self.image < 0) or np.any(self.image > 1):
            raise ValueError("Scene image values must lie in [0, 1]")
        for i, dot in enumerate(self.dots):
            if not (0 <= dot.x < self.width and 0 <= dot.y < self.height):
                raise ValueError(f"Dot {i} at ({dot.x}, {dot.y}) is outside the image")
        if not self.exemplars:
            raise ValueError("Scene needs at least one exemplar")
        for i, box in enumerate(self.exemplars):
            if box.class_id != self.target_class:
                raise ValueError(f"Exemplar {i} is class {box.class_id}, not {self.target_class}")
            if not (box.x0 < box.x1 and box.y0 < box.y1):
                raise ValueError(f"Exemplar {i} is empty")
            if box.x0 < 0 or box.y0 < 0 or box.x1 > self.width or box.y1 > self.height:
                raise ValueError(f"Exemplar {i} leaves the image")
        if self.interest_region not in (None, "left", "right"):
            raise ValueError(f"Invalid interest_region {self.interest_region}")
        if self.interest_region is not None and "seam" not in self.meta:
            raise ValueError("Multi-class scene is missing its seam column")
        return self


def shape_mask(shape, cx, cy, radius, xs, ys):
    """
    Boolean raster of a shape, sampled at pixel centers.
    """
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    if shape == "disc":
        return dx**2 + dy**2 <= radius**2
    if shape == "square":
        half = 0.8 * radius
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)

    # triangle, apex up, base 2r wide
    return (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) / 2.0)


def box_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def quantize(image):
    """
    Snap to the 8-bit grid so the scene survives a PPM round trip exactly.
    """
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def generate_single_class_scene(spec, canvas, seed, class_id=0):
    """
    Render one single-class scene.

    Parameters
    ----------
    spec
        ShapeSpec describing the class.
    canvas
        (height, width) in pixels, at least 64x64.
    seed
        The scene is a pure function of (spec, canvas, seed, class_id).
    class_id
        Class id written into dots and exemplars.
    """
    height, width = canvas
    if height < 64 or width < 64:
        raise ValueError(f"Canvas must be at least 64x64, got {height}x{width}")

    rng = np.random.default_rng(seed)
    radius = spec.radius_px
    count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))

    # noisy gray background
    level = rng.uniform(0.35, 0.55)
    image = level + rng.normal(0.0, 0.04, size=(3, height, width))

    boxes = []
    attempts = 0
    while len(boxes) < count:
        if attempts >= MAX_ATTEMPTS:
            raise PlacementError(count, len(boxes), attempts, spec.shape, radius)
        attempts += 1
        cx = rng.uniform(radius + 1, width - radius - 1)
        cy = rng.uniform(radius + 1, height - radius - 1)
        box = (cx - radius, cy - radius, cx + radius, cy + radius)
        if any(box_iou(box, other) >= MAX_IOU for other in boxes):
            continue
        boxes.append(box)

    dots = []
    tight = []
    for x0, y0, x1, y1 in boxes:
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        color = np.clip(
            np.asarray(spec.base_color) + rng.uniform(-1, 1, 3) * spec.color_jitter, 0, 1
        )
        left, top = int(np.floor(x0)), int(np.floor(y0))
        right, bottom = int(np.ceil(x1)) + 1, int(np.ceil(y1)) + 1
        ys, xs = np.mgrid[top:bottom, left:right]
        inside = shape_mask(spec.shape, cx, cy, radius, xs, ys)
        image[:, ys[inside], xs[inside]] = color[:, None]
        dots.append(DotAnnotation(float(cx), float(cy), class_id))
        tight.append(
            (
                float(xs[inside].min()),
                float(ys[inside].min()),
                float(xs[inside].max() + 1),
                float(ys[inside].max() + 1),
            )
        )

    image = quantize(image + rng.normal(0.0, 0.015, size=image.shape))

    n_exemplars = int(rng.integers(1, min(3, count) + 1))
    chosen = sorted(rng.choice(count, size=n_exemplars, replace=False).tolist())
    exemplars = [ExemplarBox(*tight[i], class_id=class_id) for i in chosen]

    meta = {
        "seed": int(seed),
        "generator": {
            "class_id": int(class_id),
            "shape": spec.shape,
            "radius_px": float(radius),
            "count": count,
            "canvas": [int(height), int(width)],
        },
    }
    return Scene(image, dots, exemplars, class_id, None, meta).validate()


def _crop_width(width, rng, align):
    fraction = rng.uniform(0.5, 0.7)
    cells = int(round(fraction * width / align))
    return int(np.clip(cells, 1, width // align) * align)


def synthesize_multiclass(a, b, seed, align=8):
    """
    Concatenate horizontal crops of two single-class scenes.

    The crop of `a` goes left and the crop of `b` goes right. One side is
    picked as the side of interest; its class becomes the target and its
    exemplars are the only ones kept. Dots from both sides are kept with
    their own class ids.
    """
    if a.target_class == b.target_class:
        raise ValueError("Multi-class scenes need two different classes")
    if a.height != b.height:
        raise ValueError(f"Scene heights differ ({a.height} vs {b.height})")

    rng = np.random.default_rng(seed)
    for _ in range(MAX_CROP_ATTEMPTS):
        wa = _crop_width(a.width, rng, align)
        wb = _crop_width(b.width, rng, align)
        xa = int(rng.integers(0, a.width - wa + 1))
        xb = int(rng.integers(0, b.width - wb + 1))
        region = "left" if rng.integers(0, 2) == 0 else "right"

        target, start, shift = (a, xa, -xa) if region == "left" else (b, xb, wa - xb)
        end = start + (wa if region == "left" else wb)
        exemplars = [
            ExemplarBox(e.x0 + shift, e.y0, e.x1 + shift, e.y1, e.class_id)
            for e in target.exemplars
            if e.x0 >= start and e.x1 <= end
        ]
        if exemplars:
            break
    else:
        raise SynthesisError(
            f"No crop kept an exemplar of class {target.target_class} "
            f"after {MAX_CROP_ATTEMPTS} attempts"
        )

    image = np.concatenate(
        [a.image[:, :, xa : xa + wa], b.image[:, :, xb : xb + wb]], axis=2
    )
    dots = [
        DotAnnotation(d.x - xa, d.y, d.class_id)
        for d in a.dots
        if xa <= d.x < xa + wa
    ] + [
        DotAnnotation(d.x - xb + wa, d.y, d.class_id)
        for d in b.dots
        if xb <= d.x < xb + wb
    ]
    meta = {
        "seed": int(seed),
        "seam": wa,
        "classes": [a.target_class, b.target_class],
        "crops": [[xa, wa], [xb, wb]],
        "sources": [a.meta.get("seed"), b.meta.get("seed")],
    }
    return Scene(image, dots, exemplars, target.target_class, region, meta).validate()


def build_gt_density(scene, r, sigma, keep=None):
    """
    Ground-truth density at feature resolution (h = H // r, w = W // r).

    One unit of mass per target-class dot, then a Gaussian blur, so the map
    sums to the target count. With a 0/1 `keep` grid only the dots whose
    cell is kept contribute.
    """
    h, w = scene.height // r, scene.width // r
    grid = np.zeros((h, w), dtype=np.float64)
    for dot in scene.target_dots:
        i = min(int(dot.y // r), h - 1)
        j = min(int(dot.x // r), w - 1)
        if keep is None or keep[i, j] == 1:
            grid[i, j] += 1.0
    return gaussian_smooth(grid, sigma)


def scene_to_dict(scene):
    return {
        "version": FORMAT_VERSION,
        "target_class": int(scene.target_class),
        "interest_region": scene.interest_region,
        "dots": [asdict(d) for d in scene.dots],
        "exemplars": [asdict(e) for e in scene.exemplars],
        "meta": scene.meta,
    }


def save_scene(scene, directory):
    os.makedirs(directory, exist_ok=True)
    imageio.write_ppm(scene.image, os.path.join(directory, IMAGE))
    with open(os.path.join(directory, ANNOTATIONS), "w") as fd:
        fd.write(json.dumps(scene_to_dict(scene), indent=2))


def _field(record, key, kind, path, where):
    if not isinstance(record, dict) or key not in record:
        raise SceneFormatError(path, f"{where}.{key}" if where else key, reason="missing")
    value = record[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SceneFormatError(
            path, f"{where}.{key}" if where else key, reason=f"expected {kind.__name__}"
        )
    return value


def load_scene(directory):
    """
    Read a scene bundle written by save_scene.
    """
    path = os.path.join(directory, ANNOTATIONS)
    try:
        with open(path, "r") as fd:
            text = fd.read()
    except FileNotFoundError:
        raise SceneFormatError(path, "file", reason="not found")
    try:
        record = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(path, "json", e.pos, e.msg)

    if _field(record, "version", int, path, "") != FORMAT_VERSION:
        raise SceneFormatError(path, "version", reason=f"expected {FORMAT_VERSION}")
    target = _field(record, "target_class", int, path, "")
    region = record.get("interest_region")
    if region not in (None, "left", "right"):
        raise SceneFormatError(path, "interest_region", reason=f"invalid value {region!r}")

    dots = []
    for i, item in enumerate(_field(record, "dots", list, path, "")):
        where = f"dots[{i}]"
        dots.append(
            DotAnnotation(
                _field(item, "x", float, path, where),
                _field(item, "y", float, path, where),
                _field(item, "class_id", int, path, where),
            )
        )
    exemplars = []
    for i, item in enumerate(_field(record, "exemplars", list, path, "")):
        where = f"exemplars[{i}]"
        exemplars.append(
            ExemplarBox(
                *[_field(item, k, float, path, where) for k in ("x0", "y0", "x1", "y1")],
                class_id=_field(item, "class_id", int, path, where),
            )
        )
    meta = _field(record, "meta", dict, path, "")
    _field(meta, "seed", int, path, "meta")

    image_path = os.path.join(directory, IMAGE)
    try:
        image = imageio.read_ppm(image_path)
    except FileNotFoundError:
        raise SceneFormatError(image_path, "file", reason="not found")
    scene = Scene(image, dots, exemplars, target, region, meta)
    try:
        return scene.validate()
    except ValueError as e:
        raise SceneFormatError(path, "scene", reason=str(e))
