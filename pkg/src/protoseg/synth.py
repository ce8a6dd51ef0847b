"""Deterministic synthetic scenes, occlusion fixtures and toy input images.

Randomness comes from splitmix64.  Each purpose (scene layout, individual
shapes, occlusion fixtures, class intensities, pixel noise) draws from its
own stream derived from the seed and a purpose tag, so new draws in one
stream never shift another.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assignment import LevelSpec, center_score, make_locations, regression_target
from .errors import ConfigurationError, InvariantError
from .geometry import BBox, BinaryMask, InstanceAnnotation, Scene

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

TAG_SCENE = 1
TAG_SHAPE = 2
TAG_OCCLUSION = 3
TAG_INTENSITY = 4
TAG_NOISE = 5

QUANTUM = 1.0 / 64.0  # exact in binary and in 6-decimal text

BACKGROUND = 0.1
NOISE_SIGMA = 0.02


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    # remixing h before each tag keeps the chain order-sensitive
    h = _mix((seed + GOLDEN_GAMMA) & MASK64)
    for t in tags:
        h = _mix((_mix(h) + t + GOLDEN_GAMMA) & MASK64)
    return h


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


class SplitMix64:
    """The splitmix64 generator with scalar and block draws."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]``."""
        span = hi - lo + 1
        if span <= 0:
            raise ConfigurationError(f"empty integer range [{lo}, {hi}]")
        return lo + self.next_u64() % span

    def choice(self, items):
        return items[self.randint(0, len(items) - 1)]

    def u64_block(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z

    def uniform_block(self, n: int) -> np.ndarray:
        return (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal_block(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform_block(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1]
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u[m:]
        return np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]


def stream(seed: int, *tags: int) -> SplitMix64:
    return SplitMix64(derive_seed(seed, *tags))


def _q(v: float) -> float:
    return round(v / QUANTUM) * QUANTUM


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 64
    instance_count: tuple[int, int] = (1, 4)
    shape_kinds: tuple[str, ...] = ("rectangle", "ellipse")
    size_range: tuple[float, float] = (0.15, 0.5)
    num_classes: int = 1
    overlap: str = "free"
    seed: int = 0
    max_retries: int = 20

    def __post_init__(self):
        lo, hi = self.instance_count
        if not 0 <= lo <= hi:
            raise ConfigurationError(f"bad instance_count range {self.instance_count}")
        s0, s1 = self.size_range
        if not 0 < s0 <= s1 <= 1:
            raise ConfigurationError(f"bad size_range {self.size_range}")
        if min(self.width, self.height) * s1 < 4:
            raise ConfigurationError("size range cannot produce boxes of at least 4x4 pixels")
        if not self.shape_kinds or any(k not in ("rectangle", "ellipse") for k in self.shape_kinds):
            raise ConfigurationError(f"bad shape kinds {self.shape_kinds}")
        if self.overlap not in ("free", "occlusion-case"):
            raise ConfigurationError(f"bad overlap policy {self.overlap!r}")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")


def _pixel_centers(width: int, height: int):
    return np.arange(width) + 0.5, np.arange(height) + 0.5


def rectangle_mask(box: BBox, width: int, height: int) -> np.ndarray:
    return BinaryMask.from_box(box, width, height).bits.copy()


def ellipse_mask(cx: float, cy: float, a: float, b: float, width: int, height: int) -> np.ndarray:
    xs, ys = _pixel_centers(width, height)
    dx = ((xs - cx) / a) ** 2
    dy = ((ys - cy) / b) ** 2
    return dy[:, None] + dx[None, :] <= 1.0


def _tight_box(bits: np.ndarray) -> Optional[tuple[float, float, float, float]]:
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    if rows.size == 0:
        return None
    return (float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def _draw_shape(rng: SplitMix64, config: SynthConfig):
    W, H = config.width, config.height
    kind = rng.choice(config.shape_kinds)
    s0, s1 = config.size_range
    a = _q(rng.uniform(s0, s1) * W / 2)
    b = _q(rng.uniform(s0, s1) * H / 2)
    cx = _q(rng.uniform(a, W - a))
    cy = _q(rng.uniform(b, H - b))
    class_id = rng.randint(0, config.num_classes - 1)
    return kind, cx, cy, a, b, class_id


def gen_scene(config: SynthConfig, index: int) -> Scene:
    if config.overlap == "occlusion-case":
        return gen_occlusion_case(derive_seed(config.seed, TAG_SCENE, index), config.width, config.height,
                                  scene_id=f"occ-{config.seed}-{index}")
    W, H = config.width, config.height
    layout = stream(config.seed, TAG_SCENE, index)
    n = layout.randint(*config.instance_count)
    shapes = []
    for k in range(n):
        rng = stream(config.seed, TAG_SHAPE, index, k)
        for _ in range(config.max_retries):
            kind, cx, cy, a, b, class_id = _draw_shape(rng, config)
            if 2 * a < 4 or 2 * b < 4 or cx - a < 0 or cy - b < 0 or cx + a > W or cy + b > H:
                continue
            analytic = (cx - a, cy - b, cx + a, cy + b)
            if kind == "rectangle":
                full = rectangle_mask(BBox(*analytic), W, H)
            else:
                full = ellipse_mask(cx, cy, a, b, W, H)
            tight = _tight_box(full)
            if tight is None:
                continue
            box = BBox(
                min(analytic[0], tight[0]),
                min(analytic[1], tight[1]),
                max(analytic[2], tight[2]),
                max(analytic[3], tight[3]),
            )
            shapes.append((class_id, box, full))
            break

    owner = np.full((H, W), -1, dtype=np.int64)
    for k, (_, _, full) in enumerate(shapes):
        owner[full] = k
    instances = []
    for k, (class_id, box, _) in enumerate(shapes):
        visible = owner == k
        if visible.any():
            instances.append(InstanceAnnotation(class_id, box, BinaryMask(visible)))
    return Scene(f"s{config.seed}-{index}", W, H, tuple(instances))


def gen_scenes(config: SynthConfig, count: int, start: int = 0) -> list[Scene]:
    return [gen_scene(config, i) for i in range(start, start + count)]


# --------------------------------------------------------------------------
# center-occlusion fixtures

OCCLUSION_LEVEL = LevelSpec(8, 0, 64)


def contested_location(scene: Scene, level: LevelSpec = OCCLUSION_LEVEL) -> tuple[int, int]:
    """Grid cell ``(row, col)`` nearest the large instance's box center."""
    large = max(range(len(scene.instances)), key=lambda i: scene.instances[i].area)
    cx, cy = scene.instances[large].box.center
    s = level.stride
    col = int(np.clip(np.floor(cx / s), 0, -(-scene.width // s) - 1))
    row = int(np.clip(np.floor(cy / s), 0, -(-scene.height // s) - 1))
    return row, col


def occlusion_margins(scene: Scene, level: LevelSpec = OCCLUSION_LEVEL) -> tuple[float, float]:
    """Center scores of (large, small) boxes at the contested location."""
    row, col = contested_location(scene, level)
    grid = make_locations(level, scene.width, scene.height)
    point = grid.points[row * grid.cols + col]
    large, small = sorted(scene.instances, key=lambda inst: -inst.area)
    return (
        center_score(regression_target(point, large.box)),
        center_score(regression_target(point, small.box)),
    )


def _occlusion_ok(large: BBox, small: BBox, point, level: LevelSpec) -> bool:
    tl = regression_target(point, large)
    ts = regression_target(point, small)
    for t in (tl, ts):
        d = t.as_tuple()
        if min(d) <= 0 or not (level.min_range < max(d) <= level.max_range):
            return False
    return center_score(tl) > center_score(ts) and large.width * large.height > small.width * small.height


def gen_occlusion_case(seed: int, width: int = 64, height: int = 64, scene_id: Optional[str] = None,
                       level: LevelSpec = OCCLUSION_LEVEL) -> Scene:
    """Two boxes where a small box covers the large box's central location.

    At the contested location both boxes are candidates, the small one has
    the smaller area, and the large one has the strictly higher center score.
    """
    s = level.stride
    rng = stream(seed, TAG_OCCLUSION)
    half_max = min(24.0, (min(width, height) - 2 * s) / 2)
    if half_max < 12:
        raise ConfigurationError(f"canvas {width}x{height} too small for an occlusion fixture")
    for _ in range(64):
        ax = _q(rng.uniform(12.0, half_max))
        ay = _q(rng.uniform(12.0, half_max))
        cols = [c for c in range(-(-width // s)) if ax + 2 <= s / 2 + c * s <= width - ax - 2]
        rows = [r for r in range(-(-height // s)) if ay + 2 <= s / 2 + r * s <= height - ay - 2]
        if not cols or not rows:
            continue
        px = s / 2 + rng.choice(cols) * s
        py = s / 2 + rng.choice(rows) * s
        cx = px + _q(rng.uniform(-1.5, 1.5))
        cy = py + _q(rng.uniform(-1.5, 1.5))
        large = BBox(cx - ax, cy - ay, cx + ax, cy + ay)
        sw = 2 * _q(rng.uniform(3.0, 8.0))
        sh = 2 * _q(rng.uniform(3.0, 8.0))
        ux = rng.uniform(0.1, 0.3)
        if rng.randint(0, 1):
            ux = 1.0 - ux
        uy = rng.uniform(0.1, 0.9)
        sx1 = _q(px - ux * sw)
        sy1 = _q(py - uy * sh)
        small = BBox(sx1, sy1, sx1 + sw, sy1 + sh)
        if small.x1 < 0 or small.y1 < 0 or small.x2 > width or small.y2 > height:
            continue
        if not _occlusion_ok(large, small, (px, py), level):
            continue
        big_bits = rectangle_mask(large, width, height)
        small_bits = rectangle_mask(small, width, height)
        big_bits &= ~small_bits
        scene = Scene(
            scene_id if scene_id is not None else f"occ-{seed}",
            width,
            height,
            (
                InstanceAnnotation(0, large, BinaryMask(big_bits)),
                InstanceAnnotation(0, small, BinaryMask(small_bits)),
            ),
        )
        if contested_location(scene, level) != ((int(py // s)), int(px // s)):
            continue
        return scene
    raise InvariantError(f"no valid occlusion fixture for seed {seed}")


# --------------------------------------------------------------------------
# rendering


def class_intensity(class_id: int) -> float:
    return 0.4 + 0.6 * stream(0, TAG_INTENSITY, class_id).uniform()


def render_image(scene: Scene, seed: Optional[int] = None) -> np.ndarray:
    """Single-channel ``(height, width)`` image in ``[0, 1]``."""
    img = np.full((scene.height, scene.width), BACKGROUND)
    for inst in scene.instances:
        img[inst.mask.bits] = class_intensity(inst.class_id)
    noise_seed = fnv1a64(scene.id) if seed is None else seed
    noise = stream(noise_seed, TAG_NOISE).normal_block(img.size).reshape(img.shape)
    return np.clip(img + NOISE_SIGMA * noise, 0.0, 1.0)


def to_pgm(image: np.ndarray) -> bytes:
    """8-bit binary PGM (P5) of an image with values in ``[0, 1]``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigurationError("PGM export needs a 2-D image")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + data.tobytes()
