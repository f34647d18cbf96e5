"""Deterministic synthetic two-hands scene generator and dataset I/O.

Scenes are built from a fixed canonical right-hand template (left hands
mirror it across x=0), uniformly scaled, rotated, and placed so that every
joint projects inside the image and every depth stays inside the
configured range. All randomness flows through PortableRng with one
stream per (seed, sample index), so generation is bit-reproducible and
order-independent across samples.

Rendering: skeleton edges as anti-aliased segments plus Gaussian blobs at
the joints, drawn onto one canvas per hand. The left-hand canvas lands in
channel 0, the right-hand canvas in channel 1, and their maximum in
channel 2; this side-coded palette is what lets a desk-scale backbone
learn hand classification. Pixel (row r, col c) samples the continuous
image point (u=c, v=r); images are float32 in [0, 1].

Horizontal flip augmentation mirrors image columns (discrete index
W-1-c), swaps the left/right channels so the side coding stays consistent
with the swapped labels, maps annotations through the continuous mirror
u' = W - u, and invalidates xyz (flipped samples supervise only in
normalized UVD space). The half-pixel gap between the discrete and
continuous mirrors is accepted; it is sub-pixel and irrelevant at this
scale.

On-disk layout (format_version 1):

    meta.json       format version, generator-config echo, intrinsics, count
    samples.jsonl   one object per sample: id, image path, hands
                    [{side, uvd 21x3, xyz 21x3 | null}]
    images/<id>.imgf   magic "IMGF", u32 version, u32 H, W, C, then
                    H*W*C little-endian float32, row-major, channel-last
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .geometry import (
    CameraIntrinsics,
    HandSide,
    JointSet3D,
    JointSetUVD,
    N_JOINTS,
    hflip_uvd,
    xyz_to_uvd,
)
from .hand_model import DEFAULT_TOPOLOGY, FINGER_SLICES, SkeletonTopology
from .rng import PortableRng

IMAGE_MAGIC = b"IMGF"
IMAGE_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = 1

# Canonical right-hand template: per-finger in-plane fan angle (degrees
# from +y toward +x) and bone lengths (mm), proximal to distal.
FINGER_ANGLES_DEG = {
    "thumb": -40.0,
    "index": -15.0,
    "middle": 0.0,
    "ring": 15.0,
    "pinky": 35.0,
}
FINGER_BONE_LENGTHS = {
    "thumb": (45.0, 35.0, 28.0, 25.0),
    "index": (90.0, 40.0, 25.0, 22.0),
    "middle": (85.0, 45.0, 28.0, 24.0),
    "ring": (80.0, 42.0, 26.0, 23.0),
    "pinky": (75.0, 32.0, 20.0, 20.0),
}

_PLACEMENT_ATTEMPTS = 200


def default_intrinsics(image_size: tuple[int, int] = (32, 32),
                       focal: float = 24.0) -> CameraIntrinsics:
    h, w = image_size
    return CameraIntrinsics(fx=focal, fy=focal, cx=w / 2.0, cy=h / 2.0,
                            width=float(w), height=float(h))


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n_samples: int = 100
    image_size: tuple[int, int] = (32, 32)
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    depth_range: tuple[float, float] = (500.0, 1200.0)
    rotation_jitter_deg: float = 20.0
    subject_scale_factor: float = 1.0
    scale_jitter: tuple[float, float] = (0.85, 1.15)
    hand_presence_prob: float = 0.9
    distractor: bool = False

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(self.image_size))
        object.__setattr__(self, "depth_range", tuple(self.depth_range))
        object.__setattr__(self, "scale_jitter", tuple(self.scale_jitter))
        if isinstance(self.intrinsics, dict):
            object.__setattr__(self, "intrinsics",
                               CameraIntrinsics.from_dict(self.intrinsics))
        h, w = self.image_size
        if (self.intrinsics.width, self.intrinsics.height) != (float(w), float(h)):
            raise ConfigError("intrinsics width/height must match image_size")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")
        if not (0.0 < self.depth_range[0] < self.depth_range[1]):
            raise ConfigError(f"bad depth range {self.depth_range}")
        if not (0.0 < self.scale_jitter[0] <= self.scale_jitter[1]):
            raise ConfigError(f"bad scale jitter {self.scale_jitter}")
        if not 0.0 <= self.hand_presence_prob <= 1.0:
            raise ConfigError("hand_presence_prob must be in [0, 1]")
        if self.subject_scale_factor <= 0:
            raise ConfigError("subject_scale_factor must be > 0")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_samples": self.n_samples,
            "image_size": list(self.image_size),
            "intrinsics": self.intrinsics.to_dict(),
            "depth_range": list(self.depth_range),
            "rotation_jitter_deg": self.rotation_jitter_deg,
            "subject_scale_factor": self.subject_scale_factor,
            "scale_jitter": list(self.scale_jitter),
            "hand_presence_prob": self.hand_presence_prob,
            "distractor": self.distractor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(**d)


@dataclass(frozen=True)
class HandAnnotation:
    side: HandSide
    uvd: JointSetUVD
    xyz: JointSet3D | None  # None once flipped: excluded from metric supervision


@dataclass(frozen=True)
class SceneSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    hands: tuple[HandAnnotation, ...]
    camera: CameraIntrinsics

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        img.setflags(write=False)
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "hands", tuple(self.hands))
        sides = [h.side for h in self.hands]
        if len(set(sides)) != len(sides):
            raise ConfigError("at most one hand per side")


def template_hand(topo: SkeletonTopology = DEFAULT_TOPOLOGY) -> JointSet3D:
    """Canonical right hand, wrist at the origin, fingers fanned in the
    x-y plane; bone j of a finger extends its chain along the finger's
    fixed direction by the tabulated length."""
    if topo.edges != DEFAULT_TOPOLOGY.edges:
        raise ConfigError("template_hand is defined on the default joint layout")
    joints = np.zeros((N_JOINTS, 3))
    for finger, sl in FINGER_SLICES.items():
        a = math.radians(FINGER_ANGLES_DEG[finger])
        direction = np.array([math.sin(a), math.cos(a), 0.0])
        pos = np.zeros(3)
        for j, length in zip(range(sl.start, sl.stop), FINGER_BONE_LENGTHS[finger]):
            pos = pos + length * direction
            joints[j] = pos
    return JointSet3D(joints)


def _mirror_x(pose: JointSet3D) -> JointSet3D:
    out = pose.joints.copy()
    out[:, 0] = -out[:, 0]
    return JointSet3D(out)


def _rotation(rng: PortableRng, jitter_deg: float) -> np.ndarray:
    ax, ay, az = (math.radians(rng.uniform(-jitter_deg, jitter_deg))
                  for _ in range(3))
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _place_hand(rng: PortableRng, cfg: GenConfig, side: HandSide,
                base: JointSet3D) -> tuple[JointSetUVD, JointSet3D]:
    """Scale/rotate/translate one hand so all joints project in view and
    all depths stay in range.

    The wrist position is drawn uniformly inside a conservative margin
    computed from the rotated hand's extent, so acceptance does not
    depend on where the hand landed (keeps the scale-jitter distribution
    unbiased); the explicit bounds check after projection is a safety
    net that essentially never fires.
    """
    cam = cfg.intrinsics
    h, w = cfg.image_size
    d_lo, d_hi = cfg.depth_range
    shape = base if side is HandSide.RIGHT else _mirror_x(base)
    for _ in range(_PLACEMENT_ATTEMPTS):
        jitter = rng.uniform(*cfg.scale_jitter)
        scale = cfg.subject_scale_factor * jitter
        rot = _rotation(rng, cfg.rotation_jitter_deg)
        local = (rot @ (scale * shape.joints).T).T  # wrist stays at origin
        dz_min, dz_max = local[:, 2].min(), local[:, 2].max()
        depth_lo = d_lo - dz_min
        depth_hi = d_hi - dz_max
        if depth_lo >= depth_hi:
            continue
        d = rng.uniform(depth_lo, depth_hi)
        z_nearest = d + dz_min
        margin_u = (cam.fx * np.abs(local[:, 0]).max()
                    + max(cam.cx, w - cam.cx) * max(abs(dz_min), abs(dz_max))
                    ) / z_nearest + 1.0
        margin_v = (cam.fy * np.abs(local[:, 1]).max()
                    + max(cam.cy, h - cam.cy) * max(abs(dz_min), abs(dz_max))
                    ) / z_nearest + 1.0
        if margin_u >= w / 2 or margin_v >= h / 2:
            continue
        u_w = rng.uniform(margin_u, w - margin_u)
        v_w = rng.uniform(margin_v, h - margin_v)
        wrist = np.array([(u_w - cam.cx) * d / cam.fx,
                          (v_w - cam.cy) * d / cam.fy, d])
        xyz = JointSet3D(local + wrist)
        uvd = xyz_to_uvd(xyz, cam)
        if (np.all(uvd.u >= 0.5) and np.all(uvd.u <= w - 0.5)
                and np.all(uvd.v >= 0.5) and np.all(uvd.v <= h - 0.5)
                and np.all(uvd.d >= d_lo) and np.all(uvd.d <= d_hi)):
            return uvd, xyz
    raise ConfigError(
        f"could not place a {side.value} hand after {_PLACEMENT_ATTEMPTS} "
        f"attempts; depth range / image size / scale are incompatible")


# -- rendering ------------------------------------------------------------------

_SEGMENT_SIGMA = 0.6
_BLOB_SIGMA = 1.0
_WINDOW = 3  # pixels beyond the primitive's bounding box


def _draw_segment(canvas: np.ndarray, p: np.ndarray, q: np.ndarray) -> None:
    h, w = canvas.shape
    lo_c = max(int(np.floor(min(p[0], q[0]))) - _WINDOW, 0)
    hi_c = min(int(np.ceil(max(p[0], q[0]))) + _WINDOW, w - 1)
    lo_r = max(int(np.floor(min(p[1], q[1]))) - _WINDOW, 0)
    hi_r = min(int(np.ceil(max(p[1], q[1]))) + _WINDOW, h - 1)
    if lo_c > hi_c or lo_r > hi_r:
        return
    cols = np.arange(lo_c, hi_c + 1)
    rows = np.arange(lo_r, hi_r + 1)
    cc, rr = np.meshgrid(cols, rows)
    seg = q - p
    seg_len2 = seg @ seg
    if seg_len2 == 0.0:
        t = np.zeros_like(cc, dtype=np.float64)
    else:
        t = np.clip(((cc - p[0]) * seg[0] + (rr - p[1]) * seg[1]) / seg_len2, 0.0, 1.0)
    dx = cc - (p[0] + t * seg[0])
    dy = rr - (p[1] + t * seg[1])
    val = np.exp(-(dx * dx + dy * dy) / (2.0 * _SEGMENT_SIGMA ** 2))
    region = canvas[lo_r:hi_r + 1, lo_c:hi_c + 1]
    np.maximum(region, val, out=region)


def _draw_blob(canvas: np.ndarray, p: np.ndarray) -> None:
    h, w = canvas.shape
    lo_c = max(int(np.floor(p[0])) - _WINDOW, 0)
    hi_c = min(int(np.ceil(p[0])) + _WINDOW, w - 1)
    lo_r = max(int(np.floor(p[1])) - _WINDOW, 0)
    hi_r = min(int(np.ceil(p[1])) + _WINDOW, h - 1)
    if lo_c > hi_c or lo_r > hi_r:
        return
    cols = np.arange(lo_c, hi_c + 1)
    rows = np.arange(lo_r, hi_r + 1)
    cc, rr = np.meshgrid(cols, rows)
    val = np.exp(-((cc - p[0]) ** 2 + (rr - p[1]) ** 2) / (2.0 * _BLOB_SIGMA ** 2))
    region = canvas[lo_r:hi_r + 1, lo_c:hi_c + 1]
    np.maximum(region, val, out=region)


def _render_hand_canvas(size: tuple[int, int], uvd: JointSetUVD,
                        topo: SkeletonTopology) -> np.ndarray:
    canvas = np.zeros(size, dtype=np.float64)
    pts = uvd.joints[:, :2]
    for parent, child in topo.edges:
        _draw_segment(canvas, pts[parent], pts[child])
    for j in range(N_JOINTS):
        _draw_blob(canvas, pts[j])
    return canvas


def render_scene(
    cfg: GenConfig,
    hands: list[HandAnnotation],
    distractor_rect: tuple[float, float, float, float] | None = None,
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
) -> np.ndarray:
    """Compose per-side canvases into the (H, W, 3) float32 image."""
    size = cfg.image_size
    canvases = {side: np.zeros(size, dtype=np.float64) for side in HandSide}
    for hand in hands:
        canvases[hand.side] = _render_hand_canvas(size, hand.uvd, topo)
    image = np.zeros(size + (3,), dtype=np.float64)
    if distractor_rect is not None:
        u0, v0, u1, v1 = distractor_rect
        r0, r1 = max(int(v0), 0), min(int(v1), size[0] - 1)
        c0, c1 = max(int(u0), 0), min(int(u1), size[1] - 1)
        if r0 <= r1 and c0 <= c1:
            image[r0:r1 + 1, c0:c1 + 1, :] = 0.35
    image[:, :, 0] = np.maximum(image[:, :, 0], canvases[HandSide.LEFT])
    image[:, :, 1] = np.maximum(image[:, :, 1], canvases[HandSide.RIGHT])
    both = np.maximum(canvases[HandSide.LEFT], canvases[HandSide.RIGHT])
    image[:, :, 2] = np.maximum(image[:, :, 2], both)
    return image.astype(np.float32)


def generate_sample(cfg: GenConfig, index: int,
                    topo: SkeletonTopology = DEFAULT_TOPOLOGY) -> SceneSample:
    """Sample `index` of the dataset; draws only from its own RNG stream."""
    rng = PortableRng(cfg.seed, stream=index + 1)
    rect = None
    if cfg.distractor:
        h, w = cfg.image_size
        cu, cv = rng.uniform(0.2 * w, 0.8 * w), rng.uniform(0.2 * h, 0.8 * h)
        eu, ev = rng.uniform(2.0, 0.25 * w), rng.uniform(2.0, 0.25 * h)
        rect = (cu - eu, cv - ev, cu + eu, cv + ev)
    present = {side: rng.bernoulli(cfg.hand_presence_prob) for side in HandSide}
    base = template_hand(topo)
    hands = []
    for side in HandSide:  # fixed order: left, then right
        if not present[side]:
            continue
        uvd, xyz = _place_hand(rng, cfg, side, base)
        hands.append(HandAnnotation(side=side, uvd=uvd, xyz=xyz))
    image = render_scene(cfg, hands, rect, topo)
    return SceneSample(image=image, hands=tuple(hands), camera=cfg.intrinsics)


def generate_dataset(cfg: GenConfig,
                     topo: SkeletonTopology = DEFAULT_TOPOLOGY) -> list[SceneSample]:
    return [generate_sample(cfg, i, topo) for i in range(cfg.n_samples)]


# -- augmentation ------------------------------------------------------------------

def hflip_sample(sample: SceneSample) -> SceneSample:
    """Deterministic horizontal flip; see module docstring for semantics."""
    flipped_img = np.ascontiguousarray(sample.image[:, ::-1, :][:, :, [1, 0, 2]])
    hands = []
    for hand in sample.hands:
        uvd, side = hflip_uvd(hand.uvd, hand.side, sample.camera.width)
        hands.append(HandAnnotation(side=side, uvd=uvd, xyz=None))
    hands.sort(key=lambda h: h.side.value)
    return SceneSample(image=flipped_img, hands=tuple(hands), camera=sample.camera)


def augment(sample: SceneSample, rng: PortableRng) -> SceneSample:
    """With probability 0.5, the horizontally flipped sample; else unchanged."""
    if rng.bernoulli(0.5):
        return hflip_sample(sample)
    return sample


# -- dataset I/O ------------------------------------------------------------------

_IMG_HEADER = struct.Struct("<4sIIII")


def write_image(path: Path, image: np.ndarray) -> None:
    arr = np.ascontiguousarray(image, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_IMG_HEADER.pack(IMAGE_MAGIC, IMAGE_FORMAT_VERSION,
                                 arr.shape[0], arr.shape[1], arr.shape[2]))
        f.write(arr.tobytes())


def read_image(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _IMG_HEADER.size:
        raise FormatError(f"{path}: truncated image header")
    magic, version, h, w, c = _IMG_HEADER.unpack_from(raw)
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != IMAGE_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported image format version {version}")
    expected = _IMG_HEADER.size + h * w * c * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=_IMG_HEADER.size).reshape(h, w, c)


def _sample_record(index: int, image_name: str, sample: SceneSample) -> dict:
    hands = []
    for hand in sample.hands:
        hands.append({
            "side": hand.side.value,
            "uvd": hand.uvd.joints.tolist(),
            "xyz": hand.xyz.joints.tolist() if hand.xyz is not None else None,
        })
    return {"id": index, "image": image_name, "hands": hands}


def write_dataset(samples: list[SceneSample], path: str | Path,
                  gen_config: GenConfig | None = None) -> None:
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    if samples:
        cam = samples[0].camera
    elif gen_config is not None:
        cam = gen_config.intrinsics
    else:
        raise ConfigError("cannot infer intrinsics for an empty dataset")
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "n_samples": len(samples),
        "intrinsics": cam.to_dict(),
        "gen_config": gen_config.to_dict() if gen_config is not None else None,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    lines = []
    for i, sample in enumerate(samples):
        name = f"images/{i:06d}.imgf"
        write_image(path / name, sample.image)
        lines.append(json.dumps(_sample_record(i, name, sample), sort_keys=True))
    (path / "samples.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))


def read_dataset(path: str | Path) -> tuple[list[SceneSample], dict]:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no dataset at {path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{meta_path}: invalid JSON: {e}") from e
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatError(f"{meta_path}: unsupported format version "
                          f"{meta.get('format_version')!r}")
    cam = CameraIntrinsics.from_dict(meta["intrinsics"])
    samples = []
    lines = (path / "samples.jsonl").read_text().splitlines()
    for line in lines:
        rec = json.loads(line)
        hands = []
        for h in rec["hands"]:
            hands.append(HandAnnotation(
                side=HandSide(h["side"]),
                uvd=JointSetUVD(np.array(h["uvd"])),
                xyz=JointSet3D(np.array(h["xyz"])) if h["xyz"] is not None else None,
            ))
        image = read_image(path / rec["image"])
        samples.append(SceneSample(image=image, hands=tuple(hands), camera=cam))
    if len(samples) != meta["n_samples"]:
        raise FormatError(f"{path}: meta promises {meta['n_samples']} samples, "
                          f"found {len(samples)}")
    return samples, meta
