"""Soft silhouettes of capsule primitives through a pinhole camera."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .kinematics import CapsuleSet, Segment3, base_to_transform

NEAR_PLANE = 1e-4


class BehindCameraError(ValueError):
    def __init__(self, depth):
        super().__init__(f"point behind camera or inside near plane: depth {depth:.6g} m "
                         f"(near plane {NEAR_PLANE} m)")
        self.depth = depth


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    # world-from-camera as (axis-angle, translation)
    pose: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def camera_from_world(self) -> np.ndarray:
        wc = base_to_transform(self.pose).value
        inv = np.eye(4)
        inv[:3, :3] = wc[:3, :3].T
        inv[:3, 3] = -wc[:3, :3].T @ wc[:3, 3]
        return inv


def project(camera: Camera, points) -> Tensor:
    """Pixel coordinates and depth, (..., 3) -> (..., 3) as (u, v, z)."""
    p = ag.as_tensor(points)
    single = p.ndim == 1
    if single:
        p = p.reshape(1, 3)
    cw = camera.camera_from_world()
    pc = p @ Tensor(cw[:3, :3].T) + Tensor(cw[:3, 3])
    z = pc[:, 2]
    bad = z.value <= NEAR_PLANE
    if np.any(bad):
        raise BehindCameraError(float(z.value[np.argmax(bad)]))
    u = pc[:, 0] / z * camera.fx + camera.cx
    v = pc[:, 1] / z * camera.fy + camera.cy
    out = ag.stack([u, v, z], axis=1)
    return out[0] if single else out


def soft_silhouette(segments: Sequence[Segment3] | CapsuleSet, camera: Camera, tau: float) -> Tensor:
    """Differentiable occupancy image in (0, 1), shape (height, width).

    Each capsule contributes ``sigmoid((r_proj - dist) / tau)`` where ``dist``
    is the pixel's distance to the projected axis and ``r_proj`` the radius
    scaled by ``fx`` over the mean endpoint depth. Contributions are combined
    as a probabilistic union.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if len(segments) == 0:
        return Tensor(np.zeros((camera.height, camera.width)))
    caps = segments if isinstance(segments, CapsuleSet) else CapsuleSet.from_segments(segments)
    n = len(caps)
    uvz = project(camera, ag.concat([caps.p0, caps.p1], axis=0))
    a = uvz[:n, 0:2]
    b = uvz[n:, 0:2]
    mean_depth = (uvz[:n, 2] + uvz[n:, 2]) * 0.5
    r = (caps.radii * camera.fx) / mean_depth
    return ag.silhouette(a, b, r, tau, camera.height, camera.width)


def composite_hybrid(soft, tool_intensity: float, background) -> Tensor:
    """Blend a flat-shaded tool over a background image."""
    if not 0.0 <= tool_intensity <= 1.0:
        raise ValueError(f"tool intensity must lie in [0, 1], got {tool_intensity}")
    s = ag.as_tensor(soft)
    bg = np.asarray(background.value if isinstance(background, Tensor) else background,
                    dtype=np.float64)
    if s.shape != bg.shape:
        raise ag.ShapeError(f"composite: soft mask {s.shape} vs background {bg.shape}")
    return s * (tool_intensity - bg) + bg


def threshold_mask(soft, level: float = 0.5) -> np.ndarray:
    if not 0.0 < level < 1.0:
        raise ValueError(f"threshold level must lie in (0, 1), got {level}")
    values = soft.value if isinstance(soft, Tensor) else np.asarray(soft)
    return values >= level


# ---------------------------------------------------------------------------
# 8-bit binary PGM


def to_uint8(image) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == bool:
        return image.astype(np.uint8) * 255
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def quantize(image) -> np.ndarray:
    """Round an intensity image to the 8-bit levels a PGM file can hold."""
    return to_uint8(image).astype(np.float64) / 255.0


def write_pgm(path, image) -> None:
    """Write a bool mask, uint8 array, or [0, 1] float image as binary P5."""
    data = image if np.asarray(image).dtype == np.uint8 else to_uint8(image)
    data = np.ascontiguousarray(data)
    if data.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 file with maxval 255 as uint8."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).copy()


def read_mask(path) -> np.ndarray:
    return read_pgm(path) >= 128


def read_image(path) -> np.ndarray:
    return read_pgm(path).astype(np.float64) / 255.0
