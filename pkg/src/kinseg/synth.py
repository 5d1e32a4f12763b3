"""Synthetic sequences: smooth true kinematics render the images and masks,
measurements are the truth plus drifting bias and white noise, and domain
corruptions alter appearance without touching geometry."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kinematics import ArmModel, CapsuleSet, capsules
from .renderer import (Camera, composite_hybrid, quantize, read_image, read_mask,
                       soft_silhouette, threshold_mask, write_pgm)

DOMAINS = ("regular", "low-brightness", "smoke", "bleeding", "bg-change")


class MissingDatasetError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class TrajectorySpec:
    length: int = 100
    offset: tuple[float, ...] = ()
    amplitude: tuple[float, ...] = ()
    freq_min: float = 0.02
    freq_max: float = 0.06
    sinusoids: int = 3
    seed: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("trajectory length must be >= 1")
        if any(a < 0 for a in self.amplitude):
            raise ValueError("amplitudes must be non-negative")
        if not 0 <= self.freq_min <= self.freq_max:
            raise ValueError("need 0 <= freq_min <= freq_max")
        if self.sinusoids < 1:
            raise ValueError("need at least one sinusoid per joint")


@dataclass(frozen=True)
class NoiseSpec:
    sigma_w: float = 0.02
    sigma_b: float = 0.005
    scale: tuple[float, ...] = ()
    seed: int = 1

    def __post_init__(self):
        if self.sigma_w < 0 or self.sigma_b < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "regular"
    brightness: float = 0.4
    smoke: float = 0.35
    bleed: float = -0.5
    bleed_count: int = 6
    bleed_radius: float = 14.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DOMAINS:
            raise ValueError(f"unknown domain kind {self.kind!r}; expected one of {DOMAINS}")
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError("brightness factor must lie in [0, 1]")
        if not 0.0 <= self.smoke <= 1.0:
            raise ValueError("smoke amplitude must lie in [0, 1]")
        if not -1.0 <= self.bleed <= 0.0:
            raise ValueError("bleed amplitude must lie in [-1, 0]")
        if self.bleed_count < 0 or self.bleed_radius <= 0:
            raise ValueError("bleed blotch count must be >= 0 and radius > 0")


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def _per_joint(values, d, name):
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 1:
        return np.full(d, arr[0])
    if arr.size != d:
        raise ValueError(f"{name}: expected 1 or {d} values, got {arr.size}")
    return arr


def gen_trajectory(spec: TrajectorySpec, arms: Sequence[ArmModel]) -> np.ndarray:
    """(length, d) true joint values: offset plus a seeded sum of sinusoids.

    Each joint's amplitude is split across its sinusoids, so every trace stays
    within offset +- amplitude and moves at most amplitude * freq_max per frame.
    """
    d = sum(arm.dof for arm in arms)
    offset = _per_joint(spec.offset or 0.0, d, "offset")
    amp = _per_joint(spec.amplitude or 0.0, d, "amplitude")
    rng = _rng(spec.seed, 0)
    m = spec.sinusoids
    weights = rng.dirichlet(np.ones(m), size=d)
    freqs = rng.uniform(spec.freq_min, spec.freq_max, size=(d, m))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(d, m))
    t = np.arange(spec.length, dtype=np.float64)[:, None, None]
    waves = (amp[:, None] * weights)[None] * np.sin(freqs[None] * t + phases[None])
    return offset[None, :] + waves.sum(axis=2)


def corrupt_measurements(k_true, spec: NoiseSpec) -> np.ndarray:
    """Truth plus a Gaussian random-walk bias (starting at zero) and white noise."""
    k_true = np.asarray(k_true, dtype=np.float64)
    length, d = k_true.shape
    scale = _per_joint(spec.scale or 1.0, d, "noise scale")
    rng = _rng(spec.seed, 1)
    steps = rng.normal(0.0, 1.0, size=(length, d)) * (spec.sigma_b * scale)
    steps[0] = 0.0
    bias = np.cumsum(steps, axis=0)
    white = rng.normal(0.0, 1.0, size=(length, d)) * (spec.sigma_w * scale)
    return k_true + bias + white


def split_joints(k, arms: Sequence[ArmModel]):
    out, start = [], 0
    for arm in arms:
        out.append(k[start:start + arm.dof])
        start += arm.dof
    return out


def render_segments(k, bases, arms) -> CapsuleSet:
    """Capsules of all arms for the stacked joint vector ``k``."""
    return CapsuleSet.join([capsules(arm, q, base)
                            for arm, q, base in zip(arms, split_joints(k, arms), bases)])


def value_noise(shape, cells, rng) -> np.ndarray:
    """Bilinearly upsampled uniform noise on a coarse (cells_y+1, cells_x+1) grid."""
    h, w = shape
    cy, cx = cells
    grid = rng.uniform(0.0, 1.0, size=(cy + 1, cx + 1))
    ys = np.linspace(0.0, cy, h)
    xs = np.linspace(0.0, cx, w)
    y0 = np.minimum(np.floor(ys).astype(int), cy - 1)
    x0 = np.minimum(np.floor(xs).astype(int), cx - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def scene_texture(shape, seed, mean=0.35, contrast=0.18) -> np.ndarray:
    rng = _rng(seed, 2)
    coarse = value_noise(shape, (3, 4), rng)
    fine = value_noise(shape, (12, 16), rng)
    tex = 0.7 * coarse + 0.3 * fine
    return np.clip(mean + contrast * (tex - 0.5) * 2.0, 0.0, 1.0)


def background_for(shape, scene_seed, video_seed, variation) -> np.ndarray:
    """The shared scene texture plus a per-video perturbation."""
    base = scene_texture(shape, scene_seed)
    rng = _rng(video_seed, 3)
    wiggle = value_noise(shape, (6, 8), rng) - 0.5
    return np.clip(base + 2.0 * variation * wiggle, 0.0, 1.0)


def mean_background(shape, scene_seed, variation, count=8) -> np.ndarray:
    """Average over ``count`` training-style videos of the same scene."""
    return np.mean([background_for(shape, scene_seed, 10_000 + i, variation)
                    for i in range(count)], axis=0)


def render_ground_truth(k_true, bases, camera: Camera, arms, background, *,
                        tool_intensity=0.85, tau=1.5, sensor_noise=0.01, seed=1):
    """Per-frame observed images (8-bit quantised), binary masks, and soft masks."""
    k_true = np.atleast_2d(k_true)
    rng = _rng(seed, 4)
    images, masks, softs = [], [], []
    for k in k_true:
        soft = soft_silhouette(render_segments(k, bases, arms), camera, tau).value
        img = composite_hybrid(soft, tool_intensity, background).value
        img = img + rng.normal(0.0, sensor_noise, size=img.shape)
        images.append(quantize(np.clip(img, 0.0, 1.0)))
        masks.append(threshold_mask(soft, 0.5))
        softs.append(soft)
    return np.array(images), np.array(masks), np.array(softs)


def apply_domain(image, spec: DomainSpec, soft=None, background=None, alt_background=None):
    """Counterfactual appearance of one frame. Tool geometry is never altered.

    ``bleeding`` needs the frame's soft mask; ``bg-change`` needs the soft mask,
    the original background and the replacement texture.
    """
    image = np.asarray(image, dtype=np.float64)
    rng = _rng(spec.seed, 5)
    if spec.kind == "regular":
        return image.copy()
    if spec.kind == "low-brightness":
        return np.clip(image * spec.brightness, 0.0, 1.0)
    if spec.kind == "smoke":
        haze = value_noise(image.shape, (3, 4), rng)
        return np.clip(image + spec.smoke * haze, 0.0, 1.0)
    if soft is None:
        raise ValueError(f"domain {spec.kind!r} needs the frame's soft mask")
    soft = np.asarray(soft, dtype=np.float64)
    if spec.kind == "bleeding":
        h, w = image.shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        blot = np.zeros_like(image)
        for _ in range(spec.bleed_count):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = spec.bleed_radius * rng.uniform(0.6, 1.4)
            dist = np.hypot(yy - cy, xx - cx)
            blot = np.maximum(blot, 1.0 / (1.0 + np.exp((dist - rad) / 2.0)))
        # tool pixels stay exactly intact; the soft halo outside them is faded
        outside = (1.0 - soft) * (soft < 0.5)
        return np.clip(image + spec.bleed * blot * outside, 0.0, 1.0)
    # bg-change
    if background is None or alt_background is None:
        raise ValueError("domain 'bg-change' needs the original and the replacement background")
    return np.clip(image + (1.0 - soft) * (np.asarray(alt_background) - np.asarray(background)),
                   0.0, 1.0)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    images: np.ndarray          # (T, H, W) in [0, 1], 8-bit levels
    masks: np.ndarray           # (T, H, W) bool
    k_true: np.ndarray          # (T, d)
    k_meas: np.ndarray          # (T, d)
    background: np.ndarray      # (H, W) mean background used for hybrid images
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    def __post_init__(self):
        if not (len(self.images) == len(self.masks) == len(self.k_true) == len(self.k_meas)):
            raise ValueError(f"dataset length mismatch: {len(self.images)} frames, "
                             f"{len(self.masks)} masks, {len(self.k_true)} true and "
                             f"{len(self.k_meas)} measured kinematics rows")

    def subset(self, frames) -> Dataset:
        idx = np.asarray(frames)
        return Dataset(self.images[idx], self.masks[idx], self.k_true[idx],
                       self.k_meas[idx], self.background, dict(self.manifest))


def generate(traj: TrajectorySpec, noise: NoiseSpec, domain: DomainSpec, camera: Camera,
             arms, bases_true, *, tool_intensity=0.85, tau=1.5, sensor_noise=0.01,
             scene_seed=7, bg_variation=0.08, manifest=None) -> Dataset:
    shape = (camera.height, camera.width)
    k_true = gen_trajectory(traj, arms)
    k_meas = corrupt_measurements(k_true, noise)
    bg = background_for(shape, scene_seed, traj.seed, bg_variation)
    images, masks, softs = render_ground_truth(
        k_true, bases_true, camera, arms, bg, tool_intensity=tool_intensity, tau=tau,
        sensor_noise=sensor_noise, seed=traj.seed)
    if domain.kind != "regular":
        alt = None
        if domain.kind == "bg-change":
            alt = background_for(shape, scene_seed + 1, domain.seed, 2.0 * bg_variation)
        images = np.array([quantize(apply_domain(img, domain, soft=s, background=bg,
                                                 alt_background=alt))
                           for img, s in zip(images, softs)])
    return Dataset(images, masks, k_true, k_meas,
                   quantize(mean_background(shape, scene_seed, bg_variation)),
                   dict(manifest or {}))


def _write_kinematics(path, k):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame"] + [f"q{i}" for i in range(k.shape[1])])
        for t, row in enumerate(k):
            w.writerow([t] + [repr(float(x)) for x in row])


def _read_kinematics(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(
        len(rows) - 1, len(rows[0]) - 1)


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for t, (img, mask) in enumerate(zip(ds.images, ds.masks)):
        write_pgm(root / "frames" / f"{t:06d}.pgm", img)
        write_pgm(root / "masks" / f"{t:06d}.pgm", mask)
    write_pgm(root / "background.pgm", ds.background)
    _write_kinematics(root / "kinematics_true.csv", ds.k_true)
    _write_kinematics(root / "kinematics_measured.csv", ds.k_meas)
    manifest = dict(ds.manifest)
    manifest["frames"] = len(ds)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "manifest.json").is_file():
        raise MissingDatasetError(f"no dataset at {root} (missing manifest.json); run 'gen' first")
    manifest = json.loads((root / "manifest.json").read_text())
    n = int(manifest["frames"])
    images = np.array([read_image(root / "frames" / f"{t:06d}.pgm") for t in range(n)])
    masks = np.array([read_mask(root / "masks" / f"{t:06d}.pgm") for t in range(n)])
    return Dataset(images, masks, _read_kinematics(root / "kinematics_true.csv"),
                   _read_kinematics(root / "kinematics_measured.csv"),
                   read_image(root / "background.pgm"), manifest)


def spec_dict(spec) -> dict:
    return asdict(spec)
