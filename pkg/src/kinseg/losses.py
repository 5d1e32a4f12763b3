"""Image features, attention-weighted cosine loss, and the kinematic regularizer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor

COS_EPS = 1e-8
ATTENTION_FLOOR = 0.05


class FeatureExtractor(Protocol):
    channels: int

    def __call__(self, image) -> Tensor: ...


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    if radius is None:
        radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


CENTRAL_DIFF = np.array([-0.5, 0.0, 0.5])


class FilterBank:
    """Fixed differentiable features: intensity, Gaussian-smoothed intensity,
    and horizontal / vertical central differences of the smoothed channel."""

    channels = 4

    def __init__(self, sigma: float = 2.0):
        if not sigma > 0:
            raise ValueError(f"smoothing width must be positive, got {sigma}")
        self.sigma = sigma
        self.kernel = gaussian_kernel(sigma)

    def __call__(self, image) -> Tensor:
        img = ag.as_tensor(image)
        if img.ndim != 2:
            raise ShapeError(f"features: expected a 2-D image, got {img.shape}")
        smooth = ag.correlate(ag.correlate(img, self.kernel, 0), self.kernel, 1)
        gx = ag.correlate(smooth, CENTRAL_DIFF, 1)
        gy = ag.correlate(smooth, CENTRAL_DIFF, 0)
        return ag.stack([img, smooth, gx, gy])


class LocalContrastBank(FilterBank):
    """FilterBank with both intensity channels taken relative to a wide local
    mean.

    Cosine similarity ignores scale, so with raw intensities a bright tool and
    a mid-grey background give nearly parallel feature vectors; centring keeps
    the comparison about contrast and structure.
    """

    def __init__(self, sigma: float = 2.0, context_sigma: float = 6.0):
        super().__init__(sigma)
        if not context_sigma > 0:
            raise ValueError(f"context width must be positive, got {context_sigma}")
        self.context_sigma = context_sigma
        self.context = gaussian_kernel(context_sigma)

    def __call__(self, image) -> Tensor:
        img = ag.as_tensor(image)
        if img.ndim != 2:
            raise ShapeError(f"features: expected a 2-D image, got {img.shape}")
        local = ag.correlate(ag.correlate(img, self.context, 0), self.context, 1)
        smooth = ag.correlate(ag.correlate(img, self.kernel, 0), self.kernel, 1)
        gx = ag.correlate(smooth, CENTRAL_DIFF, 1)
        gy = ag.correlate(smooth, CENTRAL_DIFF, 0)
        return ag.stack([img - local, smooth - local, gx, gy])


EXTRACTORS: dict[str, FeatureExtractor] = {
    "filter-bank": FilterBank(),
    "local-contrast": LocalContrastBank(),
}
_default_extractor = EXTRACTORS["filter-bank"]


def get_extractor(name: str) -> FeatureExtractor:
    try:
        return EXTRACTORS[name]
    except KeyError:
        raise ValueError(f"unknown feature extractor {name!r}; choose from "
                         f"{', '.join(EXTRACTORS)}") from None


def extract_features(image, extractor: FeatureExtractor | None = None) -> Tensor:
    """(channels, H, W) feature map of a grayscale image."""
    return (extractor or _default_extractor)(image)


def attention_map(soft, dilate_radius: float) -> Tensor:
    """Disc-dilated soft mask floored at 0.05."""
    return ag.maximum(ag.max_filter(soft, dilate_radius), ATTENTION_FLOOR)


def acs_loss(f_obs, f_rend, attn) -> Tensor:
    """One minus the attention-weighted mean per-pixel cosine similarity.

    Lies in [0, 2]; norms carry ``1e-8`` under the square root.
    """
    fo = ag.as_tensor(f_obs)
    fr = ag.as_tensor(f_rend)
    at = ag.as_tensor(attn)
    if fo.shape != fr.shape or fo.shape[1:] != at.shape:
        raise ShapeError(f"acs_loss: feature maps {fo.shape} / {fr.shape} vs attention {at.shape}")
    dot = (fo * fr).sum(axis=0)
    no = ag.sqrt((fo * fo).sum(axis=0) + COS_EPS)
    nr = ag.sqrt((fr * fr).sum(axis=0) + COS_EPS)
    cos = dot / (no * nr)
    return 1.0 - (at * cos).sum() / at.sum()


@dataclass(frozen=True)
class RegWeights:
    lambda1: float = 10.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be non-negative")


def st_regularizer(k_hat, k_meas, k_prev, w: RegWeights) -> Tensor:
    """lambda1 * mean((k_hat - k_meas)^2) + lambda2 * mean((k_hat - k_prev)^2)."""
    kh = ag.as_tensor(k_hat)
    km = ag.as_tensor(k_meas)
    kp = ag.as_tensor(k_prev)
    if kh.ndim != 1 or km.shape != kh.shape or kp.shape != kh.shape:
        raise ShapeError(f"st_regularizer: shapes {kh.shape}, {km.shape}, {kp.shape}")
    spatial = ag.square(kh - km).mean()
    temporal = ag.square(kh - kp).mean()
    return spatial * w.lambda1 + temporal * w.lambda2
