"""Finite-difference gradient suite.

Elementary ops are contracted with fixed random weights so every input
coordinate carries a non-trivial gradient, and inputs are kept away from kinks
(relu at 0, clamp bounds). The composite check differentiates the whole image
objective, regularizer included, with respect to joints and base poses.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, finite_diff_check

ELEMENTARY_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.error < self.tol)


def _away_from(x, points, margin):
    for p in points:
        near = np.abs(x - p) < margin
        x = np.where(near, p + np.where(x >= p, margin, -margin), x)
    return x


def _elementary_cases(rng):
    def proj(shape):
        w = rng.normal(size=shape)
        return lambda t: (t * w).sum()

    x = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    other = rng.normal(size=(3, 4))
    row = rng.normal(size=(4,))
    mat = rng.normal(size=(4, 5))
    vec = rng.normal(size=(4,))
    img = rng.uniform(size=(9, 11))
    p34 = proj((3, 4))
    p35 = proj((3, 5))
    p3 = proj((3,))
    p4 = proj((4,))
    p38 = proj((3, 8))
    p234 = proj((2, 3, 4))
    p26 = proj((2, 6))
    p43 = proj((4, 3))
    p22 = proj((2, 2))
    pimg = [proj(img.shape) for _ in range(3)]
    cases = [
        ("add", x, lambda t: p34(t + other)),
        ("add_broadcast", row, lambda t: p34(Tensor(other) + t)),
        ("sub", x, lambda t: p34(other - t)),
        ("mul", x, lambda t: p34(t * other)),
        ("mul_broadcast", row, lambda t: p34(Tensor(other) * t)),
        ("div_numerator", x, lambda t: p34(t / pos)),
        ("div_denominator", pos, lambda t: p34(Tensor(other) / t)),
        ("matmul_left", x, lambda t: p35(t @ mat)),
        ("matmul_right", mat, lambda t: p35(Tensor(x) @ t)),
        ("matvec", vec, lambda t: p3(Tensor(x) @ t)),
        ("sum_axis", x, lambda t: p4(t.sum(axis=0))),
        ("mean_axis", x, lambda t: p3(t.mean(axis=1))),
        ("sigmoid", x, lambda t: p34(ag.sigmoid(t))),
        ("tanh", x, lambda t: p34(ag.tanh(t))),
        ("relu", _away_from(x, [0.0], 0.05), lambda t: p34(ag.relu(t))),
        ("sin", x, lambda t: p34(ag.sin(t))),
        ("cos", x, lambda t: p34(ag.cos(t))),
        ("exp", x, lambda t: p34(ag.exp(t))),
        ("log", pos, lambda t: p34(ag.log(t))),
        ("neg", x, lambda t: p34(-t)),
        ("square", x, lambda t: p34(ag.square(t))),
        ("sqrt", pos, lambda t: p34(ag.sqrt(t))),
        ("power", pos, lambda t: p34(ag.power(t, 1.7))),
        ("minimum", _away_from(x, [0.3], 0.05), lambda t: p34(ag.minimum(t, 0.3))),
        ("maximum", _away_from(x, [-0.2], 0.05), lambda t: p34(ag.maximum(t, -0.2))),
        ("concat", x, lambda t: p38(ag.concat([t, Tensor(other)], axis=1))),
        ("stack", x, lambda t: p234(ag.stack([t, t * t]))),
        ("reshape", x, lambda t: p26(t.reshape(2, 6))),
        ("broadcast_to", row, lambda t: p34(ag.broadcast_to(t, (3, 4)))),
        ("transpose", x, lambda t: p43(t.T)),
        ("getitem", x, lambda t: p22(t[1:, 1:3])),
        ("correlate_rows", img, lambda t: pimg[0](ag.correlate(t, [0.2, 0.5, 0.3], 0))),
        ("correlate_cols", img, lambda t: pimg[1](ag.correlate(t, [-0.5, 0.0, 0.5], 1))),
        ("max_filter", img, lambda t: pimg[2](ag.max_filter(t, 1.5))),
    ]
    # silhouette: two capsules on a small grid; gradient w.r.t. endpoints and radii
    a = np.array([[2.3, 3.1], [8.2, 1.7]])
    b = np.array([[9.6, 5.4], [3.1, 6.8]])
    r = np.array([1.3, 0.9])
    ps = proj((8, 12))
    cases += [
        ("silhouette_a", a, lambda t: ps(ag.silhouette(t, b, r, 1.2, 8, 12))),
        ("silhouette_b", b, lambda t: ps(ag.silhouette(a, t, r, 1.2, 8, 12))),
        ("silhouette_r", r, lambda t: ps(ag.silhouette(a, b, t, 1.2, 8, 12))),
    ]
    return cases


def elementary_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, point, fn in _elementary_cases(rng):
        out.append(CheckResult(name, finite_diff_check(fn, point), ELEMENTARY_TOL))
    return out


def composite_checks(configs: int = 10, seed: int = 0, features: str = "filter-bank",
                     eps: float = 1e-8) -> list[CheckResult]:
    """Full objective at random joint / base configurations of the default scene.

    The attention map's max filter is piecewise smooth in the pose (its argmax
    switches as the silhouette slides), so a small step keeps the central
    difference from straddling a switch.
    """
    from .config import ExperimentConfig
    from .losses import extract_features, get_extractor
    from .pipeline import configure, objective
    from .renderer import composite_hybrid, soft_silhouette
    from .synth import mean_background, render_segments

    exp = ExperimentConfig()
    cfg = configure(exp.pipeline(), use_reg=True, features=features)
    cam = exp.camera()
    bg = mean_background((cam.height, cam.width), exp["synth.scene_seed"], exp["synth.bg_variation"])
    scene = exp.scene(bg)
    home = np.array(exp["synth.offset"])
    d = scene.d
    rng = np.random.default_rng(seed)
    out = []
    for i in range(configs):
        k_true = home + rng.uniform(-0.2, 0.2, d)
        observed = composite_hybrid(
            soft_silhouette(render_segments(k_true, list(exp.bases_true()), scene.arms), cam, cfg.tau),
            cfg.tool_intensity, bg).value
        obs = extract_features(observed, get_extractor(features))
        k_meas = k_true + rng.normal(0.0, 0.03, d)
        k_prev = k_meas + rng.normal(0.0, 0.02, d)
        base = scene.base_init + rng.normal(0.0, 0.003, scene.base_init.shape)
        point = np.concatenate([k_meas + rng.normal(0.0, 0.02, d), base.ravel()])

        def fn(p):
            loss, _ = objective(p[:d], p[d:].reshape(base.shape), obs, k_meas, k_prev, scene, cfg)
            return loss

        out.append(CheckResult(f"composite_{features}_{i}", finite_diff_check(fn, point, eps=eps),
                               COMPOSITE_TOL))
    return out


def run_suite(configs: int = 10, seed: int = 0, verbose: bool = False) -> list[CheckResult]:
    start = time.perf_counter()
    results = elementary_checks(seed)
    for features in ("filter-bank", "local-contrast"):
        results += composite_checks(configs, seed, features)
    if verbose:
        for r in results:
            print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:<20} {r.error:.3e} (tol {r.tol:g})")
        print(f"{sum(r.ok for r in results)}/{len(results)} passed in "
              f"{time.perf_counter() - start:.1f} s")
    return results
