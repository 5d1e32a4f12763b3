"""Per-frame analysis-by-synthesis with state carried along the sequence.

At each frame the correction network (or, when it is disabled, a direct
offset on the measured joints) takes ``k`` Adam steps on the image loss, then
the arm base poses take one step with the network frozen. The final
corrected kinematics are rendered and thresholded to give the predicted mask.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .kcn import HIDDEN_WIDTHS, AdamState, KcnWeights, adam_step, init_kcn, kcn_forward
from .kinematics import ArmModel, base_to_transform
from .losses import (RegWeights, acs_loss, attention_map, extract_features, get_extractor,
                     st_regularizer)
from .metrics import dice
from .renderer import Camera, composite_hybrid, soft_silhouette, threshold_mask
from .synth import Dataset, render_segments


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 5
    n: int = 5
    lr_theta: float = 5e-5
    lr_base: float = 3e-6
    # step size for the joint offsets optimised directly when the network is off
    lr_kin: float = 2e-3
    reg: RegWeights = field(default_factory=RegWeights)
    tau: float = 1.5
    dilate_radius: float = 6.0
    tool_intensity: float = 0.85
    threshold: float = 0.5
    use_kcn: bool = True
    use_reg: bool = True
    optimize_base: bool = True
    carry_state: bool = True
    shared_base: bool = False
    hidden: tuple[int, ...] = HIDDEN_WIDTHS
    kcn_seed: int = 0
    features: str = "filter-bank"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        for name in ("lr_theta", "lr_base", "lr_kin", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.tool_intensity <= 1.0:
            raise ValueError("tool_intensity must lie in [0, 1]")
        if self.dilate_radius < 0:
            raise ValueError("dilate_radius must be >= 0")
        get_extractor(self.features)


@dataclass
class Scene:
    """Everything held fixed during optimisation: arms, camera, background,
    and the initial base estimate (one 6-vector per arm)."""

    arms: tuple[ArmModel, ...]
    camera: Camera
    background: np.ndarray
    base_init: np.ndarray

    @property
    def d(self) -> int:
        return sum(arm.dof for arm in self.arms)


@dataclass
class PipelineState:
    theta: KcnWeights
    theta_adam: AdamState
    base: np.ndarray
    base_adam: AdamState
    k_prev: np.ndarray | None = None


@dataclass
class FrameResult:
    frame: int
    k_hat: np.ndarray
    mask: np.ndarray
    loss_trace: list[float]
    dice: float | None = None
    ms: float = 0.0
    joint_err_meas: float | None = None
    joint_err_corr: float | None = None

    def same_outcome(self, other: FrameResult) -> bool:
        """Equality of everything except wall time."""
        return (self.frame == other.frame
                and np.array_equal(self.k_hat, other.k_hat)
                and np.array_equal(self.mask, other.mask)
                and self.loss_trace == other.loss_trace
                and self.dice == other.dice
                and self.joint_err_meas == other.joint_err_meas
                and self.joint_err_corr == other.joint_err_corr)


def initial_state(scene: Scene, cfg: PipelineConfig) -> PipelineState:
    theta = init_kcn(cfg.n, scene.d, cfg.hidden, cfg.kcn_seed)
    base = np.zeros(6) if cfg.shared_base else np.array(scene.base_init, dtype=np.float64)
    return PipelineState(theta, AdamState(), base, AdamState())


def joint_window(k_meas, t: int, n: int) -> np.ndarray:
    """Measured rows t-n+1..t, replicating row 0 before the sequence start."""
    idx = np.clip(np.arange(t - n + 1, t + 1), 0, None)
    return np.asarray(k_meas, dtype=np.float64)[idx]


def _bases(base, scene: Scene, cfg: PipelineConfig):
    if cfg.shared_base:
        shift = base_to_transform(base)
        return [shift @ base_to_transform(b) for b in scene.base_init]
    b = ag.as_tensor(base)
    return [b[i] for i in range(len(scene.arms))]


def _render(k_hat, base, scene: Scene, cfg: PipelineConfig) -> Tensor:
    segs = render_segments(k_hat, _bases(base, scene, cfg), scene.arms)
    return soft_silhouette(segs, scene.camera, cfg.tau)


def objective(k_hat, base, obs_features, k_meas_t, k_prev, scene: Scene,
              cfg: PipelineConfig):
    """Image loss (plus regularizer when enabled) and the soft render."""
    soft = _render(k_hat, base, scene, cfg)
    hybrid = composite_hybrid(soft, cfg.tool_intensity, scene.background)
    rendered = extract_features(hybrid, get_extractor(cfg.features))
    loss = acs_loss(obs_features, rendered, attention_map(soft, cfg.dilate_radius))
    if cfg.use_reg:
        loss = loss + st_regularizer(k_hat, k_meas_t, k_prev, cfg.reg)
    return loss, soft


def _check(loss: Tensor, where: str) -> float:
    value = float(loss.value)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value} at {where}")
    return value


def optimize_frame(state: PipelineState, observed, window, scene: Scene,
                   cfg: PipelineConfig) -> FrameResult:
    """Optimise one frame in place on ``state`` and return its result.

    ``window`` is the (n, d) measured joint window ending at this frame.
    """
    window = np.asarray(window, dtype=np.float64)
    k_meas_t = window[-1]
    k_prev = k_meas_t if state.k_prev is None else state.k_prev
    obs = extract_features(np.asarray(observed, dtype=np.float64), get_extractor(cfg.features))
    trace: list[float] = []
    # without the network, the joints themselves are optimised from the
    # measurement each frame; only the network is carried state
    offset = np.zeros(scene.d)
    offset_adam = AdamState()

    def corrected(tape=None):
        if cfg.use_kcn:
            if tape is None:
                return kcn_forward(state.theta, window)
            params = {k: tape.variable(v) for k, v in state.theta.params.items()}
            return kcn_forward(state.theta, window, params), params
        if tape is None:
            return Tensor(k_meas_t + offset)
        var = tape.variable(offset)
        return k_meas_t + var, {"offset": var}

    for it in range(cfg.k):
        tape = Tape()
        k_hat, leaves = corrected(tape)
        loss, _ = objective(k_hat, state.base, obs, k_meas_t, k_prev, scene, cfg)
        trace.append(_check(loss, f"iteration {it}"))
        grads = tape.backward(loss)
        g = {name: grads.get(t.node, np.zeros_like(t.value)) for name, t in leaves.items()}
        if cfg.use_kcn:
            adam_step(state.theta.params, g, state.theta_adam, cfg.lr_theta)
        else:
            adam_step({"offset": offset}, g, offset_adam, cfg.lr_kin)

    if cfg.optimize_base:
        tape = Tape()
        base = tape.variable(state.base)
        k_hat = corrected()
        loss, _ = objective(k_hat, base, obs, k_meas_t, k_prev, scene, cfg)
        trace.append(_check(loss, "base step"))
        (gb,) = tape.grad(loss, [base])
        adam_step({"base": state.base}, {"base": gb}, state.base_adam, cfg.lr_base)

    k_hat = corrected().value.copy()
    soft = _render(k_hat, state.base, scene, cfg)
    state.k_prev = k_hat
    return FrameResult(frame=-1, k_hat=k_hat, mask=threshold_mask(soft, cfg.threshold),
                       loss_trace=trace)


def run_sequence(dataset: Dataset, cfg: PipelineConfig, scene: Scene,
                 record_time: bool = True) -> list[FrameResult]:
    """Run every frame in order. With ``carry_state`` off, network, optimisers
    and base estimate are reset before each frame."""
    k_meas = dataset.k_meas
    if len(k_meas) != len(dataset.images):
        raise ValueError(f"{len(dataset.images)} frames but {len(k_meas)} kinematics rows")
    if k_meas.shape[1] != scene.d:
        raise ValueError(f"kinematics have {k_meas.shape[1]} columns, arms expect {scene.d}")
    state = initial_state(scene, cfg)
    results = []
    for t in range(len(dataset)):
        if not cfg.carry_state and t > 0:
            state = initial_state(scene, cfg)
            state.k_prev = k_meas[t - 1].copy()
        window = joint_window(k_meas, t, cfg.n)
        start = time.perf_counter()
        res = optimize_frame(state, dataset.images[t], window, scene, cfg)
        elapsed = (time.perf_counter() - start) * 1000.0
        res.frame = t
        res.ms = elapsed if record_time else 0.0
        if dataset.masks is not None:
            res.dice = dice(res.mask, dataset.masks[t])
        if dataset.k_true is not None:
            res.joint_err_meas = float(np.mean(np.abs(k_meas[t] - dataset.k_true[t])))
            res.joint_err_corr = float(np.mean(np.abs(res.k_hat - dataset.k_true[t])))
        results.append(res)
    return results


def configure(cfg: PipelineConfig, **changes) -> PipelineConfig:
    return replace(cfg, **changes)


def mean_dice(results: Sequence[FrameResult]) -> float:
    return float(np.mean([r.dice for r in results]))
