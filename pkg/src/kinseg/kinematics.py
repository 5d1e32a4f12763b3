"""Differentiable forward kinematics for DH-parameterised serial arms.

Standard (distal) DH convention: link ``i`` maps frame ``i-1`` to frame ``i``
by ``RotZ(theta) TransZ(d) TransX(a) RotX(alpha)``. When an arm carries a tool
jaw, its last link is not a chain link: its joint value opens two short
capsules that fan out of the distal frame by +-jaw/2.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


@dataclass(frozen=True)
class DhLink:
    a: float
    alpha: float
    d: float = 0.0
    theta: float = 0.0
    kind: str = REVOLUTE
    radius: float = 0.005

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"joint kind must be revolute or prismatic, got {self.kind!r}")
        if not self.radius > 0:
            raise ValueError(f"capsule radius must be positive, got {self.radius}")
        if not (np.isfinite(self.a) and np.isfinite(self.d)):
            raise ValueError("link length and offset must be finite")


@dataclass(frozen=True)
class ArmModel:
    name: str
    links: tuple[DhLink, ...]
    has_jaw: bool = True

    @property
    def dof(self) -> int:
        return len(self.links)


@dataclass
class Segment3:
    p0: Tensor
    p1: Tensor
    radius: float


@dataclass
class CapsuleSet:
    """Stacked capsules: endpoints (m, 3) and radii (m,)."""

    p0: Tensor
    p1: Tensor
    radii: np.ndarray

    def __len__(self) -> int:
        return len(self.radii)

    def segments(self) -> list[Segment3]:
        return [Segment3(self.p0[i], self.p1[i], float(self.radii[i]))
                for i in range(len(self))]

    @staticmethod
    def join(sets: Sequence[CapsuleSet]) -> CapsuleSet:
        return CapsuleSet(ag.concat([c.p0 for c in sets], axis=0),
                          ag.concat([c.p1 for c in sets], axis=0),
                          np.concatenate([c.radii for c in sets]))

    @staticmethod
    def from_segments(segments: Sequence[Segment3]) -> CapsuleSet:
        return CapsuleSet(ag.stack([s.p0 for s in segments]),
                          ag.stack([s.p1 for s in segments]),
                          np.array([s.radius for s in segments], dtype=np.float64))


def _as_joint_vector(joints, n) -> Tensor:
    q = ag.as_tensor(joints)
    if q.shape != (n,):
        raise ValueError(f"expected {n} joint values, got shape {q.shape}")
    return q


def _dh_matrices(links: Sequence[DhLink], q: Tensor) -> Tensor:
    """Stacked (n, 4, 4) link transforms."""
    n = len(links)
    rev = np.array([lk.kind == REVOLUTE for lk in links], dtype=np.float64)
    theta = np.array([lk.theta for lk in links]) + q * rev
    d = np.array([lk.d for lk in links]) + q * (1.0 - rev)
    a = np.array([lk.a for lk in links])
    ca = np.cos([lk.alpha for lk in links])
    sa = np.sin([lk.alpha for lk in links])
    c = ag.cos(theta)
    s = ag.sin(theta)
    zero = Tensor(np.zeros(n))
    one = Tensor(np.ones(n))
    entries = [c, -s * ca, s * sa, c * a,
               s, c * ca, -c * sa, s * a,
               zero, Tensor(sa), Tensor(ca), d,
               zero, zero, zero, one]
    return ag.stack(entries, axis=1).reshape(n, 4, 4)


def dh_transform(link: DhLink, joint) -> Tensor:
    """4x4 homogeneous transform of one link at a joint value."""
    q = ag.as_tensor(joint).reshape(1)
    return _dh_matrices([link], q)[0]


def _hat(w: Tensor) -> Tensor:
    z = Tensor(0.0)
    return ag.stack([z, -w[2], w[1],
                     w[2], z, -w[0],
                     -w[1], w[0], z]).reshape(3, 3)


def rodrigues(rotvec) -> Tensor:
    """Rotation matrix of an axis-angle vector, smooth through zero."""
    w = ag.as_tensor(rotvec)
    th2 = (w * w).sum()
    t2 = float(th2.value)
    if t2 < 1e-8:
        # Taylor expansions in theta^2
        first = 1.0 - th2 / 6.0 + th2 * th2 / 120.0
        second = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
    else:
        th = ag.sqrt(th2)
        first = ag.sin(th) / th
        second = (1.0 - ag.cos(th)) / th2
    k = _hat(w)
    return Tensor(np.eye(3)) + first * k + second * (k @ k)


def base_to_transform(base) -> Tensor:
    """World-from-base transform of a 6-vector (axis-angle, translation)."""
    b = ag.as_tensor(base)
    if b.shape != (6,):
        raise ValueError(f"base configuration must be a 6-vector, got shape {b.shape}")
    rot = rodrigues(b[0:3])
    top = ag.concat([rot, b[3:6].reshape(3, 1)], axis=1)
    return ag.concat([top, Tensor([[0.0, 0.0, 0.0, 1.0]])], axis=0)


def frame_origins(arm: ArmModel, joints, base):
    """World positions of frames 0..m of the chain links, shape (m + 1, 3), and
    the distal transform. ``base`` is a 6-vector or a 4x4 world-from-base."""
    chain = arm.links[:-1] if arm.has_jaw else arm.links
    q = _as_joint_vector(joints, arm.dof)
    b = ag.as_tensor(base)
    world = b if b.shape == (4, 4) else base_to_transform(b)
    mats = _dh_matrices(chain, q[: len(chain)])
    frames = [world]
    for i in range(len(chain)):
        frames.append(frames[-1] @ mats[i])
    return ag.stack(frames)[:, 0:3, 3], frames[-1]


def capsules(arm: ArmModel, joints, base) -> CapsuleSet:
    """Capsules of an arm in world coordinates.

    Capsule ``i`` joins the origins of frames ``i-1`` and ``i``; a jaw adds two
    capsules of length ``jaw.a`` leaving the distal origin in its x-y plane.
    """
    q = _as_joint_vector(joints, arm.dof)
    origins, distal = frame_origins(arm, q, base)
    chain = arm.links[:-1] if arm.has_jaw else arm.links
    m = len(chain)
    p0, p1 = origins[0:m], origins[1:m + 1]
    radii = [lk.radius for lk in chain]
    if arm.has_jaw:
        jaw = arm.links[-1]
        tip = origins[m]
        rot = distal[0:3, 0:3]
        signs = np.array([1.0, -1.0])
        ang = q[arm.dof - 1] * (0.5 * signs) + jaw.theta * signs
        # columns are the two jaw directions in the distal frame
        dirs = ag.stack([ag.cos(ang), ag.sin(ang), Tensor(np.zeros(2))])
        ends = (rot @ dirs).T * jaw.a + distal[0:3, 2] * jaw.d + tip
        p0 = ag.concat([p0, ag.stack([tip, tip])], axis=0)
        p1 = ag.concat([p1, ends], axis=0)
        radii += [jaw.radius, jaw.radius]
    return CapsuleSet(p0, p1, np.array(radii, dtype=np.float64))


def forward_kinematics(arm: ArmModel, joints, base) -> list[Segment3]:
    """Capsule segments of an arm, one ``Segment3`` per capsule."""
    return capsules(arm, joints, base).segments()
