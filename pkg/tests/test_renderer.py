import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinseg import autograd as ag
from kinseg.autograd import finite_diff_check
from kinseg.kernels.numpy_impl import DIST_EPS
from kinseg.kinematics import Segment3
from kinseg.metrics import dice
from kinseg.renderer import (BehindCameraError, Camera, composite_hybrid, project, read_image,
                             read_mask, read_pgm, soft_silhouette, threshold_mask, write_pgm)
from kinseg.synth import render_segments

seeds = st.integers(0, 2**32 - 1)
CAM = Camera(100.0, 100.0, 50.0, 50.0, 100, 100)


def seg(p0, p1, radius):
    return Segment3(ag.as_tensor(np.array(p0, dtype=float)),
                    ag.as_tensor(np.array(p1, dtype=float)), radius)


def soft_oracle(segments, camera, tau):
    """Pixel-by-pixel loop: distance to the projected axis, sigmoid, union."""
    out = np.zeros((camera.height, camera.width))
    terms = []
    for s in segments:
        a, b = s.p0.value, s.p1.value
        pa = np.array([camera.fx * a[0] / a[2] + camera.cx, camera.fy * a[1] / a[2] + camera.cy])
        pb = np.array([camera.fx * b[0] / b[2] + camera.cx, camera.fy * b[1] / b[2] + camera.cy])
        terms.append((pa, pb, s.radius * camera.fx / (0.5 * (a[2] + b[2]))))
    for v in range(camera.height):
        for u in range(camera.width):
            keep = 1.0
            for pa, pb, r in terms:
                ab = pb - pa
                p = np.array([u, v], dtype=float)
                t = 0.0 if ab @ ab == 0 else np.clip((p - pa) @ ab / (ab @ ab), 0.0, 1.0)
                q = p - (pa + t * ab)
                # the kernel smooths the distance on the axis so its gradient exists there
                dist = np.sqrt(q @ q + DIST_EPS)
                x = np.clip((r - dist) / tau, -30.0, 30.0)
                keep *= 1.0 - 1.0 / (1.0 + np.exp(-x))
            out[v, u] = 1.0 - keep
    return out


def inside_oracle(segments, camera):
    hard = soft_oracle(segments, camera, 1e-9)
    return hard >= 0.5


def test_project_optical_axis():
    np.testing.assert_allclose(project(CAM, [0.0, 0.0, 1.0]).value[:2], [50.0, 50.0])


def test_project_hand_value():
    np.testing.assert_allclose(project(CAM, [0.1, 0.0, 1.0]).value, [60.0, 50.0, 1.0])


def test_project_depth_scaling():
    near = project(CAM, [0.05, -0.03, 1.0]).value
    far = project(CAM, [0.05, -0.03, 2.0]).value
    np.testing.assert_allclose(far[:2] - 50.0, (near[:2] - 50.0) / 2.0)


def test_project_behind_camera():
    with pytest.raises(BehindCameraError) as info:
        project(CAM, [0.0, 0.0, -0.5])
    assert info.value.depth == -0.5


def test_project_with_camera_pose():
    cam = Camera(100.0, 100.0, 50.0, 50.0, 100, 100, pose=np.array([0, 0, 0, 0.1, 0, -1.0]))
    np.testing.assert_allclose(project(cam, [0.1, 0.0, 0.0]).value, [50.0, 50.0, 1.0])


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(-1.0, 100.0, 50.0, 50.0, 100, 100)
    with pytest.raises(ValueError):
        Camera(100.0, 100.0, 150.0, 50.0, 100, 100)


def test_empty_scene_is_zero():
    assert np.array_equal(soft_silhouette([], CAM, 1.0).value, np.zeros((100, 100)))


def test_pixel_on_axis_is_inside():
    s = soft_silhouette([seg([-0.1, 0.0, 1.0], [0.1, 0.0, 1.0], 0.03)], CAM, 1.0).value
    assert s[50, 50] > 0.5


def test_pixel_at_projected_radius_is_half():
    # radius 0.03 m at depth 1 -> 3 px; pixel row 53 is exactly 3 px off the axis
    s = soft_silhouette([seg([-0.1, 0.0, 1.0], [0.1, 0.0, 1.0], 0.03)], CAM, 1.0).value
    assert s[53, 50] == pytest.approx(0.5, abs=1e-12)


@given(seeds, st.sampled_from([0.5, 1.5]))
def test_soft_silhouette_matches_pixel_loop(seed, tau):
    rng = np.random.default_rng(seed)
    cam = Camera(40.0, 40.0, 12.0, 9.0, 24, 18)
    segs = [seg(np.r_[rng.uniform(-0.2, 0.2, 2), rng.uniform(0.8, 1.2)],
                np.r_[rng.uniform(-0.2, 0.2, 2), rng.uniform(0.8, 1.2)],
                rng.uniform(0.01, 0.05)) for _ in range(rng.integers(1, 4))]
    # distances are formed in a different order than the kernel, hence 1e-10
    np.testing.assert_allclose(soft_silhouette(segs, cam, tau).value, soft_oracle(segs, cam, tau),
                               rtol=0, atol=1e-10)


@given(seeds)
def test_soft_values_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    cam = Camera(40.0, 40.0, 12.0, 9.0, 24, 18)
    segs = [seg(np.r_[rng.uniform(-0.3, 0.3, 2), rng.uniform(0.5, 2.0)],
                np.r_[rng.uniform(-0.3, 0.3, 2), rng.uniform(0.5, 2.0)],
                rng.uniform(0.001, 0.05)) for _ in range(rng.integers(1, 5))]
    s = soft_silhouette(segs, cam, float(rng.uniform(0.1, 3.0))).value
    assert np.all(s > 0.0) and np.all(s < 1.0)


def test_sharpening_converges_to_exact_coverage():
    segs = [seg([-0.2, -0.1, 1.0], [0.15, 0.12, 1.1], 0.04),
            seg([0.0, 0.2, 0.9], [0.05, -0.25, 1.2], 0.02)]
    exact = inside_oracle(segs, CAM)
    scores = [dice(threshold_mask(soft_silhouette(segs, CAM, tau)), exact)
              for tau in (1.0, 0.1, 0.01)]
    assert scores[0] <= scores[1] <= scores[2]
    assert scores[2] > 0.999


def test_one_pixel_shift_moves_mask_one_pixel():
    z = 1.0
    segs = [seg([-0.2, -0.05, z], [0.2, 0.08, z], 0.03),
            seg([0.2, 0.08, z], [0.25, 0.2, z], 0.02)]
    step = z / CAM.fx
    moved = [seg(s.p0.value + [step, 0, 0], s.p1.value + [step, 0, 0], s.radius) for s in segs]
    before = threshold_mask(soft_silhouette(segs, CAM, 1.5))
    after = threshold_mask(soft_silhouette(moved, CAM, 1.5))
    assert dice(np.roll(before, 1, axis=1), after) >= 0.98


def test_sum_of_soft_mask_gradient_wrt_joints(exp):
    cam = exp.camera()
    arms = exp.arms()
    bases = list(exp.bases_true())
    k0 = np.array(exp["synth.offset"]) + np.random.default_rng(5).uniform(-0.1, 0.1, 14)

    def total(k):
        return soft_silhouette(render_segments(k, bases, arms), cam, 1.5).sum()

    err = finite_diff_check(total, k0, eps=1e-6)
    assert err < 1e-3


def test_clamped_terms_carry_no_gradient():
    tape = ag.Tape()
    p0 = tape.variable([-0.01, 0.0, 1.0])
    s = soft_silhouette([Segment3(p0, ag.as_tensor([0.01, 0.0, 1.0]), 0.001)], CAM, 0.1)
    (g,) = tape.grad(s[0:5, 0:5].sum(), [p0])
    np.testing.assert_array_equal(g, 0.0)


def test_composite_examples():
    bg = np.full((3, 3), 0.2)
    np.testing.assert_array_equal(composite_hybrid(np.zeros((3, 3)), 0.7, bg).value, bg)
    np.testing.assert_allclose(composite_hybrid(np.ones((3, 3)), 0.7, bg).value, 0.7)
    np.testing.assert_allclose(composite_hybrid(np.full((3, 3), 0.5), 1.0, bg).value, 0.6)


def test_composite_validation():
    with pytest.raises(ag.ShapeError):
        composite_hybrid(np.zeros((3, 3)), 0.5, np.zeros((3, 4)))
    with pytest.raises(ValueError):
        composite_hybrid(np.zeros((3, 3)), 1.5, np.zeros((3, 3)))


def test_composite_gradient():
    bg = np.random.default_rng(0).uniform(size=(4, 5))
    w = np.random.default_rng(1).normal(size=(4, 5))
    err = finite_diff_check(lambda s: (composite_hybrid(s, 0.8, bg) * w).sum(),
                            np.full((4, 5), 0.3))
    assert err < 1e-4


def test_threshold_examples():
    assert threshold_mask(np.full((2, 2), 0.6)).all()
    assert not threshold_mask(np.full((2, 2), 0.4)).any()
    np.testing.assert_array_equal(threshold_mask(np.array([0.49, 0.51])), [False, True])
    with pytest.raises(ValueError):
        threshold_mask(np.zeros(2), 1.0)


@given(seeds)
def test_pgm_round_trip_is_bit_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    data = rng.integers(0, 256, size=(7, 11), dtype=np.uint8)
    write_pgm(path, data)
    assert np.array_equal(read_pgm(path), data)
    mask = rng.uniform(size=(7, 11)) > 0.5
    write_pgm(path, mask)
    assert np.array_equal(read_mask(path), mask)
    img = data.astype(np.float64) / 255.0
    write_pgm(path, img)
    assert np.array_equal(read_image(path), img)


def test_pgm_header(tmp_path):
    path = tmp_path / "m.pgm"
    write_pgm(path, np.zeros((2, 3), dtype=bool))
    assert path.read_bytes() == b"P5\n3 2\n255\n" + bytes(6)


def test_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "p2.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError, match="binary PGM"):
        read_pgm(path)
