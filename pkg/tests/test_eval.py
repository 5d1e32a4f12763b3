import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinseg.evaluate import (ABLATION_ROWS, BASELINE, FULL, RunRecord, SweepError, SweepResult,
                             ablate, baseline_config, sweep_k, sweep_lambda1, sweep_lambda2,
                             sweep_n)
from kinseg.metrics import cumulative_dice_diff, dice
from kinseg.pipeline import PipelineConfig, configure, run_sequence
from kinseg.synth import generate

seeds = st.integers(0, 2**32 - 1)
CFG = PipelineConfig(lr_theta=3e-3, lr_base=3e-4, lr_kin=2e-2)


@pytest.fixture(scope="module")
def bench(exp):
    cfg = exp.with_overrides(["synth.length=3"])
    out = {}
    for s in (1, 2):
        ds = generate(cfg.trajectory(s), cfg.noise(s), cfg.domain(), cfg.camera(), cfg.arms(),
                      cfg.bases_true(), **cfg.generator_kwargs())
        out[s] = (ds, cfg.scene(ds.background))
    return out


def square(n, at=0, size=(30, 30)):
    m = np.zeros(size, dtype=bool)
    m.flat[at:at + n] = True
    return m


def test_dice_examples():
    a = square(100)
    assert dice(a, a) == 1.0
    assert dice(square(100), square(100, at=200)) == 0.0
    assert dice(square(100), square(100, at=50)) == 0.5
    assert dice(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0
    assert dice(square(10), np.zeros((30, 30))) == 0.0


def test_dice_shape_mismatch():
    with pytest.raises(ValueError, match="shapes differ"):
        dice(np.zeros((2, 2)), np.zeros((2, 3)))


@given(seeds, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_dice_is_symmetric_and_bounded(seed, pa, pb):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(9, 11)) < pa
    b = rng.uniform(size=(9, 11)) < pb
    assert dice(a, b) == dice(b, a)
    assert 0.0 <= dice(a, b) <= 1.0
    assert dice(a, a) == 1.0


def test_cumulative_examples():
    np.testing.assert_array_equal(cumulative_dice_diff([0.3, 0.7, 0.5], [0.3, 0.7, 0.5]), 0.0)
    np.testing.assert_allclose(cumulative_dice_diff([1.5, 1.2, 1.9], [0.5, 0.2, 0.9]), 1.0,
                               rtol=0, atol=1e-15)
    np.testing.assert_array_equal(cumulative_dice_diff([0.0, 1.0], [0.0, 0.0]), [0.0, 0.5])


def test_cumulative_length_mismatch():
    with pytest.raises(ValueError):
        cumulative_dice_diff([0.1, 0.2], [0.1])


@given(seeds, st.integers(1, 120))
def test_cumulative_last_entry_is_difference_of_means(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, n))
    curve = cumulative_dice_diff(a, b)
    assert curve[-1] == np.mean(a) - np.mean(b)
    for m in (1, (n + 1) // 2, n):
        assert curve[m - 1] == pytest.approx(a[:m].mean() - b[:m].mean(), abs=1e-15)


def test_ablation_rows_match_the_module_toggles():
    assert list(ABLATION_ROWS) == ["baseline", "temporal", "kcn", "kcn_reg", "all"]
    assert not any(ABLATION_ROWS["baseline"].values())
    assert all(ABLATION_ROWS["all"].values())
    assert ABLATION_ROWS["kcn_reg"]["use_reg"] and not ABLATION_ROWS["kcn"]["use_reg"]
    assert baseline_config(CFG) == configure(CFG, **ABLATION_ROWS["baseline"])


def test_sweep_k_deduplicates_and_includes_baseline(bench):
    res = sweep_k(bench, CFG, [1, 0, 1], [2, 1, 2], record_time=False)
    assert res.values(FULL) == [0, 1] and res.values(BASELINE) == [0, 1]
    assert res.seeds() == [1, 2]
    assert len(res.records) == 2 * 2 * 2
    assert all(r.frames == 3 for r in res.records)


def test_sweep_k_at_zero_is_render_of_measured(bench):
    res = sweep_k(bench, CFG, [0], [1], record_time=False, baseline=False)
    ds, scene = bench[1]
    plain = run_sequence(ds, configure(CFG, k=0), scene)
    np.testing.assert_array_equal(res.get(FULL, 0, 1).columns["dice"], [r.dice for r in plain])


def test_sweep_k_needs_values(bench):
    with pytest.raises(ValueError):
        sweep_k(bench, CFG, [], [1])


def test_missing_seed_is_reported(bench):
    with pytest.raises(SweepError, match="seeds \\[9\\]"):
        sweep_k(bench, CFG, [1], [9])


def test_run_errors_are_annotated(bench):
    ds, scene = bench[1]
    broken = {1: (ds, type(scene)(scene.arms, scene.camera, scene.background[:5], scene.base_init))}
    with pytest.raises(SweepError, match=r"value=1, seed=1"):
        sweep_k(broken, CFG, [1], [1], baseline=False)


@pytest.fixture(scope="module")
def grid(bench):
    return ablate(bench, CFG, [1, 2], k_values=[1, 2], record_time=False)


def test_ablation_grid_shape(grid):
    cells = {(r.label, r.value) for r in grid.records}
    assert len(cells) == 5 * 2
    assert len(grid.records) == 5 * 2 * 2


def test_ablation_baseline_equals_sweep_baseline(grid, bench):
    sweep = sweep_k(bench, CFG, [2], [1, 2], record_time=False)
    for s in (1, 2):
        a = grid.get("baseline", 2, s).columns
        b = sweep.get(BASELINE, 2, s).columns
        for f in a:
            np.testing.assert_array_equal(a[f], b[f])


def test_all_modules_first_frame_equals_baseline(grid):
    # zero-output network, zero offset and a vanishing regularizer at frame 0
    for s in (1, 2):
        for k in (1, 2):
            a = grid.get("all", k, s).columns
            b = grid.get("baseline", k, s).columns
            assert a["loss_first"][0] == b["loss_first"][0]
            assert a["joint_err_meas"][0] == b["joint_err_meas"][0]


def test_worker_count_does_not_change_results(bench, grid):
    again = ablate(bench, CFG, [2, 1], k_values=[2, 1], workers=2, record_time=False)
    assert [(r.label, r.value, r.seed) for r in again.records] == \
        [(r.label, r.value, r.seed) for r in grid.records]
    for x, y in zip(again.records, grid.records):
        for f in x.columns:
            np.testing.assert_array_equal(x.columns[f], y.columns[f])


def test_window_and_weight_sweeps(bench):
    n = sweep_n(bench, configure(CFG, k=1), [1], n_values=[3, 1, 3], record_time=False)
    assert n.axis == "n" and n.values() == [1, 3]
    l1 = sweep_lambda1(bench, configure(CFG, k=1), [1], values=[0, 1e4], record_time=False)
    assert l1.values() == [0.0, 1e4]
    l2 = sweep_lambda2(bench, configure(CFG, k=1), [1], values=[1000, 1], record_time=False)
    assert l2.values() == [1.0, 1000.0]


def test_cell_pools_frames_for_sd():
    recs = [RunRecord("x", 1, s, {"dice": np.array(d), "ms": np.array([1.0, 3.0])})
            for s, d in ((1, [0.2, 0.4]), (2, [0.6, 0.8]))]
    cell = SweepResult("t", "k", ("x",), recs).cell("x", 1)
    assert cell["mean_dice"] == pytest.approx(0.5, abs=1e-15)
    assert cell["sd_dice"] == pytest.approx(np.std([0.2, 0.4, 0.6, 0.8]), abs=1e-15)
    assert cell["mean_ms"] == 2.0 and cell["seeds"] == [1, 2]
