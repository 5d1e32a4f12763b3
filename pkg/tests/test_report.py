import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from kinseg.evaluate import BASELINE, FULL, RunRecord, SweepResult
from kinseg.report import (FRAME_HEADER, SEED_HEADER, TABLE_HEADER, emit_report, fmt,
                           load_frames, run_frames_csv)

FIELDS = ("dice", "loss_first", "loss_last", "joint_err_meas", "joint_err_corr", "ms")


def record(label, value, seed, frames=12):
    rng = np.random.default_rng([seed, value, len(label)])
    cols = {f: rng.uniform(size=frames) for f in FIELDS}
    cols["joint_err_corr"][3] = np.nan
    return RunRecord(label, value, seed, cols)


def sweep(values=(1, 3), seeds=(1, 2)):
    recs = [record(lab, v, s) for lab in (FULL, BASELINE) for v in values for s in seeds]
    return SweepResult("sweep_k", "k", (FULL, BASELINE), recs)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_empty_results_give_header_only_tables(tmp_path):
    written = emit_report([SweepResult("sweep_k", "k", (FULL,), [])], tmp_path)
    names = sorted(p.name for p in written)
    assert names == ["summary.txt", "sweep_k.csv", "sweep_k_frames.csv", "sweep_k_seeds.csv"]
    assert read(tmp_path / "sweep_k.csv") == [list(TABLE_HEADER)]
    assert read(tmp_path / "sweep_k_seeds.csv") == [list(SEED_HEADER)]
    assert read(tmp_path / "sweep_k_frames.csv") == [list(FRAME_HEADER)]
    assert not list(tmp_path.glob("*.svg"))


def test_no_results_at_all(tmp_path):
    assert [p.name for p in emit_report([], tmp_path)] == ["summary.txt"]


def test_single_point_plot_is_valid_svg(tmp_path):
    res = SweepResult("one", "k", (FULL,), [record(FULL, 5, 1)])
    emit_report([res], tmp_path)
    text = (tmp_path / "one_time_dice.svg").read_text()
    assert text.startswith('<?xml version="1.0"')
    assert '<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN"' in text
    root = ET.fromstring(text)
    assert root.get("version") == "1.1"
    assert len(root.findall(".//{http://www.w3.org/2000/svg}circle")) == 1


def test_reemit_is_byte_identical(tmp_path):
    emit_report([sweep()], tmp_path / "a")
    emit_report([sweep()], tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "sweep_k_cumulative.svg" in files and "sweep_k_time_dice.svg" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_means_recomputed_from_frames_match(tmp_path):
    res = sweep()
    emit_report([res], tmp_path)
    back = load_frames(tmp_path / "sweep_k_frames.csv", "sweep_k")
    rows = {(r["label"], int(r["value"])): r for r in csv.DictReader(open(tmp_path / "sweep_k.csv"))}
    for label in (FULL, BASELINE):
        for v in (1, 3):
            mem = res.cell(label, v)
            disk = back.cell(label, v)
            for key in ("mean_dice", "sd_dice", "mean_ms"):
                assert abs(disk[key] - mem[key]) <= 1e-12
                assert abs(float(rows[(label, v)][key]) - mem[key]) <= 1e-12
    for a, b in zip(res.sort().records, back.records):
        for f in FIELDS:
            np.testing.assert_array_equal(a.columns[f], b.columns[f])


def test_summary_mentions_every_cell(tmp_path):
    emit_report([sweep()], tmp_path)
    text = (tmp_path / "summary.txt").read_text()
    assert text.count("k=1") >= 2 and text.count("k=3") >= 2
    assert "cumulative diff full k=1" in text


def test_run_csv_round_trip(tmp_path):
    rec = record("run", 5, 3)
    (tmp_path / "r").mkdir()
    (tmp_path / "r" / "frames.csv").write_text(run_frames_csv(rec))
    back = load_frames(tmp_path / "r" / "frames.csv", seed=3, value=5)
    (got,) = back.records
    assert (got.seed, got.value) == (3, 5)
    for f in FIELDS:
        np.testing.assert_array_equal(got.columns[f], rec.columns[f])


def test_fmt():
    assert fmt(3) == "3"
    assert fmt(0.1) == "0.1"
    assert fmt(float("nan")) == ""


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_report([sweep()], blocker / "sub")
