#!/usr/bin/env python3
"""
Tests for detection/result/ground-truth text files, feature files and
scenario directories.
"""

import numpy as np
import pytest

from src.dataio import (
    FeatureTable, pair_detections, parse_detections, parse_records, read_features, read_ground_truth,
    read_scenario, read_warps, write_features, write_ground_truth, write_results, write_scenario,
)
from src.dataio.features import HEADER_DTYPE, MAGIC
from src.evaluation import ScenarioSpec, generate_scenario
from src.models.data_models import DetectionRecord
from src.models.errors import DataFormatError, DataIoError, Malformed


def test_parse_single_line():
    [record] = parse_records(["1,-1,10,20,30,40,0.9,-1,-1,-1"])
    assert (record.frame, record.id) == (1, -1)
    assert (record.x, record.y, record.w, record.h) == (10.0, 20.0, 30.0, 40.0)
    assert record.confidence == 0.9
    assert record.center_box == (25.0, 40.0, 30.0, 40.0)


def test_parse_empty_file(tmp_path):
    path = tmp_path / "det.txt"
    path.write_text("")
    assert parse_detections(path) == []


def test_short_line_reports_its_number(tmp_path):
    path = tmp_path / "det.txt"
    path.write_text("1,-1,10,20,30,40,0.9,-1,-1,-1\n2,-1,10,20,30,40,0.9,-1,-1,-1\n3,-1,10,20,30,40\n")
    with pytest.raises(Malformed) as info:
        parse_detections(path)
    assert info.value.line == 3


@pytest.mark.parametrize("line", [
    "1,-1,ten,20,30,40,0.9,-1,-1,-1",
    "1,-1,10,20,0,40,0.9,-1,-1,-1",
    "0,-1,10,20,30,40,0.9,-1,-1,-1",
    "1.5,-1,10,20,30,40,0.9,-1,-1,-1",
    "1,-1,10,20,30,40,0.9,-1,-1,-1,7",
])
def test_invalid_lines(line):
    with pytest.raises(Malformed):
        parse_records([line])


def test_records_sorted_by_frame_keeping_line_order():
    records = parse_records([
        "2,-1,1,1,5,5,1,-1,-1,-1",
        "1,-1,2,2,5,5,1,-1,-1,-1",
        "",
        "1,-1,3,3,5,5,1,-1,-1,-1",
    ])
    assert [(r.frame, r.x) for r in records] == [(1, 2.0), (1, 3.0), (2, 1.0)]


def test_missing_file():
    with pytest.raises(DataIoError):
        parse_detections("/nonexistent/det.txt")


def test_results_round_trip_exactly(tmp_path):
    records = [
        DetectionRecord(1, 4, 0.1 + 0.2, 1 / 3, 20.000000000000004, 50.5),
        DetectionRecord(2, 4, 1e-7, 123456.789012345, 19.99, 2.0 ** -20),
    ]
    path = tmp_path / "res.txt"
    write_results(records, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    parsed = parse_detections(path)
    assert [r.id for r in parsed] == [4, 4]
    for original, again in zip(records, parsed):
        assert (again.x, again.y, again.w, again.h) == (original.x, original.y, original.w, original.h)
        assert again.confidence == 1.0


def test_empty_result_set(tmp_path):
    path = tmp_path / "res.txt"
    write_results([], path)
    assert path.read_text() == ""


def test_ground_truth_round_trip(tmp_path, make_sequence):
    gt = make_sequence({1: [(1, (15.0, 30.0, 10.0, 20.0)), (2, (40.0, 30.0, 10.0, 20.0))],
                        3: [(1, (17.0, 30.0, 10.0, 20.0))]})
    path = tmp_path / "gt.txt"
    write_ground_truth(gt, path)
    again = read_ground_truth(path)
    assert again.frames == gt.frames
    assert (again.first_frame, again.last_frame) == (1, 3)


def test_ignored_ground_truth_lines_are_dropped(tmp_path):
    path = tmp_path / "gt.txt"
    path.write_text("1,1,0,0,10,10,1,-1,-1,-1\n1,2,50,50,10,10,0,-1,-1,-1\n")
    assert [b.identity for b in read_ground_truth(path).boxes_at(1)] == [1]
    assert len(read_ground_truth(path, skip_ignored=False).boxes_at(1)) == 2


# Feature files -------------------------------------------------------------------

def feature_table(rng):
    return FeatureTable.from_rows([(1, 0, rng.normal(size=6)), (1, 1, rng.normal(size=6)),
                                   (2, 0, rng.normal(size=6))])


def test_binary_features_round_trip_as_float32(tmp_path, rng):
    table = feature_table(rng)
    path = tmp_path / "feat.bin"
    write_features(table, path)
    again = read_features(path)
    assert again.dim == 6 and len(again) == 3
    for key, values in table.rows.items():
        np.testing.assert_array_equal(again.rows[key], values.astype(np.float32))
    assert path.stat().st_size == HEADER_DTYPE.itemsize + 3 * (8 + 6 * 4)
    assert path.read_bytes()[:4] == MAGIC


def test_csv_features_round_trip_exactly(tmp_path, rng):
    table = feature_table(rng)
    path = tmp_path / "feat.csv"
    write_features(table, path, "csv")
    again = read_features(path, "csv")
    for key, values in table.rows.items():
        np.testing.assert_array_equal(again.rows[key], values)


def test_bad_feature_files(tmp_path, rng):
    path = tmp_path / "feat.bin"
    path.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(DataFormatError):
        read_features(path)
    write_features(feature_table(rng), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataFormatError):
        read_features(path)
    with pytest.raises(DataFormatError):
        FeatureTable.from_rows([(1, 0, np.ones(3)), (1, 1, np.ones(4))])
    with pytest.raises(DataFormatError):
        read_features(path, "parquet")


def test_pairing_detections_with_features(rng):
    records = parse_records(["1,-1,0,0,10,10,1,-1,-1,-1", "1,-1,20,0,10,10,1,-1,-1,-1",
                             "2,-1,0,0,10,10,1,-1,-1,-1"])
    table = feature_table(rng)
    frames = pair_detections(records, table)
    assert sorted(frames) == [1, 2]
    boxes, features = frames[1]
    np.testing.assert_array_equal(boxes, [[5.0, 5.0, 10.0, 10.0], [25.0, 5.0, 10.0, 10.0]])
    np.testing.assert_array_equal(features[1], table.rows[1, 1])

    with pytest.raises(DataFormatError):
        pair_detections(records[:2], table)
    with pytest.raises(DataFormatError):
        pair_detections(records + parse_records(["2,-1,5,5,10,10,1,-1,-1,-1"]), table)


def test_warp_file(tmp_path):
    path = tmp_path / "warp.txt"
    path.write_text("2,1,0,5,0,1,-3\n")
    np.testing.assert_array_equal(read_warps(path)[2], [[1.0, 0.0, 5.0], [0.0, 1.0, -3.0]])
    path.write_text("2,1,0,5\n")
    with pytest.raises(Malformed):
        read_warps(path)


@pytest.mark.parametrize("fmt", ["binary", "csv"])
def test_scenario_directory_round_trip(tmp_path, fmt):
    scenario = generate_scenario(ScenarioSpec("io", 3, 12, "linear", occlusions=((1, 4, 6),), seed=2))
    write_scenario(scenario, tmp_path / "io", fmt)
    gt, frames = read_scenario(tmp_path / "io")
    assert gt.num_boxes == scenario.gt.num_boxes
    assert (gt.first_frame, gt.last_frame) == (1, 12)
    assert sorted(frames) == sorted(scenario.frames)
    for frame, (boxes, features) in scenario.frames.items():
        np.testing.assert_allclose(frames[frame][0], boxes, atol=1e-9)
        np.testing.assert_allclose(frames[frame][1], features, atol=1e-6)


if __name__ == "__main__":
    pytest.main([__file__])
