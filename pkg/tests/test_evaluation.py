import json
from fractions import Fraction

import pytest

from packbench.evaluation import (DatasetError, PackDataset, average_reward, evaluate,
                                  format_report_table, load_dataset, make_report,
                                  save_dataset, success_at)
from packbench.meshes import make_spec
from packbench.packing import Chromosome, create_pack
from packbench.policies import SearchConfig


def test_average_reward_examples():
    assert average_reward([Fraction(1)]) == 1.0
    assert abs(average_reward([1.0, 0.8, 0.4]) - 0.7333333333333333) < 1e-12
    exact = average_reward([Fraction(1, 3), Fraction(1, 7), Fraction(2, 5)])
    assert abs(exact - float((Fraction(1, 3) + Fraction(1, 7) + Fraction(2, 5)) / 3)) < 1e-12
    with pytest.raises(ValueError):
        average_reward([])


def test_success_at_examples():
    rs = [1.0, 0.8, 0.4]
    assert abs(success_at(rs, 0.7) - 200.0 / 3.0) < 1e-9
    assert success_at(rs, 0) == 100.0
    with pytest.raises(ValueError):
        success_at([], 0.5)
    with pytest.raises(ValueError):
        success_at(rs, 1.5)


def test_success_at_one_is_exact():
    almost = Fraction(10 ** 12 - 1, 10 ** 12)
    assert success_at([Fraction(1), almost], 1) == 50.0
    # float thresholds are read as decimals: 0.7 means exactly 7/10
    assert success_at([Fraction(7, 10)], 0.7) == 100.0


def test_success_non_increasing_in_x():
    rs = [Fraction(1), Fraction(9, 10), Fraction(55, 100), Fraction(2, 10)]
    rep = make_report(rs, {})
    vals = [v for _, v in rep.success]
    assert vals == sorted(vals, reverse=True)


def trivially_packable_dataset(n=3):
    pool = [make_spec(f"c{i}", "cuboid", w=0.2, h=0.2, d=0.2) for i in range(4)]
    c = Chromosome((0, 1, 2, 3), (Fraction(1),) * 4, (0,) * 4)
    pack = create_pack(pool, c)
    return PackDataset(header={"config": {"note": "test"}}, records=tuple([pack] * n))


def test_evaluate_trivial_dataset_full_marks():
    ds = trivially_packable_dataset()
    rep, trajs = evaluate(ds, "vanilla", "largest_first:aligned:blbf")
    assert rep.average_reward == 1.0
    assert dict(rep.success)[Fraction(1)] == 100.0
    rep2, _ = evaluate(ds, "vanilla", "largest_first:aligned:blbf")
    assert rep.to_json() == rep2.to_json()
    assert all(t.cumulative_reward == 1 for t in trajs)


def test_evaluate_rejects_bad_combo():
    ds = trivially_packable_dataset(1)
    with pytest.raises(ValueError):
        evaluate(ds, "vanilla", "lf:aligned:blbf", SearchConfig(beams=2, backtracks=2))


def test_save_load_roundtrip_byte_identical(tmp_path, mini_dataset):
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    save_dataset(str(p1), mini_dataset)
    again = load_dataset(str(p1))
    save_dataset(str(p2), again)
    assert p1.read_bytes() == p2.read_bytes()
    assert [r.placements for r in again.records] == [r.placements for r in mini_dataset.records]


def test_load_rejects_tampered_anchor(tmp_path, mini_dataset):
    path = tmp_path / "bad.jsonl"
    save_dataset(str(path), mini_dataset)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    # move a late placement onto the first one to force an overlap
    assert len(rec["placements"]) >= 2
    rec["placements"][-1]["anchor"] = rec["placements"][0]["anchor"]
    rec["placements"][-1]["rotation"] = rec["placements"][0]["rotation"]
    rec["placements"][-1]["scale"] = rec["placements"][0]["scale"]
    rec["placements"][-1]["shape_idx"] = rec["placements"][0]["shape_idx"]
    lines[1] = json.dumps(rec, separators=(",", ":"))
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="pack 0"):
        load_dataset(str(path))


def test_load_rejects_density_mismatch(tmp_path, mini_dataset):
    path = tmp_path / "bad.jsonl"
    save_dataset(str(path), mini_dataset)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["density"] = "1/2"
    lines[1] = json.dumps(rec, separators=(",", ":"))
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="density"):
        load_dataset(str(path))


def test_load_reports_malformed_line(tmp_path, mini_dataset):
    path = tmp_path / "bad.jsonl"
    save_dataset(str(path), mini_dataset)
    lines = path.read_text().splitlines()
    lines[2] = "{not json"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="line 3"):
        load_dataset(str(path))


def test_load_rejects_version_mismatch(tmp_path, mini_dataset):
    path = tmp_path / "bad.jsonl"
    save_dataset(str(path), mini_dataset)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["version"] = 99
    lines[0] = json.dumps(header, separators=(",", ":"))
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="version"):
        load_dataset(str(path))


def test_report_table_layout():
    ds = trivially_packable_dataset(1)
    rep, _ = evaluate(ds, "vanilla", "largest_first:aligned:blbf")
    text = format_report_table([("largest_first:aligned:blbf", rep)])
    lines = text.splitlines()
    assert lines[0].startswith("Shape")
    assert "Avg Reward" in lines[0]
    assert "1.000" in lines[2]
