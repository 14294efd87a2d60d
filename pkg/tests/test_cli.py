import json
import struct
import subprocess
import sys

import numpy as np

from packbench.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, VOXDUMP_MAGIC, main
from packbench.env import MODE_VANILLA, ground_truth_actions, new_task
from packbench.evaluation import load_dataset
from packbench.policies import greedy_rollout, parse_policy


def test_evolve_writes_dataset_and_reruns_identically(tmp_path):
    args = ["evolve", "--packs", "2", "--pool-size", "5", "--population", "8",
            "--generations", "5", "--seed", "17"]
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(args + ["--out", str(out1)]) == EXIT_OK
    assert main(args + ["--out", str(out2)]) == EXIT_OK
    b1 = (out1 / "packs.jsonl").read_bytes()
    b2 = (out2 / "packs.jsonl").read_bytes()
    assert b1 == b2
    ds = load_dataset(str(out1 / "packs.jsonl"))
    assert len(ds.records) == 2
    assert (out1 / "manifest.json").exists()


def test_evolve_output_independent_of_thread_count(tmp_path, monkeypatch):
    args = ["evolve", "--packs", "2", "--pool-size", "5", "--population", "8",
            "--generations", "4", "--seed", "9"]
    monkeypatch.setenv("PACKBENCH_THREADS", "1")
    assert main(args + ["--out", str(tmp_path / "serial")]) == EXIT_OK
    monkeypatch.setenv("PACKBENCH_THREADS", "2")
    assert main(args + ["--out", str(tmp_path / "parallel")]) == EXIT_OK
    assert (tmp_path / "serial" / "packs.jsonl").read_bytes() == \
        (tmp_path / "parallel" / "packs.jsonl").read_bytes()


def test_trace_best_fitness_monotone(tmp_path):
    out = tmp_path / "run"
    assert main(["evolve", "--packs", "1", "--pool-size", "5", "--population", "8",
                 "--generations", "8", "--seed", "3", "--out", str(out)]) == EXIT_OK
    rows = (out / "trace_000.csv").read_text().splitlines()
    assert rows[0] == "generation,best_fitness,mean_fitness"
    best = [float(r.split(",")[1]) for r in rows[1:]]
    assert best == sorted(best)


def test_solve_greedy_matches_library(tmp_path, mini_dataset_path, mini_dataset):
    out = tmp_path / "solve"
    rc = main(["solve", "--dataset", str(mini_dataset_path), "--mode", "vanilla",
               "--policy", "lf:aligned:blbf", "--beams", "1", "--backtracks", "0",
               "--out", str(out)])
    assert rc == EXIT_OK
    for i, pack in enumerate(mini_dataset.records):
        expected = greedy_rollout(new_task(pack), MODE_VANILLA,
                                  parse_policy("lf:aligned:blbf", MODE_VANILLA))
        assert (out / f"task_{i:04d}.log").read_text() == expected.log_text()
    report = json.loads((out / "report.json").read_text())
    assert report["task_count"] == len(mini_dataset.records)
    assert (out / "report.txt").read_text().startswith("Shape")


def test_solve_reports_reproducible(tmp_path, mini_dataset_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["solve", "--dataset", str(mini_dataset_path), "--policy",
                     "random:aligned:blbf", "--seed", "5", "--out", str(out)]) == EXIT_OK
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_exit_codes(tmp_path, mini_dataset_path):
    # unknown policy rule -> config error
    assert main(["solve", "--dataset", str(mini_dataset_path), "--policy", "bogus:aligned:blbf",
                 "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    # lowest in vanilla -> config error
    assert main(["solve", "--dataset", str(mini_dataset_path), "--policy", "lf:aligned:lowest",
                 "--out", str(tmp_path / "y")]) == EXIT_CONFIG
    # missing dataset -> data error
    assert main(["solve", "--dataset", str(tmp_path / "nope.jsonl"),
                 "--out", str(tmp_path / "z")]) == EXIT_DATA
    # malformed flags -> config error
    assert main(["evolve", "--packs"]) == EXIT_CONFIG
    # easy mode needs a two-part policy
    assert main(["solve", "--dataset", str(mini_dataset_path), "--mode", "easy",
                 "--policy", "lf:aligned:blbf", "--out", str(tmp_path / "w")]) == EXIT_CONFIG


def test_paper_scale_flag_sets_defaults():
    from packbench.cli import _apply_scale_defaults, build_parser
    args = build_parser().parse_args(["evolve", "--paper-scale", "--out", "x"])
    _apply_scale_defaults(args)
    assert (args.pool_size, args.population, args.generations) == (50, 100, 1000)
    args = build_parser().parse_args(["evolve", "--paper-scale", "--population", "40", "--out", "x"])
    _apply_scale_defaults(args)
    assert args.population == 40  # explicit flags win
    args = build_parser().parse_args(["evolve", "--out", "x"])
    _apply_scale_defaults(args)
    assert (args.pool_size, args.population, args.generations) == (10, 20, 100)


def test_hardness_csv(tmp_path):
    out = tmp_path / "hard"
    rc = main(["hardness", "--runs", "2", "--pool-size", "5", "--population", "8",
               "--generations", "6", "--snapshot-every", "3", "--seed", "2",
               "--out", str(out)])
    assert rc == EXIT_OK
    rows = (out / "hardness.csv").read_text().splitlines()
    assert rows[0] == "generation,avg_reward,s@0.7,s@1.0"
    gens = [int(r.split(",")[0]) for r in rows[1:]]
    assert gens == sorted(gens) and gens[0] == 0
    for r in rows[1:]:
        parts = r.split(",")
        assert len(parts) == 4
        assert 0.0 <= float(parts[1]) <= 1.0


def test_replay_and_action_counts(tmp_path, mini_dataset_path, mini_dataset):
    task = new_task(mini_dataset.records[0])
    actions = ground_truth_actions(task)
    actions_file = tmp_path / "actions.txt"
    actions_file.write_text("\n".join(str(a) for a in actions) + "\n")
    log = tmp_path / "replay.log"
    counts = tmp_path / "counts.txt"
    rc = main(["replay", "--dataset", str(mini_dataset_path), "--task", "0",
               "--mode", "vanilla", "--actions", str(actions_file),
               "--out", str(log), "--action-counts", str(counts)])
    assert rc == EXIT_OK
    lines = log.read_text().splitlines()
    assert len(lines) == len(actions)
    assert lines[-1].split()[-1] == "1"
    total = sum(float(l.split()[3]) for l in lines)
    assert abs(total - 1.0) < 1e-9
    cnt = [int(c) for c in counts.read_text().split()]
    assert len(cnt) == len(actions)
    assert cnt[1] == 24  # vanilla rotation phase


def test_export_voxels_dumps(tmp_path, mini_dataset_path, mini_dataset):
    task = new_task(mini_dataset.records[0])
    actions = ground_truth_actions(task)
    actions_file = tmp_path / "actions.txt"
    actions_file.write_text("\n".join(str(a) for a in actions) + "\n")
    log = tmp_path / "replay.log"
    assert main(["replay", "--dataset", str(mini_dataset_path), "--task", "0",
                 "--actions", str(actions_file), "--out", str(log)]) == EXIT_OK
    out = tmp_path / "vox"
    rc = main(["export-voxels", "--trajectory", str(log), "--dataset", str(mini_dataset_path),
               "--task", "0", "--mode", "vanilla", "--out", str(out)])
    assert rc == EXIT_OK
    dumps = sorted(out.glob("step_*.vox"))
    assert len(dumps) == len(actions)
    final = dumps[-1].read_bytes()
    assert final[:8] == VOXDUMP_MAGIC
    dims = struct.unpack("<III", final[8:20])
    assert dims == (100, 100, 100)
    bits = np.unpackbits(np.frombuffer(final[20:], dtype=np.uint8))[:100 ** 3]
    assert int(bits.sum()) == task.total_volume  # everything placed


def test_export_voxels_rejects_corrupt_log(tmp_path, mini_dataset_path, mini_dataset):
    task = new_task(mini_dataset.records[0])
    actions = ground_truth_actions(task)
    log = tmp_path / "bad.log"
    lines = [f"{k} shape {a} 0.500000000000 0" for k, a in enumerate(actions)]
    log.write_text("\n".join(lines) + "\n")
    rc = main(["export-voxels", "--trajectory", str(log), "--dataset", str(mini_dataset_path),
               "--task", "0", "--out", str(tmp_path / "vox")])
    assert rc == EXIT_DATA


def _stdio_session(dataset_path, requests, extra=()):
    proc = subprocess.Popen(
        [sys.executable, "-m", "packbench.cli", "env-stdio", "--dataset", str(dataset_path),
         "--task", "0", "--mode", "vanilla", *extra],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    out, _ = proc.communicate("\n".join(json.dumps(r) for r in requests) + "\n", timeout=120)
    assert proc.returncode == 0
    return [json.loads(line) for line in out.splitlines()]


def test_env_stdio_protocol(mini_dataset_path, mini_dataset):
    task = new_task(mini_dataset.records[0])
    actions = ground_truth_actions(task)
    requests = [{"cmd": "step", "action": a} for a in actions[:3]]
    requests.insert(1, {"cmd": "step", "action": 999})  # invalid, state unchanged
    requests.append({"cmd": "close"})
    replies = _stdio_session(mini_dataset_path, requests)
    assert replies[0]["type"] == "ready"
    assert replies[0]["phase"] == "shape"
    assert replies[0]["action_count"] == len(task.shapes)
    assert replies[1]["type"] == "step"
    assert replies[2]["type"] == "error" and replies[2]["error"] == "InvalidAction"
    assert replies[3]["type"] == "step" and replies[3]["phase"] == "location"
    assert replies[4]["type"] == "step"
    assert float(replies[4]["reward"]) > 0


def test_env_stdio_reset_and_pooled_obs(mini_dataset_path):
    replies = _stdio_session(
        mini_dataset_path,
        [{"cmd": "step", "action": 0}, {"cmd": "reset"}, {"cmd": "close"}],
        extra=("--obs", "pooled:50"),
    )
    assert replies[0]["type"] == "ready"
    assert len(replies[0]["obs"]["pooled_box"]) == 8
    assert replies[2]["type"] == "ready"
    assert replies[2]["cum_reward"] == "0.000000000000"
