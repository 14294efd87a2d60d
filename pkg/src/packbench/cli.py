"""Command-line orchestration.

Subcommands:
    evolve         breed packs and write a dataset
    solve          run a solver over a dataset, writing logs and a report
    hardness       difficulty-vs-generation curve as CSV
    replay         turn an explicit action file into a trajectory log
    export-voxels  dump per-step box occupancy for a trajectory log
    env-stdio      interactive JSON-lines episode server (used by bindings)

Exit codes: 0 success, 1 configuration error, 2 data error. Worker-pool
parallelism is capped by the PACKBENCH_THREADS environment variable
(default 1); outputs are ordered by index regardless of completion order,
and every command writes a manifest next to its outputs.
"""

import argparse
import json
import os
import struct
import sys
import time
from fractions import Fraction

import numpy as np

from . import __version__
from .env import MODES, MODE_VANILLA, InvalidAction, EpisodeFinished, action_count, new_task, reset, step
from .evaluation import (DatasetError, PackDataset, evaluate, format_report_table,
                         load_dataset, save_dataset, success_at)
from .evolution import EvolutionConfig, PoolSpec, evolve, sample_pool
from .packing import create_pack
from .policies import SearchConfig, greedy_rollout, parse_policy
from .seeds import derive_seed
from .voxels import RESOLUTION, pooled_occupancy

VOXDUMP_MAGIC = b"PBVOX001"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PACKBENCH_THREADS", "1")))
    except ValueError:
        return 1


def _write_manifest(out_dir: str, command: str, argv: list[str], config: dict, outputs: list[str],
                    started: float) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "outputs": outputs,
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def _evolution_config(args, seed: int) -> EvolutionConfig:
    population = args.population
    return EvolutionConfig(
        population=population,
        elite=args.elite if args.elite is not None else max(1, population // 4),
        lucky=args.lucky if args.lucky is not None else max(0, population // 4),
        max_generations=args.generations,
        patience=args.patience,
        seed=seed,
        snapshot_every=getattr(args, "snapshot_every", 0),
    )


def _evolve_one(args, pack_index: int):
    pool_seed = derive_seed(args.seed, pack_index, 0)
    evo_seed = derive_seed(args.seed, pack_index, 1)
    pool = sample_pool(PoolSpec(pool_size=args.pool_size, seed=pool_seed))
    pack, trace = evolve(pool, _evolution_config(args, evo_seed))
    return pack, trace


def cmd_evolve(args, argv) -> int:
    started = time.time()
    os.makedirs(args.out, exist_ok=True)
    threads = _threads()
    indices = list(range(args.packs))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_EvolveJob(args), indices))
    else:
        results = [_evolve_one(args, i) for i in indices]

    outputs = []
    for i, (_, trace) in zip(indices, results):
        trace_path = os.path.join(args.out, f"trace_{i:03d}.csv")
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("generation,best_fitness,mean_fitness\n")
            for g, (b, m) in enumerate(zip(trace.best, trace.mean)):
                fh.write(f"{g},{float(b):.12f},{float(m):.12f}\n")
        outputs.append(trace_path)

    config = {
        "packs": args.packs, "pool_size": args.pool_size, "population": args.population,
        "generations": args.generations, "patience": args.patience, "seed": args.seed,
    }
    dataset = PackDataset(header={"config": config}, records=tuple(p for p, _ in results))
    ds_path = os.path.join(args.out, "packs.jsonl")
    save_dataset(ds_path, dataset)
    outputs.append(ds_path)
    _write_manifest(args.out, "evolve", argv, config, outputs, started)
    print(f"wrote {args.packs} packs to {ds_path}")
    return EXIT_OK


class _EvolveJob:
    """Picklable wrapper so evolve runs can fan out to worker processes."""

    def __init__(self, args):
        self.args = args

    def __call__(self, pack_index: int):
        return _evolve_one(self.args, pack_index)


def cmd_solve(args, argv) -> int:
    started = time.time()
    dataset = load_dataset(args.dataset)
    search = SearchConfig(beams=args.beams, backtracks=args.backtracks)
    try:
        report, trajectories = evaluate(dataset, args.mode, args.policy, search,
                                        seed=args.seed, threads=_threads())
    except ValueError as e:
        raise ConfigError(str(e)) from None
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for i, t in enumerate(trajectories):
        log_path = os.path.join(args.out, f"task_{i:04d}.log")
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write(t.log_text())
        outputs.append(log_path)
    rep_json = os.path.join(args.out, "report.json")
    with open(rep_json, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    rep_txt = os.path.join(args.out, "report.txt")
    with open(rep_txt, "w", encoding="utf-8") as fh:
        fh.write(format_report_table([(args.policy, report)]))
    outputs += [rep_json, rep_txt]
    _write_manifest(args.out, "solve", argv, report.config, outputs, started)
    print(format_report_table([(args.policy, report)]), end="")
    return EXIT_OK


def cmd_hardness(args, argv) -> int:
    started = time.time()
    os.makedirs(args.out, exist_ok=True)
    threads = _threads()
    indices = list(range(args.runs))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_HardnessJob(args), indices))
    else:
        results = [_hardness_one(args, i) for i in indices]

    by_generation: dict[int, list[Fraction]] = {}
    for rows in results:
        for generation, reward in rows:
            by_generation.setdefault(generation, []).append(reward)
    csv_path = os.path.join(args.out, "hardness.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("generation,avg_reward,s@0.7,s@1.0\n")
        for generation in sorted(by_generation):
            rewards = by_generation[generation]
            avg = float(sum(rewards, Fraction(0)) / len(rewards))
            fh.write(f"{generation},{avg:.12f},{success_at(rewards, Fraction(7, 10)):.2f},"
                     f"{success_at(rewards, Fraction(1)):.2f}\n")
    config = {
        "runs": args.runs, "pool_size": args.pool_size, "population": args.population,
        "generations": args.generations, "patience": args.patience,
        "snapshot_every": args.snapshot_every, "seed": args.seed,
    }
    _write_manifest(args.out, "hardness", argv, config, [csv_path], started)
    print(f"wrote {csv_path}")
    return EXIT_OK


def _hardness_one(args, run_index: int) -> list[tuple[int, Fraction]]:
    pool_seed = derive_seed(args.seed, run_index, 0)
    evo_seed = derive_seed(args.seed, run_index, 1)
    pool = sample_pool(PoolSpec(pool_size=args.pool_size, seed=pool_seed))
    _, trace = evolve(pool, _evolution_config(args, evo_seed))
    rows = []
    for generation, chromosome in trace.snapshots:
        pack = create_pack(pool, chromosome)
        if not pack.placements:
            continue
        task = new_task(pack)
        policy = parse_policy("largest_first:aligned:blbf", MODE_VANILLA)
        t = greedy_rollout(task, MODE_VANILLA, policy)
        rows.append((generation, t.cumulative_reward))
    return rows


class _HardnessJob:
    def __init__(self, args):
        self.args = args

    def __call__(self, run_index: int):
        return _hardness_one(self.args, run_index)


def _read_actions(path: str) -> list[int]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [int(line) for line in fh.read().split()]
    except ValueError as e:
        raise DatasetError(f"bad action file {path}: {e}") from None


def cmd_replay(args, argv) -> int:
    dataset = load_dataset(args.dataset)
    if not 0 <= args.task < len(dataset.records):
        raise DatasetError(f"task index {args.task} outside dataset of {len(dataset.records)}")
    actions = _read_actions(args.actions)
    task = new_task(dataset.records[args.task])
    state, _ = reset(task, args.mode)
    lines = []
    counts = []
    for k, a in enumerate(actions):
        if state.done:
            break
        counts.append(action_count(state))
        phase = state.phase
        before = state.reward
        try:
            state, _, _, done = step(state, a)
        except InvalidAction as e:
            raise DatasetError(f"action {k}: {e}") from None
        lines.append(f"{k} {phase} {a} {float(state.reward - before):.12f} {1 if done else 0}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.action_counts:
        with open(args.action_counts, "w", encoding="utf-8") as fh:
            fh.writelines(f"{c}\n" for c in counts)
    return EXIT_OK


def cmd_export_voxels(args, argv) -> int:
    started = time.time()
    dataset = load_dataset(args.dataset)
    if not 0 <= args.task < len(dataset.records):
        raise DatasetError(f"task index {args.task} outside dataset of {len(dataset.records)}")
    try:
        with open(args.trajectory, "r", encoding="utf-8") as fh:
            rows = [line.split() for line in fh if line.strip()]
        actions = [int(r[2]) for r in rows]
        rewards = [r[3] for r in rows]
    except (OSError, IndexError, ValueError) as e:
        raise DatasetError(f"bad trajectory log {args.trajectory}: {e}") from None
    task = new_task(dataset.records[args.task])
    state, _ = reset(task, args.mode)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for k, a in enumerate(actions):
        before = state.reward
        try:
            state, _, _, _ = step(state, a)
        except (InvalidAction, EpisodeFinished) as e:
            raise DatasetError(f"trajectory step {k} does not replay: {e}") from None
        if f"{float(state.reward - before):.12f}" != rewards[k]:
            raise DatasetError(f"trajectory step {k}: logged reward {rewards[k]} does not replay")
        path = os.path.join(args.out, f"step_{k:04d}.vox")
        with open(path, "wb") as fh:
            fh.write(VOXDUMP_MAGIC)
            fh.write(struct.pack("<III", *([RESOLUTION] * 3)))
            fh.write(np.packbits(state.box.cells).tobytes())
        outputs.append(path)
    _write_manifest(args.out, "export-voxels", argv,
                    {"trajectory": args.trajectory, "task": args.task, "mode": args.mode},
                    outputs, started)
    print(f"wrote {len(outputs)} voxel dumps to {args.out}")
    return EXIT_OK


def _obs_payload(state, obs_mode: str) -> dict:
    payload: dict = {"remaining": list(state.remaining)}
    if state.phase == "location":
        payload["candidates"] = [list(a) for a in state.candidates]
    if state.phase == "rotation" and state.mode != MODE_VANILLA:
        payload["rotations"] = list(state.feasible_rotations)
    if obs_mode == "counts" or obs_mode.startswith("pooled"):
        payload["counts"] = [state.task.count(i) for i in state.remaining]
    if obs_mode.startswith("pooled:"):
        cell = int(obs_mode.split(":", 1)[1])
        payload["pooled_box"] = [round(v, 9) for v in
                                 pooled_occupancy(state.box.cells, cell).ravel().tolist()]
    return payload


def cmd_env_stdio(args, argv) -> int:
    dataset = load_dataset(args.dataset)
    if not 0 <= args.task < len(dataset.records):
        raise DatasetError(f"task index {args.task} outside dataset of {len(dataset.records)}")
    task = new_task(dataset.records[args.task])

    def emit(obj):
        sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
        sys.stdout.flush()

    def snapshot(state, kind, reward=Fraction(0), done=False):
        return {
            "type": kind,
            "phase": state.phase,
            "action_count": 0 if state.done else action_count(state),
            "reward": f"{float(reward):.12f}",
            "cum_reward": f"{float(state.reward):.12f}",
            "done": state.done if kind != "step" else done,
            "obs": _obs_payload(state, args.obs),
        }

    state, _ = reset(task, args.mode)
    emit(snapshot(state, "ready"))
    for raw in sys.stdin:
        raw = raw.strip()
        if not raw:
            continue
        try:
            req = json.loads(raw)
        except json.JSONDecodeError:
            emit({"type": "error", "error": "BadRequest", "detail": "not json"})
            continue
        cmd = req.get("cmd")
        if cmd == "close":
            break
        if cmd == "reset":
            state, _ = reset(task, args.mode)
            emit(snapshot(state, "ready"))
        elif cmd == "step":
            try:
                before = state.reward
                state, _, _, done = step(state, int(req.get("action", -1)))
            except (InvalidAction, EpisodeFinished, TypeError, ValueError) as e:
                emit({"type": "error", "error": type(e).__name__, "detail": str(e)})
                continue
            emit(snapshot(state, "step", reward=state.reward - before, done=done))
        else:
            emit({"type": "error", "error": "BadRequest", "detail": f"unknown cmd {cmd!r}"})
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="packbench", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def add_evolution_flags(sp, paper_scale_default=False):
        sp.add_argument("--pool-size", type=int, default=None)
        sp.add_argument("--population", type=int, default=None)
        sp.add_argument("--elite", type=int, default=None)
        sp.add_argument("--lucky", type=int, default=None)
        sp.add_argument("--generations", type=int, default=None)
        sp.add_argument("--patience", type=int, default=100)
        sp.add_argument("--paper-scale", action="store_true",
                        help="pool 50, population 100, 1000 generations")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("evolve", help="breed packs and write a dataset")
    sp.add_argument("--packs", type=int, default=4)
    add_evolution_flags(sp)
    sp.set_defaults(func=cmd_evolve)

    sp = sub.add_parser("solve", help="run a solver over a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--mode", choices=MODES, default=MODE_VANILLA)
    sp.add_argument("--policy", default="largest_first:aligned:blbf",
                    help="shape:rotation:location (vanilla) or shape:location (easy)")
    sp.add_argument("--beams", type=int, default=1)
    sp.add_argument("--backtracks", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("hardness", help="difficulty-vs-generation CSV curve")
    sp.add_argument("--runs", type=int, default=8)
    sp.add_argument("--snapshot-every", type=int, default=50)
    add_evolution_flags(sp)
    sp.set_defaults(func=cmd_hardness)

    sp = sub.add_parser("replay", help="run an action file through the environment")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--task", type=int, required=True)
    sp.add_argument("--mode", choices=MODES, default=MODE_VANILLA)
    sp.add_argument("--actions", required=True, help="file with one action per line")
    sp.add_argument("--out", default="-", help="trajectory log path, - for stdout")
    sp.add_argument("--action-counts", default=None,
                    help="also write the pre-step action count per line")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("export-voxels", help="dump per-step box occupancy")
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--task", type=int, required=True)
    sp.add_argument("--mode", choices=MODES, default=MODE_VANILLA)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_voxels)

    sp = sub.add_parser("env-stdio", help="interactive JSON-lines episode server")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--task", type=int, required=True)
    sp.add_argument("--mode", choices=MODES, default=MODE_VANILLA)
    sp.add_argument("--obs", default="counts", help="none | counts | pooled:<cell>")
    sp.set_defaults(func=cmd_env_stdio)

    return p


def _apply_scale_defaults(args) -> None:
    if not hasattr(args, "pool_size"):
        return
    paper = getattr(args, "paper_scale", False)
    defaults = {"pool_size": 50 if paper else 10,
                "population": 100 if paper else 20,
                "generations": 1000 if paper else 100}
    for k, v in defaults.items():
        if getattr(args, k) is None:
            setattr(args, k, v)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _apply_scale_defaults(args)
        if getattr(args, "seed", 0) < 0:
            raise ConfigError("seed must be non-negative")
        return args.func(args, argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
