"""Metrics, dataset serialization, and the evaluation harness.

Rewards are carried as exact rationals end to end, so Success@1 is an exact
equality test rather than a float comparison. Datasets are line-oriented
JSON: a header line, then one pack record per line with canonical field
order, which makes save -> load -> save byte-identical. Loading replays
every record and recomputes its density; corrupt records are rejected with
the offending line or pack index.
"""

import json
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .env import MODES, Task, new_task
from .meshes import ShapeSpec
from .packing import (Anchor, InfeasiblePlacement, Pack, Placement, TOTAL_CELLS,
                      replay_pack)
from .policies import (SearchConfig, Policy, Trajectory, backtrack_search, beam_search,
                       greedy_rollout, parse_policy)

FORMAT_NAME = "packbench.packs"
FORMAT_VERSION = 1

SUCCESS_GRID = (
    Fraction(1, 2), Fraction(3, 5), Fraction(7, 10),
    Fraction(4, 5), Fraction(9, 10), Fraction(1),
)


class DatasetError(Exception):
    pass


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        # exact decimal reading, so success_at(rs, 0.7) means exactly 7/10
        return Fraction(str(x))
    return Fraction(x)


def average_reward(rewards: Sequence[Fraction | float]) -> float:
    if not rewards:
        raise ValueError("no rewards to average")
    total = sum((_as_fraction(r) for r in rewards), Fraction(0))
    return float(total / len(rewards))


def success_at(rewards: Sequence[Fraction | float], x: Fraction | float) -> float:
    if not rewards:
        raise ValueError("no rewards to score")
    thr = _as_fraction(x)
    if not 0 <= thr <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    hits = sum(1 for r in rewards if _as_fraction(r) >= thr)
    return 100.0 * hits / len(rewards)


@dataclass(frozen=True)
class EvalReport:
    task_count: int
    average_reward: float
    success: tuple[tuple[Fraction, float], ...]
    per_task: tuple[Fraction, ...]
    config: dict

    def to_json(self) -> dict:
        return {
            "task_count": self.task_count,
            "average_reward": self.average_reward,
            "success": {str(float(k)): v for k, v in self.success},
            "per_task": [str(r) for r in self.per_task],
            "config": self.config,
        }


def make_report(per_task: Sequence[Fraction], config: dict) -> EvalReport:
    return EvalReport(
        task_count=len(per_task),
        average_reward=average_reward(per_task),
        success=tuple((x, success_at(per_task, x)) for x in SUCCESS_GRID),
        per_task=tuple(per_task),
        config=dict(config),
    )


def _solver_for(cfg: SearchConfig) -> Callable[[Task, str, Policy], Trajectory]:
    if cfg.beams > 1 and cfg.backtracks > 0:
        raise ValueError("beam search and backtracking are separate experiments; set one of them")
    if cfg.beams > 1:
        return lambda task, mode, policy: beam_search(task, mode, policy, cfg)
    if cfg.backtracks > 0:
        return lambda task, mode, policy: backtrack_search(task, mode, policy, cfg)
    return lambda task, mode, policy: greedy_rollout(task, mode, policy)


def solve_task(pack: Pack, mode: str, policy_spec: str, search: SearchConfig, seed: int) -> Trajectory:
    task = new_task(pack)
    policy = parse_policy(policy_spec, mode, seed)
    return _solver_for(search)(task, mode, policy)


def evaluate(dataset: "PackDataset", mode: str, policy_spec: str,
             search: SearchConfig | None = None, seed: int = 0,
             threads: int = 1) -> tuple[EvalReport, list[Trajectory]]:
    """Run the configured solver over every record; deterministic given seed
    (per-task policy seeds derive from (seed, task index))."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    search = search or SearchConfig()
    parse_policy(policy_spec, mode)  # validate before spending any work
    jobs = list(enumerate(dataset.records))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(solve_task, pack, mode, policy_spec, search, seed + i)
                       for i, pack in jobs]
            trajectories = [f.result() for f in futures]
    else:
        trajectories = [solve_task(pack, mode, policy_spec, search, seed + i) for i, pack in jobs]
    rewards = [t.cumulative_reward for t in trajectories]
    config = {
        "mode": mode,
        "policy": policy_spec,
        "beams": search.beams,
        "backtracks": search.backtracks,
        "seed": seed,
        "dataset_digest": dataset.header.get("config", {}),
    }
    return make_report(rewards, config), trajectories


# ---------------------------------------------------------------------------
# dataset serialization

@dataclass(frozen=True)
class PackDataset:
    header: dict
    records: tuple[Pack, ...]


def _pack_to_json(p: Pack) -> dict:
    return {
        "version": FORMAT_VERSION,
        "seed": p.seed,
        "pool": [s.to_json() for s in p.pool],
        "placements": [
            {
                "shape_idx": pl.shape_idx,
                "scale": str(pl.scale),
                "rotation": pl.rotation,
                "anchor": [pl.anchor.gx, pl.anchor.gy, pl.anchor.gz],
            }
            for pl in p.placements
        ],
        "density": str(p.density),
        "generations_run": p.generations_run,
    }


def _pack_from_json(obj: dict) -> Pack:
    if obj.get("version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported record version {obj.get('version')!r}")
    pool = tuple(ShapeSpec.from_json(s) for s in obj["pool"])
    placements = tuple(
        Placement(
            shape_idx=int(pl["shape_idx"]),
            scale=Fraction(pl["scale"]),
            rotation=int(pl["rotation"]),
            anchor=Anchor(*(int(v) for v in pl["anchor"])),
        )
        for pl in obj["placements"]
    )
    return Pack(
        pool=pool,
        placements=placements,
        density=Fraction(obj["density"]),
        seed=int(obj["seed"]),
        generations_run=int(obj["generations_run"]),
    )


def save_dataset(path: str, dataset: PackDataset) -> None:
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION}
    header.update({k: v for k, v in dataset.header.items() if k not in ("format", "version")})
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for p in dataset.records:
            fh.write(json.dumps(_pack_to_json(p), separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def load_dataset(path: str, validate: bool = True) -> PackDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetError(f"line 1: malformed header ({e})") from None
    if header.get("format") != FORMAT_NAME:
        raise DatasetError(f"not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported format version {header.get('version')!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(_pack_from_json(json.loads(line)))
        except DatasetError:
            raise
        except (KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
            raise DatasetError(f"line {lineno}: malformed record ({e})") from None
    ds = PackDataset(header=header, records=tuple(records))
    if validate:
        validate_dataset(ds)
    return ds


def validate_dataset(ds: PackDataset) -> None:
    """Replay every pack and recompute its density; reject mismatches."""
    for idx, pack in enumerate(ds.records):
        try:
            box = replay_pack(pack)
        except InfeasiblePlacement as e:
            raise DatasetError(f"pack {idx}: replay failed ({e})") from None
        actual = Fraction(box.occupied_count, TOTAL_CELLS)
        if actual != pack.density:
            raise DatasetError(f"pack {idx}: stored density {pack.density} != recomputed {actual}")


# ---------------------------------------------------------------------------
# report rendering

_COLUMNS = ("Shape", "Rotation", "Location", "Mode", "Avg Reward",
            "S@0.5", "S@0.6", "S@0.7", "S@0.8", "S@0.9", "S@1.0")


def format_report_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    """Fixed-width table, one row per (policy label, report)."""
    table = [_COLUMNS]
    for label, rep in rows:
        parts = label.split(":")
        shape = parts[0]
        rotation = parts[1] if len(parts) == 3 else "-"
        location = parts[-1]
        success = dict(rep.success)
        table.append((
            shape, rotation, location, rep.config.get("mode", "?"),
            f"{rep.average_reward:.3f}",
            *(f"{success[x]:.2f}" for x in SUCCESS_GRID),
        ))
    widths = [max(len(r[c]) for r in table) for c in range(len(_COLUMNS))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
