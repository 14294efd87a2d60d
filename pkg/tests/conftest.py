import os

import numpy as np
import pytest

from packbench.cli import main
from packbench.evaluation import PackDataset, load_dataset, save_dataset
from packbench.packing import BoxOccupancy, blbf_location
from packbench.voxels import VoxelGrid

# desk-scale dataset used by the acceptance suite; generations picked so the
# packs are dense enough that policy choices matter but cheap enough to breed
DESK = dict(packs=100, pool_size=10, population=20, generations=12, seed=7)


@pytest.fixture(scope="session", autouse=True)
def jit_warm():
    # compile the scan kernel once so timed tests measure the algorithm
    blbf_location(BoxOccupancy.empty(), VoxelGrid(np.ones((4, 4, 4), dtype=bool)))


@pytest.fixture(scope="session")
def desk_dataset_path(tmp_path_factory, jit_warm):
    out = tmp_path_factory.mktemp("desk")
    old = os.environ.get("PACKBENCH_THREADS")
    os.environ["PACKBENCH_THREADS"] = "2"
    try:
        rc = main([
            "evolve", "--packs", str(DESK["packs"]), "--pool-size", str(DESK["pool_size"]),
            "--population", str(DESK["population"]), "--generations", str(DESK["generations"]),
            "--seed", str(DESK["seed"]), "--out", str(out),
        ])
    finally:
        if old is None:
            os.environ.pop("PACKBENCH_THREADS", None)
        else:
            os.environ["PACKBENCH_THREADS"] = old
    assert rc == 0
    return out / "packs.jsonl"


@pytest.fixture(scope="session")
def desk_dataset(desk_dataset_path):
    return load_dataset(str(desk_dataset_path))


@pytest.fixture(scope="session")
def desk_dataset50_path(desk_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("desk50") / "packs50.jsonl"
    subset = PackDataset(header=desk_dataset.header, records=desk_dataset.records[:50])
    save_dataset(str(out), subset)
    return out


@pytest.fixture(scope="session")
def desk_dataset50(desk_dataset50_path):
    return load_dataset(str(desk_dataset50_path))


@pytest.fixture(scope="session")
def mini_dataset_path(tmp_path_factory, jit_warm):
    out = tmp_path_factory.mktemp("mini")
    rc = main([
        "evolve", "--packs", "5", "--pool-size", "6", "--population", "10",
        "--generations", "6", "--seed", "21", "--out", str(out),
    ])
    assert rc == 0
    return out / "packs.jsonl"


@pytest.fixture(scope="session")
def mini_dataset(mini_dataset_path):
    return load_dataset(str(mini_dataset_path))
