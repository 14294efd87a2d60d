"""packbench: breed provably solvable 3D packing tasks and solve them.

The package has three layers. Geometry (meshes, voxel grids, the 24-element
cube rotation group) feeds the packing core (anchor-grid feasibility, the
bottom-left-back rule, the greedy pack creator). An evolutionary loop breeds
dense packs from shape pools; deconstructing a pack yields an episodic
shape -> rotation -> location environment with heuristic policies, beam
search and backtracking solvers, and an evaluation harness.
"""

__version__ = "0.1.0"

from .meshes import ShapeSpec, TriMesh, gen_shape, make_spec, parse_wavefront
from .rotations import Rotation, rotation_group
from .voxels import (NonWatertight, Oversized, SCALE_SET, VoxelGrid, bbox_dims,
                     pooled_occupancy, rotate_voxels, scale_linear, voxelize, voxelize_filled)
from .packing import (Anchor, BoxOccupancy, Chromosome, InfeasiblePlacement, Pack,
                      Placement, ShapeCache, blbf_location, candidate_locations,
                      create_pack, density, feasible, place)
from .evolution import (EvolutionConfig, EvolutionTrace, PoolSpec, evolve, fitness,
                        mutate, osx_crossover, random_chromosome, sample_pool,
                        single_point_crossover)
from .env import (EmptyPack, EpisodeFinished, EpisodeState, InvalidAction, Observation,
                  Task, action_count, clone, ground_truth_actions, new_task, observe,
                  reset, step)
from .policies import (Policy, SearchConfig, Trajectory, backtrack_search, beam_search,
                       greedy_rollout, parse_policy, random_policy)
from .evaluation import (DatasetError, EvalReport, PackDataset, average_reward,
                         evaluate, load_dataset, save_dataset, success_at)
