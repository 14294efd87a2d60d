"""Solid voxelization and voxel-grid transforms.

The packing box is the unit cube sampled at 1/100 resolution: voxel
(ix, iy, iz) covers the half-open cube [i/100, (i+1)/100) per axis. Shapes
are stored as tight boolean grids (every boundary plane of the grid holds at
least one occupied cell) and zero-padded to the full 100^3 volume only when
observations are assembled.

Solid voxelization marks a voxel occupied iff its center lies inside the
closed mesh, decided by parity of ray crossings along +z. Ties are handled
deterministically: crossings from distinct triangles at the same z along one
ray (shared edges, coplanar caps) are merged and counted once. Meshes whose
rays cannot be classified consistently raise NonWatertight; callers may fall
back to surface voxelization plus exterior flood fill.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .meshes import TriMesh
from .rotations import rotation_group

RESOLUTION = 100  # voxels per box edge
BOX_CELLS = RESOLUTION ** 3
POOL_CELLS = (4, 5, 10, 20, 25, 50)

SCALE_SET = (Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(2), Fraction(4))

_MERGE_EPS = 1e-9  # crossings closer than this along one ray collapse to one
_AMBIGUOUS_LIMIT = 1e-3  # tolerated fraction of odd-parity rays


class Oversized(Exception):
    """Shape does not fit the 100-voxel box at the requested scale."""


class NonWatertight(Exception):
    """Ray parity was ambiguous for too many rays."""


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    occupancy: np.ndarray  # bool array, shape == dims, tight

    def __post_init__(self):
        occ = self.occupancy
        if occ.ndim != 3 or occ.dtype != np.bool_:
            raise ValueError("occupancy must be a 3d boolean array")
        if not occ.any():
            raise ValueError("grid must contain at least one occupied cell")
        occ.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def tobytes(self) -> bytes:
        return self.occupancy.shape.__repr__().encode() + np.packbits(self.occupancy).tobytes()


def tight_grid(occ: np.ndarray) -> VoxelGrid:
    """Crop an occupancy array to its occupied bounding box."""
    if not occ.any():
        raise ValueError("cannot tighten an empty grid")
    ix = np.any(occ, axis=(1, 2)).nonzero()[0]
    iy = np.any(occ, axis=(0, 2)).nonzero()[0]
    iz = np.any(occ, axis=(0, 1)).nonzero()[0]
    sub = occ[ix[0]:ix[-1] + 1, iy[0]:iy[-1] + 1, iz[0]:iz[-1] + 1]
    return VoxelGrid(np.ascontiguousarray(sub))


def bbox_dims(g: VoxelGrid) -> tuple[int, int, int]:
    return g.dims


def scale_linear(s: Fraction | int) -> float:
    """Linear scale factor for a volume ratio from the allowed gene set."""
    s = Fraction(s)
    if s not in SCALE_SET:
        raise ValueError(f"scale {s} is not in the allowed set {SCALE_SET}")
    return float(s) ** (1.0 / 3.0)


def _grid_extent(e: float) -> int:
    # number of voxel layers whose centers can fall inside extent e
    return max(1, int(math.floor(e * RESOLUTION + 0.5)))


def _column_crossings(tris: np.ndarray, nx: int, ny: int):
    """All ray/triangle crossing depths, grouped by (ix, iy) ray column.

    Rays run along +z through voxel centers. Returns (cols, zs) sorted by
    column id then z, where cols = ix * ny + iy.
    """
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    col_chunks: list[np.ndarray] = []
    z_chunks: list[np.ndarray] = []
    inv = 1.0 / RESOLUTION
    for t in range(len(tris)):
        n_z = area2[t]
        if n_z == 0.0:
            continue  # projects to a degenerate triangle; ray is tangent
        A, B, C = a[t], b[t], c[t]
        min_x = min(A[0], B[0], C[0])
        max_x = max(A[0], B[0], C[0])
        min_y = min(A[1], B[1], C[1])
        max_y = max(A[1], B[1], C[1])
        ix0 = max(0, math.ceil(min_x * RESOLUTION - 0.5))
        ix1 = min(nx - 1, math.floor(max_x * RESOLUTION - 0.5))
        iy0 = max(0, math.ceil(min_y * RESOLUTION - 0.5))
        iy1 = min(ny - 1, math.floor(max_y * RESOLUTION - 0.5))
        if ix0 > ix1 or iy0 > iy1:
            continue
        xs = (np.arange(ix0, ix1 + 1) + 0.5) * inv
        ys = (np.arange(iy0, iy1 + 1) + 0.5) * inv
        X = xs[:, None]
        Y = ys[None, :]
        sgn = 1.0 if n_z > 0 else -1.0
        w0 = ((C[0] - B[0]) * (Y - B[1]) - (C[1] - B[1]) * (X - B[0])) * sgn
        w1 = ((A[0] - C[0]) * (Y - C[1]) - (A[1] - C[1]) * (X - C[0])) * sgn
        w2 = ((B[0] - A[0]) * (Y - A[1]) - (B[1] - A[1]) * (X - A[0])) * sgn
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        e1 = B - A
        e2 = C - A
        n_x = e1[1] * e2[2] - e1[2] * e2[1]
        n_y = e1[2] * e2[0] - e1[0] * e2[2]
        z = A[2] - (n_x * (X - A[0]) + n_y * (Y - A[1])) / n_z
        ii, jj = np.nonzero(inside)
        col_chunks.append((ii + ix0) * ny + (jj + iy0))
        z_chunks.append(z[ii, jj])
    if not col_chunks:
        return np.empty(0, dtype=np.int64), np.empty(0)
    cols = np.concatenate(col_chunks)
    zs = np.concatenate(z_chunks)
    order = np.lexsort((zs, cols))
    return cols[order], zs[order]


def _parity_fill(tris: np.ndarray, nx: int, ny: int, nz: int) -> tuple[np.ndarray, float]:
    occ = np.zeros((nx, ny, nz), dtype=np.bool_)
    cols, zs = _column_crossings(tris, nx, ny)
    if len(cols) == 0:
        return occ, 0.0
    centers = (np.arange(nz) + 0.5) / RESOLUTION
    starts = np.flatnonzero(np.r_[True, cols[1:] != cols[:-1]])
    ends = np.r_[starts[1:], len(cols)]
    ambiguous = 0
    for s, e in zip(starts, ends):
        zvals = zs[s:e]
        if e - s > 1:
            keep = np.r_[True, np.diff(zvals) > _MERGE_EPS]
            zvals = zvals[keep]
        k = len(zvals)
        if k % 2 == 1:
            ambiguous += 1
        col = int(cols[s])
        ahead = k - np.searchsorted(zvals, centers, side="right")
        occ[col // ny, col % ny] = (ahead % 2) == 1
    return occ, ambiguous / len(starts)


def _scaled_vertices(mesh: TriMesh, s: Fraction | int) -> np.ndarray:
    f = scale_linear(s)
    lo, _ = mesh.bbox
    return (mesh.vertices - lo) * f


def voxelize(mesh: TriMesh, s: Fraction | int = Fraction(1)) -> VoxelGrid:
    """Solid-voxelize a mesh scaled by volume ratio s, anchored at the origin.

    Raises Oversized when the tight grid would exceed 100 voxels on any axis,
    NonWatertight when ray parity is inconsistent for too many rays.
    """
    verts = _scaled_vertices(mesh, s)
    extents = verts.max(axis=0)
    dims = tuple(_grid_extent(float(e)) for e in extents)
    # a tight grid can only shrink from the bbox grid; beyond 2 box widths
    # nothing placeable remains
    if max(dims) > 2 * RESOLUTION:
        raise Oversized(f"shape spans {dims} voxels")
    occ, ambiguous = _parity_fill(verts[mesh.triangles], *dims)
    if ambiguous > _AMBIGUOUS_LIMIT:
        raise NonWatertight(f"{ambiguous:.2%} of rays have odd crossing parity")
    if not occ.any():
        # thinner than one voxel everywhere: claim the cell under the center
        mid = tuple(min(d - 1, int(e * RESOLUTION / 2)) for d, e in zip(dims, extents))
        occ[mid] = True
    g = tight_grid(occ)
    if max(g.dims) > RESOLUTION:
        raise Oversized(f"tight dims {g.dims} exceed the box")
    return g


def voxelize_filled(mesh: TriMesh, s: Fraction | int = Fraction(1)) -> VoxelGrid:
    """Fallback for meshes that fail parity: surface shell + exterior flood fill.

    The shell is marked conservatively (every voxel whose center lies within
    half a cell diagonal of a triangle plane, inside the triangle bbox), so
    the result can overcount by about one voxel of skin.
    """
    verts = _scaled_vertices(mesh, s)
    extents = verts.max(axis=0)
    dims = tuple(_grid_extent(float(e)) for e in extents)
    if max(dims) > 2 * RESOLUTION:
        raise Oversized(f"shape spans {dims} voxels")
    shell = np.zeros(dims, dtype=np.bool_)
    inv = 1.0 / RESOLUTION
    half_diag = math.sqrt(3.0) / 2.0 * inv
    tris = verts[mesh.triangles]
    for tri in tris:
        lo = tri.min(axis=0)
        hi = tri.max(axis=0)
        # every voxel whose cell overlaps the triangle bbox, clamped so faces
        # sitting exactly on the grid boundary still mark the adjacent layer
        i0 = [min(dims[k] - 1, max(0, math.floor(lo[k] * RESOLUTION))) for k in range(3)]
        i1 = [min(dims[k] - 1, max(0, math.floor(hi[k] * RESOLUTION))) for k in range(3)]
        if any(i0[k] > i1[k] for k in range(3)):
            continue
        axes = [(np.arange(i0[k], i1[k] + 1) + 0.5) * inv for k in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        norm = np.linalg.norm(n)
        if norm == 0.0:
            continue
        n = n / norm
        dist = np.abs((X - tri[0][0]) * n[0] + (Y - tri[0][1]) * n[1] + (Z - tri[0][2]) * n[2])
        sel = dist <= half_diag
        shell[i0[0]:i1[0] + 1, i0[1]:i1[1] + 1, i0[2]:i1[2] + 1] |= sel
    free = np.pad(~shell, 1, constant_values=True)
    seed = np.zeros_like(free)
    seed[0, :, :] = seed[-1, :, :] = True
    seed[:, 0, :] = seed[:, -1, :] = True
    seed[:, :, 0] = seed[:, :, -1] = True
    seed &= free
    exterior = ndimage.binary_propagation(seed, mask=free)
    solid = ~exterior[1:-1, 1:-1, 1:-1]
    g = tight_grid(solid)
    if max(g.dims) > RESOLUTION:
        raise Oversized(f"tight dims {g.dims} exceed the box")
    return g


def rotate_voxels(g: VoxelGrid, rotation: int) -> VoxelGrid:
    """Rotate a tight grid about its center; an exact bijection on cells."""
    r = rotation_group()[rotation]
    occ = np.transpose(g.occupancy, axes=r.source)
    slices = tuple(slice(None, None, -1) if s < 0 else slice(None) for s in r.sign)
    return VoxelGrid(np.ascontiguousarray(occ[slices]))


def padded_full(g: VoxelGrid) -> np.ndarray:
    """Zero-pad a tight grid into the centered 100^3 observation volume."""
    out = np.zeros((RESOLUTION,) * 3, dtype=np.bool_)
    off = [(RESOLUTION - d) // 2 for d in g.dims]
    out[off[0]:off[0] + g.dims[0], off[1]:off[1] + g.dims[1], off[2]:off[2] + g.dims[2]] = g.occupancy
    return out


def pooled_occupancy(cells: np.ndarray | VoxelGrid, cell: int) -> np.ndarray:
    """Mean occupancy per cell^3 block of the padded 100^3 volume."""
    if cell not in POOL_CELLS:
        raise ValueError(f"cell size must be one of {POOL_CELLS}")
    if isinstance(cells, VoxelGrid):
        cells = padded_full(cells)
    if cells.shape != (RESOLUTION,) * 3:
        raise ValueError("expected a 100^3 occupancy volume")
    k = RESOLUTION // cell
    blocks = cells.reshape(k, cell, k, cell, k, cell)
    return blocks.mean(axis=(1, 3, 5), dtype=np.float64)
