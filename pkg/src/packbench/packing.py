"""Box occupancy, placement feasibility on the 25^3 anchor grid, and the
greedy pack creator.

Anchors address a 25 x 25 x 25 grid inside the unit box; anchor (gx, gy, gz)
pins the min corner of a shape's rotated bounding box to voxel offset
(4gx, 4gy, 4gz). Feasibility is a pure voxel-overlap test. The
bottom-left-back rule scans anchors in ascending (gy, gx, gz) order, so
"bottom" wins over "left" over "back".

BoxOccupancy is value-semantic: `place` returns a new occupancy and never
mutates its input, which is what makes concurrent feasibility queries and
search-tree cloning safe. Internally each occupancy carries per-block
occupied-cell counts (4^3 voxel blocks, aligned with the anchor stride), used
to prune the anchor scan: an empty window is feasible outright, and a window
without enough free cells for the shape is infeasible by counting. Only the
remaining anchors need the exact overlap test, and an oracle-checked
invariant is that the pruning never changes results.
"""

import weakref
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .meshes import ShapeSpec, gen_shape
from .voxels import RESOLUTION, SCALE_SET, Oversized, VoxelGrid, rotate_voxels, voxelize

GRID = 25       # anchors per axis
STRIDE = 4      # voxels per anchor step
TOTAL_CELLS = RESOLUTION ** 3


class InfeasiblePlacement(Exception):
    pass


class Anchor(NamedTuple):
    gx: int
    gy: int
    gz: int


def anchor_key(a: Anchor) -> tuple[int, int, int]:
    """Bottom-left-back preference order."""
    return (a.gy, a.gx, a.gz)


@dataclass(frozen=True)
class Placement:
    shape_idx: int
    scale: Fraction
    rotation: int
    anchor: Anchor


@dataclass(frozen=True)
class Chromosome:
    """Genome decoded by `create_pack`: a placement order permutation plus a
    scale and rotation gene per position."""

    order: tuple[int, ...]
    scales: tuple[Fraction, ...]
    rotations: tuple[int, ...]

    def __post_init__(self):
        n = len(self.order)
        if sorted(self.order) != list(range(n)):
            raise ValueError("order is not a permutation")
        if len(self.scales) != n or len(self.rotations) != n:
            raise ValueError("gene lists must match the order length")
        for s in self.scales:
            if s not in SCALE_SET:
                raise ValueError(f"scale {s} outside the allowed set")
        for r in self.rotations:
            if not 0 <= r < 24:
                raise ValueError(f"rotation {r} outside 0..23")


@dataclass(frozen=True)
class Pack:
    """A solvable arrangement: ordered placements of pool shapes that fit the
    unit box without overlap."""

    pool: tuple[ShapeSpec, ...]
    placements: tuple[Placement, ...]
    density: Fraction
    seed: int = 0
    generations_run: int = 0


class _PlacedItem(NamedTuple):
    grid: VoxelGrid
    anchor: Anchor
    info: Optional[Placement]


def _block_bins(g: VoxelGrid) -> np.ndarray:
    """Occupied-cell count per 4^3 block of the grid, block-aligned at its min
    corner (valid because anchors sit on block boundaries)."""
    nb = [(d + STRIDE - 1) // STRIDE for d in g.dims]
    padded = np.zeros((nb[0] * STRIDE, nb[1] * STRIDE, nb[2] * STRIDE), dtype=np.int32)
    padded[: g.dims[0], : g.dims[1], : g.dims[2]] = g.occupancy
    return padded.reshape(nb[0], STRIDE, nb[1], STRIDE, nb[2], STRIDE).sum(axis=(1, 3, 5), dtype=np.int32)


_BIN_CACHE: "weakref.WeakKeyDictionary[VoxelGrid, np.ndarray]" = weakref.WeakKeyDictionary()


def _bins_for(g: VoxelGrid) -> np.ndarray:
    out = _BIN_CACHE.get(g)
    if out is None:
        out = _block_bins(g)
        _BIN_CACHE[g] = out
    return out


def _pack_zwords(occ: np.ndarray) -> np.ndarray:
    """Pack a boolean grid along z into two little-endian uint64 words per
    (x, y) column; bit z of the column lives in word z // 64."""
    dx, dy, dz = occ.shape
    words = np.zeros((dx, dy, 2), dtype=np.uint64)
    for w in range(2):
        zs = np.arange(w * 64, min(dz, (w + 1) * 64))
        if len(zs) == 0:
            break
        shifted = occ[:, :, zs].astype(np.uint64) << (zs - w * 64).astype(np.uint64)
        words[:, :, w] = np.bitwise_or.reduce(shifted, axis=2)
    return words


_ZWORD_CACHE: "weakref.WeakKeyDictionary[VoxelGrid, np.ndarray]" = weakref.WeakKeyDictionary()


def _zwords_for(g: VoxelGrid) -> np.ndarray:
    out = _ZWORD_CACHE.get(g)
    if out is None:
        out = _pack_zwords(g.occupancy)
        out.setflags(write=False)
        _ZWORD_CACHE[g] = out
    return out


try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _scan_kernel(bwords, w_sums, swords, count, capacity, first_only, out):  # pragma: no cover
        n_out = 0
        gx_n, gy_n, gz_n = w_sums.shape
        dx, dy = swords.shape[0], swords.shape[1]
        for gy in range(gy_n):
            for gx in range(gx_n):
                for gz in range(gz_n):
                    w = w_sums[gx, gy, gz]
                    if w != 0:
                        if w > capacity - count:
                            continue
                        k = 4 * gz
                        x0 = 4 * gx
                        y0 = 4 * gy
                        hit = False
                        for x in range(dx):
                            for y in range(dy):
                                s0 = swords[x, y, 0]
                                s1 = swords[x, y, 1]
                                # shift by k in the 128-bit column; k can reach
                                # 96, and shifts >= 64 wrap on x86, so split
                                if k == 0:
                                    lo = s0
                                    hi = s1
                                elif k < 64:
                                    lo = s0 << k
                                    hi = (s1 << k) | (s0 >> (64 - k))
                                elif k == 64:
                                    lo = np.uint64(0)
                                    hi = s0
                                else:
                                    lo = np.uint64(0)
                                    hi = s0 << (k - 64)
                                if (bwords[x0 + x, y0 + y, 0] & lo) != 0 or \
                                   (bwords[x0 + x, y0 + y, 1] & hi) != 0:
                                    hit = True
                                    break
                            if hit:
                                break
                        if hit:
                            continue
                    out[n_out, 0] = gx
                    out[n_out, 1] = gy
                    out[n_out, 2] = gz
                    n_out += 1
                    if first_only:
                        return n_out
        return n_out

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


class BoxOccupancy:
    """Dense 100^3 occupancy of the box plus the ordered list of placements."""

    __slots__ = ("cells", "placed", "_block_counts", "_integral", "_zwords")

    def __init__(self, cells: np.ndarray, placed: tuple[_PlacedItem, ...], block_counts: np.ndarray,
                 zwords: np.ndarray | None = None):
        cells.setflags(write=False)
        block_counts.setflags(write=False)
        self.cells = cells
        self.placed = placed
        self._block_counts = block_counts
        self._integral: np.ndarray | None = None
        if zwords is None:
            zwords = _pack_zwords(cells)
        zwords.setflags(write=False)
        self._zwords = zwords

    @classmethod
    def empty(cls) -> "BoxOccupancy":
        return cls(
            np.zeros((RESOLUTION,) * 3, dtype=np.bool_),
            (),
            np.zeros((GRID,) * 3, dtype=np.int32),
            np.zeros((RESOLUTION, RESOLUTION, 2), dtype=np.uint64),
        )

    @property
    def occupied_count(self) -> int:
        return int(self._block_counts.sum())

    def _block_integral(self) -> np.ndarray:
        if self._integral is None:
            s = np.zeros((GRID + 1,) * 3, dtype=np.int64)
            s[1:, 1:, 1:] = self._block_counts
            np.cumsum(s, axis=0, out=s)
            np.cumsum(s, axis=1, out=s)
            np.cumsum(s, axis=2, out=s)
            self._integral = s
        return self._integral

    def _window_sums(self, nb: tuple[int, int, int], gmax: tuple[int, int, int]) -> np.ndarray:
        """Occupied-cell count in the covering-block window of every in-bounds
        anchor; shape (gmax_x+1, gmax_y+1, gmax_z+1)."""
        s = self._block_integral()
        hi = [slice(nb[k], nb[k] + gmax[k] + 1) for k in range(3)]
        lo = [slice(0, gmax[k] + 1) for k in range(3)]
        return (
            s[hi[0], hi[1], hi[2]]
            - s[lo[0], hi[1], hi[2]] - s[hi[0], lo[1], hi[2]] - s[hi[0], hi[1], lo[2]]
            + s[lo[0], lo[1], hi[2]] + s[lo[0], hi[1], lo[2]] + s[hi[0], lo[1], lo[2]]
            - s[lo[0], lo[1], lo[2]]
        )


def _overlap_free(cells: np.ndarray, g: VoxelGrid, a: Anchor) -> bool:
    x0, y0, z0 = a.gx * STRIDE, a.gy * STRIDE, a.gz * STRIDE
    dx, dy, dz = g.dims
    sub = cells[x0:x0 + dx, y0:y0 + dy, z0:z0 + dz]
    return not np.logical_and(sub, g.occupancy).any()


def feasible(box: BoxOccupancy, g: VoxelGrid, a: Anchor) -> bool:
    """True iff the shape fits inside the box at the anchor without overlap."""
    for comp, d in zip(a, g.dims):
        if comp < 0 or comp * STRIDE + d > RESOLUTION:
            return False
    return _overlap_free(box.cells, g, a)


def _scan(box: BoxOccupancy, g: VoxelGrid, first_only: bool) -> Iterator[Anchor]:
    dims = g.dims
    if max(dims) > RESOLUTION:
        return
    gmax = tuple((RESOLUTION - d) // STRIDE for d in dims)
    nb = tuple((d + STRIDE - 1) // STRIDE for d in dims)
    w = box._window_sums(nb, gmax)
    capacity = (STRIDE ** 3) * nb[0] * nb[1] * nb[2]
    if _HAVE_NUMBA:
        w64 = np.ascontiguousarray(w, dtype=np.int64)
        out = np.empty((w64.size, 3), dtype=np.int32)
        n = _scan_kernel(box._zwords, w64, _zwords_for(g), np.int64(g.count),
                         np.int64(capacity), first_only, out)
        for i in range(n):
            yield Anchor(int(out[i, 0]), int(out[i, 1]), int(out[i, 2]))
        return
    free_enough = w <= capacity - g.count
    empty = w == 0
    candidates = free_enough  # empty windows are a subset
    rows_any = candidates.any(axis=2)
    cells = box.cells
    for gy in range(gmax[1] + 1):
        row_mask = rows_any[:, gy]
        if not row_mask.any():
            continue
        for gx in np.flatnonzero(row_mask):
            empty_row = empty[gx, gy]
            cand_row = candidates[gx, gy]
            for gz in np.flatnonzero(cand_row):
                a = Anchor(int(gx), int(gy), int(gz))
                if empty_row[gz] or _overlap_free(cells, g, a):
                    yield a
                    if first_only:
                        return


def candidate_locations(box: BoxOccupancy, g: VoxelGrid) -> list[Anchor]:
    """All feasible anchors, ascending in (gy, gx, gz)."""
    return list(_scan(box, g, first_only=False))


def blbf_location(box: BoxOccupancy, g: VoxelGrid) -> Anchor | None:
    """Bottom-most, then leftmost, then backmost feasible anchor."""
    for a in _scan(box, g, first_only=True):
        return a
    return None


def place(box: BoxOccupancy, g: VoxelGrid, a: Anchor, info: Placement | None = None) -> BoxOccupancy:
    """New occupancy with the shape OR-ed in at the anchor; input unchanged."""
    if not feasible(box, g, a):
        raise InfeasiblePlacement(f"shape of dims {g.dims} cannot go at {a}")
    x0, y0, z0 = a.gx * STRIDE, a.gy * STRIDE, a.gz * STRIDE
    dx, dy, dz = g.dims
    cells = box.cells.copy()
    sub = cells[x0:x0 + dx, y0:y0 + dy, z0:z0 + dz]
    np.logical_or(sub, g.occupancy, out=sub)
    counts = box._block_counts.copy()
    bins = _bins_for(g)
    counts[a.gx:a.gx + bins.shape[0], a.gy:a.gy + bins.shape[1], a.gz:a.gz + bins.shape[2]] += bins
    zwords = box._zwords.copy()
    sw = _zwords_for(g)
    if z0 == 0:
        lo, hi = sw[:, :, 0], sw[:, :, 1]
    elif z0 < 64:
        lo = sw[:, :, 0] << np.uint64(z0)
        hi = (sw[:, :, 1] << np.uint64(z0)) | (sw[:, :, 0] >> np.uint64(64 - z0))
    elif z0 == 64:
        lo = np.zeros_like(sw[:, :, 0])
        hi = sw[:, :, 0]
    else:
        lo = np.zeros_like(sw[:, :, 0])
        hi = sw[:, :, 0] << np.uint64(z0 - 64)
    zwords[x0:x0 + dx, y0:y0 + dy, 0] |= lo
    zwords[x0:x0 + dx, y0:y0 + dy, 1] |= hi
    return BoxOccupancy(cells, box.placed + (_PlacedItem(g, a, info),), counts, zwords)


class ShapeCache:
    """Voxelizations and rotations of one shape pool, shared across many
    chromosome evaluations. Oversized combinations memoize to None. Rotated
    grids are deduplicated by content so rotation-symmetric shapes cost one
    entry."""

    def __init__(self, pool: Sequence[ShapeSpec]):
        self.pool = tuple(pool)
        self._meshes: dict[int, object] = {}
        self._grids: dict[tuple[int, Fraction], VoxelGrid | None] = {}
        self._rotated: dict[tuple[int, Fraction, int], VoxelGrid | None] = {}
        self._unique: dict[tuple[int, Fraction], list[tuple[int, VoxelGrid]]] = {}

    def grid(self, idx: int, scale: Fraction) -> VoxelGrid | None:
        key = (idx, scale)
        if key not in self._grids:
            if idx not in self._meshes:
                self._meshes[idx] = gen_shape(self.pool[idx])
            try:
                self._grids[key] = voxelize(self._meshes[idx], scale)
            except Oversized:
                self._grids[key] = None
        return self._grids[key]

    def rotated(self, idx: int, scale: Fraction, rotation: int) -> VoxelGrid | None:
        key = (idx, scale, rotation)
        if key not in self._rotated:
            base = self.grid(idx, scale)
            if base is None:
                for r in range(24):
                    self._rotated[(idx, scale, r)] = None
            else:
                seen: dict[bytes, VoxelGrid] = {}
                for r in range(24):
                    g = rotate_voxels(base, r)
                    g = seen.setdefault(g.tobytes(), g)
                    self._rotated[(idx, scale, r)] = g
        return self._rotated[key]

    def unique_rotations(self, idx: int, scale: Fraction) -> list[tuple[int, VoxelGrid]]:
        """(lowest rotation index, grid) per distinct rotated grid."""
        key = (idx, scale)
        if key not in self._unique:
            out: list[tuple[int, VoxelGrid]] = []
            seen: set[int] = set()
            for r in range(24):
                g = self.rotated(idx, scale, r)
                if g is None:
                    break
                if id(g.occupancy) not in seen:
                    seen.add(id(g.occupancy))
                    out.append((r, g))
            self._unique[key] = out
        return self._unique[key]


def create_pack(pool: Sequence[ShapeSpec], c: Chromosome, cache: ShapeCache | None = None,
                seed: int = 0, generations_run: int = 0) -> Pack:
    """Decode a chromosome greedily: walk shapes in chromosome order, apply the
    positional scale and rotation genes, place each at its bottom-left-back
    anchor, and leave shapes with no feasible anchor outside the box."""
    if len(c.order) != len(pool):
        raise ValueError("chromosome does not match pool size")
    if cache is None:
        cache = ShapeCache(pool)
    box = BoxOccupancy.empty()
    placements: list[Placement] = []
    for pos in range(len(pool)):
        shape_idx = c.order[pos]
        g = cache.rotated(shape_idx, c.scales[pos], c.rotations[pos])
        if g is None:
            continue
        a = blbf_location(box, g)
        if a is None:
            continue
        info = Placement(shape_idx, c.scales[pos], c.rotations[pos], a)
        box = place(box, g, a, info)
        placements.append(info)
    return Pack(
        pool=tuple(pool),
        placements=tuple(placements),
        density=Fraction(box.occupied_count, TOTAL_CELLS),
        seed=seed,
        generations_run=generations_run,
    )


def replay_pack(pack: Pack, cache: ShapeCache | None = None) -> BoxOccupancy:
    """Re-place a pack's placements in order; raises InfeasiblePlacement if the
    record is unsound."""
    if cache is None:
        cache = ShapeCache(pack.pool)
    box = BoxOccupancy.empty()
    for p in pack.placements:
        g = cache.rotated(p.shape_idx, p.scale, p.rotation)
        if g is None:
            raise InfeasiblePlacement(f"shape {p.shape_idx} oversized at scale {p.scale}")
        box = place(box, g, p.anchor, p)
    return box


def density(pack: Pack, cache: ShapeCache | None = None) -> Fraction:
    """Occupied fraction of the box, recomputed from the placements."""
    if not pack.placements:
        return Fraction(0)
    box = replay_pack(pack, cache)
    return Fraction(box.occupied_count, TOTAL_CELLS)
