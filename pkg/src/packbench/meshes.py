"""Triangle meshes: procedural shape generation and Wavefront-style ingestion.

Shapes stand in for a catalog of real-world models. Every generator is
deterministic: the same descriptor produces bit-identical vertex and triangle
arrays. All meshes are watertight so that parity voxelization is well defined.

Coordinate frame: x = width, y = height, z = depth. Extents are in box units
(the packing box is the unit cube).
"""

import math
from dataclasses import dataclass

import numpy as np

CYLINDER_SIDES = 32
SPHERE_STACKS = 16
SPHERE_SLICES = 32

PROCEDURAL_KINDS = ("cuboid", "l_prism", "t_prism", "cylinder", "sphere", "hollow_box")


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64, indices into vertices

    def __post_init__(self):
        v = self.vertices
        t = self.triangles
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be an (n, 3) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) < 1:
            raise ValueError("need at least one triangle")
        if t.min() < 0 or t.max() >= len(v):
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class ShapeSpec:
    """Serializable shape descriptor: procedural kind + parameters, or a mesh file."""

    id: str
    kind: str
    params: tuple[tuple[str, float], ...] = ()
    seed: int = 0
    path: str | None = None

    def param(self, name: str) -> float:
        for k, v in self.params:
            if k == name:
                return v
        raise KeyError(f"shape {self.id!r} has no parameter {name!r}")

    def to_json(self) -> dict:
        out = {"id": self.id, "kind": self.kind, "params": dict(self.params), "seed": self.seed}
        if self.path is not None:
            out["path"] = self.path
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ShapeSpec":
        return cls(
            id=str(obj["id"]),
            kind=str(obj["kind"]),
            params=tuple(sorted((str(k), float(v)) for k, v in obj.get("params", {}).items())),
            seed=int(obj.get("seed", 0)),
            path=obj.get("path"),
        )


def make_spec(id: str, kind: str, seed: int = 0, path: str | None = None, **params: float) -> ShapeSpec:
    return ShapeSpec(
        id=id,
        kind=kind,
        params=tuple(sorted((k, float(v)) for k, v in params.items())),
        seed=seed,
        path=path,
    )


def _mesh(verts, tris) -> TriMesh:
    return TriMesh(
        vertices=np.ascontiguousarray(np.asarray(verts, dtype=np.float64)),
        triangles=np.ascontiguousarray(np.asarray(tris, dtype=np.int64)),
    )


def _require_positive(spec: ShapeSpec, *names: str) -> list[float]:
    vals = []
    for n in names:
        v = spec.param(n)
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"shape {spec.id!r}: parameter {n!r} must be positive, got {v}")
        vals.append(v)
    return vals


# ---------------------------------------------------------------------------
# polygon extrusion (used for prisms and cylinders)

def _area2(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _point_in_tri(p, a, b, c) -> bool:
    # inclusive: points on the boundary count as inside (conservative ear test)
    d0 = _area2(a, b, p)
    d1 = _area2(b, c, p)
    d2 = _area2(c, a, p)
    eps = 1e-12
    return d0 >= -eps and d1 >= -eps and d2 >= -eps


def _triangulate(poly: list[tuple[float, float]]) -> list[tuple[int, int, int]]:
    """Ear-clip a simple CCW polygon. Deterministic; fine for small polygons."""
    idx = list(range(len(poly)))
    tris: list[tuple[int, int, int]] = []
    while len(idx) > 3:
        n = len(idx)
        clipped = False
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if _area2(a, b, c) <= 1e-15:
                continue  # reflex or degenerate corner
            if any(_point_in_tri(poly[j], a, b, c) for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            clipped = True
            break
        if not clipped:
            raise ValueError("cannot triangulate polygon")
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def _extrude(poly: list[tuple[float, float]], depth: float) -> TriMesh:
    """Prism from a simple CCW polygon in the xy plane, extruded along +z."""
    n = len(poly)
    verts = [(x, y, 0.0) for x, y in poly] + [(x, y, depth) for x, y in poly]
    cap = _triangulate(poly)
    tris = []
    for i0, i1, i2 in cap:
        tris.append((i0, i2, i1))  # bottom cap, normal -z
        tris.append((n + i0, n + i1, n + i2))  # top cap, normal +z
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, j, n + j))
        tris.append((i, n + j, n + i))
    return _mesh(verts, tris)


# ---------------------------------------------------------------------------
# generators

def _gen_cuboid(spec: ShapeSpec) -> TriMesh:
    w, h, d = _require_positive(spec, "w", "h", "d")
    verts = [
        (0, 0, 0), (w, 0, 0), (w, h, 0), (0, h, 0),
        (0, 0, d), (w, 0, d), (w, h, d), (0, h, d),
    ]
    tris = [
        (0, 2, 1), (0, 3, 2),  # z = 0
        (4, 5, 6), (4, 6, 7),  # z = d
        (0, 1, 5), (0, 5, 4),  # y = 0
        (3, 6, 2), (3, 7, 6),  # y = h
        (0, 4, 7), (0, 7, 3),  # x = 0
        (1, 2, 6), (1, 6, 5),  # x = w
    ]
    return _mesh(verts, tris)


def _gen_l_prism(spec: ShapeSpec) -> TriMesh:
    a, b, ta, tb, depth = _require_positive(spec, "a", "b", "ta", "tb", "depth")
    if not (ta < a and tb < b):
        raise ValueError(f"shape {spec.id!r}: leg thickness must be smaller than the extents")
    poly = [(0.0, 0.0), (a, 0.0), (a, tb), (ta, tb), (ta, b), (0.0, b)]
    return _extrude(poly, depth)


def _gen_t_prism(spec: ShapeSpec) -> TriMesh:
    a, b, stem, flange, depth = _require_positive(spec, "a", "b", "stem", "flange", "depth")
    if not (stem < a and flange < b):
        raise ValueError(f"shape {spec.id!r}: stem/flange must be smaller than the extents")
    x0 = (a - stem) / 2.0
    x1 = (a + stem) / 2.0
    y = b - flange
    poly = [(x0, 0.0), (x1, 0.0), (x1, y), (a, y), (a, b), (0.0, b), (0.0, y), (x0, y)]
    return _extrude(poly, depth)


def _gen_cylinder(spec: ShapeSpec) -> TriMesh:
    radius, height = _require_positive(spec, "radius", "height")
    poly = []
    for k in range(CYLINDER_SIDES):
        phi = 2.0 * math.pi * k / CYLINDER_SIDES
        poly.append((radius * math.cos(phi), radius * math.sin(phi)))
    return _extrude(poly, height)


def _gen_sphere(spec: ShapeSpec) -> TriMesh:
    (radius,) = _require_positive(spec, "radius")
    verts = [(0.0, radius, 0.0)]
    for i in range(1, SPHERE_STACKS):
        theta = math.pi * i / SPHERE_STACKS
        y = radius * math.cos(theta)
        rho = radius * math.sin(theta)
        for j in range(SPHERE_SLICES):
            phi = 2.0 * math.pi * j / SPHERE_SLICES
            verts.append((rho * math.cos(phi), y, rho * math.sin(phi)))
    verts.append((0.0, -radius, 0.0))
    bottom = len(verts) - 1

    def ring(i: int, j: int) -> int:
        return 1 + (i - 1) * SPHERE_SLICES + (j % SPHERE_SLICES)

    tris = []
    for j in range(SPHERE_SLICES):
        tris.append((0, ring(1, j + 1), ring(1, j)))
    for i in range(1, SPHERE_STACKS - 1):
        for j in range(SPHERE_SLICES):
            p00, p01 = ring(i, j), ring(i, j + 1)
            p10, p11 = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((p00, p11, p10))
            tris.append((p00, p01, p11))
    for j in range(SPHERE_SLICES):
        tris.append((bottom, ring(SPHERE_STACKS - 1, j), ring(SPHERE_STACKS - 1, j + 1)))
    return _mesh(verts, tris)


def _gen_hollow_box(spec: ShapeSpec) -> TriMesh:
    w, h, d, wall = _require_positive(spec, "w", "h", "d", "wall")
    t = wall
    if not (2 * t < w and t < h and 2 * t < d):
        raise ValueError(f"shape {spec.id!r}: wall too thick for the extents")
    verts = [
        (0, 0, 0), (w, 0, 0), (w, h, 0), (0, h, 0),          # outer, z = 0
        (0, 0, d), (w, 0, d), (w, h, d), (0, h, d),          # outer, z = d
        (t, t, t), (w - t, t, t), (w - t, h, t), (t, h, t),  # cavity, z = t
        (t, t, d - t), (w - t, t, d - t), (w - t, h, d - t), (t, h, d - t),
    ]
    tris = [
        # outer shell minus the top face
        (0, 2, 1), (0, 3, 2),
        (4, 5, 6), (4, 6, 7),
        (0, 1, 5), (0, 5, 4),
        (0, 4, 7), (0, 7, 3),
        (1, 2, 6), (1, 6, 5),
        # top ring at y = h between outer rim (3,2,6,7) and cavity rim (11,10,14,15)
        (3, 10, 2), (3, 11, 10),
        (2, 10, 14), (2, 14, 6),
        (6, 14, 15), (6, 15, 7),
        (7, 15, 11), (7, 11, 3),
        # cavity walls, normals pointing into the cavity void
        (8, 9, 10), (8, 10, 11),      # z = t, normal +z
        (12, 15, 14), (12, 14, 13),   # z = d - t, normal -z
        (8, 15, 12), (8, 11, 15),     # x = t, normal +x
        (9, 14, 10), (9, 13, 14),     # x = w - t, normal -x
        # cavity floor at y = t, normal +y
        (8, 12, 13), (8, 13, 9),
    ]
    return _mesh(verts, tris)


_GENERATORS = {
    "cuboid": _gen_cuboid,
    "l_prism": _gen_l_prism,
    "t_prism": _gen_t_prism,
    "cylinder": _gen_cylinder,
    "sphere": _gen_sphere,
    "hollow_box": _gen_hollow_box,
}


def gen_shape(spec: ShapeSpec) -> TriMesh:
    """Deterministic mesh for a descriptor; loads from file for kind 'mesh'."""
    if spec.kind == "mesh":
        if not spec.path:
            raise ValueError(f"shape {spec.id!r}: mesh kind requires a path")
        with open(spec.path, "r", encoding="utf-8") as fh:
            return parse_wavefront(fh.read())
    try:
        gen = _GENERATORS[spec.kind]
    except KeyError:
        raise ValueError(f"unknown shape kind {spec.kind!r}") from None
    return gen(spec)


def parse_wavefront(text: str) -> TriMesh:
    """Parse a triangulated Wavefront-style mesh: `v x y z` and `f i j k` lines.

    Face indices are 1-based; `i/j/k` vertex attributes are accepted and the
    vertex index is taken. All other lines are ignored.
    """
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ValueError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
        elif parts[0] == "f":
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: only triangulated faces are supported")
            ids = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                if i < 0:
                    i = len(verts) + 1 + i
                ids.append(i - 1)
            tris.append(tuple(ids))
    if not tris:
        raise ValueError("mesh has no faces")
    return _mesh(verts, tris)
