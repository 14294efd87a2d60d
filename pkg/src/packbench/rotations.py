"""The 24 proper rotations of the axis-aligned cube, as integer matrices.

Enumeration is fixed so indices are stable across runs and serializations:

    index = 4 * down_face + yaw

``down_face`` (0..5) applies a base rotation that brings one of the six face
directions to point down (-y); ``yaw`` (0..3) then spins by quarter turns
about the vertical +y axis. Index 0 is the identity. Matrices act on column
vectors (v' = M v) in the repo coordinate frame: x = width, y = height,
z = depth.
"""

from dataclasses import dataclass, field

import numpy as np

# quarter turns about each axis, right-handed
_QX = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=int)
_QY = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], dtype=int)
_QZ = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=int)


def _matpow(m: np.ndarray, k: int) -> np.ndarray:
    out = np.eye(3, dtype=int)
    for _ in range(k % 4):
        out = m @ out
    return out


# base rotations putting each original face down: -y, +z, +y, -z, +x, -x
_DOWN_FACE = (
    _matpow(_QX, 0),
    _matpow(_QX, 1),
    _matpow(_QX, 2),
    _matpow(_QX, 3),
    _matpow(_QZ, 1),
    _matpow(_QZ, 3),
)


@dataclass(frozen=True, eq=False)
class Rotation:
    index: int
    matrix: np.ndarray = field(repr=False)
    # axis relabeling implied by the matrix: output axis j reads input axis
    # source[j], flipped when sign[j] < 0
    source: tuple[int, int, int] = field(repr=False)
    sign: tuple[int, int, int] = field(repr=False)

    def __post_init__(self):
        self.matrix.setflags(write=False)


def _axis_map(m: np.ndarray) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    src = []
    sgn = []
    for j in range(3):
        (i,) = np.nonzero(m[j])[0]
        src.append(int(i))
        sgn.append(int(m[j, i]))
    return tuple(src), tuple(sgn)


def _build_group() -> tuple[Rotation, ...]:
    out = []
    for face in range(6):
        for yaw in range(4):
            m = _matpow(_QY, yaw) @ _DOWN_FACE[face]
            src, sgn = _axis_map(m)
            out.append(Rotation(index=4 * face + yaw, matrix=m, source=src, sign=sgn))
    return tuple(out)


_GROUP = _build_group()
_BY_BYTES = {r.matrix.tobytes(): r.index for r in _GROUP}


def rotation_group() -> tuple[Rotation, ...]:
    """All 24 rotations in canonical order; element 0 is the identity."""
    return _GROUP


def find_index(matrix: np.ndarray) -> int:
    """Index of an exact integer matrix within the group."""
    key = np.asarray(matrix, dtype=int).tobytes()
    try:
        return _BY_BYTES[key]
    except KeyError:
        raise ValueError("matrix is not an element of the rotation group") from None


def compose_index(i: int, j: int) -> int:
    """Index k with M_i @ M_j == M_k."""
    return find_index(_GROUP[i].matrix @ _GROUP[j].matrix)


def inverse_index(i: int) -> int:
    """Index of the inverse rotation (transpose, for orthogonal matrices)."""
    return find_index(_GROUP[i].matrix.T)


def permuted_dims(i: int, dims: tuple[int, int, int]) -> tuple[int, int, int]:
    """Bounding-box dims after applying rotation i to a grid of given dims."""
    src = _GROUP[i].source
    return (dims[src[0]], dims[src[1]], dims[src[2]])
