"""Subdivided icosahedron with a five-component grid layout.

Each component (gore) i is addressed through a lattice with origin at the
upper-ring vertex U_i.  Lattice axis ``a`` runs along grid rows (south-east
on the unfolded net), axis ``b`` along grid columns (north-east).  The gore
covers the closed parallelogram ``0 <= a <= 2W, 0 <= b <= W`` with corners

    N=(0, W)  U_i=(0, 0)  U_{i+1}=(W, W)  L_i=(W, 0)  L_{i+1}=(2W, W)  S=(2W, 0)

A gore owns its interior plus its eastern boundary, so grid cell
``(row, col)`` is lattice point ``(row + 1, col + 1)``.  The western
boundary belongs to gore ``i - 1``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_LEVEL = 10
NORTH = 0
SOUTH = 1

# n1..n6 as lattice offsets; cyclic order matching the hexagonal filter mask
HEX_OFFSETS = np.array([(-1, 0), (-1, -1), (0, -1), (1, 0), (1, 1), (0, 1)], dtype=np.int64)

_UP_AXIS = np.array([0.0, 1.0, 0.0])


def vertex_count(r: int) -> int:
    return 10 * 4**r + 2


def face_count(r: int) -> int:
    return 20 * 4**r


def edge_count(r: int) -> int:
    return 30 * 4**r


def _check_level(r: int) -> None:
    if not isinstance(r, (int, np.integer)) or not 0 <= r <= MAX_LEVEL:
        raise ValueError(f"subdivision level must be an integer in [0, {MAX_LEVEL}], got {r!r}")


def direction(lat, lon) -> np.ndarray:
    """Unit vectors for latitude/longitude arrays (radians).  +y is north,
    longitude grows eastward."""
    lat, lon = np.broadcast_arrays(np.asarray(lat, np.float64), np.asarray(lon, np.float64))
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), np.sin(lat), -c * np.sin(lon)], axis=-1)


def longitude(p: np.ndarray) -> np.ndarray:
    return np.arctan2(-p[..., 2], p[..., 0])


def latitude(p: np.ndarray) -> np.ndarray:
    return np.arcsin(np.clip(p[..., 1], -1.0, 1.0))


def _base_lattices() -> list[np.ndarray]:
    ring = np.arctan(0.5)
    step = 2 * np.pi / 5
    k = np.arange(5)
    upper = direction(np.full(5, ring), k * step - np.pi / 10)
    lower = direction(np.full(5, -ring), k * step + np.pi / 10)
    north = np.array([0.0, 1.0, 0.0])
    south = np.array([0.0, -1.0, 0.0])
    gores = []
    for i in range(5):
        j = (i + 1) % 5
        g = np.empty((3, 2, 3))
        g[0, 0], g[0, 1] = upper[i], north
        g[1, 0], g[1, 1] = lower[i], upper[j]
        g[2, 0], g[2, 1] = south, lower[j]
        gores.append(g)
    return gores


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _subdivide(g: np.ndarray) -> np.ndarray:
    na, nb = g.shape[0] - 1, g.shape[1] - 1
    out = np.empty((2 * na + 1, 2 * nb + 1, 3))
    out[::2, ::2] = g
    # sums are symmetric in their operands so shared edges agree bit for bit
    out[1::2, ::2] = _normalize(g[:-1] + g[1:])
    out[::2, 1::2] = _normalize(g[:, :-1] + g[:, 1:])
    out[1::2, 1::2] = _normalize(g[:-1, :-1] + g[1:, 1:])
    return out


def resolve_lattice(W: int, comp, a, b) -> np.ndarray:
    """Map gore-local lattice points to vertex ids.

    Accepts points of the closed parallelogram plus the one-step ring just
    beyond its eastern and southern sides.  Points with no vertex (beyond a
    pole) map to -1.
    """
    comp, a, b = (np.asarray(x, dtype=np.int64) for x in np.broadcast_arrays(comp, a, b))
    c, A, B = comp.copy(), a.copy(), b.copy()

    def move(mask, dc, na, nb):
        c[mask] = comp[mask] + dc
        A[mask] = na[mask]
        B[mask] = nb[mask]

    # western boundary, owned by the previous gore
    move((a == 0) & (b >= 0) & (b < W), -1, W - b, np.full_like(b, W))
    move((b == 0) & (a >= 1) & (a <= W), -1, a + W, np.full_like(a, W))
    move((b == 0) & (a > W) & (a < 2 * W), -1, np.full_like(a, 2 * W), 2 * W - a)
    # one step past the eastern side: fold around N, plain shift, fold around S
    move((b == W + 1) & (a >= 1) & (a <= W), 1, np.ones_like(a), W + 1 - a)
    move((b == W + 1) & (a > W) & (a <= 2 * W + 1), 1, a - W, np.ones_like(a))
    move((a == 2 * W + 1) & (b >= 1) & (b <= W), 1, 2 * W + 1 - b, np.ones_like(b))

    owned = (A >= 1) & (A <= 2 * W) & (B >= 1) & (B <= W)
    ids = np.where(owned, 2 + (c % 5) * 2 * W * W + (A - 1) * W + (B - 1), -1)
    ids[(a == 0) & (b == W)] = NORTH
    ids[(a == 2 * W) & (b == 0)] = SOUTH
    return ids


@dataclass(frozen=True, eq=False)
class MeshLevel:
    """Icosahedral mesh at subdivision level ``r``.  Faces, edges and the
    neighbor table are built on first access."""

    r: int
    positions: np.ndarray

    @property
    def W(self) -> int:
        return 2**self.r

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def component_shape(self) -> tuple[int, int]:
        return (2 * self.W, self.W)

    @cached_property
    def _cells(self):
        W = self.W
        comp, row, col = np.meshgrid(np.arange(5), np.arange(2 * W), np.arange(W), indexing="ij")
        return comp.ravel(), row.ravel(), col.ravel()

    @cached_property
    def faces(self) -> np.ndarray:
        W = self.W
        comp, a, b = np.meshgrid(np.arange(5), np.arange(2 * W), np.arange(W), indexing="ij")
        p00 = resolve_lattice(W, comp, a, b)
        p10 = resolve_lattice(W, comp, a + 1, b)
        p11 = resolve_lattice(W, comp, a + 1, b + 1)
        p01 = resolve_lattice(W, comp, a, b + 1)
        lower = np.stack([p00, p10, p11], axis=-1).reshape(-1, 3)
        upper = np.stack([p00, p11, p01], axis=-1).reshape(-1, 3)
        return np.concatenate([lower, upper]).astype(np.int64)

    @cached_property
    def edges(self) -> np.ndarray:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """(n_vertices - 2, 6) ids of n1..n6 for every non-pole vertex, in id
        order.  Valence-5 vertices repeat their predecessor neighbor."""
        comp, row, col = self._cells
        a = row[:, None] + 1 + HEX_OFFSETS[:, 0]
        b = col[:, None] + 1 + HEX_OFFSETS[:, 1]
        return resolve_lattice(self.W, comp[:, None], a, b)

    def grid_to_vertex(self, comp, row, col) -> np.ndarray:
        W = self.W
        comp, row, col = (np.asarray(x) for x in (comp, row, col))
        if np.any((comp < 0) | (comp > 4) | (row < 0) | (row >= 2 * W) | (col < 0) | (col >= W)):
            raise IndexError("grid coordinate out of range")
        return 2 + comp * 2 * W * W + row * W + col

    def vertex_to_grid(self, v):
        """Return (comp, row, col) for non-pole vertex ids."""
        v = np.asarray(v)
        if np.any((v < 2) | (v >= self.n_vertices)):
            raise IndexError("vertex id is a pole or out of range")
        W = self.W
        k = v - 2
        return k // (2 * W * W), (k // W) % (2 * W), k % W

    def neighbors(self, v: int) -> np.ndarray:
        if v < 2:
            raise IndexError("poles have no hexagonal neighbor ordering")
        return self.neighbor_table[v - 2]


def build_mesh(r: int) -> MeshLevel:
    _check_level(r)
    gores = _base_lattices()
    for _ in range(r):
        gores = [_subdivide(g) for g in gores]
    W = 2**r
    pos = np.empty((vertex_count(r), 3))
    pos[NORTH] = (0.0, 1.0, 0.0)
    pos[SOUTH] = (0.0, -1.0, 0.0)
    body = np.stack([g[1:, 1:] for g in gores])  # (5, 2W, W, 3)
    pos[2:] = body.reshape(-1, 3)
    return MeshLevel(r, pos)


@dataclass(frozen=True, eq=False)
class AlphaMaps:
    r: int
    alpha: np.ndarray  # (5, 2W, W) float64

    def as_float32(self) -> np.ndarray:
        return self.alpha.astype(np.float32)


ALPHA_EPS = 1e-6


def arc_weight(v: np.ndarray, toward: np.ndarray, away: np.ndarray, ref: np.ndarray = _UP_AXIS) -> np.ndarray:
    """Interpolation weight for the ``toward`` neighbor.

    Both edge vectors are compared with the plane through ``v`` and ``ref``;
    the result is phi / (phi + psi) where psi and phi are the angles of the
    ``toward`` and ``away`` edges to that plane.  Not clamped.
    """
    n = _normalize(np.cross(v, ref))

    def plane_angle(e):
        # arccos(|Pe| / |e|), written with atan2 so small angles keep precision
        en = np.sum(e * n, axis=-1, keepdims=True)
        pe = e - en * n
        return np.arctan2(np.abs(en[..., 0]), np.linalg.norm(pe, axis=-1))

    psi = plane_angle(v - toward)
    phi = plane_angle(v - away)
    return phi / (phi + psi)


def alpha_per_vertex(mesh: MeshLevel, clamp: bool = True) -> np.ndarray:
    """Alpha for every non-pole vertex, shaped (5, 2W, W).  Clamping keeps
    it strictly inside (0, 1); unclamped values reach exactly 1 where n1
    lies on the local meridian."""
    p = mesh.positions
    nt = mesh.neighbor_table
    al = arc_weight(p[2:], p[nt[:, 0]], p[nt[:, 5]])
    if clamp:
        al = np.clip(al, ALPHA_EPS, 1 - ALPHA_EPS)
    return al.reshape(5, *mesh.component_shape)


def compute_alpha_maps(mesh: MeshLevel) -> AlphaMaps:
    """Alpha maps with exact five-fold symmetry.

    The per-component values differ only by floating-point noise, so
    component 0 is shared by all five.
    """
    al = alpha_per_vertex(mesh)
    spread = np.max(np.abs(al - al[:1]))
    if spread > 1e-9:
        raise RuntimeError(f"alpha maps are not rotation symmetric (spread {spread:.3g})")
    return AlphaMaps(mesh.r, np.ascontiguousarray(np.broadcast_to(al[0], al.shape)))


# ---------------------------------------------------------------------------
# binary cache

_MAGIC = b"ICOM"


def save_mesh(mesh: MeshLevel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", mesh.r))
        fh.write(mesh.positions.astype("<f8").tobytes())
        fh.write(mesh.neighbor_table.astype("<u4").tobytes())
        comp, row, col = mesh._cells
        fh.write(np.stack([comp, row, col], axis=1).astype("<u4").tobytes())


def load_mesh(path) -> MeshLevel:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a mesh cache file")
    (r,) = struct.unpack_from("<I", data, 4)
    _check_level(r)
    n = vertex_count(r)
    m = n - 2
    expected = 8 + n * 24 + m * 24 + m * 12
    if len(data) != expected:
        raise ValueError(f"{path}: truncated or corrupt mesh cache")
    off = 8
    pos = np.frombuffer(data, "<f8", n * 3, off).reshape(n, 3).astype(np.float64)
    off += n * 24
    nt = np.frombuffer(data, "<u4", m * 6, off).reshape(m, 6).astype(np.int64)
    mesh = MeshLevel(r, pos)
    mesh.__dict__["neighbor_table"] = nt
    return mesh


def cache_dir() -> Path | None:
    d = os.environ.get("ICO_CACHE_DIR")
    return Path(d) if d else None


_memo: dict[int, MeshLevel] = {}


def get_mesh(r: int) -> MeshLevel:
    """Build or load level ``r``, using ICO_CACHE_DIR when it is set."""
    _check_level(r)
    if r in _memo:
        return _memo[r]
    d = cache_dir()
    mesh = None
    if d is not None:
        f = d / f"ico_r{r}.icom"
        if f.exists():
            mesh = load_mesh(f)
        else:
            mesh = build_mesh(r)
            d.mkdir(parents=True, exist_ok=True)
            tmp = f.with_suffix(".tmp")
            save_mesh(mesh, tmp)
            tmp.replace(f)
    if mesh is None:
        mesh = build_mesh(r)
    _memo[r] = mesh
    return mesh


_alpha_memo: dict[int, AlphaMaps] = {}


def get_alpha(r: int) -> AlphaMaps:
    if r not in _alpha_memo:
        _alpha_memo[r] = compute_alpha_maps(get_mesh(r))
    return _alpha_memo[r]
