"""Per-vertex reference implementations.

These walk the mesh graph one vertex at a time in float64 and never touch
the padded grid layout, so they can be used to check the grid operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import MeshLevel, alpha_per_vertex, arc_weight, resolve_lattice, ALPHA_EPS
from .sphereops import SphereTensor


@dataclass
class VertexSignal:
    values: np.ndarray  # (n_vertices, C) float64, rows 0 and 1 are the poles

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def from_sphere(x: SphereTensor, pole_values=0.0) -> VertexSignal:
    C = x.channels
    vals = np.empty((2 + x.data[:, 0].size, C))
    vals[:2] = pole_values
    vals[2:] = x.data.astype(np.float64).transpose(0, 2, 3, 1).reshape(-1, C)
    return VertexSignal(vals)


def to_sphere(sig: VertexSignal, r: int) -> SphereTensor:
    W = 2**r
    C = sig.channels
    body = sig.values[2:].reshape(5, 2 * W, W, C).transpose(0, 3, 1, 2)
    return SphereTensor(r, body.astype(np.float32))


def touches_pole(mesh: MeshLevel) -> np.ndarray:
    """Mask over non-pole vertices whose hex neighborhood contains a pole."""
    return np.any(mesh.neighbor_table < 2, axis=1)


def graph_hexconv_ref(sig: VertexSignal, mesh: MeshLevel, weights: np.ndarray,
                      bias: np.ndarray | None = None, alpha: np.ndarray | None = None) -> VertexSignal:
    """Blend of the two hexagonal filter orientations at every vertex.

    ``weights`` is (C_out, C_in, 7) in w1..w7 order.  ``alpha`` defaults to
    the unclamped-then-clamped value from the vertex geometry.
    """
    x = sig.values
    w = np.asarray(weights, np.float64)
    al = alpha_per_vertex(mesh).ravel() if alpha is None else np.asarray(alpha).ravel()
    nt = mesh.neighbor_table
    out = np.zeros((x.shape[0], w.shape[0]))
    for k in range(nt.shape[0]):
        v = k + 2
        nb = nt[k]
        f1 = w[:, :, 6] @ x[v]
        f2 = w[:, :, 6] @ x[v]
        for j in range(6):
            f1 += w[:, :, j] @ x[nb[j]]
            f2 += w[:, :, j] @ x[nb[j - 1]]  # n0 wraps to n6
        out[v] = al[k] * f1 + (1 - al[k]) * f2
    if bias is not None:
        out[2:] += bias
    return VertexSignal(out)


def neighbor_thetas(mesh: MeshLevel) -> np.ndarray:
    """(n_vertices - 2, 6) weights for n_j against n_{j-1}.

    Tap j is aimed at the local north direction turned westward by
    (j - 1) * 60 degrees; the weight follows the same plane-angle rule as
    alpha, so column 0 equals alpha before clamping.
    """
    p = mesh.positions
    v = p[2:]
    nt = mesh.neighbor_table
    up = np.array([0.0, 1.0, 0.0])
    north = up - (v @ up)[:, None] * v
    north /= np.linalg.norm(north, axis=1, keepdims=True)
    west = np.cross(v, north)
    th = np.empty(nt.shape)
    for j in range(6):
        beta = j * np.pi / 3
        ref = np.cos(beta) * north + np.sin(beta) * west
        th[:, j] = arc_weight(v, p[nt[:, j]], p[nt[:, j - 1]], ref)
    return np.clip(th, ALPHA_EPS, 1 - ALPHA_EPS)


def graph_eq1_ref(sig: VertexSignal, mesh: MeshLevel, weights: np.ndarray,
                  bias: np.ndarray | None = None, thetas: np.ndarray | None = None) -> VertexSignal:
    """Convolution where every tap interpolates between two adjacent
    neighbors with its own weight theta_j."""
    x = sig.values
    w = np.asarray(weights, np.float64)
    th = neighbor_thetas(mesh) if thetas is None else thetas
    nt = mesh.neighbor_table
    out = np.zeros((x.shape[0], w.shape[0]))
    for k in range(nt.shape[0]):
        v = k + 2
        nb = nt[k]
        acc = w[:, :, 6] @ x[v]
        for j in range(6):
            acc += w[:, :, j] @ (th[k, j] * x[nb[j]] + (1 - th[k, j]) * x[nb[j - 1]])
        out[v] = acc
    if bias is not None:
        out[2:] += bias
    return VertexSignal(out)


def coarse_to_fine_ids(coarse: MeshLevel, fine: MeshLevel) -> np.ndarray:
    """Fine-level id of every coarse vertex, matched by position."""
    d, idx = cKDTree(fine.positions).query(coarse.positions)
    if d.max() > 1e-12:
        raise RuntimeError("coarse vertices are not a subset of the fine mesh")
    return idx


def graph_pool_ref(sig: VertexSignal, fine: MeshLevel, coarse: MeshLevel, mode: str = "max") -> VertexSignal:
    """Pool every surviving vertex with its n1, n2, n3 neighbors."""
    x = sig.values
    ids = coarse_to_fine_ids(coarse, fine)
    out = np.zeros((coarse.n_vertices, x.shape[1]))
    for u in range(2, coarse.n_vertices):
        v = ids[u]
        group = [v, *fine.neighbors(v)[:3]]
        vals = x[group]
        out[u] = vals.max(axis=0) if mode == "max" else vals.mean(axis=0)
    return VertexSignal(out)


def graph_upsample_ref(sig: VertexSignal, coarse: MeshLevel, fine: MeshLevel) -> VertexSignal:
    """Every fine vertex takes the mean of the coarse vertices at the corners
    of the lattice cell (or edge, or point) that contains it."""
    x = sig.values
    Wc = coarse.W
    out = np.zeros((fine.n_vertices, x.shape[1]))
    for v in range(2, fine.n_vertices):
        comp, row, col = (int(t) for t in fine.vertex_to_grid(v))
        A, B = row + 1, col + 1
        pa = sorted({A // 2, (A + 1) // 2})
        pb = sorted({B // 2, (B + 1) // 2})
        parents = [int(resolve_lattice(Wc, comp, a, b)) for a in pa for b in pb]
        out[v] = x[parents].mean(axis=0)
    return VertexSignal(out)


def upsample_touches_pole(coarse: MeshLevel, fine: MeshLevel) -> np.ndarray:
    """Mask over fine non-pole vertices whose interpolation uses a pole."""
    W = coarse.W
    comp, row, col = fine.vertex_to_grid(np.arange(2, fine.n_vertices))
    A, B = row + 1, col + 1
    hit = np.zeros(A.shape, bool)
    for a in (A // 2, (A + 1) // 2):
        for b in (B // 2, (B + 1) // 2):
            hit |= resolve_lattice(W, comp, a, b) < 2
    return hit
