"""Equirectangular images <-> icosahedral signals, and layout pictures."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from .mesh import direction, get_mesh, latitude, longitude
from .sphereops import SphereTensor

# level -> (height, width) of perspective-comparable equirect images
RESOLUTION_MATCH = {6: (48, 80), 7: (96, 160), 8: (192, 320)}


def matched_resolution(level: int) -> tuple[int, int]:
    try:
        return RESOLUTION_MATCH[level]
    except KeyError:
        raise ValueError(f"no resolution match defined for level {level}") from None


def equirect_size(level: int) -> tuple[int, int]:
    """Default (H, W) for an equirect image of comparable density."""
    W = 2**level
    return 2 * W, 4 * W


def _check_equirect(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ValueError("equirect image must be (H, W) or (C, H, W)")
    if img.shape[2] != 2 * img.shape[1]:
        raise ValueError(f"equirect width must be twice the height, got {img.shape[1:]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("equirect image has non-finite pixels")
    return img


def equirect_to_sphere(img: np.ndarray, level: int, mode: str = "bilinear") -> SphereTensor:
    """Sample an equirect image (C, H, 2H) at every non-pole vertex.

    Columns cover longitude [-pi, pi) from the left edge, rows cover
    latitude from +90 to -90 degrees.  Pixel centers sit at half-integers.
    """
    img = _check_equirect(np.asarray(img, np.float64))
    C, H, We = img.shape
    mesh = get_mesh(level)
    p = mesh.positions[2:]
    u = (longitude(p) + np.pi) / (2 * np.pi) * We - 0.5
    v = (np.pi / 2 - latitude(p)) / np.pi * H - 0.5
    if mode == "nearest":
        cu = np.floor(u + 0.5).astype(np.int64) % We
        cv = np.clip(np.floor(v + 0.5).astype(np.int64), 0, H - 1)
        vals = img[:, cv, cu]
    elif mode == "bilinear":
        u0 = np.floor(u).astype(np.int64)
        v0 = np.floor(v).astype(np.int64)
        fu, fv = u - u0, v - v0
        c0, c1 = u0 % We, (u0 + 1) % We
        r0, r1 = np.clip(v0, 0, H - 1), np.clip(v0 + 1, 0, H - 1)
        vals = ((1 - fv) * ((1 - fu) * img[:, r0, c0] + fu * img[:, r0, c1])
                + fv * ((1 - fu) * img[:, r1, c0] + fu * img[:, r1, c1]))
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    W = mesh.W
    data = vals.reshape(C, 5, 2 * W, W).transpose(1, 0, 2, 3)
    return SphereTensor(level, np.ascontiguousarray(data, np.float32))


@lru_cache(maxsize=4)
def _face_lookup(level: int):
    mesh = get_mesh(level)
    f = mesh.faces
    inv = np.linalg.inv(mesh.positions[f].transpose(0, 2, 1))  # columns are corners
    incident = np.full((mesh.n_vertices, 6), -1, np.int64)
    order = np.argsort(f.ravel(), kind="stable")
    verts = f.ravel()[order]
    faces = order // 3
    start = np.searchsorted(verts, np.arange(mesh.n_vertices))
    slot = np.arange(len(verts)) - start[verts]
    incident[verts, slot] = faces
    return cKDTree(mesh.positions), inv, incident


def _vertex_values(x: SphereTensor) -> np.ndarray:
    C = x.channels
    vals = np.zeros((C, 2 + x.data[:, 0].size))
    vals[:, 2:] = x.data.transpose(1, 0, 2, 3).reshape(C, -1)
    return vals


def _nearest_non_pole(tree: cKDTree, d: np.ndarray) -> np.ndarray:
    _, nn = tree.query(d, k=2)
    return np.where(nn[:, 0] >= 2, nn[:, 0], nn[:, 1])


def sphere_to_equirect(x: SphereTensor, height: int, mode: str = "bilinear") -> np.ndarray:
    """Render a sphere signal as a (C, H, 2H) equirect image.

    Bilinear mode interpolates barycentrically inside the mesh triangle hit
    by each pixel ray; nearest mode copies the closest vertex.  Pole
    vertices carry no value, so the nearest non-pole vertex stands in.
    """
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    mesh = get_mesh(x.r)
    tree, inv, incident = _face_lookup(x.r)
    We = 2 * height
    lat = np.pi / 2 - (np.arange(height) + 0.5) / height * np.pi
    lon = (np.arange(We) + 0.5) / We * 2 * np.pi - np.pi
    d = direction(lat[:, None], lon[None, :]).reshape(-1, 3)
    vals = _vertex_values(x)
    C = x.channels
    if mode == "nearest":
        return vals[:, _nearest_non_pole(tree, d)].reshape(C, height, We).astype(np.float32)
    _, near = tree.query(d)
    cand = incident[near]  # (P, 6)
    lam = np.einsum("pkij,pj->pki", inv[np.maximum(cand, 0)], d)
    score = lam.min(axis=2)
    score[cand < 0] = -np.inf
    best = np.argmax(score, axis=1)
    face = cand[np.arange(len(d)), best]
    w = lam[np.arange(len(d)), best]
    w = np.maximum(w, 0)
    w /= w.sum(axis=1, keepdims=True)
    corners = mesh.faces[face]
    out = np.einsum("cpk,pk->cp", vals[:, corners], w)
    polar = np.any(corners < 2, axis=1)
    if polar.any():
        out[:, polar] = vals[:, _nearest_non_pole(tree, d[polar])]
    return out.reshape(C, height, We).astype(np.float32)


# ---------------------------------------------------------------------------
# pictures


def palette(n: int = 256) -> np.ndarray:
    """Label colors built by spreading label bits over RGB (distinct for n <= 256)."""
    if n > 256:
        raise ValueError("palette supports at most 256 labels")
    cmap = np.zeros((n, 3), np.uint8)
    for i in range(n):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        cmap[i] = (r, g, b)
    return cmap


def unfold(x: SphereTensor, channel: int | None = None) -> np.ndarray:
    """Lay the five components side by side: (C, 2W, 5W)."""
    d = x.data if channel is None else x.data[:, channel:channel + 1]
    return np.concatenate(list(d), axis=-1)


def export_unfolded(x: SphereTensor, path, channel: int | None = None, labels: bool = False) -> np.ndarray:
    """Write the unfolded layout as an 8-bit image.

    ``labels`` renders per-cell argmax through the palette; otherwise the
    chosen channel (or the first three) is min-max scaled to 0..255.
    """
    if labels:
        lab = np.argmax(unfold(x), axis=0)
        img = palette()[lab]
    else:
        u = unfold(x, channel)
        if channel is None and u.shape[0] >= 3:
            u = u[:3]
        elif u.shape[0] != 1:
            u = u[:1]
        lo, hi = float(u.min()), float(u.max())
        scaled = np.zeros_like(u) if hi <= lo else (u - lo) / (hi - lo)
        img = np.round(scaled * 255).astype(np.uint8)
        img = img[0] if img.shape[0] == 1 else img.transpose(1, 2, 0)
    save_image(path, img)
    return img


def save_image(path, img: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(img, np.uint8)
    Image.fromarray(arr).save(path)


def load_image(path) -> np.ndarray:
    """Read an 8-bit image as float (C, H, W) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L") if im.mode in ("L", "I", "F", "1") else im.convert("RGB"))
    arr = arr.astype(np.float32) / 255.0
    return arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
