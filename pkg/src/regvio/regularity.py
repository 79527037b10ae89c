"""Histogram-based detection of horizontal and vertical planes on the mesh.

Horizontal planes come from a 1D histogram of face heights, vertical planes
from a 2D (distance to origin, normal azimuth) histogram. Each face casts one
vote. Histograms are smoothed with a truncated Gaussian and their strict local
maxima become plane candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import Plane, angle_between_normals
from .mesher import Face, Mesh3D

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DetectorParams:
    angle_tol_deg: float = 10.0
    height_bin: float = 0.05
    distance_bin: float = 0.10
    azimuth_bin_deg: float = 5.0
    sigma_bins: float = 1.0
    truncate_sigmas: float = 3.0
    min_support: int = 20
    match_normal_tol_deg: float = 10.0
    match_distance_tol: float = 0.10


@dataclass(frozen=True)
class PlaneCandidate:
    plane: Plane
    supporting_faces: frozenset = field(default_factory=frozenset)
    supporting_landmarks: frozenset = field(default_factory=frozenset)

    @property
    def support(self) -> int:
        return len(self.supporting_faces)


@dataclass
class Histogram1D:
    bin_width: float
    bins: dict[int, float] = field(default_factory=dict)


@dataclass
class Histogram2D:
    distance_bin_width: float
    azimuth_bin_width: float
    bins: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def n_azimuth(self) -> int:
        return int(round(TWO_PI / self.azimuth_bin_width))


def face_normals(mesh: Mesh3D, faces: Sequence[Face]) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals and centroids of ``faces``; degenerate faces get a zero normal."""
    corners = mesh.face_corners(faces)
    if len(corners) == 0:
        return np.empty((0, 3)), np.empty((0, 3))
    n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    return n, corners.mean(axis=1)


def segment_faces_by_normal(mesh: Mesh3D, angle_tol: float = np.radians(10.0)) -> tuple[set[Face], set[Face]]:
    """Split faces into (horizontal, vertical) sets by the angle of their normal to +z."""
    faces = sorted(mesh.faces)
    normals, _ = face_normals(mesh, faces)
    nz = np.abs(normals[:, 2]) if len(faces) else np.empty(0)
    valid = np.linalg.norm(normals, axis=1) > 0 if len(faces) else np.empty(0, dtype=bool)
    # small epsilon keeps faces lying exactly on the tolerance boundary
    horiz = valid & (nz >= np.cos(angle_tol) - 1e-12)
    vert = valid & (nz <= np.sin(angle_tol) + 1e-12) & ~horiz
    return (
        {f for f, h in zip(faces, horiz) if h},
        {f for f, v in zip(faces, vert) if v},
    )


def _gaussian_kernel(sigma: float, truncate: float) -> np.ndarray:
    r = int(np.ceil(truncate * sigma))
    k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    return k / k.sum()


def _smooth_axis(a: np.ndarray, kernel: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    r = len(kernel) // 2
    out = np.zeros_like(a)
    for k, w in zip(range(-r, r + 1), kernel):
        if periodic:
            out += w * np.roll(a, k, axis=axis)
        else:
            shifted = np.zeros_like(a)
            src = [slice(None)] * a.ndim
            dst = [slice(None)] * a.ndim
            n = a.shape[axis]
            if k >= 0:
                src[axis], dst[axis] = slice(0, n - k), slice(k, n)
            else:
                src[axis], dst[axis] = slice(-k, n), slice(0, n + k)
            shifted[tuple(dst)] = a[tuple(src)]
            out += w * shifted
    return out


def _local_maxima(values: np.ndarray, neighbors: Callable[[tuple], Iterable[tuple]]) -> list[tuple]:
    """Strict local maxima; an equal-valued plateau yields its lowest-index bin."""
    tol = 1e-12 * max(float(values.max(initial=0.0)), 1.0)
    peaks = []
    seen: set[tuple] = set()
    for idx in zip(*np.nonzero(values > tol)):
        idx = tuple(int(i) for i in idx)
        if idx in seen:
            continue
        v = values[idx]
        if any(values[nb] > v + tol for nb in neighbors(idx)):
            continue
        # flood the plateau of bins equal to v
        plateau = {idx}
        stack = [idx]
        is_max = True
        while stack:
            cur = stack.pop()
            for nb in neighbors(cur):
                if nb in plateau:
                    continue
                if abs(values[nb] - v) <= tol:
                    plateau.add(nb)
                    stack.append(nb)
                elif values[nb] > v:
                    is_max = False
        seen |= plateau
        if is_max:
            peaks.append(min(plateau))
    return sorted(peaks)


def height_histogram(mesh: Mesh3D, faces: Sequence[Face], bin_width: float) -> tuple[Histogram1D, dict[Face, int]]:
    faces = sorted(faces)
    _, centroids = face_normals(mesh, faces)
    hist = Histogram1D(bin_width)
    face_bin = {}
    for f, c in zip(faces, centroids):
        b = int(np.floor(c[2] / bin_width))
        face_bin[f] = b
        hist.bins[b] = hist.bins.get(b, 0) + 1
    return hist, face_bin


def detect_horizontal_planes(faces: Iterable[Face], mesh: Mesh3D, params: DetectorParams = DetectorParams()) -> list[PlaneCandidate]:
    faces = sorted(faces)
    if not faces:
        return []
    hist, face_bin = height_histogram(mesh, faces, params.height_bin)
    lo, hi = min(hist.bins), max(hist.bins)
    pad = int(np.ceil(params.truncate_sigmas * params.sigma_bins)) + 1
    dense = np.zeros(hi - lo + 1 + 2 * pad)
    for b, c in hist.bins.items():
        dense[b - lo + pad] = c
    smooth = _smooth_axis(dense, _gaussian_kernel(params.sigma_bins, params.truncate_sigmas), 0, periodic=False)
    n = len(smooth)

    def nbrs(idx):
        (i,) = idx
        return [(j,) for j in (i - 1, i + 1) if 0 <= j < n]

    peaks = [p[0] + lo - pad for p in _local_maxima(smooth, nbrs)]
    support = _assign_support(faces, peaks, lambda f, p: abs(face_bin[f] - p), smooth_of=lambda p: smooth[p - lo + pad])
    out = []
    for p in peaks:
        sup = support[p]
        if len(sup) < params.min_support:
            continue
        plane = Plane(np.array([0.0, 0.0, 1.0]), (p + 0.5) * params.height_bin).canonical()
        out.append(_candidate(plane, sup))
    return _sorted_candidates(out)


def detect_vertical_planes(faces: Iterable[Face], mesh: Mesh3D, params: DetectorParams = DetectorParams()) -> list[PlaneCandidate]:
    faces = sorted(faces)
    if not faces:
        return []
    normals, centroids = face_normals(mesh, faces)
    az_w = np.radians(params.azimuth_bin_deg)
    n_az = int(round(TWO_PI / az_w))
    d = np.einsum("ij,ij->i", normals, centroids)
    flip = d < 0
    normals = np.where(flip[:, None], -normals, normals)
    d = np.abs(d)
    az = np.mod(np.arctan2(normals[:, 1], normals[:, 0]), TWO_PI)
    di = np.floor(d / params.distance_bin).astype(int)
    ai = np.floor(az / az_w).astype(int) % n_az
    hist = Histogram2D(params.distance_bin, az_w)
    face_bin = {}
    for f, i, j in zip(faces, di, ai):
        face_bin[f] = (int(i), int(j))
        hist.bins[(int(i), int(j))] = hist.bins.get((int(i), int(j)), 0) + 1
    pad = int(np.ceil(params.truncate_sigmas * params.sigma_bins)) + 1
    lo, hi = int(di.min()), int(di.max())
    dense = np.zeros((hi - lo + 1 + 2 * pad, n_az))
    for (i, j), c in hist.bins.items():
        dense[i - lo + pad, j] = c
    kernel = _gaussian_kernel(params.sigma_bins, params.truncate_sigmas)
    smooth = _smooth_axis(_smooth_axis(dense, kernel, 0, periodic=False), kernel, 1, periodic=True)
    n_d = smooth.shape[0]

    def nbrs(idx):
        i, j = idx
        out = []
        for di_ in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if (di_ or dj) and 0 <= i + di_ < n_d:
                    out.append((i + di_, (j + dj) % n_az))
        return out

    peaks = [(i + lo - pad, j) for i, j in _local_maxima(smooth, nbrs)]

    def bin_gap(f, p):
        i, j = face_bin[f]
        dj = abs(j - p[1]) % n_az
        return max(abs(i - p[0]), min(dj, n_az - dj))

    support = _assign_support(faces, peaks, bin_gap, smooth_of=lambda p: smooth[p[0] - lo + pad, p[1]])
    out = []
    for p in peaks:
        sup = support[p]
        if len(sup) < params.min_support:
            continue
        theta = (p[1] + 0.5) * az_w
        n = np.array([np.cos(theta), np.sin(theta), 0.0])
        plane = Plane(n, (p[0] + 0.5) * params.distance_bin).canonical()
        out.append(_candidate(plane, sup))
    return _sorted_candidates(out)


def _assign_support(faces, peaks, gap, smooth_of) -> dict:
    """Each face supports the nearest peak within one bin (stronger peak on ties)."""
    support = {p: [] for p in peaks}
    if not peaks:
        return support
    for f in faces:
        best = None
        for p in peaks:
            g = gap(f, p)
            if g > 1:
                continue
            key = (g, -smooth_of(p), p)
            if best is None or key < best[0]:
                best = (key, p)
        if best is not None:
            support[best[1]].append(f)
    return support


def _candidate(plane: Plane, faces: Sequence[Face]) -> PlaneCandidate:
    fs = frozenset(faces)
    return PlaneCandidate(plane, fs, frozenset(i for f in fs for i in f))


def _sorted_candidates(cands: list[PlaneCandidate]) -> list[PlaneCandidate]:
    return sorted(cands, key=lambda c: (-c.support, c.plane.distance, tuple(c.plane.normal)))


def associate_landmarks(candidate: PlaneCandidate) -> set[int]:
    """Landmarks of the faces that voted for ``candidate``."""
    return {i for f in candidate.supporting_faces for i in f}


def plane_match_error(a: Plane, b: Plane) -> tuple[float, float]:
    """(normal angle, distance gap) between two planes, sign-agnostic."""
    s = 1.0 if float(a.normal @ b.normal) >= 0.0 else -1.0
    return angle_between_normals(a.normal, b.normal), abs(a.distance - s * b.distance)


def match_existing(
    candidates: Sequence[PlaneCandidate],
    existing: Sequence[Plane],
    normal_tol: float = np.radians(10.0),
    dist_tol: float = 0.10,
) -> tuple[list[tuple[int, int]], list[PlaneCandidate]]:
    """Pair candidates with already tracked planes.

    Returns ``(matched, new)`` where ``matched`` holds ``(candidate_index,
    existing_index)`` pairs and ``new`` the unmatched candidates in order.
    """
    matched = []
    new = []
    for ci, cand in enumerate(candidates):
        best = None
        for ei, plane in enumerate(existing):
            ang, dist = plane_match_error(cand.plane, plane)
            if ang <= normal_tol + 1e-12 and dist <= dist_tol + 1e-12:
                key = (ang, dist, ei)
                if best is None or key < best:
                    best = key
        if best is None:
            new.append(cand)
        else:
            matched.append((ci, best[2]))
    return matched, new


def detect_planes(mesh: Mesh3D, params: DetectorParams = DetectorParams()) -> list[PlaneCandidate]:
    """Horizontal then vertical candidates from one mesh snapshot."""
    horiz, vert = segment_faces_by_normal(mesh, np.radians(params.angle_tol_deg))
    return detect_horizontal_planes(horiz, mesh, params) + detect_vertical_planes(vert, mesh, params)
