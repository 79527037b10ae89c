"""Per-keyframe 2D Delaunay meshing lifted to 3D, and horizon mesh upkeep."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .delaunay import delaunay

Face = tuple[int, int, int]


def make_face(a: int, b: int, c: int) -> Face:
    """Canonical face: vertex ids in ascending order, so any permutation matches."""
    if a == b or b == c or a == c:
        raise ValueError(f"face vertices must be distinct, got {(a, b, c)}")
    return tuple(sorted((int(a), int(b), int(c))))  # type: ignore[return-value]


@dataclass(frozen=True)
class Keypoint:
    landmark_id: int
    pixel: tuple[float, float]


@dataclass
class Mesh3D:
    vertices: dict[int, np.ndarray] = field(default_factory=dict)
    faces: set[Face] = field(default_factory=set)

    def copy(self) -> "Mesh3D":
        return Mesh3D(dict(self.vertices), set(self.faces))

    def __len__(self) -> int:
        return len(self.faces)

    def face_array(self) -> np.ndarray:
        return np.array(sorted(self.faces), dtype=np.int64).reshape(-1, 3)

    def face_corners(self, faces: Sequence[Face] | None = None) -> np.ndarray:
        """``(F, 3, 3)`` corner coordinates of ``faces`` (all faces, sorted, by default)."""
        faces = sorted(self.faces) if faces is None else list(faces)
        if not faces:
            return np.empty((0, 3, 3))
        ids = np.array(sorted(self.vertices), dtype=np.int64)
        V = np.array([self.vertices[i] for i in ids.tolist()], dtype=float)
        return V[np.searchsorted(ids, np.array(faces, dtype=np.int64))]

    def check(self) -> None:
        for f in self.faces:
            for i in f:
                if i not in self.vertices:
                    raise ValueError(f"face {f} references missing vertex {i}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mesh3D):
            return NotImplemented
        if self.faces != other.faces or self.vertices.keys() != other.vertices.keys():
            return False
        return all(np.array_equal(v, other.vertices[k]) for k, v in self.vertices.items())


@dataclass(frozen=True)
class FilterParams:
    max_edge_length: float = 1.5
    max_edge_ratio: float = 10.0
    min_angle_deg: float = 3.0


def triangulate_2d(keypoints: Sequence[Keypoint]) -> set[Face]:
    """Delaunay faces over the keypoints of one frame, keyed by landmark id."""
    if len(keypoints) < 3:
        return set()
    ids = np.fromiter((k.landmark_id for k in keypoints), dtype=np.int64, count=len(keypoints))
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    if np.any(ids[1:] == ids[:-1]):
        raise ValueError("landmark ids must be unique within a frame")
    pix = np.array([keypoints[i].pixel for i in order], dtype=float)
    tris = np.sort(ids[delaunay(pix)], axis=1)
    return set(map(tuple, tris.tolist()))


def lift_to_3d(faces2d: Iterable[Face], landmarks: Mapping[int, np.ndarray]) -> Mesh3D:
    """Attach 3D landmark positions; faces with an unknown vertex are dropped."""
    faces = {f for f in faces2d if f[0] in landmarks and f[1] in landmarks and f[2] in landmarks}
    used = {i for f in faces for i in f}
    return Mesh3D({i: np.asarray(landmarks[i], dtype=float) for i in used}, faces)


def face_keep_mask(corners: np.ndarray, params: FilterParams) -> np.ndarray:
    """Boolean mask over ``(F, 3, 3)`` triangles passing every geometric filter."""
    if len(corners) == 0:
        return np.zeros(0, dtype=bool)
    e = np.stack(
        [corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 1], corners[:, 0] - corners[:, 2]],
        axis=1,
    )
    lengths = np.linalg.norm(e, axis=2)
    shortest = lengths.min(axis=1)
    longest = lengths.max(axis=1)
    # interior angle at each corner from the two edges leaving it
    u = -np.roll(e, 1, axis=1)
    dots = (u * e).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = dots / (np.roll(lengths, 1, axis=1) * lengths)
    angles = np.degrees(np.arccos(np.clip(np.nan_to_num(c, nan=1.0), -1.0, 1.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(shortest > 0, longest / shortest, np.inf)
    return (
        (longest <= params.max_edge_length)
        & (ratio <= params.max_edge_ratio)
        & (angles.min(axis=1) >= params.min_angle_deg)
    )


def filter_faces(mesh: Mesh3D, params: FilterParams = FilterParams()) -> Mesh3D:
    faces = list(mesh.faces)
    keep = face_keep_mask(mesh.face_corners(faces), params)
    kept = {f for f, k in zip(faces, keep.tolist()) if k}
    used = {i for f in kept for i in f}
    return Mesh3D({i: mesh.vertices[i] for i in used}, kept)


def update_mesh(
    global_mesh: Mesh3D,
    local: Mesh3D,
    marginalized_ids: Iterable[int] = (),
    positions: Mapping[int, np.ndarray] | None = None,
) -> Mesh3D:
    """Merge ``local`` into ``global_mesh`` and prune faces on marginalized landmarks.

    Vertex positions are refreshed from ``local`` and then from ``positions``
    (latest estimates) when given. Holes left by pruning are not repaired.
    """
    gone = set(marginalized_ids)
    faces = {f for f in global_mesh.faces | local.faces if gone.isdisjoint(f)}
    used = {i for f in faces for i in f}
    vertices = {}
    for i in sorted(used):
        if positions is not None and i in positions:
            vertices[i] = np.asarray(positions[i], dtype=float)
        elif i in local.vertices:
            vertices[i] = local.vertices[i]
        else:
            vertices[i] = global_mesh.vertices[i]
    return Mesh3D(vertices, faces)


# --- PLY -------------------------------------------------------------------


def write_mesh_ply(mesh: Mesh3D, path: str | Path) -> None:
    """ASCII PLY with densely remapped vertex indices (ascending landmark id)."""
    ids = sorted(mesh.vertices)
    index = {lid: k for k, lid in enumerate(ids)}
    faces = sorted(mesh.faces)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(ids)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines += ["{:.9g} {:.9g} {:.9g}".format(*mesh.vertices[i]) for i in ids]
    lines += ["3 {} {} {}".format(*(index[i] for i in f)) for f in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def write_point_cloud_ply(points: np.ndarray, path: str | Path) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = ["{:.9g} {:.9g} {:.9g}".format(*p) for p in points]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Minimal ASCII PLY reader returning ``(vertices, faces)``."""
    lines = Path(path).read_text().splitlines()
    n_vert = n_face = 0
    k = 0
    while lines[k] != "end_header":
        parts = lines[k].split()
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        k += 1
    body = lines[k + 1 :]
    verts = np.array([[float(x) for x in line.split()] for line in body[:n_vert]]).reshape(-1, 3)
    faces = np.array(
        [[int(x) for x in line.split()[1:]] for line in body[n_vert : n_vert + n_face]], dtype=np.int64
    ).reshape(-1, 3)
    return verts, faces
