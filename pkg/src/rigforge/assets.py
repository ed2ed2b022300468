"""Bundled mini-dataset: five procedurally generated rigged characters.

Each character is a tree of capsules around its bones, with reference
skinning weights computed from vertex-to-bone distances.  Characters are
bilaterally symmetric about x = 0, normalized to unit extent, and land in
the 1K-5K vertex range.  Everything is deterministic, so the dataset can be
regenerated at will or dumped to OBJ + rig files for the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import Mesh, write_obj
from .rigfile import RigFile, rig_from_prediction, write_rig
from .skeleton import Skeleton
from .voxel import point_segment_distance


@dataclass
class RiggedCharacter:
    name: str
    mesh: Mesh
    skeleton: Skeleton
    weights: np.ndarray  # (V, B) dense reference skinning

    def rig_file(self) -> RigFile:
        return rig_from_prediction(self.skeleton, self.weights)


def capsule_mesh(a, b, radius: float, n_radial: int = 10, n_cyl: int = 7,
                 n_cap: int = 3) -> Mesh:
    """Cylinder from a to b with spherical end caps."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = float(np.linalg.norm(axis))
    axis = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)

    rings = []  # (center, ring radius)
    for i in range(n_cap):
        lat = (i + 1) / (n_cap + 1) * np.pi / 2
        rings.append((a - axis * radius * np.cos(lat), radius * np.sin(lat)))
    for i in range(n_cyl):
        t = i / (n_cyl - 1) if n_cyl > 1 else 0.5
        rings.append((a + axis * (length * t), radius))
    for i in range(n_cap, 0, -1):
        lat = i / (n_cap + 1) * np.pi / 2
        rings.append((b + axis * radius * np.cos(lat), radius * np.sin(lat)))

    verts = [a - axis * radius]
    for center, r in rings:
        for k in range(n_radial):
            ang = 2 * np.pi * k / n_radial
            verts.append(center + r * (np.cos(ang) * e1 + np.sin(ang) * e2))
    verts.append(b + axis * radius)

    tris = []
    bottom, top = 0, len(verts) - 1
    first = 1
    for k in range(n_radial):
        tris.append((bottom, first + (k + 1) % n_radial, first + k))
    for ring in range(len(rings) - 1):
        r0 = first + ring * n_radial
        r1 = r0 + n_radial
        for k in range(n_radial):
            k2 = (k + 1) % n_radial
            tris.append((r0 + k, r0 + k2, r1 + k))
            tris.append((r0 + k2, r1 + k2, r1 + k))
    last = first + (len(rings) - 1) * n_radial
    for k in range(n_radial):
        tris.append((top, last + k, last + (k + 1) % n_radial))
    return Mesh(np.array(verts), np.array(tris, dtype=np.int64))


def _build_character(name: str, joints: list[tuple[str, str | None, tuple]],
                     radii: dict[str, float], n_radial: int = 10, n_cyl: int = 7,
                     n_cap: int = 3) -> RiggedCharacter:
    names = [j[0] for j in joints]
    index = {n: i for i, n in enumerate(names)}
    positions = np.array([j[2] for j in joints], dtype=np.float64)
    parents = np.array([index[j[1]] if j[1] is not None else -1 for j in joints],
                       dtype=np.int64)
    root = int(np.flatnonzero(parents < 0)[0])
    skeleton = Skeleton(positions, parents, root, names=list(names))
    skeleton.validate()

    segments = skeleton.bone_segments()
    bone_children = [c for _p, c in skeleton.bones()]
    parts = []
    for (p, c), seg in zip(skeleton.bones(), segments):
        r = radii.get(names[c], 0.05)
        parts.append(capsule_mesh(seg[0], seg[1], r, n_radial, n_cyl, n_cap))
    verts = np.concatenate([m.vertices for m in parts])
    tris = []
    offset = 0
    for m in parts:
        tris.append(m.triangles + offset)
        offset += m.n_vertices
    mesh = Mesh(verts, np.concatenate(tris))

    # reference skinning: squared falloff of segment distance, top-2 bones
    n_bones = len(segments)
    d = np.stack([point_segment_distance(mesh.vertices, s[0], s[1]) for s in segments], axis=1)
    scale = np.array([radii.get(names[c], 0.05) for c in bone_children])
    score = np.exp(-((d / (1.5 * scale[None, :])) ** 2))
    order = np.argsort(-score, axis=1)
    weights = np.zeros_like(score)
    rows = np.arange(len(verts))
    for slot in range(min(2, n_bones)):
        b = order[:, slot]
        weights[rows, b] = score[rows, b]
    weights /= weights.sum(axis=1, keepdims=True)

    # normalize mesh and skeleton into the shared frame
    centroid = mesh.vertices.mean(axis=0)
    shifted = mesh.vertices - centroid
    extent = (shifted.max(axis=0) - shifted.min(axis=0)).max()
    mesh = Mesh(shifted / extent, mesh.triangles)
    skeleton = Skeleton((positions - centroid) / extent, parents, root, names=list(names))
    return RiggedCharacter(name, mesh, skeleton, weights)


def make_biped() -> RiggedCharacter:
    joints = [
        ("pelvis", None, (0.0, 0.0, 0.0)),
        ("chest", "pelvis", (0.0, 0.0, 0.42)),
        ("head", "chest", (0.0, 0.0, 0.78)),
        ("hand_l", "chest", (-0.42, 0.0, 0.30)),
        ("hand_r", "chest", (0.42, 0.0, 0.30)),
        ("foot_l", "pelvis", (-0.16, 0.0, -0.48)),
        ("foot_r", "pelvis", (0.16, 0.0, -0.48)),
    ]
    radii = {"chest": 0.11, "head": 0.08, "hand_l": 0.05, "hand_r": 0.05,
             "foot_l": 0.06, "foot_r": 0.06}
    return _build_character("biped", joints, radii, n_radial=11, n_cyl=9, n_cap=3)


def make_quadruped() -> RiggedCharacter:
    joints = [
        ("hips", None, (0.0, -0.30, 0.0)),
        ("chest", "hips", (0.0, 0.34, 0.0)),
        ("head", "chest", (0.0, 0.62, 0.22)),
        ("tail", "hips", (0.0, -0.62, 0.14)),
        ("foot_fl", "chest", (-0.18, 0.30, -0.38)),
        ("foot_fr", "chest", (0.18, 0.30, -0.38)),
        ("foot_bl", "hips", (-0.18, -0.26, -0.38)),
        ("foot_br", "hips", (0.18, -0.26, -0.38)),
    ]
    radii = {"chest": 0.13, "head": 0.07, "tail": 0.045, "foot_fl": 0.05,
             "foot_fr": 0.05, "foot_bl": 0.05, "foot_br": 0.05}
    return _build_character("quadruped", joints, radii, n_radial=10, n_cyl=9, n_cap=3)


def make_serpent() -> RiggedCharacter:
    pts = [(0.0, t, 0.16 * np.sin(np.pi * t / 0.9)) for t in np.linspace(-0.9, 0.9, 6)]
    joints = [("seg_0", None, pts[0])]
    joints += [(f"seg_{i}", f"seg_{i - 1}", pts[i]) for i in range(1, 6)]
    radii = {f"seg_{i}": 0.085 - 0.008 * i for i in range(6)}
    return _build_character("serpent", joints, radii, n_radial=13, n_cyl=12, n_cap=4)


def make_spider() -> RiggedCharacter:
    joints = [
        ("body", None, (0.0, 0.0, 0.0)),
        ("head", "body", (0.0, 0.40, 0.06)),
        ("leg_fl", "body", (-0.44, 0.22, -0.26)),
        ("leg_fr", "body", (0.44, 0.22, -0.26)),
        ("leg_bl", "body", (-0.44, -0.26, -0.26)),
        ("leg_br", "body", (0.44, -0.26, -0.26)),
    ]
    radii = {"head": 0.10, "leg_fl": 0.045, "leg_fr": 0.045,
             "leg_bl": 0.045, "leg_br": 0.045}
    return _build_character("spider", joints, radii, n_radial=12, n_cyl=11, n_cap=4)


def make_bird() -> RiggedCharacter:
    joints = [
        ("body", None, (0.0, 0.0, 0.0)),
        ("head", "body", (0.0, 0.38, 0.18)),
        ("tail", "body", (0.0, -0.44, 0.04)),
        ("wing_l", "body", (-0.48, 0.02, 0.10)),
        ("wing_r", "body", (0.48, 0.02, 0.10)),
        ("feet", "body", (0.0, 0.04, -0.30)),
    ]
    radii = {"head": 0.09, "tail": 0.055, "wing_l": 0.05, "wing_r": 0.05, "feet": 0.045}
    return _build_character("bird", joints, radii, n_radial=12, n_cyl=11, n_cap=4)


def bundled_characters() -> list[RiggedCharacter]:
    """The fixed five-character training/testing mini-set."""
    return [make_biped(), make_quadruped(), make_serpent(), make_spider(), make_bird()]


def save_dataset(directory: str | Path) -> list[Path]:
    """Write each bundled character as <name>.obj plus <name>.rig."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for char in bundled_characters():
        obj_path = directory / f"{char.name}.obj"
        rig_path = directory / f"{char.name}.rig"
        obj_path.write_text(write_obj(char.mesh))
        rig_path.write_text(write_rig(char.rig_file()))
        written += [obj_path, rig_path]
    return written


def load_dataset(directory: str | Path) -> list[tuple[str, Mesh, RigFile]]:
    """Pair every <stem>.obj with its <stem>.rig."""
    from .mesh import load_and_normalize
    from .rigfile import parse_rig

    directory = Path(directory)
    out = []
    for obj_path in sorted(directory.glob("*.obj")):
        rig_path = obj_path.with_suffix(".rig")
        if not rig_path.exists():
            continue
        mesh = load_and_normalize(obj_path.read_bytes())
        rig = parse_rig(rig_path.read_text())
        out.append((obj_path.stem, mesh, rig))
    return out
