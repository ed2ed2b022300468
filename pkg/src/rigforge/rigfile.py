"""Rig text format: joints, root, skinning weights, hierarchy.

Line grammar:

    joints <name> <x> <y> <z>
    root <name>
    skin <vertex_idx> (<bone_name> <weight>)+
    hier <parent_name> <child_name>

A bone is named by its child joint, so every skin entry references a name
that appears in a hier line.  The writer is canonical: joints in hierarchy
preorder (children in name order), a single root line, skin lines ascending
by vertex with weights descending, hier lines in the same preorder.  Floats
render with Python's shortest round-trip repr, so parse -> write -> parse is
an identity and a second write is byte-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import RigFileError, SkeletonError
from .skeleton import Skeleton

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-3
WEIGHT_PRUNE = 1e-4


@dataclass
class RigFile:
    joint_names: list[str]
    joint_positions: np.ndarray  # (J, 3)
    root: int
    parents: np.ndarray  # (J,) index into joints, -1 at root
    skin: dict[int, list[tuple[str, float]]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.joint_positions = np.asarray(self.joint_positions, dtype=np.float64).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=np.int64)

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def skeleton(self) -> Skeleton:
        skel = Skeleton(self.joint_positions, self.parents, self.root,
                        names=list(self.joint_names))
        skel.validate()
        return skel

    def bone_names(self) -> list[str]:
        """Bone identifiers (child joint names), ordered by child index."""
        skel = self.skeleton()
        return [self.joint_names[c] for _p, c in skel.bones()]

    def dense_weights(self, n_vertices: int) -> np.ndarray:
        """(V, B) weight matrix in bone_names() column order."""
        cols = {name: i for i, name in enumerate(self.bone_names())}
        out = np.zeros((n_vertices, len(cols)))
        for v, entries in self.skin.items():
            if v >= n_vertices:
                raise RigFileError(f"skin vertex index {v} out of range")
            for name, w in entries:
                out[v, cols[name]] += w
        return out

    def validate(self):
        try:
            self.skeleton()
        except SkeletonError as e:
            raise RigFileError(str(e)) from e
        names = set(self.joint_names)
        if len(names) != len(self.joint_names):
            raise RigFileError("duplicate joint name")
        bone_set = set(self.bone_names())
        for v, entries in self.skin.items():
            for name, w in entries:
                if name not in names:
                    raise RigFileError(f"skin references unknown joint {name!r}")
                if name not in bone_set:
                    raise RigFileError(f"skin references {name!r} which is not a bone")
            total = sum(w for _n, w in entries)
            if abs(total - 1.0) > WEIGHT_SUM_TOL:
                raise RigFileError(f"vertex {v} weights sum to {total}")


def parse_rig(text: str) -> RigFile:
    names: list[str] = []
    positions: list[list[float]] = []
    root_name: str | None = None
    hier: list[tuple[str, str]] = []
    skin_raw: dict[int, list[tuple[str, float]]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "joints":
            if len(parts) != 5:
                raise RigFileError(f"line {lineno}: joints needs name and 3 coordinates")
            if parts[1] in names:
                raise RigFileError(f"line {lineno}: duplicate joint {parts[1]!r}")
            names.append(parts[1])
            try:
                positions.append([float(x) for x in parts[2:5]])
            except ValueError as e:
                raise RigFileError(f"line {lineno}: bad coordinate") from e
        elif tag == "root":
            if len(parts) != 2:
                raise RigFileError(f"line {lineno}: root needs exactly one name")
            if root_name is not None:
                raise RigFileError(f"line {lineno}: duplicate root")
            root_name = parts[1]
        elif tag == "skin":
            if len(parts) < 4 or (len(parts) - 2) % 2 != 0:
                raise RigFileError(f"line {lineno}: skin needs vertex and name/weight pairs")
            try:
                v = int(parts[1])
            except ValueError as e:
                raise RigFileError(f"line {lineno}: bad vertex index") from e
            entries = []
            for k in range(2, len(parts), 2):
                try:
                    entries.append((parts[k], float(parts[k + 1])))
                except ValueError as e:
                    raise RigFileError(f"line {lineno}: bad weight") from e
            skin_raw[v] = entries
        elif tag == "hier":
            if len(parts) != 3:
                raise RigFileError(f"line {lineno}: hier needs parent and child")
            hier.append((parts[1], parts[2]))
        else:
            raise RigFileError(f"line {lineno}: unknown keyword {tag!r}")

    if not names:
        raise RigFileError("rig has no joints")
    if root_name is None:
        raise RigFileError("rig has no root")
    index = {n: i for i, n in enumerate(names)}
    if root_name not in index:
        raise RigFileError(f"root {root_name!r} is not a joint")
    parents = np.full(len(names), -1, dtype=np.int64)
    for pn, cn in hier:
        if pn not in index or cn not in index:
            raise RigFileError(f"hier references unknown joint {pn!r} or {cn!r}")
        if parents[index[cn]] != -1:
            raise RigFileError(f"joint {cn!r} has two parents")
        parents[index[cn]] = index[pn]

    warnings: list[str] = []
    skin: dict[int, list[tuple[str, float]]] = {}
    for v, entries in skin_raw.items():
        for name, _w in entries:
            if name not in index:
                raise RigFileError(f"skin references unknown joint {name!r}")
        total = sum(w for _n, w in entries)
        if total <= 0:
            raise RigFileError(f"vertex {v} has non-positive total weight")
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            warnings.append(f"vertex {v} weights sum to {total:.6f}; renormalized")
            logger.warning(warnings[-1])
            entries = [(n, w / total) for n, w in entries]
        skin[v] = entries

    rig = RigFile(names, np.array(positions), index[root_name], parents, skin, warnings)
    rig.validate()
    return rig


def write_rig(rig: RigFile) -> str:
    """Canonical serialization (see module docstring)."""
    skel = rig.skeleton()
    order: list[int] = []
    stack = [rig.root]
    children: dict[int, list[int]] = {j: [] for j in range(rig.n_joints)}
    for j in range(rig.n_joints):
        p = int(rig.parents[j])
        if p >= 0:
            children[p].append(j)
    for kids in children.values():
        kids.sort(key=lambda c: rig.joint_names[c], reverse=True)
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(children[j])

    lines = []
    for j in order:
        x, y, z = (float(v) for v in rig.joint_positions[j])
        lines.append(f"joints {rig.joint_names[j]} {x!r} {y!r} {z!r}")
    lines.append(f"root {rig.joint_names[rig.root]}")
    for v in sorted(rig.skin):
        entries = sorted(rig.skin[v], key=lambda e: (-e[1], e[0]))
        flat = " ".join(f"{n} {float(w)!r}" for n, w in entries)
        lines.append(f"skin {v} {flat}")
    for j in order:
        if j != rig.root:
            lines.append(f"hier {rig.joint_names[int(rig.parents[j])]} {rig.joint_names[j]}")
    return "\n".join(lines) + "\n"


def rig_from_prediction(skeleton: Skeleton, dense_weights: np.ndarray | None,
                        prune: float = WEIGHT_PRUNE) -> RigFile:
    """Package a predicted skeleton and optional dense weights.

    Weights below the prune threshold are dropped and each vertex row is
    renormalized, mirroring the influence cutoff used by the metrics.
    """
    skeleton.validate()
    rig = RigFile(list(skeleton.names), skeleton.joints.copy(), skeleton.root,
                  skeleton.parents.copy())
    if dense_weights is not None:
        bone_names = rig.bone_names()
        if dense_weights.shape[1] != len(bone_names):
            raise RigFileError("weight columns do not match bone count")
        for v in range(len(dense_weights)):
            row = dense_weights[v]
            keep = row > prune
            if not keep.any():
                keep = row == row.max()
            kept = row[keep] / row[keep].sum()
            rig.skin[v] = [(bone_names[b], float(w))
                           for b, w in zip(np.flatnonzero(keep), kept)]
    rig.validate()
    return rig
