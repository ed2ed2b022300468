"""Rooted-tree animation skeletons."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SkeletonError


@dataclass
class Skeleton:
    """Joints plus a parent tree.  parents[root] == -1; bones are the
    (parent, child) segments, one per non-root joint."""

    joints: np.ndarray  # (J, 3)
    parents: np.ndarray  # (J,) int64
    root: int
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        if not self.names:
            self.names = [f"joint_{i}" for i in range(len(self.joints))]

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def bones(self) -> np.ndarray:
        """(B, 2) array of (parent, child) joint index pairs, ordered by child."""
        children = np.flatnonzero(self.parents >= 0)
        return np.stack([self.parents[children], children], axis=1)

    def bone_segments(self) -> np.ndarray:
        """(B, 2, 3) world-space segments, same order as bones()."""
        b = self.bones()
        return np.stack([self.joints[b[:, 0]], self.joints[b[:, 1]]], axis=1)

    def children(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.parents == j)

    def preorder(self) -> list[int]:
        """Depth-first order from the root, children by ascending index."""
        order = []
        stack = [self.root]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(sorted(self.children(j), reverse=True))
        return order

    def validate(self):
        n = self.n_joints
        if n == 0:
            raise SkeletonError("skeleton has no joints")
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1 or roots[0] != self.root:
            raise SkeletonError(f"expected single root {self.root}, parents mark {roots}")
        if (self.parents >= n).any():
            raise SkeletonError("parent index out of range")
        seen = self.preorder()
        if len(seen) != n or len(set(seen)) != n:
            raise SkeletonError("parent links do not form a tree reaching every joint")
        if len(self.bones()) != n - 1:
            raise SkeletonError("bone count must be joint count - 1")
        if len(self.names) != n or len(set(self.names)) != n:
            raise SkeletonError("joint names must be unique, one per joint")
