"""Kinematic skeleton: joint tree, bone offsets, and the text file format.

The skeleton file is a plain text document with one joint per line:

    <name> <parent-name or -> <dx> <dy> <dz>

Lines starting with '#' are comments.  Joints must appear before any of
their children; the single root uses '-' as its parent.  Offsets are in
meters, expressed in the parent's local frame (+x forward, +y left,
+z up).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

JOINT_COUNT = 22
ROOT_SENTINEL = -1

# Controllable joints, in the fixed order used by masks and intention tokens.
CONTROL_JOINT_NAMES = (
    "pelvis",
    "left_ankle",
    "right_ankle",
    "head",
    "left_wrist",
    "right_wrist",
)
CONTROL_SET_SIZE = len(CONTROL_JOINT_NAMES)


@dataclass(frozen=True)
class KinematicSkeleton:
    """Joint tree with per-joint bone offsets.

    parent[i] is the index of joint i's parent; the root (index 0) uses -1.
    Joints are topologically ordered: parent[i] < i for every non-root.
    """

    names: tuple
    parent: np.ndarray  # (J,) int
    offsets: np.ndarray  # (J, 3) float64

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "offsets", offsets)
        n = len(self.names)
        if parent.shape != (n,) or offsets.shape != (n, 3):
            raise ValueError("skeleton table shapes are inconsistent")
        roots = np.nonzero(parent == ROOT_SENTINEL)[0]
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("skeleton must have exactly one root at index 0")
        for i in range(1, n):
            if not 0 <= parent[i] < i:
                raise ValueError(f"joint {self.names[i]} is not topologically ordered")
        missing = [j for j in CONTROL_JOINT_NAMES if j not in self.names]
        if missing:
            raise ValueError(f"skeleton lacks control joints: {missing}")

    @property
    def joint_count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def control_indices(self) -> np.ndarray:
        """Joint indices of the six controllable joints, in mask order."""
        return np.array([self.index(n) for n in CONTROL_JOINT_NAMES], dtype=np.int64)

    def serialize(self) -> str:
        lines = []
        for i, name in enumerate(self.names):
            p = "-" if self.parent[i] == ROOT_SENTINEL else self.names[self.parent[i]]
            ox, oy, oz = self.offsets[i]
            lines.append(f"{name} {p} {ox:.6f} {oy:.6f} {oz:.6f}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        """Stable 16-hex-digit hash of the canonical serialization."""
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def save(self, path):
        with open(path, "w") as f:
            f.write("# motionforge skeleton definition\n")
            f.write("# <name> <parent-name|-> <dx> <dy> <dz>\n")
            f.write(self.serialize())


def parse_skeleton(text: str) -> KinematicSkeleton:
    names, parents, offsets = [], [], []
    index = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"bad skeleton line: {raw!r}")
        name, parent_name = parts[0], parts[1]
        if name in index:
            raise ValueError(f"duplicate joint {name}")
        if parent_name == "-":
            parents.append(ROOT_SENTINEL)
        else:
            if parent_name not in index:
                raise ValueError(f"parent {parent_name} of {name} not defined yet")
            parents.append(index[parent_name])
        index[name] = len(names)
        names.append(name)
        offsets.append([float(v) for v in parts[2:5]])
    return KinematicSkeleton(tuple(names), np.array(parents), np.array(offsets))


def load_skeleton(path) -> KinematicSkeleton:
    with open(path) as f:
        return parse_skeleton(f.read())


def default_skeleton() -> KinematicSkeleton:
    text = resources.files("motionforge.assets").joinpath("default_skeleton.txt").read_text()
    return parse_skeleton(text)
