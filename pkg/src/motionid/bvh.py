"""BVH parsing, forward kinematics and three-point extraction.

Supported grammar (whitespace tolerant)::

    HIERARCHY
    ROOT <name> { OFFSET x y z  CHANNELS n c1..cn  (JOINT ... | End Site {...})* }
    MOTION
    Frames: <int>
    Frame Time: <float>
    <one row of channel values per frame>

Each joint's local rotation composes its Euler channels in declared order,
intrinsically: ``Zrotation Xrotation Yrotation`` means ``Rz @ Rx @ Ry``.
Position channels are honored on any joint and added to the offset.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .quat import Pose
from .take import Take

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
_MAX_DEPTH = 256
_AXES = {"X": np.array([1.0, 0.0, 0.0]), "Y": np.array([0.0, 1.0, 0.0]),
         "Z": np.array([0.0, 0.0, 1.0])}


class BvhError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class BvhJoint:
    name: str
    offset: np.ndarray
    channels: list[str] = field(default_factory=list)
    children: list["BvhJoint"] = field(default_factory=list)
    end_site: np.ndarray | None = None

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class BvhClip:
    root: BvhJoint
    frame_time: float
    frames: np.ndarray

    def joints(self) -> list[BvhJoint]:
        return list(self.root.walk())

    def joint_names(self) -> list[str]:
        return [j.name for j in self.root.walk()]

    def channel_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for j in self.root.walk():
            out[j.name] = slice(start, start + len(j.channels))
            start += len(j.channels)
        return out

    @property
    def n_channels(self) -> int:
        return sum(len(j.channels) for j in self.root.walk())


# --- parsing ------------------------------------------------------------------

_TOKEN = re.compile(r"\{|\}|[^\s{}]+")


def _tokenize(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for m in _TOKEN.finditer(line):
            yield m.group(0), lineno


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def _line(self):
        if self.pos < len(self.tokens):
            return self.tokens[self.pos][1]
        return self.tokens[-1][1] if self.tokens else 1

    def peek(self):
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def next(self, what="token"):
        if self.pos >= len(self.tokens):
            raise BvhError(f"unexpected end of input, expected {what}", self._line())
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, word):
        tok, line = self.next(repr(word))
        if tok != word:
            raise BvhError(f"expected {word!r}, got {tok!r}", line)
        return line

    def number(self, kind=float):
        tok, line = self.next("number")
        try:
            val = kind(tok)
        except ValueError:
            raise BvhError(f"expected a number, got {tok!r}", line) from None
        if kind is float and not np.isfinite(val):
            raise BvhError(f"non-finite number {tok!r}", line)
        return val

    def vec3(self):
        return np.array([self.number(), self.number(), self.number()])

    def joint_body(self, name, seen, depth=0):
        if depth > _MAX_DEPTH:
            raise BvhError("skeleton nesting too deep", self._line())
        if name in seen:
            raise BvhError(f"duplicate joint name {name!r}", self._line())
        seen.add(name)
        self.expect("{")
        self.expect("OFFSET")
        joint = BvhJoint(name, self.vec3())
        if self.peek() == "CHANNELS":
            self.next()
            line = self._line()
            n = self.number(int)
            if n not in (0, 3, 6):
                raise BvhError(f"channel count must be 0, 3 or 6, got {n}", line)
            for _ in range(n):
                ch, cline = self.next("channel name")
                if ch not in POSITION_CHANNELS + ROTATION_CHANNELS:
                    raise BvhError(f"unknown channel {ch!r}", cline)
                if ch in joint.channels:
                    raise BvhError(f"repeated channel {ch!r}", cline)
                joint.channels.append(ch)
        while True:
            tok, line = self.next("'}'")
            if tok == "}":
                return joint
            if tok == "JOINT":
                child_name, _ = self.next("joint name")
                joint.children.append(self.joint_body(child_name, seen, depth + 1))
            elif tok == "End":
                self.expect("Site")
                self.expect("{")
                self.expect("OFFSET")
                joint.end_site = self.vec3()
                self.expect("}")
            else:
                raise BvhError(f"unexpected token {tok!r} in joint {name!r}", line)

    def hierarchy(self) -> BvhJoint:
        self.expect("HIERARCHY")
        self.expect("ROOT")
        name, _ = self.next("root name")
        root = self.joint_body(name, set())
        if self.pos < len(self.tokens):
            tok, line = self.tokens[self.pos]
            raise BvhError(f"unexpected token {tok!r} after the root joint", line)
        return root

    def motion_header(self):
        self.expect("MOTION")
        self.expect("Frames:")
        line = self._line()
        n_frames = self.number(int)
        if n_frames < 0:
            raise BvhError("negative frame count", line)
        self.expect("Frame")
        self.expect("Time:")
        line = self._line()
        frame_time = self.number()
        if not frame_time > 0:
            raise BvhError(f"frame time must be positive, got {frame_time}", line)
        return n_frames, frame_time, line


def _tokens(lines, first_lineno):
    out = []
    for k, line in enumerate(lines):
        out.extend((m.group(0), first_lineno + k) for m in _TOKEN.finditer(line))
    return out


def parse_bvh(text: str) -> BvhClip:
    lines = text.splitlines()
    motion_at = next((i for i, ln in enumerate(lines) if ln.strip().startswith("MOTION")), None)
    if motion_at is None:
        # still report hierarchy syntax errors before the missing section
        _Parser(_tokens(lines, 1)).hierarchy()
        raise BvhError("missing MOTION section", len(lines) or 1)
    root = _Parser(_tokens(lines[:motion_at], 1)).hierarchy()

    # MOTION / Frames: / Frame Time: occupy the next few lines; data follows
    head_lines = lines[motion_at:motion_at + 8]
    mp = _Parser(_tokens(head_lines, motion_at + 1))
    n_frames, frame_time, time_line = mp.motion_header()
    if mp.pos < len(mp.tokens) and mp.tokens[mp.pos][1] == time_line:
        raise BvhError(f"unexpected token {mp.tokens[mp.pos][0]!r}", time_line)

    width = sum(len(j.channels) for j in root.walk())
    data = [(time_line + 1 + k, ln) for k, ln in enumerate(lines[time_line:]) if ln.strip()]
    if width == 0 and not data:
        # a skeleton without channels has empty frame rows
        return BvhClip(root, frame_time, np.zeros((n_frames, 0)))
    if len(data) != n_frames:
        raise BvhError(f"frame count mismatch: header declares {n_frames}, found {len(data)} rows")
    frames = np.empty((n_frames, width))
    for i, (ln, text_row) in enumerate(data):
        cells = text_row.split()
        if len(cells) != width:
            raise BvhError(f"channel-count mismatch: expected {width} values, got {len(cells)}", ln)
        try:
            frames[i] = [float(c) for c in cells]
        except ValueError as exc:
            raise BvhError(str(exc), ln) from None
        if not np.all(np.isfinite(frames[i])):
            raise BvhError("non-finite channel value", ln)
    return BvhClip(root, frame_time, frames)


def load_bvh(path) -> BvhClip:
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_bvh(fh.read())


def dump_bvh(clip: BvhClip) -> str:
    """Serialize a clip back to BVH text (channel values at full precision)."""
    out = ["HIERARCHY"]

    def emit(joint: BvhJoint, depth: int, keyword: str):
        pad = "  " * depth
        out.append(f"{pad}{keyword} {joint.name}")
        out.append(f"{pad}{{")
        out.append(f"{pad}  OFFSET " + " ".join(repr(float(v)) for v in joint.offset))
        out.append(f"{pad}  CHANNELS {len(joint.channels)} " + " ".join(joint.channels))
        for child in joint.children:
            emit(child, depth + 1, "JOINT")
        if joint.end_site is not None:
            out.append(f"{pad}  End Site")
            out.append(f"{pad}  {{")
            out.append(f"{pad}    OFFSET " + " ".join(repr(float(v)) for v in joint.end_site))
            out.append(f"{pad}  }}")
        out.append(f"{pad}}}")

    emit(clip.root, 0, "ROOT")
    out.append("MOTION")
    out.append(f"Frames: {clip.frames.shape[0]}")
    out.append(f"Frame Time: {clip.frame_time!r}")
    for row in clip.frames:
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


# --- kinematics ---------------------------------------------------------------


def _local_transform(joint: BvhJoint, values: np.ndarray):
    """Local translation ``(F, 3)`` and rotation ``(F, 4)`` for channel ``values (F, n)``."""
    n = values.shape[0]
    trans = np.tile(joint.offset, (n, 1))
    rot = np.tile(quat.IDENTITY, (n, 1))
    for k, ch in enumerate(joint.channels):
        if ch in POSITION_CHANNELS:
            trans[:, POSITION_CHANNELS.index(ch)] += values[:, k]
        else:
            elem = quat.from_axis_angle(_AXES[ch[0]], np.radians(values[:, k]))
            rot = quat.quat_mul(rot, elem)
    return trans, rot


def world_poses(clip: BvhClip, frames=slice(None), names=None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """World ``(positions (F,3), rotations (F,4))`` per joint for a frame selection.

    With ``names`` given, only the ancestors of those joints are evaluated.
    """
    values = np.atleast_2d(clip.frames[frames])
    slices = clip.channel_slices()
    needed = None
    if names is not None:
        needed = set()
        parents = {}
        for j in clip.root.walk():
            for c in j.children:
                parents[c.name] = j.name
        for nm in names:
            while nm is not None:
                needed.add(nm)
                nm = parents.get(nm)

    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def visit(joint, parent_pos, parent_rot):
        if needed is not None and joint.name not in needed:
            return
        trans, rot = _local_transform(joint, values[:, slices[joint.name]])
        if parent_pos is None:
            pos, wrot = trans, rot
        else:
            pos = parent_pos + quat.rotate_vec(parent_rot, trans)
            wrot = quat.quat_mul(parent_rot, rot)
        out[joint.name] = (pos, wrot)
        for child in joint.children:
            visit(child, pos, wrot)

    visit(clip.root, None, None)
    return out


def forward_kinematics(clip: BvhClip, frame_index: int) -> dict[str, Pose]:
    n = clip.frames.shape[0]
    if not 0 <= frame_index < n:
        raise IndexError(f"frame {frame_index} out of range [0, {n})")
    poses = world_poses(clip, slice(frame_index, frame_index + 1))
    return {name: Pose(p[0], r[0]) for name, (p, r) in poses.items()}


def axis_matrix(spec: str) -> np.ndarray:
    """Signed axis permutation, e.g. ``"x,z,-y"`` maps source (x, y, z) to (x, z, -y).

    Only proper rotations are accepted (determinant +1) so quaternions map by
    permuting their vector part.
    """
    parts = [p.strip().lower() for p in spec.split(",")]
    if len(parts) != 3:
        raise ValueError(f"axis spec needs three entries, got {spec!r}")
    m = np.zeros((3, 3))
    for row, p in enumerate(parts):
        sign = -1.0 if p.startswith("-") else 1.0
        ax = p.lstrip("+-")
        if ax not in ("x", "y", "z"):
            raise ValueError(f"bad axis {p!r} in {spec!r}")
        m[row, "xyz".index(ax)] = sign
    if not np.isclose(np.linalg.det(m), 1.0):
        raise ValueError(f"axis spec {spec!r} is not a proper rotation")
    return m


def extract_three_point(
    clip: BvhClip,
    head_name: str,
    left_name: str,
    right_name: str,
    unit_scale: float,
    subject_id: str = "",
    take_id: str = "",
    axes: str | None = None,
) -> Take:
    """World poses of three joints as a Take, positions scaled to meters.

    Quaternions are sign-canonicalized on the first frame and then kept
    hemisphere-continuous over time.
    """
    available = clip.joint_names()
    for nm in (head_name, left_name, right_name):
        if nm not in available:
            raise KeyError(f"unknown joint {nm!r}; available: {', '.join(available)}")
    if clip.frames.shape[0] == 0:
        raise BvhError("clip has no frames")
    poses = world_poses(clip, names=(head_name, left_name, right_name))
    m = axis_matrix(axes) if axes else np.eye(3)
    positions, rotations = [], []
    for nm in (head_name, left_name, right_name):
        pos, rot = poses[nm]
        pos = unit_scale * pos @ m.T
        rot = np.concatenate([rot[:, :3] @ m.T, rot[:, 3:]], axis=1)
        rot = quat.hemisphere_continuous(np.concatenate([quat.canonicalize(rot[:1]), rot[1:]]))
        positions.append(pos)
        rotations.append(rot)
    fps = 1.0 / clip.frame_time
    # frame times are usually printed with ~6 digits (0.011111 for 90 fps)
    if abs(fps - round(fps)) < 0.01:
        fps = float(round(fps))
    return Take.from_arrays(
        subject_id, take_id, fps,
        np.stack(positions, axis=1), np.stack(rotations, axis=1),
    )
