"""Scene-relative, body-relative and body-relative-velocity encodings.

Column layouts:

- ``sr``  (21): head, left wrist, right wrist, each ``px py pz qx qy qz qw``
  in the scene frame.
- ``br``  (18): left wrist, right wrist (7 each) in the head's heading frame,
  then the head's residual rotation with the heading removed (4).
- ``brv`` (18): the ``br`` layout, frame-to-frame: positional differences and
  relative rotations ``q_t * q_{t-1}^-1``.

The heading frame sits at the head position and keeps only the head's twist
about the world up axis, so wrist coordinates stay gravity aligned. Setting
``frame="head"`` uses the full head rotation instead.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat
from .take import Take, atomic_write_text, format_rows


class EncodingKind(str, enum.Enum):
    SR = "sr"
    BR = "br"
    BRV = "brv"

    @property
    def width(self) -> int:
        return 21 if self is EncodingKind.SR else 18


_POSE = ("px", "py", "pz", "qx", "qy", "qz", "qw")
COLUMNS = {
    EncodingKind.SR: tuple(f"{d}_{c}" for d in ("head", "lw", "rw") for c in _POSE),
    EncodingKind.BR: tuple(f"{d}_{c}" for d in ("lw", "rw") for c in _POSE)
    + ("head_qx", "head_qy", "head_qz", "head_qw"),
}
COLUMNS[EncodingKind.BRV] = tuple("d" + c for c in COLUMNS[EncodingKind.BR])
QUAT_GROUPS = {
    EncodingKind.SR: (slice(3, 7), slice(10, 14), slice(17, 21)),
    EncodingKind.BR: (slice(3, 7), slice(10, 14), slice(14, 18)),
    EncodingKind.BRV: (slice(3, 7), slice(10, 14), slice(14, 18)),
}
POS_GROUPS = {
    EncodingKind.SR: (slice(0, 3), slice(7, 10), slice(14, 17)),
    EncodingKind.BR: (slice(0, 3), slice(7, 10)),
    EncodingKind.BRV: (slice(0, 3), slice(7, 10)),
}


@dataclass(frozen=True)
class FeatureSequence:
    subject_id: str
    take_id: str
    kind: EncodingKind
    fps: float
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        kind = EncodingKind(self.kind)
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != kind.width:
            raise ValueError(f"{kind.value} rows must have {kind.width} columns, got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature rows contain non-finite values")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def columns(self) -> tuple[str, ...]:
        return COLUMNS[self.kind]


def encode_sr(take: Take) -> FeatureSequence:
    data = take.data.reshape(-1, 3, 7).copy()
    data[:, :, 3:] = quat.canonicalize(data[:, :, 3:])
    return FeatureSequence(take.subject_id, take.take_id, EncodingKind.SR, take.fps,
                           data.reshape(-1, 21))


def _br_rows(take: Take, up_axis, frame: str) -> np.ndarray:
    pos = take.positions
    rot = take.rotations
    head_pos, head_rot = pos[:, 0], rot[:, 0]
    _, heading = quat.swing_twist(head_rot, up_axis)
    if frame == "heading":
        ref = heading
    elif frame == "head":
        ref = head_rot
    else:
        raise ValueError(f"frame must be 'heading' or 'head', got {frame!r}")
    inv_ref = quat.quat_inverse(ref)
    out = np.empty((len(take), 18))
    for k, col in ((1, 0), (2, 7)):
        rel = quat.rotate_vec(inv_ref, pos[:, k] - head_pos)
        out[:, col:col + 3] = rel
        out[:, col + 3:col + 7] = quat.canonicalize(quat.quat_mul(inv_ref, rot[:, k]))
    residual = quat.quat_mul(quat.quat_inverse(heading), head_rot)
    # the residual has no rotation about the up axis; drop the rounding noise
    # there so it cannot act as a heading-dependent feature
    residual[:, :3] -= np.outer(residual[:, :3] @ up_axis, up_axis)
    out[:, 14:18] = quat.canonicalize(quat.normalize(residual))
    return out


def encode_br(take: Take, up_axis=quat.UP, frame: str = "heading") -> FeatureSequence:
    rows = _br_rows(take, np.asarray(up_axis, dtype=float), frame)
    return FeatureSequence(take.subject_id, take.take_id, EncodingKind.BR, take.fps, rows)


def br_to_brv(br: np.ndarray) -> np.ndarray:
    out = np.empty((br.shape[0] - 1, 18))
    for sl in POS_GROUPS[EncodingKind.BR]:
        out[:, sl] = br[1:, sl] - br[:-1, sl]
    for sl in QUAT_GROUPS[EncodingKind.BR]:
        out[:, sl] = quat.canonicalize(
            quat.quat_mul(br[1:, sl], quat.quat_inverse(br[:-1, sl]))
        )
    return out


def encode_brv(take: Take, up_axis=quat.UP, frame: str = "heading") -> FeatureSequence:
    if len(take) < 2:
        raise ValueError("velocity encoding needs at least 2 frames")
    br = _br_rows(take, np.asarray(up_axis, dtype=float), frame)
    return FeatureSequence(take.subject_id, take.take_id, EncodingKind.BRV, take.fps,
                           br_to_brv(br))


def encode(take: Take, kind, up_axis=quat.UP, frame: str = "heading") -> FeatureSequence:
    kind = EncodingKind(kind)
    if kind is EncodingKind.SR:
        return encode_sr(take)
    if kind is EncodingKind.BR:
        return encode_br(take, up_axis, frame)
    return encode_brv(take, up_axis, frame)


def integrate_brv(first_br_row: np.ndarray, brv: np.ndarray) -> np.ndarray:
    """Rebuild BR rows from the first BR row and the BRV deltas (up to quaternion sign)."""
    out = np.empty((brv.shape[0] + 1, 18))
    out[0] = first_br_row
    for t in range(brv.shape[0]):
        for sl in POS_GROUPS[EncodingKind.BR]:
            out[t + 1, sl] = out[t, sl] + brv[t, sl]
        for sl in QUAT_GROUPS[EncodingKind.BR]:
            out[t + 1, sl] = quat.quat_mul(brv[t, sl], out[t, sl])
    return out


def write_features(seq: FeatureSequence, path) -> None:
    atomic_write_text(path, format_rows(("frame",) + seq.columns, seq.rows))


def read_features(path, subject_id: str, take_id: str, kind, fps: float) -> FeatureSequence:
    kind = EncodingKind(kind)
    path = Path(path)
    lines = path.read_text().splitlines()
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != ("frame",) + COLUMNS[kind]:
        raise ValueError(f"{path}: header does not match the {kind.value} layout")
    rows = np.array([[float(c) for c in ln.split(",")[1:]] for ln in lines[1:] if ln.strip()])
    return FeatureSequence(subject_id, take_id, kind, fps, rows.reshape(-1, kind.width))
