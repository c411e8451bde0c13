"""Takes (three-point pose streams), the take file format and the manifest.

A take file is comma-separated text with a ``frame`` column followed by 21
value columns (position and quaternion for head, left wrist, right wrist).
Subject, take id and frame rate live in a JSON sidecar next to it
(``<name>.csv`` -> ``<name>.meta.json``).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quat import MotionFrame, Pose

DEVICES = ("head", "lw", "rw")
TAKE_COLUMNS = tuple(
    f"{dev}_{comp}" for dev in DEVICES for comp in ("px", "py", "pz", "qx", "qy", "qz", "qw")
)
TAKE_HEADER = ("frame",) + TAKE_COLUMNS


class TakeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Take:
    """One continuous recording of one subject.

    ``data`` has shape ``(T, 21)`` in ``TAKE_COLUMNS`` order.
    """

    subject_id: str
    take_id: str
    fps: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != 21:
            raise ValueError(f"take data must be (T, 21), got {data.shape}")
        if data.shape[0] == 0:
            raise ValueError("take has no frames")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(data)):
            raise ValueError("take contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_arrays(cls, subject_id, take_id, fps, positions, rotations) -> "Take":
        """Build from ``positions (T, 3, 3)`` and ``rotations (T, 3, 4)``."""
        positions = np.asarray(positions, dtype=float)
        rotations = np.asarray(rotations, dtype=float)
        data = np.concatenate([positions, rotations], axis=-1).reshape(len(positions), 21)
        return cls(str(subject_id), str(take_id), float(fps), data)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fps

    @property
    def positions(self) -> np.ndarray:
        """``(T, 3, 3)``: device axis ordered head, left wrist, right wrist."""
        return self.data.reshape(-1, 3, 7)[:, :, :3]

    @property
    def rotations(self) -> np.ndarray:
        return self.data.reshape(-1, 3, 7)[:, :, 3:]

    def frame(self, i: int) -> MotionFrame:
        row = self.data[i].reshape(3, 7)
        return MotionFrame(*(Pose(r[:3], r[3:]) for r in row))

    def with_data(self, data: np.ndarray, fps: float | None = None) -> "Take":
        return Take(self.subject_id, self.take_id, self.fps if fps is None else fps, data)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def format_rows(header, rows: np.ndarray, index: bool = True) -> str:
    lines = [",".join(header)]
    for i, row in enumerate(rows):
        vals = ",".join(repr(float(v)) for v in row)
        lines.append(f"{i},{vals}" if index else vals)
    return "\n".join(lines) + "\n"


def write_take(take: Take, path) -> None:
    path = Path(path)
    atomic_write_text(path, format_rows(TAKE_HEADER, take.data))
    meta = {"subject_id": take.subject_id, "take_id": take.take_id, "fps": take.fps}
    atomic_write_text(_meta_path(path), json.dumps(meta, indent=2) + "\n")


def read_take(path) -> Take:
    path = Path(path)
    try:
        meta = json.loads(_meta_path(path).read_text())
        subject_id, take_id, fps = str(meta["subject_id"]), str(meta["take_id"]), float(meta["fps"])
    except FileNotFoundError:
        raise TakeFormatError(f"{path}: missing sidecar {_meta_path(path).name}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise TakeFormatError(f"{path}: malformed sidecar metadata ({exc})") from None

    lines = path.read_text().splitlines()
    if not lines:
        raise TakeFormatError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    for expected, got in zip(TAKE_HEADER, header):
        if expected != got:
            raise TakeFormatError(f"{path}: unexpected column {got!r} (expected {expected!r})")
    if len(header) != len(TAKE_HEADER):
        raise TakeFormatError(
            f"{path}: header has {len(header)} columns, expected {len(TAKE_HEADER)}"
        )

    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        raise TakeFormatError(f"{path}: no frames")
    rows = np.empty((len(body), 21))
    for i, ln in enumerate(body):
        cells = ln.split(",")
        if len(cells) != len(TAKE_HEADER):
            raise TakeFormatError(
                f"{path}:{i + 2}: expected {len(TAKE_HEADER)} columns, got {len(cells)}"
            )
        try:
            rows[i] = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise TakeFormatError(f"{path}:{i + 2}: {exc}") from None
    if not np.all(np.isfinite(rows)):
        bad = int(np.argwhere(~np.isfinite(rows))[0, 0])
        raise TakeFormatError(f"{path}:{bad + 2}: non-finite value")
    return Take(subject_id, take_id, fps, rows)


# --- manifest ---------------------------------------------------------------


@dataclass
class TakeEntry:
    take_id: str
    path: str
    fps: float
    frame_count: int
    session: str | None = None
    two_subjects: bool = True
    movement_score: float | None = None

    @property
    def seconds(self) -> float:
        return self.frame_count / self.fps

    def to_json(self) -> dict:
        out = {"take_id": self.take_id, "path": self.path, "fps": self.fps,
               "frame_count": self.frame_count}
        if self.session is not None:
            out["session"] = self.session
        if not self.two_subjects:
            out["two_subjects"] = False
        if self.movement_score is not None:
            out["movement_score"] = self.movement_score
        return out


@dataclass
class Manifest:
    subjects: dict[str, list[TakeEntry]]
    root: Path = field(default_factory=Path)

    def entries(self):
        for subject, takes in self.subjects.items():
            for entry in takes:
                yield subject, entry

    def find(self, subject_id: str, take_id: str) -> TakeEntry:
        for entry in self.subjects[subject_id]:
            if entry.take_id == take_id:
                return entry
        raise KeyError(f"no take {take_id!r} for subject {subject_id!r}")

    def load(self, subject_id: str, take_id: str) -> Take:
        return read_take(self.root / self.find(subject_id, take_id).path)

    def to_json(self) -> dict:
        return {
            "version": 1,
            "subjects": [
                {"subject_id": s, "takes": [e.to_json() for e in takes]}
                for s, takes in self.subjects.items()
            ],
        }


def write_manifest(manifest: Manifest, path) -> None:
    atomic_write_text(path, json.dumps(manifest.to_json(), indent=2) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        subjects: dict[str, list[TakeEntry]] = {}
        for subj in doc["subjects"]:
            entries = []
            for t in subj["takes"]:
                entries.append(
                    TakeEntry(
                        take_id=str(t["take_id"]),
                        path=str(t["path"]),
                        fps=float(t["fps"]),
                        frame_count=int(t["frame_count"]),
                        session=t.get("session"),
                        two_subjects=bool(t.get("two_subjects", True)),
                        movement_score=t.get("movement_score"),
                    )
                )
            subjects[str(subj["subject_id"])] = entries
    except (KeyError, TypeError, ValueError) as exc:
        raise TakeFormatError(f"{path}: malformed manifest ({exc})") from None
    return Manifest(subjects, root=path.parent)
