"""Take filtering, train/validation/test splitting and synthetic subjects."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat
from .take import Manifest, Take, TakeEntry, atomic_write_text, read_take, write_manifest, write_take

ROLES = ("train", "validation", "test")


@dataclass(frozen=True)
class FilterPolicy:
    min_take_seconds: float = 300.0
    movement_threshold: float = 0.001
    min_takes_per_subject: int = 3

    def __post_init__(self):
        if not (self.min_take_seconds > 0 and self.movement_threshold > 0
                and self.min_takes_per_subject > 0):
            raise ValueError("filter policy values must be positive")


@dataclass
class DatasetSplit:
    train: list[tuple[str, str]] = field(default_factory=list)
    validation: list[tuple[str, str]] = field(default_factory=list)
    test: list[tuple[str, str]] = field(default_factory=list)

    @property
    def subjects(self) -> list[str]:
        return sorted({s for s, _ in self.test})

    def role(self, name: str) -> list[tuple[str, str]]:
        return getattr(self, name)

    def to_json(self) -> dict:
        rows = [
            {"subject_id": s, "take_id": t, "role": role}
            for role in ROLES
            for s, t in self.role(role)
        ]
        return {"version": 1, "takes": rows}

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSplit":
        split = cls()
        for row in doc["takes"]:
            if row["role"] not in ROLES:
                raise ValueError(f"unknown role {row['role']!r}")
            split.role(row["role"]).append((str(row["subject_id"]), str(row["take_id"])))
        return split


def write_split(split: DatasetSplit, path) -> None:
    atomic_write_text(path, json.dumps(split.to_json(), indent=2) + "\n")


def read_split(path) -> DatasetSplit:
    return DatasetSplit.from_json(json.loads(Path(path).read_text()))


def movement_score(take: Take) -> float:
    """Largest per-channel standard deviation over the nine position channels (meters)."""
    return float(np.max(take.positions.reshape(len(take), 9).std(axis=0)))


def filter_and_split(manifest: Manifest, policy: FilterPolicy = FilterPolicy(),
                     movement=None) -> DatasetSplit:
    """Filter takes and assign shortest -> test, second shortest -> validation.

    ``movement`` maps take ids to movement scores; entries missing from it
    fall back to the manifest's ``movement_score`` and then to loading the
    take file. Subjects recorded in several sessions keep only the session
    with the greatest total length of surviving takes.
    """
    movement = {} if movement is None else movement
    split = DatasetSplit()
    for subject in sorted(manifest.subjects):
        kept: list[TakeEntry] = []
        for entry in manifest.subjects[subject]:
            if not entry.two_subjects or entry.seconds < policy.min_take_seconds:
                continue
            score = movement.get(entry.take_id, entry.movement_score)
            if score is None:
                score = movement_score(read_take(manifest.root / entry.path))
            if score < policy.movement_threshold:
                continue
            kept.append(entry)

        sessions: dict[str | None, list[TakeEntry]] = {}
        for entry in kept:
            sessions.setdefault(entry.session, []).append(entry)
        if len(sessions) > 1:
            best = max(sorted(sessions, key=str),
                       key=lambda s: sum(e.seconds for e in sessions[s]))
            kept = sessions[best]

        if len(kept) < max(policy.min_takes_per_subject, 3):
            continue
        kept.sort(key=lambda e: (e.frame_count / e.fps, e.take_id))
        split.test.append((subject, kept[0].take_id))
        split.validation.append((subject, kept[1].take_id))
        split.train.extend((subject, e.take_id) for e in kept[2:])
    if not split.test:
        raise ValueError("no subject survives filtering")
    return split


# --- synthetic subjects -------------------------------------------------------


def _band_noise(rng, t, n_channels, n_terms=6, fmax=1.5):
    """Sum of low-frequency sinusoids with random phases, unit-ish amplitude."""
    freqs = rng.uniform(0.05, fmax, (n_terms, n_channels))
    phases = rng.uniform(0, 2 * np.pi, (n_terms, n_channels))
    amps = rng.uniform(0.5, 1.0, (n_terms, n_channels)) / np.sqrt(n_terms)
    return np.einsum("kc,tkc->tc", amps, np.sin(2 * np.pi * freqs * t[:, None, None] + phases))


@dataclass
class _Signature:
    height: float
    home: np.ndarray
    facing: float
    head_pitch: float
    head_roll: float
    nod_freq: float
    nod_amp: float
    look_freq: float
    look_amp: float
    rest: np.ndarray            # (2, 3) wrist rest offsets in the body frame
    limb_freq: np.ndarray       # (2, 2) two gesture frequencies per wrist
    limb_amp: np.ndarray        # (2, 2, 3)
    limb_phase: np.ndarray      # (2, 2, 3) fixed phase coupling between axes
    wrist_base: np.ndarray      # (2, 4)
    wrist_rot_amp: np.ndarray   # (2, 3) radians
    activity_freq: float


def _signature(rng: np.random.Generator, home_radius: float, posture_spread: float) -> _Signature:
    r = home_radius * np.sqrt(rng.random())
    a = rng.uniform(0, 2 * np.pi)
    rest = np.array([[-0.2, -0.5, 0.2], [0.2, -0.5, 0.2]]) + rng.uniform(-posture_spread, posture_spread, (2, 3))
    base_axes = rng.normal(size=(2, 3))
    return _Signature(
        height=STANDARD_HEIGHT,
        home=np.array([r * np.cos(a), r * np.sin(a)]),
        # conversation partners face each other, so facing carries little identity
        facing=np.pi * rng.integers(0, 2) + rng.uniform(-0.05, 0.05),
        head_pitch=rng.uniform(-0.15, 0.05),
        head_roll=rng.uniform(-0.05, 0.05),
        nod_freq=rng.uniform(0.8, 2.5),
        nod_amp=rng.uniform(0.03, 0.12),
        look_freq=rng.uniform(0.08, 0.4),
        look_amp=rng.uniform(0.1, 0.4),
        rest=rest,
        limb_freq=rng.uniform(0.4, 2.5, (2, 2)),
        limb_amp=rng.uniform(0.005, 0.07, (2, 2, 3)),
        limb_phase=rng.uniform(0, 2 * np.pi, (2, 2, 3)),
        wrist_base=quat.from_axis_angle(base_axes, rng.uniform(0.1, 0.5, 2)),
        wrist_rot_amp=rng.uniform(0.05, 0.4, (2, 3)),
        activity_freq=rng.uniform(0.02, 0.08),
    )


# every subject shares one skeleton, as in retargeted motion-capture data
STANDARD_HEIGHT = 1.7

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


def _synth_take(sig: _Signature, t: np.ndarray, rng: np.random.Generator, noise: float,
                variability: float, home_shift: np.ndarray, facing_shift: float, sway: float = 0.03):
    n = len(t)
    tau = 2 * np.pi * t
    v = variability
    bn = _band_noise(rng, t, 16)
    slow = _band_noise(rng, t, 12, fmax=0.15)
    # intermittent gesturing: the envelope wanders between near-still and lively
    activity = np.clip(0.7 + v * 0.6 * slow[:, 0], 0.05, 1.5)
    limb_gain = 1.0 + v * 0.3 * rng.uniform(-1.0, 1.0, 2)

    yaw = sig.facing + facing_shift + 0.08 * bn[:, 0]
    body = np.zeros((n, 3))
    body[:, 0] = sig.home[0] + home_shift[0] + sway * bn[:, 1]
    body[:, 2] = sig.home[1] + home_shift[1] + sway * bn[:, 2]
    body_rot = quat.from_axis_angle(_Y, yaw)

    look = sig.look_amp * np.sin(sig.look_freq * tau + rng.uniform(0, 2 * np.pi)) + 0.05 * bn[:, 3]
    nod = sig.nod_amp * activity * np.sin(sig.nod_freq * tau + rng.uniform(0, 2 * np.pi))
    pitch = sig.head_pitch + nod + 0.03 * bn[:, 4] + v * 0.08 * slow[:, 1]
    roll = sig.head_roll + 0.03 * bn[:, 5] + v * 0.04 * slow[:, 2]
    head_rot = quat.quat_mul(
        quat.from_axis_angle(_Y, yaw + look),
        quat.quat_mul(quat.from_axis_angle(_X, pitch), quat.from_axis_angle(_Z, roll)),
    )
    head_local = np.stack([0.01 * bn[:, 6], sig.height + 0.01 * np.sin(sig.nod_freq * tau),
                           0.02 * bn[:, 7]], axis=1)
    head_pos = body + quat.rotate_vec(body_rot, head_local)

    positions = [head_pos]
    rotations = [head_rot]
    for k in range(2):
        phase0 = rng.uniform(0, 2 * np.pi, 2)
        gesture = np.zeros((n, 3))
        for m in range(2):
            arg = sig.limb_freq[k, m] * tau + phase0[m]
            gesture += sig.limb_amp[k, m] * np.sin(arg[:, None] + sig.limb_phase[k, m])
        gesture *= limb_gain[k] * activity[:, None]
        drift = v * 0.08 * slow[:, 3 + 3 * k:6 + 3 * k]
        local = (np.array([0.0, sig.height, 0.0]) + sig.rest[k] + gesture + drift
                 + noise * bn[:, 8 + 3 * k:11 + 3 * k])
        positions.append(body + quat.rotate_vec(body_rot, local))
        arg = sig.limb_freq[k, 0] * tau + phase0[0]
        wob = sig.wrist_rot_amp[k] * (limb_gain[k] * activity)[:, None] * np.sin(
            arg[:, None] + sig.limb_phase[k, 0])
        wob = wob + 0.05 * bn[:, 14 + k:15 + k] + v * 0.2 * slow[:, 9:12]
        local_rot = quat.quat_mul(
            quat.from_axis_angle(_X, wob[:, 0]),
            quat.quat_mul(quat.from_axis_angle(_Y, wob[:, 1]), quat.from_axis_angle(_Z, wob[:, 2])),
        )
        rotations.append(quat.quat_mul(body_rot, quat.quat_mul(sig.wrist_base[k], local_rot)))

    pos = np.stack(positions, axis=1)
    rot = np.stack(rotations, axis=1)
    rot = quat.hemisphere_continuous(np.concatenate([quat.canonicalize(rot[:1]), rot[1:]]))
    return pos, rot


def synth_generate(n_subjects: int, takes_per_subject: int, seconds_per_take: float,
                   fps: float = 90.0, seed: int = 0, vary_home: bool = False,
                   home_radius: float = 0.1, noise: float = 0.01, variability: float = 1.0,
                   posture_spread: float = 0.05, take_turn: float = 1.0, sway: float = 0.005,
                   out_dir=None) -> tuple[Manifest, list[Take]]:
    """Deterministic synthetic subjects with individual motion signatures.

    Each subject has a fixed home position and facing in the scene; every
    take turns the body by up to ``take_turn`` radians about that facing. With
    ``vary_home`` every take is additionally moved and turned at random, so
    scene-relative coordinates stop identifying subjects while body-relative
    ones are unchanged. When ``out_dir`` is given, takes and ``manifest.json``
    are written there.
    """
    if n_subjects < 2 or takes_per_subject < 3:
        raise ValueError("need at least 2 subjects and 3 takes per subject")
    if not (seconds_per_take > 0 and fps > 0):
        raise ValueError("seconds_per_take and fps must be positive")
    n_frames = int(round(seconds_per_take * fps))
    if n_frames < 2:
        raise ValueError("takes must have at least 2 frames")
    t = np.arange(n_frames) / fps

    takes: list[Take] = []
    subjects: dict[str, list[TakeEntry]] = {}
    width = max(2, len(str(n_subjects)))
    for s in range(n_subjects):
        subject_id = f"S{s + 1:0{width}d}"
        sig = _signature(np.random.default_rng([seed, s]), home_radius, posture_spread)
        entries = []
        for k in range(takes_per_subject):
            take_id = f"{subject_id}_t{k:02d}"
            rng = np.random.default_rng([seed, s, k, 1])
            shift = np.zeros(2)
            turn = np.random.default_rng([seed, s, k, 3]).uniform(-take_turn, take_turn)
            if vary_home:
                vr = np.random.default_rng([seed, s, k, 2])
                shift = vr.uniform(-3.0, 3.0, 2)
                turn += vr.uniform(-np.pi, np.pi)
            pos, rot = _synth_take(sig, t, rng, noise, variability, shift, turn, sway)
            take = Take.from_arrays(subject_id, take_id, fps, pos, rot)
            takes.append(take)
            entries.append(TakeEntry(take_id, f"takes/{take_id}.csv", float(fps), n_frames,
                                     session=f"session_{s + 1:0{width}d}",
                                     movement_score=movement_score(take)))
        subjects[subject_id] = entries

    manifest = Manifest(subjects, root=Path(out_dir) if out_dir is not None else Path())
    if out_dir is not None:
        out = Path(out_dir)
        for take, (_, entry) in zip(takes, manifest.entries()):
            write_take(take, out / entry.path)
        write_manifest(manifest, out / "manifest.json")
    return manifest, takes
