"""Binned and windowed samples, frame-rate decimation and feature scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoders import FeatureSequence
from .take import Take

STATS = ("min", "max", "mean", "median", "std")
FPS_GRID = (10, 30, 60, 90)
WINDOW_GRID = (10, 100, 300)
FRAMES_PER_BIN_RANGE = (10, 1350)
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class DataParams:
    """How samples are cut: ``binned`` uses ``frames_per_bin``; ``windowed``
    uses ``fps_target`` and ``window_size``."""

    mode: str
    frames_per_bin: int | None = None
    fps_target: float | None = None
    window_size: int | None = None
    stride: int | None = None

    @classmethod
    def binned(cls, frames_per_bin: int) -> "DataParams":
        return cls("binned", frames_per_bin=int(frames_per_bin))

    @classmethod
    def windowed(cls, fps_target: float, window_size: int, stride: int | None = None) -> "DataParams":
        return cls("windowed", fps_target=float(fps_target), window_size=int(window_size),
                   stride=None if stride is None else int(stride))

    def sample_seconds(self, source_fps: float) -> float:
        if self.mode == "binned":
            return self.frames_per_bin / source_fps
        return self.window_size / self.fps_target

    def validate(self) -> None:
        """Check against the explored search ranges."""
        if self.mode == "binned":
            lo, hi = FRAMES_PER_BIN_RANGE
            if self.frames_per_bin is None or not lo <= self.frames_per_bin <= hi:
                raise ValueError(f"frames_per_bin={self.frames_per_bin} outside allowed range [{lo}, {hi}]")
        elif self.mode == "windowed":
            if self.fps_target not in FPS_GRID:
                raise ValueError(f"fps_target={self.fps_target} not one of {FPS_GRID}")
            if self.window_size not in WINDOW_GRID:
                raise ValueError(f"window_size={self.window_size} not one of {WINDOW_GRID}")
            if self.stride is not None and self.stride < 1:
                raise ValueError("stride must be >= 1")
        else:
            raise ValueError(f"unknown sampling mode {self.mode!r}")

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_json(cls, d: dict) -> "DataParams":
        return cls(**d)


# --- binned -------------------------------------------------------------------


def chunk_stats(chunk: np.ndarray) -> np.ndarray:
    """Five statistics per column of ``chunk (n, F)``, laid out feature-major.

    Sums are correctly rounded (``math.fsum``) so the result does not depend on
    memory layout or summation order; std is the population form.
    """
    n, width = chunk.shape
    srt = np.sort(chunk, axis=0)
    mid = n // 2
    median = srt[mid] if n % 2 else (srt[mid - 1] + srt[mid]) / 2.0
    mean = np.array([math.fsum(chunk[:, j]) for j in range(width)]) / n
    dev = chunk - mean
    var = np.array([math.fsum(dev[:, j] * dev[:, j]) for j in range(width)]) / n
    out = np.stack([srt[0], srt[-1], mean, median, np.sqrt(var)], axis=1)
    return out.reshape(-1)


def make_binned(seq: FeatureSequence, frames_per_bin: int) -> np.ndarray:
    """``(n_bins, 5 * width)`` statistic vectors over consecutive whole bins."""
    if frames_per_bin < 2:
        raise ValueError("frames_per_bin must be >= 2")
    n_bins = len(seq) // frames_per_bin
    width = seq.rows.shape[1]
    out = np.empty((n_bins, 5 * width))
    for b in range(n_bins):
        out[b] = chunk_stats(seq.rows[b * frames_per_bin:(b + 1) * frames_per_bin])
    return out


# --- windowed -----------------------------------------------------------------


def resample_indices(n: int, fps_source: float, fps_target: float) -> np.ndarray:
    """Nearest source frame for each tick of a uniform target grid starting at t=0."""
    if fps_target > fps_source + 1e-9:
        raise ValueError(f"cannot upsample from {fps_source} to {fps_target} fps")
    ratio = fps_source / fps_target
    n_out = int(math.floor((n - 1) / ratio + 1e-9)) + 1 if n > 0 else 0
    idx = np.floor(np.arange(n_out) * ratio + 0.5 + 1e-9).astype(np.int64)
    return np.minimum(idx, n - 1)


def resample_take(take: Take, fps_target: float) -> Take:
    if fps_target == take.fps:
        return take
    idx = resample_indices(len(take), take.fps, fps_target)
    return take.with_data(take.data[idx], fps=float(fps_target))


def resample_rows(rows: np.ndarray, fps_source: float, fps_target: float) -> np.ndarray:
    if fps_target == fps_source:
        return rows
    return rows[resample_indices(len(rows), fps_source, fps_target)]


def make_windows(seq: FeatureSequence, fps_target: float, window_size: int,
                 stride: int | None = None) -> np.ndarray:
    """``(n, window_size, width)`` windows taken every ``stride`` resampled rows.

    ``stride`` defaults to ``window_size`` (non-overlapping).
    """
    stride = window_size if stride is None else stride
    if stride < 1 or window_size < 1:
        raise ValueError("window_size and stride must be >= 1")
    rows = resample_rows(seq.rows, seq.fps, fps_target)
    width = seq.rows.shape[1]
    if len(rows) < window_size:
        return np.empty((0, window_size, width))
    view = np.lib.stride_tricks.sliding_window_view(rows, window_size, axis=0)
    return np.ascontiguousarray(view[::stride].transpose(0, 2, 1))


# --- scaling ------------------------------------------------------------------


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray = field()

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_scaler(samples: np.ndarray) -> Scaler:
    """Per-feature statistics over every row of the training samples (last axis = feature)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("cannot fit a scaler on no samples")
    flat = samples.reshape(-1, samples.shape[-1])
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, samples: np.ndarray) -> np.ndarray:
    return scaler.transform(np.asarray(samples, dtype=float))


# --- sample sets --------------------------------------------------------------


@dataclass
class SampleSet:
    """Model-ready samples with integer labels indexing ``classes``.

    ``X`` is ``(n, 5*width)`` for binned or ``(n, window, width)`` for windowed
    samples. ``take_ids`` records the source take of every sample.
    """

    X: np.ndarray
    y: np.ndarray
    classes: list[str]
    take_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y)

    def to_text(self) -> str:
        lines = []
        for x, y in zip(self.X.reshape(len(self.y), -1), self.y):
            lines.append(self.classes[y] + "," + ",".join(repr(float(v)) for v in x))
        return "\n".join(lines) + "\n"


def samples_from_sequence(seq: FeatureSequence, params: DataParams, stride: int | None = None) -> np.ndarray:
    if params.mode == "binned":
        return make_binned(seq, params.frames_per_bin)
    if stride is None:
        stride = params.stride
    return make_windows(seq, params.fps_target, params.window_size, stride)


def build_sample_set(seqs, params: DataParams, classes: list[str], stride: int | None = None) -> SampleSet:
    xs, ys, tids = [], [], []
    index = {c: i for i, c in enumerate(classes)}
    for seq in seqs:
        x = samples_from_sequence(seq, params, stride)
        xs.append(x)
        ys.append(np.full(len(x), index[seq.subject_id], dtype=np.int64))
        tids.extend([seq.take_id] * len(x))
    if not xs:
        raise ValueError("no sequences given")
    return SampleSet(np.concatenate(xs), np.concatenate(ys), list(classes), tids)
