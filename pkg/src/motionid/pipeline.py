"""From raw takes to model-ready samples under one encoding and sampling choice."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .encoders import EncodingKind, FeatureSequence, encode
from .sampling import DataParams, SampleSet, build_sample_set, resample_take
from .take import Take


@dataclass(frozen=True)
class Pipeline:
    """Encoding plus sampling. Windowed pipelines decimate the take before
    encoding so velocity features span one target frame period."""

    encoding: EncodingKind
    params: DataParams
    frame: str = "heading"
    up_axis: tuple = field(default=tuple(quat.UP))

    def __post_init__(self):
        object.__setattr__(self, "encoding", EncodingKind(self.encoding))

    def sequence(self, take: Take) -> FeatureSequence:
        if self.params.mode == "windowed":
            take = resample_take(take, self.params.fps_target)
        return encode(take, self.encoding, np.asarray(self.up_axis), self.frame)

    def sample_rows(self) -> int:
        """Rows of the encoded sequence consumed by one sample."""
        return self.params.frames_per_bin if self.params.mode == "binned" else self.params.window_size

    def sample_seconds(self, source_fps: float) -> float:
        return self.params.sample_seconds(source_fps)

    def sample_set(self, takes, classes, stride: int | None = None) -> SampleSet:
        return build_sample_set([self.sequence(t) for t in takes], self.params, classes, stride)

    def to_json(self) -> dict:
        return {"encoding": self.encoding.value, "params": self.params.to_json(),
                "frame": self.frame, "up_axis": list(self.up_axis)}

    @classmethod
    def from_json(cls, d: dict) -> "Pipeline":
        return cls(EncodingKind(d["encoding"]), DataParams.from_json(d["params"]),
                   d.get("frame", "heading"), tuple(d.get("up_axis", quat.UP)))


def sample_at(seq: FeatureSequence, pipeline: Pipeline, starts: np.ndarray) -> np.ndarray:
    """Samples beginning at the given row offsets of an encoded sequence."""
    from .sampling import chunk_stats

    m = pipeline.sample_rows()
    if pipeline.params.mode == "binned":
        return np.stack([chunk_stats(seq.rows[s:s + m]) for s in starts]) if len(starts) else \
            np.empty((0, 5 * seq.rows.shape[1]))
    if not len(starts):
        return np.empty((0, m, seq.rows.shape[1]))
    return np.stack([seq.rows[s:s + m] for s in starts])
