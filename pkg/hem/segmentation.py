"""
segmentation.py - adaptive event segmentation of a frame sequence.

Frames are pooled to one vector each, adjacent pooled vectors are compared
with cosine similarity, and the K-1 least similar adjacent pairs become the
event boundaries. A score at index i cuts between frame i and frame i+1,
so it yields boundary position i+1 and events are half-open ranges.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import dataclass
from enum import Enum
from typing import Optional

# Import external packages
import numpy as np

# Import functions from local modules
from hem.errors import ConfigError, ShapeError
from hem.tensor_core import DTYPE, cosine, ensure_finite, spatial_mean
from utils.utils_logger import logger

#####################################
# Domain Types
#####################################


class SimilaritySource(str, Enum):
    """Which token form feeds the adjacent-frame similarity."""

    RAW_AVGPOOL = "raw_avgpool"
    FEATURE_AVGPOOL = "feature_avgpool"
    FEATURE_CLS = "feature_cls"

    @property
    def needs_features(self) -> bool:
        return self is not SimilaritySource.RAW_AVGPOOL

    @classmethod
    def parse(cls, value: "str | SimilaritySource") -> "SimilaritySource":
        """Accept enum values and the short CLI spellings raw, feat_avg, feat_cls."""
        if isinstance(value, SimilaritySource):
            return value
        aliases = {
            "raw": cls.RAW_AVGPOOL,
            "feat_avg": cls.FEATURE_AVGPOOL,
            "feat_cls": cls.FEATURE_CLS,
        }
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            msg = f"Unknown similarity source '{value}'. Use raw, feat_avg or feat_cls."
            logger.error(msg)
            raise ConfigError(msg) from None


@dataclass(frozen=True)
class FrameSequence:
    """RGB frames stored channel-first as a 3 x T x H x W float64 array in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.frames, dtype=DTYPE)
        if data.ndim != 4 or data.shape[0] != 3:
            msg = f"FrameSequence needs shape 3xTxHxW, got {data.shape}."
            logger.error(msg)
            raise ShapeError(msg)
        if min(data.shape[1:]) < 1:
            msg = f"FrameSequence needs T, H, W >= 1, got {data.shape}."
            logger.error(msg)
            raise ShapeError(msg)
        ensure_finite(data, "frame sequence")
        if data.min() < 0.0 or data.max() > 1.0:
            msg = f"Frame values must lie in [0, 1], got range [{data.min()}, {data.max()}]."
            logger.error(msg)
            raise ValueError(msg)
        object.__setattr__(self, "frames", data)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]

    @property
    def height(self) -> int:
        return self.frames.shape[2]

    @property
    def width(self) -> int:
        return self.frames.shape[3]

    def frame(self, index: int) -> np.ndarray:
        """Return frame `index` as a 3 x H x W array."""
        return self.frames[:, index]


@dataclass(frozen=True)
class EventPartition:
    """K contiguous half-open frame ranges covering [0, T)."""

    num_frames: int
    split_points: tuple[int, ...]
    ranges: tuple[tuple[int, int], ...]

    @property
    def num_events(self) -> int:
        return len(self.ranges)

    @property
    def frame_counts(self) -> list[int]:
        return [stop - start for start, stop in self.ranges]

    def indices(self, event: int) -> list[int]:
        start, stop = self.ranges[event]
        return list(range(start, stop))

    def to_dict(self) -> dict:
        return {
            "split_points": list(self.split_points),
            "event_ranges": [list(r) for r in self.ranges],
            "event_frame_counts": self.frame_counts,
        }


#####################################
# Segmentation Operations
#####################################


def pool_frames(
    v: FrameSequence,
    source: SimilaritySource = SimilaritySource.RAW_AVGPOOL,
    features: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Reduce each frame to one vector for similarity scoring.

    Args:
        v (FrameSequence): The video.
        source (SimilaritySource): raw_avgpool pools RGB over space (3-vector per frame);
            feature_avgpool averages each frame's d x p features over tokens;
            feature_cls takes each frame's first token column.
        features (np.ndarray, optional): Precomputed T x d x p features.

    Returns:
        np.ndarray: T x c pooled vectors (c = 3 or d).
    """
    source = SimilaritySource.parse(source)
    if source is SimilaritySource.RAW_AVGPOOL:
        # (3, T, H, W) -> (3, T) -> (T, 3)
        return spatial_mean(v.frames).T.copy()

    if features is None:
        msg = f"Similarity source '{source.value}' requires precomputed features."
        logger.error(msg)
        raise ValueError(msg)
    feats = ensure_finite(np.asarray(features, dtype=DTYPE), "frame features")
    if feats.ndim != 3 or feats.shape[0] != v.num_frames:
        msg = f"Features must be T x d x p with T={v.num_frames}, got {feats.shape}."
        logger.error(msg)
        raise ShapeError(msg)
    if source is SimilaritySource.FEATURE_AVGPOOL:
        return feats.mean(axis=2)
    return feats[:, :, 0].copy()


def adjacent_scores(pooled: np.ndarray) -> np.ndarray:
    """Cosine similarity of each adjacent pooled pair: scores[i] = cos(p[i], p[i+1])."""
    pooled = np.asarray(pooled, dtype=DTYPE)
    if pooled.ndim != 2 or pooled.shape[0] < 2:
        msg = f"Need at least 2 pooled frames to score, got shape {pooled.shape}."
        logger.error(msg)
        raise ValueError(msg)
    scores = np.array(
        [cosine(pooled[i], pooled[i + 1]) for i in range(pooled.shape[0] - 1)],
        dtype=DTYPE,
    )
    logger.debug(f"Adjacent scores: {np.round(scores, 4).tolist()}")
    return scores


def select_split_points(scores: np.ndarray, k: int) -> list[int]:
    """
    Pick the k-1 least similar adjacent pairs as boundaries.

    Ties are broken by smaller index. A minimum at score index i
    becomes boundary i+1. The result is sorted ascending.

    Raises:
        ValueError: If k < 1 or k-1 exceeds the number of frame gaps.
    """
    scores = np.asarray(scores, dtype=DTYPE).ravel()
    if k < 1:
        msg = f"Event count must be >= 1, got {k}."
        logger.error(msg)
        raise ValueError(msg)
    if k - 1 > scores.size:
        msg = f"Cannot place {k - 1} boundaries in {scores.size} frame gaps ({k} events for {scores.size + 1} frames)."
        logger.error(msg)
        raise ValueError(msg)
    order = np.argsort(scores, kind="stable")[: k - 1]
    return sorted(int(i) + 1 for i in order)


def partition(t: int, boundaries: list[int]) -> EventPartition:
    """
    Build half-open event ranges [0,b1), [b1,b2), ..., [b_last,t).

    Raises:
        ValueError: If a boundary is outside (0, t) or not strictly increasing.
    """
    if t < 1:
        msg = f"Frame count must be >= 1, got {t}."
        logger.error(msg)
        raise ValueError(msg)
    cuts = [int(b) for b in boundaries]
    previous = 0
    for b in cuts:
        if not 0 < b < t:
            msg = f"Boundary {b} is outside the open range (0, {t})."
            logger.error(msg)
            raise ValueError(msg)
        if b <= previous:
            msg = f"Boundaries must be strictly increasing, got {cuts}."
            logger.error(msg)
            raise ValueError(msg)
        previous = b
    edges = [0, *cuts, t]
    ranges = tuple((edges[i], edges[i + 1]) for i in range(len(edges) - 1))
    return EventPartition(num_frames=t, split_points=tuple(cuts), ranges=ranges)


def uniform_partition(t: int, k: int) -> EventPartition:
    """K equal-length contiguous events; leftover frames go to the leftmost events."""
    if not 1 <= k <= t:
        msg = f"Need 1 <= K <= T for a uniform split, got K={k}, T={t}."
        logger.error(msg)
        raise ValueError(msg)
    base, extra = divmod(t, k)
    cuts, position = [], 0
    for i in range(k - 1):
        position += base + (1 if i < extra else 0)
        cuts.append(position)
    return partition(t, cuts)


def segment_video(
    v: FrameSequence,
    k: int,
    source: SimilaritySource = SimilaritySource.RAW_AVGPOOL,
    features: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, EventPartition]:
    """Pool, score, select and partition in one call; returns (scores, partition)."""
    t = v.num_frames
    if k == 1 and t == 1:
        return np.zeros(0, dtype=DTYPE), partition(t, [])
    scores = adjacent_scores(pool_frames(v, source, features))
    boundaries = select_split_points(scores, k)
    events = partition(t, boundaries)
    logger.info(f"Segmented {t} frames into {events.num_events} events at {boundaries}.")
    return scores, events
