"""
sampler.py - batched two-event frame sampling.

Each video in a batch has its own boundary P[i], so raw segments differ in
length. Both schemes pick a batch-wide frame count per segment and resample
every item's segments to that count, which lets the batch share tensor shapes.

Segment ranges are closed: left = [0, P[i]], right = [P[i], T-1].
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import dataclass
from enum import Enum

# Import functions from local modules
from hem.errors import ConfigError
from utils.utils_logger import logger

#####################################
# Domain Types
#####################################


class SamplingScheme(str, Enum):
    SCHEME1 = "scheme1"  # max segment size over the batch
    SCHEME2 = "scheme2"  # average boundary over the batch

    @classmethod
    def parse(cls, value: "str | int | SamplingScheme") -> "SamplingScheme":
        """Accept scheme1/scheme2 or the CLI spellings 1/2."""
        if isinstance(value, SamplingScheme):
            return value
        key = str(value).strip().lower()
        if key in {"1", "2"}:
            key = f"scheme{key}"
        try:
            return cls(key)
        except ValueError:
            msg = f"Unknown sampling scheme '{value}'. Use 1 or 2."
            logger.error(msg)
            raise ConfigError(msg) from None


@dataclass(frozen=True)
class SampleRequest:
    """Shared frame count T and one boundary per batch item."""

    total_frames: int
    split_points: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "split_points", tuple(int(p) for p in self.split_points))
        if not self.split_points:
            msg = "Sample request needs at least one batch item."
            logger.error(msg)
            raise ValueError(msg)
        bad = [p for p in self.split_points if not 0 < p < self.total_frames]
        if bad:
            msg = f"Split points {bad} are outside (0, {self.total_frames})."
            logger.error(msg)
            raise ValueError(msg)

    @property
    def batch_size(self) -> int:
        return len(self.split_points)


@dataclass(frozen=True)
class SamplePlan:
    """Per item: (segment-1 indices, segment-2 indices); lengths shared across items."""

    scheme: SamplingScheme
    items: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]

    @property
    def segment_lengths(self) -> tuple[int, int]:
        left, right = self.items[0]
        return len(left), len(right)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "segment_lengths": list(self.segment_lengths),
            "items": [{"segment_1": list(a), "segment_2": list(b)} for a, b in self.items],
        }


#####################################
# Sampling Operations
#####################################


def uniform_sampling(a: int, b: int, s: int) -> list[int]:
    """
    Sample s indices uniformly over the closed range [a, b].

    index_k = a + floor((k + 0.5) * L / s) with L = b - a + 1, evaluated in
    integer arithmetic. Duplicates appear when s > L.
    """
    if a > b:
        msg = f"Empty sampling range [{a}, {b}]."
        logger.error(msg)
        raise ValueError(msg)
    if s < 1:
        msg = f"Sample count must be >= 1, got {s}."
        logger.error(msg)
        raise ValueError(msg)
    length = b - a + 1
    return [min(b, a + ((2 * k + 1) * length) // (2 * s)) for k in range(s)]


def sample_scheme1(req: SampleRequest) -> SamplePlan:
    """Resample every item to the batch maxima of the left (P+1) and right (T-P) segment sizes."""
    t = req.total_frames
    s1 = max(p + 1 for p in req.split_points)
    s2 = max(t - p for p in req.split_points)
    logger.debug(f"Scheme 1 shared lengths: S1={s1}, S2={s2}")
    items = tuple(
        (tuple(uniform_sampling(0, p, s1)), tuple(uniform_sampling(p, t - 1, s2)))
        for p in req.split_points
    )
    return SamplePlan(scheme=SamplingScheme.SCHEME1, items=items)


def average_frames(split_points: tuple[int, ...]) -> int:
    """Mean boundary rounded half up."""
    total = sum(split_points)
    n = len(split_points)
    return (2 * total + n) // (2 * n)


def sample_scheme2(req: SampleRequest) -> SamplePlan:
    """Resample both segments of every item to AF = round(mean(P)) frames."""
    t = req.total_frames
    af = average_frames(req.split_points)
    if af == 0:
        msg = f"Average boundary rounds to 0 for split points {list(req.split_points)}."
        logger.error(msg)
        raise ValueError(msg)
    logger.debug(f"Scheme 2 shared length: AF={af}")
    items = tuple(
        (tuple(uniform_sampling(0, p, af)), tuple(uniform_sampling(p, t - 1, af)))
        for p in req.split_points
    )
    return SamplePlan(scheme=SamplingScheme.SCHEME2, items=items)


def sample(req: SampleRequest, scheme: "str | SamplingScheme" = SamplingScheme.SCHEME1) -> SamplePlan:
    """Dispatch to the configured scheme."""
    scheme = SamplingScheme.parse(scheme)
    if scheme is SamplingScheme.SCHEME1:
        return sample_scheme1(req)
    return sample_scheme2(req)
