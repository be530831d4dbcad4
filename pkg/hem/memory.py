"""
memory.py - local memory, per-event query bank, and bounded global memory.

LocalMemory   d x (n*p) frame tokens of the current event, append-only.
QueryBank     the d x q self-attention output collected at each step of an event.
GlobalMemory  query blocks of finished events, merged down to a block cap.

Global memory compression repeatedly averages the most similar adjacent
pair of blocks until the block count fits the cap. Each surviving block
carries its provenance (source step id -> mixing weight) so gradients can
be routed back to the steps that produced it.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import dataclass, field
from typing import Optional

# Import external packages
import numpy as np

# Import functions from local modules
from hem.errors import ShapeError
from hem.tensor_core import Matrix, as_matrix, cosine, flatten_blocks, hstack
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

DEFAULT_GLOBAL_MEMORY_CAP = 20

#####################################
# Local Memory
#####################################


class LocalMemory:
    """Concatenated frame tokens of one event."""

    def __init__(self, dim: int):
        self.dim = dim
        self._frames: list[Matrix] = []

    @property
    def num_frames(self) -> int:
        return len(self._frames)

    @property
    def num_columns(self) -> int:
        return sum(f.shape[1] for f in self._frames)

    @property
    def is_empty(self) -> bool:
        return not self._frames

    def append(self, frame_tokens: Matrix) -> "LocalMemory":
        f = as_matrix(frame_tokens, "frame tokens")
        if f.shape[0] != self.dim:
            msg = f"Frame tokens have {f.shape[0]} rows, local memory expects {self.dim}."
            logger.error(msg)
            raise ShapeError(msg)
        self._frames.append(f.copy())
        return self

    def clear(self) -> None:
        self._frames.clear()

    def tokens(self) -> Matrix:
        """d x (n*p) concatenation in append order."""
        return hstack(self._frames, self.dim)


def lm_append(lm: LocalMemory, frame_tokens: Matrix) -> LocalMemory:
    """Append one frame's d x p tokens to the event's local memory."""
    return lm.append(frame_tokens)


#####################################
# Query Bank
#####################################


@dataclass
class QueryBank:
    """Per-step d x q query blocks of one event, in step order."""

    dim: int
    num_queries: int
    blocks: list[Matrix] = field(default_factory=list)
    step_ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.num_queries * len(self.blocks)

    def collect(self, block: Matrix, step_id: Optional[int] = None) -> "QueryBank":
        o = as_matrix(block, "query block")
        if o.shape != (self.dim, self.num_queries):
            msg = f"Query block shape {o.shape} does not match bank shape {(self.dim, self.num_queries)}."
            logger.error(msg)
            raise ShapeError(msg)
        self.blocks.append(o.copy())
        self.step_ids.append(len(self.step_ids) if step_id is None else step_id)
        return self

    def tokens(self) -> Matrix:
        """d x (q*n) concatenation."""
        return hstack(self.blocks, self.dim)


def bank_collect(bank: QueryBank, block: Matrix, step_id: Optional[int] = None) -> QueryBank:
    """Append one step's d x q self-attention output to the bank."""
    return bank.collect(block, step_id)


#####################################
# Global Memory
#####################################


@dataclass
class MemoryBlock:
    value: Matrix
    provenance: dict[int, float]


def _block_similarity(a: Matrix, b: Matrix) -> float:
    """Flattened-block cosine; an all-zero block only matches another all-zero block."""
    u, v = flatten_blocks(a), flatten_blocks(b)
    u_zero = not np.any(u)
    v_zero = not np.any(v)
    if u_zero or v_zero:
        return 1.0 if u_zero and v_zero else 0.0
    return cosine(u, v)


def _mix(p: dict[int, float], q: dict[int, float]) -> dict[int, float]:
    out = {k: 0.5 * w for k, w in p.items()}
    for k, w in q.items():
        out[k] = out.get(k, 0.0) + 0.5 * w
    return out


class GlobalMemory:
    """
    Ordered query blocks across events, bounded by `cap`.

    cap=None is unbounded; cap=0 disables global memory (appends are dropped).
    """

    def __init__(self, dim: int, num_queries: int, cap: Optional[int] = DEFAULT_GLOBAL_MEMORY_CAP):
        if cap is not None and cap < 0:
            msg = f"Global memory cap must be >= 0 or unbounded, got {cap}."
            logger.error(msg)
            raise ValueError(msg)
        self.dim = dim
        self.num_queries = num_queries
        self.cap = cap
        self.blocks: list[MemoryBlock] = []
        self.size_trajectory: list[int] = []
        self.merge_count = 0

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def enabled(self) -> bool:
        return self.cap != 0

    def values(self) -> list[Matrix]:
        return [b.value for b in self.blocks]

    def tokens(self) -> Matrix:
        """d x (q * blocks) concatenation."""
        return hstack(self.values(), self.dim)

    def append_event(self, bank: QueryBank) -> "GlobalMemory":
        if len(bank) == 0:
            msg = "Cannot append an empty query bank to global memory."
            logger.error(msg)
            raise ValueError(msg)
        if (bank.dim, bank.num_queries) != (self.dim, self.num_queries):
            msg = f"Bank blocks {(bank.dim, bank.num_queries)} do not match global memory blocks {(self.dim, self.num_queries)}."
            logger.error(msg)
            raise ShapeError(msg)
        if not self.enabled:
            logger.debug("Global memory disabled (cap=0); dropping event bank.")
            self.size_trajectory.append(0)
            return self
        for value, step_id in zip(bank.blocks, bank.step_ids):
            self.blocks.append(MemoryBlock(value=value.copy(), provenance={step_id: 1.0}))
        self.compress()
        self.size_trajectory.append(len(self.blocks))
        logger.debug(f"Global memory now holds {len(self.blocks)} blocks.")
        return self

    def compress(self) -> "GlobalMemory":
        """Greedy mean-merge of the most similar adjacent pair until len <= cap."""
        if self.cap is None:
            return self
        if self.cap == 0:
            self.blocks.clear()
            return self
        while len(self.blocks) > self.cap:
            sims = [
                _block_similarity(self.blocks[i].value, self.blocks[i + 1].value)
                for i in range(len(self.blocks) - 1)
            ]
            i = int(np.argmax(sims))
            left, right = self.blocks[i], self.blocks[i + 1]
            merged = MemoryBlock(
                value=0.5 * (left.value + right.value),
                provenance=_mix(left.provenance, right.provenance),
            )
            self.blocks[i : i + 2] = [merged]
            self.merge_count += 1
            logger.debug(f"Merged global memory blocks {i} and {i + 1} (cosine {sims[i]:.4f}).")
        return self


def gm_append_event(gm: GlobalMemory, bank: QueryBank) -> GlobalMemory:
    """Append an event's bank in order, then compress to the cap."""
    return gm.append_event(bank)


def gm_compress(gm: GlobalMemory) -> GlobalMemory:
    """Merge adjacent blocks until the cap holds; a no-op at or under the cap."""
    return gm.compress()
