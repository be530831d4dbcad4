"""
synthetic_video_producer.py

Produce synthetic frame sequences and write them as HEMT or JSON tensors.

A block video is K runs of constant-colour frames. Adjacent runs have
clearly different colour directions, so the least similar adjacent frame
pairs sit exactly at the joins between runs.

Example:
    python -m producers.synthetic_video_producer
writes data/synthetic_video.hemt using HEM_SYNTH_* settings from .env.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import os
import pathlib
import sys
from typing import Optional, Sequence

# Import external packages
import numpy as np
from dotenv import load_dotenv

# Import functions from local modules
from hem.segmentation import FrameSequence
from hem.tensor_core import cosine
from utils.utils_logger import logger
from utils.utils_tensor_io import write_tensor

#####################################
# Load Environment Variables
#####################################

load_dotenv()

#####################################
# Default Configurations
#####################################

# Well-separated RGB directions used when no colours are given
PALETTE = (
    (0.9, 0.1, 0.1),
    (0.1, 0.9, 0.1),
    (0.1, 0.1, 0.9),
    (0.9, 0.9, 0.1),
    (0.1, 0.9, 0.9),
    (0.9, 0.1, 0.9),
)

MAX_ADJACENT_COSINE = 0.98

#####################################
# Getter Functions for .env Variables
#####################################


def get_block_lengths() -> list[int]:
    """Fetch comma-separated block lengths from environment or use default."""
    raw = os.getenv("HEM_SYNTH_BLOCKS", "4,4,4,4")
    lengths = [int(x) for x in raw.split(",") if x.strip()]
    logger.info(f"Synthetic block lengths: {lengths}")
    return lengths


def get_frame_size() -> int:
    """Fetch the square frame size from environment or use default."""
    size = int(os.getenv("HEM_SYNTH_SIZE", 8))
    logger.info(f"Synthetic frame size: {size}x{size}")
    return size


#####################################
# Set up Paths
#####################################

PROJECT_ROOT = pathlib.Path(__file__).parent.parent
DATA_FOLDER = PROJECT_ROOT.joinpath("data")
DATA_FILE = DATA_FOLDER.joinpath("synthetic_video.hemt")

#####################################
# Frame Generators
#####################################


def random_block_colors(k: int, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """K colours in [0.05, 1]^3 whose adjacent pairs are not nearly parallel."""
    colors: list[np.ndarray] = []
    while len(colors) < k:
        candidate = rng.uniform(0.05, 1.0, size=3)
        if colors and cosine(colors[-1], candidate) > MAX_ADJACENT_COSINE:
            continue
        colors.append(candidate)
    return [tuple(float(v) for v in c) for c in colors]


def generate_block_video(
    block_lengths: Sequence[int],
    colors: Optional[Sequence[Sequence[float]]] = None,
    height: int = 8,
    width: int = 8,
) -> FrameSequence:
    """
    Build a video from constant-colour blocks.

    Args:
        block_lengths: frames per block, each >= 1.
        colors: one RGB triple in [0, 1] per block; defaults to PALETTE.

    Returns:
        FrameSequence: 3 x T x H x W with T = sum(block_lengths).
    """
    if not block_lengths or min(block_lengths) < 1:
        msg = f"Block lengths must be a non-empty list of positive counts, got {list(block_lengths)}."
        logger.error(msg)
        raise ValueError(msg)
    if colors is None:
        if len(block_lengths) > len(PALETTE):
            msg = f"Give explicit colours for more than {len(PALETTE)} blocks."
            logger.error(msg)
            raise ValueError(msg)
        colors = PALETTE[: len(block_lengths)]
    if len(colors) != len(block_lengths):
        msg = f"Need one colour per block: {len(colors)} colours for {len(block_lengths)} blocks."
        logger.error(msg)
        raise ValueError(msg)
    runs = [
        np.broadcast_to(np.asarray(c, dtype=np.float64)[:, None, None, None], (3, n, height, width))
        for c, n in zip(colors, block_lengths)
    ]
    video = FrameSequence(np.concatenate(runs, axis=1))
    logger.debug(f"Generated block video with T={video.num_frames} from blocks {list(block_lengths)}")
    return video


def generate_random_video(t: int, height: int, width: int, rng: np.random.Generator) -> FrameSequence:
    """Uniform random frames in [0, 1]."""
    return FrameSequence(rng.uniform(0.0, 1.0, size=(3, t, height, width)))


def block_joins(block_lengths: Sequence[int]) -> list[int]:
    """Frame indices where each block after the first starts."""
    return [int(x) for x in np.cumsum(block_lengths)[:-1]]


def write_video(path: pathlib.Path, video: FrameSequence) -> pathlib.Path:
    """Write the 3 x T x H x W array (HEMT, or JSON for .json paths)."""
    write_tensor(path, video.frames)
    return pathlib.Path(path)


#####################################
# Main Function
#####################################


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Write one synthetic block video to data/ (or to the path given as argument)."""
    logger.info("START synthetic video producer.")
    argv = sys.argv[1:] if argv is None else argv
    target = pathlib.Path(argv[0]) if argv else DATA_FILE
    lengths = get_block_lengths()
    size = get_frame_size()
    try:
        video = generate_block_video(lengths, height=size, width=size)
        write_video(target, video)
        logger.info(f"Block joins at frames {block_joins(lengths)}.")
    except ValueError as e:
        logger.error(f"Could not produce synthetic video: {e}")
        sys.exit(2)
    logger.info("END synthetic video producer.")


#####################################
# Conditional Execution
#####################################

if __name__ == "__main__":
    main()
