"""
segmentation_plot.py

Save a chart of adjacent-frame similarity scores with the chosen event
boundaries marked, one bar per adjacent pair.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import pathlib
from typing import Optional

# Import external packages
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# Import functions from local modules
from hem.segmentation import EventPartition
from utils.utils_logger import logger

#####################################
# Chart Function
#####################################


def save_score_plot(
    path: pathlib.Path,
    scores: np.ndarray,
    events: EventPartition,
    title: Optional[str] = None,
) -> pathlib.Path:
    """
    Bar chart of scores[i] (pair i, i+1); pairs that became boundaries are red.

    Args:
        path (pathlib.Path): PNG file to write.
        scores (np.ndarray): T-1 adjacent similarity scores (may be empty).
        events (EventPartition): The resulting partition.
        title (str, optional): Chart title suffix.

    Returns:
        pathlib.Path: The written file.
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cut_pairs = {b - 1 for b in events.split_points}
    pairs = list(range(len(scores)))
    bar_colors = ["red" if i in cut_pairs else "skyblue" for i in pairs]

    # No pyplot: batch runs draw from worker threads
    fig = Figure(figsize=(max(6.0, 0.4 * len(pairs)), 4.0))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    ax.bar(pairs, scores, color=bar_colors)
    ax.set_xlabel("Adjacent frame pair (i, i+1)")
    ax.set_ylabel("Cosine similarity")
    ax.set_ylim(min(-0.05, float(np.min(scores)) - 0.05) if len(scores) else 0.0, 1.05)
    ax.set_title(f"Event boundaries: {list(events.split_points)}" + (f" - {title}" if title else ""))
    fig.tight_layout()
    fig.savefig(path)
    logger.info(f"Saved segmentation chart: {path}")
    return path
