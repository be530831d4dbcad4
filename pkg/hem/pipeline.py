"""
pipeline.py - run the full event-memory pipeline over video tensor files.

Stages, in order: ingest -> encode -> segment -> sample -> memory -> head -> write.
Any failure is re-raised as PipelineStageError naming the stage.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import contextlib
import json
import pathlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterator, Optional, Union

# Import external packages
import numpy as np

# Import functions from local modules
from hem.errors import PipelineStageError, ShapeError
from hem.qformer import (
    EventMemoryModel,
    GradCheckResult,
    MemoryOptions,
    PipelineGradients,
    ToyHead,
    encode_video,
    finite_difference_check,
    head_loss,
    process_video,
)
from hem.sampler import SamplePlan, SampleRequest, sample
from hem.segmentation import EventPartition, FrameSequence, segment_video, uniform_partition
from producers.synthetic_video_producer import generate_block_video
from utils.utils_config import PipelineConfig
from utils.utils_logger import logger
from utils.utils_tensor_io import checksum, read_tensor, write_tensor

#####################################
# Default Configurations
#####################################

ZV_FILE_NAME = "zv.hemt"
REPORT_FILE_NAME = "report.json"

GRADCHECK_MAX_DIM = 32
GRADCHECK_MAX_FRAMES = 8

# Toy defaults for the finite-difference check: 2 events of 3 frames
GRADCHECK_DEFAULTS = {
    "num_events": 2,
    "dim": 8,
    "patches": 4,
    "queries": 4,
    "heads": 2,
    "classes": 3,
    "target": 1,
}
GRADCHECK_BLOCKS = (3, 3)
GRADCHECK_FRAME_SIZE = 4

# Component study: (local memory, global memory, adaptive segmentation)
ABLATION_SETTINGS = (
    (False, False, False),
    (True, False, False),
    (True, True, False),
    (True, True, True),
)

#####################################
# Stage Handling
#####################################


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag any failure inside the block with the stage name."""
    logger.debug(f"Stage '{name}' started.")
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise PipelineStageError(name, e) from e
    logger.debug(f"Stage '{name}' finished.")


#####################################
# Ingest
#####################################


def ingest(path: Union[str, pathlib.Path]) -> Union[FrameSequence, np.ndarray]:
    """
    Read a tensor file as a video or as precomputed features.

    A rank-4 tensor with 3 leading channels is a 3 x T x H x W video;
    a rank-3 tensor is T x d x p frame features.
    """
    tensor = read_tensor(pathlib.Path(path))
    if tensor.ndim == 4 and tensor.shape[0] == 3:
        return FrameSequence(tensor)
    if tensor.ndim == 3:
        return tensor
    msg = f"{path}: dims {list(tensor.shape)} are neither a 3xTxHxW video nor TxDxP features."
    logger.error(msg)
    raise ShapeError(msg)


def load_video(path: Union[str, pathlib.Path]) -> FrameSequence:
    data = ingest(path)
    if not isinstance(data, FrameSequence):
        msg = f"{path} holds features of shape {data.shape}, expected a video."
        logger.error(msg)
        raise ShapeError(msg)
    return data


def load_features(path: Union[str, pathlib.Path]) -> np.ndarray:
    data = ingest(path)
    if isinstance(data, FrameSequence):
        msg = f"{path} holds a video, expected T x d x p features."
        logger.error(msg)
        raise ShapeError(msg)
    return data


#####################################
# Reports
#####################################


@dataclass
class RunReport:
    input: str
    num_frames: int
    num_events: int
    split_points: list[int]
    event_ranges: list[list[int]]
    event_frame_counts: list[int]
    event_frame_indices: list[list[int]]
    gm_size_trajectory: list[int]
    gm_merges: int
    zv_shape: list[int]
    zv_checksum: str
    zv_path: str
    loss: Optional[float] = None
    config: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_line(self) -> str:
        loss = "n/a" if self.loss is None else f"{self.loss:.6f}"
        return (
            f"{self.input}: events={self.num_events} split_points={self.split_points} "
            f"zv={self.zv_shape[0]}x{self.zv_shape[1]} checksum={self.zv_checksum[:16]} loss={loss}"
        )


def write_report(path: pathlib.Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote report: {path}")


#####################################
# Single Video
#####################################


def build_model(config: PipelineConfig) -> EventMemoryModel:
    return EventMemoryModel.create(
        dim=config.dim,
        num_patches=config.patches,
        num_queries=config.queries,
        heads=config.heads,
        seed=config.seed,
    )


def memory_options(config: PipelineConfig) -> MemoryOptions:
    return MemoryOptions(
        use_local_memory=config.use_local_memory,
        use_global_memory=config.use_global_memory,
    )


def partition_video(
    config: PipelineConfig, video: FrameSequence, tokens: Optional[list[np.ndarray]] = None
) -> tuple[np.ndarray, EventPartition]:
    """Adaptive (similarity) or uniform segmentation, per config."""
    if not config.use_adaptive_segmentation:
        return np.zeros(0), uniform_partition(video.num_frames, config.num_events)
    features = np.stack(tokens) if (tokens is not None and config.source.needs_features) else None
    return segment_video(video, config.num_events, config.source, features)


def run_video(
    config: PipelineConfig,
    input_path: str,
    output_dir: pathlib.Path,
    frame_plan: Optional[list[list[int]]] = None,
) -> RunReport:
    """
    Run every stage for one video and write Z_v plus the JSON report.

    Args:
        frame_plan: per-event frame indices from a batch sampling plan;
            defaults to the event ranges of the partition.
    """
    started = time.perf_counter()
    logger.info(f"START run for {input_path}")

    with stage("ingest"):
        video = load_video(input_path)
        features = load_features(config.features) if config.features else None

    with stage("encode"):
        model = build_model(config)
        tokens = encode_video(model, video.frames, features)

    with stage("segment"):
        scores, events = partition_video(config, video, tokens)

    with stage("sample"):
        event_indices = frame_plan if frame_plan is not None else [events.indices(e) for e in range(events.num_events)]
        for indices in event_indices:
            if not indices or min(indices) < 0 or max(indices) >= video.num_frames:
                raise ValueError(f"Frame plan {indices} is empty or outside [0, {video.num_frames}).")

    with stage("memory"):
        per_event = [[tokens[i] for i in indices] for indices in event_indices]
        result = process_video(per_event, model, config.global_memory_cap, memory_options(config))

    loss = None
    with stage("head"):
        if config.target is not None:
            head = ToyHead.from_seed(result.z_v.size, config.classes, config.target, config.seed)
            loss = head_loss(result.z_v, head).loss

    with stage("write"):
        zv_path = output_dir.joinpath(ZV_FILE_NAME)
        blob = write_tensor(zv_path, result.z_v)
        report = RunReport(
            input=str(input_path),
            num_frames=video.num_frames,
            num_events=events.num_events,
            split_points=list(events.split_points),
            event_ranges=[list(r) for r in events.ranges],
            event_frame_counts=events.frame_counts,
            event_frame_indices=[list(map(int, ix)) for ix in event_indices],
            gm_size_trajectory=list(result.global_memory.size_trajectory),
            gm_merges=result.global_memory.merge_count,
            zv_shape=list(result.z_v.shape),
            zv_checksum=checksum(blob),
            zv_path=str(zv_path),
            loss=loss,
            config=config.to_dict(),
        )
        if config.plot:
            # Imported lazily so headless runs never touch matplotlib
            from consumers.segmentation_plot import save_score_plot

            save_score_plot(pathlib.Path(config.plot), scores, events, title=pathlib.Path(input_path).name)
        report.wall_time_seconds = round(time.perf_counter() - started, 6)
        write_report(output_dir.joinpath(REPORT_FILE_NAME), report.to_dict())

    logger.info(f"END run for {input_path}: {report.summary_line()}")
    return report


#####################################
# Batches
#####################################


def two_event_split_point(config: PipelineConfig, video: FrameSequence) -> int:
    """The single boundary of a K = 2 segmentation of `video`."""
    k2 = replace(config, num_events=2)
    tokens = None
    if k2.source.needs_features:
        features = load_features(k2.features) if k2.features else None
        tokens = encode_video(build_model(k2), video.frames, features)
    _, events = partition_video(k2, video, tokens)
    return events.split_points[0]


def batch_frame_plans(config: PipelineConfig, videos: list[FrameSequence]) -> Optional[list[list[list[int]]]]:
    """
    Shared-length two-event frame plans for a batch, or None when not applicable.

    Applies when K == 2, segmentation is adaptive, and every video has the same T.
    """
    if config.num_events != 2 or not config.use_adaptive_segmentation or len(videos) < 2:
        return None
    lengths = {v.num_frames for v in videos}
    if len(lengths) != 1:
        logger.warning(f"Batch videos have different frame counts {sorted(lengths)}; sampling plan skipped.")
        return None
    split_points = [two_event_split_point(config, v) for v in videos]
    plan = sample(SampleRequest(total_frames=lengths.pop(), split_points=tuple(split_points)), config.scheme)
    logger.info(f"Batch sampling plan ({plan.scheme.value}) segment lengths {plan.segment_lengths}.")
    return [[list(left), list(right)] for left, right in plan.items]


def run(config: PipelineConfig) -> list[RunReport]:
    """Run the pipeline over every configured input; several inputs run in parallel."""
    if not config.inputs:
        raise PipelineStageError("ingest", ValueError("no input files given"))
    if config.features and len(config.inputs) > 1:
        raise PipelineStageError("ingest", ValueError("precomputed features apply to a single input video"))
    output_root = pathlib.Path(config.output)
    if len(config.inputs) == 1:
        return [run_video(config, config.inputs[0], output_root)]

    with stage("ingest"):
        videos = [load_video(p) for p in config.inputs]
    with stage("sample"):
        plans = batch_frame_plans(config, videos)

    def one(i: int) -> RunReport:
        out_dir = output_root.joinpath(f"{i:03d}_{pathlib.Path(config.inputs[i]).stem}")
        item_config = config
        if config.plot:
            # One chart per item, named like the requested one
            item_config = replace(config, plot=str(out_dir.joinpath(pathlib.Path(config.plot).name)))
        return run_video(item_config, config.inputs[i], out_dir, plans[i] if plans else None)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(one, range(len(config.inputs))))


#####################################
# Segment and Sample Commands
#####################################


def segment_report(config: PipelineConfig, input_path: str) -> dict:
    """Scores, split points and event ranges for one video."""
    with stage("ingest"):
        video = load_video(input_path)
        features = load_features(config.features) if config.features else None
    with stage("segment"):
        tokens = None
        if config.source.needs_features:
            tokens = encode_video(build_model(config), video.frames, features)
        scores, events = partition_video(config, video, tokens)
        if config.plot:
            from consumers.segmentation_plot import save_score_plot

            save_score_plot(pathlib.Path(config.plot), scores, events, title=pathlib.Path(input_path).name)
    return {
        "input": str(input_path),
        "num_frames": video.num_frames,
        "source": config.source.value,
        "scores": [float(s) for s in scores],
        **events.to_dict(),
    }


def sample_plan(config: PipelineConfig, total_frames: Optional[int] = None, split_points: Optional[list[int]] = None) -> SamplePlan:
    """Plan from explicit (T, P) or from the configured inputs segmented with K = 2."""
    with stage("sample"):
        if split_points is None:
            videos = [load_video(p) for p in config.inputs]
            if not videos:
                raise ValueError("give input videos or explicit split points")
            split_points = [two_event_split_point(config, v) for v in videos]
            frame_counts = {v.num_frames for v in videos}
            if len(frame_counts) != 1:
                raise ValueError(f"batched sampling needs a shared frame count, got {sorted(frame_counts)}")
            total_frames = frame_counts.pop()
        if total_frames is None:
            raise ValueError("total frame count is required with explicit split points")
        return sample(SampleRequest(total_frames=total_frames, split_points=tuple(split_points)), config.scheme)


#####################################
# Gradient Check and Component Study
#####################################


def gradcheck(
    config: PipelineConfig,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    analytic_hook: Optional[Callable[[PipelineGradients], PipelineGradients]] = None,
) -> GradCheckResult:
    """
    Finite-difference check of head and query-token gradients.

    Uses the first input if given, else a synthetic 2-event, 3-frames-per-event video.
    """
    with stage("gradcheck"):
        if config.dim > GRADCHECK_MAX_DIM:
            raise ValueError(f"gradcheck needs d <= {GRADCHECK_MAX_DIM}, got {config.dim}")
        if config.inputs:
            video = load_video(config.inputs[0])
        else:
            video = generate_block_video(
                GRADCHECK_BLOCKS, height=GRADCHECK_FRAME_SIZE, width=GRADCHECK_FRAME_SIZE
            )
        if video.num_frames > GRADCHECK_MAX_FRAMES:
            raise ValueError(f"gradcheck needs T <= {GRADCHECK_MAX_FRAMES}, got {video.num_frames}")
        model = build_model(config)
        tokens = encode_video(model, video.frames)
        _, events = partition_video(config, video, tokens)
        per_event = [[tokens[i] for i in events.indices(e)] for e in range(events.num_events)]
        width = config.dim * config.queries * events.num_events
        target = config.target if config.target is not None else 0
        head = ToyHead.from_seed(width, config.classes, target, config.seed)
        return finite_difference_check(
            per_event,
            model,
            head,
            config.global_memory_cap,
            memory_options(config),
            epsilon=epsilon,
            tolerance=tolerance,
            analytic_hook=analytic_hook,
        )


def ablate(config: PipelineConfig, input_path: str) -> list[dict]:
    """Run the four component-study settings on one video; returns one row per setting."""
    rows = []
    target = config.target if config.target is not None else 0
    for local, global_, adaptive in ABLATION_SETTINGS:
        variant = replace(
            config,
            use_local_memory=local,
            use_global_memory=global_,
            use_adaptive_segmentation=adaptive,
            target=target,
        )
        name = f"local{int(local)}_global{int(global_)}_adaptive{int(adaptive)}"
        report = run_video(variant, input_path, pathlib.Path(config.output).joinpath(name))
        rows.append(
            {
                "setting": name,
                "use_local_memory": local,
                "use_global_memory": global_,
                "use_adaptive_segmentation": adaptive,
                "split_points": report.split_points,
                "zv_checksum": report.zv_checksum,
                "loss": report.loss,
            }
        )
    with stage("write"):
        write_report(pathlib.Path(config.output).joinpath("ablation.json"), {"rows": rows})
    return rows
