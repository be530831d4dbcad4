"""
qformer.py - query-token attention over local and global memory.

Per frame of an event the pipeline:
  1. encodes the frame to d x p tokens and adds a sinusoidal timestamp code,
  2. appends the tokens to local memory (LM),
  3. self-attends the query tokens Q against [global memory, event query bank]
     (Q itself when both are empty) to get O,
  4. cross-attends O against LM to get O_c,
  5. collects O into the event's query bank.
O_c of an event's last frame is the event token. Event tokens are
concatenated into Z_v, which a linear toy head scores with cross-entropy.

Gradients are hand-derived per operation. Projection matrices are frozen;
the backward pass produces gradients for the head and the query tokens.

Tokens are stored as columns: a d x n matrix holds n tokens of width d.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

# Import external packages
import numpy as np

# Import functions from local modules
from hem.errors import ConfigError, ShapeError
from hem.memory import GlobalMemory, LocalMemory, QueryBank, bank_collect, lm_append
from hem.tensor_core import DTYPE, Matrix, as_matrix, ensure_finite, hstack, matmul, softmax_rows
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

DEFAULT_DIM = 64
DEFAULT_PATCHES = 16
DEFAULT_QUERIES = 32
DEFAULT_HEADS = 1
DEFAULT_CLASSES = 4

PE_BASE = 10000.0

# Independent RNG streams derived from one seed
_ENCODER_STREAM = 1
_QUERY_STREAM = 2
_SELF_ATTN_STREAM = 3
_CROSS_ATTN_STREAM = 4
_HEAD_STREAM = 5


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


#####################################
# Frame Encoding
#####################################


def patch_grid(num_patches: int, height: int, width: int) -> int:
    """
    Side length g of a g x g patch grid for p = g*g patches.

    Raises:
        ShapeError: If p is not a perfect square or g does not divide H and W.
    """
    g = math.isqrt(num_patches) if num_patches > 0 else 0
    if g < 1 or g * g != num_patches or height % g or width % g:
        msg = f"{num_patches} patches cannot tile a {height}x{width} frame (need a g*g grid with g dividing H and W)."
        logger.error(msg)
        raise ShapeError(msg)
    return g


@dataclass(frozen=True)
class ToyEncoder:
    """Patch channel means mapped to d dims by a fixed seeded d x 3 matrix."""

    seed: int
    dim: int
    num_patches: int
    projection: Matrix = field(repr=False)

    @classmethod
    def create(cls, seed: int, dim: int, num_patches: int) -> "ToyEncoder":
        projection = _rng(seed, _ENCODER_STREAM).standard_normal((dim, 3))
        return cls(seed=seed, dim=dim, num_patches=num_patches, projection=projection)

    def encode(self, frame: np.ndarray) -> Matrix:
        frame = ensure_finite(np.asarray(frame, dtype=DTYPE), "frame")
        if frame.ndim != 3 or frame.shape[0] != 3:
            msg = f"Frame must be 3 x H x W, got {frame.shape}."
            logger.error(msg)
            raise ShapeError(msg)
        _, h, w = frame.shape
        g = patch_grid(self.num_patches, h, w)
        patch_means = frame.reshape(3, g, h // g, g, w // g).mean(axis=(2, 4)).reshape(3, g * g)
        return matmul(self.projection, patch_means)


def toy_encode(frame: np.ndarray, seed: int, dim: int, num_patches: int) -> Matrix:
    """Deterministic d x p stand-in for a pretrained visual encoder."""
    return ToyEncoder.create(seed, dim, num_patches).encode(frame)


def positional_encoding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal code: entry 2j = sin(t / 10000^(2j/d)), entry 2j+1 = cos(same)."""
    if t < 0:
        msg = f"Timestamp must be >= 0, got {t}."
        logger.error(msg)
        raise ValueError(msg)
    pairs = np.arange(dim) // 2
    angles = t / np.power(PE_BASE, (2.0 * pairs) / dim)
    return np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))


def add_timestamp(frame_tokens: Matrix, t: int) -> Matrix:
    """f + PE(t), broadcast over every token column."""
    f = as_matrix(frame_tokens, "frame tokens")
    return f + positional_encoding(t, f.shape[0])[:, None]


#####################################
# Attention
#####################################


@dataclass(frozen=True)
class AttentionParams:
    """Frozen d x d projections for scaled dot-product attention."""

    w_q: Matrix
    w_k: Matrix
    w_v: Matrix
    heads: int = DEFAULT_HEADS

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name, w in (("W_q", self.w_q), ("W_k", self.w_k), ("W_v", self.w_v)):
            if w.shape != (d, d):
                msg = f"{name} must be {d}x{d}, got {w.shape}."
                logger.error(msg)
                raise ShapeError(msg)
        if self.heads < 1 or d % self.heads:
            msg = f"Dimension {d} is not divisible by {self.heads} heads."
            logger.error(msg)
            raise ConfigError(msg)

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def from_seed(cls, dim: int, heads: int, seed: int, stream: int = _SELF_ATTN_STREAM) -> "AttentionParams":
        rng = _rng(seed, stream)
        scale = 1.0 / math.sqrt(dim)
        w_q, w_k, w_v = (rng.standard_normal((dim, dim)) * scale for _ in range(3))
        return cls(w_q=w_q, w_k=w_k, w_v=w_v, heads=heads)

    @classmethod
    def identity(cls, dim: int, heads: int = 1) -> "AttentionParams":
        eye = np.eye(dim, dtype=DTYPE)
        return cls(w_q=eye, w_k=eye.copy(), w_v=eye.copy(), heads=heads)


@dataclass
class AttentionCache:
    """Forward intermediates kept for the backward pass."""

    params: AttentionParams
    q_proj: Matrix
    k_proj: Matrix
    v_proj: Matrix
    weights: list[Matrix]  # per head, n_queries x n_keys, rows sum to 1


def scaled_dot_attention(
    queries: Matrix, memory: Matrix, params: AttentionParams
) -> tuple[Matrix, AttentionCache]:
    """
    Multi-head scaled dot-product attention of query columns over memory columns.

    Scores are scaled by 1/sqrt(d/h). Returns the d x n_queries output and a cache.
    """
    queries = as_matrix(queries, "attention queries")
    memory = as_matrix(memory, "attention memory")
    d = params.dim
    if queries.shape[0] != d or memory.shape[0] != d:
        msg = f"Attention expects {d}-row inputs, got queries {queries.shape} and memory {memory.shape}."
        logger.error(msg)
        raise ShapeError(msg)
    if memory.shape[1] == 0:
        msg = "Attention memory has no columns."
        logger.error(msg)
        raise ShapeError(msg)

    q_proj = matmul(params.w_q, queries)
    k_proj = matmul(params.w_k, memory)
    v_proj = matmul(params.w_v, memory)

    head_dim = d // params.heads
    scale = 1.0 / math.sqrt(head_dim)
    out = np.empty_like(q_proj)
    weights = []
    for h in range(params.heads):
        rows = slice(h * head_dim, (h + 1) * head_dim)
        a = softmax_rows((q_proj[rows].T @ k_proj[rows]) * scale)
        out[rows] = v_proj[rows] @ a.T
        weights.append(a)
    cache = AttentionCache(params=params, q_proj=q_proj, k_proj=k_proj, v_proj=v_proj, weights=weights)
    return ensure_finite(out, "attention output"), cache


def attention_backward(cache: AttentionCache, grad_out: Matrix) -> tuple[Matrix, Matrix]:
    """
    Gradients of the attention output w.r.t. its queries and its memory.

    Returns:
        (grad_queries d x n_queries, grad_memory d x n_keys)
    """
    params = cache.params
    head_dim = params.dim // params.heads
    scale = 1.0 / math.sqrt(head_dim)
    g_q = np.zeros_like(cache.q_proj)
    g_k = np.zeros_like(cache.k_proj)
    g_v = np.zeros_like(cache.v_proj)
    for h, a in enumerate(cache.weights):
        rows = slice(h * head_dim, (h + 1) * head_dim)
        g_h = grad_out[rows]
        g_v[rows] = g_h @ a
        g_a = g_h.T @ cache.v_proj[rows]
        # softmax Jacobian, row by row
        g_s = a * (g_a - np.sum(g_a * a, axis=1, keepdims=True))
        g_q[rows] = (cache.k_proj[rows] @ g_s.T) * scale
        g_k[rows] = (cache.q_proj[rows] @ g_s) * scale
    grad_queries = params.w_q.T @ g_q
    grad_memory = params.w_k.T @ g_k + params.w_v.T @ g_v
    return grad_queries, grad_memory


def self_attention_memory(
    query_tokens: Matrix, gm: GlobalMemory, bank: Optional[QueryBank] = None
) -> tuple[Matrix, Optional[list[dict[int, float]]]]:
    """
    Keys/values for query self-attention: [GM blocks, event bank blocks].

    Returns the memory matrix and per-block provenance, or (Q, None) when
    both memories are empty.
    """
    blocks = gm.values()
    provenance = [dict(b.provenance) for b in gm.blocks]
    if bank is not None:
        blocks = blocks + list(bank.blocks)
        provenance += [{step: 1.0} for step in bank.step_ids]
    if not blocks:
        return query_tokens, None
    return hstack(blocks, query_tokens.shape[0]), provenance


def self_attn_queries(
    query_tokens: Matrix,
    gm: GlobalMemory,
    params: AttentionParams,
    bank: Optional[QueryBank] = None,
) -> Matrix:
    """O = SelfAttn(Q, memory, memory) with memory from GM (and the current bank)."""
    memory, _ = self_attention_memory(query_tokens, gm, bank)
    out, _ = scaled_dot_attention(query_tokens, memory, params)
    return out


def cross_attn_local(o: Matrix, lm: LocalMemory, params: AttentionParams) -> Matrix:
    """O_c = CrossAttn(O, LM, LM)."""
    if lm.is_empty:
        msg = "Cross-attention needs a non-empty local memory."
        logger.error(msg)
        raise ValueError(msg)
    out, _ = scaled_dot_attention(o, lm.tokens(), params)
    return out


#####################################
# Model
#####################################


@dataclass(frozen=True)
class MemoryOptions:
    """Component switches for the memory study."""

    use_local_memory: bool = True
    use_global_memory: bool = True


@dataclass(frozen=True)
class EventMemoryModel:
    """Seeded query tokens, encoder and attention projections."""

    dim: int
    num_patches: int
    num_queries: int
    heads: int
    seed: int
    query_tokens: Matrix = field(repr=False)
    encoder: ToyEncoder = field(repr=False)
    self_attn: AttentionParams = field(repr=False)
    cross_attn: AttentionParams = field(repr=False)

    @classmethod
    def create(
        cls,
        dim: int = DEFAULT_DIM,
        num_patches: int = DEFAULT_PATCHES,
        num_queries: int = DEFAULT_QUERIES,
        heads: int = DEFAULT_HEADS,
        seed: int = 0,
    ) -> "EventMemoryModel":
        if min(dim, num_patches, num_queries, heads) < 1:
            msg = f"Model dims must be >= 1, got d={dim}, p={num_patches}, q={num_queries}, h={heads}."
            logger.error(msg)
            raise ConfigError(msg)
        query_tokens = 0.5 * _rng(seed, _QUERY_STREAM).standard_normal((dim, num_queries))
        return cls(
            dim=dim,
            num_patches=num_patches,
            num_queries=num_queries,
            heads=heads,
            seed=seed,
            query_tokens=query_tokens,
            encoder=ToyEncoder.create(seed, dim, num_patches),
            self_attn=AttentionParams.from_seed(dim, heads, seed, _SELF_ATTN_STREAM),
            cross_attn=AttentionParams.from_seed(dim, heads, seed, _CROSS_ATTN_STREAM),
        )

    def with_query_tokens(self, query_tokens: Matrix) -> "EventMemoryModel":
        q = as_matrix(query_tokens, "query tokens")
        if q.shape != (self.dim, self.num_queries):
            msg = f"Query tokens must be {self.dim}x{self.num_queries}, got {q.shape}."
            logger.error(msg)
            raise ShapeError(msg)
        return replace(self, query_tokens=q)

    def new_global_memory(self, cap: Optional[int]) -> GlobalMemory:
        return GlobalMemory(self.dim, self.num_queries, cap)


def encode_video(
    model: EventMemoryModel, frames: np.ndarray, features: Optional[np.ndarray] = None
) -> list[Matrix]:
    """
    Frame tokens for every frame: toy-encoded, or taken from T x d x p features.

    Args:
        frames: 3 x T x H x W video array.
        features: optional precomputed features; must match (T, d, p).
    """
    t = frames.shape[1]
    if features is not None:
        feats = ensure_finite(np.asarray(features, dtype=DTYPE), "frame features")
        expected = (t, model.dim, model.num_patches)
        if feats.shape != expected:
            msg = f"Features must have shape {expected}, got {feats.shape}."
            logger.error(msg)
            raise ShapeError(msg)
        return [feats[i].copy() for i in range(t)]
    return [model.encoder.encode(frames[:, i]) for i in range(t)]


#####################################
# Event Processing
#####################################


@dataclass
class StepRecord:
    """One frame step: caches and memory layout for the backward pass."""

    step_id: int
    event: int
    self_cache: AttentionCache
    kv_provenance: Optional[list[dict[int, float]]]  # None: keys/values were Q
    cross_cache: AttentionCache
    is_event_end: bool = False


@dataclass
class VideoTrace:
    steps: list[StepRecord] = field(default_factory=list)

    def next_step_id(self) -> int:
        return len(self.steps)


def process_event(
    event_frames: list[Matrix],
    model: EventMemoryModel,
    gm: GlobalMemory,
    options: MemoryOptions = MemoryOptions(),
    event_index: int = 0,
    trace: Optional[VideoTrace] = None,
) -> tuple[Matrix, QueryBank]:
    """
    Run local-memory modeling over one event.

    Returns:
        (O_c of the last frame, the event's query bank)
    """
    if not event_frames:
        msg = f"Event {event_index} has no frames."
        logger.error(msg)
        raise ValueError(msg)
    trace = trace if trace is not None else VideoTrace()
    lm = LocalMemory(model.dim)
    bank = QueryBank(model.dim, model.num_queries)
    step_gm = gm if options.use_global_memory else model.new_global_memory(0)
    o_c = None
    for t, frame_tokens in enumerate(event_frames):
        if not options.use_local_memory:
            lm.clear()
        lm_append(lm, add_timestamp(frame_tokens, t))

        memory, provenance = self_attention_memory(model.query_tokens, step_gm, bank)
        o, self_cache = scaled_dot_attention(model.query_tokens, memory, model.self_attn)
        o_c, cross_cache = scaled_dot_attention(o, lm.tokens(), model.cross_attn)

        step_id = trace.next_step_id()
        trace.steps.append(
            StepRecord(
                step_id=step_id,
                event=event_index,
                self_cache=self_cache,
                kv_provenance=provenance,
                cross_cache=cross_cache,
            )
        )
        bank_collect(bank, o, step_id)
    trace.steps[-1].is_event_end = True
    logger.debug(f"Event {event_index}: {len(event_frames)} frames, bank width {bank.width}.")
    return o_c, bank


def concat_events(tokens: list[Matrix]) -> Matrix:
    """Z_v = column-wise concatenation of event tokens in event order."""
    if not tokens:
        msg = "No event tokens to concatenate."
        logger.error(msg)
        raise ValueError(msg)
    shape = tokens[0].shape
    for i, o in enumerate(tokens):
        if o.shape != shape:
            msg = f"Event token {i} has shape {o.shape}, expected {shape}."
            logger.error(msg)
            raise ShapeError(msg)
    return hstack(list(tokens), shape[0])


@dataclass
class VideoResult:
    z_v: Matrix
    event_tokens: list[Matrix]
    global_memory: GlobalMemory
    trace: VideoTrace


def process_video(
    events: list[list[Matrix]],
    model: EventMemoryModel,
    cap: Optional[int],
    options: MemoryOptions = MemoryOptions(),
) -> VideoResult:
    """Process events in order with one shared global memory and assemble Z_v."""
    gm = model.new_global_memory(cap if options.use_global_memory else 0)
    trace = VideoTrace()
    event_tokens = []
    for k, frames in enumerate(events):
        o_c, bank = process_event(frames, model, gm, options, k, trace)
        gm.append_event(bank)
        event_tokens.append(o_c)
    z_v = concat_events(event_tokens)
    logger.info(f"Assembled Z_v of shape {z_v.shape} from {len(events)} events.")
    return VideoResult(z_v=z_v, event_tokens=event_tokens, global_memory=gm, trace=trace)


#####################################
# Toy Head and Loss
#####################################


@dataclass(frozen=True)
class ToyHead:
    """Linear map from flattened Z_v to class logits, with a target class."""

    delta: Matrix
    target: int

    def __post_init__(self):
        if self.delta.ndim != 2 or self.delta.shape[0] < 2:
            msg = f"Head needs at least 2 classes, got delta shape {self.delta.shape}."
            logger.error(msg)
            raise ShapeError(msg)
        if not 0 <= self.target < self.delta.shape[0]:
            msg = f"Target {self.target} is not a class index in [0, {self.delta.shape[0]})."
            logger.error(msg)
            raise ValueError(msg)

    @property
    def num_classes(self) -> int:
        return self.delta.shape[0]

    @classmethod
    def from_seed(cls, in_features: int, classes: int, target: int, seed: int) -> "ToyHead":
        delta = _rng(seed, _HEAD_STREAM).standard_normal((classes, in_features)) / math.sqrt(in_features)
        return cls(delta=delta, target=target)


@dataclass
class HeadLoss:
    loss: float
    logits: np.ndarray
    grad_delta: Matrix
    grad_z: Matrix


def head_loss(z_v: Matrix, head: ToyHead) -> HeadLoss:
    """loss = -log softmax(delta @ flatten(z_v))[target], with analytic gradients."""
    z = as_matrix(z_v, "Z_v")
    x = z.ravel()
    if head.delta.shape[1] != x.size:
        msg = f"Head expects {head.delta.shape[1]} inputs, Z_v {z.shape} has {x.size}."
        logger.error(msg)
        raise ShapeError(msg)
    logits = head.delta @ x
    probs = softmax_rows(logits[None, :])[0]
    shifted = logits - logits.max()
    loss = float(np.log(np.exp(shifted).sum()) - shifted[head.target])
    g_logits = probs.copy()
    g_logits[head.target] -= 1.0
    return HeadLoss(
        loss=loss,
        logits=logits,
        grad_delta=np.outer(g_logits, x),
        grad_z=(head.delta.T @ g_logits).reshape(z.shape),
    )


#####################################
# Full-Pipeline Gradients
#####################################


@dataclass
class PipelineGradients:
    loss: float
    grad_delta: Matrix
    grad_query_tokens: Matrix


def pipeline_gradients(result: VideoResult, model: EventMemoryModel, head: ToyHead) -> PipelineGradients:
    """
    Backpropagate the head loss through every recorded step to the query tokens.

    Steps are visited in reverse order. A step's self-attention memory only
    holds outputs of earlier steps, so each step's output gradient is
    complete by the time it is visited.
    """
    hl = head_loss(result.z_v, head)
    q = model.num_queries
    grad_z_blocks = [hl.grad_z[:, k * q : (k + 1) * q] for k in range(len(result.event_tokens))]

    grad_o = {rec.step_id: np.zeros((model.dim, q)) for rec in result.trace.steps}
    grad_query = np.zeros_like(model.query_tokens)
    for rec in reversed(result.trace.steps):
        if rec.is_event_end:
            g_o, _ = attention_backward(rec.cross_cache, grad_z_blocks[rec.event])
            grad_o[rec.step_id] += g_o
        g_queries, g_memory = attention_backward(rec.self_cache, grad_o[rec.step_id])
        grad_query += g_queries
        if rec.kv_provenance is None:
            grad_query += g_memory
            continue
        for j, provenance in enumerate(rec.kv_provenance):
            g_block = g_memory[:, j * q : (j + 1) * q]
            for source, weight in provenance.items():
                grad_o[source] += weight * g_block
    return PipelineGradients(loss=hl.loss, grad_delta=hl.grad_delta, grad_query_tokens=grad_query)


#####################################
# Finite-Difference Check
#####################################


@dataclass
class GradCheckResult:
    max_relative_error: float
    checked: int
    epsilon: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max over entries of |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference_check(
    events: list[list[Matrix]],
    model: EventMemoryModel,
    head: ToyHead,
    cap: Optional[int],
    options: MemoryOptions = MemoryOptions(),
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    analytic_hook: Optional[Callable[[PipelineGradients], PipelineGradients]] = None,
) -> GradCheckResult:
    """
    Compare analytic gradients of every head and query-token entry with
    central differences (projections frozen).
    """
    result = process_video(events, model, cap, options)
    grads = pipeline_gradients(result, model, head)
    if analytic_hook is not None:
        grads = analytic_hook(grads)

    numeric_delta = np.zeros_like(head.delta)
    for idx in np.ndindex(head.delta.shape):
        plus, minus = head.delta.copy(), head.delta.copy()
        plus[idx] += epsilon
        minus[idx] -= epsilon
        numeric_delta[idx] = (
            head_loss(result.z_v, replace(head, delta=plus)).loss
            - head_loss(result.z_v, replace(head, delta=minus)).loss
        ) / (2 * epsilon)

    def loss_for(query_tokens: Matrix) -> float:
        perturbed = model.with_query_tokens(query_tokens)
        return head_loss(process_video(events, perturbed, cap, options).z_v, head).loss

    numeric_query = np.zeros_like(model.query_tokens)
    for idx in np.ndindex(model.query_tokens.shape):
        plus, minus = model.query_tokens.copy(), model.query_tokens.copy()
        plus[idx] += epsilon
        minus[idx] -= epsilon
        numeric_query[idx] = (loss_for(plus) - loss_for(minus)) / (2 * epsilon)

    err = max(
        relative_error(grads.grad_delta, numeric_delta),
        relative_error(grads.grad_query_tokens, numeric_query),
    )
    checked = head.delta.size + model.query_tokens.size
    logger.info(f"Gradient check over {checked} entries: max relative error {err:.3e} (eps={epsilon}).")
    return GradCheckResult(max_relative_error=err, checked=checked, epsilon=epsilon, tolerance=tolerance)
