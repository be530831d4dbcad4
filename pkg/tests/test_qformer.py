import math

import numpy as np
import pytest

from hem.errors import ConfigError, ShapeError
from hem.memory import GlobalMemory, LocalMemory, QueryBank
from hem.qformer import (
    AttentionParams,
    EventMemoryModel,
    MemoryOptions,
    ToyHead,
    attention_backward,
    concat_events,
    cross_attn_local,
    finite_difference_check,
    head_loss,
    patch_grid,
    pipeline_gradients,
    positional_encoding,
    process_event,
    process_video,
    relative_error,
    scaled_dot_attention,
    self_attn_queries,
    toy_encode,
)


def _events(rng, model, lengths):
    return [[rng.standard_normal((model.dim, model.num_patches)) for _ in range(n)] for n in lengths]


#####################################
# Encoder and positional code
#####################################


def test_toy_encode_constant_frame_gives_identical_columns():
    tokens = toy_encode(np.full((3, 8, 8), 0.4), seed=0, dim=6, num_patches=16)
    assert tokens.shape == (6, 16)
    np.testing.assert_allclose(tokens, np.repeat(tokens[:, :1], 16, axis=1))


def test_toy_encode_is_seeded(rng):
    frame = rng.uniform(size=(3, 4, 4))
    a = toy_encode(frame, seed=1, dim=5, num_patches=4)
    np.testing.assert_array_equal(a, toy_encode(frame, seed=1, dim=5, num_patches=4))
    assert not np.allclose(a, toy_encode(frame, seed=2, dim=5, num_patches=4))


@pytest.mark.parametrize("p, h, w", [(5, 8, 8), (16, 6, 8)])
def test_patch_grid_must_tile_frame(p, h, w):
    with pytest.raises(ShapeError):
        patch_grid(p, h, w)


def test_positional_encoding_at_zero():
    pe = positional_encoding(0, 8)
    np.testing.assert_array_equal(pe[0::2], 0.0)
    np.testing.assert_array_equal(pe[1::2], 1.0)


def test_positional_encoding_hand_computed():
    expected = [math.sin(1), math.cos(1), math.sin(0.01), math.cos(0.01)]
    np.testing.assert_allclose(positional_encoding(1, 4), expected, atol=1e-12)


def test_positional_encoding_bounded():
    for t in (0, 1, 7, 250, 10_000):
        for d in (1, 2, 7, 64):
            assert np.all(np.abs(positional_encoding(t, d)) <= 1.0)


#####################################
# Attention
#####################################


def test_single_key_returns_its_value():
    q = np.array([[0.3], [-1.2], [2.0]])
    gm = GlobalMemory(3, 1, cap=None)
    bank = QueryBank(3, 1).collect(q)
    gm.append_event(bank)
    out = self_attn_queries(q, gm, AttentionParams.identity(3))
    np.testing.assert_allclose(out, q, atol=1e-12)


def test_self_attention_falls_back_to_queries(rng):
    q = rng.standard_normal((4, 3))
    params = AttentionParams.identity(4)
    empty = GlobalMemory(4, 3, cap=None)
    expected, _ = scaled_dot_attention(q, q, params)
    np.testing.assert_array_equal(self_attn_queries(q, empty, params), expected)


def test_output_shape_for_any_memory_size(rng):
    params = AttentionParams.from_seed(8, 2, seed=3)
    q = rng.standard_normal((8, 5))
    for n in (1, 4, 17):
        out, cache = scaled_dot_attention(q, rng.standard_normal((8, n)), params)
        assert out.shape == (8, 5)
        assert all(a.shape == (5, n) for a in cache.weights)


def test_attention_rows_sum_to_one(rng):
    for _ in range(1000):
        params = AttentionParams.from_seed(4, 2, seed=int(rng.integers(1000)))
        _, cache = scaled_dot_attention(rng.standard_normal((4, 3)), rng.standard_normal((4, 6)) * 5, params)
        for a in cache.weights:
            np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)


def test_cross_attention_single_column_returns_projected_value(rng):
    params = AttentionParams.from_seed(4, 1, seed=9)
    v = rng.standard_normal((4, 1))
    lm = LocalMemory(4).append(v)
    out = cross_attn_local(rng.standard_normal((4, 3)), lm, params)
    np.testing.assert_allclose(out, np.repeat(params.w_v @ v, 3, axis=1), atol=1e-12)


def test_cross_attention_duplicate_invariance(rng):
    params = AttentionParams.from_seed(6, 3, seed=4)
    o = rng.standard_normal((6, 2))
    cols = rng.standard_normal((6, 5))
    once = cross_attn_local(o, LocalMemory(6).append(cols), params)
    twice = cross_attn_local(o, LocalMemory(6).append(cols).append(cols), params)
    np.testing.assert_allclose(once, twice, atol=1e-9)


def test_cross_attention_needs_local_memory(rng):
    with pytest.raises(ValueError, match="non-empty local memory"):
        cross_attn_local(rng.standard_normal((4, 2)), LocalMemory(4), AttentionParams.identity(4))


def test_heads_must_divide_dim():
    with pytest.raises(ConfigError):
        AttentionParams.from_seed(6, 4, seed=0)


def test_attention_backward_matches_finite_differences(rng):
    params = AttentionParams.from_seed(6, 2, seed=5)
    q = rng.standard_normal((6, 3))
    mem = rng.standard_normal((6, 4))
    upstream = rng.standard_normal((6, 3))

    def objective(q_, m_):
        out, _ = scaled_dot_attention(q_, m_, params)
        return float(np.sum(out * upstream))

    _, cache = scaled_dot_attention(q, mem, params)
    g_q, g_m = attention_backward(cache, upstream)
    eps = 1e-6
    for target, grad, which in ((q, g_q, 0), (mem, g_m, 1)):
        numeric = np.zeros_like(target)
        for idx in np.ndindex(target.shape):
            plus, minus = target.copy(), target.copy()
            plus[idx] += eps
            minus[idx] -= eps
            args_p = (plus, mem) if which == 0 else (q, plus)
            args_m = (minus, mem) if which == 0 else (q, minus)
            numeric[idx] = (objective(*args_p) - objective(*args_m)) / (2 * eps)
        assert relative_error(grad, numeric) < 1e-5


#####################################
# Events and video
#####################################


def test_one_frame_event_has_one_bank_block(rng, small_model):
    gm = small_model.new_global_memory(None)
    o_c, bank = process_event(_events(rng, small_model, [1])[0], small_model, gm)
    assert len(bank) == 1
    assert o_c.shape == (small_model.dim, small_model.num_queries)


def test_event_token_shape_independent_of_length(rng, small_model):
    for n in (1, 2, 5):
        gm = small_model.new_global_memory(None)
        o_c, bank = process_event(_events(rng, small_model, [n])[0], small_model, gm)
        assert o_c.shape == (small_model.dim, small_model.num_queries)
        assert bank.width == n * small_model.num_queries


def test_identical_events_identical_tokens(rng, small_model):
    frames = _events(rng, small_model, [3])[0]
    a, _ = process_event(frames, small_model, small_model.new_global_memory(None))
    b, _ = process_event(frames, small_model, small_model.new_global_memory(None))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_z_v_has_q_columns_per_event(rng, k):
    model = EventMemoryModel.create(dim=8, num_patches=4, num_queries=32, heads=2, seed=0)
    result = process_video(_events(rng, model, [2] * k), model, cap=20)
    assert result.z_v.shape == (8, 32 * k)


def test_single_event_z_v_equals_event_token(rng, small_model):
    result = process_video(_events(rng, small_model, [3]), small_model, cap=None)
    np.testing.assert_array_equal(result.z_v, result.event_tokens[0])


def test_concat_rejects_mismatched_tokens():
    with pytest.raises(ShapeError):
        concat_events([np.zeros((4, 2)), np.zeros((4, 3))])
    with pytest.raises(ValueError):
        concat_events([])


def test_global_memory_stays_within_cap(rng, small_model):
    result = process_video(_events(rng, small_model, [3, 4, 2, 5]), small_model, cap=3)
    assert max(result.global_memory.size_trajectory) <= 3


def test_events_are_independent_without_global_memory(rng, small_model):
    events = _events(rng, small_model, [2, 3, 1])
    q = small_model.num_queries
    forward = process_video(events, small_model, cap=0).z_v
    backward = process_video(events[::-1], small_model, cap=0).z_v
    for k in range(3):
        np.testing.assert_allclose(forward[:, k * q : (k + 1) * q], backward[:, (2 - k) * q : (3 - k) * q], atol=1e-12)


def test_global_memory_links_events(rng, small_model):
    events = _events(rng, small_model, [2, 3])
    with_gm = process_video(events, small_model, cap=None).z_v
    without = process_video(events, small_model, cap=0).z_v
    q = small_model.num_queries
    np.testing.assert_allclose(with_gm[:, :q], without[:, :q], atol=1e-12)
    assert not np.allclose(with_gm[:, q:], without[:, q:])


def test_process_video_is_deterministic(rng):
    events = [[rng.standard_normal((8, 4)) for _ in range(3)] for _ in range(2)]
    a = process_video(events, EventMemoryModel.create(8, 4, 4, 2, seed=11), cap=2).z_v
    b = process_video(events, EventMemoryModel.create(8, 4, 4, 2, seed=11), cap=2).z_v
    np.testing.assert_array_equal(a, b)


#####################################
# Head loss and gradients
#####################################


def test_symmetric_two_class_loss_is_ln2():
    head = ToyHead(delta=np.zeros((2, 4)), target=0)
    assert head_loss(np.ones((2, 2)), head).loss == pytest.approx(math.log(2.0))


def test_loss_falls_as_target_logit_grows():
    losses = []
    for scale in (0.0, 1.0, 5.0, 20.0):
        delta = np.array([[scale, 0.0], [0.0, 0.0]])
        losses.append(head_loss(np.array([[1.0], [0.0]]), ToyHead(delta, target=0)).loss)
    assert losses == sorted(losses, reverse=True)
    assert losses[-1] < 1e-8


def test_head_target_must_be_a_class():
    with pytest.raises(ValueError):
        ToyHead(delta=np.zeros((3, 4)), target=3)


def test_head_gradients_match_finite_differences(rng):
    for _ in range(10):
        z = rng.standard_normal((3, 4))
        head = ToyHead(delta=rng.standard_normal((3, 12)), target=int(rng.integers(3)))
        hl = head_loss(z, head)
        eps = 1e-5
        numeric = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            plus, minus = z.copy(), z.copy()
            plus[idx] += eps
            minus[idx] -= eps
            numeric[idx] = (head_loss(plus, head).loss - head_loss(minus, head).loss) / (2 * eps)
        assert relative_error(hl.grad_z, numeric) < 1e-4


@pytest.mark.parametrize(
    "cap, options",
    [
        (None, MemoryOptions()),
        (2, MemoryOptions()),
        (0, MemoryOptions()),
        (3, MemoryOptions(use_local_memory=False)),
        (3, MemoryOptions(use_global_memory=False)),
    ],
)
def test_full_pipeline_gradcheck(rng, small_model, cap, options):
    events = _events(rng, small_model, [3, 3])
    head = ToyHead.from_seed(small_model.dim * small_model.num_queries * 2, 3, target=1, seed=7)
    result = finite_difference_check(events, small_model, head, cap, options)
    assert result.passed, result.max_relative_error
    assert result.checked == head.delta.size + small_model.query_tokens.size


def test_gradcheck_detects_wrong_gradient(rng, small_model):
    events = _events(rng, small_model, [2, 2])
    head = ToyHead.from_seed(small_model.dim * small_model.num_queries * 2, 3, target=0, seed=7)

    def corrupt(grads):
        grads.grad_query_tokens = grads.grad_query_tokens * 1.5
        return grads

    result = finite_difference_check(events, small_model, head, 4, analytic_hook=corrupt)
    assert not result.passed


def test_pipeline_gradient_loss_matches_head_loss(rng, small_model):
    result = process_video(_events(rng, small_model, [2, 2]), small_model, cap=None)
    head = ToyHead.from_seed(result.z_v.size, 4, target=2, seed=1)
    grads = pipeline_gradients(result, small_model, head)
    assert grads.loss == pytest.approx(head_loss(result.z_v, head).loss)
    assert grads.grad_query_tokens.shape == small_model.query_tokens.shape
