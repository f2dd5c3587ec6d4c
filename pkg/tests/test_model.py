import math

import numpy as np
import pytest
import torch

from aant.data import RawFrameSequence, VideoRecord
from aant.encoders import MockFrameEncoder, grid_cell_means, mock_encode_frames
from aant.model import (
    AnticipationModel,
    PromptFFN,
    TemporalAttention,
    adjust_logits,
    full_forward,
    instance_class_embedding,
    similarity_scores,
    video_prompt,
)

TEMP = 0.07


# ---------------------------------------------------------------- oracles


def np_layer_norm(x, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def np_attention(v, wq, wk, wv, wo, heads):
    """Straight-line reimplementation of the attention block."""
    x = np_layer_norm(v)
    n, d = x.shape
    dk = d // heads
    q, k, val = x @ wq.T, x @ wk.T, x @ wv.T
    out = np.zeros((n, d))
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        logits = q[:, sl] @ k[:, sl].T / math.sqrt(dk)
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        w = w / w.sum(axis=1, keepdims=True)
        out[:, sl] = w @ val[:, sl]
    return out @ wo.T


def np_gelu(x):
    return 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


def make_attention(dim, heads, seed=0):
    att = TemporalAttention(dim, heads).double()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for lin in (att.w_q, att.w_k, att.w_v, att.w_o):
            lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen, dtype=torch.float64))
    return att


class TestTemporalAttention:
    def test_matches_numpy_oracle_hand_weights(self):
        att = TemporalAttention(2, heads=1).double()
        wq = np.array([[1.0, 0.5], [-0.3, 2.0]])
        wk = np.array([[0.7, -1.0], [0.2, 0.4]])
        wv = np.array([[2.0, 0.0], [0.0, -1.0]])
        wo = np.array([[1.0, 1.0], [0.5, -0.5]])
        with torch.no_grad():
            att.w_q.weight.copy_(torch.tensor(wq))
            att.w_k.weight.copy_(torch.tensor(wk))
            att.w_v.weight.copy_(torch.tensor(wv))
            att.w_o.weight.copy_(torch.tensor(wo))
        v = np.array([[1.0, 2.0], [-1.0, 0.5]])
        expected = np_attention(v, wq, wk, wv, wo, heads=1)
        got = att(torch.tensor(v)).detach().numpy()
        assert np.allclose(got, expected, atol=1e-12)

    def test_matches_numpy_oracle_multihead(self):
        att = make_attention(8, heads=2, seed=3)
        v = np.random.default_rng(5).standard_normal((6, 8))
        expected = np_attention(
            v,
            att.w_q.weight.detach().numpy(),
            att.w_k.weight.detach().numpy(),
            att.w_v.weight.detach().numpy(),
            att.w_o.weight.detach().numpy(),
            heads=2,
        )
        got = att(torch.tensor(v)).detach().numpy()
        assert np.allclose(got, expected, atol=1e-10)

    def test_single_frame_softmax_collapses(self):
        att = make_attention(4, heads=2, seed=1)
        v = torch.tensor(np.random.default_rng(2).standard_normal((1, 4)))
        # with one key the attention weight is exactly 1: output is W_O(V-projection)
        x = att.norm(v)
        expected = att.w_o(att.w_v(x))
        assert torch.allclose(att(v), expected, atol=1e-12)

    def test_permutation_equivariance(self):
        att = make_attention(8, heads=4, seed=7)
        v = torch.tensor(np.random.default_rng(11).standard_normal((7, 8)))
        perm = torch.tensor([3, 0, 6, 1, 5, 2, 4])
        assert torch.allclose(att(v[perm]), att(v)[perm], atol=1e-9)

    def test_attention_rows_are_convex_weights(self):
        att = make_attention(6, heads=3, seed=9)
        v = torch.tensor(np.random.default_rng(0).standard_normal((5, 6)))
        weights = att.attention_weights(v)
        assert weights.shape == (3, 5, 5)
        assert torch.all(weights >= 0)
        assert torch.allclose(weights.sum(dim=-1), torch.ones(3, 5, dtype=torch.float64), atol=1e-9)

    def test_dim_head_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            TemporalAttention(6, heads=4)


class TestClassifier:
    def test_zero_map(self):
        head = torch.nn.Linear(3, 2).double()
        with torch.no_grad():
            head.weight.zero_()
            head.bias.zero_()
        out = head(torch.ones(4, 3, dtype=torch.float64))
        assert torch.all(out == 0)

    def test_constant_bias(self):
        head = torch.nn.Linear(3, 2).double()
        with torch.no_grad():
            head.weight.zero_()
            head.bias.copy_(torch.tensor([0.0, 5.0]))
        out = head(torch.randn(6, 3, dtype=torch.float64))
        assert torch.all(out == torch.tensor([0.0, 5.0], dtype=torch.float64))

    def test_hand_affine(self):
        head = torch.nn.Linear(2, 2).double()
        with torch.no_grad():
            head.weight.copy_(torch.tensor([[1.0, 2.0], [-1.0, 0.5]]))
            head.bias.copy_(torch.tensor([0.1, -0.2]))
        out = head(torch.tensor([[3.0, -1.0]], dtype=torch.float64))
        # by hand: (3*1 + -1*2 + 0.1, 3*-1 + -1*0.5 - 0.2) = (1.1, -3.7)
        assert torch.allclose(out, torch.tensor([[1.1, -3.7]], dtype=torch.float64), atol=1e-12)

    def test_affine_interpolation_identity(self):
        head = torch.nn.Linear(4, 2).double()
        x = torch.randn(5, 4, dtype=torch.float64)
        y = torch.randn(5, 4, dtype=torch.float64)
        alpha = 0.3
        lhs = head(alpha * x + (1 - alpha) * y)
        rhs = alpha * head(x) + (1 - alpha) * head(y)
        assert torch.allclose(lhs, rhs, atol=1e-9)


class TestVideoPrompt:
    def test_constant_column_gives_frame_mean(self):
        v = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        logits = torch.zeros(2, 2, dtype=torch.float64)
        prompt = video_prompt(logits, v)
        mean = v.mean(dim=0)
        expected = mean / mean.norm()
        assert torch.allclose(prompt[0], expected, atol=1e-12)
        assert torch.allclose(prompt[1], expected, atol=1e-12)

    def test_one_hot_limit(self):
        v = torch.tensor(np.random.default_rng(1).standard_normal((4, 3)))
        logits = torch.zeros(4, 2, dtype=torch.float64)
        logits[2, 1] = 50.0
        prompt = video_prompt(logits, v)
        expected = v[2] / v[2].norm()
        assert torch.allclose(prompt[1], expected, atol=1e-9)

    def test_hand_weighted_sum(self):
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        logits = np.array([[0.0, 1.0], [0.0, 3.0]])
        w1 = np.exp([1.0, 3.0])
        w1 /= w1.sum()
        raw = w1 @ v
        expected = raw / np.linalg.norm(raw)
        prompt = video_prompt(torch.tensor(logits), torch.tensor(v))
        assert np.allclose(prompt[1].numpy(), expected, atol=1e-12)

    def test_weights_sum_to_one(self):
        logits = torch.tensor(np.random.default_rng(3).standard_normal((6, 2)))
        weights = torch.softmax(logits, dim=0)
        assert torch.allclose(weights.sum(dim=0), torch.ones(2, dtype=torch.float64), atol=1e-9)


class TestInstanceEmbedding:
    def make_ffn(self, w1, b1, w2, b2):
        ffn = PromptFFN(2).double()
        with torch.no_grad():
            ffn.fc1.weight.copy_(torch.tensor(w1))
            ffn.fc1.bias.copy_(torch.tensor(b1))
            ffn.fc2.weight.copy_(torch.tensor(w2))
            ffn.fc2.bias.copy_(torch.tensor(b2))
        return ffn

    def test_zero_ffn_returns_class_matrix(self):
        ffn = self.make_ffn(np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        x = torch.tensor(np.random.default_rng(0).standard_normal((2, 2)))
        v_attn = torch.tensor(np.random.default_rng(1).standard_normal((2, 2)))
        assert torch.equal(instance_class_embedding(v_attn, x, ffn), x)

    def test_zero_prompt(self):
        w1 = np.array([[1.0, -0.5], [0.3, 0.8]])
        ffn = self.make_ffn(w1, np.array([0.1, 0.2]), np.eye(2), np.zeros(2))
        x = torch.tensor([[0.5, -1.0], [2.0, 0.3]], dtype=torch.float64)
        got = instance_class_embedding(torch.zeros(2, 2, dtype=torch.float64), x, ffn)
        expected = torch.tensor(
            np_gelu(x.numpy() @ w1.T + np.array([0.1, 0.2])) @ np.eye(2).T + x.numpy()
        )
        assert torch.allclose(got, expected, atol=1e-12)

    def test_hand_two_layer(self):
        w1 = np.array([[1.0, 0.0], [0.0, 2.0]])
        b1 = np.array([0.0, -1.0])
        w2 = np.array([[0.5, 1.0], [-1.0, 0.0]])
        b2 = np.array([0.2, 0.0])
        ffn = self.make_ffn(w1, b1, w2, b2)
        v_attn = torch.tensor([[1.0, 0.5]], dtype=torch.float64)
        x = torch.tensor([[0.0, 0.5]], dtype=torch.float64)
        s = v_attn.numpy() + x.numpy()  # [[1.0, 1.0]]
        hidden = np_gelu(s @ w1.T + b1)  # [[gelu(1), gelu(1)]]
        expected = hidden @ w2.T + b2 + x.numpy()
        with torch.no_grad():
            got = instance_class_embedding(v_attn, x, ffn)
        assert np.allclose(got.numpy(), expected, atol=1e-12)


class TestSimilarityScores:
    def make_zero_refine(self, dim=2):
        refine = torch.nn.Linear(dim, dim).double()
        with torch.no_grad():
            refine.weight.zero_()
            refine.bias.zero_()
        return refine

    def test_aligned_row_hits_inverse_temperature(self):
        refine = self.make_zero_refine()
        instance = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        features = torch.tensor([[2.0, 0.0]], dtype=torch.float64)  # same direction as class 0
        with torch.no_grad():
            s = similarity_scores(features, instance, refine, TEMP)
        assert abs(float(s[0, 0]) - 1 / 0.07) < 1e-9
        assert abs(float(s[0, 0]) - 14.285714285714286) < 1e-9

    def test_orthogonal_zero(self):
        refine = self.make_zero_refine()
        instance = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        features = torch.tensor([[0.0, 3.0]], dtype=torch.float64)
        with torch.no_grad():
            s = similarity_scores(features, instance, refine, TEMP)
        assert abs(float(s[0, 0])) < 1e-12

    def test_antiparallel(self):
        refine = self.make_zero_refine()
        instance = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        features = torch.tensor([[-5.0, 0.0]], dtype=torch.float64)
        with torch.no_grad():
            s = similarity_scores(features, instance, refine, TEMP)
        assert abs(float(s[0, 0]) + 1 / 0.07) < 1e-9

    def test_range_bound(self):
        rng = np.random.default_rng(8)
        refine = torch.nn.Linear(4, 4).double()
        instance = torch.tensor(rng.standard_normal((2, 4)))
        features = torch.tensor(rng.standard_normal((9, 4)))
        with torch.no_grad():
            s = similarity_scores(features, instance, refine, TEMP)
        assert torch.all(s.abs() <= 1 / 0.07 + 1e-9)


def make_model(dim=4, text_dim=6, heads=2, seed=0, n_texts=2):
    model = AnticipationModel(feature_dim=dim, text_dim=text_dim, heads=heads, seed=seed)
    rng = np.random.default_rng(seed + 100)
    pos = rng.standard_normal((n_texts, text_dim))
    neg = rng.standard_normal((n_texts, text_dim))
    pos /= np.linalg.norm(pos, axis=1, keepdims=True)
    neg /= np.linalg.norm(neg, axis=1, keepdims=True)
    model.set_class_texts(pos, neg)
    return model


def make_record(n=6, dim=4, toa=4, label=1, seed=0):
    rng = np.random.default_rng(seed)
    return VideoRecord(
        id=f"v{seed}",
        features=rng.standard_normal((n, dim)).astype(np.float32),
        fps=20.0,
        toa=toa if label else 0,
        label=label,
    )


class TestFullForward:
    def test_symmetric_logits_give_half(self):
        model = make_model()
        with torch.no_grad():
            model.classifier.weight.zero_()
            model.classifier.bias.zero_()
        out = full_forward(model, make_record())
        assert np.allclose(out.probs, 0.5, atol=1e-7)
        assert np.allclose(out.logits, 0.0, atol=1e-7)

    def test_threshold_adjustment_hand_example(self):
        adjusted = adjust_logits(torch.tensor([[0.2, 0.8]], dtype=torch.float64), 0.7)
        assert torch.allclose(adjusted, torch.tensor([[0.2, 0.1]], dtype=torch.float64), atol=1e-12)
        p = torch.softmax(adjusted, dim=1)[0, 1]
        # by hand: sigmoid(0.1 - 0.2) = 1 / (1 + e^0.1)
        assert abs(float(p) - 1.0 / (1.0 + math.exp(0.1))) < 1e-12
        assert float(p) < 0.5

    def test_video_score_window_for_positive(self):
        model = make_model()
        record = make_record(n=2, toa=1, label=1, seed=3)
        out = full_forward(model, record)
        assert out.video_score == pytest.approx(out.probs[0])

    def test_video_score_full_window_for_negative(self):
        model = make_model()
        record = make_record(n=5, label=0, seed=4)
        out = full_forward(model, record)
        assert out.video_score == pytest.approx(out.probs.max())

    def test_probability_strictly_decreasing_in_tau(self):
        model = make_model()
        record = make_record(seed=5)
        taus = np.linspace(-2, 2, 9)
        peak = [full_forward(model, record, tau=float(t)).probs[0] for t in taus]
        assert all(a > b for a, b in zip(peak, peak[1:]))

    def test_zeroed_fusion_makes_instance_video_independent(self):
        model = make_model()
        with torch.no_grad():
            model.prompt_ffn.fc1.weight.zero_()
            model.prompt_ffn.fc1.bias.zero_()
            model.prompt_ffn.fc2.weight.zero_()
            model.prompt_ffn.fc2.bias.zero_()
            model.refine.weight.zero_()
            model.refine.bias.zero_()
        x = model.class_matrix().detach()
        refined = torch.nn.functional.normalize(x, dim=1)
        for seed in (1, 2):
            record = make_record(seed=seed)
            out = full_forward(model, record)
            feats = torch.nn.functional.normalize(
                torch.tensor(np.array(record.features), dtype=torch.float32), dim=1
            )
            expected = (feats @ refined.T / model.temperature).numpy()
            assert np.allclose(out.scores, expected, atol=1e-6)

    def test_dim_mismatch_rejected(self):
        model = make_model(dim=4)
        with pytest.raises(ValueError, match="dim"):
            full_forward(model, make_record(dim=5))

    def test_init_deterministic_per_seed(self):
        a = AnticipationModel(4, text_dim=6, heads=2, seed=11)
        b = AnticipationModel(4, text_dim=6, heads=2, seed=11)
        c = AnticipationModel(4, text_dim=6, heads=2, seed=12)
        for (name, ta), (_, tb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(ta, tb), name
        assert any(
            not torch.equal(ta, tc) for ta, tc in zip(a.state_dict().values(), c.state_dict().values())
        )


class TestMockFrameEncoder:
    def make_raw(self, frames):
        return RawFrameSequence(frames=np.asarray(frames, dtype=np.uint8), fps=10.0)

    def test_all_black_gives_zero_rows(self):
        raw = self.make_raw(np.zeros((2, 8, 8, 3)))
        feats = mock_encode_frames(raw, dim=5, seed=0)
        assert np.all(feats == 0.0)

    def test_constant_gray_direction_scale_invariant(self):
        a = mock_encode_frames(self.make_raw(np.full((1, 8, 8, 3), 100)), dim=5, seed=0)
        b = mock_encode_frames(self.make_raw(np.full((1, 8, 8, 3), 200)), dim=5, seed=0)
        assert np.allclose(a, b, atol=1e-6)

    def test_row_count_matches_frames(self):
        raw = self.make_raw(np.random.default_rng(0).integers(0, 256, (3, 8, 12, 3)))
        assert mock_encode_frames(raw, dim=7, seed=1).shape == (3, 7)

    def test_too_small_frames_rejected(self):
        raw = self.make_raw(np.zeros((1, 2, 8, 3)))
        with pytest.raises(ValueError, match="4x4"):
            mock_encode_frames(raw, dim=4, seed=0)

    def test_cell_means_oracle(self):
        # one frame built from 16 constant 2x2 cells with known values
        values = np.arange(16).reshape(4, 4) * 10
        frame = np.repeat(np.repeat(values, 2, axis=0), 2, axis=1)
        raw = self.make_raw(np.stack([np.stack([frame] * 3, axis=-1)]))
        cells = grid_cell_means(raw.frames)
        assert cells.shape == (1, 48)
        assert np.allclose(cells[0].reshape(4, 4, 3)[..., 0], values)

    def test_encoder_class_deterministic(self):
        raw = self.make_raw(np.random.default_rng(5).integers(0, 256, (2, 8, 8, 3)))
        enc = MockFrameEncoder(dimension=6, seed=2)
        assert enc.encode(raw).tobytes() == enc.encode(raw).tobytes()
