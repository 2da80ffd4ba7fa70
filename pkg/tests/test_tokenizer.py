import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtca.exceptions import DimensionError
from dtca.tensor import Tensor
from dtca.tokenizer import (
    TokenBatch,
    add_positions,
    assemble_input,
    build_position_tables,
    embed_tokens,
    extract_prediction,
    patchify,
    sinusoid_table,
    unpatchify,
)


class TestPatchify:
    def test_top_left_patch_row_major(self):
        field = np.arange(16.0).reshape(1, 1, 4, 4)
        tokens = patchify(Tensor(field), 2).data
        assert tokens.shape == (1, 4, 1, 4)
        assert tokens[0, 0, 0].tolist() == [0.0, 1.0, 4.0, 5.0]
        # second token is the top-right patch in grid row-major order
        assert tokens[0, 1, 0].tolist() == [2.0, 3.0, 6.0, 7.0]

    def test_patch_equals_field_single_token(self, rng):
        field = rng.standard_normal((2, 3, 4, 4))
        tokens = patchify(Tensor(field), 4).data
        assert tokens.shape == (2, 1, 3, 16)
        assert np.array_equal(tokens[1, 0, 2], field[1, 2].ravel())

    def test_paper_scale_token_count(self):
        # 32x32 latent with 2x2 patches gives 256 tokens per frame
        field = np.zeros((1, 1, 32, 32), dtype=np.float32)
        assert patchify(Tensor(field), 2).shape == (1, 256, 1, 4)

    def test_non_divisible_errors(self):
        with pytest.raises(DimensionError):
            patchify(Tensor(np.zeros((1, 1, 5, 4))), 2)

    @given(
        st.integers(0, 2 ** 31 - 1),
        st.sampled_from([(4, 2), (8, 2), (8, 4), (6, 3), (16, 4)]),
        st.integers(1, 3),
        st.integers(1, 4),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_bijection(self, seed, side_patch, b, f):
        side, patch = side_patch
        values = np.random.default_rng(seed).normal(size=(b, f, side, side))
        tokens = patchify(Tensor(values, dtype=np.float64), patch)
        back = unpatchify(tokens, patch, side, side)
        assert np.array_equal(back.data, values)


class TestEmbed:
    def test_identity_weight_passthrough(self, rng):
        tokens = Tensor(rng.standard_normal((2, 4, 3, 4)), dtype=np.float64)
        out = embed_tokens(tokens, Tensor(np.eye(4)))
        assert np.array_equal(out.data, tokens.data)

    def test_zero_input_bias_rows(self, rng):
        bias = Tensor(rng.standard_normal(6), dtype=np.float64)
        out = embed_tokens(Tensor(np.zeros((1, 2, 2, 4))),
                           Tensor(np.zeros((4, 6))), bias)
        assert np.allclose(out.data, bias.data)

    def test_full_rank_preserves_differences(self, rng):
        w = Tensor(rng.standard_normal((4, 8)), dtype=np.float64)  # full rank w.p. 1
        a = rng.standard_normal((1, 3, 2, 4))
        b = a.copy()
        b[0, 1, 1] += rng.standard_normal(4)
        out_a = embed_tokens(Tensor(a, dtype=np.float64), w).data
        out_b = embed_tokens(Tensor(b, dtype=np.float64), w).data
        assert np.linalg.norm(out_a[0, 1, 1] - out_b[0, 1, 1]) > 0


class TestPositions:
    def test_zero_tokens_become_table_sum(self):
        tables = build_position_tables(4, 3, 8)
        batch = TokenBatch(Tensor(np.zeros((2, 4, 3, 8))), 1, 2, 2, 2)
        out = add_positions(batch, tables).data
        expected = tables.patch_pos[:, None, :] + tables.frame_pos[None, :, :]
        for b in range(2):
            assert np.allclose(out[b], expected, atol=1e-6)

    def test_additivity(self, rng):
        tables = build_position_tables(4, 3, 8)
        a = rng.standard_normal((1, 4, 3, 8))
        b = rng.standard_normal((1, 4, 3, 8))
        batch_a = TokenBatch(Tensor(a, dtype=np.float64), 1, 2, 2, 2)
        batch_b = TokenBatch(Tensor(b, dtype=np.float64), 1, 2, 2, 2)
        diff_before = a - b
        diff_after = (add_positions(batch_a, tables).data
                      - add_positions(batch_b, tables).data)
        assert np.allclose(diff_before, diff_after, atol=1e-9)

    def test_distinct_offsets_for_distinct_positions(self):
        # no (c, f) pair collides over a desk-scale grid
        channels, frames, dim = 64, 20, 32
        tables = build_position_tables(channels, frames, dim)
        combined = tables.combined().reshape(channels * frames, dim)
        seen = {row.tobytes() for row in np.round(combined, 9)}
        assert len(seen) == channels * frames

    def test_deterministic(self):
        a = sinusoid_table(16, 12)
        b = sinusoid_table(16, 12)
        assert np.array_equal(a, b)


class TestAssemble:
    def _pair(self, rng, frames_cond=2, frames_pred=4):
        cond = TokenBatch(
            Tensor(rng.standard_normal((2, 4, frames_cond, 6)), dtype=np.float64),
            frames_cond, 0, 2, 2)
        pred = TokenBatch(
            Tensor(rng.standard_normal((2, 4, frames_pred, 6)), dtype=np.float64),
            0, frames_pred, 2, 2)
        return cond, pred

    def test_paper_layout(self, rng):
        cond, pred = self._pair(rng, frames_cond=4, frames_pred=16)
        out = assemble_input(cond, pred)
        assert out.frames == 20
        assert out.frames_cond == 4 and out.frames_pred == 16

    def test_extract_inverse(self, rng):
        cond, pred = self._pair(rng)
        out = assemble_input(cond, pred)
        assert np.array_equal(extract_prediction(out).tokens.data, pred.tokens.data)
        assert np.array_equal(out.condition().tokens.data, cond.tokens.data)

    def test_frame_slices(self, rng):
        cond, pred = self._pair(rng, frames_cond=2, frames_pred=4)
        out = assemble_input(cond, pred)
        assert out.frames == 6
        assert np.array_equal(out.tokens.data[:, :, :2], cond.tokens.data)
        assert np.array_equal(out.tokens.data[:, :, 2:], pred.tokens.data)

    def test_mismatch_errors(self, rng):
        cond, _ = self._pair(rng)
        bad = TokenBatch(Tensor(np.zeros((3, 4, 4, 6))), 0, 4, 2, 2)
        with pytest.raises(DimensionError):
            assemble_input(cond, bad)


def test_token_batch_invariants():
    with pytest.raises(DimensionError):
        TokenBatch(Tensor(np.zeros((1, 4, 3, 8))), 1, 1, 2, 2)  # F != Fc+Fn
    with pytest.raises(DimensionError):
        TokenBatch(Tensor(np.zeros((1, 5, 3, 8))), 1, 2, 2, 2)  # C != grid^2
