"""Layer contracts: shapes, fixed points, norms, embeddings, gradchecks."""

import numpy as np
import pytest

import pmi.tensor as T
from pmi import Graph, Tensor, finite_diff_check
from pmi.layers import (
    FFN,
    BiLSTM,
    Embedding,
    InstanceNorm,
    Linear,
    LSTMCell,
    RelPosTable,
    load_embedding_table,
)
from pmi.rng import Rng


class TestLinear:
    def test_identity_weights(self):
        lin = Linear(3, 3, Rng(0))
        lin.W.data[:] = np.eye(3)
        lin.b.data[:] = 0.0
        x = Rng(1).normal(size=(4, 3))
        np.testing.assert_allclose(lin(Tensor(x)).data, x)

    def test_hand_example(self):
        lin = Linear(2, 1, Rng(0))
        lin.W.data[:] = [[1.0], [1.0]]
        lin.b.data[:] = [0.5]
        np.testing.assert_allclose(lin(Tensor([1.0, 1.0])).data, [2.5])

    def test_rank3_input(self):
        lin = Linear(4, 2, Rng(0))
        out = lin(Tensor(Rng(1).normal(size=(2, 3, 4))))
        assert out.shape == (2, 3, 2)

    def test_gradcheck(self):
        lin = Linear(4, 3, Rng(2))
        x = T.parameter(Rng(3).normal(size=(3, 4)))
        params = {"x": x, **lin.named_parameters("lin")}
        err = finite_diff_check(lambda: lin(x).sum(), params)
        assert err < 1e-6


class TestFFN:
    def test_zero_input_gives_second_bias(self):
        ffn = FFN(3, 3, 2, Rng(4))
        ffn.lin2.b.data[:] = [1.5, -0.5]
        out = ffn(T.zeros((5, 3)))
        np.testing.assert_allclose(out.data, np.tile([1.5, -0.5], (5, 1)))

    def test_position_independence(self):
        ffn = FFN(4, 4, 3, Rng(5))
        x = Rng(6).normal(size=(6, 4))
        perm = [3, 1, 5, 0, 2, 4]
        out = ffn(Tensor(x)).data
        out_perm = ffn(Tensor(x[perm])).data
        np.testing.assert_array_equal(out_perm, out[perm])

    def test_gradcheck(self):
        ffn = FFN(6, 6, 4, Rng(7))
        x = T.parameter(Rng(8).normal(size=(4, 6)))
        err = finite_diff_check(lambda: ffn(x).sum(),
                                {"x": x, **ffn.named_parameters("ffn")})
        assert err < 1e-5


class TestLSTM:
    def test_zero_fixed_point(self):
        cell = LSTMCell(3, 4, Rng(9))
        cell.W_x.data[:] = 0.0
        cell.W_h.data[:] = 0.0
        cell.b.data[:] = 0.0
        h, c = cell.initial_state()
        h2, c2 = cell.step(T.zeros((1, 3)), h, c)
        np.testing.assert_allclose(h2.data, np.zeros((1, 4)))
        np.testing.assert_allclose(c2.data, np.zeros((1, 4)))

    def test_determinism(self):
        cell = LSTMCell(3, 4, Rng(10))
        x = Tensor(Rng(11).normal(size=(1, 3)))
        h, c = cell.initial_state()
        a = cell.step(x, h, c)
        b = cell.step(x, h, c)
        np.testing.assert_array_equal(a[0].data, b[0].data)
        np.testing.assert_array_equal(a[1].data, b[1].data)

    def test_gradcheck_three_steps(self):
        cell = LSTMCell(2, 3, Rng(12))
        xs = T.parameter(Rng(13).normal(size=(3, 2)))

        def f():
            h, c = cell.initial_state()
            for t in range(3):
                h, c = cell.step(T.narrow(xs, 0, t, 1), h, c)
            return h.sum()

        err = finite_diff_check(f, {"xs": xs, **cell.named_parameters("cell")})
        assert err < 1e-4


class TestBiLSTM:
    def test_single_position(self):
        enc = BiLSTM(3, 2, Rng(14))
        out = enc(Tensor(Rng(15).normal(size=(1, 3))))
        assert out.shape == (1, 4)

    def test_output_shape(self):
        enc = BiLSTM(3, 5, Rng(16))
        out = enc(Tensor(Rng(17).normal(size=(7, 3))))
        assert out.shape == (7, 10)

    def test_reversal_swaps_direction_halves(self):
        rng = Rng(18)
        enc = BiLSTM(3, 4, rng)
        # Same cell in both directions isolates the symmetry law.
        enc.bwd = enc.fwd
        x = Rng(19).normal(size=(5, 3))
        out = enc(Tensor(x)).data
        out_rev = enc(Tensor(x[::-1].copy())).data
        np.testing.assert_allclose(out_rev[::-1, 4:], out[:, :4], atol=1e-12)
        np.testing.assert_allclose(out_rev[::-1, :4], out[:, 4:], atol=1e-12)

    def test_empty_sequence_rejected(self):
        enc = BiLSTM(3, 2, Rng(20))
        with pytest.raises(T.ShapeError, match="non-empty"):
            enc(Tensor(np.zeros((0, 3))))


class TestInstanceNorm:
    def test_constant_channel_maps_to_bias(self):
        norm = InstanceNorm(3)
        norm.bias.data[:] = [0.5, -1.0, 2.0]
        x = Tensor(np.tile([4.0, -2.0, 7.0], (6, 1)))
        out = norm(x).data
        np.testing.assert_allclose(out, np.tile([0.5, -1.0, 2.0], (6, 1)), atol=1e-9)

    def test_output_statistics(self):
        norm = InstanceNorm(3)
        norm.gain.data[:] = [2.0, 3.0, 0.5]
        norm.bias.data[:] = [1.0, -1.0, 0.0]
        x = Tensor(Rng(21).normal(2.0, 4.0, size=(64, 3)))
        out = norm(x).data
        np.testing.assert_allclose(out.mean(axis=0), [1.0, -1.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(out.std(axis=0) / [2.0, 3.0, 0.5],
                                   np.ones(3), atol=1e-3)

    def test_gradcheck(self):
        norm = InstanceNorm(3)
        x = T.parameter(Rng(22).normal(size=(6, 3)))
        err = finite_diff_check(lambda: (norm(x) * Tensor(Rng(23).normal(size=(6, 3)))).sum(),
                                {"x": x, **norm.named_parameters("in")})
        assert err < 1e-4


class TestEmbedding:
    def test_pad_is_zero_and_frozen(self):
        emb = Embedding(5, 3, Rng(24))
        out = emb([0, 2])
        np.testing.assert_array_equal(out.data[0], np.zeros(3))
        with Graph() as g:
            g.backward(emb([0, 2]).sum())
        np.testing.assert_array_equal(emb.table.grad[0], np.zeros(3))

    def test_duplicate_ids_accumulate(self):
        emb = Embedding(5, 3, Rng(25))
        with Graph() as g:
            g.backward(emb([2, 2]).sum())
        np.testing.assert_allclose(emb.table.grad[2], np.full(3, 2.0))

    def test_oov_maps_to_unk(self):
        emb = Embedding(5, 3, Rng(26))
        np.testing.assert_array_equal(emb([99]).data, emb([1]).data)

    def test_frozen_table_gets_no_gradient(self):
        emb = Embedding(5, 3, Rng(27), trainable=False)
        assert emb.named_parameters() == {}


class TestRelPosTable:
    def test_clipping_law(self):
        table = RelPosTable(3, 4, Rng(28))
        for i in range(10):
            for j in range(10):
                clipped = int(np.clip(j - i, -3, 3))
                np.testing.assert_array_equal(
                    table.lookup(i, j).data, table.lookup(0, clipped).data)

    def test_bin_matrix_matches_scalar(self):
        table = RelPosTable(2, 4, Rng(29))
        mat = table.bin_matrix(5, 7)
        for i in range(5):
            for j in range(7):
                assert mat[i, j] == table.bin_index(i, j)


class TestEmbeddingLoader:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("hello 0.1 0.2\nworld -1.0 2.5\n", encoding="utf-8")
        tokens, table = load_embedding_table(path)
        assert tokens == ["hello", "world"]
        np.testing.assert_allclose(table, [[0.1, 0.2], [-1.0, 2.5]])

    def test_inconsistent_width_rejected(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("a 0.1 0.2\nb 1.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="width"):
            load_embedding_table(path)
