import math

import numpy as np
import pytest

from safenet.attention import (
    DataEmbedding,
    ProjectionWeights,
    SpikeOpCounter,
    SSABlock,
    active_count,
    positional_encoding,
    project_qkv,
    select_active,
    sparse_attention,
    sparsity_measure,
    spike_matmul,
)
from safenet.custom_exceptions import ContractViolationError, DimensionError
from safenet.diffcore import Tensor, grad_check, mul, sum
from safenet.schemas import EmbedConfig, LIFConfig, SSAConfig
from safenet.snn import LIFNode


def softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def test_spike_matmul_sums_selected_keys():
    q = Tensor([[1.0, 0.0, 1.0, 0.0]])
    k_t = Tensor([[-0.1], [0.5], [-0.3], [0.2]])
    assert spike_matmul(q, k_t).values[0, 0] == pytest.approx(-0.4)


def test_spike_matmul_equals_dense_product(rng: np.random.Generator):
    q = (rng.random((2, 6, 5)) > 0.5).astype(float)
    k_t = rng.standard_normal((2, 5, 7))
    assert np.allclose(spike_matmul(Tensor(q), Tensor(k_t)).values, q @ k_t)


def test_spike_matmul_rejects_non_binary_queries():
    with pytest.raises(ContractViolationError):
        spike_matmul(Tensor([[0.5, 1.0]]), Tensor([[1.0], [2.0]]))


def test_spike_matmul_counts_additions():
    q = Tensor([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    with SpikeOpCounter() as counter:
        spike_matmul(q, Tensor(np.ones((3, 4))))
    assert counter.score_additions == 3 * 4


@pytest.mark.parametrize(
    "t,c,expected",
    [
        (50, 5, 20),
        (6, 5, 6),
        (1, 5, 0),
        (100, 1, 5),
    ],
)
def test_active_count(t: int, c: int, expected: int):
    assert active_count(t, c) == expected


def test_select_active_breaks_ties_towards_lower_index():
    assert select_active(np.array([[1.0, 3.0, 3.0, 0.0]]), 2).tolist() == [[1, 2]]
    assert select_active(np.array([[2.0, 2.0, 2.0]]), 1).tolist() == [[0]]


def test_sparsity_measure_is_max_minus_mean():
    q = Tensor([[1.0, 0.0], [1.0, 1.0]])
    k = Tensor([[1.0, 2.0], [3.0, -1.0], [0.0, 0.0]])
    m = sparsity_measure(q, k, d=4)
    # scores / 2: row 0 -> [0.5, 1.5, 0], row 1 -> [1.5, 1.0, 0]
    assert m.tolist() == pytest.approx([1.5 - 2.0 / 3.0, 1.5 - 2.5 / 3.0])


def test_sparse_attention_lazy_rows_take_mean_value(rng: np.random.Generator):
    cfg = SSAConfig(d_model=4)
    q = Tensor(rng.standard_normal((5, 4)))
    k = Tensor(rng.standard_normal((5, 4)))
    v = Tensor(rng.standard_normal((5, 4)))
    out = sparse_attention(q, k, v, cfg, u=2, spiking=False).values

    active = select_active(sparsity_measure(q, k, 4, spiking=False), 2)
    lazy = [i for i in range(5) if i not in active]
    dense = softmax_rows(q.values @ k.values.T / 2.0) @ v.values
    assert np.allclose(out[active], dense[active])
    assert np.allclose(out[lazy], v.values.mean(axis=0))


def test_all_active_rows_is_dense_attention(rng: np.random.Generator):
    cfg = SSAConfig(d_model=8, n_heads=2)
    q, k, v = (rng.standard_normal((1, 6, 8)) for _ in range(3))
    out = sparse_attention(Tensor(q), Tensor(k), Tensor(v), cfg, u=6, spiking=False).values

    for h in range(2):
        cols = slice(4 * h, 4 * h + 4)
        dense = softmax_rows(q[0, :, cols] @ k[0, :, cols].T / 2.0) @ v[0, :, cols]
        assert np.allclose(out[0, :, cols], dense)


def test_sparse_attention_counts_rows(rng: np.random.Generator):
    cfg = SSAConfig(d_model=4)
    q = Tensor((rng.random((2, 10, 4)) > 0.5).astype(float))
    k, v = Tensor(rng.standard_normal((2, 10, 4))), Tensor(rng.standard_normal((2, 10, 4)))
    with SpikeOpCounter() as counter:
        sparse_attention(q, k, v, cfg, u=3)
    assert counter.active_rows == 2 * 3
    assert counter.lazy_rows == 2 * 7
    assert counter.apply_macs == 2 * 3 * 10 * 4
    assert counter.lazy_fill_additions == 2 * 10 * 4
    assert counter.score_additions <= 2 * 3 * 10 * 4


def test_counter_inactive_outside_context(rng: np.random.Generator):
    counter = SpikeOpCounter()
    q = Tensor((rng.random((4, 4)) > 0.5).astype(float))
    sparse_attention(q, Tensor(np.ones((4, 4))), Tensor(np.ones((4, 4))), SSAConfig(d_model=4))
    assert counter.active_rows == 0


def test_sparse_attention_rejects_mismatched_shapes():
    with pytest.raises(DimensionError):
        sparse_attention(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))), SSAConfig())


def test_positional_encoding():
    pe = positional_encoding(5, 6)
    assert pe.shape == (5, 6)
    assert np.allclose(pe[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    assert pe[1, 0] == pytest.approx(math.sin(1.0))
    assert pe[1, 3] == pytest.approx(math.cos(1.0 / 10000 ** (2 / 6)))


def test_embedding_shapes(rng: np.random.Generator):
    embedding = DataEmbedding(EmbedConfig(c_in=3, d_model=8), rng)
    assert embedding(Tensor(rng.standard_normal((2, 7, 3)))).shape == (2, 7, 8)
    assert embedding(Tensor(rng.standard_normal((7, 3)))).shape == (7, 8)
    with pytest.raises(DimensionError):
        embedding(Tensor(rng.standard_normal((7, 4))))


@pytest.mark.parametrize("shape", [(2, 9, 8), (9, 8), (8,)])
def test_ssa_block_keeps_shape(rng: np.random.Generator, shape: tuple[int, ...]):
    block = SSABlock(SSAConfig(d_model=8), rng)
    assert block(Tensor(rng.standard_normal(shape))).shape == shape


def test_ssa_block_gradient_with_passthrough_neurons(rng: np.random.Generator):
    block = SSABlock(SSAConfig(d_model=4, lif=LIFConfig(passthrough=True)), rng)
    c = Tensor(rng.standard_normal((2, 6, 4)))
    x = Tensor(rng.standard_normal((2, 6, 4)))
    assert grad_check(lambda v: sum(mul(block(v), c)), x) < 1e-3


def test_random_instances_match_dense_oracles(rng: np.random.Generator):
    for _ in range(100):
        t, d = int(rng.integers(1, 51)), int(rng.integers(1, 65))
        q = (rng.random((t, d)) > 0.5).astype(float)
        k, v = rng.standard_normal((t, d)), rng.standard_normal((t, d))
        assert np.allclose(spike_matmul(Tensor(q), Tensor(k.T)).values, q @ k.T, rtol=0, atol=1e-12)

        out = sparse_attention(Tensor(q), Tensor(k), Tensor(v), SSAConfig(d_model=d), u=t).values
        dense = softmax_rows(q @ k.T / math.sqrt(d)) @ v
        assert np.allclose(out, dense, rtol=0, atol=1e-9)


def test_only_queries_spike(rng: np.random.Generator):
    weights = ProjectionWeights(8, rng)
    e = Tensor(rng.standard_normal((2, 6, 8)))
    q, k, v = project_qkv(weights, LIFNode(LIFConfig()), e)

    assert q.shape == k.shape == v.shape == (2, 6, 8)
    assert set(np.unique(q.values)) <= {0.0, 1.0}
    assert np.allclose(k.values, e.values @ weights.w_k.values)
    assert np.allclose(v.values, e.values @ weights.w_v.values)
