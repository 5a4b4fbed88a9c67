import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flashhead import (
    DecodeConfig,
    InvalidGroup,
    centroid_logits,
    centroid_logits_quant,
    decode,
    dense_head_oracle,
    quant_logit_error_bound,
    quantize_centroids,
)
from flashhead.quant import QuantizedCentroids, dequantize

from conftest import random_instance


def test_hand_example_int4():
    qc = quantize_centroids(
        np.array([[1.0, -1.0, 0.5, 0.25]], dtype=np.float32), bits=4, group_size=4)
    assert qc.scales[0] == pytest.approx(1 / 7, rel=1e-6)
    assert qc.codes.ravel().tolist() == [7, -7, 4, 2]
    deq = dequantize(qc).ravel()
    assert np.allclose(deq, [1.0, -1.0, 4 / 7, 2 / 7], atol=1e-6)


def test_all_zero_group():
    qc = quantize_centroids(np.zeros((2, 8), dtype=np.float32), bits=4, group_size=4)
    assert np.all(qc.scales == 1.0)
    assert np.all(qc.codes == 0)
    assert np.array_equal(dequantize(qc), np.zeros((2, 8), dtype=np.float32))


def test_int8_exact_on_representable_grid():
    # values k * 2^-10 with max 127 * 2^-10: scale is exactly 2^-10
    rng = np.random.default_rng(0)
    k = rng.integers(-127, 128, size=(4, 32)).astype(np.float32)
    k[:, 0] = 127.0  # every group needs a full-scale entry for scale = 2^-10
    w = (k * 2.0**-10).astype(np.float32)
    qc = quantize_centroids(w, bits=8, group_size=32)
    assert np.all(qc.scales == np.float32(2.0**-10))
    assert np.array_equal(dequantize(qc), w)


def test_int8_grid_logits_match_full_precision():
    # power-of-two scale, one group per row: scaling commutes with the f32
    # reduction, so the quant path reproduces stage-1 exactly
    rng = np.random.default_rng(1)
    k = rng.integers(-127, 128, size=(8, 16)).astype(np.float32)
    k[:, 0] = 127.0
    C = (k * 2.0**-9).astype(np.float32)
    qc = quantize_centroids(C, bits=8, group_size=16)
    h = rng.standard_normal(16).astype(np.float32)
    from flashhead.linalg import matvec_rows

    assert np.array_equal(centroid_logits_quant(qc, h), matvec_rows(C, h))


def test_zero_hidden_gives_zero_logits():
    qc = quantize_centroids(np.random.default_rng(2).standard_normal((4, 8)).astype(np.float32),
                            bits=4, group_size=4)
    z = centroid_logits_quant(qc, np.zeros(8, dtype=np.float32))
    assert np.array_equal(z, np.zeros(4, dtype=np.float32))


def test_f8_int4_top_probe_unchanged(f8_index):
    qc = quantize_centroids(f8_index.centroids, bits=4, group_size=2)
    h = np.array([1.0, 0.0], dtype=np.float32)
    exact = centroid_logits(f8_index, h)
    approx = centroid_logits_quant(qc, h)
    assert int(np.argmax(approx)) == int(np.argmax(exact))


def test_error_bound_many_trials():
    # measured |quant - exact| never exceeds sum_g (scale_g/2) * l1(h_g)
    rng = np.random.default_rng(3)
    worst_ratio = 0.0
    for bits in (4, 8):
        for _ in range(50):
            c, gs, gpr = 8, 16, 4
            C = (rng.standard_normal((c, gs * gpr)) * rng.uniform(0.1, 3)).astype(np.float32)
            qc = quantize_centroids(C, bits=bits, group_size=gs)
            H = rng.standard_normal((100, gs * gpr)).astype(np.float32)
            deq = dequantize(qc).astype(np.float64)
            exact64 = C.astype(np.float64)
            for h in H:
                err = np.abs((deq - exact64) @ h.astype(np.float64))
                bound = quant_logit_error_bound(qc, h)
                assert np.all(err <= bound)
                worst_ratio = max(worst_ratio, float((err / bound).max()))
    assert worst_ratio <= 1.0


def test_measured_f32_path_within_bound():
    # the production float32 kernel also stays under the analytic bound
    rng = np.random.default_rng(4)
    C = rng.standard_normal((32, 64)).astype(np.float32)
    qc = quantize_centroids(C, bits=4, group_size=16)
    for h in rng.standard_normal((200, 64)).astype(np.float32):
        exact = C.astype(np.float64) @ h.astype(np.float64)
        quant = centroid_logits_quant(qc, h).astype(np.float64)
        assert np.all(np.abs(quant - exact) <= quant_logit_error_bound(qc, h))


def test_full_probe_immunity():
    # stage-1 quantization cannot change the output when every cluster probes
    E, idx = random_instance(128, 16, 16, seed=7, iters=15)
    qc = quantize_centroids(idx.centroids, bits=4, group_size=8)
    cfg = DecodeConfig(p=16, mode="greedy")
    for h in np.random.default_rng(8).standard_normal((300, 16)).astype(np.float32):
        assert decode(idx, E, h, cfg, quant=qc) == int(dense_head_oracle(E, h, 1)[0])


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 5),
    groups=st.integers(1, 4),
    gs=st.integers(1, 9),
    bits=st.sampled_from([4, 8]),
    seed=st.integers(0, 10_000),
)
def test_quantize_properties(rows, groups, gs, bits, seed):
    rng = np.random.default_rng(seed)
    d = groups * gs
    C = (rng.standard_normal((rows, d)) * 2.0).astype(np.float32)
    qc = quantize_centroids(C, bits=bits, group_size=gs)
    qmax = (1 << (bits - 1)) - 1
    assert qc.codes.min() >= -qmax and qc.codes.max() <= qmax
    assert np.all(qc.scales > 0)
    assert qc.packed().size == (rows * d * bits + 7) // 8
    # per-element error within scale/2 (tiny slack: scales are stored f32)
    err = np.abs(dequantize(qc).astype(np.float64) - C.astype(np.float64))
    per_group = err.reshape(-1, gs).max(axis=1)
    assert np.all(per_group <= qc.scales.astype(np.float64) * (0.5 + 1e-5))
    # packed form reconstructs the codes exactly
    rt = QuantizedCentroids.from_packed(qc.packed(), qc.scales, bits, gs, rows, d)
    assert np.array_equal(rt.codes, qc.codes)


def test_nibble_order_little_first():
    qc = QuantizedCentroids(bits=4, group_size=2, c=1, d=2,
                            codes=np.array([[3, -2]], dtype=np.int8),
                            scales=np.ones(1, dtype=np.float32))
    packed = qc.packed()
    assert packed.tolist() == [(3 & 0xF) | ((-2 & 0xF) << 4)]


def test_invalid_group_errors():
    C = np.zeros((2, 6), dtype=np.float32)
    with pytest.raises(InvalidGroup):
        quantize_centroids(C, bits=4, group_size=4)
    with pytest.raises(InvalidGroup):
        quantize_centroids(C, bits=3, group_size=2)
    with pytest.raises(InvalidGroup):
        quantize_centroids(np.zeros(6, dtype=np.float32), bits=4, group_size=2)
