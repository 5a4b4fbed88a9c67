import numpy as np
import pytest

from flashhead import (
    DecodeConfig,
    InvalidConfig,
    centroid_logits,
    cost_model,
    decode,
    decode_batch,
    dense_head_oracle,
    gather_candidates,
    pack_blocks,
    select_probes_greedy,
    select_probes_sampled,
)
from flashhead.head import candidate_token_ids

from conftest import make_index, random_instance

F8_LOGITS_H10 = np.array([0.9238795, -0.3826834, -0.9238795, 0.3826834], dtype=np.float32)


def test_centroid_logits_zero_vector(f8_index):
    z = centroid_logits(f8_index, np.zeros(2, dtype=np.float32))
    assert np.array_equal(z, np.zeros(4, dtype=np.float32))


def test_centroid_logits_f8(f8_index):
    z = centroid_logits(f8_index, np.array([1.0, 0.0], dtype=np.float32))
    assert np.allclose(z, F8_LOGITS_H10, atol=1e-6)


def test_centroid_logits_self_is_max(f8_index):
    for j in range(4):
        z = centroid_logits(f8_index, f8_index.centroids[j])
        assert z[j] == pytest.approx(1.0, abs=1e-6)
        assert int(np.argmax(z)) == j


def test_greedy_probes_full(f8_index):
    sel = select_probes_greedy(F8_LOGITS_H10, 4)
    assert sorted(sel.probe_ids.tolist()) == [0, 1, 2, 3]


def test_greedy_probes_f8_top2():
    sel = select_probes_greedy(F8_LOGITS_H10, 2)
    assert sorted(sel.probe_ids.tolist()) == [0, 3]
    assert np.array_equal(sel.probe_logits, F8_LOGITS_H10[sel.probe_ids])


def test_greedy_probes_tiebreak():
    sel = select_probes_greedy(np.zeros(5, dtype=np.float32), 2)
    assert sel.probe_ids.tolist() == [0, 1]


def test_greedy_probes_superset_in_p():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal(17).astype(np.float32)
    prev: set[int] = set()
    for p in range(1, 18):
        cur = set(select_probes_greedy(logits, p).probe_ids.tolist())
        assert prev <= cur
        prev = cur


def test_sampled_probes_full_probe():
    rng = np.random.default_rng(0)
    sel = select_probes_sampled(np.array([5.0, -5.0, 0.0], dtype=np.float32), 3, 1.0, rng)
    assert sorted(sel.probe_ids.tolist()) == [0, 1, 2]


def test_sampled_probes_first_draw_frequency():
    # two clusters with logits (ln 3, 0), tau=1, p=1: P(cluster 0) = 0.75
    logits = np.array([np.log(3.0), 0.0], dtype=np.float32)
    rng = np.random.default_rng(1234)
    n = 100_000
    hits = sum(
        int(select_probes_sampled(logits, 1, 1.0, rng).probe_ids[0] == 0)
        for _ in range(n)
    )
    assert abs(hits / n - 0.75) < 0.01


def test_sampled_probes_tiny_tau_matches_greedy():
    rng = np.random.default_rng(7)
    logits = np.random.default_rng(3).standard_normal(12).astype(np.float32)
    greedy = set(select_probes_greedy(logits, 4).probe_ids.tolist())
    for _ in range(20):
        sampled = set(select_probes_sampled(logits, 4, 1e-6, rng).probe_ids.tolist())
        assert sampled == greedy


def test_gather_f8_cluster0(f8_index, f8_embeddings):
    sel = select_probes_greedy(np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32), 1)
    cands = gather_candidates(f8_index, f8_embeddings, sel)
    assert cands.token_ids.tolist() == [0, 1]
    assert np.array_equal(cands.sub_matrix, f8_embeddings.data[:2])


def test_gather_full_probe_is_permutation(f8_index, f8_embeddings):
    sel = select_probes_greedy(F8_LOGITS_H10, 4)
    cands = gather_candidates(f8_index, f8_embeddings, sel)
    assert sorted(cands.token_ids.tolist()) == list(range(8))


def test_gather_paper_candidate_count():
    # c=8016, b=16, p=512 probes gather exactly 8192 candidates
    rng = np.random.default_rng(0)
    c, b, d = 8016, 16, 8
    cents = rng.standard_normal((c, d)).astype(np.float32)
    cents /= np.linalg.norm(cents, axis=1, keepdims=True)
    idx = make_index(cents, np.arange(c * b, dtype=np.uint32).reshape(c, b))
    ids = candidate_token_ids(idx, rng.choice(c, 512, replace=False))
    assert len(ids) == 8192
    assert len(set(ids.tolist())) == 8192


def test_gather_rows_bit_identical(f8_index, f8_embeddings):
    sel = select_probes_greedy(F8_LOGITS_H10, 3)
    cands = gather_candidates(f8_index, f8_embeddings, sel)
    for i, t in enumerate(cands.token_ids):
        assert np.array_equal(cands.sub_matrix[i], f8_embeddings.data[t])


def test_packed_blocks_bit_identical(f8_index, f8_embeddings):
    packed = pack_blocks(f8_index, f8_embeddings)
    for k in range(f8_index.c):
        for j, t in enumerate(f8_index.c2t[k]):
            assert np.array_equal(packed[k, j], f8_embeddings.data[int(t)])


def test_decode_f8_single_probe(f8_index, f8_embeddings):
    token = decode(f8_index, f8_embeddings, np.array([1.0, 0.0], dtype=np.float32),
                   DecodeConfig(p=1, mode="greedy"))
    assert token == 0


@pytest.mark.parametrize("use_packed", [False, True])
def test_full_probe_equivalence(use_packed):
    E, idx = random_instance(256, 16, 32, seed=1, iters=15)
    packed = pack_blocks(idx, E) if use_packed else None
    cfg = DecodeConfig(p=32, mode="greedy")
    rng = np.random.default_rng(5)
    H = rng.standard_normal((1000, 16)).astype(np.float32)
    for h in H:
        assert decode(idx, E, h, cfg, packed=packed) == int(dense_head_oracle(E, h, 1)[0])


def test_packed_and_scattered_paths_agree():
    E, idx = random_instance(128, 8, 16, seed=2, iters=15)
    packed = pack_blocks(idx, E)
    cfg = DecodeConfig(p=3, mode="greedy")
    rng = np.random.default_rng(8)
    for h in rng.standard_normal((200, 8)).astype(np.float32):
        assert decode(idx, E, h, cfg, packed=packed) == decode(idx, E, h, cfg)


def test_decode_sample_tiny_tau_equals_greedy():
    E, idx = random_instance(64, 8, 8, seed=3, iters=15)
    H = np.random.default_rng(4).standard_normal((50, 8)).astype(np.float32)
    greedy = decode_batch(idx, E, H, DecodeConfig(p=8, mode="greedy"))
    sampled = decode_batch(idx, E, H, DecodeConfig(p=8, mode="sample", temperature=1e-6, seed=0))
    assert np.array_equal(greedy, sampled)


def test_decode_sample_deterministic_stream():
    E, idx = random_instance(64, 8, 8, seed=3, iters=15)
    H = np.random.default_rng(4).standard_normal((64, 8)).astype(np.float32)
    cfg = DecodeConfig(p=2, mode="sample", temperature=0.8, seed=42)
    assert np.array_equal(decode_batch(idx, E, H, cfg), decode_batch(idx, E, H, cfg))


def test_decode_greedy_tiebreak_lower_token_id():
    from flashhead import EmbeddingMatrix

    # two identical embedding rows in different clusters tie exactly
    rows = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0]], dtype=np.float32)
    E = EmbeddingMatrix.from_array(rows)
    cents = np.array([[1.0, 0.0], [0.9238795, 0.3826834]], dtype=np.float32)
    cents /= np.linalg.norm(cents, axis=1, keepdims=True)
    idx = make_index(cents, np.array([[0, 3], [1, 2]], dtype=np.uint32))
    h = np.array([1.0, 0.0], dtype=np.float32)
    token = decode(idx, E, h, DecodeConfig(p=2, mode="greedy"))
    assert token == 0  # rows 0 and 2 tie; lower id wins
    assert int(dense_head_oracle(E, h, 1)[0]) == 0


def test_containment_monotone_in_p():
    E, idx = random_instance(512, 16, 64, seed=6, iters=15)
    packed = pack_blocks(idx, E)
    H = np.random.default_rng(10).standard_normal((150, 16)).astype(np.float32)
    oracle = np.array([int(dense_head_oracle(E, h, 1)[0]) for h in H])
    prev = -1.0
    for p in [1, 2, 4, 8, 16, 32, 64]:
        toks = decode_batch(idx, E, H, DecodeConfig(p=p, mode="greedy"), packed=packed)
        frac = float((toks == oracle).mean())
        assert frac >= prev
        prev = frac
    assert prev == 1.0  # p=c retrieves the oracle token always


def test_cost_model_paper_config():
    cm = cost_model(v=128256, d=2048, c=8016, p=512)
    assert cm.active_params_flash == (8016 + 512 * 16) * 2048 == 33_193_984
    assert cm.active_params_dense == 128256 * 2048 == 262_668_288
    assert round(cm.active_params_flash / 1e6) == 33
    assert round(cm.active_params_dense / 1e6) == 263
    assert cm.ratio == pytest.approx(262_668_288 / 33_193_984)


def test_cost_model_full_probe_overhead():
    cm = cost_model(v=1024, d=8, c=32, p=32)
    assert cm.flash_mults == 32 * 8 + 1024 * 8
    assert cm.flash_mults > cm.dense_mults
    assert cm.ratio < 1.0


def test_cost_model_invalid():
    with pytest.raises(InvalidConfig):
        cost_model(v=10, d=4, c=3, p=1)
    with pytest.raises(InvalidConfig):
        cost_model(v=12, d=4, c=3, p=4)


def test_decode_config_validation():
    E, idx = random_instance(16, 4, 4, seed=0, iters=5)
    with pytest.raises(InvalidConfig):
        decode(idx, E, np.zeros(4, dtype=np.float32), DecodeConfig(p=9))
    with pytest.raises(InvalidConfig):
        decode(idx, E, np.zeros(4, dtype=np.float32),
               DecodeConfig(p=1, mode="sample", temperature=0.0))
    with pytest.raises(InvalidConfig):
        decode(idx, E, np.zeros(4, dtype=np.float32), DecodeConfig(p=1, mode="nope"))


def test_stage1_temperature_override():
    E, idx = random_instance(64, 8, 8, seed=3, iters=15)
    h = np.random.default_rng(0).standard_normal(8).astype(np.float32)
    # near-zero stage-1 temperature makes probe sampling effectively greedy
    cfg = DecodeConfig(p=2, mode="sample", temperature=1.0, seed=9,
                       stage1_temperature=1e-9)
    logits = centroid_logits(idx, h)
    want = set(select_probes_greedy(logits, 2).probe_ids.tolist())
    rng = np.random.default_rng(9)
    got = set(select_probes_sampled(logits, 2, cfg.tau1, rng).probe_ids.tolist())
    assert got == want
