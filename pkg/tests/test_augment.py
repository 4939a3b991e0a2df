import numpy as np
import pytest

from ambs.augment import apply_crop, apply_crop_batch, sample_crop_params, sample_crop_params_batch
from ambs.diffcore import ContractViolation


def test_p_zero_always_origin():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_crop_params(rng, 0) == (0, 0)


def test_same_seed_same_sequence():
    a = [sample_crop_params(np.random.default_rng(7), 4) for _ in range(1)]
    draws1 = [sample_crop_params(np.random.default_rng(7), 4)]
    rng1, rng2 = np.random.default_rng(42), np.random.default_rng(42)
    seq1 = [sample_crop_params(rng1, 4) for _ in range(100)]
    seq2 = [sample_crop_params(rng2, 4) for _ in range(100)]
    assert seq1 == seq2
    assert a == draws1


def test_offsets_uniform_over_81_values():
    # deterministic seed; every cell of T within 3 sigma of the uniform count
    rng = np.random.default_rng(123)
    p = 4
    n = 100_000
    vs = sample_crop_params_batch(rng, p, n)
    assert vs.min() >= 0 and vs.max() <= 2 * p
    counts = np.zeros((2 * p + 1, 2 * p + 1))
    np.add.at(counts, (vs[:, 0], vs[:, 1]), 1)
    cells = (2 * p + 1) ** 2
    expected = n / cells
    sigma = np.sqrt(n * (1 / cells) * (1 - 1 / cells))
    assert np.abs(counts - expected).max() <= 3 * sigma


def test_center_crop_is_identity():
    rng = np.random.default_rng(1)
    obs = rng.uniform(0, 1, size=(3, 8, 8)).astype(np.float32)
    for p in (1, 2, 4):
        assert np.array_equal(apply_crop(obs, (p, p), p), obs)


def test_constant_image_unchanged():
    obs = np.full((2, 6, 6), 0.37, dtype=np.float32)
    for v in [(0, 0), (1, 3), (4, 4), (2, 0)]:
        assert np.array_equal(apply_crop(obs, v, 2), obs)


def test_hand_enumerated_2x2_corner():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    obs = np.array([[[a, b], [c, d]]])
    # padded by 1 with edge replication:
    #   a a b b
    #   a a b b
    #   c c d d
    #   c c d d
    assert np.array_equal(apply_crop(obs, (0, 0), 1), [[[a, a], [a, a]]])
    assert np.array_equal(apply_crop(obs, (0, 2), 1), [[[b, b], [b, b]]])
    assert np.array_equal(apply_crop(obs, (2, 0), 1), [[[c, c], [c, c]]])
    assert np.array_equal(apply_crop(obs, (1, 0), 1), [[[a, a], [c, c]]])


def test_shape_and_value_set_preserved_over_all_offsets():
    rng = np.random.default_rng(2)
    obs = rng.choice([0.0, 0.25, 0.5, 1.0], size=(2, 5, 7)).astype(np.float32)
    values = set(np.unique(obs))
    p = 2
    for r in range(2 * p + 1):
        for c in range(2 * p + 1):
            out = apply_crop(obs, (r, c), p)
            assert out.shape == obs.shape
            assert set(np.unique(out)) <= values


def test_determinism_bit_identical():
    rng = np.random.default_rng(3)
    obs = rng.uniform(0, 1, size=(1, 9, 9)).astype(np.float32)
    x1 = apply_crop(obs, (1, 5), 3)
    x2 = apply_crop(obs, (1, 5), 3)
    assert np.array_equal(x1, x2)


def test_batch_matches_per_sample():
    rng = np.random.default_rng(4)
    batch = rng.uniform(0, 1, size=(6, 2, 8, 8)).astype(np.float32)
    vs = sample_crop_params_batch(rng, 2, 6)
    out = apply_crop_batch(batch, vs, 2)
    for k in range(6):
        assert np.array_equal(out[k], apply_crop(batch[k], vs[k], 2))


def test_rejects_out_of_range_offsets():
    obs = np.zeros((1, 4, 4))
    with pytest.raises(ContractViolation):
        apply_crop(obs, (5, 0), 2)
    with pytest.raises(ContractViolation):
        apply_crop(obs, (0, -1), 2)
    with pytest.raises(ContractViolation):
        apply_crop_batch(obs[None], np.array([[0, 5]]), 2)
