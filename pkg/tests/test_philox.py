import numpy as np
import pytest

from rnp.philox import philox4x32, seed_key, step_draws, to_unit_open

# Philox4x32-10 known-answer vectors from the Random123 distribution
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("counter,key,expected", KAT)
def test_known_answers(counter, key, expected):
    out = philox4x32(np.array([counter], dtype=np.uint64), key)
    assert out.dtype == np.uint32
    assert tuple(int(w) for w in out[0]) == expected


def test_vectorized_matches_scalar():
    ctrs = np.array([[i, 7 * i, 3, i ^ 5] for i in range(20)], dtype=np.uint64)
    key = (0x12345678, 0x9ABCDEF0)
    batch = philox4x32(ctrs, key)
    for i, c in enumerate(ctrs):
        assert np.array_equal(batch[i], philox4x32(c[None, :], key)[0])


def test_seed_key_splits_words():
    assert seed_key(0x0123456789ABCDEF) == (0x89ABCDEF, 0x01234567)
    assert seed_key(7) == (7, 0)


def test_unit_open_interval():
    u = to_unit_open(np.array([0, 0xFFFFFFFF], dtype=np.uint32))
    assert 0 < u[0] < u[1] < 1


def test_step_draws_shapes_and_determinism():
    paths = np.arange(5, 12, dtype=np.uint64)
    n1, u1 = step_draws(3, paths, 10, 4)
    n2, u2 = step_draws(3, paths, 10, 4)
    assert n1.shape == u1.shape == (7, 8)
    assert np.array_equal(n1, n2) and np.array_equal(u1, u2)


def test_step_draws_independent_of_slicing():
    paths = np.arange(0, 40, dtype=np.uint64)
    full_n, full_u = step_draws(9, paths, 0, 6)
    part_n, part_u = step_draws(9, paths[13:17], 2, 3)
    assert np.array_equal(full_n[13:17, 4:10], part_n)
    assert np.array_equal(full_u[13:17, 4:10], part_u)


def test_normal_moments():
    z, u = step_draws(1, np.arange(4000, dtype=np.uint64), 0, 25)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1) < 0.01
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) < 0.05
