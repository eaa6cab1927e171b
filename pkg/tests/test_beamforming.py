import numpy as np
import pytest

from lsapdma.beamforming import (
    SingularChannelError,
    compute_zfbf,
    select_users,
    transmit,
)
from lsapdma.channel import ChannelMatrix, sample_channel
from lsapdma.pattern import PatternMatrix, simple_beam_allocation
from lsapdma.rng import make_rng

B35 = PatternMatrix(np.array([[1, 1, 0, 1, 0], [1, 1, 1, 0, 0], [1, 0, 1, 0, 1]]))


def _channels(k, n_rx=4, n_tx=16, seed=0):
    return [sample_channel(n_rx, n_tx, 1.0, make_rng(seed, i)) for i in range(k)]


def test_select_users_single_candidate():
    chans = _channels(1, n_rx=1, n_tx=1)
    pattern = PatternMatrix(np.array([[1]]))
    omega = select_users(chans, pattern, np.array([2.0]))
    assert omega.pairs == ((0, 0),)


def test_select_users_weakest_covered():
    # ascending hints: beam 0 covers users {0,1,3} and takes the weakest
    chans = _channels(5)
    omega = select_users(chans, B35, np.arange(1.0, 6.0))
    assert omega.pairs[0] == (0, 0)
    # anchors must be distinct so the stacked channel stays full rank
    assert len(set(omega.users)) == 3
    assert omega.pairs == ((0, 0), (1, 1), (2, 2))


def test_select_users_tie_breaks_to_lower_index():
    chans = _channels(3)
    pattern = PatternMatrix(np.array([[1, 1, 0], [0, 1, 1]]))
    omega = select_users(chans, pattern, np.array([0.5, 1.0, 1.0]))
    # beam 1's candidates tie at 1.0; the lower user index wins
    assert omega.pairs[1] == (1, 1) or omega.pairs == ((0, 0), (1, 1))
    assert omega.pairs == ((0, 0), (1, 1))


def test_select_users_scale_invariance():
    chans = _channels(5)
    hints = np.array([0.3, 2.0, 0.9, 4.0, 1.1])
    a = select_users(chans, B35, hints)
    b = select_users(chans, B35, 7.5 * hints)
    assert a.pairs == b.pairs


def test_select_users_exhaustion_falls_back_to_reassignment():
    # beam 1 covers only user 0; greedy order must leave user 0 for it
    chans = _channels(2)
    pattern = PatternMatrix(np.array([[1, 1], [1, 0]]))
    omega = select_users(chans, pattern, np.array([1.0, 2.0]))
    assert sorted(omega.users) == [0, 1]
    assert omega.pairs[1] == (1, 0)


def test_zfbf_unit_channel_passthrough():
    ch = ChannelMatrix(entries=np.array([[1.0 + 0j, 0, 0, 0]]), large_scale_gain=1.0)
    omega = select_users([ch], PatternMatrix(np.array([[1]])), np.array([1.0]))
    beams = compute_zfbf([ch], omega)
    expected = np.zeros(4, dtype=complex)
    expected[0] = 1.0
    assert np.allclose(beams.beam_matrix[:, 0], expected)


def test_zfbf_pseudo_inverse_identity():
    chans = _channels(5, seed=2)
    omega = select_users(chans, B35, np.arange(5.0))
    beams = compute_zfbf(chans, omega)
    g_c = np.vstack([chans[u].entries for u in omega.users])
    residual = np.abs(g_c @ beams.composite - np.eye(12)).max()
    assert residual < 1e-10
    assert beams.beam_matrix.shape == (16, 3)
    assert beams.composite.shape == (16, 12)


def test_zfbf_block_consistency_unnormalized():
    chans = _channels(5, seed=3)
    omega = select_users(chans, B35, np.arange(5.0))
    beams = compute_zfbf(chans, omega, normalize=False)
    ones = np.ones(4)
    for n in range(3):
        block = beams.composite[:, 4 * n : 4 * (n + 1)]
        assert np.array_equal(beams.beam_matrix[:, n], block @ ones)


def test_zfbf_normalized_columns():
    chans = _channels(5, seed=4)
    omega = select_users(chans, B35, np.arange(5.0))
    beams = compute_zfbf(chans, omega)
    assert beams.normalized
    assert np.allclose(np.linalg.norm(beams.beam_matrix, axis=0), 1.0)


def test_zfbf_zero_leakage_to_other_anchors():
    chans = _channels(5, seed=5)
    omega = select_users(chans, B35, np.arange(5.0))
    beams = compute_zfbf(chans, omega, normalize=False)
    for n in range(3):
        f_n = beams.beam_matrix[:, n]
        for m, user in omega.pairs:
            rx = chans[user].entries @ f_n
            if m == n:
                assert np.abs(rx - 1.0).max() < 1e-9  # identity-block row sums
            else:
                assert np.abs(rx).max() < 1e-9


def test_zfbf_rejects_rank_deficient_stack():
    ch = _channels(1, seed=6)[0]
    twin = ChannelMatrix(entries=ch.entries.copy(), large_scale_gain=ch.large_scale_gain)
    from lsapdma.beamforming import SelectedUserSet

    omega = SelectedUserSet(pairs=((0, 0), (1, 1)))
    with pytest.raises(SingularChannelError):
        compute_zfbf([ch, twin], omega)


def test_zfbf_rejects_too_many_streams():
    chans = _channels(5, n_rx=4, n_tx=8)
    omega = select_users(chans, B35, np.arange(5.0))
    with pytest.raises(ValueError):
        compute_zfbf(chans, omega)


def test_transmit_zero_and_passthrough():
    chans = _channels(5, seed=7)
    omega = select_users(chans, B35, np.arange(5.0))
    beams = compute_zfbf(chans, omega)
    assert np.array_equal(transmit(beams, np.zeros(3)), np.zeros(16))
    with pytest.raises(ValueError):
        transmit(beams, np.zeros(4))


def test_transmit_matches_naive_sum():
    chans = _channels(5, seed=8)
    omega = select_users(chans, B35, np.arange(5.0))
    beams = compute_zfbf(chans, omega)
    rng = make_rng(9)
    t = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    x = transmit(beams, t)
    naive = np.zeros(16, dtype=complex)
    for n in range(3):
        for a in range(16):
            naive[a] += beams.beam_matrix[a, n] * t[n]
    assert np.allclose(x, naive, rtol=0, atol=1e-15)


def test_zf_identity_survives_user_scale_spread():
    # different user path gains must not destroy the pseudo-inverse identity
    chans = [
        sample_channel(4, 16, g, make_rng(10, i))
        for i, g in enumerate([1e-2, 1.0, 1e2])
    ]
    pattern = simple_beam_allocation(3, 3, [0, 1, 2])
    omega = select_users(chans, pattern, np.array([1e-2, 1.0, 1e2]))
    beams = compute_zfbf(chans, omega)
    g_c = np.vstack([chans[u].entries for u in omega.users])
    assert np.abs(g_c @ beams.composite - np.eye(12)).max() < 1e-8
