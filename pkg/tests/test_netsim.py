import math

import numpy as np
import pytest

from mobipower.errors import NumericError
from mobipower.netsim import (
    VIRTUAL,
    NeighborSets,
    SlotLog,
    compute_neighbor_sets,
    externality,
    externality_matrix,
    interference_mask,
    reward,
    rewards,
    sinr,
    spectral_efficiency,
    sum_rate,
)


def _log(gains, powers, noise=1.0, slot=0) -> SlotLog:
    gains = np.asarray(gains, dtype=float)
    return SlotLog(
        slot, gains, np.asarray(powers, dtype=float), np.arange(len(gains)), noise
    )


def _random_log(N: int, seed: int, slot: int = 0) -> SlotLog:
    rng = np.random.default_rng(seed)
    gains = rng.exponential(1.0, (N, N)) * rng.uniform(0.1, 10, (N, N))
    gains[np.diag_indices(N)] *= 20
    return _log(gains, rng.uniform(0, 1, N), noise=0.1, slot=slot)


def _naive_rates(gains, powers, noise):
    N = len(powers)
    rates = []
    for n in range(N):
        interference = sum(gains[m][n] * powers[m] for m in range(N) if m != n)
        rates.append(math.log2(1 + gains[n][n] * powers[n] / (interference + noise)))
    return rates


def test_sinr_single_link():
    gamma = sinr(np.array([[4.0]]), np.array([1.0]), 1.0, receiver=0)
    assert gamma == pytest.approx(4.0)


def test_silent_link_has_zero_sinr():
    gamma = sinr(np.array([[1.0, 0.5], [0.5, 1.0]]), np.array([0.0, 1.0]), 0.1)

    assert gamma[0] == 0.0


def test_sinr_matches_direct_summation():
    rng = np.random.default_rng(0)
    gains = rng.uniform(0, 1, (3, 3))
    powers = rng.uniform(0, 2, 3)

    gamma = sinr(gains, powers, 0.05)

    for n in range(3):
        interference = sum(gains[m, n] * powers[m] for m in range(3) if m != n)
        expected = gains[n, n] * powers[n] / (interference + 0.05)
        assert gamma[n] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize(
    "gamma, rate",
    [(0.0, 0.0), (4.0, math.log2(5)), (5.0, math.log2(6))],
)
def test_spectral_efficiency(gamma, rate):
    assert spectral_efficiency(gamma) == pytest.approx(rate)


def test_all_silent_sum_rate_is_zero():
    log = _log(np.ones((3, 3)), np.zeros(3))

    assert sum_rate(log) == (0.0, 0.0)


def test_isolated_links_add_up():
    log = _log(4 * np.eye(5), np.ones(5))

    total, mean = sum_rate(log)

    assert total == pytest.approx(5 * math.log2(5))
    assert mean == pytest.approx(math.log2(5))


def test_slot_log_matches_per_link_recomputation():
    log = _random_log(6, seed=1)

    expected = _naive_rates(log.link_gains, log.powers, log.noise)

    assert np.allclose(log.rates, expected, rtol=1e-12)
    assert log.sum_rate == pytest.approx(sum(expected), rel=1e-12)
    assert np.allclose(log.direct_gains, np.diag(log.link_gains))


def test_slot_log_rejects_non_finite_rates():
    gains = np.ones((2, 2))
    gains[0, 0] = np.nan

    with pytest.raises(NumericError):
        _log(gains, np.ones(2))


def test_threshold_decides_interferer_membership():
    gains = np.array(
        [
            [10.0, 0.0, 0.0],
            [6.0, 10.0, 0.0],
            [4.0, 0.0, 10.0],
        ]
    )
    log = _log(gains, np.ones(3))

    mask = interference_mask(log, 5.0)
    sets = compute_neighbor_sets(log, 5.0, 3)

    assert mask[1, 0]
    assert not mask[2, 0]
    assert list(sets.interferers[0]) == [1, VIRTUAL, VIRTUAL]
    assert list(sets.interfered[1]) == [0, VIRTUAL, VIRTUAL]
    assert list(sets.interfered[2]) == [VIRTUAL, VIRTUAL, VIRTUAL]
    assert sets.slot == 1


def test_empty_neighbor_sets_are_all_virtual():
    sets = compute_neighbor_sets(None, 5.0, 4, N=3)

    assert sets.interferers.shape == (3, 4)
    assert (sets.interferers == VIRTUAL).all()
    assert (sets.interfered == VIRTUAL).all()
    assert not sets.mask.any()


def test_empty_neighbor_sets_need_population_size():
    with pytest.raises(ValueError):
        compute_neighbor_sets(None, 5.0, 4)


def test_neighbor_sets_match_full_sort():
    log = _random_log(20, seed=4)
    eta, c = 5.0, 5

    sets = compute_neighbor_sets(log, eta, c)

    threshold = eta * log.noise
    for n in range(20):
        interferers = sorted(
            (i for i in range(20) if i != n and log.received[i, n] > threshold),
            key=lambda i: (-log.received[i, n], i),
        )[:c]
        interfered = sorted(
            (o for o in range(20) if o != n and log.received[n, o] > threshold),
            key=lambda o: (-log.received[n, o] / log.interference_plus_noise[o], o),
        )[:c]
        padding = [VIRTUAL] * c

        assert list(sets.interferers[n]) == (interferers + padding)[:c]
        assert list(sets.interfered[n]) == (interfered + padding)[:c]
        assert list(sets.interfered_received[n, : len(interfered)]) == [
            log.received[n, o] for o in interfered
        ]


def test_inactive_link_keeps_last_interfered_list():
    gains = np.array([[10.0, 8.0], [0.0, 10.0]])
    first = _log(gains, np.array([1.0, 1.0]), slot=0)
    second = _log(gains, np.array([0.0, 1.0]), slot=1)

    after_first = compute_neighbor_sets(first, 5.0, 2)
    after_second = compute_neighbor_sets(second, 5.0, 2, previous=after_first)

    assert list(after_first.interfered[0]) == [1, VIRTUAL]
    assert list(after_second.interfered[0]) == [1, VIRTUAL]
    assert after_second.interfered_received[0, 0] == 8.0
    assert after_second.last_active[0] == 0
    assert after_second.last_active[1] == 1
    assert not after_second.mask[0, 1]


def test_externality_two_link_arithmetic():
    gains = np.array([[1.0, 1.0], [0.0, 10.0]])
    log = _log(gains, np.ones(2))

    assert externality(log, 0, 1) == pytest.approx(math.log2(11) - math.log2(6))
    assert externality(log, 0, 1) == pytest.approx(0.8745, abs=1e-4)


def test_silent_or_decoupled_link_has_no_externality():
    silent = _log(np.array([[1.0, 1.0], [0.0, 10.0]]), np.array([0.0, 1.0]))
    decoupled = _log(np.array([[1.0, 0.0], [0.0, 10.0]]), np.ones(2))

    assert externality(silent, 0, 1) == 0.0
    assert externality(decoupled, 0, 1) == 0.0


def test_externality_needs_distinct_links():
    with pytest.raises(ValueError):
        externality(_random_log(3, seed=0), 1, 1)


def test_reward_without_interfered_neighbors_is_own_rate():
    log = _log(4 * np.eye(3), np.ones(3))
    sets = compute_neighbor_sets(log, 5.0, 2)

    assert np.allclose(rewards(log, sets), log.rates)


def test_reward_of_silent_receiver_with_one_victim():
    gains = np.array([[0.0, 1.0], [0.0, 10.0]])
    log = _log(gains, np.ones(2))
    sets = compute_neighbor_sets(log, 0.5, 2)

    assert log.rates[0] == 0.0
    assert reward(log, sets, 0) == pytest.approx(-0.8745, abs=1e-4)
    assert rewards(log, sets)[0] == pytest.approx(-0.8745, abs=1e-4)


@pytest.mark.parametrize("seed", range(20))
def test_rewards_match_leave_one_out(seed):
    log = _random_log(5, seed=seed)
    sets = compute_neighbor_sets(log, 5.0, 3)

    pi = externality_matrix(log)

    for n in range(5):
        for o in range(5):
            if n != o:
                assert pi[n, o] == pytest.approx(externality(log, n, o), abs=1e-10)
                assert pi[n, o] >= 0
        assert rewards(log, sets)[n] == pytest.approx(reward(log, sets, n), abs=1e-10)


def test_reward_penalty_uses_uncapped_interfered_set():
    gains = np.full((4, 4), 8.0)
    np.fill_diagonal(gains, 100.0)
    log = _log(gains, np.ones(4))
    sets = compute_neighbor_sets(log, 5.0, 1)

    assert len(sets.interfered_all(0)) == 3
    assert list(np.flatnonzero(sets.mask[:, 0])) == [1, 2, 3]
    penalty = sum(externality(log, 0, o) for o in (1, 2, 3))
    assert rewards(log, sets)[0] == pytest.approx(log.rates[0] - penalty)


def test_neighbor_sets_empty_constructor():
    sets = NeighborSets.empty(4, 3, 2)

    assert sets.slot == 4
    assert sets.c == 2
    assert (sets.last_active == -1).all()
