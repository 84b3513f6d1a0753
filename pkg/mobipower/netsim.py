from typing import Optional, Tuple, Union

import numpy as np

from mobipower.errors import NumericError

VIRTUAL = -1


def sinr(
    link_gains: np.ndarray,
    powers: np.ndarray,
    noise: float,
    receiver: Optional[int] = None,
) -> Union[float, np.ndarray]:
    """
    gamma_n = g_nn p_n / (sum_{m != n} g_mn p_m + noise), where
    link_gains[m, n] = g_{m->n}.
    """
    received = link_gains * powers[:, None]
    signal = np.diag(received).copy()
    np.fill_diagonal(received, 0)
    gamma = signal / (received.sum(axis=0) + noise)
    return gamma if receiver is None else float(gamma[receiver])


def spectral_efficiency(gamma):
    return np.log2(1 + np.asarray(gamma, dtype=float))


class SlotLog:
    slot: int
    powers: np.ndarray
    rates: np.ndarray
    interference_plus_noise: np.ndarray
    direct_gains: np.ndarray
    received: np.ndarray
    link_gains: np.ndarray
    associations: np.ndarray
    noise: float

    def __init__(
        self,
        slot: int,
        link_gains: np.ndarray,
        powers: np.ndarray,
        associations: np.ndarray,
        noise: float,
    ):
        self.slot = slot
        self.link_gains = link_gains
        self.powers = powers
        self.associations = associations
        self.noise = noise

        # received[m, n] = g_{m->n} p_m
        self.received = link_gains * powers[:, None]
        self.direct_gains = np.diag(link_gains).copy()
        off_diagonal = self.received.copy()
        np.fill_diagonal(off_diagonal, 0)
        self.interference_plus_noise = off_diagonal.sum(axis=0) + noise
        self.rates = spectral_efficiency(
            np.diag(self.received) / self.interference_plus_noise
        )

        if not np.all(np.isfinite(self.rates)):
            raise NumericError(f"non-finite spectral efficiency in slot {slot}")

    @property
    def N(self) -> int:
        return len(self.powers)

    @property
    def sum_rate(self) -> float:
        return float(self.rates.sum())


def sum_rate(log: SlotLog) -> Tuple[float, float]:
    """
    Returns (sum-rate, mean rate per link), both in bps/Hz.
    """
    total = float(log.rates.sum())
    return total, total / log.N


def interference_mask(log: SlotLog, eta: float) -> np.ndarray:
    """
    mask[i, n] is True when i's received power at n exceeds eta * noise, i.e. i is in
    I_n and n is in O_i for the next slot.
    """
    mask = log.received > eta * log.noise
    np.fill_diagonal(mask, False)
    return mask


def _top(candidates: np.ndarray, keys: np.ndarray, c: int) -> np.ndarray:
    # Descending by key, ties by ascending link index.
    order = np.argsort(-keys, kind="stable")
    return candidates[order][:c]


def _padded(links: np.ndarray, c: int) -> np.ndarray:
    row = np.full(c, VIRTUAL, dtype=int)
    row[: len(links)] = links
    return row


class NeighborSets:
    slot: int
    interferers: np.ndarray
    interfered: np.ndarray
    interfered_received: np.ndarray
    last_active: np.ndarray
    mask: np.ndarray

    def __init__(
        self,
        slot: int,
        interferers: np.ndarray,
        interfered: np.ndarray,
        interfered_received: np.ndarray,
        last_active: np.ndarray,
        mask: np.ndarray,
    ):
        self.slot = slot
        self.interferers = interferers
        self.interfered = interfered
        self.interfered_received = interfered_received
        self.last_active = last_active
        self.mask = mask

    @classmethod
    def empty(cls, slot: int, N: int, c: int) -> "NeighborSets":
        return cls(
            slot,
            np.full((N, c), VIRTUAL, dtype=int),
            np.full((N, c), VIRTUAL, dtype=int),
            np.zeros((N, c)),
            np.full(N, -1, dtype=int),
            np.zeros((N, N), dtype=bool),
        )

    @property
    def c(self) -> int:
        return self.interferers.shape[1]

    def interfered_all(self, n: int) -> np.ndarray:
        """
        Uncapped interfered set of link n for this slot.
        """
        return np.flatnonzero(self.mask[n])


def compute_neighbor_sets(
    prev_log: Optional[SlotLog],
    eta: float,
    c: int,
    previous: Optional[NeighborSets] = None,
    N: Optional[int] = None,
) -> NeighborSets:
    """
    Neighbor sets for slot prev_log.slot + 1.

    Interferers are re-derived every slot from last-slot received powers. Interfered
    lists are refreshed only for links that transmitted last slot; an inactive link
    keeps the list (and the received powers) of its last active slot t'.
    """
    if prev_log is None:
        if N is None:
            raise ValueError("N is required when there is no previous slot log")
        return NeighborSets.empty(0, N, c)

    N = prev_log.N
    slot = prev_log.slot + 1
    mask = interference_mask(prev_log, eta)
    received = prev_log.received

    if previous is None:
        previous = NeighborSets.empty(slot - 1, N, c)

    interferers = np.full((N, c), VIRTUAL, dtype=int)
    interfered = previous.interfered.copy()
    interfered_received = previous.interfered_received.copy()
    last_active = previous.last_active.copy()

    for n in range(N):
        candidates = np.flatnonzero(mask[:, n])
        interferers[n] = _padded(_top(candidates, received[candidates, n], c), c)

        if prev_log.powers[n] > 0:
            candidates = np.flatnonzero(mask[n, :])
            noise_floor = prev_log.interference_plus_noise[candidates]
            shares = received[n, candidates] / noise_floor
            chosen = _top(candidates, shares, c)
            interfered[n] = _padded(chosen, c)
            interfered_received[n] = 0
            interfered_received[n, : len(chosen)] = received[n, chosen]
            last_active[n] = prev_log.slot

    return NeighborSets(
        slot, interferers, interfered, interfered_received, last_active, mask
    )


def externality(log: SlotLog, n: int, o: int) -> float:
    """
    Rate gained by link o if link n were silent, all else fixed.
    """
    if n == o:
        raise ValueError("externality needs two distinct links")

    others = np.ones(log.N, dtype=bool)
    others[[n, o]] = False
    interference = log.received[others, o].sum() + log.noise
    rate_without = np.log2(1 + log.received[o, o] / interference)
    return max(float(rate_without - log.rates[o]), 0.0)


def externality_matrix(log: SlotLog) -> np.ndarray:
    """
    pi[n, o] for every ordered pair; the diagonal is zero.
    """
    interference_without = log.interference_plus_noise[None, :] - log.received
    interference_without = np.maximum(interference_without, log.noise)
    signal = np.diag(log.received)[None, :]
    pi = np.log2(1 + signal / interference_without) - log.rates[None, :]
    np.fill_diagonal(pi, 0)
    return np.maximum(pi, 0)


def rewards(log: SlotLog, neighbor_sets: NeighborSets) -> np.ndarray:
    """
    r_n = C_n - sum over the uncapped interfered set O_n (derived from this slot)
    of pi[n, o].
    """
    pi = externality_matrix(log)
    return log.rates - (pi * neighbor_sets.mask).sum(axis=1)


def reward(log: SlotLog, neighbor_sets: NeighborSets, n: int) -> float:
    penalty = sum(externality(log, n, o) for o in neighbor_sets.interfered_all(n))
    return float(log.rates[n] - penalty)
