import numpy as np
import pytest

from mobipower.errors import NumericError
from mobipower.netsim import VIRTUAL, NeighborSets, SlotLog, compute_neighbor_sets
from mobipower.state import (
    PortKind,
    StateContext,
    StateLayout,
    build_states,
    denormalize,
    normalize,
    observe,
    provenance,
)

NOISE = 1e-3
PMAX = 1.0


def _log(gains, powers, slot):
    return SlotLog(
        slot, gains, np.asarray(powers, dtype=float), np.arange(len(gains)), NOISE
    )


def _gains(seed: int, N: int = 3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.005, 0.05, (N, N))
    np.fill_diagonal(gains, 1.0)
    return gains


def _three_slot_context(c: int = 2) -> StateContext:
    """
    Slot 2 context after two transmitted slots on a 3-link network.
    """
    g0, g1, g2 = _gains(0), _gains(1), _gains(2)
    log0 = _log(g0, [1.0, 0.5, 0.25], slot=0)
    log1 = _log(g1, [0.8, 0.6, 0.4], slot=1)
    neighbors1 = compute_neighbor_sets(log0, 5.0, c)
    neighbors2 = compute_neighbor_sets(log1, 5.0, c, previous=neighbors1)
    return StateContext(2, g2, log1, log0, neighbors2, neighbors1, NOISE)


@pytest.mark.parametrize("c", [1, 5, 10])
def test_layout_dimension(c):
    layout = StateLayout(c)

    assert layout.dimension == 6 + 10 * c
    assert len(layout.names) == layout.dimension
    assert len(set(layout.names)) == layout.dimension
    assert layout.names.index("interferer0_received") == 6
    assert layout.names.index("past_interferer0_received") == 6 + 3 * c
    assert layout.names.index("interfered0_direct_gain") == 6 + 6 * c


def test_dimension_does_not_depend_on_population():
    layout = StateLayout(2)
    few, many = NeighborSets.empty(0, 3, 2), NeighborSets.empty(0, 9, 2)
    small = StateContext(0, _gains(0, 3), None, None, few, few, NOISE)
    large = StateContext(0, _gains(0, 9), None, None, many, many, NOISE)

    assert build_states(small, layout, PMAX)[0].shape == (3, 26)
    assert build_states(large, layout, PMAX)[0].shape == (9, 26)


def test_bootstrap_state_uses_neutral_values():
    layout = StateLayout(2)
    gains = _gains(0)
    empty = NeighborSets.empty(0, 3, 2)
    ctx = StateContext(0, gains, None, None, empty, empty, NOISE, virtual_rate=-1.0)

    normalized, raw = build_states(ctx, layout, PMAX)

    assert list(raw[1, :6]) == [0.0, 0.0, gains[1, 1], 0.0, NOISE, NOISE]
    assert list(raw[1, 6:9]) == [0.0, -1.0, 0.0]
    assert list(raw[1, 18:22]) == [0.0, -1.0, 0.0, 0.0]
    assert normalized[1, 0] == 0.0
    assert normalized[1, 4] == 0.0
    assert normalized[1, 7] == pytest.approx(-0.1)


def test_local_ports_read_last_two_slots():
    ctx = _three_slot_context()
    layout = StateLayout(2)

    raw = observe(ctx, 0, layout, PMAX).raw

    assert raw[0] == ctx.prev_log.powers[0]
    assert raw[1] == ctx.prev_log.rates[0]
    assert raw[2] == ctx.link_gains[0, 0]
    assert raw[3] == ctx.prev_log.direct_gains[0]
    assert raw[4] == ctx.prev_log.interference_plus_noise[0]
    assert raw[5] == ctx.prev2_log.interference_plus_noise[0]


def test_interferer_ports_combine_current_gain_and_last_power():
    ctx = _three_slot_context()
    layout = StateLayout(2)
    n = 0

    raw = observe(ctx, n, layout, PMAX).raw

    current = ctx.neighbors.interferers[n]
    for j, i in enumerate(current):
        block = raw[6 + 3 * j : 9 + 3 * j]
        if i == VIRTUAL:
            assert list(block) == [0.0, -1.0, 0.0]
        else:
            power = ctx.prev_log.powers[i]
            received = ctx.link_gains[i, n] * power
            assert list(block) == [received, ctx.prev_log.rates[i], power]

    past = ctx.prev_neighbors.interferers[n]
    for j, i in enumerate(past):
        block = raw[12 + 3 * j : 15 + 3 * j]
        if i == VIRTUAL:
            assert list(block) == [0.0, -1.0, 0.0]
        else:
            power = ctx.prev2_log.powers[i]
            received = ctx.prev_log.link_gains[i, n] * power
            assert list(block) == [received, ctx.prev2_log.rates[i], power]


def test_interfered_ports_use_stored_received_power():
    ctx = _three_slot_context()
    layout = StateLayout(2)
    n = 1

    raw = observe(ctx, n, layout, PMAX).raw

    for j, o in enumerate(ctx.neighbors.interfered[n]):
        block = raw[18 + 4 * j : 22 + 4 * j]
        if o == VIRTUAL:
            assert list(block) == [0.0, -1.0, 0.0, 0.0]
        else:
            received = ctx.prev_log.received[n, o]
            assert block[0] == ctx.prev_log.direct_gains[o]
            assert block[1] == ctx.prev_log.rates[o]
            total = ctx.prev_log.interference_plus_noise[o]
            assert block[2] == pytest.approx(received / total)
            assert block[3] == received


def test_context_has_real_neighbors():
    ctx = _three_slot_context()

    assert (ctx.neighbors.interferers != VIRTUAL).any()
    assert (ctx.prev_neighbors.interferers != VIRTUAL).any()


def test_normalization_anchors():
    layout = StateLayout(1)
    raw = np.zeros(layout.dimension)
    raw[0] = PMAX
    raw[2] = 1.0
    raw[4] = NOISE
    raw[5] = NOISE
    raw[1] = 2.5

    values = normalize(raw, layout, PMAX, NOISE)

    assert values[0] == pytest.approx(1.0)
    assert values[2] == pytest.approx(1.0)
    assert values[3] == 0.0
    assert values[4] == pytest.approx(0.0)
    assert values[1] == pytest.approx(0.25)


def test_denormalize_inverts_normalize():
    ctx = _three_slot_context()
    layout = StateLayout(2)

    normalized, raw = build_states(ctx, layout, PMAX)

    restored = denormalize(normalized, layout, PMAX, NOISE)
    assert np.allclose(restored, raw, rtol=1e-9, atol=1e-15)


def test_share_ports_pass_through():
    layout = StateLayout(2)
    raw = np.zeros(layout.dimension)
    share = layout.kind_mask(PortKind.SHARE)
    raw[share] = 0.3
    raw[layout.kind_mask(PortKind.INTERFERENCE)] = NOISE

    assert np.allclose(normalize(raw, layout, PMAX, NOISE)[share], 0.3)


def test_non_finite_state_is_a_numeric_error():
    gains = _gains(0)
    gains[0, 0] = np.inf
    empty = NeighborSets.empty(0, 3, 1)
    ctx = StateContext(0, gains, None, None, empty, empty, NOISE)

    with pytest.raises(NumericError):
        build_states(ctx, StateLayout(1), PMAX)


def test_no_port_reads_the_future():
    ctx = _three_slot_context()
    layout = StateLayout(2)

    for n in range(3):
        rows = provenance(ctx, n, layout)
        assert len(rows) == layout.dimension
        assert [name for name, _, _ in rows] == layout.names
        assert all(slot <= ctx.slot for _, slot, _ in rows)
        current = [slot for name, slot, _ in rows if slot == ctx.slot]
        assert len(current) == 1 + 2


def test_labeled_observation():
    ctx = _three_slot_context()
    layout = StateLayout(2)

    labeled = observe(ctx, 2, layout, PMAX).labeled(layout)

    assert labeled[0][0] == "own_power_prev"
    assert labeled[0][1] == ctx.prev_log.powers[2]
