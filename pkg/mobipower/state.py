from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from mobipower.errors import NumericError
from mobipower.netsim import VIRTUAL, NeighborSets, SlotLog

RATE_SCALE = 10.0


class PortKind(Enum):
    POWER = "power"
    RATE = "rate"
    GAIN = "gain"
    INTERFERENCE = "interference"
    RECEIVED = "received"
    SHARE = "share"


_LOCAL_PORTS = [
    ("own_power_prev", PortKind.POWER),
    ("own_rate_prev", PortKind.RATE),
    ("direct_gain", PortKind.GAIN),
    ("direct_gain_prev", PortKind.GAIN),
    ("interference_prev", PortKind.INTERFERENCE),
    ("interference_prev2", PortKind.INTERFERENCE),
]
_INTERFERER_PORTS = [
    ("received", PortKind.RECEIVED),
    ("rate", PortKind.RATE),
    ("power", PortKind.POWER),
]
_INTERFERED_PORTS = [
    ("direct_gain", PortKind.GAIN),
    ("rate", PortKind.RATE),
    ("share", PortKind.SHARE),
    ("received", PortKind.RECEIVED),
]


class StateLayout:
    """
    Port order: 6 local ports, 3c ports for the current interferer list, 3c for the
    previous slot's interferer list, then 4c for the interfered list.
    """

    c: int
    names: List[str]
    kinds: List[PortKind]

    def __init__(self, c: int):
        self.c = c
        ports = list(_LOCAL_PORTS)
        for prefix in ("interferer", "past_interferer"):
            for j in range(c):
                ports.extend(
                    (f"{prefix}{j}_{name}", kind) for name, kind in _INTERFERER_PORTS
                )
        for j in range(c):
            ports.extend(
                (f"interfered{j}_{name}", kind) for name, kind in _INTERFERED_PORTS
            )
        self.names = [name for name, _ in ports]
        self.kinds = [kind for _, kind in ports]

    @property
    def dimension(self) -> int:
        return 6 + 10 * self.c

    def kind_mask(self, kind: PortKind) -> np.ndarray:
        return np.array([k == kind for k in self.kinds])


class StateContext:
    """
    Everything an agent may read at the start of slot t: current direct and
    interfering channel gains, the last two slot logs and the last two neighbor sets.
    """

    slot: int
    link_gains: np.ndarray
    prev_log: Optional[SlotLog]
    prev2_log: Optional[SlotLog]
    neighbors: NeighborSets
    prev_neighbors: NeighborSets
    noise: float
    virtual_rate: float

    def __init__(
        self,
        slot: int,
        link_gains: np.ndarray,
        prev_log: Optional[SlotLog],
        prev2_log: Optional[SlotLog],
        neighbors: NeighborSets,
        prev_neighbors: NeighborSets,
        noise: float,
        virtual_rate: float = -1.0,
    ):
        self.slot = slot
        self.link_gains = link_gains
        self.prev_log = prev_log
        self.prev2_log = prev2_log
        self.neighbors = neighbors
        self.prev_neighbors = prev_neighbors
        self.noise = noise
        self.virtual_rate = virtual_rate


def build_local_features(ctx: StateContext, n: int) -> np.ndarray:
    prev, prev2 = ctx.prev_log, ctx.prev2_log
    return np.array(
        [
            prev.powers[n] if prev else 0.0,
            prev.rates[n] if prev else 0.0,
            ctx.link_gains[n, n],
            prev.direct_gains[n] if prev else 0.0,
            prev.interference_plus_noise[n] if prev else ctx.noise,
            prev2.interference_plus_noise[n] if prev2 else ctx.noise,
        ]
    )


def build_interferer_features(ctx: StateContext, n: int) -> np.ndarray:
    features = []
    padding = [0.0, ctx.virtual_rate, 0.0]

    for i in ctx.neighbors.interferers[n]:
        if i == VIRTUAL:
            features.extend(padding)
        else:
            power = ctx.prev_log.powers[i]
            features.extend(
                [ctx.link_gains[i, n] * power, ctx.prev_log.rates[i], power]
            )

    for i in ctx.prev_neighbors.interferers[n]:
        if i == VIRTUAL:
            features.extend(padding)
        else:
            power = ctx.prev2_log.powers[i]
            features.extend(
                [ctx.prev_log.link_gains[i, n] * power, ctx.prev2_log.rates[i], power]
            )

    return np.array(features, dtype=float)


def build_interfered_features(ctx: StateContext, n: int) -> np.ndarray:
    features = []
    for j, o in enumerate(ctx.neighbors.interfered[n]):
        if o == VIRTUAL:
            features.extend([0.0, ctx.virtual_rate, 0.0, 0.0])
            continue
        # Received power frozen at the last slot link n transmitted.
        received = ctx.neighbors.interfered_received[n, j]
        features.extend(
            [
                ctx.prev_log.direct_gains[o],
                ctx.prev_log.rates[o],
                received / ctx.prev_log.interference_plus_noise[o],
                received,
            ]
        )
    return np.array(features, dtype=float)


def build_raw_state(ctx: StateContext, n: int) -> np.ndarray:
    return np.concatenate(
        [
            build_local_features(ctx, n),
            build_interferer_features(ctx, n),
            build_interfered_features(ctx, n),
        ]
    )


def _decibel_span(pmax: float, noise: float) -> float:
    return 10 * np.log10(1 + pmax / noise)


def normalize(
    raw: np.ndarray, layout: StateLayout, pmax: float, noise: float
) -> np.ndarray:
    """
    Fixed, state-independent map. Powers, gains and received powers go through a dB
    transform anchored at the noise floor and are divided by the dB span of P_max over
    noise, so P_max maps to 1 and zero maps to 0; interference-plus-noise at the noise
    floor maps to 0. Rates are divided by RATE_SCALE, shares pass through.
    """
    raw = np.asarray(raw, dtype=float)
    span = _decibel_span(pmax, noise)
    out = raw.copy()

    for kind, transform in (
        (PortKind.POWER, lambda x: 10 * np.log10(1 + x / noise)),
        (PortKind.GAIN, lambda x: 10 * np.log10(1 + x * pmax / noise)),
        (PortKind.RECEIVED, lambda x: 10 * np.log10(1 + x / noise)),
        (PortKind.INTERFERENCE, lambda x: 10 * np.log10(x / noise)),
    ):
        mask = layout.kind_mask(kind)
        out[..., mask] = transform(raw[..., mask]) / span

    rate = layout.kind_mask(PortKind.RATE)
    out[..., rate] = raw[..., rate] / RATE_SCALE
    return out


def denormalize(
    values: np.ndarray, layout: StateLayout, pmax: float, noise: float
) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    span = _decibel_span(pmax, noise)
    out = values.copy()

    for kind, inverse in (
        (PortKind.POWER, lambda level: noise * (10 ** (level / 10) - 1)),
        (PortKind.GAIN, lambda level: noise * (10 ** (level / 10) - 1) / pmax),
        (PortKind.RECEIVED, lambda level: noise * (10 ** (level / 10) - 1)),
        (PortKind.INTERFERENCE, lambda level: noise * 10 ** (level / 10)),
    ):
        mask = layout.kind_mask(kind)
        out[..., mask] = inverse(values[..., mask] * span)

    rate = layout.kind_mask(PortKind.RATE)
    out[..., rate] = values[..., rate] * RATE_SCALE
    return out


class AgentObservation:
    agent: int
    slot: int
    values: np.ndarray
    raw: np.ndarray

    def __init__(self, agent: int, slot: int, values: np.ndarray, raw: np.ndarray):
        if not np.all(np.isfinite(raw)):
            raise NumericError(f"non-finite state for agent {agent} at slot {slot}")
        self.agent = agent
        self.slot = slot
        self.values = values
        self.raw = raw

    def labeled(self, layout: StateLayout) -> List[Tuple[str, float, float]]:
        return list(zip(layout.names, self.raw.tolist(), self.values.tolist()))


def observe(
    ctx: StateContext, n: int, layout: StateLayout, pmax: float
) -> AgentObservation:
    raw = build_raw_state(ctx, n)
    return AgentObservation(n, ctx.slot, normalize(raw, layout, pmax, ctx.noise), raw)


def build_states(
    ctx: StateContext, layout: StateLayout, pmax: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normalized and raw state matrices, one row per agent.
    """
    N = ctx.link_gains.shape[0]
    raw = np.stack([build_raw_state(ctx, n) for n in range(N)])
    if not np.all(np.isfinite(raw)):
        raise NumericError(f"non-finite state at slot {ctx.slot}")
    return normalize(raw, layout, pmax, ctx.noise), raw


def provenance(
    ctx: StateContext, n: int, layout: StateLayout
) -> List[Tuple[str, int, int]]:
    """
    (port, source slot, source link) for every port of agent n's state; the source
    link is VIRTUAL for padding entries.
    """
    t = ctx.slot
    rows = [
        ("own_power_prev", t - 1, n),
        ("own_rate_prev", t - 1, n),
        ("direct_gain", t, n),
        ("direct_gain_prev", t - 1, n),
        ("interference_prev", t - 1, n),
        ("interference_prev2", t - 2, n),
    ]
    for j, i in enumerate(ctx.neighbors.interferers[n]):
        slots = (t, t - 1, t - 1)
        rows.extend(
            (f"interferer{j}_{name}", slot, int(i))
            for (name, _), slot in zip(_INTERFERER_PORTS, slots)
        )
    for j, i in enumerate(ctx.prev_neighbors.interferers[n]):
        slots = (t - 1, t - 2, t - 2)
        rows.extend(
            (f"past_interferer{j}_{name}", slot, int(i))
            for (name, _), slot in zip(_INTERFERER_PORTS, slots)
        )
    for j, o in enumerate(ctx.neighbors.interfered[n]):
        active = int(ctx.neighbors.last_active[n])
        slots = (t - 1, t - 1, active, active)
        rows.extend(
            (f"interfered{j}_{name}", slot, int(o))
            for (name, _), slot in zip(_INTERFERED_PORTS, slots)
        )
    assert len(rows) == layout.dimension
    return rows
