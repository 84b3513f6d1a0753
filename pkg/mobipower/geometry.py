import math
from typing import List, Tuple

import numpy as np

from mobipower.models import NetworkConfig

SQRT3 = math.sqrt(3)

# Axial neighbor offsets, walked in this order around each ring.
_AXIAL_DIRECTIONS = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]


def _axial_ring_order(count: int) -> List[Tuple[int, int]]:
    cells = [(0, 0)]
    radius = 1
    while len(cells) < count:
        q, r = _AXIAL_DIRECTIONS[4][0] * radius, _AXIAL_DIRECTIONS[4][1] * radius
        for dq, dr in _AXIAL_DIRECTIONS:
            for _ in range(radius):
                cells.append((q, r))
                q, r = q + dq, r + dr
        radius += 1
    return cells[:count]


class CellLayout:
    """
    Pointy-top hexagonal cells in ring order: the center cell first, then
    concentric rings.
    """

    K: int
    centers: np.ndarray
    cell_radius: float

    def __init__(self, centers: np.ndarray, cell_radius: float):
        self.centers = centers
        self.cell_radius = cell_radius
        self.K = len(centers)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        """
        (x_min, x_max, y_min, y_max) of the box enclosing every hexagon.
        """
        half_width = SQRT3 / 2 * self.cell_radius
        x, y = self.centers[:, 0], self.centers[:, 1]
        return (
            float(x.min() - half_width),
            float(x.max() + half_width),
            float(y.min() - self.cell_radius),
            float(y.max() + self.cell_radius),
        )

    def nearest_cell(self, positions: np.ndarray) -> np.ndarray:
        # The Voronoi cells of a hex grid are exactly its hexagons.
        distances = np.linalg.norm(
            positions[:, None, :] - self.centers[None, :, :], axis=-1
        )
        return np.argmin(distances, axis=1)

    def inside_hexagon(self, offsets: np.ndarray) -> np.ndarray:
        """
        Strict containment of offsets (relative to a cell center) in that cell's
        hexagon.
        """
        dx = np.abs(offsets[..., 0])
        dy = np.abs(offsets[..., 1])
        return (dx < SQRT3 / 2 * self.cell_radius) & (
            dy < self.cell_radius - dx / SQRT3
        )

    def distances_km(self, positions: np.ndarray) -> np.ndarray:
        """
        K x N matrix of center-to-device distances in kilometers.
        """
        diff = self.centers[:, None, :] - positions[None, :, :]
        return np.linalg.norm(diff, axis=-1) / 1000


def build_layout(K: int, cell_radius: float) -> CellLayout:
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if not cell_radius > 0:
        raise ValueError(f"cell_radius must be positive, got {cell_radius}")

    centers = np.array(
        [
            (cell_radius * SQRT3 * (q + r / 2), cell_radius * 1.5 * r)
            for q, r in _axial_ring_order(K)
        ],
        dtype=float,
    )
    return CellLayout(centers, float(cell_radius))


class DeviceKinematics:
    positions: np.ndarray
    speeds: np.ndarray
    headings: np.ndarray
    displacement: np.ndarray

    def __init__(
        self,
        positions: np.ndarray,
        speeds: np.ndarray,
        headings: np.ndarray,
        displacement: np.ndarray,
    ):
        self.positions = positions
        self.speeds = speeds
        self.headings = headings
        self.displacement = displacement

    @property
    def N(self) -> int:
        return len(self.positions)


class Association:
    serving: np.ndarray
    dwell: np.ndarray
    candidate: np.ndarray
    handovers: int

    def __init__(
        self,
        serving: np.ndarray,
        dwell: np.ndarray,
        candidate: np.ndarray,
        handovers: int = 0,
    ):
        self.serving = serving
        self.dwell = dwell
        self.candidate = candidate
        self.handovers = handovers


def _sample_in_hexagons(
    layout: CellLayout, cells: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    half_width = SQRT3 / 2 * layout.cell_radius
    offsets = np.zeros((len(cells), 2))
    pending = np.arange(len(cells))
    while len(pending):
        proposal = np.column_stack(
            [
                rng.uniform(-half_width, half_width, len(pending)),
                rng.uniform(-layout.cell_radius, layout.cell_radius, len(pending)),
            ]
        )
        accepted = layout.inside_hexagon(proposal)
        offsets[pending[accepted]] = proposal[accepted]
        pending = pending[~accepted]
    return layout.centers[cells] + offsets


def init_devices(
    layout: CellLayout, N: int, rng: np.random.Generator, config: NetworkConfig
) -> Tuple[DeviceKinematics, Association]:
    """
    Uniform placement over the union of the (equal-area) hexagons, uniform initial
    speed in [0, v_max] and heading in [0, 2pi).
    """
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")

    cells = rng.integers(layout.K, size=N)
    positions = _sample_in_hexagons(layout, cells, rng)
    speeds = rng.uniform(0, config.max_speed_mps, N)
    headings = rng.uniform(0, 2 * math.pi, N)
    if not config.mobility:
        speeds = np.zeros(N)

    devices = DeviceKinematics(positions, speeds, headings, np.zeros(N))
    association = Association(
        serving=cells.astype(int),
        dwell=np.zeros(N, dtype=int),
        candidate=np.full(N, -1, dtype=int),
    )
    return devices, association


def step_mobility(
    devices: DeviceKinematics,
    layout: CellLayout,
    slot_index: int,
    rng: np.random.Generator,
    config: NetworkConfig,
) -> DeviceKinematics:
    """
    Haas random walk: constant velocity within a slot, random increments on speed
    and heading once every `mobility_cadence` slots, reflection at the deployment box.
    """
    speeds = devices.speeds.copy()
    headings = devices.headings.copy()

    if not config.mobility:
        return DeviceKinematics(
            devices.positions.copy(), np.zeros(devices.N), headings, np.zeros(devices.N)
        )

    if slot_index > 0 and slot_index % config.mobility_cadence == 0:
        speeds = np.clip(
            speeds
            + rng.uniform(-config.speed_step_mps, config.speed_step_mps, devices.N),
            0,
            config.max_speed_mps,
        )
        headings = headings + rng.uniform(
            -config.heading_step_rad, config.heading_step_rad, devices.N
        )

    step = speeds * config.slot_duration_s
    positions = devices.positions + np.column_stack(
        [step * np.cos(headings), step * np.sin(headings)]
    )

    x_min, x_max, y_min, y_max = layout.bounds
    x, y = positions[:, 0], positions[:, 1]

    low, high = x < x_min, x > x_max
    x[low] = 2 * x_min - x[low]
    x[high] = 2 * x_max - x[high]
    headings[low | high] = math.pi - headings[low | high]

    low, high = y < y_min, y > y_max
    y[low] = 2 * y_min - y[low]
    y[high] = 2 * y_max - y[high]
    headings[low | high] = -headings[low | high]

    np.clip(x, x_min, x_max, out=x)
    np.clip(y, y_min, y_max, out=y)
    headings = np.mod(headings, 2 * math.pi)

    displacement = np.linalg.norm(positions - devices.positions, axis=1)
    return DeviceKinematics(positions, speeds, headings, displacement)


def update_association(
    devices: DeviceKinematics,
    association: Association,
    layout: CellLayout,
    register_slots: int,
) -> Association:
    """
    A device is handed over only after `register_slots` consecutive slots inside the
    same new cell. Returning to the serving cell, or moving on to a third cell,
    restarts the count.
    """
    containing = layout.nearest_cell(devices.positions)
    serving = association.serving.copy()
    dwell = association.dwell.copy()
    candidate = association.candidate.copy()

    home = containing == serving
    dwell[home] = 0
    candidate[home] = -1

    away = ~home
    same = away & (containing == candidate)
    moved = away & ~same
    dwell[same] += 1
    dwell[moved] = 1
    candidate[moved] = containing[moved]

    handover = away & (dwell >= register_slots)
    serving[handover] = containing[handover]
    dwell[handover] = 0
    candidate[handover] = -1

    return Association(
        serving,
        dwell,
        candidate,
        handovers=association.handovers + int(handover.sum()),
    )
