import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from mobipower.netsim import SlotLog

METRICS_HEADER = [
    "slot",
    "link",
    "power_dBm",
    "rate_bpsHz",
    "reward",
    "epsilon",
    "episode",
]
TRACE_HEADER = ["slot", "device", "x", "y", "cell"]
PROGRESS_HEADER = ["checkpoint", "episode", "algorithm", "mean_rate_bpsHz"]


def power_dbm(watts: np.ndarray) -> np.ndarray:
    """
    Zero power is reported as -inf dBm.
    """
    watts = np.asarray(watts, dtype=float)
    with np.errstate(divide="ignore"):
        return 10 * np.log10(watts) + 30


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """
    Trailing mean over the last `window` entries; shorter prefixes average what
    is there.
    """
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return values
    cumulative = np.concatenate([[0.0], np.cumsum(values)])
    ends = np.arange(1, len(values) + 1)
    starts = np.maximum(ends - window, 0)
    return (cumulative[ends] - cumulative[starts]) / (ends - starts)


class _CsvSink:
    def __init__(self, path: Optional[Union[str, Path]], header: List[str]):
        self.path = Path(path) if path is not None else None
        self.rows: List[List[str]] = []
        self._file = None
        self._writer = None
        if self.path is not None:
            self._file = open(self.path, "w", newline="")
            self._writer = csv.writer(self._file, lineterminator="\n")
            self._writer.writerow(header)

    def write(self, row: Iterable[Any]):
        row = [format_value(v) for v in row]
        if self._writer is None:
            self.rows.append(row)
        else:
            self._writer.writerow(row)

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None
            self._writer = None


class RunMetrics:
    """
    Append-only, slot-indexed record of a run: one metrics row per link per
    transmitting slot, sampled device positions, per-slot sum-rates and episode markers.

    With no paths the rows are kept in memory (`metric_rows`, `trace_rows`).
    """

    sum_rates: List[float]
    slots: List[int]
    episodes: List[int]
    episode_starts: Dict[int, int]
    moving_average_window: int

    def __init__(
        self,
        metrics_path: Optional[Union[str, Path]] = None,
        trace_path: Optional[Union[str, Path]] = None,
        moving_average_window: int = 100,
    ):
        self._metrics = _CsvSink(metrics_path, METRICS_HEADER)
        self._trace = _CsvSink(trace_path, TRACE_HEADER)
        self.moving_average_window = moving_average_window
        self.sum_rates = []
        self.slots = []
        self.episodes = []
        self.episode_starts = {}
        self.links = 0

    def __enter__(self) -> "RunMetrics":
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def metric_rows(self) -> List[List[str]]:
        return self._metrics.rows

    @property
    def trace_rows(self) -> List[List[str]]:
        return self._trace.rows

    def mark_episode(self, episode: int, slot: int):
        self.episode_starts[episode] = slot

    def record_slot(
        self,
        log: SlotLog,
        rewards: Optional[np.ndarray],
        epsilon: float,
        episode: int,
    ):
        dbm = power_dbm(log.powers)
        for n in range(log.N):
            self._metrics.write(
                [
                    log.slot,
                    n,
                    float(dbm[n]),
                    float(log.rates[n]),
                    None if rewards is None else float(rewards[n]),
                    float(epsilon),
                    episode,
                ]
            )
        self.sum_rates.append(log.sum_rate)
        self.slots.append(log.slot)
        self.episodes.append(episode)
        self.links = log.N

    def record_positions(self, slot: int, positions: np.ndarray, serving: np.ndarray):
        for device, ((x, y), cell) in enumerate(zip(positions, serving)):
            self._trace.write([slot, device, float(x), float(y), int(cell)])

    def moving_average(self, window: Optional[int] = None) -> np.ndarray:
        return moving_average(self.sum_rates, window or self.moving_average_window)

    def mean_rate_per_link(self, episode: Optional[int] = None) -> float:
        rates = np.asarray(self.sum_rates)
        if episode is not None:
            rates = rates[np.asarray(self.episodes) == episode]
        if len(rates) == 0 or self.links == 0:
            return float("nan")
        return float(rates.mean() / self.links)

    def summary(self) -> Dict[str, Any]:
        averaged = self.moving_average()
        return {
            "slots_recorded": len(self.sum_rates),
            "mean_rate_per_link": self.mean_rate_per_link(),
            "final_moving_average_per_link": (
                float(averaged[-1] / self.links) if len(averaged) else None
            ),
            "episodes": {
                str(e): {
                    "start_slot": start,
                    "mean_rate_per_link": self.mean_rate_per_link(e),
                }
                for e, start in sorted(self.episode_starts.items())
            },
        }

    def close(self):
        self._metrics.close()
        self._trace.close()


def write_rows(
    path: Union[str, Path], header: List[str], rows: Iterable[Iterable[Any]]
):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _clean(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_json(path: Union[str, Path], payload: Dict[str, Any]):
    with open(path, "w") as f:
        json.dump(_clean(payload), f, indent=2, sort_keys=True)
        f.write("\n")
