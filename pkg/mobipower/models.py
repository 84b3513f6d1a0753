import json
import math
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Type, TypeVar, Union

from mobipower.errors import ConfigError

T = TypeVar("T")

SPEED_OF_LIGHT = 3e8


class Algorithm(Enum):
    POLICY = "policy"
    WMMSE = "wmmse"
    FP = "fp"
    FP_DELAYED = "fp_delayed"
    RANDOM = "random"
    FULL = "full"
    GRID = "grid"


class RunMode(Enum):
    TRAIN = "train"
    EVAL = "eval"


class PowerMap(Enum):
    LINEAR = "linear"
    LOG = "log"


class Activation(Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


def _section(payload: dict, key: str, class_type: Type[T]) -> T:
    section = payload.get(key)
    if section is not None and not isinstance(section, dict):
        raise ConfigError(key, "expected an object")
    return class_type(section or {}, prefix=key)


def _boolean(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    raise ValueError(value)


def _int_list(value: Any) -> List[int]:
    if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
        raise ValueError(value)
    return list(value)


class BaseConfigModel:
    payload: dict
    prefix: str
    resolved: Dict[str, Any]
    defaulted: List[str]

    def __init__(self, payload: dict, prefix: str = ""):
        self.payload = payload
        self.prefix = prefix
        self.resolved = {}
        self.defaulted = []

    def _name(self, key: str) -> str:
        return f"{self.prefix}.{key}" if self.prefix else key

    def _get(self, key: str, default: Any, cast: Callable[[Any], Any] = float) -> Any:
        if self.payload.get(key) is None:
            value = default
            self.defaulted.append(self._name(key))
        else:
            try:
                value = cast(self.payload[key])
            except (TypeError, ValueError):
                raise ConfigError(
                    self._name(key), f"cannot interpret {self.payload[key]!r}"
                )
        self.resolved[key] = value.value if isinstance(value, Enum) else value
        return value

    def _check(self, key: str, condition: bool, message: str):
        if not condition:
            raise ConfigError(self._name(key), message)

    def _reject_unknown(self):
        for key in self.payload:
            if key not in self.resolved:
                raise ConfigError(self._name(key), "unknown field")

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.resolved)


class NetworkConfig(BaseConfigModel):
    cells: int
    links: int
    cell_radius_m: float
    pmax_dbm: float
    noise_dbm: float
    carrier_ghz: float
    slot_duration_ms: float
    shadowing_std_db: float
    correlation_length_m: float
    min_distance_km: float
    max_speed_mps: float
    speed_step_mps: float
    heading_step_rad: float
    mobility_update_s: float
    mobility: bool
    fixed_doppler_hz: Optional[float]
    register_slots: int
    neighbor_threshold: float
    neighbor_cap: int
    virtual_rate: float

    def __init__(self, payload: dict, prefix: str = "network"):
        super().__init__(payload, prefix)
        self.cells = self._get("cells", 10, int)
        self.links = self._get("links", 20, int)
        self.cell_radius_m = self._get("cell_radius_m", 200.0)
        self.pmax_dbm = self._get("pmax_dbm", 38.0)
        self.noise_dbm = self._get("noise_dbm", -114.0)
        self.carrier_ghz = self._get("carrier_ghz", 2.0)
        self.slot_duration_ms = self._get("slot_duration_ms", 20.0)
        self.shadowing_std_db = self._get("shadowing_std_db", 10.0)
        self.correlation_length_m = self._get("correlation_length_m", 10.0)
        self.min_distance_km = self._get("min_distance_km", 0.01)
        self.max_speed_mps = self._get("max_speed_mps", 2.5)
        self.speed_step_mps = self._get("speed_step_mps", 0.5)
        self.heading_step_rad = self._get("heading_step_rad", 0.175)
        self.mobility_update_s = self._get("mobility_update_s", 1.0)
        self.mobility = self._get("mobility", True, _boolean)
        self.fixed_doppler_hz = self._get("fixed_doppler_hz", None)
        self.register_slots = self._get("register_slots", 10, int)
        self.neighbor_threshold = self._get("neighbor_threshold", 5.0)
        self.neighbor_cap = self._get("neighbor_cap", 5, int)
        self.virtual_rate = self._get("virtual_rate", -1.0)
        self._reject_unknown()

        self._check("cells", self.cells >= 1, "must be at least 1")
        self._check("links", self.links >= 1, "must be at least 1")
        self._check("cell_radius_m", self.cell_radius_m > 0, "must be positive")
        self._check("slot_duration_ms", self.slot_duration_ms > 0, "must be positive")
        self._check("carrier_ghz", self.carrier_ghz > 0, "must be positive")
        self._check("shadowing_std_db", self.shadowing_std_db >= 0, "must be >= 0")
        self._check(
            "correlation_length_m", self.correlation_length_m > 0, "must be positive"
        )
        self._check("min_distance_km", self.min_distance_km > 0, "must be positive")
        self._check("max_speed_mps", self.max_speed_mps >= 0, "must be >= 0")
        self._check("mobility_update_s", self.mobility_update_s > 0, "must be positive")
        self._check("register_slots", self.register_slots >= 1, "must be at least 1")
        self._check("neighbor_threshold", self.neighbor_threshold >= 0, "must be >= 0")
        self._check("neighbor_cap", self.neighbor_cap >= 1, "must be at least 1")
        self._check("virtual_rate", self.virtual_rate < 0, "must be negative")
        if self.fixed_doppler_hz is not None:
            self._check("fixed_doppler_hz", self.fixed_doppler_hz >= 0, "must be >= 0")

    @property
    def pmax_w(self) -> float:
        return dbm_to_watts(self.pmax_dbm)

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def slot_duration_s(self) -> float:
        return self.slot_duration_ms / 1000

    @property
    def carrier_hz(self) -> float:
        return self.carrier_ghz * 1e9

    @property
    def mobility_cadence(self) -> int:
        """
        Slots between speed/heading updates: 50 at T = 20 ms and a 1 s update period.
        """
        ratio = round(self.mobility_update_s / self.slot_duration_s, 9)
        return max(1, math.ceil(ratio))


class Timing(BaseConfigModel):
    train_slots: int
    travel_slots: int
    episodes: int
    broadcast_period: int
    broadcast_delay: int
    transmit_during_travel: bool

    def __init__(self, payload: dict, prefix: str = "timing"):
        super().__init__(payload, prefix)
        self.train_slots = self._get("train_slots", 5000, int)
        self.travel_slots = self._get("travel_slots", 50000, int)
        self.episodes = self._get("episodes", 10, int)
        self.broadcast_period = self._get("broadcast_period", 50, int)
        self.broadcast_delay = self._get("broadcast_delay", 2, int)
        self.transmit_during_travel = self._get(
            "transmit_during_travel", False, _boolean
        )
        self._reject_unknown()

        self._check("train_slots", self.train_slots >= 1, "must be at least 1")
        self._check("travel_slots", self.travel_slots >= 0, "must be >= 0")
        self._check("episodes", self.episodes >= 1, "must be at least 1")
        self._check(
            "broadcast_period", self.broadcast_period >= 1, "must be at least 1"
        )
        self._check("broadcast_delay", self.broadcast_delay >= 0, "must be >= 0")

    def episode_start(self, episode: int) -> int:
        """
        First slot of the 1-based `episode`.
        """
        return (episode - 1) * (self.train_slots + self.travel_slots)


class LearnerConfig(BaseConfigModel):
    actor_hidden: List[int]
    critic_hidden: List[int]
    activation: Activation
    actor_lr: float
    critic_lr: float
    batch_size: int
    replay_capacity: int
    discount: float
    epsilon_start: float
    epsilon_end: float
    target_sync_period: int
    target_actor: bool
    power_map: PowerMap
    power_range_db: float

    def __init__(self, payload: dict, prefix: str = "learner"):
        super().__init__(payload, prefix)
        self.actor_hidden = self._get("actor_hidden", [200, 100, 40], _int_list)
        self.critic_hidden = self._get("critic_hidden", [400, 300], _int_list)
        self.activation = self._get("activation", Activation.RELU, Activation)
        self.actor_lr = self._get("actor_lr", 1e-4)
        self.critic_lr = self._get("critic_lr", 1e-3)
        self.batch_size = self._get("batch_size", 128, int)
        self.replay_capacity = self._get("replay_capacity", 10000, int)
        self.discount = self._get("discount", 0.5)
        self.epsilon_start = self._get("epsilon_start", 0.3)
        self.epsilon_end = self._get("epsilon_end", 0.01)
        self.target_sync_period = self._get("target_sync_period", 100, int)
        self.target_actor = self._get("target_actor", False, _boolean)
        self.power_map = self._get("power_map", PowerMap.LINEAR, PowerMap)
        self.power_range_db = self._get("power_range_db", 60.0)
        self._reject_unknown()

        self._check("actor_lr", self.actor_lr >= 0, "must be >= 0")
        self._check("critic_lr", self.critic_lr >= 0, "must be >= 0")
        self._check("batch_size", self.batch_size >= 1, "must be at least 1")
        self._check(
            "replay_capacity",
            self.replay_capacity >= self.batch_size,
            "must hold at least one minibatch",
        )
        self._check("discount", 0 < self.discount <= 1, "must be in (0, 1]")
        self._check("epsilon_start", 0 <= self.epsilon_start <= 1, "must be in [0, 1]")
        self._check("epsilon_end", 0 <= self.epsilon_end <= 1, "must be in [0, 1]")
        self._check(
            "target_sync_period", self.target_sync_period >= 1, "must be at least 1"
        )
        self._check("power_range_db", self.power_range_db > 0, "must be positive")
        self._check(
            "activation",
            self.activation in (Activation.RELU, Activation.TANH),
            "hidden activation must be relu or tanh",
        )


class EvaluationConfig(BaseConfigModel):
    deployments: int
    slots: int
    seed: int
    algorithms: List[Algorithm]
    wmmse_tolerance: float
    fp_tolerance: float
    max_iterations: int

    def __init__(self, payload: dict, prefix: str = "evaluation"):
        super().__init__(payload, prefix)
        self.deployments = self._get("deployments", 5, int)
        self.slots = self._get("slots", 500, int)
        self.seed = self._get("seed", 1000, int)
        self.algorithms = self._get(
            "algorithms",
            [
                Algorithm.WMMSE,
                Algorithm.FP,
                Algorithm.FP_DELAYED,
                Algorithm.RANDOM,
                Algorithm.FULL,
            ],
            lambda names: [Algorithm(name) for name in names],
        )
        self.resolved["algorithms"] = [a.value for a in self.algorithms]
        self.wmmse_tolerance = self._get("wmmse_tolerance", 2e-3)
        self.fp_tolerance = self._get("fp_tolerance", 5e-3)
        self.max_iterations = self._get("max_iterations", 500, int)
        self._reject_unknown()

        self._check("deployments", self.deployments >= 1, "must be at least 1")
        self._check("slots", self.slots >= 1, "must be at least 1")
        self._check(
            "algorithms",
            Algorithm.POLICY not in self.algorithms
            and Algorithm.GRID not in self.algorithms,
            "only baseline allocators can be listed",
        )
        for key in ("wmmse_tolerance", "fp_tolerance"):
            self._check(key, getattr(self, key) > 0, "must be positive")
        self._check("max_iterations", self.max_iterations >= 1, "must be at least 1")

    def tolerance(self, algorithm: Algorithm) -> Optional[float]:
        """
        Stopping tolerance for an iterative baseline, None for the others.
        """
        if algorithm == Algorithm.WMMSE:
            return self.wmmse_tolerance
        if algorithm in (Algorithm.FP, Algorithm.FP_DELAYED):
            return self.fp_tolerance
        return None


class OutputConfig(BaseConfigModel):
    trace_every: int
    moving_average: int
    debug_states: bool

    def __init__(self, payload: dict, prefix: str = "output"):
        super().__init__(payload, prefix)
        self.trace_every = self._get("trace_every", 50, int)
        self.moving_average = self._get("moving_average", 100, int)
        self.debug_states = self._get("debug_states", False, _boolean)
        self._reject_unknown()

        self._check("trace_every", self.trace_every >= 1, "must be at least 1")
        self._check("moving_average", self.moving_average >= 1, "must be at least 1")


class RunConfig:
    payload: dict
    seed: int
    network: NetworkConfig
    timing: Timing
    learner: LearnerConfig
    evaluation: EvaluationConfig
    output: OutputConfig

    _sections = ("network", "timing", "learner", "evaluation", "output")

    def __init__(self, payload: Optional[dict] = None):
        payload = payload or {}
        if not isinstance(payload, dict):
            raise ConfigError("<root>", "expected an object")
        self.payload = payload

        for key in payload:
            if key != "seed" and key not in self._sections:
                raise ConfigError(key, "unknown section")

        seed = payload.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        self.seed = seed

        self.network = _section(payload, "network", NetworkConfig)
        self.timing = _section(payload, "timing", Timing)
        self.learner = _section(payload, "learner", LearnerConfig)
        self.evaluation = _section(payload, "evaluation", EvaluationConfig)
        self.output = _section(payload, "output", OutputConfig)

    @property
    def defaulted(self) -> List[str]:
        fields = [] if "seed" in self.payload else ["seed"]
        for name in self._sections:
            fields.extend(getattr(self, name).defaulted)
        return fields

    def as_dict(self) -> Dict[str, Any]:
        resolved: Dict[str, Any] = {"seed": self.seed}
        for name in self._sections:
            resolved[name] = getattr(self, name).as_dict()
        return resolved

    def with_overrides(self, **sections: dict) -> "RunConfig":
        """
        Returns a new config with the given sections' keys replaced, e.g.
        network={"links": 40}.
        """
        payload = json.loads(json.dumps(self.payload))
        for name, values in sections.items():
            if name == "seed":
                payload["seed"] = values
            else:
                payload.setdefault(name, {}).update(values)
        return RunConfig(payload)


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path} is not valid JSON ({e})")

    return RunConfig(payload)


class RunManifest:
    """
    Written next to every run's outputs: the resolved config that produced them,
    which fields were defaulted, seeds, code version and timestamps.
    """

    command: str
    config: RunConfig
    version: str
    outputs: List[str]
    started_at: str
    finished_at: Optional[str]

    def __init__(self, command: str, config: RunConfig, version: str):
        self.command = command
        self.config = config
        self.version = version
        self.outputs = []
        self.started_at = datetime.now(timezone.utc).isoformat()
        self.finished_at = None

    def finish(self, outputs: List[str]):
        self.outputs = sorted(outputs)
        self.finished_at = datetime.now(timezone.utc).isoformat()

    def as_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "version": self.version,
            "config": self.config.as_dict(),
            "defaulted": self.config.defaulted,
            "seeds": {
                "run": self.config.seed,
                "evaluation": self.config.evaluation.seed,
            },
            "outputs": self.outputs,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }
