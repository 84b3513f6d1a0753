"""
The per-slot event loop: mobility and channel evolution, state building, actions
from the latest valid broadcast policy, transmission, centralized rewards, one-slot
stale experience shipping, one gradient step and periodic delayed broadcasts.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from mobipower.baselines import full_power, sum_rate_at
from mobipower.channel import ChannelState
from mobipower.ddpg import DdpgLearner, Experience, ReplayMemory, act, epsilon_schedule
from mobipower.decorators import solve
from mobipower.errors import CheckpointError, NumericError
from mobipower.geometry import (
    Association,
    CellLayout,
    DeviceKinematics,
    build_layout,
    init_devices,
    step_mobility,
    update_association,
)
from mobipower.metrics import RunMetrics
from mobipower.models import Algorithm, NetworkConfig, PowerMap, RunConfig, RunMode
from mobipower.netsim import NeighborSets, SlotLog, compute_neighbor_sets, rewards
from mobipower.neural import MlpParams, checkpoint_save
from mobipower.state import StateContext, StateLayout, build_states
from mobipower.streams import RandomStreams

logger = logging.getLogger("mobipower")


def action_to_power(
    actions: np.ndarray,
    pmax: float,
    power_map: PowerMap = PowerMap.LINEAR,
    range_db: float = 60.0,
) -> np.ndarray:
    """
    Linear: p = a * pmax. Log: p = pmax * 10^((a - 1) * range_db / 10), with
    a = 0 silent.
    """
    actions = np.asarray(actions, dtype=float)
    if np.any((actions < 0) | (actions > 1)):
        raise ValueError("actions must lie in [0, 1]")
    if power_map == PowerMap.LINEAR:
        return actions * pmax
    return np.where(actions > 0, pmax * 10 ** ((actions - 1) * range_db / 10), 0.0)


class PolicySnapshot:
    params: MlpParams
    issued_slot: int
    valid_from: int

    def __init__(self, params: MlpParams, issued_slot: int, valid_from: int):
        self.params = params
        self.issued_slot = issued_slot
        self.valid_from = valid_from


class SnapshotBoard:
    """
    Broadcast policies in issue order, so valid_from is non-decreasing. Agents at
    slot t use the snapshot with the largest valid_from <= t.

    Superseded snapshots are dropped on lookup, so with one lookup per slot the
    board holds at most ceil(delay / period) + 1 actor copies.
    """

    snapshots: List[PolicySnapshot]

    def __init__(self, initial: MlpParams):
        self.snapshots = [PolicySnapshot(initial.copy(), 0, 0)]
        self.issued = 0

    def issue(self, params: MlpParams, slot: int, delay: int) -> PolicySnapshot:
        snapshot = PolicySnapshot(params.copy(), slot, slot + delay)
        self.snapshots.append(snapshot)
        self.issued += 1
        logger.debug(
            f"Policy snapshot issued at slot {slot}, valid from {slot + delay}"
        )
        return snapshot

    def current(self, slot: int) -> PolicySnapshot:
        chosen = 0
        for i, snapshot in enumerate(self.snapshots):
            if snapshot.valid_from <= slot:
                chosen = i
        # Superseded snapshots can never be chosen again.
        del self.snapshots[:chosen]
        return self.snapshots[0]


class CausalityMonitor:
    """
    Counts experiences consumed by the trainer before the slot after they were
    generated, and snapshots used before their valid_from. Both must stay at zero.
    """

    early_experiences: int
    early_snapshots: int
    experience_checks: int
    snapshot_checks: int

    def __init__(self):
        self.early_experiences = 0
        self.early_snapshots = 0
        self.experience_checks = 0
        self.snapshot_checks = 0

    def check_experience(self, experience: Experience, slot: int):
        self.experience_checks += 1
        if experience.slot >= slot:
            self.early_experiences += 1
            logger.error(
                f"Experience of agent {experience.agent} from slot {experience.slot} "
                f"consumed at slot {slot}"
            )

    def check_snapshot(self, snapshot: PolicySnapshot, slot: int):
        self.snapshot_checks += 1
        if snapshot.valid_from > slot:
            self.early_snapshots += 1
            logger.error(
                f"Snapshot valid from {snapshot.valid_from} used at slot {slot}"
            )

    @property
    def violations(self) -> int:
        return self.early_experiences + self.early_snapshots

    def as_dict(self) -> Dict[str, int]:
        return {
            "early_experiences": self.early_experiences,
            "early_snapshots": self.early_snapshots,
            "experience_checks": self.experience_checks,
            "snapshot_checks": self.snapshot_checks,
        }


class World:
    """
    Geometry, association and channel of one deployment at `slot`.
    """

    config: NetworkConfig
    layout: CellLayout
    devices: DeviceKinematics
    association: Association
    channel: ChannelState
    slot: int

    def __init__(
        self,
        config: NetworkConfig,
        layout: CellLayout,
        devices: DeviceKinematics,
        association: Association,
        channel: ChannelState,
        slot: int = 0,
    ):
        self.config = config
        self.layout = layout
        self.devices = devices
        self.association = association
        self.channel = channel
        self.slot = slot

    @classmethod
    def create(cls, config: NetworkConfig, streams: RandomStreams) -> "World":
        layout = build_layout(config.cells, config.cell_radius_m)
        devices, association = init_devices(
            layout, config.links, streams.placement, config
        )
        channel = ChannelState.initial(
            layout, devices, config, streams.shadowing, streams.fading
        )
        return cls(config, layout, devices, association, channel, 0)

    def advance(self, streams: RandomStreams) -> "World":
        slot = self.slot + 1
        devices = step_mobility(
            self.devices, self.layout, slot, streams.mobility, self.config
        )
        association = update_association(
            devices, self.association, self.layout, self.config.register_slots
        )
        channel = self.channel.advance(
            self.layout,
            devices,
            self.config,
            streams.shadowing,
            streams.fading,
            doppler_hz=self.config.fixed_doppler_hz,
        )
        return World(self.config, self.layout, devices, association, channel, slot)

    @property
    def link_gains(self) -> np.ndarray:
        return self.channel.gains.link_gains(self.association.serving)


class SlotOutcome:
    log: SlotLog
    rewards: Optional[np.ndarray]
    actions: np.ndarray
    epsilon: float
    shipped: List[Experience]
    losses: Optional[Tuple[float, float]]

    def __init__(
        self,
        log: SlotLog,
        rewards: Optional[np.ndarray],
        actions: np.ndarray,
        epsilon: float,
        shipped: Optional[List[Experience]] = None,
        losses: Optional[Tuple[float, float]] = None,
    ):
        self.log = log
        self.rewards = rewards
        self.actions = actions
        self.epsilon = epsilon
        self.shipped = shipped or []
        self.losses = losses


class Simulation:
    """
    One environment stepper and one trainer interleaved on a single thread.

    Without a learner the simulation only runs in eval mode with the fixed `policy`.
    """

    config: RunConfig
    streams: RandomStreams
    learner: Optional[DdpgLearner]
    world: World
    slot: int

    def __init__(
        self,
        config: RunConfig,
        streams: RandomStreams,
        learner: Optional[DdpgLearner] = None,
        policy: Optional[MlpParams] = None,
    ):
        if learner is None and policy is None:
            raise ValueError("a learner or a fixed policy is required")

        self.config = config
        self.streams = streams
        self.learner = learner
        self.layout = StateLayout(config.network.neighbor_cap)

        initial = policy if policy is not None else learner.actor
        if initial.input_dim != self.layout.dimension or initial.output_dim != 1:
            raise CheckpointError(
                f"policy expects {initial.input_dim} state entries, neighbor_cap "
                f"{self.layout.c} gives {self.layout.dimension}"
            )

        self.board = SnapshotBoard(initial)
        self.replay = ReplayMemory(config.learner.replay_capacity)
        self.monitor = CausalityMonitor()
        self.world = World.create(config.network, streams)
        self.slot = 0
        self.pending: Optional[Tuple[int, np.ndarray, np.ndarray, np.ndarray]] = None
        self._reset_history()

    @classmethod
    def for_training(cls, config: RunConfig, streams: RandomStreams) -> "Simulation":
        state_dim = StateLayout(config.network.neighbor_cap).dimension
        learner = DdpgLearner.from_config(state_dim, config.learner, streams.init)
        return cls(config, streams, learner=learner)

    def _reset_history(self):
        N, c = self.config.network.links, self.config.network.neighbor_cap
        self.prev_log: Optional[SlotLog] = None
        self.prev2_log: Optional[SlotLog] = None
        self.neighbors = NeighborSets.empty(self.slot, N, c)
        self.prev_neighbors = NeighborSets.empty(self.slot, N, c)

    def start_episode(self, episode: int):
        """
        Clears replay and the pending experience. When transmissions were frozen over
        a travel period, the measurement history restarts too.
        """
        self.replay.clear()
        self.pending = None
        timing = self.config.timing
        frozen_travel = timing.travel_slots > 0 and not timing.transmit_during_travel
        if episode > 1 and frozen_travel:
            self._reset_history()
        logger.info(f"Episode {episode} starts at slot {self.slot}")

    def _step_world(self):
        if self.slot > self.world.slot:
            self.world = self.world.advance(self.streams)

    def _transmit(
        self, epsilon: float
    ) -> Tuple[np.ndarray, np.ndarray, SlotLog, NeighborSets]:
        network = self.config.network
        t = self.slot
        gains = self.world.link_gains
        ctx = StateContext(
            t,
            gains,
            self.prev_log,
            self.prev2_log,
            self.neighbors,
            self.prev_neighbors,
            network.noise_w,
            network.virtual_rate,
        )
        states, raw = build_states(ctx, self.layout, network.pmax_w)
        if self.config.output.debug_states and logger.isEnabledFor(logging.DEBUG):
            for n in range(len(raw)):
                labeled = ", ".join(
                    f"{name}={value:.4g}"
                    for name, value in zip(self.layout.names, raw[n])
                )
                logger.debug(f"slot {t} agent {n}: {labeled}")

        snapshot = self.board.current(t)
        self.monitor.check_snapshot(snapshot, t)
        actions = act(snapshot.params, states, epsilon, self.streams.exploration)

        powers = action_to_power(
            actions,
            network.pmax_w,
            self.config.learner.power_map,
            self.config.learner.power_range_db,
        )
        log = SlotLog(t, gains, powers, self.world.association.serving, network.noise_w)
        next_neighbors = compute_neighbor_sets(
            log,
            network.neighbor_threshold,
            network.neighbor_cap,
            previous=self.neighbors,
        )
        return states, actions, log, next_neighbors

    def _remember(self, log: SlotLog, next_neighbors: NeighborSets):
        self.prev2_log = self.prev_log
        self.prev_log = log
        self.prev_neighbors = self.neighbors
        self.neighbors = next_neighbors
        self.slot += 1

    def _ship(self, states: np.ndarray) -> List[Experience]:
        if self.pending is None:
            return []
        slot, previous_states, actions, slot_rewards = self.pending
        experiences = [
            Experience(
                n, slot, previous_states[n], actions[n], slot_rewards[n], states[n]
            )
            for n in range(len(states))
        ]
        for experience in experiences:
            self.replay.push(experience)
        return experiences

    def _train(self) -> Optional[Tuple[float, float]]:
        if len(self.replay) < self.learner.batch_size:
            return None
        minibatch = self.replay.sample(self.learner.batch_size, self.streams.replay)
        for experience in minibatch:
            self.monitor.check_experience(experience, self.slot)
        losses = self.learner.train_step(minibatch)
        if not (np.all(np.isfinite(losses)) and self.learner.actor.is_finite()):
            raise NumericError(f"non-finite network parameters after slot {self.slot}")
        return losses

    def run_slot(self, mode: RunMode, epsilon: float = 0.0) -> SlotOutcome:
        if mode == RunMode.TRAIN and self.learner is None:
            raise ValueError("train mode needs a learner")
        if mode == RunMode.EVAL:
            epsilon = 0.0

        t = self.slot
        self._step_world()
        states, actions, log, next_neighbors = self._transmit(epsilon)
        slot_rewards = rewards(log, next_neighbors)

        shipped, losses = [], None
        if mode == RunMode.TRAIN:
            shipped = self._ship(states)
            losses = self._train()
            timing = self.config.timing
            if t % timing.broadcast_period == 0:
                self.board.issue(self.learner.actor, t, timing.broadcast_delay)
            self.pending = (t, states, actions, slot_rewards)

        self._remember(log, next_neighbors)
        return SlotOutcome(log, slot_rewards, actions, epsilon, shipped, losses)

    def travel_slot(self) -> Optional[SlotLog]:
        """
        Devices move and channels evolve; nothing is scored, stored or trained. Agents
        transmit greedily with their current snapshot only when enabled.
        """
        self._step_world()
        if not self.config.timing.transmit_during_travel:
            self.slot += 1
            return None
        _, _, log, next_neighbors = self._transmit(0.0)
        self._remember(log, next_neighbors)
        return log


class TrainingResult:
    metrics: RunMetrics
    learner: DdpgLearner
    policies: List[MlpParams]
    checkpoints: List[Path]
    monitor: CausalityMonitor

    def __init__(
        self,
        metrics: RunMetrics,
        learner: DdpgLearner,
        policies: List[MlpParams],
        checkpoints: List[Path],
        monitor: CausalityMonitor,
        handovers: int = 0,
    ):
        self.metrics = metrics
        self.learner = learner
        self.policies = policies
        self.checkpoints = checkpoints
        self.monitor = monitor
        self.handovers = handovers

    def summary(self) -> Dict:
        summary = self.metrics.summary()
        summary["causality"] = self.monitor.as_dict()
        summary["gradient_steps"] = self.learner.steps
        summary["handovers"] = self.handovers
        summary["checkpoints"] = [p.name for p in self.checkpoints]
        return summary


def _trace(metrics: RunMetrics, world: World, every: int):
    if world.slot % every == 0:
        metrics.record_positions(
            world.slot, world.devices.positions, world.association.serving
        )


def run_episode_schedule(
    config: RunConfig,
    streams: Optional[RandomStreams] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> TrainingResult:
    """
    E episodes of T_train training slots followed by T_travel travel slots. The actor
    is checkpointed to `policy_ep{e}.ckpt` after each training phase.
    """
    streams = streams or RandomStreams(config.seed)
    timing, output = config.timing, config.output
    out_dir = Path(out_dir) if out_dir is not None else None

    metrics = RunMetrics(
        out_dir / "metrics.csv" if out_dir else None,
        out_dir / "trace.csv" if out_dir else None,
        output.moving_average,
    )
    sim = Simulation.for_training(config, streams)
    policies, checkpoints = [], []

    with metrics:
        for episode in range(1, timing.episodes + 1):
            sim.start_episode(episode)
            metrics.mark_episode(episode, sim.slot)

            for step in range(timing.train_slots):
                epsilon = epsilon_schedule(
                    step,
                    timing.train_slots,
                    config.learner.epsilon_start,
                    config.learner.epsilon_end,
                )
                outcome = sim.run_slot(RunMode.TRAIN, epsilon)
                metrics.record_slot(outcome.log, outcome.rewards, epsilon, episode)
                _trace(metrics, sim.world, output.trace_every)

            policies.append(sim.learner.actor.copy())
            if out_dir is not None:
                path = out_dir / f"policy_ep{episode}.ckpt"
                checkpoint_save(
                    sim.learner.actor,
                    path,
                    {
                        "episode": episode,
                        "slot": sim.slot,
                        "seed": config.seed,
                        "neighbor_cap": config.network.neighbor_cap,
                        "gradient_steps": sim.learner.steps,
                    },
                )
                checkpoints.append(path)
                logger.info(
                    f"Saved {path.name} after {sim.learner.steps} gradient steps"
                )

            mean = metrics.mean_rate_per_link(episode)
            logger.info(f"Episode {episode}: mean rate {mean:.3f} bps/Hz per link")

            for _ in range(timing.travel_slots):
                log = sim.travel_slot()
                if log is not None:
                    metrics.record_slot(log, None, 0.0, episode)
                _trace(metrics, sim.world, output.trace_every)

    if sim.monitor.violations:
        logger.error(f"{sim.monitor.violations} causality violations during training")

    return TrainingResult(
        metrics,
        sim.learner,
        policies,
        checkpoints,
        sim.monitor,
        handovers=sim.world.association.handovers,
    )


def baseline_powers(
    algorithm: Algorithm,
    gains: np.ndarray,
    previous_gains: Optional[np.ndarray],
    config: RunConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, int]:
    """
    Powers and iteration count of one baseline for the current slot. FP-delayed solves
    on the previous slot's gains and uses full power when there is none.
    """
    network, evaluation = config.network, config.evaluation
    if algorithm == Algorithm.FP_DELAYED:
        if previous_gains is None:
            return full_power(len(gains), network.pmax_w), 0
        algorithm, gains = Algorithm.FP, previous_gains

    result = solve(
        algorithm,
        gains,
        network.pmax_w,
        network.noise_w,
        tol=evaluation.tolerance(algorithm),
        max_iter=evaluation.max_iterations,
        rng=rng,
    )
    return result.powers, result.iterations


class EvaluationReport:
    """
    Mean rate per link (bps/Hz) per deployment for the policy and each baseline, all
    on the same channel realizations, plus mean baseline iteration counts.
    """

    algorithms: List[str]
    per_deployment: List[Dict[str, float]]
    iterations: Dict[str, float]
    slots: int

    def __init__(
        self,
        algorithms: List[str],
        per_deployment: List[Dict[str, float]],
        iterations: Dict[str, float],
        slots: int,
        monitor: Optional[CausalityMonitor] = None,
    ):
        self.algorithms = algorithms
        self.per_deployment = per_deployment
        self.iterations = iterations
        self.slots = slots
        self.monitor = monitor

    def mean(self, algorithm: str) -> float:
        return float(np.mean([row[algorithm] for row in self.per_deployment]))

    def table(self) -> List[List]:
        return [
            [d] + [row[name] for name in self.algorithms]
            for d, row in enumerate(self.per_deployment)
        ]

    def as_dict(self) -> Dict:
        return {
            "slots": self.slots,
            "deployments": len(self.per_deployment),
            "mean_rate_per_link": {name: self.mean(name) for name in self.algorithms},
            "per_deployment": self.per_deployment,
            "mean_iterations": self.iterations,
            "causality": self.monitor.as_dict() if self.monitor else None,
        }


def evaluate_policy(
    params: Optional[MlpParams],
    config: RunConfig,
    deployments: Optional[int] = None,
    slots: Optional[int] = None,
    algorithms: Optional[Sequence[Algorithm]] = None,
    metrics: Optional[RunMetrics] = None,
) -> EvaluationReport:
    """
    Greedy rollout of `params` on `deployments` fresh deployments seeded from
    evaluation.seed + d, with every baseline run on the same gains each slot.
    Pass params=None to evaluate only the baselines.
    """
    evaluation, network = config.evaluation, config.network
    deployments = deployments or evaluation.deployments
    slots = slots or evaluation.slots
    algorithms = list(algorithms if algorithms is not None else evaluation.algorithms)

    names = (["policy"] if params is not None else []) + [a.value for a in algorithms]
    per_deployment = []
    iterations = {a.value: [] for a in algorithms}
    monitor = CausalityMonitor()

    for d in range(deployments):
        streams = RandomStreams(evaluation.seed + d)
        totals = {name: 0.0 for name in names}
        previous_gains = None
        sim = Simulation(config, streams, policy=params) if params is not None else None
        world = None if sim else World.create(network, streams)

        for t in range(slots):
            if sim is not None:
                outcome = sim.run_slot(RunMode.EVAL)
                gains = outcome.log.link_gains
                totals["policy"] += outcome.log.sum_rate
                if metrics is not None:
                    metrics.record_slot(outcome.log, outcome.rewards, 0.0, d)
            else:
                world = world.advance(streams) if t > 0 else world
                gains = world.link_gains

            for algorithm in algorithms:
                powers, count = baseline_powers(
                    algorithm, gains, previous_gains, config, streams.baseline
                )
                totals[algorithm.value] += sum_rate_at(gains, powers, network.noise_w)
                iterations[algorithm.value].append(count)
            previous_gains = gains

        if sim is not None:
            monitor.early_snapshots += sim.monitor.early_snapshots
            monitor.snapshot_checks += sim.monitor.snapshot_checks

        row = {name: totals[name] / (slots * network.links) for name in names}
        per_deployment.append(row)
        logger.info(
            f"Deployment {d}: "
            + ", ".join(f"{name}={rate:.3f}" for name, rate in row.items())
        )

    return EvaluationReport(
        names,
        per_deployment,
        {name: float(np.mean(counts)) for name, counts in iterations.items()},
        slots,
        monitor,
    )


class AllocatorRun:
    algorithm: Algorithm
    mean_rate_per_link: float
    iterations: List[int]

    def __init__(
        self, algorithm: Algorithm, mean_rate_per_link: float, iterations: List[int]
    ):
        self.algorithm = algorithm
        self.mean_rate_per_link = mean_rate_per_link
        self.iterations = iterations

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations)) if self.iterations else 0.0

    def as_dict(self) -> Dict:
        return {
            "algorithm": self.algorithm.value,
            "mean_rate_per_link": self.mean_rate_per_link,
            "mean_iterations": self.mean_iterations,
            "max_iterations": max(self.iterations) if self.iterations else 0,
        }


def run_allocator(
    config: RunConfig,
    algorithm: Algorithm,
    deployments: Optional[int] = None,
    slots: Optional[int] = None,
    metrics: Optional[RunMetrics] = None,
) -> AllocatorRun:
    """
    Runs a single baseline over simulated trajectories, transmitting its powers.
    """
    evaluation, network = config.evaluation, config.network
    deployments = deployments or evaluation.deployments
    slots = slots or evaluation.slots

    total, iterations = 0.0, []
    for d in range(deployments):
        streams = RandomStreams(evaluation.seed + d)
        world = World.create(network, streams)
        previous_gains = None
        for t in range(slots):
            if t > 0:
                world = world.advance(streams)
            gains = world.link_gains
            powers, count = baseline_powers(
                algorithm, gains, previous_gains, config, streams.baseline
            )
            log = SlotLog(t, gains, powers, world.association.serving, network.noise_w)
            if metrics is not None:
                metrics.record_slot(log, None, 0.0, d)
            total += log.sum_rate
            iterations.append(count)
            previous_gains = gains

    mean_rate = total / (deployments * slots * network.links)
    return AllocatorRun(algorithm, mean_rate, iterations)
