import logging
from collections import deque
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from mobipower.models import Activation, LearnerConfig
from mobipower.neural import Adam, MlpParams, mlp_backward, mlp_forward

logger = logging.getLogger("mobipower")


class Experience:
    agent: int
    slot: int
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray

    def __init__(
        self,
        agent: int,
        slot: int,
        state: np.ndarray,
        action: float,
        reward: float,
        next_state: np.ndarray,
    ):
        if state.shape != next_state.shape:
            raise ValueError(
                f"state {state.shape} and next_state {next_state.shape} differ"
            )
        if not 0 <= action <= 1:
            raise ValueError(f"action {action} outside [0, 1]")
        self.agent = agent
        self.slot = slot
        self.state = state
        self.action = float(action)
        self.reward = float(reward)
        self.next_state = next_state


class ReplayMemory:
    capacity: int

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self.buffer = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.buffer)

    def push(self, experience: Experience):
        self.buffer.append(experience)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Experience]:
        """
        Uniform sampling with replacement.
        """
        if not self.buffer:
            raise ValueError("cannot sample from an empty replay memory")
        indices = rng.integers(len(self.buffer), size=batch_size)
        return [self.buffer[i] for i in indices]

    def clear(self):
        self.buffer.clear()


def _stack(minibatch: Sequence[Experience]):
    if not minibatch:
        raise ValueError("minibatch is empty")
    states = np.stack([e.state for e in minibatch])
    actions = np.array([e.action for e in minibatch])
    rewards = np.array([e.reward for e in minibatch])
    next_states = np.stack([e.next_state for e in minibatch])
    return states, actions, rewards, next_states


def _critic_input(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.column_stack([states, actions])


def epsilon_schedule(step: int, train_slots: int, start: float, end: float) -> float:
    """
    Multiplicative decay from `start` at the first slot of an episode to `end` at
    its last.
    """
    if train_slots <= 1 or start == 0:
        return start
    fraction = min(step, train_slots - 1) / (train_slots - 1)
    return start * (max(end, 1e-12) / start) ** fraction


def act(
    params: MlpParams,
    states: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> Union[float, np.ndarray]:
    """
    epsilon-greedy actions in [0, 1]: a uniform draw with probability epsilon,
    the actor's output otherwise. Two uniforms are drawn per state whatever epsilon is.
    """
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")

    states = np.asarray(states, dtype=float)
    single = states.ndim == 1
    batch = states[None, :] if single else states

    greedy = mlp_forward(params, batch)[:, 0]
    explore = rng.random(len(batch)) < epsilon
    uniform = rng.random(len(batch))
    actions = np.clip(np.where(explore, uniform, greedy), 0, 1)
    return float(actions[0]) if single else actions


class DdpgLearner:
    """
    Centralized DDPG trainer: one actor shared by every agent, a critic over
    (state, action) and a hard-synced target critic.
    """

    actor: MlpParams
    critic: MlpParams
    critic_target: MlpParams
    actor_target: Optional[MlpParams]
    discount: float
    batch_size: int
    target_sync_period: int
    steps: int

    def __init__(
        self,
        actor: MlpParams,
        critic: MlpParams,
        discount: float = 0.5,
        actor_lr: float = 1e-4,
        critic_lr: float = 1e-3,
        batch_size: int = 128,
        target_sync_period: int = 100,
        target_actor: bool = False,
    ):
        if not 0 < discount <= 1:
            raise ValueError(f"discount must be in (0, 1], got {discount}")
        if critic.input_dim != actor.input_dim + 1:
            raise ValueError("critic input must be the state followed by the action")

        self.actor = actor
        self.critic = critic
        self.critic_target = critic.copy()
        self.actor_target = actor.copy() if target_actor else None
        self.discount = discount
        self.batch_size = batch_size
        self.target_sync_period = target_sync_period
        self.actor_optimizer = Adam(actor_lr)
        self.critic_optimizer = Adam(critic_lr)
        self.steps = 0

    @classmethod
    def from_config(
        cls, state_dim: int, config: LearnerConfig, rng: np.random.Generator
    ) -> "DdpgLearner":
        actor = MlpParams.initialize(
            [state_dim, *config.actor_hidden, 1],
            rng,
            config.activation,
            Activation.SIGMOID,
        )
        critic = MlpParams.initialize(
            [state_dim + 1, *config.critic_hidden, 1],
            rng,
            config.activation,
            Activation.IDENTITY,
        )
        return cls(
            actor,
            critic,
            discount=config.discount,
            actor_lr=config.actor_lr,
            critic_lr=config.critic_lr,
            batch_size=config.batch_size,
            target_sync_period=config.target_sync_period,
            target_actor=config.target_actor,
        )

    @property
    def state_dim(self) -> int:
        return self.actor.input_dim

    def act(
        self,
        states: np.ndarray,
        epsilon: float,
        rng: np.random.Generator,
        params: Optional[MlpParams] = None,
    ) -> Union[float, np.ndarray]:
        """
        `params` defaults to the trainer's actor.
        """
        return act(params or self.actor, states, epsilon, rng)

    def bellman_target(self, rewards, next_states: np.ndarray):
        rewards = np.asarray(rewards, dtype=float)
        next_states = np.asarray(next_states, dtype=float)
        single = next_states.ndim == 1
        batch = next_states[None, :] if single else next_states

        policy = self.actor_target or self.actor
        next_actions = mlp_forward(policy, batch)[:, 0]
        q = mlp_forward(self.critic_target, _critic_input(batch, next_actions))[:, 0]
        y = rewards + self.discount * (q[0] if single else q)
        return float(y) if single else y

    def critic_loss(self, minibatch: Sequence[Experience]) -> float:
        states, actions, rewards, next_states = _stack(minibatch)
        y = self.bellman_target(rewards, next_states)
        q = mlp_forward(self.critic, _critic_input(states, actions))[:, 0]
        return float(np.mean((y - q) ** 2))

    def critic_gradients(
        self, minibatch: Sequence[Experience]
    ) -> Tuple[float, List[np.ndarray]]:
        states, actions, rewards, next_states = _stack(minibatch)
        y = self.bellman_target(rewards, next_states)
        inputs = _critic_input(states, actions)
        q = mlp_forward(self.critic, inputs)[:, 0]
        error = y - q
        upstream = (-2 * error / len(minibatch))[:, None]
        gradients, _ = mlp_backward(self.critic, inputs, upstream)
        return float(np.mean(error**2)), gradients

    def critic_step(self, minibatch: Sequence[Experience]) -> float:
        """
        One descent step on the mean-squared Bellman error; targets are constants.
        Returns the pre-step loss.
        """
        loss, gradients = self.critic_gradients(minibatch)
        self.critic_optimizer.step(self.critic.parameters(), gradients)
        return loss

    def actor_objective(self, minibatch: Sequence[Experience]) -> float:
        states = _stack(minibatch)[0]
        actions = mlp_forward(self.actor, states)[:, 0]
        return float(np.mean(mlp_forward(self.critic, _critic_input(states, actions))))

    def actor_gradients(
        self, minibatch: Sequence[Experience]
    ) -> Tuple[float, List[np.ndarray]]:
        """
        Gradient of mean Q(s, mu(s)) with respect to the actor, chained through the
        critic's action input.
        """
        states = _stack(minibatch)[0]
        actions = mlp_forward(self.actor, states)[:, 0]
        inputs = _critic_input(states, actions)
        q = mlp_forward(self.critic, inputs)[:, 0]

        upstream = np.full((len(minibatch), 1), 1 / len(minibatch))
        _, input_gradient = mlp_backward(self.critic, inputs, upstream)
        gradients, _ = mlp_backward(self.actor, states, input_gradient[:, -1:])
        return float(np.mean(q)), gradients

    def actor_step(self, minibatch: Sequence[Experience]) -> float:
        """
        One ascent step on mean Q(s, mu(s)) with the critic frozen. Returns the
        pre-step objective.
        """
        objective, gradients = self.actor_gradients(minibatch)
        self.actor_optimizer.step(self.actor.parameters(), [-g for g in gradients])
        return objective

    def sync_target(self):
        self.critic_target.assign(self.critic)
        if self.actor_target is not None:
            self.actor_target.assign(self.actor)

    def train_step(self, minibatch: Sequence[Experience]) -> Tuple[float, float]:
        loss = self.critic_step(minibatch)
        objective = self.actor_step(minibatch)
        self.steps += 1
        if self.steps % self.target_sync_period == 0:
            self.sync_target()
            logger.debug(f"Target critic synced at gradient step {self.steps}")
        return loss, objective
