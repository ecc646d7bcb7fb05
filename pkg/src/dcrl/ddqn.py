"""Double DQN in plain numpy.

The Q-network is a small ReLU MLP trained by minibatch SGD on the squared
TD error of the taken action. Targets use double-DQN decoupling: the online
network picks the next action, the target network scores it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Protocol

import numpy as np

from .rng import Stream

CHECKPOINT_FORMAT = "dcrl-qnetwork"
CHECKPOINT_VERSION = 1


class QNetwork:
    """Fully connected net, ReLU on hidden layers, identity output."""

    def __init__(self, sizes, rng: Stream | None = None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                W, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
            else:
                bound = 1.0 / math.sqrt(fan_in)
                W = (2.0 * rng.uniforms(fan_in * fan_out) - 1.0).reshape(fan_in, fan_out) * bound
                b = (2.0 * rng.uniforms(fan_out) - 1.0) * bound
            self.weights.append(W)
            self.biases.append(b)

    @property
    def n_actions(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.atleast_2d(x))[0]

    def _forward(self, x: np.ndarray):
        acts = [x]
        pre = []
        a = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            pre.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            acts.append(a)
        return a, acts, pre

    def loss_and_gradients(self, states, actions, targets):
        """Mean squared TD error on the taken actions and its exact gradient."""
        states = np.atleast_2d(states)
        actions = np.asarray(actions, dtype=np.intp)
        targets = np.asarray(targets, dtype=np.float64)
        n = states.shape[0]
        q, acts, pre = self._forward(states)
        rows = np.arange(n)
        err = q[rows, actions] - targets
        loss = float(np.mean(err * err))
        delta = np.zeros_like(q)
        delta[rows, actions] = 2.0 * err / n
        grads_W = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_W[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre[i - 1] > 0.0)
        return loss, grads_W, grads_b

    def sgd(self, grads_W, grads_b, lr: float) -> None:
        for W, b, gW, gb in zip(self.weights, self.biases, grads_W, grads_b):
            W -= lr * gW
            b -= lr * gb

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def copy(self) -> "QNetwork":
        other = QNetwork(self.sizes)
        other.load_from(self)
        return other

    def load_from(self, other: "QNetwork") -> None:
        if other.sizes != self.sizes:
            raise ValueError(f"shape mismatch {other.sizes} vs {self.sizes}")
        self.weights = [W.copy() for W in other.weights]
        self.biases = [b.copy() for b in other.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        expected = sum(p.size for p in self.parameters())
        if values.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {values.shape}")
        offset = 0
        for p in self.parameters():
            p[...] = values[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": list(self.sizes),
            "params": [float(v) for v in self.flat()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QNetwork":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a Q-network checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        net = cls(data["sizes"])
        net.set_flat(data["params"])
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "QNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(net: QNetwork, state) -> np.ndarray:
    return net(np.asarray(state, dtype=np.float64))[0]


def select_action(net: QNetwork, state, epsilon: float, rng: Stream) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0,1]")
    if rng.uniform() >= epsilon:
        return int(np.argmax(forward(net, state)))
    return rng.integer(net.n_actions)


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """FIFO ring of (s, a, r, s', done) transitions."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.intp)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a: int, r: float, s_next, done: bool) -> None:
        i = self._next
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.dones[i] = done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: Stream) -> Batch:
        idx = np.array(rng.sample_without_replacement(self.size, batch_size), dtype=np.intp)
        return self.take(idx)

    def take(self, idx) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])


@dataclass(frozen=True)
class DdqnHyper:
    gamma: float = 0.9
    learning_rate: float = 1e-3
    batch_size: int = 32
    sync_period: int = 100
    epsilon: float = 0.3
    buffer_capacity: int = 10000
    hidden: tuple[int, ...] = (64, 64)
    # state normalisation
    bandwidth_scale: float = 10.0
    max_objects: int = 12
    p_scale: float = 20.0

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0,1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.sync_period < 1:
            raise ValueError("sync_period must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0,1]")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be >= batch_size")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden layer sizes must be >= 1")
        if not (self.bandwidth_scale > 0 and self.max_objects >= 1 and self.p_scale > 0):
            raise ValueError("normalisation constants must be positive")


def normalize_state(h: float, b: float, c: int, p: int, hyper: DdqnHyper) -> np.ndarray:
    return np.array([h, b / hyper.bandwidth_scale, c / hyper.max_objects,
                     min(p / hyper.p_scale, 1.0)])


def td_targets(batch: Batch, net: QNetwork, target_net: QNetwork, gamma: float) -> np.ndarray:
    """r + gamma * Q'(s', argmax_a Q(s', a)); just r for terminal transitions."""
    chosen = np.argmax(net(batch.next_states), axis=1)
    evaluated = target_net(batch.next_states)[np.arange(len(chosen)), chosen]
    return batch.rewards + gamma * np.where(batch.dones, 0.0, evaluated)


def train_step(net: QNetwork, target_net: QNetwork, buffer: ReplayBuffer,
               hyper: DdqnHyper, rng: Stream) -> float | None:
    """One SGD update on a uniform minibatch.

    Returns the pre-update batch loss, or None when the buffer holds fewer
    than ``batch_size`` transitions (nothing is sampled in that case).
    """
    if len(buffer) < hyper.batch_size:
        return None
    batch = buffer.sample(hyper.batch_size, rng)
    y = td_targets(batch, net, target_net, hyper.gamma)
    loss, gW, gb = net.loss_and_gradients(batch.states, batch.actions, y)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite DDQN loss")
    net.sgd(gW, gb, hyper.learning_rate)
    if not net.is_finite():
        raise FloatingPointError("non-finite Q-network parameters after update")
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    target_net.load_from(net)


class Learner:
    """Online/target pair, replay buffer and step counter for one agent."""

    def __init__(self, state_dim: int, n_actions: int, hyper: DdqnHyper, rng: Stream):
        hyper.validate()
        self.hyper = hyper
        self.rng = rng
        self.net = QNetwork((state_dim, *hyper.hidden, n_actions), rng.spawn("init"))
        self.target = self.net.copy()
        self.buffer = ReplayBuffer(hyper.buffer_capacity, state_dim)
        self.steps = 0
        self._sample_rng = rng.spawn("replay")
        self._explore_rng = rng.spawn("explore")

    def act(self, state, epsilon: float | None = None) -> int:
        eps = self.hyper.epsilon if epsilon is None else epsilon
        return select_action(self.net, state, eps, self._explore_rng)

    def observe(self, s, a: int, r: float, s_next, done: bool) -> float | None:
        """Store a transition, train once, and sync the target every C steps."""
        self.buffer.add(s, a, r, s_next, done)
        loss = train_step(self.net, self.target, self.buffer, self.hyper, self._sample_rng)
        self.steps += 1
        if self.steps % self.hyper.sync_period == 0:
            sync_target(self.net, self.target)
        return loss


class EpisodicEnv(Protocol):
    state_dim: int
    n_actions: int

    def reset(self) -> np.ndarray: ...

    def step(self, action: int) -> tuple[np.ndarray, float, bool]: ...


def run_algorithm1(env: EpisodicEnv, hyper: DdqnHyper, loop: int, seed: int):
    """Train a DDQN for ``loop`` episodes of ``env``.

    Returns ``(net, episode_rewards)``.
    """
    if loop < 0:
        raise ValueError("loop must be >= 0")
    learner = Learner(env.state_dim, env.n_actions, hyper, Stream(seed))
    log: list[float] = []
    for _ in range(loop):
        s = env.reset()
        total, done = 0.0, False
        while not done:
            a = learner.act(s)
            s_next, r, done = env.step(a)
            learner.observe(s, a, r, s_next, done)
            total += r
            s = s_next
        log.append(total)
    return learner.net, log
