"""Contextual epsilon-greedy bandits for per-block configuration choice.

Four independent bandits, one per context (high/low information density x
high/low bandwidth, each relative to an exponential moving average), each
over the nine (model, resolution) configurations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import CONFIGS, BlockConfig, Decision, ObservationState, SystemParams, step
from .rng import Stream
from .scene_trace import BandwidthTrace, SceneSlot

CONTEXTS = ("HI-HB", "LI-HB", "HI-LB", "LI-LB")
N_CONFIGS = len(CONFIGS)
CHECKPOINT_FORMAT = "dcrl-cmab"
CHECKPOINT_VERSION = 1


@dataclass
class CmabState:
    xi1: float = 0.05
    xi2: float = 0.05
    phi: float = 0.1
    epsilon: float = 0.3
    avg_density: float = 3.0
    avg_bandwidth: float = 10.0
    Q: np.ndarray = field(default_factory=lambda: np.zeros((len(CONTEXTS), N_CONFIGS)))
    counts: np.ndarray = field(
        default_factory=lambda: np.zeros((len(CONTEXTS), N_CONFIGS), dtype=np.int64))

    def __post_init__(self):
        self.Q = np.array(self.Q, dtype=np.float64)
        self.counts = np.array(self.counts, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        for name in ("xi1", "xi2", "epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0,1]")
        if not 0.0 < self.phi <= 1.0:
            raise ValueError("phi must be in (0,1]")
        if self.avg_density < 0:
            raise ValueError("avg_density must be >= 0")
        if not self.avg_bandwidth > 0:
            raise ValueError("avg_bandwidth must be > 0")
        if self.Q.shape != (len(CONTEXTS), N_CONFIGS) or self.counts.shape != self.Q.shape:
            raise ValueError("Q and counts must be 4x9")
        if np.any(self.counts < 0):
            raise ValueError("pull counts must be >= 0")

    def copy(self) -> "CmabState":
        return CmabState(self.xi1, self.xi2, self.phi, self.epsilon, self.avg_density,
                         self.avg_bandwidth, self.Q.copy(), self.counts.copy())

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "xi1": self.xi1, "xi2": self.xi2, "phi": self.phi, "epsilon": self.epsilon,
            "avg_density": self.avg_density, "avg_bandwidth": self.avg_bandwidth,
            "Q": self.Q.tolist(), "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CmabState":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a CMAB checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        keys = ("xi1", "xi2", "phi", "epsilon", "avg_density", "avg_bandwidth", "Q", "counts")
        return cls(**{k: data[k] for k in keys})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "CmabState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def classify_context(n: float, b: float, state: CmabState) -> int:
    """Index into CONTEXTS; ties with the averages count as low."""
    high_i = n > state.avg_density
    high_b = b > state.avg_bandwidth
    if high_b:
        return 0 if high_i else 1
    return 2 if high_i else 3


def update_averages(n: float | None, b: float | None, state: CmabState) -> None:
    """EMA step for the density average (if ``n``) and bandwidth average (if ``b``)."""
    if n is not None:
        state.avg_density = state.xi1 * n + (1.0 - state.xi1) * state.avg_density
    if b is not None:
        state.avg_bandwidth = state.xi2 * b + (1.0 - state.xi2) * state.avg_bandwidth


def select_config(context: int, state: CmabState, rng: Stream,
                  epsilon: float | None = None) -> BlockConfig:
    eps = state.epsilon if epsilon is None else epsilon
    if rng.uniform() >= eps:
        return CONFIGS[int(np.argmax(state.Q[context]))]
    return CONFIGS[rng.integer(N_CONFIGS)]


def update_estimate(context: int, config: BlockConfig, reward: float, state: CmabState) -> None:
    # Every other (e, g) cell sees a masked reward of 0 and is left untouched.
    g = config.index
    state.Q[context, g] += state.phi * (reward - state.Q[context, g])
    state.counts[context, g] += 1


def choose_block_configs(densities, b: float, state: CmabState, rng: Stream,
                         epsilon: float | None = None):
    """Contexts and configs for each block of one offloaded frame."""
    contexts = [classify_context(n, b, state) for n in densities]
    return contexts, [select_config(e, state, rng, epsilon) for e in contexts]


def learn_from_slot(contexts, configs, densities, b: float, reward: float,
                    state: CmabState) -> None:
    """Credit the slot reward to each played (context, config), then move the averages."""
    for e, g in zip(contexts, configs):
        update_estimate(e, g, reward, state)
    for n in densities:
        update_averages(n, None, state)
    update_averages(None, b, state)


def pretrain(scene: list[SceneSlot], bandwidth: BandwidthTrace, params: SystemParams,
             slots: int, seed: int, state: CmabState | None = None) -> CmabState:
    """Offload every frame as ROI blocks for ``slots`` slots, learning configs.

    The trace is cycled if ``slots`` exceeds its length.
    """
    if slots < 1:
        raise ValueError("pretrain needs slots >= 1")
    if len(scene) != len(bandwidth):
        raise ValueError("scene and bandwidth lengths differ")
    state = CmabState(avg_bandwidth=bandwidth.rho) if state is None else state.copy()
    rng = Stream(seed)
    obs = ObservationState(0.0, 0.0, 0, 0)
    for t in range(slots):
        slot = scene[t % len(scene)]
        b = bandwidth.samples[t % len(scene)]
        densities = [blk.density for blk in slot.blocks]
        contexts, configs = choose_block_configs(densities, b, state, rng)
        outcome, _, _ = step(slot, b, obs, Decision.roi_blocks(configs), params)
        learn_from_slot(contexts, configs, densities, b, outcome.reward, state)
    return state
