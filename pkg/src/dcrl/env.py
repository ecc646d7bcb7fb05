"""Frame-level latency, accuracy, success and reward model.

One slot = one frame. Locally tracked frames pay only the tracker's compute;
offloaded frames pay pre-detection, optional ROI extraction, uplink
transmission and edge inference. A frame that misses the slot deadline is
abandoned and contributes zero accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .scene_trace import BandwidthTrace, SceneSlot

MODELS = ("Yolov5x", "Yolov5l", "Yolov5m")
RESOLUTIONS = ("640p", "480p", "320p")
TRACKERS = ("Skip", "KCF", "CSRT")

# DDQN action indices
SKIP, KCF, CSRT, OFFLOAD_FULL, OFFLOAD_ROI = range(5)
ACTION_NAMES = ("Skip", "KCF", "CSRT", "Offload-Full", "Offload-ROI")
N_ACTIONS = len(ACTION_NAMES)

RESOLUTION_PIXELS = {"640p": 307200, "480p": 172800, "320p": 76800}


@dataclass(frozen=True)
class BlockConfig:
    model: str
    resolution: str

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.resolution not in RESOLUTIONS:
            raise ValueError(f"unknown resolution {self.resolution!r}")

    @property
    def index(self) -> int:
        return MODELS.index(self.model) * len(RESOLUTIONS) + RESOLUTIONS.index(self.resolution)


# (x,640), (x,480), (x,320), (l,640), ... ; order fixes bandit tie-breaking
CONFIGS = tuple(BlockConfig(m, r) for m in MODELS for r in RESOLUTIONS)
BEST_CONFIG = CONFIGS[0]


def _table(values: dict[str, tuple[float, float, float]]) -> dict[tuple[str, str], float]:
    return {(m, r): values[m][j] for m in MODELS for j, r in enumerate(RESOLUTIONS)}


def default_u_infer() -> dict[tuple[str, str], float]:
    return _table({"Yolov5x": (0.100, 0.093, 0.087),
                   "Yolov5l": (0.067, 0.063, 0.060),
                   "Yolov5m": (0.040, 0.037, 0.033)})


def default_acc_detect() -> dict[tuple[str, str], float]:
    return _table({"Yolov5x": (0.90, 0.85, 0.78),
                   "Yolov5l": (0.86, 0.81, 0.74),
                   "Yolov5m": (0.82, 0.77, 0.70)})


@dataclass(frozen=True)
class SystemParams:
    f_device: float = 1.0
    f_edge: float = 2.0
    u_track: dict = field(default_factory=lambda: {"Skip": 0.0, "KCF": 0.02, "CSRT": 0.10})
    u_roi: float = 0.02
    u_dnn: float = 0.01
    u_infer: dict = field(default_factory=default_u_infer)
    tau: float = 6.25e-4
    data_scale: float = 0.03125
    l_max: float = 1.0
    acc_detect: dict = field(default_factory=default_acc_detect)
    acc_track_base: dict = field(default_factory=lambda: {"KCF": 0.68, "CSRT": 0.78})
    track_decay: float = 0.97
    skip_exponent: float = 2.0
    roi_penalty: float = 0.95
    acc_threshold: float = 0.5
    lam: float = 1.0
    eta: float = 1.0

    def validate(self) -> None:
        def positive(name):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

        for name in ("f_device", "f_edge", "tau", "data_scale", "l_max", "skip_exponent", "eta"):
            positive(name)
        for name in ("u_roi", "u_dnn", "lam"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if set(self.u_track) != set(TRACKERS) or any(v < 0 for v in self.u_track.values()):
            raise ValueError("u_track needs non-negative entries for Skip, KCF, CSRT")
        if self.u_track["Skip"] != 0:
            raise ValueError("u_track[Skip] must be 0")
        keys = {(m, r) for m in MODELS for r in RESOLUTIONS}
        if set(self.u_infer) != keys or any(not v > 0 for v in self.u_infer.values()):
            raise ValueError("u_infer needs a positive entry per (model, resolution)")
        if set(self.acc_detect) != keys or any(not 0 < v <= 1 for v in self.acc_detect.values()):
            raise ValueError("acc_detect entries must be in (0,1]")
        if set(self.acc_track_base) != {"KCF", "CSRT"} or any(
                not 0 < v <= 1 for v in self.acc_track_base.values()):
            raise ValueError("acc_track_base entries must be in (0,1]")
        if not 0 < self.track_decay <= 1:
            raise ValueError("track_decay must be in (0,1]")
        if not 0 < self.roi_penalty <= 1:
            raise ValueError("roi_penalty must be in (0,1]")
        if not 0 <= self.acc_threshold < 1:
            raise ValueError("acc_threshold must be in [0,1)")

    def raw_frame_size(self, slot: SceneSlot) -> float:
        """Native-resolution frame size in MB, used by on-device stages."""
        return self.data_scale * self.tau * slot.full_frame_pixels

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class Decision:
    """One slot's decision.

    ``offload=False`` uses ``tracking_mode``; ``offload=True`` uses ``roi`` and
    one BlockConfig per transmitted block (a single one for the full frame).
    """

    offload: bool
    roi: bool = False
    tracking_mode: str | None = None
    block_configs: tuple[BlockConfig, ...] = ()

    def __post_init__(self):
        if self.offload:
            if self.tracking_mode is not None:
                raise ValueError("an offloaded frame has no tracking mode")
            if not self.block_configs:
                raise ValueError("an offloaded frame needs block configs")
            if not self.roi and len(self.block_configs) != 1:
                raise ValueError("a full-frame offload takes exactly one config")
        else:
            if self.tracking_mode not in TRACKERS:
                raise ValueError(f"tracking mode must be one of {TRACKERS}")
            if self.roi or self.block_configs:
                raise ValueError("a locally tracked frame has no ROI flag or configs")

    @property
    def action(self) -> int:
        if not self.offload:
            return TRACKERS.index(self.tracking_mode)
        return OFFLOAD_ROI if self.roi else OFFLOAD_FULL

    @classmethod
    def track(cls, mode: str) -> "Decision":
        return cls(offload=False, tracking_mode=mode)

    @classmethod
    def full(cls, config: BlockConfig = BEST_CONFIG) -> "Decision":
        return cls(offload=True, roi=False, block_configs=(config,))

    @classmethod
    def roi_blocks(cls, configs) -> "Decision":
        return cls(offload=True, roi=True, block_configs=tuple(configs))


@dataclass(frozen=True)
class ObservationState:
    h: float
    b: float
    c: int
    p: int


@dataclass(frozen=True)
class Latency:
    l_roi: float
    l_dnn: float
    l_trans: float
    l_edge: float
    l_local: float
    l_total: float
    d_t: float


@dataclass(frozen=True)
class StepOutcome:
    l_roi: float
    l_dnn: float
    l_trans: float
    l_edge: float
    l_local: float
    l_total: float
    acc: float
    q: bool
    reward: float
    d_t: float
    action: int
    block_count: int

    def recombined_latency(self) -> float:
        """Completion time rebuilt from the stored components."""
        if self.action < OFFLOAD_FULL:
            return self.l_local
        beta = 1.0 if self.action == OFFLOAD_ROI else 0.0
        return beta * self.l_roi + self.l_dnn + self.l_trans + self.l_edge


def block_payloads(resolutions, params: SystemParams, fractions=None) -> list[float]:
    """Per-block payload in MB. ``fractions=None`` means the whole frame."""
    resolutions = list(resolutions)
    scale = params.data_scale * params.tau
    if fractions is None:
        if len(resolutions) != 1:
            raise ValueError("a full frame takes exactly one resolution")
        return [scale * RESOLUTION_PIXELS[resolutions[0]]]
    fractions = list(fractions)
    if len(fractions) != len(resolutions):
        raise ValueError(f"{len(fractions)} blocks but {len(resolutions)} resolutions")
    return [scale * f * RESOLUTION_PIXELS[r] for f, r in zip(fractions, resolutions)]


def offload_data_size(resolutions, params: SystemParams, fractions=None) -> float:
    """Total offloaded payload d_t in MB."""
    return math.fsum(block_payloads(resolutions, params, fractions))


def total_latency(decision: Decision, slot: SceneSlot, b: float, params: SystemParams) -> Latency:
    if not b > 0:
        raise ValueError("bandwidth must be > 0")
    d_raw = params.raw_frame_size(slot)
    if not decision.offload:
        l_local = params.u_track[decision.tracking_mode] * d_raw / params.f_device
        return Latency(0.0, 0.0, 0.0, 0.0, l_local, l_local, 0.0)
    configs = decision.block_configs
    if decision.roi:
        if len(configs) != slot.block_count:
            raise ValueError(f"slot has {slot.block_count} blocks, got {len(configs)} configs")
        payloads = block_payloads([c.resolution for c in configs], params,
                                  [blk.pixel_fraction for blk in slot.blocks])
        l_roi = params.u_roi * d_raw / params.f_device
    else:
        payloads = block_payloads([configs[0].resolution], params)
        l_roi = 0.0
    d_t = math.fsum(payloads)
    l_dnn = params.u_dnn * d_raw / params.f_device
    l_trans = d_t / b
    l_edge = math.fsum(params.u_infer[(c.model, c.resolution)] * d
                       for c, d in zip(configs, payloads)) / params.f_edge
    return Latency(l_roi, l_dnn, l_trans, l_edge, 0.0, l_roi + l_dnn + l_trans + l_edge, d_t)


def frame_accuracy(decision: Decision, slot: SceneSlot, obs: ObservationState,
                   params: SystemParams) -> float:
    """Accuracy of the frame's result, before any deadline check."""
    if decision.offload:
        mean = math.fsum(params.acc_detect[(c.model, c.resolution)]
                         for c in decision.block_configs) / len(decision.block_configs)
        return (params.roi_penalty if decision.roi else 1.0) * mean
    staleness = params.track_decay ** (obs.p + 1)
    if decision.tracking_mode == "Skip":
        return (slot.h ** params.skip_exponent) * staleness
    return params.acc_track_base[decision.tracking_mode] * staleness


def success_flag(l_total: float, acc: float, params: SystemParams) -> bool:
    return l_total <= params.l_max and acc >= params.acc_threshold


def slot_reward(acc: float, l_total: float, params: SystemParams) -> float:
    """acc + lam * max(slack, 0); an abandoned frame earns no accuracy."""
    if l_total > params.l_max:
        acc = 0.0
    return acc + params.lam * max((params.l_max - l_total) / params.l_max, 0.0)


def step(slot: SceneSlot, b: float, obs: ObservationState, decision: Decision,
         params: SystemParams) -> tuple[StepOutcome, int, int]:
    """Run one slot. Returns the outcome and the next (c, p)."""
    lat = total_latency(decision, slot, b, params)
    acc = frame_accuracy(decision, slot, obs, params)
    if lat.l_total > params.l_max:
        acc = 0.0
    acc = min(max(acc, 0.0), 1.0)
    q = success_flag(lat.l_total, acc, params)
    reward = slot_reward(acc, lat.l_total, params)
    outcome = StepOutcome(
        l_roi=lat.l_roi, l_dnn=lat.l_dnn, l_trans=lat.l_trans, l_edge=lat.l_edge,
        l_local=lat.l_local, l_total=lat.l_total, acc=acc, q=q, reward=reward,
        d_t=lat.d_t, action=decision.action,
        block_count=len(decision.block_configs) if decision.offload else 0,
    )
    if decision.offload and q:
        return outcome, slot.true_object_count, 0
    return outcome, obs.c, obs.p + 1


def episode_utility(outcomes, eta: float) -> float:
    """Processing rate plus eta times mean accuracy of successful frames."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("episode_utility needs at least one outcome")
    successes = sum(1 for o in outcomes if o.q)
    rate = successes / len(outcomes)
    if successes == 0:
        return rate
    return rate + eta * math.fsum(o.acc for o in outcomes if o.q) / successes


class VideoEnv:
    """Sequential environment over a (scene, bandwidth) pair.

    ``reset`` performs the forced full-frame offload of the first slot, which
    seeds the tracker state; stepping starts at slot 1.
    """

    def __init__(self, scene: list[SceneSlot], bandwidth: BandwidthTrace, params: SystemParams):
        if len(scene) != len(bandwidth):
            raise ValueError("scene and bandwidth lengths differ")
        if len(scene) < 2:
            raise ValueError("an episode needs at least two slots")
        self.scene = scene
        self.bandwidth = bandwidth.samples
        self.params = params
        self.t = 0
        self.c = 0
        self.p = 0

    def reset(self) -> ObservationState:
        self.t = 1
        self.c = self.scene[0].true_object_count
        self.p = 0
        return self.observe()

    def observe(self) -> ObservationState:
        return ObservationState(self.scene[self.t].h, self.bandwidth[self.t], self.c, self.p)

    @property
    def slot(self) -> SceneSlot:
        return self.scene[self.t]

    @property
    def b(self) -> float:
        return self.bandwidth[self.t]

    @property
    def done(self) -> bool:
        return self.t >= len(self.scene)

    def step(self, decision: Decision) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        obs = ObservationState(self.slot.h, self.b, self.c, self.p)
        outcome, self.c, self.p = step(self.slot, self.b, obs, decision, self.params)
        self.t += 1
        return outcome
