"""Joint DDQN/CMAB training, baseline policies, evaluation and comparison.

A policy is an (offloading rule, configuration rule) pair:

======  ==========  ==============
name    offloading  configurations
======  ==========  ==============
DCRL    DDQN        CMAB
R-R     random      random
R-C     random      CMAB
D-R     DDQN        random
F-B     full frame  (Yolov5x, 640p)
======  ==========  ==============

Every pass over a trace starts with a forced full-frame offload of slot 0 to
seed the tracker; that slot is excluded from logs and metrics.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .cmab import CmabState, choose_block_configs, learn_from_slot, pretrain
from .ddqn import DdqnHyper, Learner, normalize_state
from .env import (ACTION_NAMES, BEST_CONFIG, CONFIGS, N_ACTIONS, OFFLOAD_FULL,
                  OFFLOAD_ROI, TRACKERS, Decision, ObservationState, StepOutcome,
                  SystemParams, episode_utility, step)
from .rng import Stream, derive_seed
from .scene_trace import BandwidthTrace, SceneSlot, generate_bandwidth_trace

POLICY_NAMES = ("DCRL", "R-R", "R-C", "D-R", "F-B")
BASELINE_NAMES = POLICY_NAMES[1:]
_RULES = {
    "DCRL": ("ddqn", "cmab"),
    "R-R": ("random", "random"),
    "R-C": ("random", "cmab"),
    "D-R": ("ddqn", "random"),
    "F-B": ("full", "best"),
}
STATE_DIM = 4


class TrainingError(RuntimeError):
    pass


@dataclass
class Policy:
    name: str
    offloading: str
    configuring: str
    learner: Learner | None = None
    cmab: CmabState | None = None

    @property
    def trainable(self) -> bool:
        return self.offloading == "ddqn" or self.configuring == "cmab"


def make_policy(name: str) -> Policy:
    if name not in _RULES:
        raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}")
    offloading, configuring = _RULES[name]
    return Policy(name, offloading, configuring)


def make_baseline(name: str) -> Policy:
    if name not in BASELINE_NAMES:
        raise ValueError(f"unknown baseline {name!r}; expected one of {', '.join(BASELINE_NAMES)}")
    return make_policy(name)


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    action: int
    s_count: int
    d_t: float
    l_total: float
    acc: float
    q: bool
    reward: float


@dataclass
class EpisodeMetrics:
    cumulative_reward: float
    processing_rate: float
    mean_accuracy: float
    mean_latency: float
    utility: float
    log: list[SlotRecord] = field(default_factory=list, repr=False)

    @classmethod
    def from_outcomes(cls, outcomes: list[StepOutcome], log: list[SlotRecord],
                      eta: float) -> "EpisodeMetrics":
        n = len(outcomes)
        ok = [o for o in outcomes if o.q]
        return cls(
            cumulative_reward=math.fsum(o.reward for o in outcomes),
            processing_rate=len(ok) / n,
            mean_accuracy=math.fsum(o.acc for o in ok) / len(ok) if ok else 0.0,
            mean_latency=math.fsum(o.l_total for o in outcomes) / n,
            utility=episode_utility(outcomes, eta),
            log=log,
        )


@dataclass
class PassResult:
    outcomes: list[StepOutcome]
    log: list[SlotRecord]
    losses: list[float]


def _decide(policy: Policy, state_vec, slot: SceneSlot, b: float, rng: Stream,
            training: bool, hyper: DdqnHyper):
    """Pick the slot's action and, for offloads, per-block configs.

    Returns ``(decision, contexts, densities)``; contexts is None unless the
    CMAB chose the configs.
    """
    if policy.offloading == "ddqn":
        action = policy.learner.act(state_vec, hyper.epsilon if training else 0.0)
    elif policy.offloading == "random":
        action = rng.integer(N_ACTIONS)
    else:
        action = OFFLOAD_FULL
    if action < OFFLOAD_FULL:
        return Decision.track(TRACKERS[action]), None, None

    if action == OFFLOAD_ROI:
        densities = [blk.density for blk in slot.blocks]
    else:
        densities = [slot.true_object_count]
    contexts = None
    if policy.configuring == "cmab":
        eps = None if training else 0.0
        contexts, configs = choose_block_configs(densities, b, policy.cmab, rng, eps)
    elif policy.configuring == "random":
        configs = [CONFIGS[rng.integer(len(CONFIGS))] for _ in densities]
    else:
        configs = [BEST_CONFIG] * len(densities)
    if action == OFFLOAD_ROI:
        return Decision.roi_blocks(configs), contexts, densities
    return Decision.full(configs[0]), contexts, densities


def _run_pass(policy: Policy, scene: list[SceneSlot], bandwidth, params: SystemParams,
              hyper: DdqnHyper, rng: Stream, training: bool) -> PassResult:
    if len(scene) != len(bandwidth):
        raise ValueError("scene and bandwidth lengths differ")
    if len(scene) < 2:
        raise ValueError("a pass needs at least two slots")
    # forced full-frame offload of slot 0 seeds the tracker
    c, p = scene[0].true_object_count, 0
    outcomes, log, losses = [], [], []
    last = len(scene) - 1
    state_vec = normalize_state(scene[1].h, bandwidth[1], c, p, hyper)
    for t in range(1, len(scene)):
        slot, b = scene[t], bandwidth[t]
        decision, contexts, densities = _decide(policy, state_vec, slot, b, rng, training, hyper)
        outcome, c, p = step(slot, b, ObservationState(slot.h, b, c, p), decision, params)
        outcomes.append(outcome)
        log.append(SlotRecord(t, outcome.action, outcome.block_count, outcome.d_t,
                              outcome.l_total, outcome.acc, outcome.q, outcome.reward))
        done = t == last
        nxt = t if done else t + 1
        next_vec = normalize_state(scene[nxt].h, bandwidth[nxt], c, p, hyper)
        if training:
            if contexts is not None:
                learn_from_slot(contexts, decision.block_configs, densities, b,
                                outcome.reward, policy.cmab)
            if policy.offloading == "ddqn":
                try:
                    loss = policy.learner.observe(state_vec, outcome.action, outcome.reward,
                                                  next_vec, done)
                except FloatingPointError as exc:
                    raise TrainingError(f"DDQN diverged at slot {t}: {exc}") from exc
                if loss is not None:
                    losses.append(loss)
        state_vec = next_vec
    return PassResult(outcomes, log, losses)


@dataclass
class TrainingLog:
    pass_rewards: list[float] = field(default_factory=list)
    pass_processing_rates: list[float] = field(default_factory=list)
    pass_mean_losses: list[float] = field(default_factory=list)


def prepare_agents(policy: Policy, hyper: DdqnHyper, seed: int,
                   cmab: CmabState | None = None) -> Policy:
    """Attach fresh learners to ``policy`` where its rules need them."""
    if policy.offloading == "ddqn" and policy.learner is None:
        policy.learner = Learner(STATE_DIM, N_ACTIONS, hyper, Stream(derive_seed(seed, "ddqn")))
    if policy.configuring == "cmab" and policy.cmab is None:
        if cmab is None:
            raise ValueError(f"{policy.name} needs a pretrained CMAB state")
        policy.cmab = cmab.copy()
    return policy


def train_policy(policy: Policy, scene: list[SceneSlot], bandwidth: BandwidthTrace,
                 params: SystemParams, hyper: DdqnHyper, loop: int, seed: int) -> TrainingLog:
    """``loop`` training passes over ``scene``, in place on the policy's agents.

    Each pass draws a fresh bandwidth series from the trace's Normal(rho,
    sigma) law; exploration uses the agents' training epsilons.
    """
    if loop < 0:
        raise ValueError("loop must be >= 0")
    log = TrainingLog()
    rng = Stream(derive_seed(seed, "train-policy"))
    for k in range(loop):
        bw = generate_bandwidth_trace(bandwidth.rho, bandwidth.sigma, bandwidth.b_min,
                                      derive_seed(seed, "train-bandwidth", k), len(scene))
        result = _run_pass(policy, scene, bw.samples, params, hyper, rng, training=True)
        log.pass_rewards.append(math.fsum(o.reward for o in result.outcomes))
        log.pass_processing_rates.append(sum(o.q for o in result.outcomes) / len(result.outcomes))
        log.pass_mean_losses.append(
            math.fsum(result.losses) / len(result.losses) if result.losses else float("nan"))
    return log


def run_dcrl_training(scene, bandwidth, params: SystemParams, hyper: DdqnHyper,
                      cmab: CmabState, loop: int, seed: int, learner: Learner | None = None):
    """Joint DDQN + CMAB training. Returns ``(learner, cmab_state, log)``.

    ``cmab`` is the pretrained bandit state; it is copied, not mutated.
    """
    policy = prepare_agents(Policy("DCRL", "ddqn", "cmab", learner=learner), hyper, seed, cmab)
    log = train_policy(policy, scene, bandwidth, params, hyper, loop, seed)
    return policy.learner, policy.cmab, log


def run_episode(policy: Policy, scene, bandwidth, params: SystemParams, seed: int,
                hyper: DdqnHyper | None = None) -> EpisodeMetrics:
    """Evaluate ``policy`` on a trace with all exploration switched off."""
    if policy.offloading == "ddqn" and policy.learner is None:
        raise ValueError(f"{policy.name} has no trained DDQN")
    if policy.configuring == "cmab" and policy.cmab is None:
        raise ValueError(f"{policy.name} has no CMAB state")
    hyper = policy.learner.hyper if policy.learner is not None else (hyper or DdqnHyper())
    samples = bandwidth.samples if isinstance(bandwidth, BandwidthTrace) else bandwidth
    rng = Stream(derive_seed(seed, "evaluate"))
    result = _run_pass(policy, scene, samples, params, hyper, rng, training=False)
    return EpisodeMetrics.from_outcomes(result.outcomes, result.log, params.eta)


# ---------------------------------------------------------------------------
# comparison harness

METRIC_FIELDS = ("cumulative_reward", "processing_rate", "mean_accuracy", "mean_latency", "utility")
CSV_COLUMNS = ("policy", "seed", "cum_reward", "processing_rate", "mean_accuracy",
               "mean_latency", "utility")


@dataclass(frozen=True)
class CompareSettings:
    loop: int = 25
    pretrain_slots: int = 2000
    workers: int = 1


@dataclass
class ComparisonRow:
    policy: str
    seed: int
    metrics: EpisodeMetrics


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    def policies(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.policy not in seen:
                seen.append(r.policy)
        return seen

    def aggregate(self) -> dict[str, dict[str, tuple[float, float]]]:
        """policy -> metric -> (mean, sample sd); sd is 0 for a single seed."""
        out = {}
        for name in self.policies():
            cells = [r.metrics for r in self.rows if r.policy == name]
            out[name] = {}
            for f in METRIC_FIELDS:
                vals = [getattr(m, f) for m in cells]
                sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
                out[name][f] = (statistics.fmean(vals), sd)
        return out

    def mean(self, policy: str, metric: str) -> float:
        return self.aggregate()[policy][metric][0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.policy, r.seed, *(repr(float(getattr(r.metrics, f))) for f in METRIC_FIELDS)])
        agg = self.aggregate()
        for stat, k in (("mean", 0), ("sd", 1)):
            for name in self.policies():
                w.writerow([name, stat, *(repr(agg[name][f][k]) for f in METRIC_FIELDS)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def run_cell(name: str, seed: int, train, test, params: SystemParams, hyper: DdqnHyper,
             cmab_init: CmabState | None, settings: CompareSettings) -> ComparisonRow:
    """Fresh agents for one (policy, seed): pretrain, train, evaluate."""
    train_scene, train_bw = train
    test_scene, test_bw = test
    policy = make_policy(name)
    cmab = None
    if policy.configuring == "cmab":
        cmab = pretrain(train_scene, train_bw, params, settings.pretrain_slots,
                        derive_seed(seed, "pretrain"), cmab_init)
    prepare_agents(policy, hyper, seed, cmab)
    if policy.trainable:
        train_policy(policy, train_scene, train_bw, params, hyper, settings.loop, seed)
    metrics = run_episode(policy, test_scene, test_bw, params, seed, hyper)
    return ComparisonRow(name, seed, metrics)


def _cell_job(args):
    row = run_cell(*args)
    row.metrics.log = []
    return row


def compare(policies, train, test, params: SystemParams, hyper: DdqnHyper, seeds,
            settings: CompareSettings = CompareSettings(),
            cmab_init: CmabState | None = None) -> ComparisonTable:
    """Evaluate each policy under each seed on the shared test trace.

    Rows are ordered by (policy, seed) regardless of ``settings.workers``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("compare needs at least one seed")
    jobs = [(name, s, train, test, params, hyper, cmab_init, settings)
            for name in policies for s in seeds]
    if settings.workers > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            rows = list(pool.map(_cell_job, jobs))
    else:
        rows = [run_cell(*job) for job in jobs]
    return ComparisonTable(rows)


def write_slot_log(log: list[SlotRecord], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "action", "s_count", "d_t", "l_total", "acc", "q", "reward"])
    for r in log:
        w.writerow([r.slot, ACTION_NAMES[r.action], r.s_count, repr(r.d_t), repr(r.l_total),
                    repr(r.acc), int(r.q), repr(r.reward)])
    Path(path).write_text(buf.getvalue())
