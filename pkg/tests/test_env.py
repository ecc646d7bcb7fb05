import math
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from dcrl.env import (CONFIGS, MODELS, OFFLOAD_FULL, OFFLOAD_ROI, RESOLUTIONS, BlockConfig,
                      Decision, ObservationState, StepOutcome, SystemParams, VideoEnv,
                      episode_utility, frame_accuracy, offload_data_size, slot_reward, step,
                      success_flag, total_latency)
from dcrl.scene_trace import BlockSpec, SceneGenParams, SceneSlot, generate_bandwidth_trace, generate_scene_trace

QUOTED_U_INFER = {(m, r): v for m, row in {"Yolov5x": (0.30, 0.28, 0.26), "Yolov5l": (0.20, 0.19, 0.18),
                                          "Yolov5m": (0.12, 0.11, 0.10)}.items()
                for r, v in zip(RESOLUTIONS, row)}


def slot_with(fractions=(0.10, 0.05), densities=(2, 1), h=0.8):
    return SceneSlot(0, h, sum(densities), tuple(BlockSpec(f, n) for f, n in zip(fractions, densities)))


def obs(h=0.8, b=10.0, c=3, p=0):
    return ObservationState(h, b, c, p)


# --- data size -------------------------------------------------------------

def test_full_frame_size_unscaled():
    assert offload_data_size(["640p"], SystemParams(data_scale=1.0)) == pytest.approx(192.0, abs=1e-12)


def test_full_frame_size_default_scale():
    assert offload_data_size(["640p"], SystemParams()) == pytest.approx(6.0, abs=1e-12)


def test_roi_block_size():
    size = offload_data_size(["320p", "320p"], SystemParams(), fractions=[0.10, 0.05])
    assert size == pytest.approx(0.03125 * 6.25e-4 * 76800 * 0.15, abs=1e-12)
    assert size == pytest.approx(0.225, abs=1e-12)


def test_data_size_length_mismatch():
    with pytest.raises(ValueError):
        offload_data_size(["320p"], SystemParams(), fractions=[0.1, 0.2])
    with pytest.raises(ValueError):
        offload_data_size(["320p", "640p"], SystemParams())


# --- latency ---------------------------------------------------------------

def test_skip_has_zero_latency():
    lat = total_latency(Decision.track("Skip"), slot_with(), 10.0, SystemParams())
    assert lat.l_total == 0.0


def test_tracker_latency_uses_raw_frame():
    lat = total_latency(Decision.track("CSRT"), slot_with(), 10.0, SystemParams())
    assert lat.l_total == pytest.approx(0.10 * 6.0 / 1.0)


def test_full_frame_transmission_delay():
    lat = total_latency(Decision.full(), slot_with(), 10.0, SystemParams())
    assert lat.l_trans == pytest.approx(0.6)


def test_full_frame_latency_hand_computed():
    # 0.01*6/1 + 6/10 + 0.30*6/2 with the table values listed alongside the example
    params = SystemParams(u_infer=QUOTED_U_INFER)
    lat = total_latency(Decision.full(BlockConfig("Yolov5x", "640p")), slot_with(), 10.0, params)
    assert (lat.l_dnn, lat.l_trans, lat.l_edge) == pytest.approx((0.06, 0.6, 0.9), abs=1e-12)
    assert lat.l_total == pytest.approx(1.56, abs=1e-9)


def test_full_frame_latency_default_table():
    lat = total_latency(Decision.full(), slot_with(), 10.0, SystemParams())
    assert lat.l_total == pytest.approx(0.06 + 0.6 + 0.10 * 6 / 2, abs=1e-12)


def test_roi_latency_sums_per_block():
    params = SystemParams()
    s = slot_with()
    cfgs = (BlockConfig("Yolov5x", "640p"), BlockConfig("Yolov5m", "320p"))
    lat = total_latency(Decision.roi_blocks(cfgs), s, 5.0, params)
    d1 = 0.03125 * 6.25e-4 * 307200 * 0.10
    d2 = 0.03125 * 6.25e-4 * 76800 * 0.05
    assert lat.d_t == pytest.approx(d1 + d2)
    assert lat.l_roi == pytest.approx(0.02 * 6.0)
    assert lat.l_trans == pytest.approx((d1 + d2) / 5.0)
    assert lat.l_edge == pytest.approx((0.100 * d1 + 0.033 * d2) / 2.0)
    assert lat.l_total == pytest.approx(lat.l_roi + lat.l_dnn + lat.l_trans + lat.l_edge)


def test_roi_config_count_must_match_blocks():
    with pytest.raises(ValueError):
        total_latency(Decision.roi_blocks([CONFIGS[0]]), slot_with(), 10.0, SystemParams())


# --- accuracy --------------------------------------------------------------

def test_single_block_accuracy():
    assert frame_accuracy(Decision.full(), slot_with(), obs(), SystemParams()) == pytest.approx(0.90)


def test_roi_accuracy_mean_with_penalty():
    cfgs = (BlockConfig("Yolov5x", "640p"), BlockConfig("Yolov5m", "320p"))
    acc = frame_accuracy(Decision.roi_blocks(cfgs), slot_with(), obs(), SystemParams())
    assert acc == pytest.approx(0.95 * (0.90 + 0.70) / 2)
    assert acc == pytest.approx(0.76)


def test_skip_perfect_similarity():
    params = SystemParams(track_decay=1.0)
    assert frame_accuracy(Decision.track("Skip"), slot_with(h=1.0), obs(h=1.0), params) == 1.0


def test_skip_and_tracker_decay():
    params = SystemParams()
    s = slot_with(h=0.9)
    assert frame_accuracy(Decision.track("Skip"), s, obs(p=2), params) == pytest.approx(0.81 * 0.97 ** 3)
    assert frame_accuracy(Decision.track("KCF"), s, obs(p=0), params) == pytest.approx(0.68 * 0.97)
    assert frame_accuracy(Decision.track("CSRT"), s, obs(p=4), params) == pytest.approx(0.78 * 0.97 ** 5)


# --- success and reward ----------------------------------------------------

def test_success_boundary_inclusive():
    p = SystemParams()
    assert success_flag(p.l_max, p.acc_threshold, p)


def test_success_deadline_miss():
    assert not success_flag(1.56, 0.99, SystemParams(l_max=1.0))


def test_success_low_accuracy():
    assert not success_flag(0.3, 0.2, SystemParams(acc_threshold=0.5))


def test_reward_examples():
    p = SystemParams(lam=1.0)
    assert slot_reward(0.8, p.l_max, p) == pytest.approx(0.8)
    assert slot_reward(0.6, 0.5 * p.l_max, p) == pytest.approx(1.1)
    assert slot_reward(0.9, 2 * p.l_max, p) == 0.0


def test_missed_deadline_zeroes_accuracy_and_reward():
    params = SystemParams(u_infer=QUOTED_U_INFER)
    out, c, p = step(slot_with(), 10.0, obs(c=5, p=2), Decision.full(), params)
    assert out.l_total > params.l_max
    assert out.acc == 0.0 and out.reward == 0.0 and not out.q
    assert (c, p) == (5, 3)


# --- step / state update ---------------------------------------------------

def test_successful_offload_resets_tracking_state():
    s = slot_with()
    out, c, p = step(s, 10.0, obs(c=0, p=7), Decision.full(BlockConfig("Yolov5m", "320p")), SystemParams())
    assert out.q
    assert (c, p) == (s.true_object_count, 0)


def test_skip_sequence_counts_up():
    s = slot_with(h=0.95)
    c, p = 4, 0
    ps = []
    for _ in range(3):
        _, c, p = step(s, 10.0, obs(h=0.95, c=c, p=p), Decision.track("Skip"), SystemParams())
        ps.append(p)
    assert ps == [1, 2, 3]
    assert c == 4


def test_scripted_episode_replay():
    # offload (ok), skip, offload at starving bandwidth (miss), skip
    scene = [slot_with(densities=(3, 2)), slot_with(densities=(1, 1)), slot_with(densities=(4, 4)),
             slot_with(densities=(2, 2))]
    bws = [10.0, 10.0, 0.5, 10.0]
    decisions = [Decision.full(CONFIGS[8]), Decision.track("Skip"), Decision.full(), Decision.track("Skip")]
    c, p, trail = 0, 0, []
    for s, b, d in zip(scene, bws, decisions):
        out, c, p = step(s, b, obs(h=s.h, b=b, c=c, p=p), d, SystemParams())
        trail.append((out.q, c, p))
    assert trail == [(True, 5, 0), (True, 5, 1), (False, 5, 2), (True, 5, 3)]


def test_video_env_forced_first_offload():
    scene = generate_scene_trace(SceneGenParams(), 1, 6)
    bw = generate_bandwidth_trace(10, 5, 0.5, 1, 6)
    env = VideoEnv(scene, bw, SystemParams())
    first = env.reset()
    assert (first.c, first.p) == (scene[0].true_object_count, 0)
    assert first.h == scene[1].h and first.b == bw.samples[1]
    n = 0
    while not env.done:
        env.step(Decision.track("KCF"))
        n += 1
    assert n == 5
    with pytest.raises(RuntimeError):
        env.step(Decision.track("KCF"))


# --- decision encoding -----------------------------------------------------

def test_decision_constraints():
    with pytest.raises(ValueError):
        Decision(offload=False)
    with pytest.raises(ValueError):
        Decision(offload=False, tracking_mode="KCF", block_configs=(CONFIGS[0],))
    with pytest.raises(ValueError):
        Decision(offload=True, tracking_mode="KCF", block_configs=(CONFIGS[0],))
    with pytest.raises(ValueError):
        Decision(offload=True, roi=False, block_configs=(CONFIGS[0], CONFIGS[1]))
    with pytest.raises(ValueError):
        Decision(offload=True)
    assert Decision.full().action == OFFLOAD_FULL
    assert Decision.roi_blocks([CONFIGS[0]]).action == OFFLOAD_ROI


# --- utility ---------------------------------------------------------------

def _outcome(q, acc):
    return StepOutcome(0, 0, 0, 0, 0, 0.1, acc, q, acc, 0.0, 0, 0)


def test_utility_all_success():
    assert episode_utility([_outcome(True, 0.9)] * 8, 1.0) == pytest.approx(1.9)


def test_utility_mixed():
    outs = [_outcome(True, 0.8), _outcome(False, 0.3), _outcome(True, 0.6), _outcome(False, 0.0)]
    assert episode_utility(outs, 2.0) == pytest.approx(0.5 + 2 * (1.4 / 2))
    assert episode_utility(outs, 2.0) == pytest.approx(1.9)


def test_utility_no_success():
    assert episode_utility([_outcome(False, 0.4)] * 3, 1.0) == 0.0


def test_utility_empty():
    with pytest.raises(ValueError):
        episode_utility([], 1.0)


# --- properties ------------------------------------------------------------

block_lists = st.lists(st.tuples(st.floats(0.02, 0.25), st.integers(0, 5)), min_size=1, max_size=4)


def _decision_strategy(n_blocks):
    cfg = st.sampled_from(CONFIGS)
    return st.one_of(
        st.sampled_from(["Skip", "KCF", "CSRT"]).map(Decision.track),
        cfg.map(Decision.full),
        st.lists(cfg, min_size=n_blocks, max_size=n_blocks).map(Decision.roi_blocks),
    )


@st.composite
def scenarios(draw):
    blocks = draw(block_lists)
    h = draw(st.floats(0.0, 1.0))
    s = SceneSlot(0, h, sum(n for _, n in blocks), tuple(BlockSpec(f, n) for f, n in blocks))
    decision = draw(_decision_strategy(len(blocks)))
    b = draw(st.floats(0.5, 40.0))
    o = ObservationState(h, b, draw(st.integers(0, 12)), draw(st.integers(0, 60)))
    return s, b, o, decision


@settings(max_examples=300, deadline=None)
@given(scenarios())
def test_step_invariants(case):
    s, b, o, decision = case
    params = SystemParams()
    out, _, _ = step(s, b, o, decision, params)
    assert 0.0 <= out.acc <= 1.0
    assert out.reward >= 0.0
    assert math.isclose(out.recombined_latency(), out.l_total, rel_tol=1e-12, abs_tol=0.0)
    if out.q:
        assert out.l_total <= params.l_max and out.acc >= params.acc_threshold


@settings(max_examples=100, deadline=None)
@given(scenarios(), st.floats(1.0, 10.0))
def test_more_bandwidth_never_slows_transmission(case, factor):
    s, b, o, decision = case
    lo = total_latency(decision, s, b, SystemParams())
    hi = total_latency(decision, s, b * factor, SystemParams())
    assert hi.l_trans <= lo.l_trans


def better_or_equal(a: BlockConfig, b: BlockConfig) -> bool:
    return (MODELS.index(a.model) <= MODELS.index(b.model)
            and RESOLUTIONS.index(a.resolution) <= RESOLUTIONS.index(b.resolution))


@pytest.mark.parametrize("better,worse", [(a, b) for a, b in product(CONFIGS, CONFIGS)
                                          if a != b and better_or_equal(a, b)])
def test_better_config_more_accurate_and_slower(better, worse):
    params = SystemParams()
    s = slot_with()
    acc_hi = frame_accuracy(Decision.full(better), s, obs(), params)
    acc_lo = frame_accuracy(Decision.full(worse), s, obs(), params)
    assert acc_hi >= acc_lo
    edge_hi = total_latency(Decision.full(better), s, 10.0, params).l_edge
    edge_lo = total_latency(Decision.full(worse), s, 10.0, params).l_edge
    assert edge_hi >= edge_lo


def test_utility_matches_brute_force():
    import random
    rnd = random.Random(1234)
    for _ in range(100):
        T = rnd.randint(1, 50)
        eta = rnd.uniform(0.1, 3.0)
        outs = [_outcome(rnd.random() < 0.6, rnd.random()) for _ in range(T)]
        # direct transcription of the objective, term by term
        num_q = 0
        acc_sum = 0.0
        for o in outs:
            num_q += 1 if o.q else 0
            acc_sum += o.acc if o.q else 0.0
        expected = num_q / T + (eta * acc_sum / num_q if num_q else 0.0)
        assert episode_utility(outs, eta) == pytest.approx(expected, rel=1e-12, abs=1e-15)
