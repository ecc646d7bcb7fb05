import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcrl.cmab import (CONTEXTS, CmabState, choose_block_configs, classify_context,
                       learn_from_slot, pretrain, select_config, update_averages,
                       update_estimate)
from dcrl.env import CONFIGS, BlockConfig, SystemParams
from dcrl.rng import Stream
from dcrl.scene_trace import SceneGenParams, generate_bandwidth_trace, generate_scene_trace

finite = st.floats(-1e6, 1e6, allow_nan=False)


def state(**kw):
    return CmabState(**kw)


# --- contexts ------------------------------------------------------------------

def test_context_examples():
    s = state(avg_density=5.0, avg_bandwidth=10.0)
    assert CONTEXTS[classify_context(10, 12, s)] == "HI-HB"
    assert CONTEXTS[classify_context(5, 10, s)] == "LI-LB"
    assert CONTEXTS[classify_context(2, 15, s)] == "LI-HB"
    assert CONTEXTS[classify_context(9, 3, s)] == "HI-LB"


@given(n=finite, b=finite, e_i=st.floats(0, 1e3), e_b=st.floats(1e-3, 1e3))
def test_context_partition(n, b, e_i, e_b):
    s = state(avg_density=e_i, avg_bandwidth=e_b)
    c = classify_context(n, b, s)
    assert c in range(4)
    assert CONTEXTS[c].startswith("HI" if n > e_i else "LI")
    assert CONTEXTS[c].endswith("HB" if b > e_b else "LB")


# --- averages --------------------------------------------------------------------

def test_ema_full_weight():
    s = state(xi1=1.0, avg_density=5.0)
    update_averages(9, None, s)
    assert s.avg_density == 9


def test_ema_arithmetic():
    s = state(xi1=0.3, avg_density=5.0)
    update_averages(10, None, s)
    assert s.avg_density == pytest.approx(6.5, abs=1e-12)


def test_ema_zero_weight_freezes_bandwidth():
    s = state(xi2=0.0, avg_bandwidth=10.0)
    for b in (0.5, 100.0, 3.0):
        update_averages(None, b, s)
    assert s.avg_bandwidth == 10.0


@settings(max_examples=50)
@given(e0=st.floats(0, 50), xi=st.floats(0, 1),
       ns=st.lists(st.integers(0, 12), min_size=1, max_size=60))
def test_ema_bounds(e0, xi, ns):
    s = state(xi1=xi, avg_density=e0)
    for n in ns:
        update_averages(n, None, s)
        assert min(e0, 0) - 1e-9 <= s.avg_density <= max(e0, 12) + 1e-9


# --- selection --------------------------------------------------------------------

def test_greedy_selects_best_arm():
    s = state(epsilon=0.0)
    s.Q[2] = np.linspace(0.1, 0.9, 9)
    assert select_config(2, s, Stream(0)) == BlockConfig("Yolov5m", "320p")


def test_greedy_ties_go_to_first_config():
    s = state(epsilon=0.0)
    assert select_config(0, s, Stream(0)) == BlockConfig("Yolov5x", "640p")
    assert CONFIGS[:3] == (BlockConfig("Yolov5x", "640p"), BlockConfig("Yolov5x", "480p"),
                           BlockConfig("Yolov5x", "320p"))


def test_exploitation_is_pure_in_q():
    s = state(epsilon=0.0)
    s.Q[1] = [0.3, 0.2, 0.8, 0.1, 0.0, 0.7, 0.8, 0.2, 0.1]
    picks = {select_config(1, s, Stream(seed)) for seed in range(30)}
    assert picks == {CONFIGS[2]}


def test_full_exploration_uniform():
    s = state(epsilon=1.0)
    s.Q[0, 0] = 5.0
    rng = Stream(13)
    n = 90_000
    counts = np.bincount([select_config(0, s, rng).index for _ in range(n)], minlength=9)
    freq = counts / n
    # sd of a frequency at p=1/9 over 9e4 draws is 0.00105
    assert np.all((freq >= 0.10) & (freq <= 0.123)), freq


# --- estimates ------------------------------------------------------------------------

def test_update_from_zero():
    s = state(phi=0.1)
    update_estimate(0, CONFIGS[0], 1.0, s)
    assert s.Q[0, 0] == pytest.approx(0.1)
    assert s.counts[0, 0] == 1


def test_update_fixed_point():
    s = state(phi=0.4)
    s.Q[3, 5] = 0.77
    update_estimate(3, CONFIGS[5], 0.77, s)
    assert s.Q[3, 5] == 0.77


def test_geometric_convergence():
    phi, r_star, q0 = 0.1, 1.3, -0.4
    s = state(phi=phi)
    s.Q[1, 4] = q0
    for k in range(1, 301):
        update_estimate(1, CONFIGS[4], r_star, s)
        assert abs(s.Q[1, 4] - r_star) == pytest.approx((1 - phi) ** k * abs(q0 - r_star), abs=1e-9)


@given(e=st.integers(0, 3), g=st.integers(0, 8), r=finite)
def test_update_locality(e, g, r):
    s = state()
    s.Q[:] = np.arange(36).reshape(4, 9) / 10
    before = s.Q.copy()
    update_estimate(e, CONFIGS[g], r, s)
    changed = np.argwhere(s.Q != before)
    assert all(tuple(ix) == (e, g) for ix in changed)
    assert s.counts.sum() == 1 and s.counts[e, g] == 1


def test_learn_from_slot_updates_each_block_and_averages_once_per_block():
    s = state(xi1=0.5, xi2=0.5, phi=0.5, avg_density=4.0, avg_bandwidth=10.0)
    densities = [6, 2]
    contexts, configs = choose_block_configs(densities, 12.0, s, Stream(0), 0.0)
    assert [CONTEXTS[c] for c in contexts] == ["HI-HB", "LI-HB"]
    learn_from_slot(contexts, configs, densities, 12.0, 1.0, s)
    assert s.Q[0, 0] == 0.5 and s.Q[1, 0] == 0.5
    assert s.avg_density == pytest.approx(0.5 * 2 + 0.5 * (0.5 * 6 + 0.5 * 4))
    assert s.avg_bandwidth == 11.0


# --- stationary bandit oracle ------------------------------------------------------------

# Bernoulli arms; the per-context success probabilities rise with the config
# index, so (Yolov5m, 320p) is the analytically best arm everywhere.
ARM_P = np.array([[0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.60, 0.85],
                  [0.50, 0.45, 0.40, 0.35, 0.30, 0.45, 0.50, 0.55, 0.80],
                  [0.10, 0.10, 0.10, 0.20, 0.20, 0.20, 0.30, 0.30, 0.60],
                  [0.60, 0.50, 0.40, 0.30, 0.20, 0.10, 0.20, 0.40, 0.90]])


def bandit_pull(s, rng, epsilon, context):
    g = select_config(context, s, rng, epsilon)
    reward = 1.0 if rng.uniform() < ARM_P[context, g.index] else 0.0
    update_estimate(context, g, reward, s)
    return g


def test_stationary_bandit_learns_best_arm_per_context():
    best = BlockConfig("Yolov5m", "320p")
    assert all(CONFIGS[int(np.argmax(row))] == best for row in ARM_P)
    for seed in range(3):
        s = state(epsilon=0.3, phi=0.1)
        rng = Stream(seed)
        for _ in range(2000):
            bandit_pull(s, rng, None, rng.integer(4))
        for e in range(4):
            hits = sum(bandit_pull(s, rng, 0.0, e) == best for _ in range(1000))
            assert hits >= 900, (seed, CONTEXTS[e], hits)


# --- pretraining -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_trace():
    scene = generate_scene_trace(SceneGenParams(), 3, 200)
    return scene, generate_bandwidth_trace(10, 5, 0.5, 4, 200)


def test_pretrain_requires_slots(small_trace):
    with pytest.raises(ValueError):
        pretrain(*small_trace, SystemParams(), 0, seed=1)


def test_pretrain_deterministic_and_counts_blocks(small_trace):
    scene, bw = small_trace
    a = pretrain(scene, bw, SystemParams(), 300, seed=5)
    b = pretrain(scene, bw, SystemParams(), 300, seed=5)
    assert a.to_dict() == b.to_dict()
    blocks = sum(scene[t % len(scene)].block_count for t in range(300))
    assert a.counts.sum() == blocks
    assert a.avg_bandwidth != 10.0 and a.avg_density != 3.0
    assert a.to_dict() != pretrain(scene, bw, SystemParams(), 300, seed=6).to_dict()


def test_pretrain_does_not_mutate_initial_state(small_trace):
    init = state(avg_bandwidth=10.0)
    pretrain(*small_trace, SystemParams(), 50, seed=1, state=init)
    assert init.counts.sum() == 0 and np.all(init.Q == 0)


def test_checkpoint_round_trip(tmp_path, small_trace):
    s = pretrain(*small_trace, SystemParams(), 100, seed=2)
    path = tmp_path / "cmab.json"
    s.save(path)
    loaded = CmabState.load(path)
    assert loaded.to_dict() == s.to_dict()
    np.testing.assert_array_equal(loaded.Q, s.Q)


@pytest.mark.parametrize("kw", [{"phi": 0.0}, {"xi1": 1.5}, {"epsilon": -0.1},
                                {"avg_bandwidth": 0.0}])
def test_domain_checks(kw):
    with pytest.raises(ValueError):
        CmabState(**kw)
