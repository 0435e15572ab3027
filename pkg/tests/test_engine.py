import numpy as np
import pytest

from oracles import random_dag
from reinet import engine
from reinet.agents import ConfigError, agent_rng, build_specs
from reinet.engine import ProtocolError, temporal_aggregate
from reinet.graph import Topology, as_layered, to_layered
from reinet.variants import variant_topology
from toyenv import DriftEnv


def system(topology, act_every=(1,), seed=0, horizon=25, n_agents=None, layered=True, record_aux=False):
    lay = to_layered(topology) if layered else as_layered(topology)
    env = DriftEnv(n_agents or len(topology.motors), horizon)
    specs = build_specs(lay, env.obs_dim, env.n_actions, seed=seed, act_every_by_layer=act_every)
    return engine.init_system(lay, specs, env, seed, record_aux=record_aux)


def test_temporal_aggregate_examples():
    m, r = temporal_aggregate([np.array([1.0, 3.0]), np.array([3.0, 5.0])], [1.0, 2.0])
    np.testing.assert_array_equal(m, [2.0, 4.0])
    assert r == 3.0
    m, r = temporal_aggregate([np.array([0.5, -1.0])], [0.25])
    np.testing.assert_array_equal(m, [0.5, -1.0])
    assert r == 0.25
    assert temporal_aggregate([np.zeros(2)] * 3, [0.0, 0.0, 0.0])[1] == 0.0
    with pytest.raises(ValueError):
        temporal_aggregate([], [])


def test_init_delivers_obs_to_motors_only():
    st = system(variant_topology("ippo"))
    assert st.motor_obs.shape == (4, 3)
    np.testing.assert_array_equal(st.motor_rewards, np.zeros(4))
    assert all(rt.obs is None and rt.message is None for rt in st.runtimes)
    assert st.t == 0 and st.env.resets == 1


def test_init_same_seed_same_state():
    a, b = system(variant_topology("3ppo"), seed=3), system(variant_topology("3ppo"), seed=3)
    np.testing.assert_array_equal(a.motor_obs, b.motor_obs)
    assert a.runtimes[6].rng.random() == b.runtimes[6].rng.random()


def test_init_rejects_wrong_motor_count():
    lay = to_layered(variant_topology("3ppo"))
    env = DriftEnv(3)
    specs = build_specs(lay, env.obs_dim, env.n_actions)
    with pytest.raises(ConfigError):
        engine.init_system(lay, specs, env, 0)


def test_upstream_chain_forwards_motor_obs():
    st = system(Topology.from_edges(2, [(1, 0)]), n_agents=1)
    engine.upstream_pass(st)
    np.testing.assert_array_equal(st.runtimes[1].obs, st.motor_obs[0])


def test_upstream_reward_reaches_superior_slot():
    st = system(variant_topology("3ppo"))
    engine.step(st)
    mid = st.runtimes[4]
    np.testing.assert_array_equal(mid.rewards, st.motor_rewards[:2])


def test_upstream_top_sees_mid_messages_in_order():
    st = system(variant_topology("3ppo"))
    engine.upstream_pass(st)
    rts = st.runtimes
    np.testing.assert_array_equal(rts[6].obs, np.concatenate([rts[4].message, rts[5].message]))
    np.testing.assert_array_equal(rts[4].obs, np.concatenate([st.motor_obs[0], st.motor_obs[1]]))


def test_no_information_shortcut():
    st = system(variant_topology("3ppo"))
    engine.upstream_pass(st)
    before, _ = engine.gather_inputs(st, 4)
    st.runtimes[2].message = st.runtimes[2].message + 100.0
    st.runtimes[5].message = st.runtimes[5].message + 100.0
    after, _ = engine.gather_inputs(st, 4)
    assert all(np.array_equal(a, b) for a, b in zip(before, after))
    st.runtimes[0].message = st.runtimes[0].message + 100.0
    changed, _ = engine.gather_inputs(st, 4)
    assert not np.array_equal(changed[0], before[0])


def test_reading_before_upstream_is_a_protocol_error():
    st = system(variant_topology("3ppo"))
    with pytest.raises(ProtocolError):
        engine.gather_inputs(st, 4)


def test_slow_superior_holds_directive():
    st = system(variant_topology("3ppo"), act_every=(1, 2, 2), horizon=50)
    seen, top_acts = [], []
    for _ in range(40):
        if not st.primed:
            engine.upstream_pass(st)
        engine.downstream_pass(st)
        seen.append(st.runtimes[4].directives.copy())
        top_acts.append(st.runtimes[6].due(st.t_ep))
        engine.env_step(st)
        engine.upstream_pass(st)
    assert top_acts[:4] == [False, True, False, True]
    assert seen[0].tolist() == [-1]                      # null directive before the first act
    for t in range(1, 39):
        if not top_acts[t + 1]:
            assert np.array_equal(seen[t], seen[t + 1])  # constant until the next act


def test_identity_vertex_copies_directive_same_step():
    st = system(variant_topology("bridged-3ppo"), act_every=(1, 1, 1))
    for _ in range(10):
        engine.step(st)
        top = st.runtimes[6].action
        for ident, slot in zip((7, 8, 9, 10), range(4)):
            assert st.runtimes[ident].action.tolist() == [top[slot]]
        assert st.runtimes[0].directives[1] == top[0]


def test_source_has_empty_directive_block():
    st = system(variant_topology("3ppo"))
    engine.step(st)
    rec = st.runtimes[6].records[0]
    assert rec.obs.shape == (12,)


def test_motor_target_is_env_reward():
    st = system(variant_topology("ippo"))
    infos = [engine.step(st) for _ in range(3)]
    assert [r.r_target for r in st.runtimes[2].records] == [i.rewards[2] for i in infos]


def test_motor_and_mid_targets_by_hand():
    st = system(variant_topology("3ppo"), act_every=(1, 1, 1))
    info = engine.step(st)
    assert st.runtimes[0].records[0].r_target == info.rewards[0]
    assert st.runtimes[4].records[0].r_target == pytest.approx(info.rewards[:2].mean())
    assert st.runtimes[6].records[0].r_target == pytest.approx(info.rewards.mean())


def test_slow_target_sums_window():
    st = system(variant_topology("3ppo"), act_every=(1, 2, 2))
    infos = [engine.step(st) for _ in range(3)]
    # mid 4 acts before env step 1 (t=1), its window covers env steps 1 and 2
    r = infos[1].rewards[:2] + infos[2].rewards[:2]
    assert st.runtimes[4].records[0].t == 1
    assert st.runtimes[4].records[0].r_target == pytest.approx(r.mean())


def test_slow_agent_policy_input_is_window_mean():
    st = system(variant_topology("3ppo"), act_every=(1, 2, 2))
    engine.upstream_pass(st)
    first = st.runtimes[4].obs.copy()
    engine.downstream_pass(st)
    engine.env_step(st)
    engine.upstream_pass(st)
    second = st.runtimes[4].obs.copy()
    engine.downstream_pass(st)
    rec = st.runtimes[4].records[0]
    np.testing.assert_allclose(rec.obs[:6], (first + second) / 2)


def test_episode_end_resets_and_flags_done():
    st = system(variant_topology("3ppo"), act_every=(1, 2, 2), horizon=5)
    infos = [engine.step(st) for _ in range(12)]
    assert [i.done for i in infos][:6] == [False] * 4 + [True, False]
    assert infos[4].episode_length == 5
    assert st.env.resets == 3 and st.episode == 2
    for v in (0, 4, 6):
        recs = st.runtimes[v].records
        dones = [r.done for r in recs]
        per_episode = 5 if v == 0 else 2
        assert dones[per_episode - 1] is True and sum(dones) == 2
        assert all(r.r_target is not None for r in recs[:2 * per_episode])


def test_terminal_flush_closes_partial_window():
    # act_every 4 with a horizon of 5: the only act (t_ep=3) gets 2 of its 4 rewards
    st = system(variant_topology("3ppo"), act_every=(1, 4, 4), horizon=5)
    infos = [engine.step(st) for _ in range(5)]
    rt = st.runtimes[6]
    assert rt.open is None and [r.done for r in rt.records] == [True]
    expect = (infos[3].rewards + infos[4].rewards).mean()
    assert rt.records[0].r_target == pytest.approx(expect)


def test_rollout_clock_counts():
    st = system(Topology.from_edges(2, [(1, 0)]), act_every=(1, 2), n_agents=1, horizon=100)
    recs = engine.rollout(st, 4)
    assert len(recs[0]) == 4 and len(recs[1]) == 2


@pytest.mark.parametrize("k", [1, 2, 3, 4, 7])
def test_clock_containment(k):
    st = system(variant_topology("3ppo"), act_every=(1, k, k), horizon=1000)
    for horizon in (1, 10, 23):
        before = st.runtimes[6].acts
        start = st.t_ep
        engine.rollout(st, horizon)
        expected = (start + horizon) // k - start // k
        assert st.runtimes[6].acts - before == expected
    fresh = system(variant_topology("3ppo"), act_every=(1, k, k), horizon=1000)
    engine.rollout(fresh, 37)
    assert fresh.runtimes[6].acts == 37 // k and fresh.runtimes[0].acts == 37


def test_rollout_is_deterministic():
    a = engine.rollout(system(variant_topology("3ppo"), act_every=(1, 2, 2), seed=9), 60)
    b = engine.rollout(system(variant_topology("3ppo"), act_every=(1, 2, 2), seed=9), 60)
    for v in a:
        assert [(r.action.tolist(), r.logprob, r.r_target) for r in a[v]] == \
               [(r.action.tolist(), r.logprob, r.r_target) for r in b[v]]


def test_ippo_motor_input_is_env_obs_only():
    st = system(variant_topology("ippo"))
    recs = engine.rollout(st, 3)
    assert recs[0][0].obs.shape == (3,)


def test_aux_records_carry_message_and_proxy():
    st = system(variant_topology("3ppo"), record_aux=True)
    recs = engine.rollout(st, 2)
    rec = recs[4][0]
    assert rec.d_obs.shape == (6,) and rec.d_rew.shape == (2,)
    assert rec.message.shape == (6,) and rec.proxy is not None


def test_identity_agents_consume_no_randomness():
    st = system(variant_topology("bridged-3ppo"))
    engine.rollout(st, 30)
    for v in (7, 8, 9, 10):
        assert st.runtimes[v].rng.random() == agent_rng(0, v).random()


def test_layering_equivalence_random_dags():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 25:
        g = random_dag(rng, max_vertices=9, p=0.35)
        if to_layered(g).vertex_count == g.vertex_count:
            continue
        seed = int(rng.integers(1000))
        a = system(g, seed=seed, horizon=7, layered=False)
        b = system(g, seed=seed, horizon=7, layered=True)
        np.testing.assert_array_equal(engine.motor_action_trace(a, 30), engine.motor_action_trace(b, 30))
        checked += 1
