import numpy as np
import pytest

from crowdwatch.simulator import (PRESETS, AnomalyScript, NoiseModel, ScriptKind, UnknownPreset,
                                  build_scenario, corrupt, simulate)


def test_lane_flow_preset():
    sc = build_scenario("lane_flow", n_agents=10)
    assert sc.n_agents == 10 and sc.scripts == []
    heading = sc.goals - sc.positions
    heading /= np.linalg.norm(heading, axis=1, keepdims=True)
    assert np.allclose(heading, heading[0])


def test_scenarios_are_deterministic():
    a = build_scenario("against_flow_63", seed=7)
    b = build_scenario("against_flow_63", seed=7)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.goals, b.goals)
    assert a.scripts == b.scripts


def test_biker_has_one_speed_outlier():
    sc = build_scenario("biker")
    (s,) = sc.scripts
    assert s.kind is ScriptKind.SPEED_OUTLIER and s.speed_factor == 3.0


@pytest.mark.parametrize("preset", PRESETS)
def test_every_preset_builds_and_runs(preset):
    sc = build_scenario(preset, seed=1, duration=20)
    res = simulate(sc, seed=1)
    assert res.positions.shape == (20, sc.n_agents, 2)
    assert np.all(np.isfinite(res.positions))


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        build_scenario("parade")


def test_unsupported_override():
    with pytest.raises(ValueError):
        build_scenario("lane_flow", colour="red")


def test_no_scripts_means_no_labels():
    res = simulate(build_scenario("bidirectional", duration=30))
    assert not res.labels.any()


def test_labels_follow_scripts():
    script = AnomalyScript(ScriptKind.U_TURN, 5, 100, 150)
    sc = build_scenario("lane_flow", n_agents=10, duration=200, scripts=[script])
    res = simulate(sc)
    assert res.labels.sum() == 50
    assert np.array_equal(np.flatnonzero(res.labels.any(axis=0)), [5])
    assert np.array_equal(np.flatnonzero(res.labels[:, 5]), np.arange(100, 150))


def test_label_count_is_sum_of_script_lengths():
    sc = build_scenario("sudden_run", seed=3, duration=120)
    res = simulate(sc, seed=3)
    assert res.labels.sum() == sum(s.end - s.start for s in sc.scripts)


def test_u_turn_reverses_direction():
    script = AnomalyScript(ScriptKind.U_TURN, 0, 50, 150)
    sc = build_scenario("lane_flow", n_agents=1, duration=150, scripts=[script])
    res = simulate(sc)
    assert res.velocities[40, 0, 0] > 0 and res.velocities[120, 0, 0] < 0


def test_simulation_is_reproducible():
    sc = build_scenario("crossing", seed=2, duration=60)
    a, b = simulate(sc, seed=2), simulate(sc, seed=2)
    assert np.array_equal(a.positions, b.positions)
    na, nb = NoiseModel(0.05, 0.1, seed=4), NoiseModel(0.05, 0.1, seed=4)
    assert corrupt(a, na) == corrupt(b, nb)


def test_corrupt_identity_without_noise():
    res = simulate(build_scenario("lane_flow", n_agents=4, duration=10))
    obs = corrupt(res, NoiseModel())
    assert len(obs) == 40
    for o in obs:
        i = res.agent_ids.index(o.agent_id)
        assert o.position.as_array() == pytest.approx(res.positions[o.frame, i], abs=0)


def test_dropout_fraction():
    res = simulate(build_scenario("lane_flow", n_agents=100, duration=100))
    obs = corrupt(res, NoiseModel(0.0, 0.2, seed=9))
    assert abs(1 - len(obs) / 10_000 - 0.2) <= 0.02


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(-1.0)
    with pytest.raises(ValueError):
        NoiseModel(0.0, 1.0)


def test_script_validation():
    with pytest.raises(ValueError):
        AnomalyScript(ScriptKind.U_TURN, 0, 5, 5)
    with pytest.raises(ValueError):
        AnomalyScript(ScriptKind.U_TURN, 0, 0, 5, multiplier=0)
