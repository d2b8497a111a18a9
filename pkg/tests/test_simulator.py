import numpy as np
import pytest

from oracles import stationary_two_state
from pfnilm.appliance_model import compose_fhmm, hmm_from_states
from pfnilm.simulator import SimulationConfig, group_traces, household_model, sample_chain, simulate


def always_on(aid, level):
    return hmm_from_states(aid, [level]).with_transitions([[0.0, 1.0], [0.0, 1.0]], [0.0, 1.0])


def test_degenerate_chain():
    f = compose_fhmm([always_on("a", 100)])
    agg, truth, per = simulate(f, SimulationConfig(5, seed=1))
    assert agg.samples.tolist() == [100.0] * 5
    assert truth[0].states.tolist() == [1] * 5


def test_two_always_on_chains():
    f = compose_fhmm([always_on("a", 100), always_on("b", 1750)])
    agg, _, _ = simulate(f, SimulationConfig(50, seed=2))
    assert np.all(agg.samples == 1850.0)


def test_stationary_occupancy():
    hmm = hmm_from_states("a", [100]).with_transitions([[0.9, 0.1], [0.2, 0.8]])
    _, truth, _ = simulate(compose_fhmm([hmm]), SimulationConfig(100_000, seed=0))
    target = stationary_two_state(0.1, 0.2)
    assert target == pytest.approx(1 / 3)
    occ = np.mean(truth[0].states == 1)
    assert abs(occ - target) <= 0.02 * target


def test_transition_frequencies_converge():
    a = np.array([[0.7, 0.2, 0.1], [0.3, 0.6, 0.1], [0.25, 0.25, 0.5]])
    hmm = hmm_from_states("a", [50, 500]).with_transitions(a)
    _, truth, _ = simulate(compose_fhmm([hmm]), SimulationConfig(200_000, seed=4))
    s = truth[0].states
    counts = np.zeros((3, 3))
    np.add.at(counts, (s[:-1], s[1:]), 1)
    # chi-square goodness of fit per row, 2 dof each; 6 dof total
    expected = counts.sum(axis=1, keepdims=True) * a
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 22.5  # chi2(6) 0.999 quantile


def test_override_transitions():
    hmm = hmm_from_states("a", [100])
    f = compose_fhmm([hmm])
    cfg = SimulationConfig(1000, seed=0, transitions={"a": [[1.0, 0.0], [1.0, 0.0]]})
    _, truth, _ = simulate(f, cfg)
    assert truth[0].states[1:].max() == 0


def test_determinism_and_noiseless_sum():
    f = household_model()
    cfg = SimulationConfig(20_000, seed=9, noise_std=0.0)
    a1, t1, p1 = simulate(f, cfg)
    a2, t2, p2 = simulate(f, cfg)
    assert a1.samples.tobytes() == a2.samples.tobytes()
    assert all(x == y for x, y in zip(t1, t2))
    assert np.array_equal(a1.samples, np.sum([p.samples for p in p1], axis=0))


def test_noise_clamped_and_seeded():
    f = compose_fhmm([hmm_from_states("a", [100], default_std=5)])
    cfg = SimulationConfig(2000, seed=3, noise_std=20)
    a1, _, _ = simulate(f, cfg)
    a2, _, _ = simulate(f, SimulationConfig(2000, seed=4, noise_std=20))
    assert a1.samples.min() >= 0
    assert not np.array_equal(a1.samples, a2.samples)


def test_uniform_noise_width():
    f = compose_fhmm([always_on("a", 1000)])
    agg, _, _ = simulate(f, SimulationConfig(50_000, seed=0, noise_std=10, noise_kind="uniform"))
    r = agg.samples - 1000
    assert np.abs(r).max() <= 10 * np.sqrt(3) + 1e-9
    assert r.std() == pytest.approx(10, rel=0.02)


def test_bad_config():
    with pytest.raises(ValueError):
        SimulationConfig(0)
    with pytest.raises(ValueError):
        SimulationConfig(10, noise_std=-1)


def test_absorbing_state_chain():
    rng = np.random.default_rng(0)
    path = sample_chain(rng, np.array([[1.0, 0.0], [0.5, 0.5]]), np.array([1.0, 0.0]), 100)
    assert path.tolist() == [0] * 100


def test_group_traces_partition():
    f = household_model()
    _, _, per = simulate(f, SimulationConfig(1000, seed=1))
    g = group_traces(per, [["tv", "fridge"], ["water_kettle"]])
    by = {p.appliance_id: p.samples for p in per}
    assert np.array_equal(g[0].samples, by["tv"] + by["fridge"])
    assert np.array_equal(g[1].samples, by["water_kettle"])
