"""Acceptance gate: one PASS/FAIL line per criterion (run with ``-s`` to see
them inline; they are also echoed in the terminal summary)."""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acceptance_log import record
from oracles import exact_filter_marginals
from pfnilm.appliance_model import catalog_hmm, compose_fhmm, hmm_from_states
from pfnilm.disaggregator import PfConfig, disaggregate, disaggregate_grouped, init, step, systematic_resample
from pfnilm.metrics import (
    accuracy,
    binary_events,
    energy_error,
    energy_partition,
    evaluate,
    evaluate_result,
    nrmse,
)
from pfnilm.profiles import export_document, import_document, infer_identification_model
from pfnilm.simulator import SimulationConfig, group_traces, household_model, simulate
from pfnilm.trace_io import PowerTrace, StateSequence, TraceSchema, decode_edges, encode_edges, load_traces

GROUPS = [["tv", "vacuum_cleaner", "washing_machine"],
          ["coffee_machine", "dishwasher", "fridge", "water_kettle"]]
DAY = 86400


def check(number, name, passed, detail):
    record(number, name, bool(passed), detail)
    assert passed, detail


@pytest.fixture(scope="module")
def household_day():
    f = household_model()
    agg, ts, tp = simulate(f, SimulationConfig(DAY, seed=1, noise_std=10))
    res = disaggregate(f, agg, PfConfig(particle_count=1000, seed=1))
    return f, res, evaluate_result(res, ts, tp)


def test_criterion_1_metric_exactness():
    pred = np.array([1, 1, 1, 0, 0, 0, 0, 0, 1, 0], bool)
    truth = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 1], bool)
    acc, c = accuracy(pred, truth)
    errs = [abs(acc - 0.8), abs(nrmse([100.0, 0.0], [0.0, 100.0]) - 1.0),
            abs(energy_error(PowerTrace([110.0] * 7), PowerTrace([100.0] * 7)) - 10.0),
            abs(nrmse([3.0, 1.0, 2.0], [1.0, 1.0, 3.0]) - np.sqrt(5 / 3) / 2)]
    ok = (c.tp, c.tn, c.fp, c.fn) == (3, 5, 1, 1) and max(errs) <= 1e-12
    check(1, "metric exactness", ok, f"max abs error {max(errs):.1e}")


def toy_model():
    a = hmm_from_states("a", [60, 130]).with_transitions(
        [[0.9, 0.07, 0.03], [0.1, 0.85, 0.05], [0.05, 0.15, 0.8]])
    b = hmm_from_states("b", [70]).with_transitions([[0.95, 0.05], [0.1, 0.9]], [0.6, 0.4])
    return compose_fhmm([a, b], noise_std=10)


def test_criterion_2_oracle_equivalence():
    f = toy_model()
    chains = [(c.means.tolist(), c.transition.tolist(), c.initial.tolist()) for c in f.chains]
    worst = 0.0
    for seed in range(5):
        agg, _, _ = simulate(f, SimulationConfig(200, seed=100 + seed, noise_std=10))
        res = disaggregate(f, agg, PfConfig(particle_count=10_000, seed=seed), record_marginals=True)
        exact = exact_filter_marginals(chains, 10.0, agg.samples.tolist())
        for pf_m, ex_m in zip(res.marginals, exact):
            worst = max(worst, float(0.5 * np.abs(pf_m - ex_m).sum(axis=1).max()))
    check(2, "oracle equivalence", worst <= 0.05, f"max TV {worst:.4f} over 5 seeds x 200 samples")


def pair_model():
    a = hmm_from_states("low", [100]).with_transitions([[0.995, 0.005], [0.01, 0.99]], [1, 0])
    b = hmm_from_states("kettle", [1750]).with_transitions([[0.998, 0.002], [0.02, 0.98]], [1, 0])
    return compose_fhmm([a, b], noise_std=10)


def test_criterion_3_separable_recovery():
    hmm = hmm_from_states("kettle", [1750]).with_transitions([[0.99, 0.01], [0.05, 0.95]], [1, 0])
    single = compose_fhmm([hmm], noise_std=10)
    agg, truth, _ = simulate(single, SimulationConfig(5000, seed=2))
    res = disaggregate(single, agg, PfConfig(particle_count=1000, seed=2))
    acc1, _ = accuracy(binary_events(res.states[0], hmm), binary_events(truth[0], hmm))

    f = pair_model()
    agg, truth, _ = simulate(f, SimulationConfig(20_000, seed=3, noise_std=10))
    res = disaggregate(f, agg, PfConfig(particle_count=1000, seed=3))
    accs = [accuracy(binary_events(res.states[c], ch), binary_events(truth[c], ch))[0]
            for c, ch in enumerate(f.chains)]
    ok = acc1 == 1.0 and min(accs) >= 0.99
    check(3, "separable recovery", ok, f"noiseless ACC {acc1:.4f}; pair ACC {accs[0]:.4f}/{accs[1]:.4f}")


def test_criterion_4_household_benchmark(household_day):
    _, _, rep = household_day
    total = rep.total.acc
    per = ", ".join(f"{k} {v.acc:.3f}" for k, v in rep.per_appliance.items())
    check(4, "household benchmark", total >= 0.90, f"total ACC {total:.4f}; {per}")


def _greend_trace():
    root = os.environ.get("PFNILM_DATA_ROOT")
    path = Path(root) / "greend_house0.csv" if root else None
    return path if path and path.is_file() else None


@pytest.mark.skipif(_greend_trace() is None, reason="GREEND house-0 trace not provided")
def test_criterion_4_greend_subcheck():
    path = _greend_trace()
    f = household_model()
    truth = load_traces(path, TraceSchema(power_columns={a: a for a in f.appliance_ids}))
    from pfnilm.trace_io import aggregate, derive_ground_truth
    agg = aggregate(truth)
    states = [derive_ground_truth(p, f.chain(p.appliance_id)) for p in truth]
    totals = [evaluate_result(disaggregate(f, agg, PfConfig(seed=s)), states, truth).total.acc for s in range(3)]
    mean = float(np.mean(totals))
    check(4, "GREEND house-0 sub-check", abs(mean - 0.9393) <= 0.05, f"mean total ACC {mean:.4f}")


def test_criterion_5_grouping_trend():
    f = household_model()
    full, grouped = [], []
    for seed in range(10):
        agg, ts, tp = simulate(f, SimulationConfig(DAY, seed=seed, noise_std=10))
        full.append(evaluate_result(disaggregate(f, agg, PfConfig(seed=seed)), ts, tp).mean_acc())
        traces = group_traces(tp, GROUPS, 10.0, seed)
        g = disaggregate_grouped([(f.subset(ids), t) for ids, t in zip(GROUPS, traces)], PfConfig(seed=seed))
        grouped.append(evaluate(g.model, g.states, g.power, ts, tp).mean_acc())
    mf, mg = float(np.mean(full)), float(np.mean(grouped))
    check(5, "grouping trend", mg >= mf, f"grouped {mg:.4f} vs full {mf:.4f} over 10 seeds")


def test_criterion_6_energy_partition(household_day):
    _, _, rep = household_day
    sums = (sum(rep.partition_real.values()), sum(rep.partition_estimated.values()))
    f = pair_model()
    _, truth, per = simulate(f, SimulationConfig(20_000, seed=5, noise_std=0.0))
    agg = PowerTrace(np.sum([p.samples for p in per], axis=0))
    res = disaggregate(f, agg, PfConfig(particle_count=1000, seed=5))
    real, est = energy_partition(per), energy_partition(res.power)
    gap = max(abs(real[k] - est[k]) for k in real)
    ok = all(abs(s - 100) <= 0.5 for s in sums) and gap <= 1.0
    check(6, "energy partition", ok, f"sums {sums[0]:.3f}/{sums[1]:.3f}; separable max gap {gap:.4f} pp")


def test_criterion_7_throughput(household_day):
    _, res, _ = household_day
    rate = res.metadata["samples_per_s"]
    check(7, "throughput", rate >= 1000, f"{rate:.0f} samples/s at N=1000, 7 appliances")


# --- criterion 8: property suites -----------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0, 3000), min_size=1, max_size=25), st.integers(1, 80))
def _weights_and_count(seed, obs, n):
    f = household_model(["fridge", "tv", "water_kettle"])
    cfg = PfConfig(particle_count=n, seed=seed)
    ps = init(f, cfg)
    for t, y in enumerate(obs):
        ps = step(ps, y, f, cfg, propagate=t > 0)
        assert abs(ps.weights.sum() - 1) <= 1e-9 and len(ps) == n


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0, 1e-3) | st.floats(0.5, 1), min_size=1, max_size=60))
def _resample_valid(seed, w):
    w = np.asarray(w) + 1e-12
    w = w / w.sum()
    idx = systematic_resample(w, np.random.default_rng(seed))
    assert idx.shape == w.shape and idx.min() >= 0 and idx.max() < w.size


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 120))
def _determinism(seed, n):
    f = household_model(["fridge", "washing_machine"])
    agg, _, _ = simulate(f, SimulationConfig(n, seed=seed, noise_std=10))
    a = disaggregate(f, agg, PfConfig(particle_count=64, seed=seed))
    b = disaggregate(f, agg, PfConfig(particle_count=64, seed=seed))
    assert all(x == y for x, y in zip(a.states, b.states))
    assert a.ess.tobytes() == b.ess.tobytes()
    assert a.aggregate_estimate.samples.tobytes() == b.aggregate_estimate.samples.tobytes()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5000), min_size=1, max_size=200), st.floats(0, 500))
def _edges(signal, threshold):
    tr = PowerTrace(signal)
    back = decode_edges(encode_edges(tr, threshold))
    assert np.all(np.abs(back.samples - tr.samples) <= threshold)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["fridge", "washing_machine", "tv", "water_kettle"]),
       st.lists(st.integers(0, 3), min_size=2, max_size=200))
def _inferred_documents(aid, raw):
    chain = catalog_hmm(aid)
    s = np.asarray(raw) % chain.n_states
    f = compose_fhmm([chain])
    like = PowerTrace(np.zeros(s.size))
    from pfnilm.disaggregator import DisaggregationResult
    from pfnilm.profiles import infer_profile
    from pfnilm.trace_io import states_to_power
    seq = StateSequence(aid, s)
    power = states_to_power(seq, chain, like)
    res = DisaggregationResult(f, [seq], [power], power, np.ones((1, s.size)))
    model = infer_identification_model(res, aid)
    assert np.allclose(model.transition.sum(axis=1), 1.0, atol=1e-12) and (model.transition >= 0).all()
    assert import_document(export_document(model)) == model
    prof = infer_profile(res, aid)
    assert import_document(export_document(prof)) == prof


def test_criterion_8_invariant_suites():
    suites = {"weight normalisation/particle count": _weights_and_count,
              "resample indices": _resample_valid,
              "seed determinism": _determinism,
              "edge round-trip bound": _edges,
              "export/import identity + row-stochastic": _inferred_documents}
    failed = []
    t0 = time.perf_counter()
    for name, fn in suites.items():
        try:
            fn()
        except Exception as exc:  # surfaced in the criterion line
            failed.append(f"{name}: {type(exc).__name__}")
    detail = f"{len(suites) - len(failed)}/{len(suites)} suites in {time.perf_counter() - t0:.1f}s"
    check(8, "invariant suites", not failed, detail + ("; " + "; ".join(failed) if failed else ""))
