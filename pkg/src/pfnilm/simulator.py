"""Synthetic households with known ground truth, drawn from an FHMM."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Mapping

import numpy as np

from .appliance_model import (
    TESTED_APPLIANCES,
    ApplianceHmm,
    FhmmModel,
    catalog_hmm,
    dwell_transitions,
)
from .trace_io import EPOCH, PowerTrace, StateSequence


@dataclass(frozen=True)
class SimulationConfig:
    duration: int
    seed: int = 0
    noise_std: float = 0.0
    noise_kind: str = "gaussian"
    transitions: Mapping[str, object] = field(default_factory=dict)
    start_time: datetime = EPOCH
    sample_period: float = 1.0

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.noise_kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")


def sample_chain(rng: np.random.Generator, transition: np.ndarray, initial: np.ndarray, n: int) -> np.ndarray:
    """State path of length ``n``.

    Sampled through the embedded jump chain: a geometric holding time in
    the current state, then a jump drawn from the off-diagonal row.  This
    is exact for any transition matrix and fast for sticky ones.
    """
    k = transition.shape[0]
    out = np.empty(n, dtype=np.int64)
    s = int(rng.choice(k, p=initial))
    t = 0
    while t < n:
        stay = transition[s, s]
        if stay >= 1.0:
            hold = n - t
        else:
            hold = int(rng.geometric(1.0 - stay))
        out[t:t + hold] = s
        t += hold
        if t >= n:
            break
        jump = transition[s].copy()
        jump[s] = 0.0
        s = int(rng.choice(k, p=jump / jump.sum()))
    return out


def simulate(fhmm: FhmmModel, config: SimulationConfig):
    """Draw ``(aggregate, truth, per_appliance)`` from the model.

    Chains are sampled in model order from one generator seeded with
    ``config.seed``, then the aggregate noise is drawn; the output is
    bit-identical for identical inputs.
    """
    rng = np.random.default_rng(config.seed)
    n = config.duration
    truth, per_app = [], []
    for chain in fhmm.chains:
        a = np.asarray(config.transitions.get(chain.appliance_id, chain.transition), dtype=float)
        if a.shape != chain.transition.shape:
            raise ValueError(f"{chain.appliance_id}: transition override has wrong shape")
        path = sample_chain(rng, a, chain.initial, n)
        truth.append(StateSequence(chain.appliance_id, path))
        per_app.append(PowerTrace(chain.means[path], config.start_time, config.sample_period, chain.appliance_id))
    total = np.sum([p.samples for p in per_app], axis=0)
    if config.noise_std > 0:
        if config.noise_kind == "gaussian":
            total = total + rng.normal(0.0, config.noise_std, n)
        else:
            half = config.noise_std * np.sqrt(3.0)
            total = total + rng.uniform(-half, half, n)
    total = np.maximum(total, 0.0)
    aggregate = PowerTrace(total, config.start_time, config.sample_period)
    return aggregate, truth, per_app


# Mean dwell times in seconds per state (OFF first), loosely following
# typical daily usage of each device.
HOUSEHOLD_DWELL = {
    "fridge": (1200, 600, 900, 300),
    "dishwasher": (5 * 3600, 1800),
    "washing_machine": (8 * 3600, 900, 600, 600),
    "tv": (3 * 3600, 2 * 3600, 5400),
    "water_kettle": (4 * 3600, 150),
    "coffee_machine": (3 * 3600, 60),
    "vacuum_cleaner": (12 * 3600, 900),
}


def household_model(appliances=None, noise_std: float = 10.0, dwell=None) -> FhmmModel:
    """Seven-appliance household built from the catalogue power levels.

    Transition matrices come from ``dwell`` (default ``HOUSEHOLD_DWELL``)
    so simulated traces show realistic on/off runs; chains start in OFF.
    """
    dwell = dict(HOUSEHOLD_DWELL, **(dwell or {}))
    chains: list[ApplianceHmm] = []
    for aid in appliances or TESTED_APPLIANCES:
        base = catalog_hmm(aid)
        d = dwell[aid]
        if len(d) != base.n_states:
            raise ValueError(f"{aid}: {len(d)} dwell times for {base.n_states} states")
        init = np.zeros(base.n_states)
        init[base.off_index] = 1.0
        chains.append(base.with_transitions(dwell_transitions(d), init))
    return FhmmModel(tuple(chains), noise_std)


def group_traces(per_appliance, groups, noise_std: float = 0.0, seed: int = 0,
                 noise_kind: str = "gaussian") -> list[PowerTrace]:
    """Sub-metered group signals: summed appliance traces plus fresh meter noise.

    Each group meter gets its own noise stream derived from ``(seed, group index)``.
    """
    by_id = {p.appliance_id: p for p in per_appliance}
    out = []
    for gi, members in enumerate(groups):
        ref = by_id[members[0]]
        total = np.sum([by_id[a].samples for a in members], axis=0)
        if noise_std > 0:
            rng = np.random.default_rng([int(seed), gi])
            if noise_kind == "gaussian":
                total = total + rng.normal(0.0, noise_std, total.size)
            else:
                half = noise_std * np.sqrt(3.0)
                total = total + rng.uniform(-half, half, total.size)
        out.append(PowerTrace(np.maximum(total, 0.0), ref.start_time, ref.sample_period))
    return out
