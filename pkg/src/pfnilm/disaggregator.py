"""Online particle filter over a factorial HMM, with a per-appliance
decision rule on the posterior marginals.

Each particle is a joint state vector holding one observation index per
chain.  A step resamples (systematic, when the effective sample size of
the incoming weights is below ``resample_threshold * N``), advances every
chain through its transition matrix and reweights by a floored Gaussian
kernel on the aggregate-power residual.  The very first sample is
weighted against the prior without a transition.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .appliance_model import FhmmModel
from .trace_io import PowerTrace, StateSequence

DEFAULT_PARTICLES = 1000


class DisaggregationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PfConfig:
    particle_count: int = DEFAULT_PARTICLES
    resample_threshold: float = 0.5
    seed: int = 0
    likelihood_floor: float = 1e-12
    noise_std: float | None = None
    residual_chain: bool = False
    residual_step_std: float = 5.0

    def __post_init__(self):
        if int(self.particle_count) < 1:
            raise ValueError("particle_count must be >= 1")
        if not 0 < self.resample_threshold <= 1:
            raise ValueError("resample_threshold must be in (0, 1]")
        if not self.likelihood_floor > 0:
            raise ValueError("likelihood_floor must be > 0")
        if self.noise_std is not None and not self.noise_std > 0:
            raise ValueError("noise_std must be > 0")

    def sigma(self, fhmm: FhmmModel) -> float:
        return float(self.noise_std if self.noise_std is not None else fhmm.noise_std)


@dataclass(frozen=True, eq=False)
class ParticleSet:
    states: np.ndarray          # (N, n_chains) int64
    weights: np.ndarray         # (N,)
    rng_state: dict
    residual: np.ndarray | None = None

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def ess(self) -> float:
        return float(1.0 / np.dot(self.weights, self.weights))


class _Compiled:
    """Padded array views of a model used in the inner loop.

    Chain ``c`` state ``s`` lives at flat row ``offsets[c] + s``; padded
    cumulative entries are 1.0 so they are never selected.
    """

    def __init__(self, fhmm: FhmmModel):
        self.sizes = [c.n_states for c in fhmm.chains]
        kmax = max(self.sizes)
        self.offsets = np.cumsum([0] + self.sizes[:-1]).astype(np.int64)
        self.flat_means = np.concatenate([c.means for c in fhmm.chains])
        cum = np.ones((sum(self.sizes), kmax))
        for c, chain in enumerate(fhmm.chains):
            o = self.offsets[c]
            cum[o:o + chain.n_states, :chain.n_states] = _cumulative(chain.transition)
        self.kmax = kmax
        # rows shifted by their index form one sorted array, so a single
        # searchsorted inverts every particle's transition row at once
        self.sorted_cum = (cum + np.arange(cum.shape[0])[:, None]).ravel()
        self.init_cum = [_cumulative(c.initial[None, :])[0] for c in fhmm.chains]
        self.n_flat = int(sum(self.sizes))

    def propagate(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        rows = states + self.offsets
        pos = np.searchsorted(self.sorted_cum, rows + u, side="right")
        return pos - rows * self.kmax

    def expected(self, states: np.ndarray) -> np.ndarray:
        return self.flat_means[states + self.offsets].sum(axis=1)

    def marginals(self, states: np.ndarray, weights: np.ndarray) -> list[np.ndarray]:
        flat = np.bincount((states + self.offsets).ravel(),
                           weights=np.repeat(weights, states.shape[1]), minlength=self.n_flat)
        return [flat[o:o + k] for o, k in zip(self.offsets, self.sizes)]


def _cumulative(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return c


def _draw(cum_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # index of the first cumulative entry exceeding u
    return (cum_rows <= u[:, None]).sum(axis=1)


def _generator(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def _init_states(comp: _Compiled, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((n, len(comp.sizes)))
    states = np.empty((n, len(comp.sizes)), dtype=np.int64)
    for c, ic in enumerate(comp.init_cum):
        states[:, c] = _draw(np.broadcast_to(ic, (n, ic.size)), u[:, c])
    return states


def init(fhmm: FhmmModel, config: PfConfig = PfConfig()) -> ParticleSet:
    """Particles drawn from each chain's initial distribution, uniform weights."""
    n = int(config.particle_count)
    rng = np.random.default_rng(config.seed)
    states = _init_states(_Compiled(fhmm), n, rng)
    residual = np.zeros(n) if config.residual_chain else None
    return ParticleSet(states, np.full(n, 1.0 / n), rng.bit_generator.state, residual)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(weights), positions, side="right")
    return np.minimum(idx, n - 1)


class _Filter:
    """Mutable inner-loop state shared by ``step`` and ``disaggregate``."""

    def __init__(self, fhmm: FhmmModel, config: PfConfig, states, weights, rng, residual):
        self.comp = _Compiled(fhmm)
        self.config = config
        self.sigma = config.sigma(fhmm)
        self.states = states
        self.weights = weights
        self.rng = rng
        self.residual = residual
        self.last_ess = float(1.0 / np.dot(weights, weights))

    def advance(self, observation: float, propagate: bool = True) -> None:
        if not np.isfinite(observation):
            raise ValueError(f"non-finite observation {observation!r}")
        cfg = self.config
        rng = self.rng
        n = self.weights.size
        if propagate:
            ess = 1.0 / np.dot(self.weights, self.weights)
            if ess < cfg.resample_threshold * n:
                idx = systematic_resample(self.weights, rng)
                self.states = self.states[idx]
                if self.residual is not None:
                    self.residual = self.residual[idx]
                self.weights = np.full(n, 1.0 / n)
            u = rng.random((n, len(self.comp.sizes)))
            self.states = self.comp.propagate(self.states, u)
            if self.residual is not None:
                self.residual = np.abs(self.residual + rng.normal(0.0, cfg.residual_step_std, n))
        expected = self.expected()
        z = (observation - expected) / self.sigma
        lik = np.maximum(np.exp(-0.5 * z * z), cfg.likelihood_floor)
        w = self.weights * lik
        w /= w.sum()
        self.weights = w
        self.last_ess = float(1.0 / np.dot(w, w))

    def expected(self) -> np.ndarray:
        total = self.comp.expected(self.states)
        if self.residual is not None:
            total = total + self.residual
        return total


def step(particles: ParticleSet, observation: float, fhmm: FhmmModel, config: PfConfig = PfConfig(),
         propagate: bool = True) -> ParticleSet:
    """One filter update; returns a new set and leaves ``particles`` untouched.

    ``propagate=False`` skips resampling and the transition, i.e. only
    conditions the current particles on ``observation``.
    """
    f = _Filter(fhmm, config, particles.states, particles.weights.copy(),
                _generator(particles.rng_state), particles.residual)
    f.advance(float(observation), propagate)
    return ParticleSet(f.states, f.weights, f.rng.bit_generator.state, f.residual)


def posterior_marginals(particles: ParticleSet, fhmm: FhmmModel) -> list[np.ndarray]:
    return [
        np.bincount(particles.states[:, c], weights=particles.weights, minlength=chain.n_states)
        for c, chain in enumerate(fhmm.chains)
    ]


def decide(particles: ParticleSet, fhmm: FhmmModel) -> list[tuple[int, float]]:
    """Per chain: argmax of the weighted marginal (lowest index on ties) and its level."""
    out = []
    for chain, marg in zip(fhmm.chains, posterior_marginals(particles, fhmm)):
        s = int(np.argmax(marg))
        out.append((s, float(chain.means[s])))
    return out


@dataclass(eq=False)
class DisaggregationResult:
    model: FhmmModel
    states: list[StateSequence]
    power: list[PowerTrace]
    aggregate_estimate: PowerTrace
    ess: np.ndarray                       # (n_runs, T)
    metadata: dict = field(default_factory=dict)
    marginals: list[np.ndarray] | None = None
    residual: PowerTrace | None = None
    groups: list["DisaggregationResult"] | None = None

    @property
    def appliance_ids(self) -> list[str]:
        return [s.appliance_id for s in self.states]

    def index(self, appliance_id: str) -> int:
        try:
            return self.appliance_ids.index(appliance_id)
        except ValueError:
            raise KeyError(f"appliance {appliance_id!r} not in result") from None

    def states_of(self, appliance_id: str) -> StateSequence:
        return self.states[self.index(appliance_id)]

    def power_of(self, appliance_id: str) -> PowerTrace:
        return self.power[self.index(appliance_id)]

    def __len__(self) -> int:
        return len(self.aggregate_estimate)


def _sum_traces(power: Sequence[PowerTrace], like: PowerTrace) -> PowerTrace:
    total = np.zeros(len(like))
    for p in power:
        total = total + p.samples
    return PowerTrace(total, like.start_time, like.sample_period)


def disaggregate(fhmm: FhmmModel, aggregate: PowerTrace, config: PfConfig = PfConfig(),
                 record_marginals: bool = False) -> DisaggregationResult:
    """Filter the whole trace online; decision ``t`` uses samples ``0..t`` only."""
    t_start = time.perf_counter()
    p0 = init(fhmm, config)
    f = _Filter(fhmm, config, p0.states, p0.weights, _generator(p0.rng_state), p0.residual)
    obs = aggregate.samples
    n_t = obs.size
    n_c = len(fhmm.chains)
    decided = np.empty((n_t, n_c), dtype=np.int64)
    ess = np.empty(n_t)
    res_est = np.empty(n_t) if config.residual_chain else None
    margs = [np.empty((n_t, k)) for k in fhmm.shape] if record_marginals else None
    for t in range(n_t):
        try:
            f.advance(float(obs[t]), propagate=t > 0)
        except ValueError as exc:
            raise DisaggregationError(f"sample {t}: {exc}") from exc
        w = f.weights
        for c, m in enumerate(f.comp.marginals(f.states, w)):
            decided[t, c] = m.argmax()
            if margs is not None:
                margs[c][t] = m
        ess[t] = f.last_ess
        if res_est is not None:
            res_est[t] = np.dot(w, f.residual)
    elapsed = time.perf_counter() - t_start

    states, power = [], []
    for c, chain in enumerate(fhmm.chains):
        states.append(StateSequence(chain.appliance_id, decided[:, c]))
        power.append(PowerTrace(chain.means[decided[:, c]], aggregate.start_time,
                                aggregate.sample_period, chain.appliance_id))
    meta = {
        "seed": int(config.seed),
        "particle_count": int(config.particle_count),
        "resample_threshold": config.resample_threshold,
        "likelihood_floor": config.likelihood_floor,
        "noise_std": config.sigma(fhmm),
        "residual_chain": config.residual_chain,
        "samples": int(n_t),
        "elapsed_s": elapsed,
        "samples_per_s": n_t / elapsed if elapsed > 0 else float("inf"),
    }
    residual = (PowerTrace(res_est, aggregate.start_time, aggregate.sample_period, "residual")
                if res_est is not None else None)
    return DisaggregationResult(fhmm, states, power, _sum_traces(power, aggregate),
                                ess[None, :], meta, margs, residual)


def group_seed(seed: int, index: int) -> int:
    return (int(seed) + index) % 2**64


def disaggregate_grouped(groups: Sequence[tuple[FhmmModel, PowerTrace]], config: PfConfig = PfConfig(),
                         max_workers: int = 1) -> DisaggregationResult:
    """Disaggregate each sub-metered group on its own and merge the results.

    Group ``i`` runs with seed ``config.seed + i``, so a single group
    reproduces ``disaggregate`` exactly.
    """
    if not groups:
        raise ValueError("no groups")
    seen: set[str] = set()
    for model, _ in groups:
        overlap = seen.intersection(model.appliance_ids)
        if overlap:
            raise ValueError(f"appliances in more than one group: {sorted(overlap)}")
        seen.update(model.appliance_ids)
    ref = groups[0][1]
    for _, trace in groups[1:]:
        if (len(trace) != len(ref) or trace.sample_period != ref.sample_period
                or trace.start_time != ref.start_time):
            raise ValueError("group traces are not aligned")

    def run(i):
        model, trace = groups[i]
        cfg = PfConfig(**{**config.__dict__, "seed": group_seed(config.seed, i)})
        return disaggregate(model, trace, cfg)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            parts = list(pool.map(run, range(len(groups))))
    else:
        parts = [run(i) for i in range(len(groups))]

    chains = tuple(c for model, _ in groups for c in model.chains)
    merged_model = FhmmModel(chains, groups[0][0].noise_std)
    states = [s for p in parts for s in p.states]
    power = [pw for p in parts for pw in p.power]
    meta = dict(parts[0].metadata)
    meta["seed"] = int(config.seed)
    meta["groups"] = [{"appliances": p.appliance_ids, **p.metadata} for p in parts]
    meta["elapsed_s"] = sum(p.metadata["elapsed_s"] for p in parts)
    return DisaggregationResult(merged_model, states, power, _sum_traces(power, ref),
                                np.vstack([p.ess for p in parts]), meta, groups=parts)
