"""Disaggregation scores: ON/OFF accuracy, range-normalised RMSE,
energy error and the household energy partition.

Energies are left Riemann sums of power times the sample period.
The ``Total`` accuracy pools the confusion counts of all appliances.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .appliance_model import ApplianceHmm, FhmmModel
from .trace_io import PowerTrace, StateSequence


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n


def binary_events(states: StateSequence, model: ApplianceHmm) -> np.ndarray:
    """True where the appliance is in any state other than its OFF observation."""
    s = states.states
    if s.size and (s.min() < 0 or s.max() >= model.n_states):
        raise ValueError(f"{model.appliance_id}: state index out of range")
    return s != model.off_index


def accuracy(pred, truth) -> tuple[float, ConfusionCounts]:
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("empty sequences")
    counts = ConfusionCounts(
        tp=int(np.sum(p & t)), tn=int(np.sum(~p & ~t)),
        fp=int(np.sum(p & ~t)), fn=int(np.sum(~p & t)),
    )
    return counts.accuracy, counts


def state_accuracy(pred: StateSequence, truth: StateSequence) -> float:
    """Exact multi-state agreement rate (stricter than the ON/OFF accuracy)."""
    if len(pred) != len(truth) or len(pred) == 0:
        raise ValueError("sequences must be non-empty and of equal length")
    return float(np.mean(pred.states == truth.states))


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, PowerTrace) else np.asarray(x, dtype=float)


def nrmse(estimate, truth) -> float:
    """RMSE divided by ``max(truth) - min(truth)``; NaN for a constant truth."""
    e, t = _samples(estimate), _samples(truth)
    if e.shape != t.shape:
        raise ValueError(f"length mismatch: {e.size} vs {t.size}")
    span = float(t.max() - t.min()) if t.size else 0.0
    if span <= 0:
        return math.nan
    return math.sqrt(float(np.mean((e - t) ** 2))) / span


def energy(x, period: float | None = None) -> float:
    """Energy in watt-seconds (joules)."""
    if isinstance(x, PowerTrace):
        return float(x.samples.sum()) * x.sample_period
    return float(np.sum(x)) * (period or 1.0)


def energy_error(estimate, truth) -> float:
    """Percentage ``100 * |E_est - E_true| / E_true``."""
    e, t = _samples(estimate), _samples(truth)
    if e.shape != t.shape:
        raise ValueError(f"length mismatch: {e.size} vs {t.size}")
    e_true, e_est = energy(truth), energy(estimate)
    if e_true <= 0:
        raise ValueError("true energy is zero")
    return 100.0 * abs(e_est - e_true) / e_true


def energy_partition(per_appliance: Sequence[PowerTrace]) -> dict[str, float]:
    """Share of total energy per appliance, in percent."""
    if not per_appliance:
        raise ValueError("no traces")
    n = len(per_appliance[0])
    if any(len(p) != n for p in per_appliance):
        raise ValueError("traces are not aligned")
    energies = {p.appliance_id or f"trace{i}": energy(p) for i, p in enumerate(per_appliance)}
    total = sum(energies.values())
    if total <= 0:
        raise ValueError("total energy is zero")
    return {k: 100.0 * v / total for k, v in energies.items()}


# ---------------------------------------------------------------------------
# Reports


@dataclass
class ApplianceScore:
    acc: float
    nrmse: float
    energy_error_pct: float
    state_acc: float | None
    counts: ConfusionCounts


@dataclass
class MetricReport:
    per_appliance: dict[str, ApplianceScore]
    total: ApplianceScore
    partition_real: dict[str, float] = field(default_factory=dict)
    partition_estimated: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for name, sc in [*self.per_appliance.items(), ("Total", self.total)]:
            out.append({
                "appliance": name,
                "ACC": sc.acc,
                "RMSE": sc.nrmse,
                "energy_error_pct": sc.energy_error_pct,
                "state_acc": sc.state_acc if sc.state_acc is not None else math.nan,
                "tp": sc.counts.tp, "tn": sc.counts.tn, "fp": sc.counts.fp, "fn": sc.counts.fn,
            })
        return out

    def mean_acc(self) -> float:
        return float(np.mean([s.acc for s in self.per_appliance.values()]))

    def to_dict(self) -> dict:
        return {
            "per_appliance": {k: _score_dict(v) for k, v in self.per_appliance.items()},
            "total": _score_dict(self.total),
            "partition_real": self.partition_real,
            "partition_estimated": self.partition_estimated,
        }

    def write_csv(self, path: str | Path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})

    def write_partition_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["appliance", "real_pct", "estimated_pct"])
            for k in self.partition_real:
                w.writerow([k, _fmt(self.partition_real[k]), _fmt(self.partition_estimated.get(k, math.nan))])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(_nan_to_none(self.to_dict()), indent=2) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return v


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def _score_dict(sc: ApplianceScore) -> dict:
    d = asdict(sc)
    d["counts"]["n"] = sc.counts.n
    return d


def _safe(fn, *args) -> float:
    try:
        return fn(*args)
    except ValueError:
        return math.nan


def evaluate(model: FhmmModel, decided: Sequence[StateSequence], estimated: Sequence[PowerTrace],
             truth_states: Sequence[StateSequence], truth_power: Sequence[PowerTrace],
             estimated_total: PowerTrace | None = None) -> MetricReport:
    """Score a disaggregation against ground truth.

    Inputs are matched by appliance id.  Per-appliance RMSE and energy
    error compare power traces; the Total row pools ON/OFF counts and
    compares the summed estimate against the summed true load.
    """
    t_states = {s.appliance_id: s for s in truth_states}
    t_power = {p.appliance_id: p for p in truth_power}
    e_power = {p.appliance_id: p for p in estimated}
    per = {}
    pooled = ConfusionCounts(0, 0, 0, 0)
    for d in decided:
        aid = d.appliance_id
        chain = model.chain(aid)
        acc, counts = accuracy(binary_events(d, chain), binary_events(t_states[aid], chain))
        pooled = pooled + counts
        per[aid] = ApplianceScore(
            acc=acc,
            nrmse=nrmse(e_power[aid], t_power[aid]),
            energy_error_pct=_safe(energy_error, e_power[aid], t_power[aid]),
            state_acc=state_accuracy(d, t_states[aid]),
            counts=counts,
        )
    ids = [d.appliance_id for d in decided]
    true_total = np.sum([t_power[a].samples for a in ids], axis=0)
    est_total = (estimated_total.samples if estimated_total is not None
                 else np.sum([e_power[a].samples for a in ids], axis=0))
    period = truth_power[0].sample_period
    ref = truth_power[0]
    true_trace = PowerTrace(true_total, ref.start_time, period)
    est_trace = PowerTrace(est_total, ref.start_time, period)
    total = ApplianceScore(
        acc=pooled.accuracy,
        nrmse=nrmse(est_trace, true_trace),
        energy_error_pct=_safe(energy_error, est_trace, true_trace),
        state_acc=None,
        counts=pooled,
    )
    real = _safe_partition([t_power[a] for a in ids])
    est = _safe_partition([e_power[a] for a in ids])
    return MetricReport(per, total, real, est)


def _safe_partition(traces) -> dict[str, float]:
    try:
        return energy_partition(traces)
    except ValueError:
        return {t.appliance_id: math.nan for t in traces}


def evaluate_result(result, truth_states, truth_power) -> MetricReport:
    return evaluate(result.model, result.states, result.power, truth_states, truth_power,
                    result.aggregate_estimate)

