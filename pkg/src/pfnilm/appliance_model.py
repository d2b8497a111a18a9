"""Appliance profiles, per-appliance identification HMMs and their
factorial composition.

Two views of an appliance live here:

* ``DeviceProfile`` is the static datasheet a HEMS consumes: physical
  services, their states, peak power, tolerance and discomfort
  sensitivities.
* ``ApplianceHmm`` is the load-identification model used by the
  disaggregator: observable power levels plus transition probabilities.

``FhmmModel`` stacks independent ``ApplianceHmm`` chains; the expected
household power of a joint state is the sum of the chain levels.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from datetime import datetime
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

DEFAULT_OFF_THRESHOLD = 5.0
DEFAULT_TOLERANCE = 0.05
MIN_POWER_STD = 5.0
STOCHASTIC_ATOL = 1e-9


class ModelError(ValueError):
    """Raised when an appliance model violates its structural invariants."""


class ApplianceType(str, enum.Enum):
    FRIDGE = "fridge"
    DISHWASHER = "dishwasher"
    WASHING_MACHINE = "washing machine"
    TV = "TV"
    WATER_KETTLE = "water kettle"
    COFFEE_MACHINE = "coffee machine"
    VACUUM_CLEANER = "vacuum cleaner"
    LIGHTING = "lighting"
    OVEN = "oven"
    MICROWAVE = "microwave"
    HOB = "hob"
    COMPUTER = "computer"
    GENERIC = "generic"

    @classmethod
    def parse(cls, label: str) -> "ApplianceType":
        """Case-insensitive lookup; raises ``KeyError`` for unknown labels."""
        norm = label.strip().lower().replace("_", " ")
        for member in cls:
            if member.value.lower() == norm:
                return member
        raise KeyError(label)


class ServiceStatus(str, enum.Enum):
    ON = "ON"
    OFF = "OFF"
    PAUSED = "PAUSED"


# ---------------------------------------------------------------------------
# Device profile taxonomy


@dataclass(frozen=True)
class ServiceState:
    """One operating state of a physical service.

    ``tolerance`` is a fraction of ``peak_power``.  A sensitivity of 0 s
    means the state is insensitive to start delay / interruption.
    """

    peak_power: float
    tolerance: float = DEFAULT_TOLERANCE
    duration: float | None = None
    delay_sensitivity: float = 0.0
    interruption_sensitivity: float = 0.0


@dataclass(frozen=True)
class Progress:
    start_time: datetime | None = None
    elapsed: float = 0.0


@dataclass(frozen=True)
class PhysicalService:
    name: str
    states: tuple[ServiceState, ...]
    energy_demand: float | None = None
    status: ServiceStatus = ServiceStatus.OFF
    progress: Progress = field(default_factory=Progress)


@dataclass(frozen=True)
class DeviceProfile:
    id: str
    appliance_type: ApplianceType
    services: tuple[PhysicalService, ...]
    manufacturer: str | None = None
    controllable: bool = False
    user_driven: bool = True
    energy_per_day: float | None = None
    virtual_services: tuple[str, ...] = ()


@dataclass(frozen=True)
class Issue:
    path: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.severity}: {self.path}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    def add(self, path: str, message: str, severity: str = "error") -> None:
        self.issues.append(Issue(path, message, severity))

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self) -> int:
        return len(self.issues)

    def __iter__(self) -> Iterator[Issue]:
        return iter(self.issues)

    def messages(self) -> list[str]:
        return [i.message for i in self.issues]


def validate_profile(profile: DeviceProfile, store: Iterable[DeviceProfile] = ()) -> ValidationReport:
    """Check a profile against the taxonomy invariants.

    ``store`` holds profiles already registered; a clashing ``id`` is
    reported.  Validation never raises.
    """
    report = ValidationReport()
    if not profile.id:
        report.add("id", "id empty")
    if any(other.id == profile.id and other is not profile for other in store):
        report.add("id", f"id {profile.id!r} not unique")
    if not profile.services:
        report.add("services", "services empty")
    if profile.energy_per_day is not None and profile.energy_per_day < 0:
        report.add("energy_per_day", "energy_per_day negative")
    for si, svc in enumerate(profile.services):
        base = f"services[{si}]"
        if svc.energy_demand is not None and svc.energy_demand < 0:
            report.add(f"{base}.energy_demand", "energy_demand negative")
        if svc.progress.elapsed < 0:
            report.add(f"{base}.progress.elapsed", "elapsed duration negative")
        if svc.status is ServiceStatus.PAUSED and not any(
            st.interruption_sensitivity > 0 for st in svc.states
        ):
            report.add(f"{base}.status", "PAUSED requires an interruptible state")
        for ti, st in enumerate(svc.states):
            sbase = f"{base}.states[{ti}]"
            if not st.peak_power >= 0:
                report.add(f"{sbase}.peak_power", "peak_power negative")
            if not 0 <= st.tolerance < 1:
                report.add(f"{sbase}.tolerance", "tolerance out of range")
            if st.duration is not None and st.duration < 0:
                report.add(f"{sbase}.duration", "duration negative")
            if st.delay_sensitivity < 0:
                report.add(f"{sbase}.delay_sensitivity", "sensitivity negative")
            if st.interruption_sensitivity < 0:
                report.add(f"{sbase}.interruption_sensitivity", "sensitivity negative")
    return report


# ---------------------------------------------------------------------------
# Identification models


@dataclass(frozen=True)
class HmmObservation:
    label: str
    mean_power: float
    power_std: float = MIN_POWER_STD

    def __post_init__(self):
        if not self.mean_power >= 0:
            raise ModelError(f"observation {self.label!r}: mean_power must be >= 0")
        if not self.power_std > 0:
            raise ModelError(f"observation {self.label!r}: power_std must be > 0")


def _as_matrix(rows) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in rows)


@dataclass(frozen=True)
class ApplianceHmm:
    """Load-identification model of one appliance.

    Transition and initial probabilities are stored as tuples so that
    instances compare and hash by value; ``transition`` and ``initial``
    give read-only numpy views.
    """

    appliance_id: str
    observations: tuple[HmmObservation, ...]
    transition_matrix: tuple[tuple[float, ...], ...]
    initial_distribution: tuple[float, ...]
    off_threshold: float = DEFAULT_OFF_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "transition_matrix", _as_matrix(self.transition_matrix))
        object.__setattr__(
            self, "initial_distribution", tuple(float(p) for p in self.initial_distribution)
        )
        k = len(self.observations)
        if k < 2:
            raise ModelError(f"{self.appliance_id}: need at least OFF and one ON observation")
        a = np.asarray(self.transition_matrix, dtype=float)
        if a.shape != (k, k):
            raise ModelError(f"{self.appliance_id}: transition matrix must be {k}x{k}")
        if (a < 0).any() or not np.allclose(a.sum(axis=1), 1.0, rtol=0, atol=STOCHASTIC_ATOL):
            raise ModelError(f"{self.appliance_id}: transition rows must be stochastic")
        p = np.asarray(self.initial_distribution, dtype=float)
        if p.shape != (k,) or (p < 0).any() or abs(p.sum() - 1.0) > STOCHASTIC_ATOL:
            raise ModelError(f"{self.appliance_id}: initial distribution must be a probability vector")
        labels = [o.label for o in self.observations]
        if len(set(labels)) != len(labels):
            raise ModelError(f"{self.appliance_id}: observation labels must be unique")
        offs = [i for i, o in enumerate(self.observations) if o.mean_power < self.off_threshold]
        if len(offs) != 1:
            raise ModelError(
                f"{self.appliance_id}: exactly one observation below {self.off_threshold} W "
                f"must designate OFF, found {len(offs)}"
            )

    @property
    def n_states(self) -> int:
        return len(self.observations)

    @cached_property
    def off_index(self) -> int:
        return next(i for i, o in enumerate(self.observations) if o.mean_power < self.off_threshold)

    @cached_property
    def means(self) -> np.ndarray:
        out = np.array([o.mean_power for o in self.observations], dtype=float)
        out.setflags(write=False)
        return out

    @cached_property
    def transition(self) -> np.ndarray:
        out = np.array(self.transition_matrix, dtype=float)
        out.setflags(write=False)
        return out

    @cached_property
    def initial(self) -> np.ndarray:
        out = np.array(self.initial_distribution, dtype=float)
        out.setflags(write=False)
        return out

    def with_transitions(self, matrix, initial=None) -> "ApplianceHmm":
        """Copy of this model with another transition matrix (and prior)."""
        return ApplianceHmm(
            self.appliance_id,
            self.observations,
            _as_matrix(np.asarray(matrix, dtype=float)),
            self.initial_distribution if initial is None else tuple(initial),
            self.off_threshold,
        )


def uniform_transitions(k: int) -> np.ndarray:
    return np.full((k, k), 1.0 / k)


def dwell_transitions(dwell: Sequence[float]) -> np.ndarray:
    """Transition matrix from mean dwell times (in samples) per state.

    State ``i`` is left with probability ``1/dwell[i]`` per sample; the
    leaving mass is spread evenly over the other states.
    """
    d = np.asarray(dwell, dtype=float)
    if (d < 1).any():
        raise ModelError("dwell times must be >= 1 sample")
    k = d.size
    leave = 1.0 / d
    a = np.repeat((leave / (k - 1))[:, None], k, axis=1)
    np.fill_diagonal(a, 1.0 - leave)
    return a


def hmm_from_states(
    appliance_id: str,
    power_levels: Sequence[float] | Mapping[str, float],
    off_threshold: float = DEFAULT_OFF_THRESHOLD,
    default_std: float | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> ApplianceHmm:
    """Build a uniform-transition HMM from listed power levels.

    An OFF observation at 0 W is added unless some level already lies
    below ``off_threshold``; OFF is always state 0.  Duplicate levels
    collapse onto the first occurrence.  Without ``default_std`` each
    level gets ``max(tolerance * level, 5 W)`` as feature width.
    """
    if isinstance(power_levels, Mapping):
        items = [(str(k), float(v)) for k, v in power_levels.items()]
    else:
        items = [(None, float(v)) for v in power_levels]
    if not items:
        raise ModelError(f"{appliance_id}: power_levels empty")
    if any(not np.isfinite(v) or v < 0 for _, v in items):
        raise ModelError(f"{appliance_id}: power levels must be finite and >= 0")

    seen: dict[float, str | None] = {}
    for label, v in items:
        if v not in seen:
            seen[v] = label
    off = [(v, lab) for v, lab in seen.items() if v < off_threshold]
    if len(off) > 1:
        raise ModelError(f"{appliance_id}: more than one level below the OFF threshold")
    on = [(v, lab) for v, lab in seen.items() if v >= off_threshold]
    off_level, off_label = off[0] if off else (0.0, None)

    def width(v: float) -> float:
        return default_std if default_std is not None else max(tolerance * v, MIN_POWER_STD)

    obs = [HmmObservation(off_label or "OFF", off_level, width(off_level))]
    for n, (v, lab) in enumerate(on, start=1):
        obs.append(HmmObservation(lab or ("ON" if len(on) == 1 else f"ON{n}"), v, width(v)))
    k = len(obs)
    return ApplianceHmm(
        appliance_id,
        tuple(obs),
        _as_matrix(uniform_transitions(k)),
        tuple([1.0 / k] * k),
        off_threshold,
    )


@dataclass(frozen=True)
class FhmmModel:
    """Independent appliance chains whose levels add up to the household load."""

    chains: tuple[ApplianceHmm, ...]
    noise_std: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "chains", tuple(self.chains))
        if not self.chains:
            raise ModelError("FHMM needs at least one chain")
        ids = [c.appliance_id for c in self.chains]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ModelError(f"duplicate appliance ids: {dup}")
        if not self.noise_std > 0:
            raise ModelError("noise_std must be > 0")

    @property
    def appliance_ids(self) -> list[str]:
        return [c.appliance_id for c in self.chains]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.n_states for c in self.chains)

    @property
    def joint_size(self) -> int:
        return int(np.prod(self.shape))

    def chain(self, appliance_id: str) -> ApplianceHmm:
        for c in self.chains:
            if c.appliance_id == appliance_id:
                return c
        raise KeyError(appliance_id)

    def joint_states(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(k) for k in self.shape))

    def expected_power(self, joint_state: Sequence[int]) -> float:
        return float(sum(c.means[s] for c, s in zip(self.chains, joint_state)))

    def subset(self, appliance_ids: Iterable[str]) -> "FhmmModel":
        wanted = list(appliance_ids)
        return FhmmModel(tuple(self.chain(a) for a in wanted), self.noise_std)


def compose_fhmm(models: Sequence[ApplianceHmm], noise_std: float = 10.0) -> FhmmModel:
    return FhmmModel(tuple(models), noise_std)


# ---------------------------------------------------------------------------
# Reference appliance catalogue (Austrian/Italian household survey)


@dataclass(frozen=True)
class CatalogEntry:
    appliance_type: ApplianceType
    controllable: bool
    user_driven: bool
    tested: bool
    power_levels: tuple[float, ...]


APPLIANCE_CATALOG: dict[str, CatalogEntry] = {
    "fridge": CatalogEntry(ApplianceType.FRIDGE, True, False, True, (8, 80, 230)),
    "lighting": CatalogEntry(ApplianceType.LIGHTING, True, True, False, ()),
    "dishwasher": CatalogEntry(ApplianceType.DISHWASHER, True, True, True, (1900,)),
    "oven": CatalogEntry(ApplianceType.OVEN, False, True, False, ()),
    "microwave": CatalogEntry(ApplianceType.MICROWAVE, False, True, False, ()),
    "hob": CatalogEntry(ApplianceType.HOB, False, True, False, ()),
    "washing_machine": CatalogEntry(ApplianceType.WASHING_MACHINE, True, True, True, (190, 420, 1900)),
    "tv": CatalogEntry(ApplianceType.TV, False, True, True, (10, 160)),
    "computer": CatalogEntry(ApplianceType.COMPUTER, False, True, False, ()),
    "water_kettle": CatalogEntry(ApplianceType.WATER_KETTLE, False, True, True, (1750,)),
    "coffee_machine": CatalogEntry(ApplianceType.COFFEE_MACHINE, False, True, True, (1280,)),
    "vacuum_cleaner": CatalogEntry(ApplianceType.VACUUM_CLEANER, False, True, True, (1200,)),
}

TESTED_APPLIANCES = [k for k, v in APPLIANCE_CATALOG.items() if v.tested]


def catalog_hmm(appliance_id: str, **kwargs) -> ApplianceHmm:
    return hmm_from_states(appliance_id, APPLIANCE_CATALOG[appliance_id].power_levels, **kwargs)
