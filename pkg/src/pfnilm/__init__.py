"""Particle-filter load disaggregation over factorial HMMs, with device
profile export for home energy management systems."""

__version__ = "0.1.0"

from .appliance_model import (  # noqa: E402
    ApplianceHmm,
    DeviceProfile,
    FhmmModel,
    HmmObservation,
    PhysicalService,
    ServiceState,
    compose_fhmm,
    hmm_from_states,
    validate_profile,
)
from .disaggregator import PfConfig, decide, disaggregate, disaggregate_grouped, init, step  # noqa: E402
from .metrics import accuracy, binary_events, energy_error, energy_partition, evaluate_result, nrmse  # noqa: E402
from .simulator import SimulationConfig, household_model, simulate  # noqa: E402
from .trace_io import PowerTrace, aggregate, decode_edges, derive_ground_truth, encode_edges, load_traces  # noqa: E402

__all__ = [
    "ApplianceHmm", "DeviceProfile", "FhmmModel", "HmmObservation", "PhysicalService", "ServiceState",
    "compose_fhmm", "hmm_from_states", "validate_profile", "PfConfig", "decide", "disaggregate",
    "disaggregate_grouped", "init", "step", "accuracy", "binary_events", "energy_error",
    "energy_partition", "evaluate_result", "nrmse", "SimulationConfig", "household_model", "simulate", "PowerTrace", "aggregate",
    "decode_edges", "derive_ground_truth", "encode_edges", "load_traces",
]
