"""Device profiles and identification models inferred from disaggregation
output, and their JSON document form.

Document layout is published as JSON Schema under ``pfnilm/schemas``;
every document carries ``schema`` and ``version`` tags.
"""

from __future__ import annotations

import json
from datetime import datetime, timedelta
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .appliance_model import (
    APPLIANCE_CATALOG,
    DEFAULT_TOLERANCE,
    ApplianceHmm,
    ApplianceType,
    DeviceProfile,
    HmmObservation,
    ModelError,
    PhysicalService,
    Progress,
    ServiceState,
    ServiceStatus,
    validate_profile,
)
from .metrics import energy

PROFILE_SCHEMA = "pfnilm/device-profile"
MODEL_SCHEMA = "pfnilm/identification-model"
SCHEMA_VERSION = 1
SECONDS_PER_DAY = 86400.0


class DocumentError(ValueError):
    """Schema violation on import; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# Inference from decided state sequences


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """(start, end) index pairs of True runs."""
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def _resolve_type(appliance_id: str, appliance_type) -> ApplianceType:
    if appliance_type is not None:
        return appliance_type if isinstance(appliance_type, ApplianceType) else ApplianceType.parse(appliance_type)
    if appliance_id in APPLIANCE_CATALOG:
        return APPLIANCE_CATALOG[appliance_id].appliance_type
    try:
        return ApplianceType.parse(appliance_id)
    except KeyError:
        return ApplianceType.GENERIC


def infer_profile(result, appliance_id: str, appliance_type=None, tolerance: float = DEFAULT_TOLERANCE,
                  service_name: str = "operation", manufacturer: str | None = None,
                  user_driven: bool | None = None) -> DeviceProfile:
    """Datasheet of a detected appliance.

    One physical service whose states are the distinct ON levels seen in
    the decisions. Energies are in kWh: ``energy_per_day`` scales the
    estimated energy to 24 h and the service ``energy_demand`` is the
    mean energy per ON run. Progress describes the most recent run.
    NILM offers no control path, so ``controllable`` is always False.
    """
    seq = result.states_of(appliance_id)
    power = result.power_of(appliance_id)
    chain = result.model.chain(appliance_id)
    if len(seq) == 0:
        raise ValueError(f"{appliance_id}: no decided samples")
    period = power.sample_period
    s = seq.states
    on = s != chain.off_index

    states = []
    for k in range(chain.n_states):
        if k == chain.off_index or not np.any(s == k):
            continue
        runs = _runs(s == k)
        states.append(ServiceState(
            peak_power=float(chain.means[k]),
            tolerance=tolerance,
            duration=float(np.mean([e - b for b, e in runs])) * period,
        ))

    e_kwh = energy(power) / 3.6e6
    per_day = e_kwh * SECONDS_PER_DAY / power.duration
    on_runs = _runs(on)
    demand = e_kwh / len(on_runs) if on_runs else None
    if on_runs:
        b, e = on_runs[-1]
        progress = Progress(power.start_time + timedelta(seconds=b * period), float(e - b) * period)
    else:
        progress = Progress(None, 0.0)
    status = ServiceStatus.ON if on[-1] else ServiceStatus.OFF

    if user_driven is None:
        entry = APPLIANCE_CATALOG.get(appliance_id)
        user_driven = entry.user_driven if entry else True
    service = PhysicalService(service_name, tuple(states), demand, status, progress)
    return DeviceProfile(
        id=appliance_id,
        appliance_type=_resolve_type(appliance_id, appliance_type),
        services=(service,),
        manufacturer=manufacturer,
        controllable=False,
        user_driven=user_driven,
        energy_per_day=per_day,
    )


def infer_identification_model(result, appliance_id: str, smoothing: float = 1.0) -> ApplianceHmm:
    """Transition matrix from decided-state transition counts (add-one smoothed).

    The initial distribution is the empirical state frequency.
    """
    s = result.states_of(appliance_id).states
    chain = result.model.chain(appliance_id)
    if s.size < 2:
        raise ValueError(f"{appliance_id}: need at least two decided samples")
    k = chain.n_states
    counts = np.bincount(s[:-1] * k + s[1:], minlength=k * k).reshape(k, k).astype(float)
    counts += smoothing
    matrix = counts / counts.sum(axis=1, keepdims=True)
    freq = np.bincount(s, minlength=k) / s.size
    return ApplianceHmm(appliance_id, chain.observations, matrix, tuple(freq), chain.off_threshold)


# ---------------------------------------------------------------------------
# Documents


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("pfnilm").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _check(doc: dict, name: str) -> None:
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    path = "/".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        path = f"{path}/{missing}" if path else missing
    raise DocumentError(path, err.message)


def profile_to_dict(profile: DeviceProfile) -> dict:
    return {
        "schema": PROFILE_SCHEMA,
        "version": SCHEMA_VERSION,
        "id": profile.id,
        "appliance_type": profile.appliance_type.value,
        "manufacturer": profile.manufacturer,
        "controllable": profile.controllable,
        "user_driven": profile.user_driven,
        "energy_per_day": profile.energy_per_day,
        "virtual_services": list(profile.virtual_services),
        "services": [
            {
                "name": svc.name,
                "energy_demand": svc.energy_demand,
                "status": svc.status.value,
                "progress": {
                    "start_time": svc.progress.start_time.isoformat() if svc.progress.start_time else None,
                    "elapsed": svc.progress.elapsed,
                },
                "states": [
                    {
                        "peak_power": st.peak_power,
                        "tolerance": st.tolerance,
                        "duration": st.duration,
                        "delay_sensitivity": st.delay_sensitivity,
                        "interruption_sensitivity": st.interruption_sensitivity,
                    }
                    for st in svc.states
                ],
            }
            for svc in profile.services
        ],
    }


def profile_from_dict(doc: dict) -> DeviceProfile:
    _check(doc, "device-profile")
    try:
        atype = ApplianceType.parse(doc["appliance_type"])
    except KeyError:
        raise DocumentError("appliance_type", f"unknown appliance type {doc['appliance_type']!r}") from None
    services = []
    for svc in doc["services"]:
        start = svc["progress"]["start_time"]
        services.append(PhysicalService(
            name=svc["name"],
            states=tuple(
                ServiceState(st["peak_power"], st["tolerance"], st.get("duration"),
                             st["delay_sensitivity"], st["interruption_sensitivity"])
                for st in svc["states"]
            ),
            energy_demand=svc.get("energy_demand"),
            status=ServiceStatus(svc["status"]),
            progress=Progress(datetime.fromisoformat(start) if start else None, svc["progress"]["elapsed"]),
        ))
    profile = DeviceProfile(
        id=doc["id"],
        appliance_type=atype,
        services=tuple(services),
        manufacturer=doc.get("manufacturer"),
        controllable=doc["controllable"],
        user_driven=doc["user_driven"],
        energy_per_day=doc.get("energy_per_day"),
        virtual_services=tuple(doc.get("virtual_services", ())),
    )
    report = validate_profile(profile)
    if not report.ok:
        first = report.errors[0]
        raise DocumentError(first.path, first.message)
    return profile


def model_to_dict(model: ApplianceHmm) -> dict:
    labels = [o.label for o in model.observations]
    return {
        "schema": MODEL_SCHEMA,
        "version": SCHEMA_VERSION,
        "appliance_id": model.appliance_id,
        "feature": "active_power",
        "off_threshold": model.off_threshold,
        "observations": [
            {
                "label": o.label,
                "active_power": {"mean": o.mean_power, "std": o.power_std},
                "initial_probability": model.initial_distribution[i],
                "transitions": dict(zip(labels, model.transition_matrix[i])),
            }
            for i, o in enumerate(model.observations)
        ],
    }


def model_from_dict(doc: dict) -> ApplianceHmm:
    _check(doc, "identification-model")
    obs_docs = doc["observations"]
    labels = [o["label"] for o in obs_docs]
    rows = []
    for i, o in enumerate(obs_docs):
        unknown = set(o["transitions"]) - set(labels)
        if unknown:
            raise DocumentError(f"observations/{i}/transitions", f"unknown targets {sorted(unknown)}")
        rows.append([o["transitions"].get(lab, 0.0) for lab in labels])
    try:
        return ApplianceHmm(
            doc["appliance_id"],
            tuple(HmmObservation(o["label"], o["active_power"]["mean"], o["active_power"]["std"]) for o in obs_docs),
            rows,
            tuple(o["initial_probability"] for o in obs_docs),
            doc["off_threshold"],
        )
    except ModelError as exc:
        raise DocumentError("observations", str(exc)) from None


def export_document(document: DeviceProfile | ApplianceHmm) -> str:
    if isinstance(document, DeviceProfile):
        data = profile_to_dict(document)
    elif isinstance(document, ApplianceHmm):
        data = model_to_dict(document)
    else:
        raise TypeError(f"cannot export {type(document).__name__}")
    return json.dumps(data, indent=2) + "\n"


def import_document(text: str) -> DeviceProfile | ApplianceHmm:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError("", f"not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DocumentError("", "document must be an object")
    kind = doc.get("schema")
    if kind == PROFILE_SCHEMA:
        return profile_from_dict(doc)
    if kind == MODEL_SCHEMA:
        return model_from_dict(doc)
    raise DocumentError("schema", f"unknown document schema {kind!r}")


def save_document(document, path: str | Path) -> None:
    Path(path).write_text(export_document(document))


def load_document(path: str | Path):
    return import_document(Path(path).read_text())
