"""Declarative scenario runs: config validation, model building and the
report writer used by the command line.

Scenario kinds:

``aggregate-nilm``
    per-appliance traces are summed into one household signal and
    disaggregated against all appliance models at once.
``grouped``
    the same traces are summed per sub-metered group and each group is
    disaggregated on its own; per-group and merged reports are written.
``simulate-bench``
    a synthetic household is drawn from the configured models; optional
    ``groups`` add a grouped run on the same simulated appliances.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import shutil
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .appliance_model import (
    APPLIANCE_CATALOG,
    DEFAULT_OFF_THRESHOLD,
    DEFAULT_TOLERANCE,
    ApplianceHmm,
    ApplianceType,
    FhmmModel,
    ModelError,
    ValidationReport,
    dwell_transitions,
    hmm_from_states,
)
from .disaggregator import DEFAULT_PARTICLES, PfConfig, disaggregate, disaggregate_grouped
from .metrics import MetricReport, evaluate, evaluate_result
from .plotting import plot_disaggregation, plot_partition
from .profiles import infer_identification_model, infer_profile, save_document
from .simulator import HOUSEHOLD_DWELL, SimulationConfig, group_traces, simulate
from .trace_io import TraceSchema, aggregate, derive_ground_truth, load_traces, write_traces

log = logging.getLogger(__name__)

SCENARIOS = ("aggregate-nilm", "grouped", "simulate-bench")
DATA_ROOT_ENV = "PFNILM_DATA_ROOT"
RUN_MARKER = "run.json"


class ScenarioError(RuntimeError):
    pass


class ConfigError(ScenarioError):
    def __init__(self, report: ValidationReport):
        super().__init__("; ".join(str(i) for i in report.errors))
        self.report = report


def read_config(path: str | Path) -> dict:
    """Load a YAML/JSON config; a previous ``run.json`` yields its stored config."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: config must be a mapping")
    if "pfnilm_run" in doc and "config" in doc:
        doc = doc["config"]
    doc.setdefault("_base_dir", str(path.parent.resolve()))
    return doc


# ---------------------------------------------------------------------------
# Validation


def _resolve_input(path: str, base_dir: str | None) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get(DATA_ROOT_ENV) or base_dir or "."
    return Path(root) / p


def validate_config(doc: dict) -> tuple[ValidationReport, dict]:
    """Check a config without side effects.

    Returns the report and a normalised copy with defaults filled in;
    defaults are noted as ``info`` issues.
    """
    rep = ValidationReport()
    cfg = copy.deepcopy(doc) if isinstance(doc, dict) else {}
    if not isinstance(doc, dict):
        rep.add("", "config must be a mapping")
        return rep, cfg

    kind = cfg.get("scenario")
    if kind not in SCENARIOS:
        rep.add("scenario", f"scenario must be one of {list(SCENARIOS)}, got {kind!r}")
    if "seed" not in cfg:
        cfg["seed"] = 0
        rep.add("seed", "seed defaulted to 0", "info")
    elif not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        rep.add("seed", "seed must be a non-negative integer")

    pf = cfg.setdefault("pf", {})
    if not isinstance(pf, dict):
        rep.add("pf", "pf must be a mapping")
        pf = cfg["pf"] = {}
    if "particle_count" not in pf:
        pf["particle_count"] = DEFAULT_PARTICLES
        rep.add("pf.particle_count", f"particle_count defaulted to {DEFAULT_PARTICLES}", "info")
    known_pf = {"particle_count", "resample_threshold", "likelihood_floor", "noise_std",
                "residual_chain", "residual_step_std"}
    for key in sorted(set(pf) - known_pf):
        rep.add(f"pf.{key}", "unknown PF setting")
    try:
        PfConfig(**{k: v for k, v in pf.items() if k in known_pf})
    except (TypeError, ValueError) as exc:
        rep.add("pf", str(exc))

    model = cfg.setdefault("model", {})
    model.setdefault("noise_std", 10.0)
    model.setdefault("off_threshold", DEFAULT_OFF_THRESHOLD)
    if not (isinstance(model["noise_std"], (int, float)) and model["noise_std"] > 0):
        rep.add("model.noise_std", "noise_std must be > 0")

    apps = cfg.get("appliances")
    if apps is None and kind == "simulate-bench":
        apps = cfg["appliances"] = [{"id": a} for a in HOUSEHOLD_DWELL]
        rep.add("appliances", "appliances defaulted to the seven-appliance household", "info")
    if not isinstance(apps, list) or not apps:
        rep.add("appliances", "appliances must be a non-empty list")
        apps = []
    ids: list[str] = []
    for i, app in enumerate(apps):
        path = f"appliances[{i}]"
        if isinstance(app, str):
            app = apps[i] = {"id": app}
        if not isinstance(app, dict) or not app.get("id"):
            rep.add(path, "appliance needs an id")
            continue
        aid = str(app["id"])
        if aid in ids:
            rep.add(f"{path}.id", f"duplicate appliance id {aid!r}")
        ids.append(aid)
        entry = APPLIANCE_CATALOG.get(aid)
        if "power_levels" not in app:
            if entry and entry.power_levels:
                app["power_levels"] = list(entry.power_levels)
                rep.add(f"{path}.power_levels", "power levels taken from the catalogue", "info")
            else:
                rep.add(f"{path}.power_levels", f"no power levels for {aid!r}")
        label = app.get("type", entry.appliance_type.value if entry else None)
        if label is None:
            app["type"] = ApplianceType.GENERIC.value
        else:
            try:
                app["type"] = ApplianceType.parse(str(label)).value
            except KeyError:
                rep.add(f"{path}.type", f"unknown appliance type {label!r}, treated as generic", "warning")
                app["type"] = ApplianceType.GENERIC.value
        if kind == "simulate-bench" and "transition" not in app and "dwell" not in app and aid in HOUSEHOLD_DWELL:
            app["dwell"] = list(HOUSEHOLD_DWELL[aid])
        if "power_levels" not in app:
            continue
        try:
            _build_hmm(app, model["off_threshold"])
        except (ModelError, TypeError, ValueError) as exc:
            rep.add(path, str(exc))

    groups = cfg.get("groups")
    if kind == "grouped" and not groups:
        rep.add("groups", "grouped scenario needs groups")
    if groups:
        if not isinstance(groups, list) or not all(isinstance(g, list) and g for g in groups):
            rep.add("groups", "groups must be a list of non-empty id lists")
        else:
            members = [a for g in groups for a in g]
            for a in sorted({a for a in members if members.count(a) > 1}):
                rep.add("groups", f"appliance {a!r} in more than one group")
            for a in sorted(set(members) - set(ids)):
                rep.add("groups", f"unknown appliance {a!r} in groups")
            for a in [a for a in ids if a not in members]:
                rep.add("groups", f"group partition omits appliance {a!r}")

    if kind in ("aggregate-nilm", "grouped"):
        inp = cfg.get("input")
        if not isinstance(inp, dict) or "path" not in inp:
            rep.add("input.path", "input trace file required")
        else:
            resolved = _resolve_input(inp["path"], cfg.get("_base_dir"))
            if not resolved.is_file():
                rep.add("input.path", f"input file not found: {resolved}")
            inp.setdefault("timestamp_column", "timestamp")
            inp.setdefault("delimiter", ",")
            inp.setdefault("gap_limit", 10)
            inp.setdefault("max_bad_fraction", 0.01)
            inp.setdefault("sample_period", 1.0)
            cols = inp.setdefault("columns", {a: a for a in ids})
            for a in ids:
                if a not in cols:
                    rep.add(f"input.columns.{a}", "no column mapped for appliance")
    if kind == "simulate-bench":
        sim = cfg.setdefault("simulation", {})
        sim.setdefault("duration", 86400)
        sim.setdefault("noise_std", model["noise_std"])
        sim.setdefault("noise_kind", "gaussian")
        try:
            SimulationConfig(int(sim["duration"]), 0, float(sim["noise_std"]), sim["noise_kind"])
        except (TypeError, ValueError) as exc:
            rep.add("simulation", str(exc))

    if not cfg.get("output"):
        rep.add("output", "output directory required")
    cfg.setdefault("figures", True)
    return rep, cfg


def _build_hmm(app: dict, off_threshold: float) -> ApplianceHmm:
    tol = app.get("tolerance", DEFAULT_TOLERANCE)
    hmm = hmm_from_states(str(app["id"]), app["power_levels"], off_threshold=off_threshold,
                          default_std=app.get("power_std"), tolerance=tol)
    if "transition" in app:
        hmm = hmm.with_transitions(app["transition"], app.get("initial"))
    elif "dwell" in app:
        init = app.get("initial")
        if init is None:
            init = [0.0] * hmm.n_states
            init[hmm.off_index] = 1.0
        hmm = hmm.with_transitions(dwell_transitions(app["dwell"]), init)
    elif "initial" in app:
        hmm = hmm.with_transitions(hmm.transition, app["initial"])
    return hmm


def build_model(cfg: dict) -> FhmmModel:
    off = cfg["model"]["off_threshold"]
    return FhmmModel(tuple(_build_hmm(a, off) for a in cfg["appliances"]), float(cfg["model"]["noise_std"]))


def pf_config(cfg: dict) -> PfConfig:
    return PfConfig(seed=int(cfg["seed"]), **cfg["pf"])


# ---------------------------------------------------------------------------
# Running


def run_scenario(doc: dict, output_dir: str | Path | None = None, seed: int | None = None) -> dict:
    """Run a scenario and write its artefacts; returns the run record.

    Outputs are staged in a temporary directory next to the target and
    moved into place only on success, so a failed run leaves nothing behind.
    """
    doc = dict(doc)
    if output_dir is not None:
        doc["output"] = str(output_dir)
    if seed is not None:
        doc["seed"] = int(seed)
    report, cfg = validate_config(doc)
    for issue in report:
        if issue.severity != "error":
            log.info("%s", issue)
    if not report.ok:
        raise ConfigError(report)

    out = Path(cfg["output"])
    if out.exists() and any(out.iterdir()) and not (out / RUN_MARKER).exists():
        raise ScenarioError(f"output directory {out} is not empty and holds no previous run")
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    t0 = time.perf_counter()
    try:
        record = _run(cfg, stage)
        record["timings"]["total_s"] = time.perf_counter() - t0
        (stage / RUN_MARKER).write_text(json.dumps(record, indent=2, default=str) + "\n")
        if out.exists():
            shutil.rmtree(out)
        os.replace(stage, out)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return record


def _run(cfg: dict, out: Path) -> dict:
    kind = cfg["scenario"]
    fhmm = build_model(cfg)
    pf = pf_config(cfg)
    timings: dict = {}
    t = time.perf_counter()

    if kind == "simulate-bench":
        sim = cfg["simulation"]
        sconf = SimulationConfig(int(sim["duration"]), int(cfg["seed"]), float(sim["noise_std"]), sim["noise_kind"])
        observed, truth_states, truth_power = simulate(fhmm, sconf)
        write_traces(out / "truth.csv", truth_power,
                     extra={"aggregate": observed.samples,
                            **{f"{s.appliance_id}_state": s.states for s in truth_states}})
    else:
        inp = cfg["input"]
        schema = TraceSchema(
            timestamp_column=inp["timestamp_column"],
            power_columns=dict(inp["columns"]),
            delimiter=inp["delimiter"],
            sample_period=float(inp["sample_period"]),
            gap_limit=int(inp["gap_limit"]),
            max_bad_fraction=float(inp["max_bad_fraction"]),
        )
        truth_power = load_traces(_resolve_input(inp["path"], cfg.get("_base_dir")), schema)
        observed = aggregate(truth_power)
        truth_states = [derive_ground_truth(p, fhmm.chain(p.appliance_id)) for p in truth_power]
    timings["load_s"] = time.perf_counter() - t

    summary: dict = {"scenario": kind}
    t = time.perf_counter()
    if kind == "grouped":
        groups = cfg["groups"]
        traces = [aggregate([p for p in truth_power if p.appliance_id in g]) for g in groups]
        result = _grouped(fhmm, groups, traces, pf, truth_states, truth_power, out, cfg["figures"], "")
        summary["groups"] = [g.appliance_ids for g in result.groups]
    else:
        result = disaggregate(fhmm, observed, pf)
        rep = evaluate_result(result, truth_states, truth_power)
        _write_report(out, "", rep, result, observed, cfg["figures"])
        summary["total_acc"] = rep.total.acc
        if kind == "simulate-bench" and cfg.get("groups"):
            sim = cfg["simulation"]
            traces = group_traces(truth_power, cfg["groups"], float(sim["noise_std"]), int(cfg["seed"]),
                                  sim["noise_kind"])
            g = _grouped(fhmm, cfg["groups"], traces, pf, truth_states, truth_power, out, cfg["figures"],
                         "_grouped")
            summary["grouped_mean_acc"] = float(np.mean([
                evaluate_result(p, truth_states, truth_power).mean_acc() for p in g.groups]))
            summary["full_mean_acc"] = rep.mean_acc()
    timings["disaggregate_s"] = time.perf_counter() - t

    (out / "profiles").mkdir()
    (out / "models").mkdir()
    for a in fhmm.appliance_ids:
        atype = next(x["type"] for x in cfg["appliances"] if str(x["id"]) == a)
        save_document(infer_profile(result, a, appliance_type=atype), out / "profiles" / f"{a}.profile.json")
        save_document(infer_identification_model(result, a), out / "models" / f"{a}.model.json")

    public_cfg = {k: v for k, v in cfg.items() if not k.startswith("_")}
    if "input" in public_cfg:
        public_cfg["input"] = dict(public_cfg["input"],
                                   path=str(_resolve_input(cfg["input"]["path"], cfg.get("_base_dir")).resolve()))
    return {
        "pfnilm_run": 1,
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": public_cfg,
        "seed": int(cfg["seed"]),
        "particle_count": pf.particle_count,
        "resample_threshold": pf.resample_threshold,
        "likelihood_floor": pf.likelihood_floor,
        "noise_std": pf.sigma(fhmm),
        "off_threshold": cfg["model"]["off_threshold"],
        "samples": len(observed),
        "summary": summary,
        "filter": {k: v for k, v in result.metadata.items() if k not in ("elapsed_s", "samples_per_s", "groups")},
        "timings": timings,
    }


def _grouped(fhmm, groups, traces, pf, truth_states, truth_power, out, figures, suffix):
    pairs = [(fhmm.subset(g), tr) for g, tr in zip(groups, traces)]
    result = disaggregate_grouped(pairs, pf)
    for gi, (part, (_, trace)) in enumerate(zip(result.groups, pairs)):
        rep = evaluate_result(part, truth_states, truth_power)
        _write_report(out, f"{suffix}_group{gi}", rep, part, trace, figures)
    merged = evaluate(result.model, result.states, result.power, truth_states, truth_power)
    observed = aggregate(traces)
    _write_report(out, suffix, merged, result, observed, figures)
    return result


def _write_report(out: Path, suffix: str, rep: MetricReport, result, observed, figures: bool) -> None:
    rep.write_csv(out / f"metrics{suffix}.csv")
    rep.write_json(out / f"metrics{suffix}.json")
    rep.write_partition_csv(out / f"partition{suffix}.csv")
    extra = {"aggregate": observed.samples, "aggregate_estimate": result.aggregate_estimate.samples}
    for s in result.states:
        extra[f"{s.appliance_id}_state"] = s.states
    write_traces(out / f"decisions{suffix}.csv", result.power, extra=extra)
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plot_partition(rep.partition_real, rep.partition_estimated, fig_dir / f"partition{suffix}.png")
        plot_disaggregation(observed.samples, result.aggregate_estimate.samples,
                            {p.appliance_id: p.samples for p in result.power},
                            fig_dir / f"trace{suffix}.png", observed.sample_period)
