"""Scenario configs, end-to-end runs, and report emission.

A scenario is one JSON document: seed, device profile, generation table,
fabric spec, named demand matrices, and an ordered action list (build,
optimize, expand, fail, report). Reports are canonical JSON with every
float printed at six significant digits, so identical (config, seed) runs
emit byte-identical bodies.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .device import DeviceProfile
from .expansion import NewAbSpec, execute_plan, plan_expansion, validate_plan
from .fabric import (
    CapacityExceeded,
    ConfigInvalid,
    Fabric,
    FabricConfig,
    FailureTarget,
    StripingMatrix,
    build_fabric,
    failure_impact,
    layout_report,
    realize_striping,
)
from .links import (
    LinkConfig,
    TransceiverGeneration,
    default_generation_table,
    generation_table_problems,
)
from .topology import demand_problems, evaluate_throughput, optimize_striping

__all__ = [
    "Action",
    "ScenarioConfig",
    "ParseResult",
    "parse_config",
    "RunReport",
    "run_scenario",
    "emit_report",
    "ScenarioAborted",
]

REPORT_VERSION = 1
_ACTION_KINDS = ("build", "optimize", "expand", "fail", "report")


class ScenarioAborted(Exception):
    def __init__(self, action_index: int, cause: Exception):
        super().__init__(f"action {action_index} failed: {cause}")
        self.action_index = action_index
        self.cause = cause


@dataclass(frozen=True)
class Action:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    seed: int
    device_profile: DeviceProfile
    generation_table: dict[str, TransceiverGeneration]
    link_config: LinkConfig
    n_abs: int
    uplinks_per_ab: int
    ocs_count: int
    ab_generations: list[str]
    demands: dict[str, np.ndarray]
    actions: list[Action]
    bidirectional: bool = True
    routing_policy: str = "wcmp"
    raw: dict = field(default_factory=dict)

    def fabric_config(self) -> FabricConfig:
        return FabricConfig(
            n_abs=self.n_abs,
            uplinks_per_ab=self.uplinks_per_ab,
            ocs_count=self.ocs_count,
            ab_generations=self.ab_generations,
            seed=self.seed,
            device_profile=self.device_profile,
            generation_table=self.generation_table,
            link_config=self.link_config,
            bidirectional=self.bidirectional,
        )


@dataclass
class ParseResult:
    config: ScenarioConfig | None
    violations: list[str]

    @property
    def ok(self) -> bool:
        return self.config is not None and not self.violations


def parse_config(document: str | Mapping) -> ParseResult:
    """Validate a scenario document, reporting every violation found."""
    violations: list[str] = []
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            return ParseResult(None, [f"invalid JSON: {exc}"])
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        return ParseResult(None, ["top-level document must be an object"])

    seed = doc.get("seed")
    if seed is None:
        violations.append("seed required")
        seed = 0
    elif not isinstance(seed, int):
        violations.append("seed must be an integer")
        seed = 0

    try:
        profile = DeviceProfile.from_dict(doc.get("device", {}))
        violations.extend(f"device: {p}" for p in profile.validate())
    except (TypeError, ValueError) as exc:
        violations.append(f"device: {exc}")
        profile = DeviceProfile()

    if "generations" in doc:
        table: dict[str, TransceiverGeneration] = {}
        for k, gdoc in enumerate(doc["generations"]):
            try:
                gen = TransceiverGeneration.from_dict(gdoc)
                table[gen.name] = gen
            except (KeyError, TypeError, ValueError) as exc:
                violations.append(f"generations[{k}]: {exc}")
        if not table:
            table = default_generation_table()
    else:
        table = default_generation_table()
    violations.extend(f"generations: {p}" for p in generation_table_problems(table))

    try:
        link_config = LinkConfig.from_dict(doc.get("link", {}))
        if not 0.0 <= link_config.flake_probability <= 1.0:
            violations.append("link: flake_probability must be in [0, 1]")
    except (TypeError, ValueError) as exc:
        violations.append(f"link: {exc}")
        link_config = LinkConfig()

    fab = doc.get("fabric")
    n_abs, uplinks, ocs_count, ab_gens = 0, 0, 0, []
    if not isinstance(fab, dict):
        violations.append("fabric section required")
    else:
        n_abs = fab.get("n_abs", 0)
        uplinks = fab.get("uplinks_per_ab", 0)
        ocs_count = fab.get("ocs_count", 0)
        ab_gens = fab.get("ab_generations", [])
        if isinstance(ab_gens, str):
            ab_gens = [ab_gens] * max(n_abs, 0)
        if not isinstance(n_abs, int) or n_abs < 1:
            violations.append("fabric.n_abs must be an integer >= 1")
        if not isinstance(uplinks, int) or uplinks < 1:
            violations.append("fabric.uplinks_per_ab must be an integer >= 1")
        if not isinstance(ocs_count, int) or not 1 <= ocs_count <= 256:
            violations.append("fabric.ocs_count must be in [1, 256]")
        if len(ab_gens) != n_abs:
            violations.append("fabric.ab_generations must list one entry per block")
        for name in ab_gens:
            if name not in table:
                violations.append(f"fabric.ab_generations: unknown generation {name!r}")

    demands: dict[str, np.ndarray] = {}
    for name, rows in (doc.get("demands") or {}).items():
        try:
            d = np.asarray(rows, dtype=float)
        except (TypeError, ValueError):
            violations.append(f"demands.{name}: not a numeric matrix")
            continue
        for p in demand_problems(d, n_abs or None):
            violations.append(f"demands.{name}{p}" if p.startswith("[") else f"demands.{name}: {p}")
        demands[name] = d

    actions: list[Action] = []
    raw_actions = doc.get("actions")
    if not isinstance(raw_actions, list) or not raw_actions:
        violations.append("actions must be a non-empty list")
        raw_actions = []
    builds = 0
    for k, adoc in enumerate(raw_actions):
        if not isinstance(adoc, dict) or "type" not in adoc:
            violations.append(f"actions[{k}]: must be an object with a type")
            continue
        kind = adoc["type"]
        params = {p: v for p, v in adoc.items() if p != "type"}
        if kind not in _ACTION_KINDS:
            violations.append(f"actions[{k}]: unknown type {kind!r}")
            continue
        if kind == "build":
            builds += 1
            if k != 0:
                violations.append("actions: build must be the first action")
        if kind == "optimize":
            name = params.get("demand")
            if name not in demands:
                violations.append(f"actions[{k}]: unknown demand {name!r}")
        if kind == "expand":
            new_abs = params.get("new_abs")
            if not isinstance(new_abs, int) or new_abs < 0:
                violations.append(f"actions[{k}]: new_abs must be an integer >= 0")
            dl = params.get("drain_limit", 0.125)
            if not isinstance(dl, (int, float)) or not 0 < dl <= 1:
                violations.append(f"actions[{k}]: drain_limit must be in (0, 1]")
        if kind == "fail":
            target = params.get("target")
            try:
                FailureTarget.from_string(target)
            except (TypeError, ValueError, AttributeError):
                violations.append(f"actions[{k}]: invalid failure target {target!r}")
        actions.append(Action(kind, params))
    if builds != 1:
        violations.append("actions: exactly one build action required")

    if violations:
        return ParseResult(None, violations)
    config = ScenarioConfig(
        seed=seed,
        device_profile=profile,
        generation_table=table,
        link_config=link_config,
        n_abs=n_abs,
        uplinks_per_ab=uplinks,
        ocs_count=ocs_count,
        ab_generations=list(ab_gens),
        demands=demands,
        actions=actions,
        bidirectional=bool(doc.get("bidirectional", True)),
        routing_policy=doc.get("routing_policy", "wcmp"),
        raw=doc,
    )
    return ParseResult(config, [])


def config_hash(document: Mapping) -> str:
    blob = json.dumps(document, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RunReport:
    version: int
    seed: int
    config_sha256: str
    aborted: bool
    abort_cause: dict | None
    actions: list[dict]
    fabric: dict | None

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "reproducibility": {"seed": self.seed, "config_sha256": self.config_sha256},
            "aborted": self.aborted,
            "abort_cause": self.abort_cause,
            "actions": self.actions,
            "fabric": self.fabric,
        }


def _spec_checks(fabric: Fabric) -> list[dict]:
    profile = fabric.config.device_profile
    il_max = max(
        float(d.calibration.insertion_loss_db.max()) for d in fabric.ocses
    )
    rl_max = max(float(d.calibration.return_loss_db.max()) for d in fabric.ocses)
    power_max = max(d.power_draw_w() for d in fabric.ocses)
    checks = [
        ("insertion_loss_max_db", il_max, "<=", profile.il_max_db),
        ("return_loss_max_db", rl_max, "<=", profile.rl_spec_db),
        ("power_draw_max_w", power_max, "<=", profile.max_power_w),
    ]
    return [
        {
            "name": name,
            "observed": observed,
            "op": op,
            "limit": limit,
            "pass": observed <= limit,
        }
        for name, observed, op, limit in checks
    ]


def _loss_histogram(fabric: Fabric) -> dict:
    ils = np.concatenate(
        [d.calibration.insertion_loss_db.ravel() for d in fabric.ocses]
    )
    edges = np.arange(0.0, 2.05, 0.1)
    counts, _ = np.histogram(ils, bins=edges)
    return {
        "bin_edges_db": [float(e) for e in edges],
        "counts": [int(c) for c in counts],
        "min_db": float(ils.min()),
        "max_db": float(ils.max()),
        "mean_db": float(ils.mean()),
    }


def _run_report_action(fabric: Fabric, config: ScenarioConfig) -> dict:
    rl = np.concatenate([d.calibration.return_loss_db for d in fabric.ocses])
    alphas = {}
    if fabric.n_abs >= 2:
        rates = fabric.rate_matrix()
        for name, d in config.demands.items():
            if d.shape[0] == fabric.n_abs:
                alphas[name] = evaluate_throughput(
                    fabric.striping.S, d, config.routing_policy, rates
                ).alpha
    return {
        "spec_checks": _spec_checks(fabric),
        "insertion_loss_histogram": _loss_histogram(fabric),
        "return_loss_db": {
            "min": float(rl.min()),
            "median": float(np.median(rl)),
            "max": float(rl.max()),
        },
        "power_total_w": float(sum(d.power_draw_w() for d in fabric.ocses)),
        "striping": fabric.striping.S.tolist(),
        "alpha": alphas,
        "layout": layout_report(fabric),
    }


def run_scenario(config: ScenarioConfig) -> RunReport:
    """Execute the action list against one fabric instance.

    Any action error aborts the run; the partial report is marked aborted
    with the cause attached.
    """
    report = RunReport(
        version=REPORT_VERSION,
        seed=config.seed,
        config_sha256=config_hash(config.raw),
        aborted=False,
        abort_cause=None,
        actions=[],
        fabric=None,
    )
    fabric: Fabric | None = None
    for idx, action in enumerate(config.actions):
        try:
            if action.kind == "build":
                fabric = build_fabric(config.fabric_config())
                result = {
                    "n_abs": fabric.n_abs,
                    "ocs_count": len(fabric.ocses),
                    "links_realized": len(fabric.links),
                    "ports_used": sum(l.ports_used for l in fabric.links),
                    "fibers_used": sum(l.fibers_used for l in fabric.links),
                    "released_capacity_gbps": fabric.released_capacity_gbps(),
                }
            elif action.kind == "optimize":
                assert fabric is not None
                name = action.params["demand"]
                demand = config.demands[name]
                if demand.shape[0] != fabric.n_abs:
                    raise ConfigInvalid(
                        f"demand {name!r} is {demand.shape[0]}x{demand.shape[0]}, "
                        f"fabric has {fabric.n_abs} blocks"
                    )
                rates = fabric.rate_matrix()
                policy = action.params.get("policy", config.routing_policy)
                before = evaluate_throughput(
                    fabric.striping.S, demand, policy, rates
                ).alpha
                optimized = optimize_striping(
                    demand, fabric.n_abs, config.uplinks_per_ab, policy, rates
                )
                fabric.clear_realization()
                realize_striping(fabric, StripingMatrix(optimized))
                after = evaluate_throughput(optimized, demand, policy, rates).alpha
                result = {
                    "demand": name,
                    "policy": policy,
                    "alpha_before": before,
                    "alpha_after": after,
                    "striping": optimized.tolist(),
                    "links_total": int(optimized.sum() // 2),
                }
            elif action.kind == "expand":
                assert fabric is not None
                k = action.params["new_abs"]
                drain_limit = float(action.params.get("drain_limit", 0.125))
                gen = action.params.get(
                    "generation", config.ab_generations[-1] if config.ab_generations else None
                )
                specs = [
                    NewAbSpec(gen, config.uplinks_per_ab) for _ in range(k)
                ]
                plan = plan_expansion(fabric, specs, drain_limit)
                problems = validate_plan(fabric, plan)
                if problems:
                    raise ConfigInvalid(
                        [f"step {v.step}: {v.kind}: {v.detail}" for v in problems]
                    )
                log = execute_plan(fabric, plan, [config.seed, 90, idx])
                floor = (1.0 - drain_limit) * plan.pre_capacity_gbps
                result = {
                    "new_abs": k,
                    "drain_limit": drain_limit,
                    "steps": len(plan.steps),
                    "links_drained": plan.total_drains,
                    "links_added": plan.total_adds,
                    "links_failed": len(fabric.failed_links),
                    "capacity_floor_gbps": floor,
                    "min_released_capacity_gbps": log.min_released_capacity(),
                    "capacity_floor_ok": log.min_released_capacity() >= floor - 1e-6,
                    "final_striping": fabric.striping.S.tolist(),
                    "events": [
                        {
                            "t_virtual_s": e.t_virtual_s,
                            "step": e.step,
                            "link_id": e.link_id,
                            "transition": e.transition,
                            "detail": e.detail,
                        }
                        for e in log.events
                    ],
                }
            elif action.kind == "fail":
                assert fabric is not None
                impact = failure_impact(fabric, action.params["target"])
                result = {
                    "target": action.params["target"],
                    "capacity_lost_fraction": impact.capacity_lost_fraction,
                    "links_lost": impact.links_lost,
                    "links_total": impact.links_total,
                    "affected_ab_pairs": [list(p) for p in impact.affected_ab_pairs],
                }
            elif action.kind == "report":
                assert fabric is not None
                result = _run_report_action(fabric, config)
            else:
                raise ConfigInvalid(f"unknown action {action.kind!r}")
            report.actions.append({"index": idx, "type": action.kind, "result": result})
        except Exception as exc:  # noqa: BLE001 - abort semantics want the cause
            report.aborted = True
            report.abort_cause = {
                "action_index": idx,
                "action_type": action.kind,
                "error": type(exc).__name__,
                "message": str(exc),
            }
            break
    if fabric is not None:
        report.fabric = fabric.to_dict()
    return report


def _round_floats(obj: Any, sig: int = 6) -> Any:
    """Round every float to `sig` significant digits for stable output."""
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, float):
        if math.isinf(obj) or math.isnan(obj):
            return obj
        if obj == 0.0:
            return 0.0
        return float(f"{obj:.{sig}g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v, sig) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, sig) for v in obj]
    return obj


def emit_report(report: RunReport, fmt: str = "json") -> str:
    """Render a run report as canonical JSON or a text summary."""
    doc = _round_floats(report.to_dict())
    if fmt == "json":
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")

    lines = []
    lines.append(f"scenario report (seed {report.seed})")
    lines.append(f"config sha256: {report.config_sha256}")
    if report.aborted:
        cause = report.abort_cause or {}
        lines.append(
            f"RUN ABORTED at action {cause.get('action_index')}: "
            f"{cause.get('error')}: {cause.get('message')}"
        )
    for entry in doc["actions"]:
        kind = entry["type"]
        res = entry["result"]
        if kind == "build":
            lines.append(
                f"[{entry['index']}] build: {res['n_abs']} blocks, "
                f"{res['ocs_count']} switches, {res['links_realized']} links, "
                f"{res['released_capacity_gbps']} Gb/s released"
            )
        elif kind == "optimize":
            lines.append(
                f"[{entry['index']}] optimize({res['demand']}): alpha "
                f"{res['alpha_before']} -> {res['alpha_after']} "
                f"({res['links_total']} links)"
            )
        elif kind == "expand":
            lines.append(
                f"[{entry['index']}] expand(+{res['new_abs']}): {res['steps']} steps, "
                f"floor {res['capacity_floor_gbps']} Gb/s, min released "
                f"{res['min_released_capacity_gbps']} Gb/s, "
                f"{'OK' if res['capacity_floor_ok'] else 'VIOLATED'}, "
                f"{res['links_failed']} failed links"
            )
        elif kind == "fail":
            lines.append(
                f"[{entry['index']}] fail({res['target']}): lost "
                f"{res['capacity_lost_fraction']} of links "
                f"({res['links_lost']}/{res['links_total']})"
            )
        elif kind == "report":
            for name, alpha in sorted(res.get("alpha", {}).items()):
                lines.append(f"[{entry['index']}] alpha({name}) = {alpha}")
            for check in res["spec_checks"]:
                verdict = "PASS" if check["pass"] else "FAIL"
                lines.append(
                    f"spec check {check['name']} {check['op']} {check['limit']}: "
                    f"{verdict} (observed {check['observed']})"
                )
    return "\n".join(lines) + "\n"
