"""Deterministic simulator for optical-circuit-switched datacenter fabrics.

The library models the switch itself (manufacture, calibration,
cross-connects, losses, FRUs), bidirectional circulator-based links
(budgets, reflections, interference penalties, interop), fabric assembly
with zone/rack placement and striping, throughput evaluation against
demand, and incremental expansion with drain/reconfigure/qualify
sequencing. Scenario configs drive end-to-end runs through
:mod:`ocsim.scenario` or the ``ocsim`` CLI.
"""

from .device import (
    CalibrationTable,
    DeviceProfile,
    ManufacturingFailure,
    MirrorDie,
    OcsChassisState,
    OcsDevice,
    manufacture,
)
from .expansion import (
    EventLog,
    NewAbSpec,
    PlanStale,
    RestripePlan,
    StepState,
    execute_plan,
    plan_expansion,
    validate_plan,
)
from .fabric import (
    AggregationBlock,
    CapacityExceeded,
    ConfigInvalid,
    Fabric,
    FabricConfig,
    FailureTarget,
    PhysicalLayout,
    StripingMatrix,
    build_fabric,
    failure_impact,
    layout_report,
    realize_striping,
)
from .links import (
    CWDM4_GRID_NM,
    Circulator,
    Incompatible,
    LinkConfig,
    LinkPath,
    QualificationResult,
    TransceiverGeneration,
    aggregate_reflections,
    compose_link,
    default_generation_table,
    link_budget_db,
    mpi_penalty_db,
    mpi_penalty_oracle_db,
    negotiate_interop,
    propagation_delay_ns,
    qualify_link,
)
from .scenario import emit_report, parse_config, run_scenario
from .topology import (
    canonical_striping,
    evaluate_throughput,
    optimize_striping,
    throughput_oracle,
    wcmp_weights,
)

__version__ = "0.1.0"
