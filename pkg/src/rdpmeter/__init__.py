"""Privacy filters and odometers for adaptively-chosen Renyi-DP budgets."""

from rdpmeter.core import (
    DpGuarantee,
    OrderSet,
    RdpCurve,
    curve_add,
    curve_to_dp,
    default_order_set,
    dp_target_to_rdp_budget,
    granularity_order_set,
    rdp_to_dp,
)
from rdpmeter.filters import (
    Decision,
    FilterEvent,
    FilterState,
    new_filter,
    new_filter_from_dp_target,
    remaining,
    replay_events,
    try_spend,
)
from rdpmeter.harness import (
    PolicySpec,
    ScheduleReplay,
    ScheduleStep,
    SessionConfig,
    SessionLog,
    export,
    reconstruct,
    replay_schedule,
    run_session,
    simulate_policy,
)
from rdpmeter.mechanisms import (
    DiscreteMechanism,
    GaussianMechanism,
    RawCurve,
    discrete_rdp_curve,
    gaussian_rdp_curve,
    mechanism_from_json,
    mechanism_rdp_curve,
    mechanism_to_json,
    sample,
)
from rdpmeter.odometers import (
    FilterSchedule,
    OdometerState,
    RunningBound,
    bound_candidates,
    early_stopping_bound,
    filter_index,
    new_odometer,
    running_bound,
    spend,
    truncate,
)
from rdpmeter.oracle import (
    AdversaryScript,
    OracleReport,
    ScriptNode,
    enumerate_views,
    numeric_renyi_gaussian,
    random_script,
    renyi_divergence_views,
    script_from_json,
    script_to_json,
    verify_filter_bound,
    verify_truncated_odometer,
)

__all__ = [
    "AdversaryScript",
    "Decision",
    "DiscreteMechanism",
    "DpGuarantee",
    "FilterEvent",
    "FilterSchedule",
    "FilterState",
    "GaussianMechanism",
    "OdometerState",
    "OracleReport",
    "OrderSet",
    "PolicySpec",
    "RawCurve",
    "RdpCurve",
    "RunningBound",
    "ScheduleReplay",
    "ScheduleStep",
    "ScriptNode",
    "SessionConfig",
    "SessionLog",
    "bound_candidates",
    "curve_add",
    "curve_to_dp",
    "default_order_set",
    "discrete_rdp_curve",
    "dp_target_to_rdp_budget",
    "early_stopping_bound",
    "enumerate_views",
    "export",
    "filter_index",
    "gaussian_rdp_curve",
    "granularity_order_set",
    "mechanism_from_json",
    "mechanism_rdp_curve",
    "mechanism_to_json",
    "new_filter",
    "new_filter_from_dp_target",
    "new_odometer",
    "numeric_renyi_gaussian",
    "random_script",
    "rdp_to_dp",
    "reconstruct",
    "remaining",
    "renyi_divergence_views",
    "replay_events",
    "replay_schedule",
    "run_session",
    "running_bound",
    "sample",
    "script_from_json",
    "script_to_json",
    "simulate_policy",
    "spend",
    "truncate",
    "try_spend",
    "verify_filter_bound",
    "verify_truncated_odometer",
]

__version__ = "0.1.0"
