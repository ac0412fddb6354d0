"""Discrete-event simulator for scheduling multi-stage agent workflows on
heterogeneous LLM pools."""

from .balancer import BalancerConfig, Decision, estimate_load, select_model
from .engine import AGING_DISABLED, AgingConfig, EngineSim, MlfqEngine
from .metrics import OperatingPoint, RunResult, frontier, queue_time_report, summarize
from .monitor import ActivityMonitor
from .predictor import (
    EmpiricalQuantilePredictor,
    InputLengthPredictor,
    NoisyOraclePredictor,
    OraclePredictor,
    kendall_tau_distance,
)
from .profiles import ModelProfile, Pool, load_pool
from .router import ConstantRouter, NoisyOracleRouter, OracleRouter, TableRouter
from .simcore import (
    FcfsPolicy,
    LeastLoadedPolicy,
    MlfqPolicy,
    PredictivePolicy,
    SimConfig,
    SjfPolicy,
    StjfPolicy,
    baseline_dispatch,
    run,
)
from .workload import (
    ArrivalProcess,
    LengthStats,
    Request,
    TraceRecord,
    WorkflowSpec,
    generate_arrivals,
    load_trace,
    next_stage_request,
    save_trace,
    synthesize_trace,
)

__version__ = "0.1.0"
