"""Targeted edge-informed hard-label attack engine and benchmark harness."""

from .attack import (
    AttackConfig,
    AttackResult,
    AttackState,
    MisclassifiedInputError,
    QueryLog,
    QueryRecord,
    Stage,
    global_search,
    patch_search,
    run_tea,
    select_patch,
)
from .edgemask import MaskVariant, SoftEdgeMask, create_soft_edge_mask, variant_mask
from .metrics import DistanceCurve, PairRecord, StratifyKey
from .oracle import (
    BudgetExhaustedError,
    CountedOracle,
    LinearOracle,
    OracleError,
    PrototypeOracle,
    ProtocolError,
    QueryBudget,
    RemoteOracle,
    TransportError,
    remote_classify,
)

__version__ = "0.1.0"
