"""Deterministic multi-agent parameter-trading market simulator."""

from .bounds import GainBounds, TradeScenario, buyer_gain_bounds, perf_ratio_bounds
from .broker import (
    GainKind,
    GainReport,
    MergeProposal,
    fedavg_weight,
    gain_error_ratio,
    gain_loss_difference,
    optimize_merge_weight,
)
from .core import (
    DimensionMismatchError,
    DivergenceError,
    LabeledDataset,
    LossSpec,
    ParameterVector,
    empirical_loss,
    gradient_step,
    merge,
)
from .engine import (
    AgentSpec,
    BrokerSpec,
    MarketConfig,
    MarketLog,
    Policy,
    PolicyKind,
    TradeRecord,
    convergence_metrics,
    geometric_decay_check,
    run_round,
    run_simulation,
)
from .linear import (
    LinearTask,
    SingularityError,
    SpectrumSummary,
    estimation_error,
    loss_ratio_bounds,
    spectrum,
    synthesize_task,
)
from .pricing import (
    PriorDistribution,
    ValuationQuadruple,
    cobb_douglas_revenue,
    myerson_price,
    nash_price_difference,
    seller_virtual_valuation,
    settle,
)

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "BrokerSpec",
    "GainBounds",
    "TradeScenario",
    "buyer_gain_bounds",
    "perf_ratio_bounds",
    "DimensionMismatchError",
    "DivergenceError",
    "GainKind",
    "GainReport",
    "LabeledDataset",
    "LinearTask",
    "LossSpec",
    "MarketConfig",
    "MarketLog",
    "MergeProposal",
    "ParameterVector",
    "Policy",
    "PolicyKind",
    "PriorDistribution",
    "SingularityError",
    "SpectrumSummary",
    "TradeRecord",
    "ValuationQuadruple",
    "cobb_douglas_revenue",
    "convergence_metrics",
    "empirical_loss",
    "estimation_error",
    "fedavg_weight",
    "gain_error_ratio",
    "gain_loss_difference",
    "geometric_decay_check",
    "gradient_step",
    "loss_ratio_bounds",
    "merge",
    "myerson_price",
    "nash_price_difference",
    "optimize_merge_weight",
    "run_round",
    "run_simulation",
    "seller_virtual_valuation",
    "settle",
    "spectrum",
    "synthesize_task",
    "__version__",
]
