"""Multi-provider wireless resource markets: the socially optimal
allocation and its market-clearing prices, unique tie resolution by
bipartite leaf elimination, and decentralized primal-dual dynamics that
converge to the same equilibrium."""

__version__ = "0.1.0"

from .bgr import Bgr, bgr_decode, bgr_to_dot, build_bgr, count_undecided, detect_loop
from .dynamics import (
    DEFAULT_DIRECTION_CAP,
    DEFAULT_KP_RANGE,
    PdRates,
    PdRun,
    PdState,
    PdStop,
    RateCheckReport,
    Trajectory,
    clearing_residual,
    default_rates,
    la_salle_value,
    pd_step,
    projected_rate,
    rate_condition_check,
    run_primal_dual,
)
from .errors import (
    ChecksumMismatchError,
    InfeasibleChecksumsError,
    InstanceTooLargeError,
    InvalidParameterError,
    LoopDetectedError,
    NegativeChecksumError,
    NegativeDemandError,
    NoConvergenceError,
    SpectrumMarketError,
)
from .experiments import (
    AssociationReport,
    SweepCell,
    SweepConfig,
    SweepStats,
    equilibrium_snapshot,
    run_convergence_sweep,
)
from .model import (
    DEFAULT_CHANNEL_CONFIG,
    ChannelModelConfig,
    GameInstance,
    effective_resource,
    expected_offset_at_distance,
    generate_instance,
    instance_from_dict,
    instance_to_dict,
    payoff,
    read_instance,
    write_instance,
)
from .solver import (
    BestResponse,
    DeviationOutcome,
    DeviationReport,
    Equilibrium,
    KktReport,
    brute_force_swo,
    decode_demands,
    deviation_diagnostic,
    equilibrium_from_dict,
    equilibrium_to_dict,
    social_welfare,
    solve_prices,
    user_best_response,
    verify_kkt,
)
from .utilities import ALPHA_FAIR, SCALED_LOG, UtilityFunction, make_utility

__all__ = [
    "ALPHA_FAIR",
    "AssociationReport",
    "BestResponse",
    "Bgr",
    "ChannelModelConfig",
    "ChecksumMismatchError",
    "DEFAULT_CHANNEL_CONFIG",
    "DEFAULT_DIRECTION_CAP",
    "DEFAULT_KP_RANGE",
    "DeviationOutcome",
    "DeviationReport",
    "Equilibrium",
    "GameInstance",
    "InfeasibleChecksumsError",
    "InstanceTooLargeError",
    "InvalidParameterError",
    "KktReport",
    "LoopDetectedError",
    "NegativeChecksumError",
    "NegativeDemandError",
    "NoConvergenceError",
    "PdRates",
    "PdRun",
    "PdState",
    "PdStop",
    "RateCheckReport",
    "SCALED_LOG",
    "SpectrumMarketError",
    "SweepCell",
    "SweepConfig",
    "SweepStats",
    "Trajectory",
    "UtilityFunction",
    "bgr_decode",
    "bgr_to_dot",
    "brute_force_swo",
    "build_bgr",
    "clearing_residual",
    "count_undecided",
    "decode_demands",
    "default_rates",
    "detect_loop",
    "deviation_diagnostic",
    "effective_resource",
    "equilibrium_from_dict",
    "equilibrium_snapshot",
    "equilibrium_to_dict",
    "expected_offset_at_distance",
    "generate_instance",
    "instance_from_dict",
    "instance_to_dict",
    "la_salle_value",
    "make_utility",
    "payoff",
    "pd_step",
    "projected_rate",
    "rate_condition_check",
    "read_instance",
    "run_convergence_sweep",
    "run_primal_dual",
    "social_welfare",
    "solve_prices",
    "user_best_response",
    "verify_kkt",
    "write_instance",
]
