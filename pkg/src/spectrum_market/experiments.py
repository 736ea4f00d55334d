"""Reproducible convergence sweeps and equilibrium association reports.

A sweep fixes the provider count and walks a list of user counts; each
trial draws an instance from the channel model (seed = base seed + trial
index), solves the one-shot equilibrium, runs the primal-dual dynamics
against it and records the iteration count.  Failures (a trial that does
not converge within its budget, or a degenerate instance) are recorded
as data rather than raised: oscillation sensitivity at low users-per-
provider ratios is part of what the sweep measures.

Trials are independent, so they may run in parallel worker processes;
results are always reduced in trial order, which keeps emitted tables
byte-identical for a fixed configuration regardless of worker count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (
    DEFAULT_KP_RANGE,
    PdStop,
    default_rates,
    run_primal_dual,
)
from .errors import SpectrumMarketError
from .model import (
    DEFAULT_CHANNEL_CONFIG,
    ChannelModelConfig,
    GameInstance,
    generate_instance,
)
from .solver import decode_demands, solve_prices, user_best_response
from .utilities import SCALED_LOG, UtilityFunction


@dataclass(frozen=True)
class SweepConfig:
    providers: int
    user_counts: tuple[int, ...]
    trials: int
    epsilon: float
    eta: float
    base_seed: int
    channel: ChannelModelConfig = DEFAULT_CHANNEL_CONFIG
    utility: UtilityFunction = UtilityFunction(SCALED_LOG, 1.0)
    max_steps: int = 100_000
    kp_range: tuple[float, float] = DEFAULT_KP_RANGE

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class TrialResult:
    user_count: int
    trial: int
    iterations: int
    converged: bool
    undecided: int
    error: Optional[str] = None


@dataclass(frozen=True)
class SweepCell:
    """Aggregate for one (J, I, epsilon) combination."""

    J: int
    I: int
    epsilon: float
    trials: int
    mean_iters: float
    std_iters: float
    failures: int
    mean_undecided: float


@dataclass(frozen=True)
class SweepStats:
    cells: tuple[SweepCell, ...]
    results: tuple[TrialResult, ...] = ()

    def write_csv(self, fh) -> None:
        fh.write("J,I,epsilon,trials,mean_iters,std_iters,failures,mean_undecided\n")
        for c in self.cells:
            fh.write(
                f"{c.J},{c.I},{c.epsilon:.17g},{c.trials},"
                f"{c.mean_iters:.17g},{c.std_iters:.17g},{c.failures},"
                f"{c.mean_undecided:.17g}\n"
            )


def _run_trial(cfg: SweepConfig, user_count: int, trial: int) -> TrialResult:
    seed = cfg.base_seed + trial
    instance = generate_instance(cfg.channel, user_count, cfg.providers, cfg.utility, seed)
    try:
        p_star = solve_prices(instance)
        eq = decode_demands(instance, p_star)
        rates = default_rates(instance, rates_seed=seed, kp_range=cfg.kp_range)
        run = run_primal_dual(
            instance,
            rates,
            cfg.eta,
            PdStop(epsilon=cfg.epsilon, max_steps=cfg.max_steps),
            equilibrium=eq,
        )
        return TrialResult(
            user_count=user_count,
            trial=trial,
            iterations=run.steps,
            converged=run.converged,
            undecided=len(eq.undecided),
            error=None,
        )
    except SpectrumMarketError as exc:
        return TrialResult(
            user_count=user_count,
            trial=trial,
            iterations=cfg.max_steps,
            converged=False,
            undecided=0,
            error=type(exc).__name__,
        )


def run_convergence_sweep(cfg: SweepConfig, workers: int = 1) -> SweepStats:
    """Run every (user count, trial) combination and aggregate.

    Fully reproducible for a fixed configuration: per-trial seeds derive
    from the base seed, and aggregation happens in trial order.
    """
    jobs = [(I, t) for I in cfg.user_counts for t in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, *zip(*[(cfg, I, t) for I, t in jobs])))
    else:
        results = [_run_trial(cfg, I, t) for I, t in jobs]

    cells = []
    for I in cfg.user_counts:
        rs = [r for r in results if r.user_count == I]
        iters = np.array([r.iterations for r in rs], dtype=float)
        undecided = np.array([r.undecided for r in rs], dtype=float)
        failures = sum(1 for r in rs if not r.converged)
        cells.append(
            SweepCell(
                J=cfg.providers,
                I=I,
                epsilon=cfg.epsilon,
                trials=cfg.trials,
                mean_iters=float(iters.mean()),
                std_iters=float(iters.std()),
                failures=failures,
                mean_undecided=float(undecided.mean()),
            )
        )
    return SweepStats(cells=tuple(cells), results=tuple(results))


# ----------------------------------------------------------------------
# association snapshot of a single solved instance
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class UserAssociation:
    user: int
    preference_set: tuple[int, ...]
    purchases: tuple[float, ...]
    effective_resource: float
    zero_purchase: bool


@dataclass(frozen=True)
class ProviderAssociation:
    provider: int
    price: float
    sold: float


@dataclass(frozen=True)
class AssociationReport:
    users: tuple[UserAssociation, ...]
    providers: tuple[ProviderAssociation, ...]
    undecided: tuple[int, ...]
    welfare: float
    # channel offsets captured for edge annotation
    _c: tuple[tuple[float, ...], ...] = field(default=(), repr=False)

    def edges(self):
        """Support edges (user, provider, q, c) with positive purchases."""
        out = []
        for ua in self.users:
            for j, qij in enumerate(ua.purchases):
                if qij > 0.0:
                    out.append((ua.user, j, qij, self._c[ua.user][j]))
        return out

    def to_dict(self) -> dict:
        return {
            "users": [
                {
                    "user": ua.user,
                    "preference_set": list(ua.preference_set),
                    "purchases": list(ua.purchases),
                    "effective_resource": ua.effective_resource,
                    "zero_purchase": ua.zero_purchase,
                }
                for ua in self.users
            ],
            "providers": [
                {"provider": pa.provider, "price": pa.price, "sold": pa.sold}
                for pa in self.providers
            ],
            "undecided": list(self.undecided),
            "welfare": self.welfare,
        }

    def write_edge_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user", "provider", "q", "c"])
        for user, provider, qij, cij in self.edges():
            writer.writerow([user, provider, f"{qij:.17g}", f"{cij:.17g}"])


def equilibrium_snapshot(instance: GameInstance, tie_tol: float = 1e-9) -> AssociationReport:
    """Solve the instance and report who buys what from whom.

    Per user: preference set, purchased amounts, effective resource and a
    zero-purchase flag.  Per provider: price and sold quantity.  Suitable
    for external plotting (see ``figures``).
    """
    p_star = solve_prices(instance, tie_tol=tie_tol)
    eq = decode_demands(instance, p_star, tie_tol=tie_tol)

    users = []
    for i in range(instance.I):
        br = user_best_response(instance, i, eq.p, tie_tol=tie_tol)
        users.append(
            UserAssociation(
                user=i,
                preference_set=br.preference_set,
                purchases=tuple(float(v) for v in eq.q[i]),
                effective_resource=float(eq.x[i]),
                zero_purchase=bool(eq.x[i] <= 0.0),
            )
        )
    providers = [
        ProviderAssociation(provider=j, price=float(eq.p[j]), sold=float(eq.q[:, j].sum()))
        for j in range(instance.J)
    ]
    return AssociationReport(
        users=tuple(users),
        providers=tuple(providers),
        undecided=tuple(sorted(eq.undecided)),
        welfare=eq.welfare,
        _c=tuple(tuple(float(v) for v in row) for row in instance.c),
    )
