"""Projected primal-dual demand/price dynamics and convergence checks.

The decentralized counterpart of the one-shot solver: demands climb the
marginal-payoff gradient while prices climb excess demand, each variable
projected so it never leaves the nonnegative orthant,

    dq_ij/dt = kq_ij * (f_ij - p_j)+        projected at q_ij = 0
    dp_j/dt  = kp_j * (sum_i q_ij - Q_j)+   projected at p_j = 0

with f_ij = c_ij * u_i'(x_i) the marginal utility of demand q_ij.  The
projection (x)+_y passes x through when y > 0 and clips negative x to 0
on the boundary y <= 0.  Users need only the posted prices and their own
channel offsets; providers need only their own excess demand.

Integration is explicit Euler with a simultaneous update of all demands
and prices, which mirrors the continuous flow and keeps every update
local.  An infinite marginal utility (alpha-fair at x = 0) is handled by
capping the demand direction, so one step moves off the singularity.

Convergence is monitored through an energy function that is nonincreasing
along exact trajectories,

    V = sum_ij (1/kq_ij) * [(q_ij - q*_ij)^2 - q*_ij^2] / 2
      + sum_j  (1/kp_j)  * [(p_j  - p*_j)^2  - p*_j^2 ] / 2,

the closed form of integrating (beta - z*) from 0 to z coordinate-wise.

When some provider has no singly-assigned customer at the equilibrium,
convergence additionally needs the update rates to avoid resonances.
``rate_condition_check`` builds B (active-demand sensitivities) and the
diagonal D (price loop gains) and tests whether the stacked matrix
[B; BD; ...; BD^(J-1)] has full column rank, which pins prices down on
the invariant set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError
from .model import GameInstance
from .solver import Equilibrium, verify_kkt

# Default range for randomly drawn price update rates.  Drawing from a
# continuous distribution makes the diagonal loop gains pairwise distinct
# with probability one; the magnitude is calibrated so runs on default
# channel-model instances converge in the low thousands of steps at
# eta = 1e-3 without oscillation.
DEFAULT_KP_RANGE = (6.0, 14.0)
DEFAULT_DIRECTION_CAP = 1e3


@dataclass(frozen=True)
class PdRates:
    """Update rates: kq per (user, provider) pair, kp per provider."""

    kq: np.ndarray
    kp: np.ndarray

    def __post_init__(self):
        kq = np.array(self.kq, dtype=float)
        kp = np.array(self.kp, dtype=float)
        if np.any(kq <= 0) or np.any(kp <= 0):
            raise InvalidParameterError("all update rates must be strictly positive")
        kq.setflags(write=False)
        kp.setflags(write=False)
        object.__setattr__(self, "kq", kq)
        object.__setattr__(self, "kp", kp)


def default_rates(
    instance: GameInstance,
    rates_seed: int,
    kp_range: tuple[float, float] = DEFAULT_KP_RANGE,
) -> PdRates:
    """Unit demand rates and price rates drawn uniformly from kp_range."""
    rng = np.random.default_rng(rates_seed)
    kp = rng.uniform(kp_range[0], kp_range[1], size=instance.J)
    return PdRates(kq=np.ones((instance.I, instance.J)), kp=kp)


@dataclass(frozen=True)
class PdState:
    """Demands, prices and the virtual time they correspond to."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0


@dataclass
class Trajectory:
    """Columnar record of sampled states along a run.

    ``V`` is NaN when no reference equilibrium was supplied.
    """

    t: np.ndarray
    V: np.ndarray
    clearing: np.ndarray      # (n, J) signed residuals
    p: np.ndarray             # (n, J)
    q: np.ndarray             # (n, I, J)
    max_kkt: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    def write_csv(self, fh) -> None:
        """Stream samples as delimited text, one row per sample.

        Header: t,V,res_1..res_J,p_1..p_J,q_1_1..q_I_J (row-major q),
        doubles at 17 significant digits.
        """
        n = len(self)
        J = self.p.shape[1] if n else self.clearing.shape[1]
        I = self.q.shape[1] if n else 0
        cols = ["t", "V"]
        cols += [f"res_{j + 1}" for j in range(J)]
        cols += [f"p_{j + 1}" for j in range(J)]
        cols += [f"q_{i + 1}_{j + 1}" for i in range(I) for j in range(J)]
        fh.write(",".join(cols) + "\n")
        for k in range(n):
            row = [self.t[k], self.V[k]]
            row += list(self.clearing[k])
            row += list(self.p[k])
            row += list(self.q[k].ravel())
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


@dataclass(frozen=True)
class PdStop:
    """Stopping rule: per-provider clearing within epsilon * Q_j plus a
    secondary optimality-residual gate (defaults to epsilon / 5), or the
    step budget."""

    epsilon: float
    max_steps: int
    kkt_tol: Optional[float] = None

    def resolved_kkt_tol(self) -> float:
        return self.epsilon / 5.0 if self.kkt_tol is None else self.kkt_tol


@dataclass(frozen=True)
class PdRun:
    trajectory: Trajectory
    state: PdState
    converged: bool
    steps: int


def projected_rate(x: float, y: float) -> float:
    """(x)+_y: x when y > 0, max(0, x) when y <= 0."""
    return x if y > 0 else max(0.0, x)


def pd_step(
    state: PdState,
    instance: GameInstance,
    rates: PdRates,
    eta: float,
    direction_cap: float = DEFAULT_DIRECTION_CAP,
) -> PdState:
    """One explicit Euler step with simultaneous update of q and p.

    Directions are evaluated at the incoming state.  Demand directions
    are clipped to +/- direction_cap, which turns the infinite marginal
    utility of an alpha-fair user at x = 0 into a finite move and tames
    transient spikes; near the fixed point the cap is inactive.
    """
    if eta <= 0:
        raise InvalidParameterError("step size eta must be positive")
    q, p = state.q, state.p
    x = (q * instance.c).sum(axis=1)
    f = instance.c * instance.marginal_utilities(x)[:, None]
    with np.errstate(invalid="ignore"):
        dq = rates.kq * (f - p[None, :])
    dq = np.where((q > 0.0) | (dq > 0.0), dq, 0.0)
    dq = np.clip(dq, -direction_cap, direction_cap)
    dp = rates.kp * (q.sum(axis=0) - instance.Q)
    dp = np.where((p > 0.0) | (dp > 0.0), dp, 0.0)
    return PdState(
        q=np.maximum(0.0, q + eta * dq),
        p=np.maximum(0.0, p + eta * dp),
        t=state.t + eta,
    )


def _default_initial_state(instance: GameInstance) -> PdState:
    """Equal-split demands with prices matched to the median marginal.

    Starting on the scale of the eventual equilibrium keeps the explicit
    discretization inside the dissipative region from the first step.
    """
    q0 = np.tile(instance.Q / instance.I, (instance.I, 1))
    x0 = (q0 * instance.c).sum(axis=1)
    f0 = instance.c * instance.marginal_utilities(x0)[:, None]
    p0 = np.median(np.where(np.isfinite(f0), f0, np.nan), axis=0)
    p0 = np.where(np.isfinite(p0) & (p0 > 0), p0, 1.0)
    return PdState(q=q0, p=p0, t=0.0)


def clearing_residual(state: PdState, instance: GameInstance) -> np.ndarray:
    """Signed excess demand sum_i q_ij - Q_j per provider."""
    return state.q.sum(axis=0) - instance.Q


def la_salle_value(state: PdState, equilibrium: Equilibrium, rates: PdRates) -> float:
    """Energy of the state relative to the equilibrium; minimized there."""
    dq = state.q - equilibrium.q
    dp = state.p - equilibrium.p
    vq = ((dq**2 - equilibrium.q**2) / (2.0 * rates.kq)).sum()
    vp = ((dp**2 - equilibrium.p**2) / (2.0 * rates.kp)).sum()
    return float(vq + vp)


def run_primal_dual(
    instance: GameInstance,
    rates: PdRates,
    eta: float,
    stop: PdStop,
    equilibrium: Optional[Equilibrium] = None,
    initial_state: Optional[PdState] = None,
    sample_stride: int = 10,
    direction_cap: float = DEFAULT_DIRECTION_CAP,
) -> PdRun:
    """Iterate pd_step until clearing holds within epsilon * Q_j everywhere
    (plus the secondary residual gate) or the step budget runs out.

    The trajectory is returned in either case so failed runs can be
    inspected.  ``equilibrium`` is only used to record the energy V.
    """
    if sample_stride < 1:
        raise InvalidParameterError("sample_stride must be at least 1")
    state = _default_initial_state(instance) if initial_state is None else initial_state
    kkt_tol = stop.resolved_kkt_tol()

    samples_t, samples_v, samples_res, samples_p, samples_q, samples_kkt = (
        [], [], [], [], [], [],
    )

    def record(st: PdState):
        samples_t.append(st.t)
        if equilibrium is not None:
            samples_v.append(la_salle_value(st, equilibrium, rates))
        else:
            samples_v.append(math.nan)
        samples_res.append(st.q.sum(axis=0) - instance.Q)
        samples_p.append(st.p.copy())
        samples_q.append(st.q.copy())
        samples_kkt.append(verify_kkt(instance, st.q, st.p, tol=kkt_tol).max_residual)

    def is_converged(st: PdState) -> bool:
        res = np.abs(st.q.sum(axis=0) - instance.Q)
        if not np.all(res <= stop.epsilon * instance.Q):
            return False
        return verify_kkt(instance, st.q, st.p, tol=kkt_tol).passed

    converged = False
    steps = 0
    if stop.max_steps > 0:
        record(state)
        for k in range(stop.max_steps):
            if is_converged(state):
                converged = True
                break
            state = pd_step(state, instance, rates, eta, direction_cap)
            steps += 1
            if steps % sample_stride == 0:
                record(state)
        else:
            converged = is_converged(state)
        if steps % sample_stride != 0:
            record(state)

    trajectory = Trajectory(
        t=np.array(samples_t),
        V=np.array(samples_v),
        clearing=np.array(samples_res).reshape(-1, instance.J),
        p=np.array(samples_p).reshape(-1, instance.J),
        q=np.array(samples_q).reshape(-1, instance.I, instance.J),
        max_kkt=np.array(samples_kkt),
    )
    return PdRun(trajectory=trajectory, state=state, converged=converged, steps=steps)


# ----------------------------------------------------------------------
# update-rate sufficiency check
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RateCheckReport:
    """Outcome of the rank-based convergence condition on update rates.

    ``B`` has entries kq_ij * c_ij on the equilibrium support (zero
    elsewhere); ``D`` is diagonal with D_jj = kp_j * sum over supporting
    users of kq_ij.  ``stacked_rank`` is the numerical rank of
    [B; BD; ...; BD^(J-1)].  ``refined_condition`` asks the D_jj to be
    pairwise distinct.  ``sufficient`` holds when every provider already
    has a decided customer, or when the stacked rank is full.
    """

    B: np.ndarray
    D: np.ndarray
    stacked_rank: int
    refined_condition: bool
    every_provider_decided: bool
    sufficient: bool


def rate_condition_check(
    instance: GameInstance,
    q_star: np.ndarray,
    rates: PdRates,
    *,
    rank_rtol: float = 1e-10,
    support_tol: float = 1e-12,
) -> RateCheckReport:
    """Evaluate the update-rate sufficiency condition at the equilibrium
    support pattern of ``q_star``."""
    q_star = np.asarray(q_star, dtype=float)
    support = q_star > support_tol
    B = rates.kq * instance.c * support
    d = rates.kp * (rates.kq * support).sum(axis=0)
    D = np.diag(d)

    powers = np.ones_like(d)
    blocks = []
    for _ in range(instance.J):
        blocks.append(B * powers[None, :])
        powers = powers * d
    stacked = np.vstack(blocks)
    sv = np.linalg.svd(stacked, compute_uv=False)
    rank = int(np.sum(sv > rank_rtol * sv[0])) if sv.size and sv[0] > 0 else 0

    scale = np.max(np.abs(d)) if d.size else 0.0
    refined = True
    for j in range(instance.J):
        for k in range(j + 1, instance.J):
            if abs(d[j] - d[k]) <= 1e-9 * max(1.0, scale):
                refined = False
    decided_rows = support.sum(axis=1) == 1
    covered = np.zeros(instance.J, dtype=bool)
    for i in np.nonzero(decided_rows)[0]:
        covered[np.nonzero(support[i])[0][0]] = True
    every_decided = bool(covered.all())

    return RateCheckReport(
        B=B,
        D=D,
        stacked_rank=rank,
        refined_condition=refined,
        every_provider_decided=every_decided,
        sufficient=bool(every_decided or rank == instance.J),
    )
