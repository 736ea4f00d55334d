"""Market-clearing prices, tie decoding and optimality certification.

The welfare problem maximizes sum_i u_i(x_i) over nonnegative demands
with every provider selling out (sum_i q_ij = Q_j) and x_i the effective
resource sum_j q_ij c_ij.  Its Lagrange multipliers are the unique
market-clearing prices: at those prices each user's selfish best
response reproduces the welfare-optimal demand, so solving the market
amounts to finding prices p with

    u_i'(x_i) c_ij <= p_j           for all i, j        (stationarity)
    q_ij (u_i'(x_i) c_ij - p_j) = 0 for all i, j        (slackness)
    sum_i q_ij = Q_j                for all j           (clearing)

A user's best response buys only from providers minimizing the price per
unit of effect, p_j / c_ij.  When that minimum is attained by a single
provider the user's demand is fixed; when it ties across several, the
split is recovered by leaf elimination on the tie graph (see ``bgr``).

Price search is a damped multiplicative tatonnement:

    p_j <- p_j * (1 + step_j * (demand_j - Q_j) / Q_j)

with the per-provider step halved whenever the excess-demand sign flips.
While iterating, a tied user's interim demand is parked entirely at the
lowest-index provider in its preference set (any split earns the user
the same payoff; clearing, not the user, decides the split), and the
proper split is produced at the end by graph decoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .bgr import bgr_decode, build_bgr
from .errors import (
    ChecksumMismatchError,
    InfeasibleChecksumsError,
    InstanceTooLargeError,
    InvalidParameterError,
    LoopDetectedError,
    NegativeChecksumError,
    NegativeDemandError,
    NoConvergenceError,
)
from .model import GameInstance

DEFAULT_TIE_TOL = 1e-9


@dataclass(frozen=True)
class BestResponse:
    """One user's optimal reaction to posted prices.

    ``mu`` is the minimized price/offset ratio min_k p_k / c_ik,
    ``x_star`` the unique effective resource with u'(x_star) = mu (zero
    when even the best ratio exceeds u'(0)), and ``preference_set`` every
    provider whose ratio is within relative tie tolerance of the minimum.
    """

    x_star: float
    preference_set: tuple[int, ...]
    mu: float


@dataclass(frozen=True)
class KktReport:
    """Residuals of the optimality system at a given (q, p).

    ``stationarity_residual``: max over (i, j) of (u_i'(x_i) c_ij - p_j)+.
    ``complementary_slackness_residual``: max of |q_ij (u_i'(x_i) c_ij - p_j)|.
    ``clearing_residual``: max over j of |sum_i q_ij - Q_j|.
    ``feasible``: q >= 0 and p > 0.  ``passed``: feasible and all residuals
    within tolerance.
    """

    stationarity_residual: float
    complementary_slackness_residual: float
    clearing_residual: float
    feasible: bool
    passed: bool

    @property
    def max_residual(self) -> float:
        return max(
            self.stationarity_residual,
            self.complementary_slackness_residual,
            self.clearing_residual,
        )

    def to_dict(self) -> dict:
        return {
            "stationarity_residual": self.stationarity_residual,
            "complementary_slackness_residual": self.complementary_slackness_residual,
            "clearing_residual": self.clearing_residual,
            "feasible": self.feasible,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class Equilibrium:
    """Market outcome: demands, prices, effective resources, tied users."""

    q: np.ndarray
    p: np.ndarray
    x: np.ndarray
    undecided: frozenset[int]
    welfare: float

    def clearing_residuals(self, instance: GameInstance) -> np.ndarray:
        return self.q.sum(axis=0) - instance.Q


# ----------------------------------------------------------------------
# best responses
# ----------------------------------------------------------------------

def _best_responses(instance: GameInstance, p: np.ndarray, tie_tol: float):
    """Vectorized best response of every user: (mu, x, preference mask)."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise InvalidParameterError("best responses require strictly positive prices")
    ratios = p[None, :] / instance.c
    mu = ratios.min(axis=1)
    x = instance.inverse_marginal_utilities(mu)
    pref = ratios <= (mu * (1.0 + tie_tol))[:, None]
    return mu, x, pref


def user_best_response(
    instance: GameInstance, i: int, p: np.ndarray, tie_tol: float = DEFAULT_TIE_TOL
) -> BestResponse:
    """Best response of user ``i`` to prices ``p``."""
    mu, x, pref = _best_responses(instance, p, tie_tol)
    members = tuple(int(j) for j in np.nonzero(pref[i])[0])
    return BestResponse(x_star=float(x[i]), preference_set=members, mu=float(mu[i]))


def _interim_demand(instance: GameInstance, p: np.ndarray, tie_tol: float, window: float = 0.0):
    """Aggregate best-response demand during the price search.

    With ``window`` = 0 each user parks its whole demand at the first
    provider within tie tolerance of its best ratio.  A positive window
    instead splits a user's demand continuously across providers whose
    ratio gap is below ``window`` (weight proportional to the remaining
    gap), which removes the demand jumps at tie surfaces; the split is
    a search device only, the equilibrium split comes from decoding.
    """
    mu, x, pref = _best_responses(instance, p, tie_tol)
    ratios = np.asarray(p, dtype=float)[None, :] / instance.c
    demand = np.zeros(instance.J)
    active = x > 0.0
    if window <= 0.0:
        choice = pref.argmax(axis=1)  # first provider within tie tolerance
        rows = np.nonzero(active)[0]
        np.add.at(demand, choice[rows], x[rows] / instance.c[rows, choice[rows]])
        return demand, choice, x
    thresh = mu * (1.0 + window)
    weights = np.maximum(thresh[:, None] - ratios, 0.0)
    weights /= weights.sum(axis=1, keepdims=True)
    demand = ((x * active)[:, None] * weights / instance.c).sum(axis=0)
    return demand, weights, x


# ----------------------------------------------------------------------
# price search
# ----------------------------------------------------------------------

def _initial_prices(instance: GameInstance) -> np.ndarray:
    """Scale-aware starting point: marginal value of an equal split."""
    x0 = (instance.c * (instance.Q / instance.I)[None, :]).sum(axis=1)
    f0 = instance.c * instance.marginal_utilities(x0)[:, None]
    f0 = np.where(np.isfinite(f0), f0, np.nanmax(f0[np.isfinite(f0)], initial=1.0))
    return np.median(f0, axis=0)


def _soft_tatonnement(
    instance: GameInstance,
    p: np.ndarray,
    tie_tol: float,
    step: float,
    damping: float,
    growth: float,
    budget: int,
    window_ladder: tuple[float, ...],
) -> np.ndarray:
    """Global phase: damped multiplicative updates over a shrinking tie
    window.  Gets prices close enough that the active structure (who is
    tied over what) can be read off; exactness comes later."""
    spent = 0
    for window in window_ladder:
        stage_tol = max(1e-9, 0.1 * window)
        steps = np.full(instance.J, step)
        prev_sign = np.zeros(instance.J)
        while spent < budget:
            demand, _, _ = _interim_demand(instance, p, tie_tol, window=window)
            resid = (demand - instance.Q) / instance.Q
            if float(np.max(np.abs(resid))) <= stage_tol:
                break
            sign = np.sign(resid)
            flipped = (sign * prev_sign) < 0
            steps = np.where(flipped, steps * damping, np.minimum(steps * growth, step))
            prev_sign = np.where(sign != 0, sign, prev_sign)
            p = p * (1.0 + steps * resid)
            spent += 1
        if spent >= budget:
            break
    return p


def _active_sets(instance: GameInstance, p: np.ndarray, window: float) -> list[tuple[int, ...]]:
    """Per-user providers within ``window`` of the best ratio; empty for
    users who buy nothing at these prices."""
    ratios = np.asarray(p, dtype=float)[None, :] / instance.c
    mu = ratios.min(axis=1)
    x = instance.inverse_marginal_utilities(mu)
    sets = []
    for i in range(instance.I):
        if x[i] <= 0.0:
            sets.append(())
        else:
            sets.append(tuple(int(j) for j in np.nonzero(ratios[i] <= mu[i] * (1.0 + window))[0]))
    return sets


def _enforce_forest(instance, active, p):
    """Drop the loosest tie edges until the tied bipartite graph is a
    forest.  True ties sit essentially on the surface, so a cycle can
    only come from a spuriously captured near-tie."""
    from .bgr import Bgr, detect_loop

    ratios = np.asarray(p, dtype=float)[None, :] / instance.c
    while True:
        tied = [i for i, a in enumerate(active) if len(a) > 1]
        edges = tuple((i, j) for i in tied for j in active[i])
        graph = Bgr(
            user_nodes=tuple(tied),
            provider_nodes=tuple(sorted({j for _, j in edges})),
            edges=edges,
            P={i: 0.0 for i in tied},
            S={j: 0.0 for _, j in edges},
            c_view={e: 1.0 for e in edges},
        )
        cycle = detect_loop(graph)
        if cycle is None:
            return active
        cycle_edges = []
        nodes = cycle + [cycle[0]]
        for a, b in zip(nodes, nodes[1:]):
            (i,) = [n[1] for n in (a, b) if n[0] == "u"]
            (j,) = [n[1] for n in (a, b) if n[0] == "p"]
            cycle_edges.append((i, j))
        mu = ratios.min(axis=1)
        worst = max(cycle_edges, key=lambda e: ratios[e[0], e[1]] / mu[e[0]])
        active = list(active)
        active[worst[0]] = tuple(j for j in active[worst[0]] if j != worst[1])
    return active


def _components(instance, active):
    """Connected components of the tied part: (providers, users, price
    proportions pi) per component, plus the untied provider list."""
    tied_users = [i for i, a in enumerate(active) if len(a) > 1]
    adj: dict[int, set[int]] = {}
    for i in tied_users:
        members = active[i]
        for a in members:
            adj.setdefault(a, set()).update(m for m in members if m != a)
    comps = []
    seen: set[int] = set()
    for root in sorted(adj):
        if root in seen:
            continue
        comp = {root}
        frontier = [root]
        while frontier:
            node = frontier.pop()
            for nbr in adj.get(node, ()):
                if nbr not in comp:
                    comp.add(nbr)
                    frontier.append(nbr)
        seen |= comp
        providers = sorted(comp)
        users = [i for i in tied_users if active[i][0] in comp]
        # price proportions from the tie equalities p_a / c_ia = p_b / c_ib
        pi = {providers[0]: 1.0}
        changed = True
        while changed:
            changed = False
            for i in users:
                known = [j for j in active[i] if j in pi]
                if not known:
                    continue
                ref = known[0]
                for j in active[i]:
                    if j not in pi:
                        pi[j] = pi[ref] * instance.c[i, j] / instance.c[i, ref]
                        changed = True
        comps.append((providers, users, pi))
    tied_providers = set(adj)
    untied = [j for j in range(instance.J) if j not in tied_providers]
    return comps, untied


def _expand_bracket(f, v0):
    """Bracket the root of a decreasing function on (0, inf)."""
    lo = hi = v0
    flo = f(lo)
    for _ in range(200):
        if flo > 0:
            break
        lo *= 0.5
        flo = f(lo)
    fhi = f(hi)
    for _ in range(200):
        if fhi < 0:
            break
        hi *= 2.0
        fhi = f(hi)
    if not (flo > 0 >= fhi or flo >= 0 > fhi):
        raise NoConvergenceError("could not bracket a clearing price")
    return lo, hi


def _peel_tree(users, active, P, S, c):
    """Peel a tied forest without sign checks; returns the per-edge
    demands and the worst final-edge mismatch across components."""
    adj: dict[tuple[str, int], set[tuple[str, int]]] = {}
    for i in users:
        adj[("u", i)] = {("p", j) for j in active[i]}
        for j in active[i]:
            adj.setdefault(("p", j), set()).add(("u", i))
    P = dict(P)
    S = dict(S)
    demands = {}
    mismatch = 0.0
    remaining = sum(len(active[i]) for i in users)
    while remaining:
        leaf = min(
            (n for n, nbrs in adj.items() if len(nbrs) == 1),
            key=lambda n: (n[1], 0 if n[0] == "p" else 1),
        )
        other = next(iter(adj[leaf]))
        i = leaf[1] if leaf[0] == "u" else other[1]
        j = other[1] if leaf[0] == "u" else leaf[1]
        cij = c[i, j]
        if len(adj[other]) == 1:
            mismatch = max(mismatch, abs(P[i] - S[j] * cij) / max(1.0, abs(P[i])))
        q = P[i] / cij if leaf[0] == "u" else S[j]
        demands[(i, j)] = q
        P[i] -= q * cij
        S[j] -= q
        adj[leaf].remove(other)
        adj[other].remove(leaf)
        remaining -= 1
    return demands, mismatch


def _solve_structure(instance, active, p_hint):
    """Given a frozen active structure, clear the market exactly.

    Every coordinate decouples: an untied provider's clearing depends on
    its own price alone, and each tie component reduces to one scale
    variable.  The component residual is the aggregate of its tree system
    in tie-weighted units (sum of user check-sums valued at the common
    ratio minus sum of weighted provider check-sums), which is the single
    consistency condition a tree leaves.  Each equation is monotone
    decreasing in its coordinate, so bracketing plus Brent's method nails
    the root at machine precision.  Returns the assembled prices.
    """
    comps, untied = _components(instance, active)
    decided_to = {
        j: [i for i, a in enumerate(active) if len(a) == 1 and a[0] == j]
        for j in range(instance.J)
    }

    def decided_demand(j, pj):
        total = 0.0
        for i in decided_to[j]:
            u = instance.utilities[i]
            total += u.inverse_marginal(pj / instance.c[i, j]) / instance.c[i, j]
        return total

    p_new = np.array(p_hint, dtype=float)
    for j in untied:
        if not decided_to[j]:
            # nobody buys here under this structure; park the price where
            # the best-positioned user would tie so the refresh picks it up
            ratios = p_new[None, :] / instance.c
            mu = ratios.min(axis=1)
            p_new[j] = float(np.min(mu * instance.c[:, j]))
            continue

        def excess(pj, j=j):
            return decided_demand(j, pj) - instance.Q[j]

        lo, hi = _expand_bracket(excess, p_new[j])
        p_new[j] = brentq(excess, lo, hi, xtol=1e-18, rtol=1e-14, maxiter=300)

    for providers, users, pi in comps:

        def closure(s, providers=providers, users=users, pi=pi):
            supply_value = 0.0
            for j in providers:
                supply_value += (instance.Q[j] - decided_demand(j, s * pi[j])) * pi[j]
            demand_value = 0.0
            for i in users:
                u = instance.utilities[i]
                j0 = active[i][0]
                x_i = u.inverse_marginal(s * pi[j0] / instance.c[i, j0])
                demand_value += x_i * pi[j0] / instance.c[i, j0]
            return demand_value - supply_value

        s0 = float(np.median([p_hint[j] / pi[j] for j in providers]))
        lo, hi = _expand_bracket(closure, s0)
        s = brentq(closure, lo, hi, xtol=1e-18, rtol=1e-14, maxiter=300)
        for j in providers:
            p_new[j] = s * pi[j]

    return p_new


def solve_prices(
    instance: GameInstance,
    *,
    step: float = 0.05,
    damping: float = 0.5,
    max_iters: int = 200_000,
    clearing_tol: float = 1e-9,
    tie_tol: float = DEFAULT_TIE_TOL,
    p0: np.ndarray | None = None,
    growth: float = 1.05,
    structure_window: float = 3e-3,
    window_ladder: tuple[float, ...] = (1e-2, 1e-3),
) -> np.ndarray:
    """Find market-clearing prices.

    A damped multiplicative tatonnement (price times one plus step times
    relative excess demand, step halved on sign flips) drives prices into
    the equilibrium's neighborhood; demand near tie surfaces is smoothed
    over a shrinking window so the adjustment does not oscillate by a
    tied user's whole share.  The endgame then freezes the candidate
    active structure, clears every decoupled coordinate exactly (Brent on
    monotone scalar equations, one scale per tie component), and corrects
    the structure when the exact solution exposes a spurious tie (edge
    with a negative split) or a provider some user strictly prefers.

    Returns prices whose decoded demand clears every provider within
    ``clearing_tol * Q_j``; raises ``NoConvergenceError`` otherwise.
    """
    p = _initial_prices(instance) if p0 is None else np.array(p0, dtype=float)
    if np.any(p <= 0):
        raise InvalidParameterError("initial prices must be strictly positive")

    def decoded_clearing_ok(prices: np.ndarray) -> bool:
        # transient tie misclassification shows up as infeasible check-sums
        # or even a loop; both just mean "keep iterating"
        try:
            eq = decode_demands(instance, prices, tie_tol=tie_tol)
        except (InfeasibleChecksumsError, LoopDetectedError):
            return False
        resid = np.abs(eq.clearing_residuals(instance))
        return bool(np.all(resid <= clearing_tol * instance.Q))

    if decoded_clearing_ok(p):
        return p

    p = _soft_tatonnement(
        instance, p, tie_tol, step, damping, growth, max_iters, window_ladder
    )

    active = _enforce_forest(instance, _active_sets(instance, p, structure_window), p)
    for _ in range(25):
        try:
            p_new = _solve_structure(instance, active, p)
        except NoConvergenceError:
            break
        refreshed = _enforce_forest(
            instance, _active_sets(instance, p_new, 1e-12), p_new
        )
        if refreshed != active:
            active, p = refreshed, p_new
            continue
        # exact-structure solution found: check splits are genuine
        tied_users = [i for i, a in enumerate(active) if len(a) > 1]
        if tied_users:
            S = {}
            P = {}
            for j in {j for i in tied_users for j in active[i]}:
                decided = sum(
                    instance.utilities[i].inverse_marginal(p_new[j] / instance.c[i, j])
                    / instance.c[i, j]
                    for i, a in enumerate(active)
                    if len(a) == 1 and a[0] == j
                )
                S[j] = instance.Q[j] - decided
            for i in tied_users:
                j0 = active[i][0]
                P[i] = instance.utilities[i].inverse_marginal(
                    p_new[j0] / instance.c[i, j0]
                )
            splits, _ = _peel_tree(tied_users, active, P, S, instance.c)
            negatives = [(v, e) for e, v in splits.items() if v < -1e-8]
            if negatives:
                _, (i, j) = min(negatives)
                active = list(active)
                active[i] = tuple(k for k in active[i] if k != j)
                p = p_new
                continue
        if decoded_clearing_ok(p_new):
            return p_new
        p = p_new

    raise NoConvergenceError(
        "could not identify a clearing price structure", residual=None
    )


def decode_demands(
    instance: GameInstance, p_star: np.ndarray, tie_tol: float = DEFAULT_TIE_TOL
) -> Equilibrium:
    """Recover the unique demand matrix consistent with clearing at p_star.

    Users with a singleton preference set buy x_star / c_ij from their
    single provider; tied users' splits come from graph decoding.  Loop
    detection errors propagate (degenerate instance); a negative decoded
    demand is reported as infeasible check-sums, which signals that
    ``p_star`` is not converged enough.
    """
    p_star = np.asarray(p_star, dtype=float)
    _, x, pref = _best_responses(instance, p_star, tie_tol)
    pref_sets = [tuple(int(j) for j in np.nonzero(row)[0]) for row in pref]

    q = np.zeros((instance.I, instance.J))
    undecided = []
    for i, members in enumerate(pref_sets):
        if x[i] <= 0.0:
            continue
        if len(members) == 1:
            q[i, members[0]] = x[i] / instance.c[i, members[0]]
        else:
            undecided.append(i)

    if undecided:
        try:
            bgr = build_bgr(instance, pref_sets, x, q)
            decoded = bgr_decode(bgr)
        except (NegativeDemandError, ChecksumMismatchError, NegativeChecksumError) as exc:
            raise InfeasibleChecksumsError(str(exc)) from exc
        for (i, j), value in decoded.items():
            q[i, j] = value

    welfare = float(instance.utility_values(x).sum())
    return Equilibrium(
        q=q,
        p=p_star.copy(),
        x=np.asarray(x, dtype=float),
        undecided=frozenset(undecided),
        welfare=welfare,
    )


# ----------------------------------------------------------------------
# optimality certification
# ----------------------------------------------------------------------

def verify_kkt(
    instance: GameInstance, q: np.ndarray, p: np.ndarray, tol: float = 1e-6
) -> KktReport:
    """Evaluate the optimality system at (q, p).

    Negative demands or nonpositive prices are reported as infeasible
    rather than raised.  Effective resources are derived from q, so the
    consistency constraint x_i = sum_j q_ij c_ij holds by construction.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    x = (q * instance.c).sum(axis=1)
    grad = instance.c * instance.marginal_utilities(x)[:, None]
    gap = grad - p[None, :]
    stationarity = float(np.max(np.maximum(gap, 0.0)))
    with np.errstate(invalid="ignore"):
        slack_terms = np.where(q != 0.0, np.abs(q * gap), 0.0)
    slackness = float(np.max(slack_terms))
    clearing = float(np.max(np.abs(q.sum(axis=0) - instance.Q)))
    feasible = bool(np.all(q >= 0.0) and np.all(p > 0.0))
    residuals_ok = (
        np.isfinite(stationarity)
        and np.isfinite(slackness)
        and max(stationarity, slackness, clearing) <= tol
    )
    return KktReport(
        stationarity_residual=stationarity,
        complementary_slackness_residual=slackness,
        clearing_residual=clearing,
        feasible=feasible,
        passed=bool(feasible and residuals_ok),
    )


def social_welfare(instance: GameInstance, q: np.ndarray) -> float:
    """sum_i u_i(sum_j q_ij c_ij)."""
    q = np.asarray(q, dtype=float)
    x = (q * instance.c).sum(axis=1)
    return float(instance.utility_values(x).sum())


# ----------------------------------------------------------------------
# exhaustive oracle (desk scale)
# ----------------------------------------------------------------------

def _simplex_grid(I: int, N: int, windows=None) -> np.ndarray:
    """Integer compositions of N into I parts, optionally windowed per part."""
    if windows is None:
        windows = [(0, N)] * I
    if I == 1:
        lo, hi = windows[0]
        if lo <= N <= hi:
            return np.array([[N]], dtype=np.int64)
        return np.empty((0, 1), dtype=np.int64)
    axes = []
    for lo, hi in windows[:-1]:
        axes.append(np.arange(max(lo, 0), min(hi, N) + 1, dtype=np.int64))
    mesh = np.meshgrid(*axes, indexing="ij")
    head = np.stack([m.ravel() for m in mesh], axis=1)
    rest = N - head.sum(axis=1)
    lo, hi = windows[-1]
    keep = (rest >= max(lo, 0)) & (rest <= hi)
    return np.concatenate([head[keep], rest[keep, None]], axis=1)


def _column_welfare_max(instance, grids, scales):
    """Welfare maximum over the product of per-provider grids, chunked."""
    I = instance.I
    best_w = -np.inf
    best = None
    if instance.J == 1:
        A = grids[0] * scales[0]  # (n, I) candidate demand columns
        xs = A * instance.c[:, 0][None, :]
        welfare = _welfare_rows(instance, xs)
        k = int(np.argmax(welfare))
        return A[k][:, None], float(welfare[k])
    A = grids[0] * scales[0]
    B = grids[1] * scales[1]
    xB = B * instance.c[:, 1][None, :]
    chunk = max(1, int(4_000_000 // max(1, B.shape[0])))
    for start in range(0, A.shape[0], chunk):
        Ac = A[start : start + chunk]
        xA = Ac * instance.c[:, 0][None, :]
        x = xA[:, None, :] + xB[None, :, :]
        welfare = _welfare_grid(instance, x)
        k = int(np.argmax(welfare))
        ka, kb = np.unravel_index(k, welfare.shape)
        if welfare[ka, kb] > best_w:
            best_w = float(welfare[ka, kb])
            best = np.stack([Ac[ka], B[kb]], axis=1)
    return best, best_w


def _welfare_rows(instance, x):
    """Welfare per row of an (n, I) matrix of effective resources."""
    total = np.zeros(x.shape[0])
    for i, u in enumerate(instance.utilities):
        total += u.value(x[:, i])
    return total


def _welfare_grid(instance, x):
    """Welfare per cell of an (nA, nB, I) block of effective resources."""
    total = np.zeros(x.shape[:2])
    for i, u in enumerate(instance.utilities):
        total += u.value(x[:, :, i])
    return total


def brute_force_swo(
    instance: GameInstance, grid_step: float, *, budget: int = 2_000_000
) -> tuple[np.ndarray, float]:
    """Exhaustive welfare maximization on the clearing grid; a test oracle.

    Demand matrices are enumerated on the product of per-provider
    simplices sum_i q_ij = Q_j discretized at ``grid_step``.  When the
    full product exceeds the evaluation budget, the search proceeds in
    stages: a coarse full enumeration followed by full enumerations of
    progressively finer grids restricted to a window of two previous-stage
    cells around the incumbent.  The objective is concave, so the window
    brackets the fine-grid maximizer; the final stage always runs at the
    requested resolution.  Deliberately independent of the price-based
    solver.
    """
    if grid_step <= 0:
        raise InvalidParameterError("grid_step must be positive")
    if instance.I > 3 or instance.J > 2:
        raise InstanceTooLargeError(
            f"oracle is limited to 3 users and 2 providers, got {instance.I} x {instance.J}"
        )
    I, J = instance.I, instance.J
    targets = [max(1, round(instance.Q[j] / grid_step)) for j in range(J)]

    def product_size(Ns):
        # compositions of N into I parts grow like N**(I-1)
        size = 1
        for N in Ns:
            size *= (N + 1) ** (I - 1) if I > 1 else 1
        return size

    # build the resolution ladder, coarsest first
    ladder = [list(targets)]
    while product_size(ladder[0]) > budget:
        ladder.insert(0, [max(1, N // 5) for N in ladder[0]])

    incumbent = None  # staged windows, in units of the previous grid
    prev_Ns = None
    best_q, best_w = None, -np.inf
    for Ns in ladder:
        grids = []
        for j, N in enumerate(Ns):
            if incumbent is None:
                windows = None
            else:
                ratio = N / prev_Ns[j]
                centers = incumbent[:, j] * ratio
                half = 3.0 * ratio  # three previous-stage cells of margin
                windows = [
                    (int(np.floor(c - half)), int(np.ceil(c + half))) for c in centers
                ]
            grid = _simplex_grid(I, N, windows)
            if grid.shape[0] == 0:
                grid = _simplex_grid(I, N)
            grids.append(grid)
        scales = [instance.Q[j] / Ns[j] for j in range(J)]
        best_q, best_w = _column_welfare_max(instance, grids, scales)
        incumbent = np.stack(
            [np.rint(best_q[:, j] / scales[j]).astype(np.int64) for j in range(J)], axis=1
        )
        prev_Ns = Ns
    return best_q, best_w


# ----------------------------------------------------------------------
# unilateral price deviation diagnostic
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class DeviationOutcome:
    provider: int
    delta: float
    revenue: float
    revenue_change: float


@dataclass(frozen=True)
class DeviationReport:
    outcomes: tuple[DeviationOutcome, ...]
    max_revenue_increase: float


def deviation_diagnostic(
    instance: GameInstance,
    eq: Equilibrium,
    deltas=(0.01, 0.05, 0.10),
    tie_tol: float = DEFAULT_TIE_TOL,
) -> DeviationReport:
    """Check that no provider gains by unilaterally moving its price.

    Each provider's price is perturbed by +/- delta, all users' best
    responses are recomputed, and sales are rationed at the supply cap,
    so revenue is p_j * min(total demand, Q_j).  The baseline is the
    equilibrium revenue p_j * Q_j (every provider sells out there).  The
    perturbation breaks ties, so parking interim demand at a single
    provider is innocuous off the equilibrium.
    """
    outcomes = []
    max_increase = -np.inf
    for j in range(instance.J):
        baseline = float(eq.p[j] * instance.Q[j])
        for delta in deltas:
            for signed in ({0.0} if delta == 0.0 else {delta, -delta}):
                if signed == 0.0:
                    change = 0.0
                    revenue = baseline
                else:
                    p_dev = eq.p.copy()
                    p_dev[j] *= 1.0 + signed
                    demand, _, _ = _interim_demand(instance, p_dev, tie_tol)
                    revenue = float(p_dev[j] * min(demand[j], instance.Q[j]))
                    change = revenue - baseline
                outcomes.append(
                    DeviationOutcome(
                        provider=j, delta=signed, revenue=revenue, revenue_change=change
                    )
                )
                max_increase = max(max_increase, change)
    return DeviationReport(outcomes=tuple(outcomes), max_revenue_increase=float(max_increase))


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def equilibrium_to_dict(eq: Equilibrium, report: KktReport) -> dict:
    return {
        "q": eq.q.ravel().tolist(),
        "p": eq.p.tolist(),
        "x": eq.x.tolist(),
        "undecided": sorted(eq.undecided),
        "welfare": eq.welfare,
        "kkt": report.to_dict(),
    }


def equilibrium_from_dict(d: dict, instance: GameInstance) -> Equilibrium:
    q = np.asarray(d["q"], dtype=float).reshape(instance.I, instance.J)
    return Equilibrium(
        q=q,
        p=np.asarray(d["p"], dtype=float),
        x=np.asarray(d["x"], dtype=float),
        undecided=frozenset(int(i) for i in d["undecided"]),
        welfare=float(d["welfare"]),
    )
