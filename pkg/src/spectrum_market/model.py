"""Market instances and the physical channel model that generates them.

An instance couples ``I`` users and ``J`` providers through a strictly
positive I x J matrix of channel-quality offsets ``c`` (bits/s obtained
per unit of purchased resource), per-provider supplies ``Q`` and per-user
concave utilities.  A user buying the demand vector q_i receives the
effective resource x_i = sum_j q_ij * c_ij and pays sum_j p_j * q_ij.

Random instances place providers and users uniformly in a square area.
The channel gain amplitude between user i and provider j is
|h_ij| = xi_ij / d_ij**(alpha_pl/2) with Rayleigh-distributed xi and
Euclidean distance d; the offset follows the half-rate Shannon form

    c_ij = 0.5 * W * log2(1 + snr_scale * |h_ij|**2 / W).

``snr_scale`` folds transmit power and noise density into a single
calibration constant.  The default value is frozen from a Monte-Carlo
calibration of the mean offset at reference distances (about 68 Mbps at
5 m and about 2.5 Mbps at 50 m for the default bandwidth).

All offsets are guaranteed pairwise distinct: equal draws happen with
probability zero over the reals but not in floating point, so colliding
entries are redrawn.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy.special import exp1

from .errors import InvalidParameterError
from .utilities import ALPHA_FAIR, SCALED_LOG, UtilityFunction


@dataclass(frozen=True)
class ChannelModelConfig:
    """Physical parameters of the random channel model."""

    area_side: float = 200.0          # meters
    bandwidth: float = 20e6           # Hz per provider
    path_loss_exponent: float = 3.0   # outdoor power distance loss
    snr_scale: float = 2.5e11         # frozen calibration constant
    rayleigh_scale: float = 1.0

    def __post_init__(self):
        for name in ("area_side", "bandwidth", "path_loss_exponent", "snr_scale", "rayleigh_scale"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be a positive finite real, got {v!r}")


DEFAULT_CHANNEL_CONFIG = ChannelModelConfig()


@dataclass
class GameInstance:
    """A full market description.

    ``c`` is the I x J matrix of channel-quality offsets, ``Q`` the
    length-J supply vector, ``utilities`` one utility per user.  ``seed``
    records the randomness provenance (0 for hand-built instances).
    Arrays are copied and frozen at construction; instances are safe to
    share across threads.
    """

    c: np.ndarray
    Q: np.ndarray
    utilities: tuple[UtilityFunction, ...]
    seed: int = 0

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        Q = np.array(self.Q, dtype=float)
        if c.ndim != 2:
            raise InvalidParameterError("c must be a 2-D matrix")
        if Q.ndim != 1 or Q.shape[0] != c.shape[1]:
            raise InvalidParameterError("Q must be a vector with one entry per provider")
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise InvalidParameterError("all channel offsets must be positive and finite")
        if np.unique(c).size != c.size:
            raise InvalidParameterError("channel offsets must be pairwise distinct")
        if not np.all(np.isfinite(Q)) or np.any(Q <= 0):
            raise InvalidParameterError("all supplies must be positive and finite")
        utilities = tuple(self.utilities)
        if len(utilities) != c.shape[0]:
            raise InvalidParameterError("need exactly one utility per user")
        c.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "utilities", utilities)

    @property
    def I(self) -> int:
        return self.c.shape[0]

    @property
    def J(self) -> int:
        return self.c.shape[1]

    # Per-user parameter arrays for vectorized utility calculus.
    @cached_property
    def _is_log(self) -> np.ndarray:
        return np.array([u.family == SCALED_LOG for u in self.utilities])

    @cached_property
    def _a(self) -> np.ndarray:
        return np.array([u.a for u in self.utilities])

    @cached_property
    def _alpha(self) -> np.ndarray:
        return np.array([u.alpha if u.family == ALPHA_FAIR else np.nan for u in self.utilities])

    def utility_values(self, x: np.ndarray) -> np.ndarray:
        """u_i(x_i) for a length-I vector of effective resources."""
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            fair = self._a * x ** (1.0 - self._alpha) / (1.0 - self._alpha)
        return np.where(self._is_log, self._a * np.log1p(x), fair)

    def marginal_utilities(self, x: np.ndarray) -> np.ndarray:
        """u_i'(x_i) per user; +inf where an alpha-fair user sits at x = 0."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            fair = self._a * x ** (-self._alpha)
        return np.where(self._is_log, self._a / (1.0 + x), fair)

    def inverse_marginal_utilities(self, mu: np.ndarray) -> np.ndarray:
        """Per-user x >= 0 with u_i'(x) = mu_i, or 0 past the corner; mu > 0."""
        mu = np.asarray(mu, dtype=float)
        with np.errstate(invalid="ignore"):
            fair = (self._a / mu) ** (1.0 / self._alpha)
        return np.where(self._is_log, np.maximum(self._a / mu - 1.0, 0.0), fair)


def effective_resource(q_i: np.ndarray, c_i: np.ndarray) -> float:
    """sum_j q_ij * c_ij for one user's demand row."""
    q_i = np.asarray(q_i, dtype=float)
    c_i = np.asarray(c_i, dtype=float)
    if q_i.shape != c_i.shape:
        raise InvalidParameterError("demand and offset rows must have matching length")
    return float(q_i @ c_i)


def payoff(u: UtilityFunction, q_i: np.ndarray, c_i: np.ndarray, p: np.ndarray) -> float:
    """Utility of the effective resource minus the linear payment."""
    q_i = np.asarray(q_i, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(u.value(effective_resource(q_i, c_i)) - p @ q_i)


# ----------------------------------------------------------------------
# random instance generation
# ----------------------------------------------------------------------

def _offsets(cfg: ChannelModelConfig, d: np.ndarray, xi: np.ndarray) -> np.ndarray:
    h2 = xi**2 / d**cfg.path_loss_exponent
    return 0.5 * cfg.bandwidth * np.log2(1.0 + cfg.snr_scale * h2 / cfg.bandwidth)


def generate_instance(
    cfg: ChannelModelConfig,
    I: int,
    J: int,
    utility: Union[UtilityFunction, Sequence[UtilityFunction]],
    seed: int,
) -> GameInstance:
    """Draw a random market instance, reproducibly for a fixed seed.

    ``utility`` is either one utility applied to every user or a
    length-I sequence.  Supplies default to one unit per provider (the
    resource is a time share).  Colliding offset draws are regenerated so
    the returned matrix is pairwise distinct at double precision.
    """
    if I < 1 or J < 1:
        raise InvalidParameterError("need at least one user and one provider")
    if isinstance(utility, UtilityFunction):
        utilities = (utility,) * I
    else:
        utilities = tuple(utility)

    rng = np.random.default_rng(seed)
    providers = rng.uniform(0.0, cfg.area_side, size=(J, 2))
    users = rng.uniform(0.0, cfg.area_side, size=(I, 2))
    d = np.linalg.norm(users[:, None, :] - providers[None, :, :], axis=2)
    while np.any(d == 0.0):
        # coincident placement would give an infinite offset
        bad = np.unique(np.nonzero(d == 0.0)[0])
        users[bad] = rng.uniform(0.0, cfg.area_side, size=(bad.size, 2))
        d = np.linalg.norm(users[:, None, :] - providers[None, :, :], axis=2)

    xi = rng.rayleigh(cfg.rayleigh_scale, size=(I, J))
    c = _offsets(cfg, d, xi)
    while True:
        flat = c.ravel()
        _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
        dup = (counts[inverse] > 1).reshape(I, J)
        if not dup.any():
            break
        rows, cols = np.nonzero(dup)
        xi[rows, cols] = rng.rayleigh(cfg.rayleigh_scale, size=rows.size)
        c[rows, cols] = _offsets(cfg, d[rows, cols], xi[rows, cols])

    Q = np.ones(J)
    return GameInstance(c=c, Q=Q, utilities=utilities, seed=int(seed))


def expected_offset_at_distance(cfg: ChannelModelConfig, distance: float) -> float:
    """Mean channel offset over the fading distribution at a fixed distance.

    With Rayleigh fading the received SNR is exponentially distributed
    with mean m = snr_scale * 2*rayleigh_scale**2 / (W * d**alpha_pl), and
    E[ln(1 + X)] = exp(1/m) * E1(1/m) for X ~ Exp(mean m).  Used for
    calibration probes; cross-checked against Monte-Carlo sampling in the
    test suite.
    """
    if distance <= 0:
        raise InvalidParameterError("distance must be positive")
    m = cfg.snr_scale * 2.0 * cfg.rayleigh_scale**2 / (cfg.bandwidth * distance**cfg.path_loss_exponent)
    mean_ln = math.exp(1.0 / m) * exp1(1.0 / m)
    return 0.5 * cfg.bandwidth * mean_ln / math.log(2.0)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def instance_to_dict(instance: GameInstance) -> dict:
    """JSON-ready dict: I, J, seed, Q, utilities, c (row-major)."""
    return {
        "I": instance.I,
        "J": instance.J,
        "seed": instance.seed,
        "Q": instance.Q.tolist(),
        "utilities": [u.to_dict() for u in instance.utilities],
        "c": instance.c.ravel().tolist(),
    }


def instance_from_dict(d: dict) -> GameInstance:
    I, J = int(d["I"]), int(d["J"])
    c = np.asarray(d["c"], dtype=float)
    if c.size != I * J:
        raise InvalidParameterError(f"expected {I * J} offsets, got {c.size}")
    utilities = tuple(UtilityFunction.from_dict(u) for u in d["utilities"])
    return GameInstance(
        c=c.reshape(I, J),
        Q=np.asarray(d["Q"], dtype=float),
        utilities=utilities,
        seed=int(d.get("seed", 0)),
    )


def write_instance(instance: GameInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2)
        fh.write("\n")


def read_instance(path) -> GameInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))
