"""Greedy truncation sets capturing all but a zeta-fraction of occupation.

The member set always contains the center state; the remaining states
join in increasing order of their mean hitting time T_k (ties by state
id), which keeps the worst-case member time T_zeta_plus as small as the
occupation constraint allows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidTruncationError
from .generator import SparseGenerator, accelerated_return_generator
from .solvers import HittingStats, excursion_mean_hitting_times, return_probability

__all__ = [
    "TruncationPlan",
    "select_truncation",
    "boundary_rate",
    "AcceleratedStats",
    "accelerated_stats",
]


@dataclass(frozen=True)
class TruncationPlan:
    """A chosen member set with the quantities every bound consumes.

    ``residual`` is the occupation mass sum of T_sk outside the members;
    the defining constraint is residual <= zeta (1-p_s) T_s.  ``q_zeta``
    is the largest total jump rate over the one-step landing set outside
    the members (zero when the members exhaust C).
    """

    zeta: float
    members: np.ndarray
    T_zeta_plus: float
    r_zeta: float
    q_zeta: float
    residual: float
    s: int
    p_s: float
    T_s: float

    def __post_init__(self):
        members = np.unique(np.asarray(self.members, dtype=np.int64))
        object.__setattr__(self, "members", members)
        if self.s not in members:
            raise InvalidTruncationError(f"center state {self.s} missing from the plan")
        slack = 1e-12 * max(1.0, self.T_s)
        if self.residual > self.zeta * (1.0 - self.p_s) * self.T_s + slack:
            raise InvalidTruncationError(
                f"residual {self.residual!r} violates the occupation constraint"
            )
        if not (-1e-12 <= self.r_zeta <= self.p_s + 1e-9):
            raise InvalidTruncationError(
                f"r_zeta {self.r_zeta!r} escapes [0, p_s={self.p_s!r}]"
            )


def boundary_rate(Q: SparseGenerator, members) -> float:
    """sup of q_k over the landing set J: states outside ``members``
    reachable in one jump from inside (cemetery excluded)."""
    members = np.asarray(members, dtype=np.int64)
    inside = np.isin(Q.src, members)
    landing = np.unique(Q.dst[inside & ~np.isin(Q.dst, members) & (Q.dst != 0)])
    if landing.size == 0:
        return 0.0
    return float(Q.q_total[landing].max())


def select_truncation(Q: SparseGenerator, stats: HittingStats, zeta: float) -> TruncationPlan:
    """Pick members achieving residual <= zeta (1-p_s) T_s, greedily by T_k.

    If even the full class cannot meet the constraint the plan degenerates
    to members = C with zero residual, which every downstream bound
    accepts.
    """
    if zeta <= 0:
        raise InvalidTruncationError("zeta must be positive")
    labels = stats.labels
    s = stats.s
    target = zeta * (1.0 - stats.p_s) * stats.T_s
    others = labels[labels != s]
    T_others = np.array([stats.T_of(int(k)) for k in others])
    order = np.lexsort((others, T_others))
    ordered = others[order]
    occ = np.array([stats.T_s_of(int(k)) for k in ordered])
    # residual after admitting the first i ordered states
    residual_after = (stats.T_s - stats.T_s_of(s)) - np.concatenate([[0.0], np.cumsum(occ)])
    eligible = np.nonzero(residual_after <= target + 1e-15 * max(1.0, stats.T_s))[0]
    take = int(eligible[0]) if eligible.size else ordered.size
    members = np.sort(np.concatenate([[s], ordered[:take]]))
    residual = max(float(residual_after[take]) if take < residual_after.size else 0.0, 0.0)
    if take == ordered.size:
        residual = 0.0
    T_plus = float(max(stats.T_of(int(k)) for k in members))
    r_zeta = return_probability(Q, members, s)
    q_zeta = boundary_rate(Q, members)
    return TruncationPlan(
        zeta=float(zeta),
        members=members,
        T_zeta_plus=T_plus,
        r_zeta=r_zeta,
        q_zeta=q_zeta,
        residual=residual,
        s=s,
        p_s=stats.p_s,
        T_s=stats.T_s,
    )


@dataclass(frozen=True)
class AcceleratedStats:
    """Hitting quantities of the accelerated return process on a member set.

    ``T_plus`` is the worst mean time to reach s over the members,
    ``T_s`` the mean return time at s, and ``r`` the probability that an
    excursion of the underlying chain returns to s without dying or
    leaving the member set (the accelerated process then never gets
    rerouted during that excursion).
    """

    members: np.ndarray
    s: int
    T_plus: float
    T_s: float
    r: float
    generator: SparseGenerator

    @property
    def q_s_bound(self) -> float:
        """Lower bound on 1/T_s: the total jump rate at s."""
        s_internal = self.generator.index_of_label(self.s)
        return float(self.generator.q_total[s_internal])


def accelerated_stats(Q: SparseGenerator, members, s: int) -> AcceleratedStats:
    """Build the accelerated generator and solve its hitting quantities."""
    gen = accelerated_return_generator(Q, members, s)
    T = excursion_mean_hitting_times(gen, s)
    s_internal = gen.index_of_label(s)
    return AcceleratedStats(
        members=np.unique(np.asarray(members, dtype=np.int64)),
        s=s,
        T_plus=float(T.max()),
        T_s=float(T[s_internal - 1]),
        r=return_probability(Q, members, s),
        generator=gen,
    )
