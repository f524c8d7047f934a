"""Total-variation error bounds for quasi-equilibrium approximations.

Three bound families are evaluated from hitting statistics alone:

* the equilibrium-vs-equilibrium bound
  2 (1-p_s) (T_zeta_plus / (p T_s) + zeta + M/p) for return laws with
  mu(T) <= M T_s;
* the long-time bound eta(t) for the law of the absorbing chain started
  at s against the returned equilibrium;
* the accelerated-return variant of eta(t) for truncated processes.

The coupling constant D is not known numerically; it enters linearly in
the square-root terms and defaults to 1, with calibration left to the
soundness suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundInapplicableError
from .generator import SparseGenerator
from .solvers import HittingStats
from .truncation import TruncationPlan, select_truncation

__all__ = [
    "BoundInputs",
    "BoundReport",
    "epsilon_bound",
    "tv_bound_main",
    "eta_bound",
    "tilde_bound",
    "crude_r_bound",
    "informal_window",
    "optimize_zeta",
    "inputs_from_plan",
]

DEFAULT_ZETA_GRID = (1e-4, 10.0, 32)


@dataclass(frozen=True)
class BoundInputs:
    """Scalar ingredients of the bound formulas.

    ``q_s`` is the total jump rate at the center state (it scales the
    coupling term through B_zeta = T_zeta_plus q_s / p) and ``D`` stands
    in for the unknown universal constant.
    """

    p: float
    p_s: float
    T_s: float
    T_zeta_plus: float
    zeta: float
    M: float
    r_zeta: float
    q_s: float
    D: float = 1.0
    t: float | None = None

    def __post_init__(self):
        if not (0.0 < self.p <= self.p_s <= 1.0 + 1e-12):
            raise BoundInapplicableError(
                f"need 0 < p <= p_s <= 1, got p={self.p!r}, p_s={self.p_s!r}"
            )
        if self.T_s <= 0 or self.T_zeta_plus <= 0:
            raise BoundInapplicableError("T_s and T_zeta_plus must be positive")
        if self.zeta <= 0:
            raise BoundInapplicableError("zeta must be positive")
        if self.D <= 0:
            raise BoundInapplicableError("D must be positive")
        if not (0.0 <= self.r_zeta <= 1.0):
            raise BoundInapplicableError(f"r_zeta {self.r_zeta!r} outside [0,1]")

    @property
    def B_zeta(self) -> float:
        return self.T_zeta_plus * self.q_s / self.p


def inputs_from_plan(
    stats: HittingStats, plan: TruncationPlan, M: float, D: float = 1.0, t: float | None = None
) -> BoundInputs:
    return BoundInputs(
        p=stats.p,
        p_s=stats.p_s,
        T_s=stats.T_s,
        T_zeta_plus=plan.T_zeta_plus,
        zeta=plan.zeta,
        M=M,
        r_zeta=plan.r_zeta,
        q_s=stats.q_s,
        D=D,
        t=t,
    )


def epsilon_bound(inputs: BoundInputs) -> float:
    """Equilibrium mass outside the truncation: (1-p_s)(zeta + M/p)."""
    return (1.0 - inputs.p_s) * (inputs.zeta + inputs.M / inputs.p)


def tv_bound_main(inputs: BoundInputs) -> float:
    """2 (1-p_s) (T_zeta_plus/(p T_s) + zeta + M/p), valid for M >= 1."""
    if inputs.M < 1.0:
        raise BoundInapplicableError(
            f"M = {inputs.M!r} < 1: the point mass at s must belong to the return class"
        )
    return (
        2.0
        * (1.0 - inputs.p_s)
        * (inputs.T_zeta_plus / (inputs.p * inputs.T_s) + inputs.zeta + inputs.M / inputs.p)
    )


def eta_bound(inputs: BoundInputs, t: float) -> float:
    """Long-time bound eta(t) for the absorbing chain started at s.

    Requires t >= 16 T_zeta_plus / p and epsilon(zeta, 1) <= 1/2.
    """
    t_min = 16.0 * inputs.T_zeta_plus / inputs.p
    if t < t_min:
        raise BoundInapplicableError(
            f"eta requires t >= 16 T_zeta_plus/p = {t_min!r}, got t = {t!r}"
        )
    eps1 = (1.0 - inputs.p_s) * (inputs.zeta + 1.0 / inputs.p)
    if eps1 > 0.5:
        raise BoundInapplicableError(
            f"eta requires epsilon(zeta, 1) <= 1/2, got {eps1!r}"
        )
    lead = (1.0 - inputs.r_zeta) * (2.0 * t / inputs.T_s + inputs.zeta + 1.0 / inputs.p)
    coupling = inputs.D * inputs.B_zeta * math.sqrt(inputs.T_zeta_plus / (inputs.p * t))
    geometric = (2.0 / math.e) ** (inputs.p * t / (16.0 * inputs.T_zeta_plus))
    return lead + coupling + geometric


def tilde_bound(
    T_tilde_plus: float,
    T_tilde_s: float,
    r_tilde: float,
    q_s: float,
    D: float,
    t: float,
) -> float:
    """Accelerated-return variant: (1-r)(t/T_s) + D B sqrt(T+/t) + (2/e)^(t/16T+).

    B = T_tilde_plus q_s; requires t >= 16 T_tilde_plus.
    """
    if T_tilde_plus <= 0 or T_tilde_s <= 0:
        raise BoundInapplicableError("accelerated mean hitting times must be positive")
    t_min = 16.0 * T_tilde_plus
    if t < t_min:
        raise BoundInapplicableError(
            f"tilde bound requires t >= 16 T_tilde_plus = {t_min!r}, got t = {t!r}"
        )
    B = T_tilde_plus * q_s
    lead = (1.0 - r_tilde) * (t / T_tilde_s)
    coupling = D * B * math.sqrt(T_tilde_plus / t)
    geometric = (2.0 / math.e) ** (t / (16.0 * T_tilde_plus))
    return lead + coupling + geometric


def crude_r_bound(zeta: float, q_zeta: float, T_s: float, p_s: float) -> float:
    """Occupation-based bound zeta q_zeta T_s (1-p_s) on the excursion deficit."""
    if zeta < 0 or q_zeta < 0 or T_s < 0:
        raise BoundInapplicableError("crude bound inputs must be nonnegative")
    return zeta * q_zeta * T_s * (1.0 - p_s)


def informal_window(inputs: BoundInputs) -> tuple[float, float]:
    """(t_low, t_high) = (B_zeta^2 T_zeta_plus / p, T_s / (1 - r_zeta)).

    The range in which the long-time bound is informative; no sharpness is
    claimed.  t_high is infinite when the truncation loses no excursions.
    """
    t_low = inputs.B_zeta**2 * inputs.T_zeta_plus / inputs.p
    deficit = 1.0 - inputs.r_zeta
    t_high = inputs.T_s / deficit if deficit > 0 else math.inf
    return (t_low, t_high)


@dataclass(frozen=True)
class BoundReport:
    """Evaluated right-hand sides for one truncation choice."""

    zeta: float
    epsilon: float
    tv_bound: float
    crude_r: float
    window_low: float
    window_high: float
    eta: float | None = None
    tilde: float | None = None
    t: float | None = None
    plan: TruncationPlan | None = field(default=None, compare=False)
    inputs: BoundInputs | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {
            "zeta": self.zeta,
            "epsilon": self.epsilon,
            "tv_bound": self.tv_bound,
            "crude_r": self.crude_r,
            "window_low": self.window_low,
            "window_high": self.window_high,
            "eta": self.eta,
            "tilde": self.tilde,
            "t": self.t,
        }
        if self.plan is not None:
            out["members_size"] = int(self.plan.members.size)
            out["members_min"] = int(self.plan.members.min())
            out["members_max"] = int(self.plan.members.max())
            out["T_zeta_plus"] = self.plan.T_zeta_plus
            out["r_zeta"] = self.plan.r_zeta
            out["q_zeta"] = self.plan.q_zeta
            out["residual"] = self.plan.residual
        if self.inputs is not None:
            out.update(
                {
                    "p": self.inputs.p,
                    "p_s": self.inputs.p_s,
                    "T_s": self.inputs.T_s,
                    "M": self.inputs.M,
                    "q_s": self.inputs.q_s,
                    "D": self.inputs.D,
                }
            )
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    CSV_FIELDS = (
        "zeta",
        "epsilon",
        "tv_bound",
        "crude_r",
        "window_low",
        "window_high",
        "eta",
        "tilde",
        "t",
    )

    def to_csv_row(self) -> list:
        d = self.to_dict()
        return [d[k] if d[k] is not None else "" for k in self.CSV_FIELDS]


def report_for_plan(
    stats: HittingStats,
    plan: TruncationPlan,
    M: float,
    D: float = 1.0,
    t: float | None = None,
) -> BoundReport:
    """Evaluate every bound for one plan; time bounds only if applicable."""
    inputs = inputs_from_plan(stats, plan, M, D=D, t=t)
    lo, hi = informal_window(inputs)
    eta = None
    if t is not None:
        try:
            eta = eta_bound(inputs, t)
        except BoundInapplicableError:
            eta = None
    return BoundReport(
        zeta=plan.zeta,
        epsilon=epsilon_bound(inputs),
        tv_bound=tv_bound_main(inputs),
        crude_r=crude_r_bound(plan.zeta, plan.q_zeta, stats.T_s, stats.p_s),
        window_low=lo,
        window_high=hi,
        eta=eta,
        tilde=None,
        t=t,
        plan=plan,
        inputs=inputs,
    )


def optimize_zeta(
    Q: SparseGenerator,
    stats: HittingStats,
    M: float,
    t: float | None = None,
    D: float = 1.0,
    zeta_grid: np.ndarray | None = None,
) -> tuple[float, BoundReport, list[BoundReport]]:
    """Grid search for the zeta minimizing the equilibrium TV bound.

    Returns the winning zeta, its report (with the induced plan), and the
    full list of per-grid-point reports for sweep output.
    """
    if zeta_grid is None:
        lo, hi, npts = DEFAULT_ZETA_GRID
        zeta_grid = np.geomspace(lo, hi, npts)
    reports: list[BoundReport] = []
    plan_cache: dict[tuple[int, ...], TruncationPlan] = {}
    for zeta in np.asarray(zeta_grid, dtype=np.float64):
        plan = select_truncation(Q, stats, float(zeta))
        key = tuple(int(m) for m in plan.members)
        cached = plan_cache.get(key)
        if cached is None:
            plan_cache[key] = plan
        else:
            # identical member set: reuse the solved r_zeta, keep this zeta
            plan = TruncationPlan(
                zeta=float(zeta),
                members=cached.members,
                T_zeta_plus=cached.T_zeta_plus,
                r_zeta=cached.r_zeta,
                q_zeta=cached.q_zeta,
                residual=cached.residual,
                s=cached.s,
                p_s=cached.p_s,
                T_s=cached.T_s,
            )
        reports.append(report_for_plan(stats, plan, M, D=D, t=t))
    best = min(reports, key=lambda r: r.tv_bound)
    return best.zeta, best, reports
