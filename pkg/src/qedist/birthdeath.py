"""Closed-form birth-death quantities in overflow-safe log arithmetic.

A :class:`BirthDeathModel` is a truncated chain on {1..cap} with birth
rates b_j (forced to zero at the cap) and strictly positive death rates
d_j; state 1 dies into the cemetery.  All products of rate ratios are
carried as logs because the weights alpha_j grow exponentially with the
population scale, far beyond double range for large areas.

The density-dependent model zoo builds rates b_j = j beta(j/A),
d_j = j delta(j/A) from per-capita laws beta, delta and suggests the
center state s = floor(A c) at the density equilibrium beta(c) = delta(c).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import ratexpr
from .errors import ConfigError, DivergenceError, DomainError, NoEquilibriumError
from .generator import SparseGenerator

__all__ = [
    "LogWeight",
    "BirthDeathModel",
    "alpha",
    "S",
    "bd_hit_before",
    "bd_ps",
    "bd_one_minus_ps",
    "bd_p",
    "bd_u",
    "bd_return_deficit",
    "bd_occupation",
    "bd_Tsi",
    "bd_Tk",
    "bd_Ts",
    "bd_r_zeta",
    "bd_one_minus_r_zeta",
    "DensityModel",
    "make_density_model",
    "FAMILIES",
]

_TAIL_REL = 1e-12


@dataclass(frozen=True)
class LogWeight:
    """A nonnegative quantity stored as its natural log (-inf for zero)."""

    log: float

    @classmethod
    def from_float(cls, x: float) -> "LogWeight":
        if x < 0:
            raise ValueError("LogWeight holds nonnegative values only")
        return cls(log=math.log(x) if x > 0 else -math.inf)

    @property
    def is_zero(self) -> bool:
        return self.log == -math.inf

    def __float__(self) -> float:
        return math.exp(self.log) if self.log > -math.inf else 0.0

    def __mul__(self, other: "LogWeight") -> "LogWeight":
        if self.is_zero or other.is_zero:
            return LogWeight(log=-math.inf)
        return LogWeight(log=self.log + other.log)

    def __truediv__(self, other: "LogWeight") -> "LogWeight":
        if other.is_zero:
            raise ZeroDivisionError("division by a zero LogWeight")
        if self.is_zero:
            return LogWeight(log=-math.inf)
        return LogWeight(log=self.log - other.log)

    def __add__(self, other: "LogWeight") -> "LogWeight":
        return LogWeight(log=np.logaddexp(self.log, other.log))


@dataclass(frozen=True)
class BirthDeathModel:
    """Truncated birth-death chain; index 0 of the rate arrays is unused.

    ``truncated_tail`` marks models standing in for an infinite chain, in
    which case series over states carry a geometric tail certificate and
    refuse to answer when the cap is too small to certify 1e-12 accuracy.
    ``tail_rate`` records the birth rate dropped at the cap.
    """

    b: np.ndarray
    d: np.ndarray
    cap: int
    truncated_tail: bool = False
    tail_rate: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        d = np.asarray(self.d, dtype=np.float64)
        if b.shape != (self.cap + 1,) or d.shape != (self.cap + 1,):
            raise ConfigError("rate arrays must cover indices 0..cap")
        if self.cap < 1:
            raise ConfigError("cap must be at least 1")
        if np.any(d[1:] <= 0):
            raise ConfigError("death rates must be strictly positive on 1..cap")
        if np.any(b < 0):
            raise ConfigError("birth rates must be nonnegative")
        if np.any(b[1 : self.cap] == 0):
            raise ConfigError("interior birth rates must be positive (irreducible class)")
        b = b.copy()
        b[0] = 0.0
        b[self.cap] = 0.0
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "d", d)

    @classmethod
    def from_rates(
        cls,
        birth: Callable[[int], float],
        death: Callable[[int], float],
        cap: int,
        truncated_tail: bool = False,
    ) -> "BirthDeathModel":
        j = np.arange(cap + 1)
        b = np.array([0.0] + [float(birth(int(k))) for k in j[1:]])
        d = np.array([1.0] + [float(death(int(k))) for k in j[1:]])
        tail = b[cap]
        return cls(b=b, d=d, cap=cap, truncated_tail=truncated_tail, tail_rate=float(tail))

    @cached_property
    def q(self) -> np.ndarray:
        return self.b + self.d

    @cached_property
    def log_alpha(self) -> np.ndarray:
        """log alpha_j for j = 1..cap (alpha_1 = 1 exactly)."""
        la = np.full(self.cap + 1, -np.inf)
        la[1] = 0.0
        for j in range(2, self.cap + 1):
            la[j] = la[j - 1] + math.log(self.b[j - 1]) - math.log(self.d[j])
        return la

    @cached_property
    def log_w(self) -> np.ndarray:
        """log of the S-summands 1/(alpha_l d_l), l = 1..cap."""
        w = np.full(self.cap + 1, -np.inf)
        w[1:] = -(self.log_alpha[1:] + np.log(self.d[1:]))
        return w

    def log_S(self, r: int, m: int) -> float:
        if not (1 <= r <= m <= self.cap):
            raise DomainError(f"S range [{r},{m}] outside 1..cap={self.cap}")
        return float(np.logaddexp.reduce(self.log_w[r : m + 1]))

    def to_generator(self) -> SparseGenerator:
        j = np.arange(1, self.cap + 1)
        src = np.concatenate([j[:-1], j])
        dst = np.concatenate([j[:-1] + 1, j - 1])
        rate = np.concatenate([self.b[1 : self.cap], self.d[1:]])
        return SparseGenerator(n=self.cap, src=src, dst=dst, rate=rate)


def alpha(model: BirthDeathModel, j: int) -> LogWeight:
    """alpha_j = b_1...b_{j-1} / (d_2...d_j), with alpha_1 = 1."""
    if not (1 <= j <= model.cap):
        raise DomainError(f"alpha index {j} outside 1..cap={model.cap}")
    return LogWeight(log=float(model.log_alpha[j]))


def S(model: BirthDeathModel, r: int, m: int) -> LogWeight:
    """S_r^m = sum of 1/(alpha_l d_l) for l in r..m."""
    return LogWeight(log=model.log_S(r, m))


def bd_hit_before(model: BirthDeathModel, m: int, j: int, l: int) -> float:
    """P_m[chain hits l before j] for j < m < l."""
    if not (0 <= j < m < l <= model.cap):
        raise DomainError(f"need j < m < l within the chain, got j={j}, m={m}, l={l}")
    return math.exp(model.log_S(j + 1, m) - model.log_S(j + 1, l))


def bd_one_minus_ps(model: BirthDeathModel, s: int) -> float:
    """Excursion failure probability 1 - p_s = 1/(alpha_s (b_s+d_s) S_1^s)."""
    if not (1 <= s <= model.cap):
        raise DomainError(f"s={s} outside 1..cap")
    la = model.log_alpha[s]
    return math.exp(-(la + math.log(model.q[s]) + model.log_S(1, s)))


def bd_ps(model: BirthDeathModel, s: int) -> float:
    return 1.0 - bd_one_minus_ps(model, s)


def bd_p(model: BirthDeathModel, s: int) -> float:
    """Worst-case hitting probability p = p_1 = 1/(d_1 S_1^s)."""
    if not (1 <= s <= model.cap):
        raise DomainError(f"s={s} outside 1..cap")
    return math.exp(-(math.log(model.d[1]) + model.log_S(1, s)))


def _log_u(model: BirthDeathModel, k: int, i: int, s: int) -> float:
    """log u_ki with -inf for the zero cases."""
    if i in (0, s):
        raise DomainError(f"u_ki is undefined for i={i} (must avoid 0 and s={s})")
    if k == s:
        raise DomainError("u_ki starts away from the center state")
    if not (1 <= k <= model.cap and 1 <= i <= model.cap):
        raise DomainError("u_ki indices outside the chain")
    if k == i:
        return 0.0
    if (k < s < i) or (i < s < k):
        return -math.inf
    if s < i <= k:
        return 0.0
    if s < k <= i:
        return model.log_S(s + 1, k) - model.log_S(s + 1, i)
    if 0 < k <= i < s:
        return model.log_S(1, k) - model.log_S(1, i)
    if 0 < i <= k < s:
        return model.log_S(k + 1, s) - model.log_S(i + 1, s)
    raise DomainError(f"unreachable u_ki case k={k}, i={i}, s={s}")


def bd_u(model: BirthDeathModel, k: int, i: int, s: int) -> float:
    """u_ki = P_k[tau_i < tau_{s,0}]; five-case closed form."""
    return math.exp(_log_u(model, k, i, s))


def _log_return_deficit(model: BirthDeathModel, i: int, s: int) -> float:
    """log of 1 - P_i[tau_i < tau_{s,0}] for i outside {0, s}."""
    if i in (0, s) or not (1 <= i <= model.cap):
        raise DomainError(f"return deficit undefined for i={i}")
    la = model.log_alpha[i]
    lq = math.log(model.q[i])
    if i < s:
        inner = np.logaddexp(-model.log_S(i + 1, s), -model.log_S(1, i))
        return float(-(la + lq) + inner)
    return -(la + lq + model.log_S(s + 1, i))


def bd_return_deficit(model: BirthDeathModel, i: int, s: int) -> float:
    return math.exp(_log_return_deficit(model, i, s))


def bd_occupation(model: BirthDeathModel, k: int, i: int, s: int) -> float:
    """T_ki, the expected time in i before tau_{s,0} starting from k != s.

    T_ks and T_k0 are zero by convention; otherwise
    T_ki = u_ki / ((b_i+d_i)(1 - P_i[tau_i < tau_{s,0}])).
    """
    if i == 0 or i == s:
        return 0.0
    lu = _log_u(model, k, i, s)
    if lu == -math.inf:
        return 0.0
    return math.exp(lu - math.log(model.q[i]) - _log_return_deficit(model, i, s))


def bd_Tsi(model: BirthDeathModel, i: int, s: int) -> float:
    """Occupation of state i during an excursion from s (T_si)."""
    if not (1 <= s <= model.cap):
        raise DomainError(f"s={s} outside 1..cap")
    if i == s:
        return 1.0 / model.q[s]
    if i == 0:
        return 0.0
    if i < s:
        if s == 1:
            return 0.0
        return model.d[s] * bd_occupation(model, s - 1, i, s) / model.q[s]
    if i > model.cap:
        return 0.0
    if s == model.cap:
        return 0.0
    return model.b[s] * bd_occupation(model, s + 1, i, s) / model.q[s]


def _series_logsumexp(model: BirthDeathModel, log_terms: np.ndarray, what: str) -> float:
    """Sum exp(log_terms) with a geometric tail certificate at the cap."""
    total = float(np.logaddexp.reduce(log_terms))
    if model.truncated_tail and log_terms.size >= 2:
        last, prev = log_terms[-1], log_terms[-2]
        if not (last < prev):
            partial = np.exp(np.logaddexp.accumulate(log_terms[-6:]))
            raise DivergenceError(
                f"{what}: terms are not decaying at the cap; Condition B(ii) "
                f"cannot be certified (increase cap)",
                partial_sums=[float(x) for x in partial],
            )
        ratio = math.exp(last - prev)
        log_tail = last + math.log(ratio) - math.log1p(-ratio)
        if log_tail > total + math.log(_TAIL_REL):
            raise DivergenceError(
                f"{what}: geometric tail estimate exceeds {_TAIL_REL:g} of the "
                f"partial sum; increase cap"
            )
    return total


def bd_Tk(model: BirthDeathModel, k: int, s: int) -> float:
    """Mean time to hit {s, 0} from k != s, by the alpha/S closed form."""
    if k == s:
        return bd_Ts(model, s)
    if not (1 <= k <= model.cap):
        raise DomainError(f"k={k} outside 1..cap")
    w = model.log_w
    la = model.log_alpha
    if k < s:
        # prefix S_1^i and suffix S_{i+1}^s sums, all in log space
        i = np.arange(1, s)
        logS_1i = np.logaddexp.accumulate(w[1:s])
        rev = np.logaddexp.accumulate(w[2 : s + 1][::-1])[::-1]  # S_{i+1}^s for i=1..s-1
        lo = np.minimum(i, k) - 1
        hi = np.maximum(i, k) - 1
        terms = la[1:s] + logS_1i[lo] + rev[hi]
        return math.exp(float(np.logaddexp.reduce(terms)) - model.log_S(1, s))
    # k > s
    i = np.arange(s + 1, model.cap + 1)
    logS_prefix = np.logaddexp.accumulate(w[s + 1 : model.cap + 1])  # S_{s+1}^i
    cut = np.minimum(i, k) - (s + 1)
    terms = la[s + 1 : model.cap + 1] + logS_prefix[cut]
    return math.exp(_series_logsumexp(model, terms, f"T_k series at k={k}"))


def bd_Ts(model: BirthDeathModel, s: int) -> float:
    """Mean excursion length T_s = sum_i alpha_i S_1^{i and s} / (alpha_s q_s S_1^s)."""
    if not (1 <= s <= model.cap):
        raise DomainError(f"s={s} outside 1..cap")
    w = model.log_w
    la = model.log_alpha
    logS_1i = np.logaddexp.accumulate(w[1 : model.cap + 1])  # S_1^i, i = 1..cap
    i = np.arange(1, model.cap + 1)
    cut = np.minimum(i, s) - 1
    terms = la[1 : model.cap + 1] + logS_1i[cut]
    total = _series_logsumexp(model, terms, "T_s series")
    return math.exp(total - (la[s] + math.log(model.q[s]) + model.log_S(1, s)))


def bd_one_minus_r_zeta(model: BirthDeathModel, s: int, a_zeta: int) -> float:
    """Excursion failure probability against the interval truncation {1..a_zeta}.

    Closed form (1/(alpha_s q_s)) (1/S_{s+1}^{a_zeta} + 1/S_1^s); the
    failure event is hitting the boundary state a_zeta or the cemetery
    before returning to s.
    """
    if not (s < a_zeta <= model.cap):
        raise DomainError(f"need s < a_zeta <= cap, got s={s}, a_zeta={a_zeta}, cap={model.cap}")
    inner = np.logaddexp(-model.log_S(s + 1, a_zeta), -model.log_S(1, s))
    return math.exp(float(inner) - model.log_alpha[s] - math.log(model.q[s]))


def bd_r_zeta(model: BirthDeathModel, s: int, a_zeta: int) -> float:
    return 1.0 - bd_one_minus_r_zeta(model, s, a_zeta)


_RICKER = "ricker"
_VERHULST = "verhulst"
_BEVERTON_HOLT = "beverton-holt"
_HASSELL = "hassell"
_MSS = "maynard-smith-slatkin"
_CUSTOM = "custom-expression"

FAMILIES = (_RICKER, _VERHULST, _BEVERTON_HOLT, _HASSELL, _MSS, _CUSTOM)


@dataclass(frozen=True)
class DensityModel:
    """Per-capita birth/death laws beta(x), delta(x) at population scale A."""

    family: str
    beta: Callable[[float], float]
    delta: Callable[[float], float]
    A: float
    params: dict

    def birth(self, j: int) -> float:
        return j * self.beta(j / self.A)

    def death(self, j: int) -> float:
        return j * self.delta(j / self.A)


def _family_laws(family: str, params: dict):
    p = dict(params)

    def need(*names):
        missing = [n for n in names if n not in p]
        if missing:
            raise ConfigError(f"family {family!r} needs parameters {missing}")
        return [float(p[n]) for n in names]

    if family == _RICKER:
        b, d, al = need("b", "d", "alpha")
        return (lambda x: b * math.exp(-al * x)), (lambda x: d)
    if family == _VERHULST:
        b, d, c = need("b", "d", "c")
        return (lambda x: b), (lambda x: d + c * x)
    if family == _BEVERTON_HOLT:
        b, d, m = need("b", "d", "m")
        return (lambda x: b / (1 + x / m)), (lambda x: d)
    if family == _HASSELL:
        b, d, m, c = need("b", "d", "m", "c")
        return (lambda x: b / (1 + x / m) ** c), (lambda x: d)
    if family == _MSS:
        b, d, m, c = need("b", "d", "m", "c")
        return (lambda x: b / (1 + (x / m) ** c)), (lambda x: d)
    if family == _CUSTOM:
        if "beta" not in p or "delta" not in p:
            raise ConfigError("custom-expression family needs 'beta' and 'delta' expressions")
        names = {"x"} | {k for k in p if k not in ("beta", "delta")}
        beta_e = ratexpr.parse(str(p["beta"]), names=names)
        delta_e = ratexpr.parse(str(p["delta"]), names=names)
        consts = {k: float(v) for k, v in p.items() if k not in ("beta", "delta")}
        beta_f = ratexpr.compile_expr(beta_e, ["x"], consts)
        delta_f = ratexpr.compile_expr(delta_e, ["x"], consts)
        return (lambda x: float(beta_f(x))), (lambda x: float(delta_f(x)))
    raise ConfigError(f"unknown family {family!r}; known: {', '.join(FAMILIES)}")


def _equilibrium_density(family: str, params: dict, beta, delta) -> float:
    if family == _RICKER:
        b, d, al = float(params["b"]), float(params["d"]), float(params["alpha"])
        if b <= d:
            raise NoEquilibriumError(f"Ricker needs b > d, got b={b}, d={d}")
        return math.log(b / d) / al
    f = lambda x: beta(x) - delta(x)
    lo = 1e-12
    if f(lo) <= 0:
        raise NoEquilibriumError(f"{family}: no positive equilibrium (beta <= delta at 0+)")
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e9:
            raise NoEquilibriumError(f"{family}: beta stays above delta out to x={hi:g}")
    while hi - lo > 1e-12 * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def make_density_model(
    family: str, params: dict, A: float, cap: int | None = None
) -> tuple[BirthDeathModel, int]:
    """Build the truncated chain for a zoo family and suggest the center state.

    The suggestion is s = floor(A c) with beta(c) = delta(c); the cap
    defaults to three times the suggested center (enough that every series
    tail is certifiable at desk scale).
    """
    beta, delta = _family_laws(family, params)
    c = _equilibrium_density(family, params, beta, delta)
    s = int(math.floor(A * c))
    if s < 1:
        raise NoEquilibriumError(f"suggested center floor(A c) = {s} is not a valid state")
    if cap is None:
        cap = max(3 * s + 6, 40)
    if cap <= s:
        raise ConfigError(f"cap {cap} does not reach the suggested center {s}")
    dm = DensityModel(family=family, beta=beta, delta=delta, A=float(A), params=dict(params))
    model = BirthDeathModel.from_rates(dm.birth, dm.death, cap, truncated_tail=True)
    return model, s
