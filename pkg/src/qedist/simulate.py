"""Event-driven simulation of absorbing, returned and accelerated chains.

Randomness comes from counter-based Philox streams keyed by
(master seed, replicate index), so replicates are independent,
order-free and bit-for-bit reproducible.  Instantaneous returns are
recorded as a second event at the same timestamp with a nonzero flag.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .generator import ProbabilityVector, ReturnDistribution, SparseGenerator

__all__ = [
    "Absorbing",
    "Returned",
    "Accelerated",
    "Trajectory",
    "EstimatorResult",
    "simulate",
    "estimate_hitting",
    "empirical_law_at",
    "occupation_fractions",
]

ABSORBED = "absorbed"
TRUNCATED = "truncated-at-t-max"

FLAG_JUMP = 0
FLAG_RETURN = 1


@dataclass(frozen=True)
class Absorbing:
    pass


@dataclass(frozen=True)
class Returned:
    mu: ReturnDistribution


@dataclass(frozen=True)
class Accelerated:
    members: np.ndarray
    s: int

    def __post_init__(self):
        members = np.unique(np.asarray(self.members, dtype=np.int64))
        object.__setattr__(self, "members", members)
        if self.s not in members:
            raise ConfigError(f"accelerated mode: s={self.s} not among the members")


Mode = Absorbing | Returned | Accelerated


@dataclass(frozen=True)
class Trajectory:
    """One sampled path: times are nondecreasing, flags mark zero-time returns."""

    seed: int
    times: np.ndarray
    states: np.ndarray
    flags: np.ndarray
    terminal: str
    cap_hit: bool = False

    def state_at(self, t: float) -> int:
        """State occupied at time t (paths are right continuous)."""
        i = np.searchsorted(self.times, t, side="right") - 1
        return int(self.states[max(i, 0)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "state", "flag"])
            for t, s, f in zip(self.times, self.states, self.flags):
                w.writerow([repr(float(t)), int(s), "return" if f else ""])


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    stderr: float
    replicates: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "replicates": self.replicates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def within(self, exact: float, n_se: float = 3.0) -> bool:
        return abs(self.estimate - exact) <= n_se * max(self.stderr, 1e-300)


def _rng(seed: int, replicate: int | None = None) -> np.random.Generator:
    key = [seed] if replicate is None else [seed, replicate]
    return np.random.Generator(np.random.Philox(key=np.array(key, dtype=np.uint64)))


class _Walker:
    """Per-state jump tables (cumulative rates and destinations)."""

    def __init__(self, Q: SparseGenerator):
        self.n = Q.n
        self.total = np.zeros(Q.n + 1)
        self.cum: list[np.ndarray | None] = [None] * (Q.n + 1)
        self.dst: list[np.ndarray | None] = [None] * (Q.n + 1)
        order = np.lexsort((Q.dst, Q.src))
        src, dst, rate = Q.src[order], Q.dst[order], Q.rate[order]
        starts = np.searchsorted(src, np.arange(1, Q.n + 2))
        starts = np.concatenate([[0], starts])
        for i in range(1, Q.n + 1):
            lo, hi = starts[i], starts[i + 1]
            if hi > lo:
                self.dst[i] = dst[lo:hi]
                self.cum[i] = np.cumsum(rate[lo:hi])
                self.total[i] = self.cum[i][-1]

    def step(self, state: int, rng: np.random.Generator) -> tuple[float, int]:
        """Sample (holding time, landing state); landing may be the cemetery."""
        total = self.total[state]
        if total <= 0.0:
            return np.inf, state
        dt = rng.exponential(1.0 / total)
        u = rng.random() * total
        k = int(np.searchsorted(self.cum[state], u, side="left"))
        if k >= self.dst[state].size:
            k = self.dst[state].size - 1
        return float(dt), int(self.dst[state][k])


def _sample_mu(mu: ReturnDistribution, rng: np.random.Generator) -> int:
    # point masses consume no randomness, so delta-return and accelerated
    # paths coincide stream for stream
    if mu.is_point_mass():
        return int(mu.states[0])
    u = rng.random()
    return int(mu.states[np.searchsorted(np.cumsum(mu.weights), u, side="right")])


def _run(
    walker: _Walker,
    Q: SparseGenerator,
    init: int,
    t_max: float,
    rng: np.random.Generator,
    mode: Mode,
    seed: int,
) -> Trajectory:
    member_set = set(int(m) for m in mode.members) if isinstance(mode, Accelerated) else None
    t = 0.0
    state = int(init)
    times = [0.0]
    states = [state]
    flags = [FLAG_JUMP]
    terminal = TRUNCATED
    cap_hit = False
    while True:
        dt, nxt = walker.step(state, rng)
        if t + dt > t_max:
            break
        t += dt
        times.append(t)
        states.append(nxt)
        flags.append(FLAG_JUMP)
        if nxt == Q.n and not isinstance(mode, Accelerated):
            cap_hit = True
        if isinstance(mode, Absorbing):
            if nxt == 0:
                terminal = ABSORBED
                break
        elif isinstance(mode, Returned):
            if nxt == 0:
                nxt = _sample_mu(mode.mu, rng)
                times.append(t)
                states.append(nxt)
                flags.append(FLAG_RETURN)
        else:
            if nxt == 0 or nxt not in member_set:
                nxt = mode.s
                times.append(t)
                states.append(nxt)
                flags.append(FLAG_RETURN)
        state = nxt
    return Trajectory(
        seed=seed,
        times=np.asarray(times),
        states=np.asarray(states, dtype=np.int64),
        flags=np.asarray(flags, dtype=np.uint8),
        terminal=terminal,
        cap_hit=cap_hit,
    )


def simulate(
    Q: SparseGenerator,
    init: int,
    t_max: float,
    seed: int,
    mode: Mode = Absorbing(),
    replicate: int | None = None,
) -> Trajectory:
    """Sample one path of the chosen process up to t_max.

    In returned mode absorption triggers an instantaneous mu-draw; in
    accelerated mode any jump out of the member set (cemetery included)
    lands on s.  Both redirections add a flagged zero-duration event.
    """
    if isinstance(mode, Accelerated) and init not in set(int(m) for m in mode.members):
        raise ConfigError(f"initial state {init} outside accelerated members")
    if not (1 <= init <= Q.n):
        raise ConfigError(f"initial state {init} outside 1..n")
    walker = _Walker(Q)
    return _run(walker, Q, init, t_max, _rng(seed, replicate), mode, seed)


def _excursion(
    walker: _Walker, start: int, s: int, rng: np.random.Generator
) -> tuple[bool, float]:
    """(hit s before the cemetery, elapsed time) for one excursion.

    Starting at s the first event necessarily leaves s, so the
    full-excursion convention holds with no special casing.
    """
    state = start
    t = 0.0
    while True:
        dt, nxt = walker.step(state, rng)
        if dt == np.inf:
            return False, np.inf
        t += dt
        if nxt == 0:
            return False, t
        if nxt == s:
            return True, t
        state = nxt


def estimate_hitting(
    Q: SparseGenerator,
    s: int,
    k: int,
    replicates: int,
    seed: int,
) -> tuple[EstimatorResult, EstimatorResult]:
    """Monte Carlo (p_k, T_k) from independent excursions started at k."""
    if replicates < 100:
        raise ConfigError("need at least 100 replicates for a standard error")
    walker = _Walker(Q)
    hits = np.empty(replicates)
    times = np.empty(replicates)
    for r in range(replicates):
        hit, tau = _excursion(walker, k, s, _rng(seed, r))
        hits[r] = 1.0 if hit else 0.0
        times[r] = tau
    p_se = hits.std(ddof=1) / np.sqrt(replicates)
    t_se = times.std(ddof=1) / np.sqrt(replicates)
    return (
        EstimatorResult(estimate=float(hits.mean()), stderr=float(p_se), replicates=replicates),
        EstimatorResult(estimate=float(times.mean()), stderr=float(t_se), replicates=replicates),
    )


def _accepted(traj: Trajectory, s: int, members: set[int]) -> bool:
    """The conditioning event: the path reaches s before the cemetery and
    before any state outside the member set."""
    for state in traj.states[1:]:
        state = int(state)
        if state == s:
            return True
        if state == 0 or state not in members:
            return False
    # never resolved within the horizon: treat as rejected
    return False


def empirical_law_at(
    Q: SparseGenerator,
    init: int,
    t: float,
    replicates: int,
    seed: int,
    mode: Mode = Absorbing(),
    condition: tuple[np.ndarray, int] | None = None,
) -> ProbabilityVector:
    """Empirical law of the state at time t over independent replicates.

    Absorbed replicates report the cemetery state 0.  With
    ``condition=(members, s)`` (absorbing mode only), replicates are kept
    by rejection on the event of hitting s before dying or leaving the
    member set; fresh replicate streams keep the draw reproducible.
    """
    if replicates < 1000:
        raise ConfigError("need at least 1000 replicates for a stable empirical law")
    if condition is not None and not isinstance(mode, Absorbing):
        raise ConfigError("conditioning applies to the absorbing chain only")
    walker = _Walker(Q)
    cond_set: set[int] | None = None
    cond_s = 0
    if condition is not None:
        members, cond_s = condition
        cond_set = set(int(m) for m in np.asarray(members).ravel())
    counts: dict[int, int] = {}
    kept = 0
    stream = 0
    while kept < replicates:
        traj = _run(walker, Q, init, t, _rng(seed, stream), mode, seed)
        stream += 1
        if cond_set is not None and int(init) != cond_s and not _accepted(traj, cond_s, cond_set):
            if stream > 1000 * replicates:
                raise ConfigError("conditioning event too rare; rejection sampling stalled")
            continue
        state = traj.state_at(t)
        counts[state] = counts.get(state, 0) + 1
        kept += 1
    states = np.array(sorted(counts), dtype=np.int64)
    probs = np.array([counts[int(sx)] for sx in states], dtype=np.float64) / replicates
    return ProbabilityVector(states=states, probs=probs)


def occupation_fractions(traj: Trajectory, t_max: float) -> ProbabilityVector:
    """Fraction of [0, t_max] spent in each state along one path."""
    times = np.append(traj.times, t_max)
    durations = np.diff(times)
    occ: dict[int, float] = {}
    for state, dur in zip(traj.states, durations):
        if dur > 0:
            occ[int(state)] = occ.get(int(state), 0.0) + float(dur)
    states = np.array(sorted(occ), dtype=np.int64)
    probs = np.array([occ[int(sx)] for sx in states]) / t_max
    return ProbabilityVector(states=states, probs=probs)
