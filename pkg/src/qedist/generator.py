"""Conservative rate matrices over a cemetery state and a transient class.

State 0 is the absorbing cemetery; the transient class C is {1..n}.  A
:class:`SparseGenerator` stores only positive off-diagonal rates; the
diagonal is implicit (row sums are zero once absorption is counted).
Generators produced by restriction (accelerated return, censoring) are
relabelled to {1..m} and carry the original state ids in ``labels``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDistributionError, InvalidTruncationError

__all__ = [
    "SparseGenerator",
    "ReturnDistribution",
    "ProbabilityVector",
    "build_returned_generator",
    "accelerated_return_generator",
    "censored_generator",
]


@dataclass(frozen=True)
class SparseGenerator:
    """Rate triplets (src, dst, rate) with src in C and dst in C or {0}.

    ``labels[i-1]`` is the original id of internal state ``i``; it is the
    identity for generators built directly from models.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    labels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        rate = np.asarray(self.rate, dtype=np.float64)
        if not (src.shape == dst.shape == rate.shape):
            raise ValueError("src, dst, rate must have equal length")
        if src.size and (src.min() < 1 or src.max() > self.n):
            raise ValueError("transition source outside C (cemetery rows are forbidden)")
        if dst.size and (dst.min() < 0 or dst.max() > self.n):
            raise ValueError("transition destination outside C ∪ {0}")
        if np.any(src == dst):
            raise ValueError("self-transitions are not representable")
        if rate.size and rate.min() < 0:
            raise ValueError("negative rate")
        if not np.all(np.isfinite(rate)):
            raise ValueError("non-finite rate")
        keep = rate > 0.0
        src, dst, rate = src[keep], dst[keep], rate[keep]
        # coalesce duplicate (src, dst) pairs by summing rates
        if src.size:
            key = src * (self.n + 1) + dst
            order = np.argsort(key, kind="stable")
            key, src, dst, rate = key[order], src[order], dst[order], rate[order]
            first = np.ones(key.size, dtype=bool)
            first[1:] = key[1:] != key[:-1]
            idx = np.cumsum(first) - 1
            rate = np.bincount(idx, weights=rate, minlength=first.sum())
            src, dst = src[first], dst[first]
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "rate", rate)
        labels = self.labels
        if labels is None:
            labels = np.arange(1, self.n + 1, dtype=np.int64)
        else:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.n,):
                raise ValueError("labels must have length n")
        object.__setattr__(self, "labels", labels)

    @cached_property
    def q_total(self) -> np.ndarray:
        """Total jump rate q_i for i in 1..n (index 0 unused)."""
        q = np.zeros(self.n + 1)
        np.add.at(q, self.src, self.rate)
        return q

    @cached_property
    def q_abs(self) -> np.ndarray:
        """Absorption rate q_{i0} for i in 1..n (index 0 unused)."""
        q = np.zeros(self.n + 1)
        mask = self.dst == 0
        np.add.at(q, self.src[mask], self.rate[mask])
        return q

    @cached_property
    def csr_c(self) -> sp.csr_matrix:
        """n x n generator block over C, diagonal -q_i included."""
        mask = self.dst > 0
        rows = np.concatenate([self.src[mask] - 1, np.arange(self.n)])
        cols = np.concatenate([self.dst[mask] - 1, np.arange(self.n)])
        vals = np.concatenate([self.rate[mask], -self.q_total[1:]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def csr_full(self) -> sp.csr_matrix:
        """(n+1) x (n+1) generator with the absorbing cemetery row 0."""
        rows = np.concatenate([self.src, np.arange(1, self.n + 1)])
        cols = np.concatenate([self.dst, np.arange(1, self.n + 1)])
        vals = np.concatenate([self.rate, -self.q_total[1:]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n + 1, self.n + 1))

    def out_edges(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Destinations and rates out of internal state ``i``."""
        mask = self.src == i
        return self.dst[mask], self.rate[mask]

    def label_of(self, i: int) -> int:
        return 0 if i == 0 else int(self.labels[i - 1])

    def index_of_label(self, label: int) -> int:
        """Internal index of an original state id."""
        hits = np.nonzero(self.labels == label)[0]
        if hits.size == 0:
            raise KeyError(f"state {label} not in this generator")
        return int(hits[0]) + 1

    def to_csv(self, path) -> None:
        """Write (from,to,rate) triplets with original state ids."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from", "to", "rate"])
            for i, j, r in zip(self.src, self.dst, self.rate):
                w.writerow([self.label_of(int(i)), self.label_of(int(j)), repr(float(r))])

    @classmethod
    def from_csv(cls, path) -> "SparseGenerator":
        src, dst, rate = [], [], []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if [h.strip().lower() for h in header[:3]] != ["from", "to", "rate"]:
                raise ValueError(f"expected header from,to,rate in {path}")
            for row in r:
                if not row:
                    continue
                src.append(int(row[0]))
                dst.append(int(row[1]))
                rate.append(float(row[2]))
        n = max(src + dst) if src else 0
        return cls(n=n, src=np.array(src), dst=np.array(dst), rate=np.array(rate))


@dataclass(frozen=True)
class ReturnDistribution:
    """Return law mu over C; weights sum to 1 within 1e-12."""

    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if states.shape != weights.shape or states.ndim != 1:
            raise InvalidDistributionError("states and weights must be equal-length vectors")
        if np.any(weights < 0):
            raise InvalidDistributionError("negative return weight")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidDistributionError(f"return weights sum to {weights.sum()!r}, not 1")
        if np.unique(states).size != states.size:
            raise InvalidDistributionError("duplicate states in return distribution")
        keep = weights > 0
        object.__setattr__(self, "states", states[keep])
        object.__setattr__(self, "weights", weights[keep])

    @classmethod
    def delta(cls, s: int) -> "ReturnDistribution":
        return cls(states=np.array([s]), weights=np.array([1.0]))

    @classmethod
    def uniform(cls, states) -> "ReturnDistribution":
        states = np.asarray(states, dtype=np.int64)
        return cls(states=states, weights=np.full(states.size, 1.0 / states.size))

    def mean_of(self, values: np.ndarray) -> float:
        """mu-average of a vector indexed by state id (position k-1)."""
        return float(np.dot(self.weights, values[self.states - 1]))

    def is_point_mass(self) -> bool:
        return self.states.size == 1


@dataclass(frozen=True)
class ProbabilityVector:
    """Probabilities over explicit state ids (0 allowed for the cemetery)."""

    states: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if states.shape != probs.shape or states.ndim != 1:
            raise InvalidDistributionError("states and probs must be equal-length vectors")
        if probs.size and probs.min() < -1e-12:
            raise InvalidDistributionError(f"negative probability {probs.min()!r}")
        if abs(probs.sum() - 1.0) > 1e-10:
            raise InvalidDistributionError(f"probabilities sum to {probs.sum()!r}, not 1")
        order = np.argsort(states)
        object.__setattr__(self, "states", states[order])
        object.__setattr__(self, "probs", np.maximum(probs[order], 0.0))

    def prob_of(self, state: int) -> float:
        i = np.searchsorted(self.states, state)
        if i < self.states.size and self.states[i] == state:
            return float(self.probs[i])
        return 0.0

    def mass_on(self, states) -> float:
        member = np.isin(self.states, np.asarray(states, dtype=np.int64))
        return float(self.probs[member].sum())

    def restrict(self, states) -> "ProbabilityVector":
        """Condition on a subset of states (renormalized)."""
        member = np.isin(self.states, np.asarray(states, dtype=np.int64))
        mass = self.probs[member].sum()
        if mass <= 0:
            raise InvalidDistributionError("no mass on the requested subset")
        return ProbabilityVector(states=self.states[member], probs=self.probs[member] / mass)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "prob"])
            for s, p in zip(self.states, self.probs):
                w.writerow([int(s), repr(float(p))])

    @classmethod
    def from_csv(cls, path) -> "ProbabilityVector":
        states, probs = [], []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if [h.strip().lower() for h in header[:2]] != ["state", "prob"]:
                raise ValueError(f"expected header state,prob in {path}")
            for row in r:
                if not row:
                    continue
                states.append(int(row[0]))
                probs.append(float(row[1]))
        return cls(states=np.array(states), probs=np.array(probs))


def build_returned_generator(Q: SparseGenerator, mu: ReturnDistribution) -> SparseGenerator:
    """Generator of the returned process: q_ij plus absorbed flow q_i0 mu_j.

    Absorption edges are replaced by edges into the support of mu; rows
    without absorption are untouched, and the result never transitions
    to the cemetery.
    """
    if mu.states.size and (mu.states.min() < 1 or mu.states.max() > Q.n):
        raise InvalidDistributionError("return distribution places mass outside 1..n")
    keep = Q.dst != 0
    src = [Q.src[keep]]
    dst = [Q.dst[keep]]
    rate = [Q.rate[keep]]
    absorbing = np.nonzero(Q.q_abs[1:] > 0)[0] + 1
    for i in absorbing:
        qa = Q.q_abs[i]
        states = mu.states
        weights = qa * mu.weights
        # a mu-atom at i itself would be a self-transition; drop it, the
        # implicit diagonal absorbs the (zero net) flow
        self_mask = states == i
        if self_mask.any():
            states, weights = states[~self_mask], weights[~self_mask]
        src.append(np.full(states.size, i))
        dst.append(states)
        rate.append(weights)
    return SparseGenerator(
        n=Q.n,
        src=np.concatenate(src),
        dst=np.concatenate(dst),
        rate=np.concatenate(rate),
        labels=Q.labels,
    )


def accelerated_return_generator(
    Q: SparseGenerator, members, s: int
) -> SparseGenerator:
    """Restrict to ``members`` and reroute every exit (cemetery included) to s.

    Row sums are preserved, so the result is conservative on the member
    set.  States are relabelled 1..m in increasing original id, with the
    originals kept in ``labels``.
    """
    members = np.unique(np.asarray(members, dtype=np.int64))
    if members.size == 0:
        raise InvalidTruncationError("empty truncation set")
    if s not in members:
        raise InvalidTruncationError(f"center state {s} not in the truncation set")
    if members.min() < 1 or members.max() > Q.n:
        raise InvalidTruncationError("truncation set outside C")
    new_index = {int(lab): i + 1 for i, lab in enumerate(members)}
    m = members.size
    inside_src = np.isin(Q.src, members)
    src = Q.src[inside_src]
    dst = Q.dst[inside_src]
    rate = Q.rate[inside_src]
    exits = ~np.isin(dst, members)  # includes dst == 0
    new_src = np.fromiter((new_index[int(i)] for i in src), dtype=np.int64, count=src.size)
    new_dst = np.empty_like(new_src)
    new_dst[~exits] = [new_index[int(j)] for j in dst[~exits]]
    new_dst[exits] = new_index[int(s)]
    # exits out of s itself reroute to s: a no-op, not a self-loop
    keep = new_src != new_dst
    return SparseGenerator(
        n=m,
        src=new_src[keep],
        dst=new_dst[keep],
        rate=rate[keep],
        labels=Q.labels[members - 1],
    )


def censored_generator(Q: SparseGenerator, members) -> SparseGenerator:
    """Watched chain on ``members``: outside excursions collapsed to zero time.

    Each rate into an outside state o is redistributed over the member
    states according to the re-entry law of the excursion started at o.
    Requires a generator without absorption (apply to returned processes)
    so that every excursion re-enters almost surely.
    """
    import scipy.sparse.linalg as spla

    if np.any(Q.q_abs[1:] > 0):
        raise InvalidTruncationError("censoring requires a generator without absorption")
    members = np.unique(np.asarray(members, dtype=np.int64))
    outside = np.setdiff1d(np.arange(1, Q.n + 1), members)
    if outside.size == 0:
        return Q
    QC = Q.csr_c
    o_idx = outside - 1
    m_idx = members - 1
    Q_oo = QC[np.ix_(o_idx, o_idx)].tocsc()
    Q_om = QC[np.ix_(o_idx, m_idx)].toarray()
    # re-entry law H[o, j] = P_o[first member state hit is j]
    H = spla.splu(sp.csc_matrix(Q_oo)).solve(-Q_om)
    Q_mm = QC[np.ix_(m_idx, m_idx)].toarray()
    Q_mo = QC[np.ix_(m_idx, o_idx)].toarray()
    G = Q_mm + Q_mo @ H
    np.fill_diagonal(G, 0.0)
    G[G < 0] = 0.0
    rows, cols = np.nonzero(G)
    return SparseGenerator(
        n=members.size,
        src=rows + 1,
        dst=cols + 1,
        rate=G[rows, cols],
        labels=Q.labels[m_idx],
    )
