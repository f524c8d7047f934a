"""Stationary, hitting and transient solvers for sparse generators.

Hitting conventions follow the excursion semantics of the return
construction: starting *at* the center state s counts a full excursion
(leave first, then come back), so

* ``p_k`` is the plain probability of reaching s before the cemetery
  (trivially 1 at k = s), with the excursion probability kept separately
  as ``p_s``;
* ``T_k`` is the plain mean time to hit {s, 0} for k != s and the mean
  excursion length at k = s (which equals the occupation total T_s).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .errors import (
    ConditionBViolationError,
    IrreducibilityError,
    NumericalFailureError,
)
from .generator import ProbabilityVector, SparseGenerator

__all__ = [
    "HittingStats",
    "stationary_distribution",
    "hitting_stats",
    "transient_distribution",
    "total_variation",
    "excursion_mean_hitting_times",
    "return_probability",
]

_STATIONARY_TOL = 1e-10
_POISSON_TAIL = 1e-12


def _solve_sparse(A: sp.spmatrix, b: np.ndarray, what: str) -> np.ndarray:
    """LU solve with iterative refinement; b may be a matrix of columns."""
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise NumericalFailureError(f"singular system in {what}: {exc}") from exc
    x = lu.solve(b)
    for _ in range(2):
        r = b - A @ x
        x = x + lu.solve(r)
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError(f"non-finite solution in {what}")
    return x


def stationary_distribution(Q: SparseGenerator) -> ProbabilityVector:
    """Stationary law of a conservative generator, irreducible on C.

    Solves pi Q = 0 by replacing the last balance equation with the
    normalization row (sparse LU plus iterative refinement); the residual
    max-norm of the full balance system must come out below 1e-10.
    """
    n = Q.n
    if np.any(Q.q_abs[1:] > 0):
        raise IrreducibilityError(
            "generator still has absorption edges; build the returned process first"
        )
    if n == 1:
        return ProbabilityVector(states=Q.labels.copy(), probs=np.array([1.0]))
    QC = Q.csr_c
    ncomp, assignment = connected_components(QC, directed=True, connection="strong")
    if ncomp > 1:
        stranded = int(np.nonzero(assignment != assignment[0])[0][0])
        raise IrreducibilityError(
            f"generator is reducible on C: state {Q.label_of(stranded + 1)} "
            f"is not in the communicating class of state {Q.label_of(1)}"
        )
    M = QC.T.tolil()
    M[n - 1, :] = 1.0
    rhs = np.zeros(n)
    rhs[n - 1] = 1.0
    pi = _solve_sparse(M.tocsc(), rhs, "stationary solve")
    if pi.min() < -1e-9:
        raise NumericalFailureError(f"stationary solve produced weight {pi.min()!r}")
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    residual = np.abs(pi @ QC).max()
    if residual > _STATIONARY_TOL:
        raise NumericalFailureError(
            f"stationary residual {residual:.3e} exceeds {_STATIONARY_TOL:.0e}"
        )
    return ProbabilityVector(states=Q.labels.copy(), probs=pi)


@dataclass(frozen=True)
class HittingStats:
    """Hitting statistics of the absorbing chain for a center state s.

    Arrays are aligned with ``labels``; ``p_k[i]`` is the probability of
    reaching s before 0 from ``labels[i]``, ``T_k[i]`` the mean time to
    hit {s, 0}, and ``T_sk[i]`` the expected time spent in ``labels[i]``
    during an excursion from s.
    """

    s: int
    labels: np.ndarray
    p_k: np.ndarray
    T_k: np.ndarray
    T_sk: np.ndarray
    p: float
    p_s: float
    T_s: float
    q_s: float

    def __post_init__(self):
        total = self.T_sk.sum()
        if not np.isclose(total, self.T_s, rtol=1e-8, atol=0.0):
            raise ConditionBViolationError(
                f"occupation total {total!r} disagrees with T_s {self.T_s!r}"
            )

    @cached_property
    def _pos(self) -> dict[int, int]:
        return {int(lab): i for i, lab in enumerate(self.labels)}

    def p_of(self, label: int) -> float:
        return float(self.p_k[self._pos[label]])

    def T_of(self, label: int) -> float:
        return float(self.T_k[self._pos[label]])

    def T_s_of(self, label: int) -> float:
        return float(self.T_sk[self._pos[label]])

    def p_paper(self, label: int) -> float:
        """Hitting probability with the excursion convention at k = s."""
        return self.p_s if label == self.s else self.p_of(label)

    def mu_T(self, mu) -> float:
        """mu-average of T_k (the quantity called mu(T) in the bounds)."""
        return float(sum(w * self.T_of(int(k)) for k, w in zip(mu.states, mu.weights)))

    def table(self) -> np.ndarray:
        """Columns (k, p_k, T_k, T_sk) for CSV export."""
        return np.column_stack([self.labels, self.p_k, self.T_k, self.T_sk])


def _partition(Q: SparseGenerator, s_internal: int):
    """Index helpers for the block decomposition away from s."""
    n = Q.n
    b_idx = np.concatenate([np.arange(0, s_internal - 1), np.arange(s_internal, n)])
    QC = Q.csr_c
    Q_BB = QC[np.ix_(b_idx, b_idx)]
    q_Bs = np.asarray(QC[np.ix_(b_idx, [s_internal - 1])].todense()).ravel()
    q_sB = np.asarray(QC[np.ix_([s_internal - 1], b_idx)].todense()).ravel()
    return b_idx, Q_BB, q_Bs, q_sB


def hitting_stats(Q: SparseGenerator, s: int) -> HittingStats:
    """Solve the first-step systems for p_k, T_k and the occupation T_sk.

    One linear solve each: hitting probabilities and mean exit times are
    column systems on C\\{s}, the occupation measure is a single row
    system, and the excursion quantities at s follow by one jump-chain
    step.  A singular or negative solve reports a Condition B(ii)
    violation.
    """
    s_internal = Q.index_of_label(s)
    n = Q.n
    q_s = float(Q.q_total[s_internal])
    if q_s <= 0:
        raise ConditionBViolationError(f"center state {s} has no outgoing rate")
    if n == 1:
        T_excursion = 1.0 / q_s
        return HittingStats(
            s=s,
            labels=Q.labels.copy(),
            p_k=np.array([1.0]),
            T_k=np.array([T_excursion]),
            T_sk=np.array([T_excursion]),
            p=1.0,
            p_s=0.0,
            T_s=T_excursion,
            q_s=q_s,
        )
    b_idx, Q_BB, q_Bs, q_sB = _partition(Q, s_internal)
    try:
        h = _solve_sparse(Q_BB, -q_Bs, "hitting probabilities")
        T_b = _solve_sparse(Q_BB, -np.ones(n - 1), "mean hitting times")
        nu = _solve_sparse(Q_BB.T, -q_sB / q_s, "occupation measure")
    except NumericalFailureError as exc:
        raise ConditionBViolationError(
            f"hitting system is singular; Condition B(ii) fails on this chain ({exc})"
        ) from exc
    if h.size and (h.min() < -1e-9 or h.max() > 1 + 1e-9):
        raise ConditionBViolationError(f"hitting probabilities escape [0,1]: {h.min()}..{h.max()}")
    h = np.clip(h, 0.0, 1.0)
    if T_b.size and (T_b.min() <= 0 or not np.all(np.isfinite(T_b))):
        raise ConditionBViolationError(
            "mean hitting times are nonpositive or infinite; Condition B(ii) fails"
        )
    if nu.size and nu.min() < -1e-12:
        raise ConditionBViolationError(f"occupation measure went negative: {nu.min()!r}")
    nu = np.maximum(nu, 0.0)

    p_k = np.ones(n)
    p_k[b_idx] = h
    T_k = np.empty(n)
    T_k[b_idx] = T_b
    # excursion quantities at s by one step of the jump chain
    p_s = float(np.dot(q_sB, h) / q_s)
    T_excursion = float((1.0 + np.dot(q_sB, T_b)) / q_s)
    T_k[s_internal - 1] = T_excursion
    T_sk = np.empty(n)
    T_sk[b_idx] = nu
    T_sk[s_internal - 1] = 1.0 / q_s
    return HittingStats(
        s=s,
        labels=Q.labels.copy(),
        p_k=p_k,
        T_k=T_k,
        T_sk=T_sk,
        p=float(p_k.min()),
        p_s=p_s,
        T_s=float(T_sk.sum()),
        q_s=q_s,
    )


def excursion_mean_hitting_times(Q: SparseGenerator, s: int) -> np.ndarray:
    """Mean time to reach s (full excursion at k = s), aligned with labels.

    Intended for generators without absorption (returned or accelerated
    processes); with absorption present the hitting time would be
    defective and the solve reports a Condition B violation.
    """
    s_internal = Q.index_of_label(s)
    n = Q.n
    q_s = float(Q.q_total[s_internal])
    if n == 1:
        return np.array([1.0 / q_s if q_s > 0 else 0.0])
    b_idx, Q_BB, _, q_sB = _partition(Q, s_internal)
    try:
        T_b = _solve_sparse(Q_BB, -np.ones(n - 1), "mean hitting times")
    except NumericalFailureError as exc:
        raise ConditionBViolationError(str(exc)) from exc
    if T_b.size and (T_b.min() <= 0 or not np.all(np.isfinite(T_b))):
        raise ConditionBViolationError("mean hitting times are nonpositive or infinite")
    T = np.empty(n)
    T[b_idx] = T_b
    T[s_internal - 1] = (1.0 + np.dot(q_sB, T_b)) / q_s
    return T


def return_probability(Q: SparseGenerator, members, s: int) -> float:
    """P_s[excursion returns to s before hitting 0 or leaving ``members``].

    This is the r_zeta of the truncation machinery, computed by a hitting
    solve on the chain killed on leaving members plus cemetery.
    """
    members = np.unique(np.asarray(members, dtype=np.int64))
    if s not in members:
        raise ConditionBViolationError(f"center state {s} outside the member set")
    internal = np.array([Q.index_of_label(int(m)) for m in members])
    s_internal = Q.index_of_label(s)
    b_internal = internal[internal != s_internal]
    QC = Q.csr_c
    b_idx = b_internal - 1
    Q_BB = QC[np.ix_(b_idx, b_idx)]
    q_Bs = np.asarray(QC[np.ix_(b_idx, [s_internal - 1])].todense()).ravel()
    q_s = float(Q.q_total[s_internal])
    if b_idx.size == 0:
        return 0.0
    h = _solve_sparse(Q_BB, -q_Bs, "return probability")
    h = np.clip(h, 0.0, 1.0)
    q_sB = np.asarray(QC[np.ix_([s_internal - 1], b_idx)].todense()).ravel()
    return float(np.dot(q_sB, h) / q_s)


def transient_distribution(
    Q: SparseGenerator, init: ProbabilityVector, t: float
) -> ProbabilityVector:
    """Law of the chain at time t by uniformization.

    Works on C plus an absorbing cemetery row, so it serves both the
    absorbing chain (mass accumulates on state 0) and returned processes.
    The Poisson series is truncated with tail mass below 1e-12.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    n = Q.n
    label_pos = {0: 0}
    label_pos.update({int(lab): i + 1 for i, lab in enumerate(Q.labels)})
    v = np.zeros(n + 1)
    for state, prob in zip(init.states, init.probs):
        if int(state) not in label_pos:
            raise ValueError(f"initial state {int(state)} not in the generator")
        v[label_pos[int(state)]] += prob
    lam = float(Q.q_total.max())
    if t == 0.0 or lam == 0.0:
        return init
    P = sp.eye(n + 1, format="csr") + Q.csr_full / lam
    mu = lam * t
    hi = int(poisson.isf(_POISSON_TAIL / 2, mu)) + 1
    weights = poisson.pmf(np.arange(hi + 1), mu)
    acc = weights[0] * v
    cur = v
    for m in range(1, hi + 1):
        cur = cur @ P
        if weights[m] > 0.0:
            acc = acc + weights[m] * cur
    acc = np.maximum(acc, 0.0)
    acc /= acc.sum()
    states = np.concatenate([[0], Q.labels])
    keep = (acc > 0.0) | (states == 0)
    return ProbabilityVector(states=states[keep], probs=acc[keep])


def total_variation(pv1: ProbabilityVector, pv2: ProbabilityVector) -> float:
    """Half the L1 distance; states missing from one side count as zero."""
    states = np.union1d(pv1.states, pv2.states)
    a = np.zeros(states.size)
    b = np.zeros(states.size)
    a[np.searchsorted(states, pv1.states)] = pv1.probs
    b[np.searchsorted(states, pv2.states)] = pv2.probs
    return float(0.5 * np.abs(a - b).sum())
