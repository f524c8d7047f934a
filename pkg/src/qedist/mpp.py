"""Markov population processes: drift, Gaussian summary, truncated return.

A population model jumps X -> X + J at rate N alpha_J(X/N) for J in a
finite jump set.  The deterministic drift F, its equilibrium c, the
Jacobian A = DF(c) and the stationary covariance Sigma of the diffusion
limit (A Sigma + Sigma A^T + sigma2(c) = 0) summarize the Gaussian
picture; the quasi-equilibrium itself is the stationary law of the
process truncated to the ellipsoid (X-Nc)^T Sigma^{-1} (X-Nc) <= r^2 N
and returned to the central lattice state on every exit.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import ratexpr
from .errors import (
    ConfigError,
    ModelError,
    NoEquilibriumError,
    NumericalFailureError,
    StabilityError,
    TruncationTooLargeError,
)
from .generator import ProbabilityVector, SparseGenerator
from .solvers import stationary_distribution

__all__ = [
    "PopulationModel",
    "GaussianSummary",
    "GaussianComparison",
    "drift",
    "find_equilibrium",
    "solve_lyapunov",
    "lyapunov_residual",
    "build_truncated_process",
    "mpp_quasi_equilibrium",
    "nearest_lattice_point",
    "check_local_irreducibility",
]

_NEWTON_MAX_ITER = 100
_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class PopulationModel:
    """Jump vectors with expression-valued rates alpha_J on the density scale.

    ``rates[k]`` is an expression in x1..xd (plus declared parameters)
    giving alpha for ``jumps[k]``.  Expressions must be smooth: min/max
    are rejected because the Jacobian of the drift must exist.
    """

    d: int
    jumps: tuple[tuple[int, ...], ...]
    rates: tuple[ratexpr.Expr, ...]
    params: dict
    N: float

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("dimension must be at least 1")
        if len(self.jumps) != len(self.rates) or not self.jumps:
            raise ConfigError("need one rate expression per jump vector")
        jumps = tuple(tuple(int(c) for c in J) for J in self.jumps)
        for J in jumps:
            if len(J) != self.d:
                raise ConfigError(f"jump {J} has wrong dimension (want {self.d})")
            if all(c == 0 for c in J):
                raise ConfigError("zero jump vector")
        object.__setattr__(self, "jumps", jumps)
        if self.N <= 0:
            raise ConfigError("N must be positive")
        for e in self.rates:
            if ratexpr.contains_nonsmooth(e):
                raise ConfigError("min/max are non-smooth and not allowed in population rates")

    @classmethod
    def from_strings(
        cls, d: int, jumps, rate_strings, params: dict, N: float
    ) -> "PopulationModel":
        names = {f"x{i + 1}" for i in range(d)} | set(params)
        rates = tuple(ratexpr.parse(s, names=names) for s in rate_strings)
        return cls(d=d, jumps=tuple(tuple(J) for J in jumps), rates=rates, params=dict(params), N=float(N))

    @cached_property
    def _var_names(self) -> list[str]:
        return [f"x{i + 1}" for i in range(self.d)]

    @cached_property
    def _rate_fns(self):
        return [
            ratexpr.compile_expr(e, self._var_names, {k: float(v) for k, v in self.params.items()})
            for e in self.rates
        ]

    @cached_property
    def _grad_fns(self):
        out = []
        for e in self.rates:
            grads = [ratexpr.diff(e, v) for v in self._var_names]
            out.append(
                [
                    ratexpr.compile_expr(g, self._var_names, {k: float(v) for k, v in self.params.items()})
                    for g in grads
                ]
            )
        return out

    @cached_property
    def jump_matrix(self) -> np.ndarray:
        return np.array(self.jumps, dtype=np.float64)

    def rate_values(self, x) -> np.ndarray:
        """alpha_J(x) for every jump; broadcast over trailing point axes."""
        args = [np.asarray(x)[..., i] for i in range(self.d)]
        vals = np.stack([np.broadcast_to(f(*args), args[0].shape) for f in self._rate_fns], axis=0)
        if np.any(~np.isfinite(vals)) or np.any(vals < -1e-12):
            raise ModelError(f"rate evaluation produced invalid values at x={x!r}")
        return np.maximum(vals, 0.0)


def drift(model: PopulationModel, x) -> np.ndarray:
    """Deterministic drift F(x) = sum_J J alpha_J(x)."""
    x = np.asarray(x, dtype=np.float64)
    rates = model.rate_values(x)
    return rates @ model.jump_matrix


def rate_jacobian(model: PopulationModel, x) -> np.ndarray:
    """DF(x) assembled from the symbolic derivatives of the rates."""
    x = np.asarray(x, dtype=np.float64)
    args = [x[i] for i in range(model.d)]
    J = model.jump_matrix
    A = np.zeros((model.d, model.d))
    for k, grads in enumerate(model._grad_fns):
        for j, g in enumerate(grads):
            A[:, j] += J[k] * float(g(*args))
    return A


def _fd_jacobian(model: PopulationModel, x: np.ndarray) -> np.ndarray:
    h = float(np.finfo(float).eps ** (1.0 / 3.0))
    A = np.zeros((model.d, model.d))
    for j in range(model.d):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        A[:, j] = (drift(model, xp) - drift(model, xm)) / (2 * step)
    return A


def sigma2(model: PopulationModel, x) -> np.ndarray:
    """Jump covariance flux sigma^2(x) = sum_J J J^T alpha_J(x)."""
    rates = model.rate_values(np.asarray(x, dtype=np.float64))
    J = model.jump_matrix
    return (J.T * rates) @ J


@dataclass(frozen=True)
class GaussianSummary:
    """Equilibrium c, Jacobian A = DF(c), flux sigma2(c) and Lyapunov Sigma."""

    c: np.ndarray
    A: np.ndarray
    sigma2: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        eigs = np.linalg.eigvals(self.A)
        if eigs.real.max() >= 0:
            raise StabilityError(
                f"Jacobian has nonnegative spectral abscissa {eigs.real.max()!r}",
                eigenvalues=eigs,
            )
        res = lyapunov_residual(self.A, self.Sigma, self.sigma2)
        if res > _RESIDUAL_TOL:
            raise NumericalFailureError(f"Lyapunov residual {res:.3e} above tolerance")

    def to_dict(self) -> dict:
        return {
            "c": self.c.tolist(),
            "A": self.A.tolist(),
            "sigma2": self.sigma2.tolist(),
            "Sigma": self.Sigma.tolist(),
        }


def solve_lyapunov(A: np.ndarray, sigma2_c: np.ndarray) -> np.ndarray:
    """Solve A Sigma + Sigma A^T + sigma2 = 0 via the Kronecker system.

    Dense vectorized solve, intended for d <= 10; the result is
    symmetrized and its residual checked against 1e-10.
    """
    A = np.asarray(A, dtype=np.float64)
    sigma2_c = np.asarray(sigma2_c, dtype=np.float64)
    d = A.shape[0]
    if A.shape != (d, d) or sigma2_c.shape != (d, d):
        raise ConfigError("A and sigma2 must be square matrices of equal size")
    if not np.allclose(sigma2_c, sigma2_c.T, atol=1e-12 * max(1.0, np.abs(sigma2_c).max())):
        raise ConfigError("sigma2 must be symmetric")
    eigs = np.linalg.eigvals(A)
    if eigs.real.max() >= 0:
        raise StabilityError(
            f"cannot solve the Lyapunov equation: A is not stable "
            f"(max Re eig = {eigs.real.max()!r})",
            eigenvalues=eigs,
        )
    eye = np.eye(d)
    K = np.kron(eye, A) + np.kron(A, eye)
    Sigma = np.linalg.solve(K, -sigma2_c.reshape(-1)).reshape(d, d)
    Sigma = 0.5 * (Sigma + Sigma.T)
    res = lyapunov_residual(A, Sigma, sigma2_c)
    if res > _RESIDUAL_TOL:
        raise NumericalFailureError(f"Lyapunov residual {res:.3e} above tolerance")
    return Sigma


def lyapunov_residual(A: np.ndarray, Sigma: np.ndarray, sigma2_c: np.ndarray) -> float:
    return float(np.abs(A @ Sigma + Sigma @ A.T + sigma2_c).max())


def find_equilibrium(model: PopulationModel, x0) -> GaussianSummary:
    """Damped Newton on the drift, then the full Gaussian summary.

    The symbolic Jacobian is cross-checked against central differences at
    the solution; disagreement is a model error (bad rate expressions).
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (model.d,):
        raise ConfigError(f"x0 must have shape ({model.d},)")
    if np.any(x <= 0):
        raise ConfigError("x0 must lie in the positive orthant")
    fx = drift(model, x)
    for _ in range(_NEWTON_MAX_ITER):
        if np.abs(fx).max() < 1e-13:
            break
        A = rate_jacobian(model, x)
        try:
            step = np.linalg.solve(A, -fx)
        except np.linalg.LinAlgError as exc:
            raise NoEquilibriumError(f"singular Jacobian during Newton iteration: {exc}") from exc
        lam = 1.0
        norm0 = np.abs(fx).max()
        while lam > 1e-8:
            x_new = x + lam * step
            if np.all(x_new > 0):
                f_new = drift(model, x_new)
                if np.abs(f_new).max() < norm0:
                    break
            lam *= 0.5
        else:
            if norm0 <= 1e-11:
                break  # converged to roundoff; no further decrease possible
            raise NoEquilibriumError("Newton damping stalled; no equilibrium found from x0")
        x, fx = x_new, f_new
    else:
        raise NoEquilibriumError(
            f"Newton did not converge in {_NEWTON_MAX_ITER} iterations (|F| = {np.abs(fx).max()!r})"
        )
    if np.any(x <= 0):
        raise NoEquilibriumError(f"equilibrium {x!r} leaves the positive orthant")
    A = rate_jacobian(model, x)
    A_fd = _fd_jacobian(model, x)
    scale = max(1.0, np.abs(A).max())
    if np.abs(A - A_fd).max() > 1e-5 * scale:
        raise ModelError(
            f"symbolic and finite-difference Jacobians disagree by "
            f"{np.abs(A - A_fd).max()!r}; check the rate expressions"
        )
    s2 = sigma2(model, x)
    Sigma = solve_lyapunov(A, s2)
    return GaussianSummary(c=x, A=A, sigma2=s2, Sigma=Sigma)


def nearest_lattice_point(target: np.ndarray) -> np.ndarray:
    """Closest integer lattice point, ties broken toward the smaller
    (lexicographically earlier) candidate coordinate by coordinate."""
    target = np.asarray(target, dtype=np.float64)
    lo = np.floor(target)
    frac = target - lo
    pick_hi = frac > 0.5  # exact halves stay low: lexicographic tie-break
    return (lo + pick_hi).astype(np.int64)


def check_local_irreducibility(model: PopulationModel, x: np.ndarray, max_steps: int = 6) -> bool:
    """Sampled check: every unit direction reachable within max_steps jumps.

    Rates are evaluated at the density point x; a jump is usable when its
    rate is positive there.  This is a heuristic witness for the standing
    assumption, not a certificate.
    """
    rates = model.rate_values(np.asarray(x, dtype=np.float64))
    usable = [np.array(J, dtype=np.int64) for J, r in zip(model.jumps, rates) if r > 0]
    if not usable:
        return False
    targets = [tuple(row) for row in np.eye(model.d, dtype=np.int64)]
    frontier = {(0,) * model.d}
    seen = set(frontier)
    for _ in range(max_steps):
        nxt = set()
        for p in frontier:
            for J in usable:
                q = tuple(np.array(p) + J)
                if q not in seen:
                    seen.add(q)
                    nxt.add(q)
        frontier = nxt
        if all(t in seen for t in targets):
            return True
    return all(t in seen for t in targets)


def build_truncated_process(
    model: PopulationModel,
    summary: GaussianSummary,
    radius_multiplier: float = 4.0,
    max_states: int = 400_000,
) -> tuple[SparseGenerator, int, np.ndarray]:
    """Truncated accelerated-return generator on the Sigma-ellipsoid.

    Enumerates lattice states X >= 0 with
    (X - Nc)^T Sigma^{-1} (X - Nc) <= radius_multiplier^2 N, wires the
    jumps N alpha_J(X/N) inside, and reroutes any exiting jump to the
    central state s_N (nearest lattice point to Nc).  Returns the
    generator, the internal index of s_N, and the lattice coordinates per
    internal state.
    """
    N = model.N
    Nc = N * summary.c
    V = np.linalg.inv(summary.Sigma)
    limit = radius_multiplier**2 * N
    half_width = np.sqrt(limit * np.diag(summary.Sigma))
    lo = np.maximum(np.ceil(Nc - half_width), 0.0).astype(np.int64)
    hi = np.floor(Nc + half_width).astype(np.int64)
    box = np.prod((hi - lo + 1).astype(np.float64))
    if box > 50 * max_states:
        raise TruncationTooLargeError(
            f"bounding box holds about {box:.3g} lattice points (cap {max_states})"
        )
    axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    pts = np.array(list(itertools.product(*axes)), dtype=np.int64)
    diff = pts - Nc
    inside = np.einsum("ij,jk,ik->i", diff, V, diff) <= limit
    pts = pts[inside]
    if pts.shape[0] > max_states:
        raise TruncationTooLargeError(
            f"ellipsoid holds {pts.shape[0]} lattice points (cap {max_states})"
        )
    if pts.shape[0] == 0:
        raise TruncationTooLargeError("ellipsoid contains no nonnegative lattice points")
    s_N = nearest_lattice_point(Nc)
    index = {tuple(p): i + 1 for i, p in enumerate(pts)}
    s_key = tuple(int(v) for v in s_N)
    if s_key not in index:
        raise ConfigError(f"central state {s_key} fell outside the ellipsoid")
    s_idx = index[s_key]
    rates = model.rate_values(pts / N) * N  # shape (n_jumps, n_points)
    src_list, dst_list, rate_list = [], [], []
    jumps = np.array(model.jumps, dtype=np.int64)
    for k, J in enumerate(jumps):
        landing = pts + J
        r = rates[k]
        for i in range(pts.shape[0]):
            if r[i] <= 0.0:
                continue
            key = tuple(landing[i])
            j = index.get(key, s_idx)
            if j == i + 1:
                continue  # rerouted exit from the center itself: a no-op
            src_list.append(i + 1)
            dst_list.append(j)
            rate_list.append(r[i])
    gen = SparseGenerator(
        n=pts.shape[0],
        src=np.array(src_list, dtype=np.int64),
        dst=np.array(dst_list, dtype=np.int64),
        rate=np.array(rate_list, dtype=np.float64),
    )
    return gen, s_idx, pts


@dataclass(frozen=True)
class GaussianComparison:
    """Moments of the truncated quasi-equilibrium against the Gaussian limit."""

    c: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    mean_pi: np.ndarray
    cov_pi: np.ndarray
    tv_to_gaussian: float
    q_sN: float
    N: float
    states: int

    def to_dict(self) -> dict:
        return {
            "c": self.c.tolist(),
            "A": self.A.tolist(),
            "Sigma": self.Sigma.tolist(),
            "mean_pi": self.mean_pi.tolist(),
            "cov_pi": self.cov_pi.tolist(),
            "tv_to_gaussian": self.tv_to_gaussian,
            "q_sN": self.q_sN,
            "N": self.N,
            "states": self.states,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def mpp_quasi_equilibrium(
    model: PopulationModel,
    x0=None,
    radius_multiplier: float = 4.0,
    max_states: int = 400_000,
) -> tuple[ProbabilityVector, GaussianComparison, GaussianSummary]:
    """Stationary law of the ellipsoid-truncated return process plus the
    comparison report against the Gaussian limit MVN(Nc, N Sigma)."""
    if x0 is None:
        x0 = np.ones(model.d)
    summary = find_equilibrium(model, x0)
    if not check_local_irreducibility(model, summary.c):
        raise ModelError(
            "sampled local-irreducibility check failed at the equilibrium; "
            "the jump set cannot reach all lattice neighbours"
        )
    gen, s_idx, pts = build_truncated_process(
        model, summary, radius_multiplier=radius_multiplier, max_states=max_states
    )
    pi = stationary_distribution(gen)
    w = pi.probs
    coords = pts.astype(np.float64)
    mean = w @ coords
    centered = coords - mean
    cov = (centered.T * w) @ centered
    N = model.N
    # lattice-discretized Gaussian on the same support
    diff = coords - N * summary.c
    Vn = np.linalg.inv(N * summary.Sigma)
    logphi = -0.5 * np.einsum("ij,jk,ik->i", diff, Vn, diff)
    phi = np.exp(logphi - logphi.max())
    phi /= phi.sum()
    tv = float(0.5 * np.abs(w - phi).sum())
    q_sN = float(N * model.rate_values(pts[s_idx - 1] / N).sum())
    comparison = GaussianComparison(
        c=summary.c,
        A=summary.A,
        Sigma=summary.Sigma,
        mean_pi=mean,
        cov_pi=cov,
        tv_to_gaussian=tv,
        q_sN=q_sN,
        N=N,
        states=pts.shape[0],
    )
    return pi, comparison, summary
