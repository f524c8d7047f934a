"""Shared corpus: the Ricker reference chain and random test chains.

Random chains are drawn deterministically and curated so that the
excursion probability at the center state is no smaller than the
worst-case hitting probability p; that keeps the ratio form of the
sandwich inequality meaningful for arbitrary return laws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from qedist.birthdeath import BirthDeathModel, make_density_model
from qedist.generator import SparseGenerator
from qedist.solvers import HittingStats, hitting_stats


@dataclass(frozen=True)
class Chain:
    name: str
    Q: SparseGenerator
    s: int
    stats: HittingStats
    bd: BirthDeathModel | None = None


def random_bd_model(seed: int, n_lo: int = 5, n_hi: int = 60) -> tuple[BirthDeathModel, int]:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi + 1))
    b = np.concatenate([[0.0], np.exp(rng.uniform(-1.0, 1.0, n))])
    b[n] = 0.0
    d = np.concatenate([[1.0], np.exp(rng.uniform(-1.0, 1.0, n))])
    model = BirthDeathModel(b=b, d=d, cap=n)
    s = int(rng.integers(max(1, n // 4), max(2, 3 * n // 4)))
    return model, s


def random_ctmc(seed: int, n: int, absorbing_fraction: float = 0.4) -> SparseGenerator:
    """Strongly connected random generator with sparse absorption."""
    rng = np.random.default_rng(seed)
    src, dst, rate = [], [], []
    for i in range(1, n + 1):  # a cycle guarantees irreducibility
        src.append(i)
        dst.append(i % n + 1)
        rate.append(float(np.exp(rng.uniform(-0.7, 0.7))))
    extra = max(n, int(1.5 * n))
    for _ in range(extra):
        i = int(rng.integers(1, n + 1))
        j = int(rng.integers(1, n + 1))
        if i != j:
            src.append(i)
            dst.append(j)
            rate.append(float(np.exp(rng.uniform(-0.7, 0.7))))
    for i in range(1, n + 1):
        if rng.random() < absorbing_fraction:
            src.append(i)
            dst.append(0)
            rate.append(float(0.1 * np.exp(rng.uniform(-1.0, 0.5))))
    return SparseGenerator(
        n=n, src=np.array(src), dst=np.array(dst), rate=np.array(rate)
    )


def _curated_bd_chains(count: int, base_seed: int = 1000) -> list[Chain]:
    chains: list[Chain] = []
    seed = base_seed
    while len(chains) < count:
        seed += 1
        model, s = random_bd_model(seed)
        Q = model.to_generator()
        stats = hitting_stats(Q, s)
        if stats.p_s < stats.p:  # keep mu(T)/p an honest excursion bound
            continue
        chains.append(Chain(name=f"bd-{seed}", Q=Q, s=s, stats=stats, bd=model))
    return chains


@pytest.fixture(scope="session")
def ricker20() -> Chain:
    model, s = make_density_model("ricker", {"b": 2.0, "d": 1.0, "alpha": 1.0}, 20, cap=120)
    Q = model.to_generator()
    return Chain(name="ricker-A20", Q=Q, s=s, stats=hitting_stats(Q, s), bd=model)


@pytest.fixture(scope="session")
def bd_corpus() -> list[Chain]:
    return _curated_bd_chains(25)


@pytest.fixture(scope="session")
def small_corpus(bd_corpus, ricker20) -> list[Chain]:
    """A lighter mix for the heavier per-chain property tests."""
    return [ricker20] + bd_corpus[:6]


def random_mu(rng: np.random.Generator, n: int):
    from qedist.generator import ReturnDistribution

    support_size = int(rng.integers(1, min(n, 12) + 1))
    states = rng.choice(np.arange(1, n + 1), size=support_size, replace=False)
    w = rng.dirichlet(np.ones(support_size))
    return ReturnDistribution(states=np.sort(states), weights=w[np.argsort(states)])
