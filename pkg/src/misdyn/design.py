"""Experimental design: choose initial conditions that maximize information.

The objective of a seed set ``S`` is the mutual information between the GP
coefficients and noisy correction readings taken along the *proxy*
trajectories of ``S``, i.e. the trajectories of the known model alone::

    MI(S) = log det(k(X, X) (x) I_d + I_n (x) Sigma) - n log det(Sigma)

where ``X`` stacks the ``n = |S| T`` proxy states. MI is monotone and
submodular in ``S``, so greedy selection is within ``1 - 1/e`` of optimal.

Marginal gains are computed incrementally from a running Cholesky factor;
``ProxyMutualInformation.value`` is the full-recompute reference.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ._linalg import chol_logdet, forward, jittered_cholesky
from .dynamics import SystemSpec, TimeGrid, proxy_states
from .errors import DesignSizeError, ModeError
from .kernels import KernelConfig, kernel_diag, kernel_matrix
from .observation import NoiseModel

EXHAUSTIVE_LIMIT = 10 ** 6


@dataclass(frozen=True)
class DesignProblem:
    """A finite design problem.

    ``noise`` is sized to the system's unknown correction components; the
    kernel acts on the system's ``correction_inputs``.
    """

    candidate_seeds: np.ndarray
    budget: int
    grid: TimeGrid
    kernel: KernelConfig
    noise: NoiseModel
    system: SystemSpec
    substeps: int = 100

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.candidate_seeds, dtype=float))
        if C.shape[1] != self.system.dim:
            raise ValueError(f"candidates have dimension {C.shape[1]}, system has {self.system.dim}")
        if len(np.unique(C, axis=0)) != len(C):
            raise ValueError("candidate seeds must be pairwise distinct")
        if not np.all(self.system.contains(C)):
            raise ValueError("all candidate seeds must lie inside the domain bounds")
        if not 1 <= int(self.budget) <= len(C):
            raise ValueError(f"budget must be in [1, {len(C)}], got {self.budget}")
        if self.noise.dim != len(self.system.output_dims):
            raise ValueError("noise dimension must equal the number of unknown correction components")
        C.setflags(write=False)
        object.__setattr__(self, "candidate_seeds", C)
        object.__setattr__(self, "budget", int(self.budget))

    @property
    def n_candidates(self) -> int:
        return self.candidate_seeds.shape[0]

    @property
    def d(self) -> int:
        """Number of unknown output components."""
        return len(self.system.output_dims)

    def with_budget(self, budget: int) -> "DesignProblem":
        return DesignProblem(self.candidate_seeds, budget, self.grid, self.kernel, self.noise, self.system,
                             self.substeps)


@dataclass
class DesignResult:
    selected: np.ndarray
    indices: list
    gains: list
    objective: float
    evaluations: int
    algorithm: str = "greedy"

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "indices": [int(i) for i in self.indices],
            "selected": np.asarray(self.selected).tolist(),
            "gains": [float(g) for g in self.gains],
            "objective": float(self.objective),
            "evaluations": int(self.evaluations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DesignResult":
        return cls(np.asarray(d["selected"], dtype=float), list(d["indices"]), list(d["gains"]),
                   float(d["objective"]), int(d["evaluations"]), d.get("algorithm", "greedy"))


def _noise_logdet(noise: NoiseModel) -> float:
    return float(np.linalg.slogdet(noise.covariance)[1])


def mi_from_states(kernel: KernelConfig, noise: NoiseModel, states, block: bool = False) -> float:
    """Mutual information of noisy readings at ``states`` (already projected to kernel inputs).

    With isotropic noise and ``block=False`` this uses the scalar identity
    ``d [log det(K + s I) - n log s]``; otherwise the full ``dn x dn`` block
    covariance is factorized.
    """
    X = np.atleast_2d(np.asarray(states, dtype=float))
    n, d = X.shape[0], noise.dim
    K = kernel_matrix(kernel, X)
    scale = float(np.max(kernel_diag(kernel, X)))
    s = noise.isotropic_variance
    if s is not None and not block:
        L, _ = jittered_cholesky(K + s * np.eye(n), scale)
        return d * (chol_logdet(L) - n * math.log(s))
    Sg = np.kron(K, np.eye(d)) + np.kron(np.eye(n), noise.covariance)
    L, _ = jittered_cholesky(Sg, scale)
    return chol_logdet(L) - n * _noise_logdet(noise)


class ProxyMutualInformation:
    """MI objective over candidate seeds with cached proxy trajectories.

    Each candidate's proxy states are integrated once, on first use, and
    stored by candidate index.
    """

    def __init__(self, problem: DesignProblem, block: bool = False):
        self.problem = problem
        self.kernel = problem.kernel
        self.noise = problem.noise
        self.d = problem.d
        self.iso = None if block else problem.noise.isotropic_variance
        self._cache = {}
        self._nlog = _noise_logdet(problem.noise)

    def precompute(self, indices: Optional[Sequence[int]] = None):
        """Integrate proxy trajectories for many candidates in one batch."""
        if indices is None:
            indices = range(self.problem.n_candidates)
        missing = [int(i) for i in indices if int(i) not in self._cache]
        if missing:
            trajs = proxy_states(self.problem.system, self.problem.candidate_seeds[missing], self.problem.grid,
                                 self.problem.substeps)
            for i, tr in zip(missing, trajs):
                self._cache[i] = self.problem.system.project(tr.states)

    def states(self, i: int) -> np.ndarray:
        i = int(i)
        if i not in self._cache:
            self.precompute([i])
        return self._cache[i]

    def stacked(self, indices: Sequence[int]) -> np.ndarray:
        return np.concatenate([self.states(i) for i in indices], axis=0)

    def value(self, indices: Sequence[int]) -> float:
        """Full-recompute MI of a candidate subset (0 for the empty set)."""
        indices = list(indices)
        if not indices:
            return 0.0
        return mi_from_states(self.kernel, self.noise, self.stacked(indices), block=self.iso is None)

    def chain(self) -> "_GreedyChain":
        return _GreedyChain(self)


class _GreedyChain:
    """Selected set with a running Cholesky factor of its observation covariance."""

    def __init__(self, ev: ProxyMutualInformation):
        self.ev = ev
        self.indices = []
        self.X = None
        self.L = None
        self.value = 0.0

    def _blocks(self, i):
        ev = self.ev
        Xi = ev.states(i)
        T = Xi.shape[0]
        Kii = kernel_matrix(ev.kernel, Xi)
        Ksi = None if self.X is None else kernel_matrix(ev.kernel, self.X, Xi)
        if ev.iso is not None:
            Kii = Kii + ev.iso * np.eye(T)
        else:
            Kii = np.kron(Kii, np.eye(ev.d)) + np.kron(np.eye(T), ev.noise.covariance)
            if Ksi is not None:
                Ksi = np.kron(Ksi, np.eye(ev.d))
        return Xi, Kii, Ksi

    def _schur(self, i):
        Xi, Kii, Ksi = self._blocks(i)
        if self.L is None:
            V = None
            C = Kii
        else:
            V = forward(self.L, Ksi)
            C = Kii - V.T @ V
            C = 0.5 * (C + C.T)
        Lc, _ = jittered_cholesky(C, self.ev.kernel.signal_variance)
        return Xi, V, Lc

    def _gain_from(self, Lc, T):
        ev = self.ev
        if ev.iso is not None:
            return ev.d * (chol_logdet(Lc) - T * math.log(ev.iso))
        return chol_logdet(Lc) - T * ev._nlog

    def gain(self, i: int) -> float:
        """``MI(S + {i}) - MI(S)`` via the Schur complement of the new block."""
        Xi, V, Lc = self._schur(i)
        return self._gain_from(Lc, Xi.shape[0])

    def add(self, i: int) -> float:
        Xi, V, Lc = self._schur(i)
        g = self._gain_from(Lc, Xi.shape[0])
        if self.L is None:
            self.L = Lc
            self.X = Xi
        else:
            m, k = self.L.shape[0], Lc.shape[0]
            L = np.zeros((m + k, m + k))
            L[:m, :m] = self.L
            L[m:, :m] = V.T
            L[m:, m:] = Lc
            self.L = L
            self.X = np.concatenate([self.X, Xi], axis=0)
        self.indices.append(int(i))
        self.value += g
        return g


def resolve_indices(problem: DesignProblem, seeds) -> list:
    """Map a subset given as candidate indices or as seed vectors to indices."""
    arr = np.asarray(seeds)
    if arr.size == 0:
        return []
    if arr.dtype.kind in "iu":
        idx = [int(i) for i in arr.ravel()]
    else:
        arr = np.atleast_2d(arr.astype(float))
        if arr.shape[1] != problem.system.dim:
            raise ValueError("seed vectors do not match the system dimension")
        idx = []
        for row in arr:
            hit = np.flatnonzero(np.all(problem.candidate_seeds == row, axis=1))
            if hit.size == 0:
                raise ValueError(f"seed {row} is not among the candidates")
            idx.append(int(hit[0]))
    if len(set(idx)) != len(idx):
        raise ValueError("seed subset contains duplicates")
    if min(idx) < 0 or max(idx) >= problem.n_candidates:
        raise ValueError("candidate index out of range")
    return idx


def mutual_information(problem: DesignProblem, seeds, block: bool = False) -> float:
    """MI of the proxy readings produced by a non-empty subset of candidates."""
    idx = resolve_indices(problem, seeds)
    if not idx:
        raise ValueError("mutual_information needs a non-empty subset")
    return ProxyMutualInformation(problem, block=block).value(idx)


def _result(problem, chain_indices, gains, evaluations, algorithm) -> DesignResult:
    return DesignResult(problem.candidate_seeds[chain_indices].copy(), list(chain_indices), list(gains),
                        float(sum(gains)), int(evaluations), algorithm)


def greedy_design(problem: DesignProblem, incremental: bool = True,
                  evaluator: Optional[ProxyMutualInformation] = None) -> DesignResult:
    """Plain greedy maximization; argmax ties go to the lowest candidate index.

    With ``incremental=False`` each candidate set is re-evaluated from
    scratch, which is the slow reference path.
    """
    ev = evaluator or ProxyMutualInformation(problem)
    ev.precompute()
    chain = ev.chain()
    remaining = list(range(problem.n_candidates))
    gains, evaluations = [], 0
    current = 0.0
    for _ in range(problem.budget):
        best, best_gain = None, -math.inf
        for x in remaining:
            if incremental:
                g = chain.gain(x)
            else:
                g = ev.value(chain.indices + [x]) - current
            evaluations += 1
            if g > best_gain:
                best, best_gain = x, g
        if incremental:
            chain.add(best)
        else:
            chain.indices.append(best)
            current += best_gain
        remaining.remove(best)
        gains.append(best_gain)
    return _result(problem, chain.indices, gains, evaluations, "greedy")


def lazy_greedy_design(problem: DesignProblem, evaluator: Optional[ProxyMutualInformation] = None) -> DesignResult:
    """Lazy (accelerated) greedy with a max-heap of stale marginal-gain bounds.

    By submodularity a gain computed for a smaller selected set bounds the
    current gain from above, so a freshly evaluated element at the top of the
    heap is the greedy choice. Heap entries are ordered by ``(-bound, index)``
    which reproduces the plain greedy tie-break exactly.
    """
    ev = evaluator or ProxyMutualInformation(problem)
    ev.precompute()
    chain = ev.chain()
    heap = [(-math.inf, i, -1) for i in range(problem.n_candidates)]
    heapq.heapify(heap)
    gains, evaluations = [], 0
    for it in range(problem.budget):
        while True:
            neg, i, stamp = heapq.heappop(heap)
            if stamp == it:
                break
            g = chain.gain(i)
            evaluations += 1
            heapq.heappush(heap, (-g, i, it))
        chain.add(i)
        gains.append(-neg)
    return _result(problem, chain.indices, gains, evaluations, "lazy")


def partition_matroid_greedy(problem: DesignProblem, partition, limits: Mapping,
                             evaluator: Optional[ProxyMutualInformation] = None) -> DesignResult:
    """Greedy under a partition matroid: at most ``limits[g]`` seeds from group ``g``.

    ``partition`` gives the group of every candidate (a sequence indexed by
    candidate, or a mapping from index to group). Selection stops at the
    budget or when every group's quota is exhausted.
    """
    n = problem.n_candidates
    if isinstance(partition, Mapping):
        groups = [partition[i] for i in range(n)]
    else:
        groups = list(partition)
    if len(groups) != n:
        raise ValueError("partition must assign a group to every candidate")
    missing = {g for g in groups if g not in limits}
    if missing:
        raise ValueError(f"groups without a limit: {sorted(map(str, missing))}")
    if any(int(v) < 1 for v in limits.values()):
        raise ValueError("group limits must be positive")
    used = {g: 0 for g in limits}
    ev = evaluator or ProxyMutualInformation(problem)
    ev.precompute()
    chain = ev.chain()
    remaining = list(range(n))
    gains, evaluations = [], 0
    for _ in range(problem.budget):
        eligible = [x for x in remaining if used[groups[x]] < limits[groups[x]]]
        if not eligible:
            break
        best, best_gain = None, -math.inf
        for x in eligible:
            g = chain.gain(x)
            evaluations += 1
            if g > best_gain:
                best, best_gain = x, g
        chain.add(best)
        used[groups[best]] += 1
        remaining.remove(best)
        gains.append(best_gain)
    return _result(problem, chain.indices, gains, evaluations, "matroid")


def exhaustive_design(problem: DesignProblem, limit: int = EXHAUSTIVE_LIMIT,
                      evaluator: Optional[ProxyMutualInformation] = None) -> DesignResult:
    """Enumerate every subset of size ``budget`` and return the best.

    The winning set is reported in greedy order within itself so that its
    gains are non-increasing.
    """
    n, K = problem.n_candidates, problem.budget
    count = math.comb(n, K)
    if count > limit:
        raise DesignSizeError(f"C({n}, {K}) = {count} subsets exceeds the limit {limit}")
    ev = evaluator or ProxyMutualInformation(problem)
    ev.precompute()
    best, best_val = None, -math.inf
    for combo in itertools.combinations(range(n), K):
        v = ev.value(combo)
        if v > best_val:
            best, best_val = combo, v
    chain = ev.chain()
    rest = list(best)
    gains = []
    while rest:
        g_best, x_best = max((chain.gain(x), -x) for x in rest)
        x_best = -x_best
        chain.add(x_best)
        rest.remove(x_best)
        gains.append(g_best)
    res = _result(problem, chain.indices, gains, count, "exhaustive")
    res.objective = float(best_val)
    return res


# -- proxy-vs-true discrepancy bounds -------------------------------------

def discrepancy_bound_generic(delta: float, d: int, k_tilde: int, noise: NoiseModel) -> float:
    """Bound on ``|MI_proxy - MI_true|`` when every kernel entry moves by at most ``delta``.

    Returns ``-n log(1 - delta n^{3/2} / sigma_min)`` with ``n = d * k_tilde``,
    or ``inf`` once the log argument is no longer positive.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if d < 1 or k_tilde < 1:
        raise ValueError("d and k_tilde must be positive")
    if delta == 0:
        return 0.0
    n = d * k_tilde
    x = delta * n ** 1.5 / noise.sigma_min
    if x >= 1.0:
        return math.inf
    return -n * math.log1p(-x)


def discrepancy_bound_rbf(L: float, Delta: float, d: int, k_tilde: int, noise: NoiseModel) -> float:
    """Generic bound with ``delta = 2 L Delta`` for a shift-invariant kernel with Lipschitz profile ``L``."""
    if L < 0 or Delta < 0:
        raise ValueError("L and Delta must be nonnegative")
    return discrepancy_bound_generic(2.0 * L * Delta, d, k_tilde, noise)


def poly_kernel_delta(m: int, B: float, Delta: float) -> float:
    return m * Delta * (2.0 * B + Delta) * (1.0 + B * B) ** (m - 1)


def discrepancy_bound_poly(m: int, B: float, Delta: float, d: int, k_tilde: int, noise: NoiseModel) -> float:
    """Generic bound for the order-``m`` polynomial kernel on states of norm at most ``B``."""
    if m < 1 or B < 0 or Delta < 0:
        raise ValueError("need m >= 1, B >= 0 and Delta >= 0")
    return discrepancy_bound_generic(poly_kernel_delta(m, B, Delta), d, k_tilde, noise)


@dataclass
class BoundTrial:
    delta_hat: float
    difference: float
    bound: float
    ratio: float
    vacuous: bool
    within: bool


@dataclass
class BoundReport:
    trials: list = field(default_factory=list)

    @property
    def max_ratio(self) -> float:
        return max((t.ratio for t in self.trials), default=0.0)

    @property
    def all_within(self) -> bool:
        return all(t.within for t in self.trials)

    @property
    def n_vacuous(self) -> int:
        return sum(t.vacuous for t in self.trials)

    def to_dict(self) -> dict:
        return {
            "trials": [vars(t) for t in self.trials],
            "max_ratio": self.max_ratio,
            "all_within": self.all_within,
            "n_vacuous": self.n_vacuous,
        }


def _ball_perturbation(rng: np.random.Generator, shape, radius: float) -> np.ndarray:
    n, p = shape
    v = rng.standard_normal((n, p))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / p)
    return v * r[:, None]


def validate_bound(problem: DesignProblem, seeds, perturbation: float, trials: int,
                   rng: Optional[np.random.Generator] = None) -> BoundReport:
    """Check the discrepancy bound against synthetic "true" trajectories.

    Each trial moves every proxy state (in kernel-input coordinates) by a
    random vector of norm at most ``perturbation``, measures the largest
    kernel-entry change and the MI change, and compares against
    :func:`discrepancy_bound_generic`. An infinite bound passes trivially and
    is flagged as vacuous.
    """
    if perturbation < 0:
        raise ValueError("perturbation must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = resolve_indices(problem, seeds)
    if not idx:
        raise ValueError("validate_bound needs a non-empty subset")
    ev = ProxyMutualInformation(problem)
    X = ev.stacked(idx)
    K0 = kernel_matrix(problem.kernel, X)
    mi0 = mi_from_states(problem.kernel, problem.noise, X)
    report = BoundReport()
    for _ in range(int(trials)):
        Xp = X + _ball_perturbation(rng, X.shape, perturbation) if perturbation > 0 else X.copy()
        delta_hat = float(np.max(np.abs(kernel_matrix(problem.kernel, Xp) - K0)))
        diff = abs(mi_from_states(problem.kernel, problem.noise, Xp) - mi0)
        bound = discrepancy_bound_generic(delta_hat, problem.d, X.shape[0], problem.noise)
        vacuous = math.isinf(bound)
        if vacuous or bound == 0.0:
            ratio = 0.0 if diff == 0.0 or vacuous else math.inf
        else:
            ratio = diff / bound
        report.trials.append(BoundTrial(delta_hat, diff, bound, ratio, vacuous, diff <= bound))
    return report


def mi_lower_bound(problem: DesignProblem, seeds) -> float:
    """``d n log(1 + lambda_min(K) / s)`` for isotropic noise ``s I`` on ``n`` proxy states."""
    s = problem.noise.isotropic_variance
    if s is None:
        raise ModeError("mi_lower_bound needs isotropic noise")
    idx = resolve_indices(problem, seeds)
    X = ProxyMutualInformation(problem).stacked(idx)
    lam = max(float(np.linalg.eigvalsh(kernel_matrix(problem.kernel, X)).min()), 0.0)
    return problem.d * X.shape[0] * math.log1p(lam / s)
