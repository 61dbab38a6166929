"""Desk-scale reproductions of the two experiment families.

``linear_quadratic``: ``G(y) = A y`` in two dimensions with the quadratic
correction ``F(y) = c (y_1^2, y_2^2)``.

``gravity``: a unit mass moving in the plane; the known model has a single
attracting mass at the origin, the truth adds two more. The state is
``(x_1, x_2, v_1, v_2)`` and only the accelerations are corrected, as a
function of position alone.

Seeds: realization ``r`` under master seed ``s`` uses the 32-bit seed
``SeedSequence(s, spawn_key=(r,)).generate_state(1)[0]``. That seed drives
the measurement noise (experiment ``k`` = candidate index ``k``, so methods
sharing a seed also share its noise) and, through spawn key
``RANDOM_SELECTION_KEY``, the random baseline's seed choice.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import gp as gpmod
from .design import DesignProblem, exhaustive_design, greedy_design, lazy_greedy_design
from .dynamics import SystemSpec, TimeGrid, integrate_batch
from .kernels import KernelConfig
from .observation import NoiseModel, ObservationSet, experiment_rng, sample_corrections

LINEAR_QUADRATIC = "linear_quadratic"
GRAVITY = "gravity"
METHODS = ("design", "random", "agnostic")
RANDOM_SELECTION_KEY = 2 ** 31 - 1


@dataclass
class ScenarioConfig:
    """Every constant of a benchmark scenario.

    Defaults are the ``linear_quadratic`` values; :func:`scenario_gravity`
    returns the gravity values. Unknown keys in :meth:`from_dict` are errors.
    """

    scenario: str = LINEAR_QUADRATIC
    # linear_quadratic dynamics
    A: list = field(default_factory=lambda: [[0.02, 0.10], [-0.10, -0.06]])
    correction_coeff: float = 0.01
    # gravity dynamics: [mass, x, y]; the first `known_masses` are in the known model
    masses: list = field(default_factory=list)
    known_masses: int = 1
    # observation
    t_span: list = field(default_factory=lambda: [0.0, 6.0])
    T: int = 11
    noise_variance: float = 1e-4
    substeps: int = 100
    # GP
    kernel: dict = field(default_factory=lambda: {"family": "gaussian_rbf", "bandwidth": 1.0,
                                                  "signal_variance": 4e-5})
    agnostic_signal_variance: float = 1e-2
    # domain and candidates
    domain: list = field(default_factory=lambda: [[-1.0, 1.0], [-1.0, 1.0]])
    candidate_grid: int = 13
    n_candidates: int = 0
    annulus: list = field(default_factory=lambda: [1.0, 2.5])
    speed_jitter: float = 0.2
    candidate_seed: int = 0
    # budgets
    design_budget: int = 9
    random_budget: int = 40
    budgets: list = field(default_factory=lambda: [3, 6, 9, 12])
    algorithm: str = "lazy"
    # evaluation
    metric_resolution: int = 101
    metric_margin: float = 0.0
    realizations: int = 10
    seed: int = 0
    rff_features: int = 4096

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown scenario keys: {', '.join(unknown)}")
        base = scenario_gravity()[1] if d.get("scenario") == GRAVITY else cls()
        return dataclasses.replace(base, **d)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.t_span[0], self.t_span[1], self.T)

    @property
    def kernel_config(self) -> KernelConfig:
        return KernelConfig.from_dict(self.kernel)

    def noise(self, seed: int = 0) -> NoiseModel:
        return NoiseModel.isotropic(self.noise_variance, self.n_outputs, seed)

    @property
    def n_outputs(self) -> int:
        return 2


# -- scenarios ------------------------------------------------------------

def _linear_system(cfg: ScenarioConfig) -> SystemSpec:
    A = np.asarray(cfg.A, dtype=float)
    c = float(cfg.correction_coeff)
    return SystemSpec(2, lambda y: y @ A.T, np.asarray(cfg.domain, dtype=float), lambda y: c * y * y,
                      name=LINEAR_QUADRATIC)


def point_mass_acceleration(masses, pos: np.ndarray) -> np.ndarray:
    """``-sum_i m_i (x - x_i) / |x - x_i|^3`` at positions of shape ``(..., 2)``."""
    acc = np.zeros_like(pos)
    for m, px, py in masses:
        diff = pos - np.array([px, py])
        r3 = np.sum(diff * diff, axis=-1, keepdims=True) ** 1.5
        acc -= m * diff / r3
    return acc


def _gravity_system(cfg: ScenarioConfig) -> SystemSpec:
    known = [tuple(m) for m in cfg.masses[:cfg.known_masses]]
    extra = [tuple(m) for m in cfg.masses[cfg.known_masses:]]

    def G(y):
        y = np.asarray(y, dtype=float)
        return np.concatenate([y[..., 2:4], point_mass_acceleration(known, y[..., 0:2])], axis=-1)

    def F(y):
        y = np.asarray(y, dtype=float)
        return np.concatenate([np.zeros_like(y[..., 2:4]), point_mass_acceleration(extra, y[..., 0:2])], axis=-1)

    return SystemSpec(4, G, np.asarray(cfg.domain, dtype=float), F, correction_inputs=(0, 1),
                      correction_outputs=(2, 3), name=GRAVITY)


def build_system(cfg: ScenarioConfig) -> SystemSpec:
    if cfg.scenario == LINEAR_QUADRATIC:
        return _linear_system(cfg)
    if cfg.scenario == GRAVITY:
        return _gravity_system(cfg)
    raise ValueError(f"unknown scenario {cfg.scenario!r}")


def scenario_linear_quadratic():
    """Linear known term with a quadratic correction on ``[-1, 1]^2``."""
    cfg = ScenarioConfig()
    return build_system(cfg), cfg


def scenario_gravity():
    """Planar motion around a known mass at the origin, with two unmodelled masses."""
    rmax = 2.5
    box = 1.1 * rmax
    cfg = ScenarioConfig(
        scenario=GRAVITY,
        masses=[[0.2, 0.0, 0.0], [0.1, 0.0, 4.0], [0.4, 0.5, 3.8]],
        known_masses=1,
        t_span=[0.0, 3.0],
        T=20,
        kernel={"family": "gaussian_rbf", "bandwidth": 1.0, "signal_variance": 1e-3},
        agnostic_signal_variance=1e-2,
        domain=[[-box, box], [-box, box], [-1.0, 1.0], [-1.0, 1.0]],
        candidate_grid=0,
        n_candidates=300,
        annulus=[1.0, rmax],
        speed_jitter=0.2,
        design_budget=7,
        random_budget=7,
        budgets=[7],
        metric_resolution=100,
        metric_margin=0.1,
    )
    return build_system(cfg), cfg


def candidate_seeds(cfg: ScenarioConfig) -> np.ndarray:
    """Candidate initial conditions.

    ``linear_quadratic``: a uniform ``candidate_grid`` x ``candidate_grid``
    grid over the domain. ``gravity``: positions uniform (by area) on the
    annulus around the origin, velocity tangential (counter-clockwise) at
    the circular-orbit speed of the known mass times ``1 + U[-jitter, jitter]``.
    """
    if cfg.scenario == LINEAR_QUADRATIC:
        (x0, x1), (y0, y1) = cfg.domain
        gx = np.linspace(x0, x1, cfg.candidate_grid)
        gy = np.linspace(y0, y1, cfg.candidate_grid)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])
    rng = np.random.default_rng(cfg.candidate_seed)
    n = cfg.n_candidates
    rmin, rmax = cfg.annulus
    r = np.sqrt(rng.uniform(rmin ** 2, rmax ** 2, n))
    phi = rng.uniform(0.0, 2 * math.pi, n)
    m0 = sum(m for m, _, _ in cfg.masses[:cfg.known_masses])
    speed = np.sqrt(m0 / r) * (1.0 + rng.uniform(-cfg.speed_jitter, cfg.speed_jitter, n))
    pos = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    vel = np.column_stack([-np.sin(phi), np.cos(phi)]) * speed[:, None]
    return np.column_stack([pos, vel])


def metric_domain(cfg: ScenarioConfig, candidates: Optional[np.ndarray] = None) -> np.ndarray:
    """Integration box for the field error, in correction-input coordinates.

    For gravity this is the bounding box of the candidates' positions grown
    by ``metric_margin`` on each side (relative to its extent).
    """
    if cfg.scenario == LINEAR_QUADRATIC:
        return np.asarray(cfg.domain, dtype=float)
    if candidates is None:
        candidates = candidate_seeds(cfg)
    pos = candidates[:, :2]
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    pad = cfg.metric_margin * (hi - lo)
    return np.column_stack([lo - pad, hi + pad])


# -- metric ---------------------------------------------------------------

def midpoint_grid(domain, resolution: int):
    """Cell centres of a uniform ``resolution^p`` grid and the cell volume."""
    domain = np.asarray(domain, dtype=float)
    axes = [lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution for lo, hi in domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    vol = float(np.prod((domain[:, 1] - domain[:, 0]) / resolution))
    return pts, vol


def field_error(estimate: Callable, truth: Callable, domain, resolution: int) -> float:
    """Midpoint-rule integral of ``|estimate(y) - truth(y)|_2`` over a box.

    ``estimate`` and ``truth`` map an ``(n, p)`` array of points to ``(n, m)``
    values (``None`` stands for the zero field).
    """
    if estimate is None and truth is None:
        raise ValueError("need at least one field")
    pts, vol = midpoint_grid(domain, resolution)
    est = 0.0 if estimate is None else estimate(pts)
    tru = 0.0 if truth is None else truth(pts)
    diff = np.asarray(est - tru, dtype=float).reshape(pts.shape[0], -1)
    return float(np.sum(np.linalg.norm(diff, axis=1)) * vol)


def _embed(system: SystemSpec, pts: np.ndarray) -> np.ndarray:
    """Full states whose correction inputs are ``pts`` and other coordinates zero."""
    y = np.zeros((pts.shape[0], system.dim))
    y[:, list(system.input_dims)] = pts
    return y


def true_correction_on(system: SystemSpec):
    outs = list(system.output_dims)
    return lambda pts: system.true_correction(_embed(system, pts))[:, outs]


def full_dynamics_on(system: SystemSpec):
    outs = list(system.output_dims)
    return lambda pts: (system.known_term(_embed(system, pts)) + system.true_correction(_embed(system, pts)))[:, outs]


# -- comparison harness ---------------------------------------------------

def realization_seed(master: int, r: int) -> int:
    return int(np.random.SeedSequence(int(master), spawn_key=(int(r),)).generate_state(1)[0])


def design_problem(cfg: ScenarioConfig, system: SystemSpec, candidates: np.ndarray, budget: int) -> DesignProblem:
    return DesignProblem(candidates, budget, cfg.grid, cfg.kernel_config, cfg.noise(cfg.seed), system, cfg.substeps)


def run_design(problem: DesignProblem, algorithm: str = "lazy"):
    if algorithm == "lazy":
        return lazy_greedy_design(problem)
    if algorithm == "greedy":
        return greedy_design(problem)
    if algorithm == "exhaustive":
        return exhaustive_design(problem)
    raise ValueError(f"unknown design algorithm {algorithm!r}")


def observe(cfg: ScenarioConfig, system: SystemSpec, seeds: np.ndarray, ids: Sequence[int],
            noise_seed: int) -> ObservationSet:
    """Simulate the true system from ``seeds`` and read noisy corrections."""
    trajs = integrate_batch(system, True, seeds, cfg.grid, cfg.substeps)
    return sample_corrections(system, trajs, cfg.noise(noise_seed), experiment_ids=list(ids))


def fit_correction(cfg: ScenarioConfig, system: SystemSpec, obs: ObservationSet) -> gpmod.GpPosterior:
    return gpmod.fit(obs, cfg.kernel_config, input_dims=system.input_dims, output_dims=system.output_dims)


def fit_agnostic(cfg: ScenarioConfig, system: SystemSpec, obs: ObservationSet) -> gpmod.GpPosterior:
    """GP on the whole right-hand side ``G + F``, ignoring the known model."""
    full = ObservationSet(obs.states, obs.values + system.known_term(obs.states), obs.experiment,
                          obs.time_index, obs.noise)
    kernel = dataclasses.replace(cfg.kernel_config, signal_variance=cfg.agnostic_signal_variance)
    return gpmod.fit(full, kernel, input_dims=system.input_dims, output_dims=system.output_dims)


@dataclass
class BenchReport:
    scenario: str
    master_seed: int
    rows: list
    correction_energy: float
    dynamics_energy: float
    design_indices: list
    runtimes: dict
    config: dict

    def mean_error(self, method: str, budget: int) -> float:
        vals = [r["error"] for r in self.rows if r["method"] == method and r["budget"] == budget]
        return float(np.mean(vals)) if vals else math.nan

    def std_error(self, method: str, budget: int) -> float:
        vals = [r["error"] for r in self.rows if r["method"] == method and r["budget"] == budget]
        return float(np.std(vals)) if vals else math.nan

    def summary(self) -> list:
        keys = sorted({(r["method"], r["budget"]) for r in self.rows}, key=lambda t: (t[1], t[0]))
        return [{"method": m, "budget": b, "mean_error": self.mean_error(m, b), "std_error": self.std_error(m, b)}
                for m, b in keys]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "master_seed": self.master_seed,
            "correction_energy": self.correction_energy,
            "dynamics_energy": self.dynamics_energy,
            "design_indices": self.design_indices,
            "summary": self.summary(),
            "rows": self.rows,
            "runtimes": self.runtimes,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["realization", "seed", "method", "budget", "error"],
                           lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: r[k] for k in w.fieldnames})
        return buf.getvalue()


def run_comparison(cfg: ScenarioConfig, methods: Sequence[str] = METHODS, realizations: Optional[int] = None,
                   budgets: Optional[Sequence[int]] = None, threads: int = 1,
                   system: Optional[SystemSpec] = None) -> BenchReport:
    """Integrated correction error of each method, budget and realization.

    ``design`` fits the correction on seeds chosen by greedy MI design,
    ``random`` on uniformly drawn candidates, and ``agnostic`` learns the full
    right-hand side from the designed seeds. Designed seed sets are nested
    across budgets (greedy prefixes), so one design run serves every budget.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("methods must be non-empty")
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValueError(f"unknown methods {sorted(bad)}")
    realizations = cfg.realizations if realizations is None else int(realizations)
    budgets = list(cfg.budgets if budgets is None else budgets)
    system = system or build_system(cfg)
    cands = candidate_seeds(cfg)
    dom = metric_domain(cfg, cands)
    truth = true_correction_on(system)
    runtimes = {}

    t0 = time.perf_counter()
    design_idx = []
    if {"design", "agnostic"} & set(methods):
        problem = design_problem(cfg, system, cands, max(budgets))
        design_idx = run_design(problem, cfg.algorithm).indices
    runtimes["design_s"] = time.perf_counter() - t0

    def one(r):
        seed = realization_seed(cfg.seed, r)
        rows = []
        sel_rng = experiment_rng(seed, RANDOM_SELECTION_KEY)
        for K in budgets:
            for method in methods:
                try:
                    if method == "random":
                        ids = np.sort(sel_rng.choice(len(cands), size=K, replace=False))
                    else:
                        ids = np.asarray(design_idx[:K])
                    obs = observe(cfg, system, cands[ids], ids, seed)
                    if method == "agnostic":
                        model = fit_agnostic(cfg, system, obs)
                        err = field_error(model.mean, full_dynamics_on(system), dom, cfg.metric_resolution)
                    else:
                        model = fit_correction(cfg, system, obs)
                        err = field_error(model.mean, truth, dom, cfg.metric_resolution)
                except Exception as exc:
                    raise RuntimeError(f"realization {r} (seed {seed}) failed for {method}, K={K}: {exc}") from exc
                rows.append({"realization": r, "seed": seed, "method": method, "budget": int(K),
                             "error": err, "indices": [int(i) for i in ids]})
        return rows

    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per = list(pool.map(one, range(realizations)))
    else:
        per = [one(r) for r in range(realizations)]
    runtimes["realizations_s"] = time.perf_counter() - t0
    rows = [row for chunk in per for row in chunk]

    full = full_dynamics_on(system)
    return BenchReport(
        scenario=cfg.scenario,
        master_seed=cfg.seed,
        rows=rows,
        correction_energy=field_error(None, truth, dom, cfg.metric_resolution),
        dynamics_energy=field_error(None, full, dom, cfg.metric_resolution),
        design_indices=[int(i) for i in design_idx],
        runtimes=runtimes,
        config=cfg.to_dict(),
    )


@dataclass
class PredictionCheck:
    improved: int
    total: int
    corrected_errors: list
    proxy_errors: list

    @property
    def fraction(self) -> float:
        return self.improved / self.total


def prediction_check(cfg: ScenarioConfig, n_train: int = 40, n_test: int = 20, seed: int = 0,
                     model: str = "gp", system: Optional[SystemSpec] = None) -> PredictionCheck:
    """Do corrected predictions track the truth better than the known model alone?

    Trains on ``n_train`` initial conditions drawn uniformly over the domain
    box, then compares sup-norm trajectory errors on ``n_test`` fresh seeds.
    """
    from .rff import emulate_trajectory, fit_ridge, sample_features

    system = system or build_system(cfg)
    rng = np.random.default_rng(seed)
    lo, hi = system.domain_bounds[:, 0], system.domain_bounds[:, 1]
    train = rng.uniform(lo, hi, (n_train, system.dim))
    test = rng.uniform(lo, hi, (n_test, system.dim))
    obs = observe(cfg, system, train, range(n_train), seed)
    if model == "gp":
        fitted = fit_correction(cfg, system, obs)
    else:
        fmap = sample_features(cfg.kernel_config, len(system.input_dims), cfg.rff_features, seed)
        fitted = fit_ridge(obs, fmap, input_dims=system.input_dims, output_dims=system.output_dims)
    truth = integrate_batch(system, True, test, cfg.grid, cfg.substeps)
    proxy = integrate_batch(system, False, test, cfg.grid, cfg.substeps)
    corr = emulate_trajectory(system, fitted, test, cfg.grid, cfg.substeps)
    ce = [float(np.max(np.abs(c.states - t.states))) for c, t in zip(corr, truth)]
    pe = [float(np.max(np.abs(p.states - t.states))) for p, t in zip(proxy, truth)]
    return PredictionCheck(sum(c < p for c, p in zip(ce, pe)), n_test, ce, pe)
