"""ODE systems with a known driving term and an additive correction.

A system evolves as ``dy/dt = G(y) + F(y)`` where ``G`` is the known (proxy)
model and ``F`` a small correction that is only available in simulation.
Vector fields are vectorized: they take an array of shape ``(..., d)`` and
return an array of the same shape, so a batch of initial conditions can be
integrated in one pass.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import IntegrationError

VectorField = Callable[[np.ndarray], np.ndarray]

TRUE_MODEL = "true_model"
PROXY_MODEL = "proxy_model"
CORRECTED_MODEL = "corrected_model"


@dataclass(frozen=True)
class SystemSpec:
    """A misspecified ODE system.

    Parameters
    ----------
    dim : int
        State dimension ``d``.
    known_term : callable
        Vectorized ``G(y)``.
    domain_bounds : array_like, shape (dim, 2)
        Axis-aligned box ``[lo, hi]`` per coordinate.
    true_correction : callable, optional
        Vectorized ``F(y)``; present only when simulating ground truth.
    correction_inputs : sequence of int, optional
        State coordinates the correction depends on. Defaults to all.
    correction_outputs : sequence of int, optional
        Components of ``F`` that are unknown (non-zero). Defaults to all.
    """

    dim: int
    known_term: VectorField
    domain_bounds: np.ndarray
    true_correction: Optional[VectorField] = None
    correction_inputs: Optional[tuple] = None
    correction_outputs: Optional[tuple] = None
    name: str = field(default="system", compare=False)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        bounds = np.asarray(self.domain_bounds, dtype=float)
        if bounds.shape != (self.dim, 2):
            raise ValueError(f"domain_bounds must have shape ({self.dim}, 2), got {bounds.shape}")
        if not np.all(bounds[:, 1] > bounds[:, 0]):
            raise ValueError("domain_bounds must have strictly positive extent on every axis")
        object.__setattr__(self, "domain_bounds", bounds)
        for name in ("correction_inputs", "correction_outputs"):
            idx = getattr(self, name)
            if idx is not None:
                idx = tuple(int(i) for i in idx)
                if not idx or min(idx) < 0 or max(idx) >= self.dim or len(set(idx)) != len(idx):
                    raise ValueError(f"{name} must be distinct indices in [0, {self.dim})")
                object.__setattr__(self, name, idx)

    @property
    def input_dims(self) -> tuple:
        return self.correction_inputs if self.correction_inputs is not None else tuple(range(self.dim))

    @property
    def output_dims(self) -> tuple:
        return self.correction_outputs if self.correction_outputs is not None else tuple(range(self.dim))

    def project(self, states: np.ndarray) -> np.ndarray:
        """Restrict states to the coordinates the correction depends on."""
        states = np.asarray(states, dtype=float)
        return states[..., list(self.input_dims)]

    def without_correction(self) -> "SystemSpec":
        return SystemSpec(self.dim, self.known_term, self.domain_bounds, None,
                          self.correction_inputs, self.correction_outputs, self.name)

    def contains(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        lo, hi = self.domain_bounds[:, 0], self.domain_bounds[:, 1]
        return np.all((states >= lo) & (states <= hi), axis=-1)

    def vector_field(self, use_correction: bool) -> VectorField:
        if not use_correction:
            return self.known_term
        if self.true_correction is None:
            raise ValueError("use_correction requested but the system has no true_correction")
        G, F = self.known_term, self.true_correction
        return lambda y: G(y) + F(y)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing, nonnegative observation times (at least two)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.isfinite(pts)) or pts[0] < 0:
            raise ValueError("time grid points must be finite and nonnegative")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("time grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, t0: float, t1: float, count: int) -> "TimeGrid":
        return cls(np.linspace(t0, t1, int(count)))

    @property
    def count(self) -> int:
        return self.points.size

    def __len__(self):
        return self.points.size


@dataclass(frozen=True)
class Trajectory:
    """States sampled on a time grid.

    ``states`` has shape ``(T, d)``.
    """

    initial_condition: np.ndarray
    grid: TimeGrid
    states: np.ndarray
    model_tag: str = TRUE_MODEL

    def __post_init__(self):
        if self.states.shape[0] != self.grid.count:
            raise ValueError("states and grid have different lengths")


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(f: VectorField, y0: np.ndarray, times: np.ndarray, substeps: int = 100) -> np.ndarray:
    """Integrate an autonomous vector field with fixed-step classical RK4.

    Parameters
    ----------
    f : callable
        Vectorized right-hand side.
    y0 : ndarray, shape (d,) or (n, d)
        Initial state(s) at ``times[0]``.
    times : ndarray, shape (T,)
        Output times; the solution is reported at each one.
    substeps : int
        Uniform RK4 steps taken between consecutive output times.

    Returns
    -------
    ndarray, shape (T, d) or (T, n, d)
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    y = np.array(y0, dtype=float)
    out = np.empty((len(times),) + y.shape)
    out[0] = y
    for i in range(1, len(times)):
        t_prev = times[i - 1]
        h = (times[i] - t_prev) / substeps
        for j in range(substeps):
            y = _rk4_step(f, y, h)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(
                f"non-finite state encountered between t={t_prev:g} and t={times[i]:g}", time=float(times[i]))
        out[i] = y
    return out


def _integrate_on_grid(f, y0, grid: TimeGrid, substeps: int) -> np.ndarray:
    # Initial conditions live at t = 0; a grid starting later is reached first.
    if grid.points[0] > 0:
        times = np.concatenate([[0.0], grid.points])
        return rk4_integrate(f, y0, times, substeps)[1:]
    return rk4_integrate(f, y0, grid.points, substeps)


def _check_state(system: SystemSpec, y0) -> np.ndarray:
    y0 = np.asarray(y0, dtype=float)
    if y0.shape[-1:] != (system.dim,):
        raise ValueError(f"state has shape {y0.shape}, expected trailing dimension {system.dim}")
    return y0


def integrate_rk4(system: SystemSpec, use_correction: bool, y0, grid: TimeGrid, substeps: int = 100) -> Trajectory:
    """Integrate the true (``G + F``) or proxy (``G``) model from one state."""
    y0 = _check_state(system, y0)
    if y0.ndim != 1:
        raise ValueError("integrate_rk4 takes a single initial condition; use integrate_batch for many")
    f = system.vector_field(use_correction)
    states = _integrate_on_grid(f, y0, grid, substeps)
    return Trajectory(y0.copy(), grid, states, TRUE_MODEL if use_correction else PROXY_MODEL)


def integrate_batch(system: SystemSpec, use_correction: bool, seeds, grid: TimeGrid,
                    substeps: int = 100) -> list:
    """Integrate many initial conditions at once; output follows seed order."""
    seeds = np.atleast_2d(_check_state(system, seeds))
    f = system.vector_field(use_correction)
    states = _integrate_on_grid(f, seeds, grid, substeps)
    tag = TRUE_MODEL if use_correction else PROXY_MODEL
    return [Trajectory(seeds[k].copy(), grid, states[:, k, :].copy(), tag) for k in range(seeds.shape[0])]


def proxy_states(system: SystemSpec, seeds, grid: TimeGrid, substeps: int = 100) -> list:
    """Trajectories of the known model ``dy/dt = G(y)`` from each seed.

    Stacking the returned ``states`` gives the proxy set of ``len(seeds) * T``
    future states used by the experimental design objective.
    """
    seeds = np.atleast_2d(_check_state(system, seeds))
    outside = ~system.contains(seeds)
    if np.any(outside):
        warnings.warn(f"{int(outside.sum())} seed(s) lie outside the domain bounds", stacklevel=2)
    return integrate_batch(system, False, seeds, grid, substeps)


def stack_states(trajectories: Sequence[Trajectory]) -> np.ndarray:
    """Concatenate trajectory states into a ``(K*T, d)`` array, experiment-major."""
    return np.concatenate([tr.states for tr in trajectories], axis=0)


# Diagonal Pade [6/6] coefficients, c_j = (12-j)! 6! / (12! j! (6-j)!).
_PADE6 = [math.factorial(12 - j) * math.factorial(6) / (math.factorial(12) * math.factorial(j) * math.factorial(6 - j))
          for j in range(7)]


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a [6/6] Pade core.

    The argument is scaled by ``2**-s`` so that its 1-norm is at most 0.5,
    where the [6/6] approximant is accurate to well below double precision.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expm needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    n = A.shape[0]
    norm = np.linalg.norm(A, 1)
    s = 0 if norm <= 0.5 else int(math.ceil(math.log2(norm / 0.5)))
    X = A / (2.0 ** s)
    ident = np.eye(n)
    num = _PADE6[0] * ident
    den = _PADE6[0] * ident
    P = ident
    for j in range(1, 7):
        P = P @ X
        num = num + _PADE6[j] * P
        den = den + ((-1) ** j) * _PADE6[j] * P
    E = np.linalg.solve(den, num)
    for _ in range(s):
        E = E @ E
    return E


def linear_flow(A, y0, t: float) -> np.ndarray:
    """Return ``expm(A t) @ y0``, the flow of ``dy/dt = A y`` after time ``t``."""
    A = np.asarray(A, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or y0.shape[-1] != A.shape[0]:
        raise ValueError(f"incompatible shapes A{A.shape} and y0{y0.shape}")
    if not np.isfinite(t) or t < 0:
        raise ValueError("t must be finite and nonnegative")
    return y0 @ expm(A * t).T
