"""Random Fourier features for cheap emulation of the corrected system.

For the RBF kernel with bandwidth ``bw`` and signal variance ``s2``,

    z(y) = sqrt(2 s2 / D) cos(W y + b),   W_ij ~ N(0, 1/bw),   b_i ~ U[0, 2 pi)

satisfies ``E[<z(y1), z(y2)>] = k(y1, y2)``. Ridge regression on ``z`` is the
finite-dimensional counterpart of GP regression, and each query costs
``O(D d)`` instead of ``O(n)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dynamics import CORRECTED_MODEL, SystemSpec, TimeGrid, Trajectory, rk4_integrate
from .errors import IllConditionedError, UnsupportedKernelError
from .kernels import GAUSSIAN_RBF, KernelConfig
from .observation import ObservationSet


@dataclass(frozen=True)
class FeatureMap:
    W: np.ndarray
    b: np.ndarray
    scale: float
    seed: int
    kernel: KernelConfig

    @property
    def D(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def __call__(self, y) -> np.ndarray:
        return featurize(self, y)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.W[0], dtype="<f8").tobytes()).hexdigest()[:16]


def sample_features(kernel: KernelConfig, d: int, D: int, seed: int) -> FeatureMap:
    """Draw a feature map for the RBF kernel from ``default_rng(seed)``.

    ``W`` is drawn before ``b``, so a fixed seed always reproduces both.
    """
    if kernel.family != GAUSSIAN_RBF:
        raise UnsupportedKernelError(f"random Fourier features need a gaussian_rbf kernel, got {kernel.family}")
    if D < 1 or d < 1:
        raise ValueError("D and d must be positive")
    rng = np.random.default_rng(int(seed))
    W = rng.standard_normal((int(D), int(d))) / math.sqrt(kernel.bandwidth)
    b = rng.uniform(0.0, 2.0 * math.pi, int(D))
    W.setflags(write=False)
    b.setflags(write=False)
    return FeatureMap(W, b, math.sqrt(2.0 * kernel.signal_variance / D), int(seed), kernel)


def featurize(fmap: FeatureMap, y) -> np.ndarray:
    """``scale * cos(W y + b)``; ``y`` of shape ``(p,)`` gives ``(D,)``, ``(n, p)`` gives ``(n, D)``."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != fmap.input_dim:
        raise ValueError(f"input has dimension {y.shape[-1]}, feature map expects {fmap.input_dim}")
    return fmap.scale * np.cos(y @ fmap.W.T + fmap.b)


@dataclass(frozen=True)
class RffModel:
    """Linear model ``F_hat(y) = theta_hat.T z(y)`` on the unknown components."""

    features: FeatureMap
    theta_hat: np.ndarray
    ridge: np.ndarray
    state_dim: int
    input_dims: tuple
    output_dims: tuple

    def _inputs(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] == self.features.input_dim:
            return y
        if y.shape[-1] == self.state_dim:
            return y[..., list(self.input_dims)]
        raise ValueError(f"query dimension {y.shape[-1]} matches neither inputs nor state")

    def mean(self, queries) -> np.ndarray:
        return emulate_query(self, np.atleast_2d(queries))

    def correction_field(self):
        """Vectorized full-state field, zero outside ``output_dims``."""
        outputs = list(self.output_dims)

        def field(y):
            y = np.asarray(y, dtype=float)
            out = np.zeros_like(y)
            out[..., outputs] = emulate_query(self, y)
            return out

        return field

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.features.seed,
            "D": self.features.D,
            "kernel": self.features.kernel.to_dict(),
            "ridge": np.asarray(self.ridge).tolist(),
            "theta_hat": self.theta_hat.tolist(),
            "state_dim": self.state_dim,
            "input_dims": list(self.input_dims),
            "output_dims": list(self.output_dims),
            "w_checksum": self.features.checksum(),
        })

    @classmethod
    def from_json(cls, text: str) -> "RffModel":
        """Reload; ``W`` and ``b`` are regenerated from the seed and checked against the stored checksum."""
        d = json.loads(text)
        kernel = KernelConfig.from_dict(d["kernel"])
        fmap = sample_features(kernel, len(d["input_dims"]), int(d["D"]), int(d["seed"]))
        if fmap.checksum() != d["w_checksum"]:
            raise ValueError("regenerated feature weights do not match the stored checksum")
        theta = np.asarray(d["theta_hat"], dtype=float).reshape(fmap.D, -1)
        return cls(fmap, theta, np.asarray(d["ridge"], dtype=float), int(d["state_dim"]),
                   tuple(d["input_dims"]), tuple(d["output_dims"]))


def _spd_solve(M, B):
    try:
        return cho_solve(cho_factor(M, lower=True, check_finite=False), B, check_finite=False)
    except LinAlgError as exc:
        raise IllConditionedError(f"ridge system is not positive definite: {exc}") from exc


def fit_ridge(observations: ObservationSet, fmap: FeatureMap, ridge=None,
              input_dims: Optional[Sequence[int]] = None, output_dims: Optional[Sequence[int]] = None) -> RffModel:
    """Ridge regression ``(Z^T Z + lam I) theta = Z^T f`` in feature space.

    ``ridge`` defaults to the per-component noise variances of
    ``observations.noise``. The ``D x D`` primal system is solved when there
    are more samples than features, the ``n x n`` dual system otherwise.
    """
    d = observations.dim
    input_dims = tuple(range(d)) if input_dims is None else tuple(input_dims)
    output_dims = tuple(range(d)) if output_dims is None else tuple(output_dims)
    m = len(output_dims)
    if ridge is None:
        if observations.noise is None:
            raise ValueError("no ridge given and the observation set carries no noise model")
        lam = np.diag(observations.noise.covariance).astype(float)
    else:
        lam = np.broadcast_to(np.asarray(ridge, dtype=float), (m,)).copy()
    if lam.shape != (m,) or np.any(lam <= 0):
        raise ValueError("ridge must be positive, one value or one per output component")
    Z = featurize(fmap, observations.states[:, list(input_dims)])
    F = observations.values[:, list(output_dims)]
    n, D = Z.shape
    theta = np.empty((D, m))
    for lam_i in np.unique(lam):
        cols = np.flatnonzero(lam == lam_i)
        if n > D:
            theta[:, cols] = _spd_solve(Z.T @ Z + lam_i * np.eye(D), Z.T @ F[:, cols])
        else:
            theta[:, cols] = Z.T @ _spd_solve(Z @ Z.T + lam_i * np.eye(n), F[:, cols])
    return RffModel(fmap, theta, lam, d, input_dims, output_dims)


def emulate_query(model: RffModel, y) -> np.ndarray:
    """``theta_hat.T z(y)``: shape ``(m,)`` for one state, ``(..., m)`` for a batch."""
    return featurize(model.features, model._inputs(y)) @ model.theta_hat


def emulate_trajectory(system: SystemSpec, model, y0, grid: TimeGrid, substeps: int = 100):
    """Integrate ``dy/dt = G(y) + F_hat(y)`` with RK4.

    ``model`` is anything with a ``correction_field()`` method, so an exact
    :class:`~misdyn.gp.GpPosterior` works as well as an :class:`RffModel`.
    ``y0`` may be a single state or a batch; a batch returns a list.
    """
    G = system.known_term
    Fhat = model.correction_field()
    f = lambda y: G(y) + Fhat(y)  # noqa: E731
    y0 = np.asarray(y0, dtype=float)
    times = grid.points if grid.points[0] == 0 else np.concatenate([[0.0], grid.points])
    states = rk4_integrate(f, y0, times, substeps)
    if grid.points[0] != 0:
        states = states[1:]
    if y0.ndim == 1:
        return Trajectory(y0.copy(), grid, states, CORRECTED_MODEL)
    return [Trajectory(y0[k].copy(), grid, states[:, k, :].copy(), CORRECTED_MODEL) for k in range(y0.shape[0])]
