"""Gaussian-process posterior for the correction term.

Every unknown output component is an independent zero-mean GP sharing one
scalar kernel. With diagonal measurement noise the components decouple, so
fitting costs one ``n x n`` Cholesky per distinct noise variance instead of
a ``dn x dn`` factorization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._linalg import chol_solve, forward, jittered_cholesky
from .kernels import KernelConfig, kernel_diag, kernel_matrix
from .observation import NoiseModel, ObservationSet


@dataclass(frozen=True)
class GpPosterior:
    """A fitted GP. Immutable; safe to query from several threads.

    Attributes
    ----------
    training_states : ndarray, shape (n, p)
        Training inputs, already restricted to ``input_dims``.
    chol : tuple of ndarray
        One lower Cholesky factor of ``K + (s_i + jitter) I`` per output
        component; components with equal noise share the same array.
    weights : ndarray, shape (n, m)
        ``(K + s_i I)^{-1} f_i`` for each of the ``m`` output components.
    """

    training_states: np.ndarray
    training_values: np.ndarray
    kernel: KernelConfig
    noise: NoiseModel
    chol: tuple
    weights: np.ndarray
    jitter_used: float
    state_dim: int
    input_dims: tuple
    output_dims: tuple

    @property
    def n_outputs(self) -> int:
        return len(self.output_dims)

    def _inputs(self, queries) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        if Q.shape[1] == self.training_states.shape[1]:
            return Q
        if Q.shape[1] == self.state_dim:
            return Q[:, list(self.input_dims)]
        raise ValueError(f"queries have dimension {Q.shape[1]}; expected {self.training_states.shape[1]} "
                         f"or {self.state_dim}")

    def mean(self, queries) -> np.ndarray:
        return posterior_mean(self, queries)

    def correction_field(self):
        """Vectorized full-state field that is the posterior mean on ``output_dims`` and zero elsewhere."""
        outputs = list(self.output_dims)
        inputs = list(self.input_dims)
        X = self.training_states
        W = self.weights
        kern = self.kernel

        def field(y):
            y = np.asarray(y, dtype=float)
            flat = y.reshape(-1, y.shape[-1])
            out = np.zeros_like(flat)
            out[:, outputs] = kernel_matrix(kern, flat[:, inputs], X) @ W
            return out.reshape(y.shape)

        return field

    def to_json(self) -> str:
        return json.dumps({
            "kernel": self.kernel.to_dict(),
            "noise": self.noise.to_dict(),
            "training_states": self.training_states.tolist(),
            "training_values": self.training_values.tolist(),
            "weights": self.weights.tolist(),
            "jitter_used": self.jitter_used,
            "state_dim": self.state_dim,
            "input_dims": list(self.input_dims),
            "output_dims": list(self.output_dims),
        })

    @classmethod
    def from_json(cls, text: str) -> "GpPosterior":
        """Reload a fit; the Cholesky factors are recomputed from the stored data."""
        d = json.loads(text)
        kernel = KernelConfig.from_dict(d["kernel"])
        noise = NoiseModel.from_dict(d["noise"])
        X = np.asarray(d["training_states"], dtype=float)
        Y = np.asarray(d["training_values"], dtype=float).reshape(X.shape[0], -1)
        return _fit_arrays(X, Y, kernel, noise, int(d["state_dim"]), tuple(d["input_dims"]),
                           tuple(d["output_dims"]))


def _fit_arrays(X, Y, kernel, noise, state_dim, input_dims, output_dims) -> GpPosterior:
    n, m = Y.shape
    if noise.dim != m:
        raise ValueError(f"noise covariance is {noise.dim}x{noise.dim} but there are {m} output components")
    if not noise.is_diagonal:
        raise ValueError("GP fitting supports diagonal noise covariance only")
    K = kernel_matrix(kernel, X)
    scale = float(np.max(kernel_diag(kernel, X)))
    variances = np.diag(noise.covariance)
    factors = {}
    chols = []
    W = np.empty((n, m))
    jitter_used = 0.0
    for i in range(m):
        s = float(variances[i])
        if s not in factors:
            L, jitter = jittered_cholesky(K + s * np.eye(n), scale)
            factors[s] = L
            jitter_used = max(jitter_used, jitter)
        L = factors[s]
        chols.append(L)
        W[:, i] = chol_solve(L, Y[:, i])
    return GpPosterior(X, Y, kernel, noise, tuple(chols), W, jitter_used, state_dim, tuple(input_dims),
                       tuple(output_dims))


def fit(observations: ObservationSet, kernel: KernelConfig, noise: Optional[NoiseModel] = None,
        input_dims: Optional[Sequence[int]] = None, output_dims: Optional[Sequence[int]] = None) -> GpPosterior:
    """Condition the GP prior on noisy correction readings.

    Parameters
    ----------
    observations : ObservationSet
    kernel : KernelConfig
    noise : NoiseModel, optional
        Defaults to ``observations.noise``. Must be diagonal, sized to the
        number of output components.
    input_dims, output_dims : sequence of int, optional
        State coordinates fed to the kernel, and the components of the
        readings that are modelled. Both default to all coordinates.
    """
    if len(observations) == 0:
        raise ValueError("cannot fit a GP to an empty observation set")
    if noise is None:
        noise = observations.noise
    if noise is None:
        raise ValueError("no noise model given and the observation set carries none")
    d = observations.dim
    input_dims = tuple(range(d)) if input_dims is None else tuple(input_dims)
    output_dims = tuple(range(d)) if output_dims is None else tuple(output_dims)
    X = observations.states[:, list(input_dims)]
    Y = observations.values[:, list(output_dims)]
    return _fit_arrays(X, Y, kernel, noise, d, input_dims, output_dims)


def posterior_mean(gp: GpPosterior, queries) -> np.ndarray:
    """``k(Q, X) (K + S)^{-1} f`` for every output component; shape ``(q, m)``."""
    Q = gp._inputs(queries)
    return kernel_matrix(gp.kernel, Q, gp.training_states) @ gp.weights


def posterior_cov(gp: GpPosterior, queries) -> np.ndarray:
    """Posterior covariance per output component; shape ``(m, q, q)``."""
    Q = gp._inputs(queries)
    Kqq = kernel_matrix(gp.kernel, Q)
    Kxq = kernel_matrix(gp.kernel, gp.training_states, Q)
    out = np.empty((gp.n_outputs, Q.shape[0], Q.shape[0]))
    done = {}
    for i, L in enumerate(gp.chol):
        key = id(L)
        if key not in done:
            V = forward(L, Kxq)
            C = Kqq - V.T @ V
            done[key] = 0.5 * (C + C.T)
        out[i] = done[key]
    return out


def posterior_var(gp: GpPosterior, queries) -> np.ndarray:
    """Diagonal of :func:`posterior_cov` without forming the full matrices; shape ``(q, m)``."""
    Q = gp._inputs(queries)
    prior = kernel_diag(gp.kernel, Q)
    Kxq = kernel_matrix(gp.kernel, gp.training_states, Q)
    out = np.empty((Q.shape[0], gp.n_outputs))
    for i, L in enumerate(gp.chol):
        V = forward(L, Kxq)
        out[:, i] = prior - np.einsum("ij,ij->j", V, V)
    return out
