"""Scalar covariance functions shared by every output component."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

GAUSSIAN_RBF = "gaussian_rbf"
POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family and hyperparameters.

    The RBF kernel is ``s2 * exp(-|y - y'|^2 / (2 * bandwidth))`` and the
    polynomial kernel ``s2 * (1 + <y, y'>)^order``, where ``s2`` is
    ``signal_variance``.
    """

    family: str = GAUSSIAN_RBF
    bandwidth: Optional[float] = 1.0
    order: Optional[int] = None
    signal_variance: float = 1.0

    def __post_init__(self):
        if self.family == GAUSSIAN_RBF:
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError("gaussian_rbf needs a positive bandwidth")
            if self.order is not None:
                raise ValueError("order is only valid for the polynomial kernel")
        elif self.family == POLYNOMIAL:
            if self.order is None or int(self.order) != self.order or self.order < 1:
                raise ValueError("polynomial kernel needs a positive integer order")
            if self.bandwidth is not None:
                raise ValueError("bandwidth is only valid for the gaussian_rbf kernel")
        else:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")

    @classmethod
    def rbf(cls, bandwidth: float = 1.0, signal_variance: float = 1.0) -> "KernelConfig":
        return cls(GAUSSIAN_RBF, float(bandwidth), None, float(signal_variance))

    @classmethod
    def polynomial(cls, order: int, signal_variance: float = 1.0) -> "KernelConfig":
        return cls(POLYNOMIAL, None, int(order), float(signal_variance))

    def to_dict(self) -> dict:
        d = {"family": self.family, "signal_variance": self.signal_variance}
        if self.family == GAUSSIAN_RBF:
            d["bandwidth"] = self.bandwidth
        else:
            d["order"] = self.order
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        allowed = {"family", "signal_variance", "bandwidth", "order"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown kernel keys: {sorted(unknown)}")
        family = d.get("family", GAUSSIAN_RBF)
        if family == GAUSSIAN_RBF:
            return cls.rbf(d.get("bandwidth", 1.0), d.get("signal_variance", 1.0))
        return cls(family, d.get("bandwidth"), d.get("order"), d.get("signal_variance", 1.0))

    @property
    def prior_variance_bound(self) -> float:
        """``k(y, y)`` for the stationary RBF; for the polynomial kernel it depends on ``y``."""
        return self.signal_variance


def kernel_eval(config: KernelConfig, y1, y2) -> float:
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != y2.shape:
        raise ValueError(f"dimension mismatch: {y1.shape} vs {y2.shape}")
    if config.family == GAUSSIAN_RBF:
        diff = y1 - y2
        return config.signal_variance * math.exp(-float(diff @ diff) / (2.0 * config.bandwidth))
    return config.signal_variance * (1.0 + float(y1 @ y2)) ** config.order


def kernel_matrix(config: KernelConfig, S1, S2=None) -> np.ndarray:
    """Kernel matrix with entry ``(i, j) = k(S1[i], S2[j])``.

    ``S2=None`` means ``S2 is S1``; the result is then symmetrized exactly.
    """
    A = np.atleast_2d(np.asarray(S1, dtype=float))
    B = A if S2 is None else np.atleast_2d(np.asarray(S2, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("kernel_matrix needs non-empty point sets")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if config.family == GAUSSIAN_RBF:
        K = config.signal_variance * np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * config.bandwidth))
    else:
        K = config.signal_variance * (1.0 + A @ B.T) ** config.order
    if S2 is None:
        K = 0.5 * (K + K.T)
    return K


def kernel_diag(config: KernelConfig, S) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if config.family == GAUSSIAN_RBF:
        return np.full(S.shape[0], config.signal_variance)
    return config.signal_variance * (1.0 + np.einsum("ij,ij->i", S, S)) ** config.order


def rbf_lipschitz(config: KernelConfig) -> float:
    """Lipschitz constant of the RBF profile ``r -> k(r)``.

    ``|dk/dr| = s2 * r / bw * exp(-r^2 / (2 bw))`` peaks at ``r = sqrt(bw)``
    with value ``s2 / sqrt(bw * e)``.
    """
    if config.family != GAUSSIAN_RBF:
        raise ValueError("rbf_lipschitz needs a gaussian_rbf kernel")
    return config.signal_variance / math.sqrt(config.bandwidth * math.e)
