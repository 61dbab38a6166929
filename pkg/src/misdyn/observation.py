"""Noisy readings of the correction term along observed trajectories.

Two ways of producing training data are supported:

* ``sample_corrections`` evaluates the ground-truth correction at each
  recorded state and adds seeded Gaussian noise (simulation mode).
* ``estimate_derivatives`` + ``corrections_from_derivatives`` difference the
  sampled trajectory and subtract the known term, so the only error is the
  discretization error of the stencil.

Random streams: experiment ``k`` under master seed ``s`` draws from
``numpy.random.default_rng(SeedSequence(s, spawn_key=(k,)))`` (PCG64), which
is the stream ``SeedSequence(s).spawn(...)[k]`` would give. Results therefore
do not depend on the order in which experiments are processed.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import TRUE_MODEL, SystemSpec, Trajectory
from .errors import ModeError


def experiment_rng(seed: int, k: int) -> np.random.Generator:
    """Independent generator for experiment ``k`` under a master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(k),)))


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian measurement noise ``N(0, covariance)`` plus the seed that drives it."""

    covariance: np.ndarray
    seed: int = 0

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("noise covariance must be square")
        if np.max(np.abs(C - C.T)) > 1e-12:
            raise ValueError("noise covariance must be symmetric")
        if np.linalg.eigvalsh(C).min() <= 0:
            raise ValueError("noise covariance must be positive definite")
        C.setflags(write=False)
        object.__setattr__(self, "covariance", C)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def isotropic(cls, variance: float, dim: int, seed: int = 0) -> "NoiseModel":
        return cls(variance * np.eye(dim), seed)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    @property
    def is_diagonal(self) -> bool:
        C = self.covariance
        return bool(np.all(C == np.diag(np.diag(C))))

    @property
    def isotropic_variance(self) -> Optional[float]:
        """The common variance if the covariance is ``s * I``, else None."""
        diag = np.diag(self.covariance)
        if self.is_diagonal and np.all(diag == diag[0]):
            return float(diag[0])
        return None

    @property
    def sigma_min(self) -> float:
        return float(np.linalg.eigvalsh(self.covariance).min())

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(self.covariance, seed)

    def to_dict(self) -> dict:
        return {"covariance": self.covariance.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(np.asarray(d["covariance"], dtype=float), int(d.get("seed", 0)))


@dataclass(frozen=True)
class CorrectionSample:
    state: np.ndarray
    value: np.ndarray
    source_experiment: int
    source_time_index: int


@dataclass(frozen=True)
class ObservationSet:
    """Training data for the correction term, stored column-wise.

    Attributes
    ----------
    states : ndarray, shape (n, d)
    values : ndarray, shape (n, d)
        Noisy correction readings; components outside the system's
        ``correction_outputs`` are exact (typically zero).
    experiment, time_index : ndarray of int, shape (n,)
    noise : NoiseModel or None
        None when the values carry only discretization error.
    """

    states: np.ndarray
    values: np.ndarray
    experiment: np.ndarray
    time_index: np.ndarray
    noise: Optional[NoiseModel] = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if states.shape != values.shape:
            raise ValueError(f"states {states.shape} and values {values.shape} differ in shape")
        exp = np.asarray(self.experiment, dtype=int).ravel()
        ti = np.asarray(self.time_index, dtype=int).ravel()
        if exp.size != states.shape[0] or ti.size != states.shape[0]:
            raise ValueError("index columns must have one entry per sample")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "experiment", exp)
        object.__setattr__(self, "time_index", ti)

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def samples(self) -> list:
        return [CorrectionSample(self.states[j], self.values[j], int(self.experiment[j]), int(self.time_index[j]))
                for j in range(len(self))]

    @classmethod
    def concat(cls, sets: Sequence["ObservationSet"], noise: Optional[NoiseModel] = None) -> "ObservationSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        if noise is None:
            noise = sets[0].noise
        return cls(np.concatenate([s.states for s in sets]), np.concatenate([s.values for s in sets]),
                   np.concatenate([s.experiment for s in sets]), np.concatenate([s.time_index for s in sets]),
                   noise)

    # -- serialization ----------------------------------------------------

    def to_csv(self, path=None) -> str:
        d = self.dim
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "i"] + [f"y_{j + 1}" for j in range(d)] + [f"f_{j + 1}" for j in range(d)])
        for r in range(len(self)):
            w.writerow([int(self.experiment[r]), int(self.time_index[r])]
                       + [repr(float(v)) for v in self.states[r]] + [repr(float(v)) for v in self.values[r]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, noise: Optional[NoiseModel] = None) -> "ObservationSet":
        """Parse CSV text or a path written by :meth:`to_csv`."""
        text = source
        if "\n" not in str(source):
            with open(source) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        d = (len(header) - 2) // 2
        if header[:2] != ["k", "i"] or len(header) != 2 + 2 * d:
            raise ValueError(f"unexpected CSV header {header}")
        data = np.array([[float(v) for v in row] for row in body]).reshape(-1, 2 + 2 * d)
        return cls(data[:, 2:2 + d], data[:, 2 + d:], data[:, 0].astype(int), data[:, 1].astype(int), noise)

    def to_json(self) -> str:
        return json.dumps({
            "dim": self.dim,
            "noise": None if self.noise is None else self.noise.to_dict(),
            "k": self.experiment.tolist(),
            "i": self.time_index.tolist(),
            "states": self.states.tolist(),
            "values": self.values.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ObservationSet":
        d = json.loads(text)
        noise = None if d.get("noise") is None else NoiseModel.from_dict(d["noise"])
        dim = int(d["dim"])
        states = np.asarray(d["states"], dtype=float).reshape(-1, dim)
        values = np.asarray(d["values"], dtype=float).reshape(-1, dim)
        return cls(states, values, d["k"], d["i"], noise)


def sample_corrections(system: SystemSpec, trajectories: Sequence[Trajectory], noise: NoiseModel,
                       experiment_ids: Optional[Sequence[int]] = None) -> ObservationSet:
    """Noisy correction readings ``F(y) + eps`` at every recorded state.

    Noise is added to the system's unknown components (``correction_outputs``)
    and drawn from the stream of each trajectory's experiment index.
    """
    if system.true_correction is None:
        raise ModeError("sample_corrections needs a system with a true_correction (simulation mode)")
    outputs = list(system.output_dims)
    if noise.dim != len(outputs):
        raise ValueError(f"noise is {noise.dim}-dimensional but the correction has {len(outputs)} unknown components")
    if experiment_ids is None:
        experiment_ids = range(len(trajectories))
    chol = np.linalg.cholesky(noise.covariance)
    states, values, exps, tis = [], [], [], []
    for k, tr in zip(experiment_ids, trajectories):
        if tr.model_tag != TRUE_MODEL:
            raise ModeError(f"trajectory {k} is tagged {tr.model_tag!r}; sampling needs true-model trajectories")
        T = tr.states.shape[0]
        vals = np.array(system.true_correction(tr.states), dtype=float)
        eps = experiment_rng(noise.seed, k).standard_normal((T, len(outputs))) @ chol.T
        vals[:, outputs] += eps
        states.append(tr.states)
        values.append(vals)
        exps.append(np.full(T, k))
        tis.append(np.arange(T))
    return ObservationSet(np.concatenate(states), np.concatenate(values), np.concatenate(exps),
                          np.concatenate(tis), noise)


def estimate_derivatives(trajectory: Trajectory) -> np.ndarray:
    """Second-order finite-difference estimate of ``dy/dt`` at each grid point.

    Interior points use the three-point central stencil (for non-uniform
    spacing, the derivative of the interpolating parabola); the endpoints use
    the three-point one-sided stencil. Exact for quadratic signals.

    Returns
    -------
    ndarray, shape (T, d)
    """
    t = trajectory.grid.points
    y = np.asarray(trajectory.states, dtype=float)
    T = t.size
    if T < 3:
        raise ValueError("estimate_derivatives needs at least 3 grid points")
    dy = np.empty_like(y)
    h1 = (t[1:-1] - t[:-2])[:, None]
    h2 = (t[2:] - t[1:-1])[:, None]
    dy[1:-1] = (-h2 / (h1 * (h1 + h2)) * y[:-2] + (h2 - h1) / (h1 * h2) * y[1:-1]
                + h1 / (h2 * (h1 + h2)) * y[2:])
    a, b = t[1] - t[0], t[2] - t[1]
    dy[0] = -(2 * a + b) / (a * (a + b)) * y[0] + (a + b) / (a * b) * y[1] - a / (b * (a + b)) * y[2]
    a, b = t[-2] - t[-3], t[-1] - t[-2]
    dy[-1] = b / (a * (a + b)) * y[-3] - (a + b) / (a * b) * y[-2] + (a + 2 * b) / (b * (a + b)) * y[-1]
    return dy


def corrections_from_derivatives(system: SystemSpec, trajectory: Trajectory, derivatives,
                                 experiment: int = 0, noise: Optional[NoiseModel] = None) -> ObservationSet:
    """Correction readings ``dy/dt - G(y)`` from supplied derivative estimates."""
    derivatives = np.asarray(derivatives, dtype=float)
    if derivatives.shape != trajectory.states.shape:
        raise ValueError(f"derivatives {derivatives.shape} do not align with states {trajectory.states.shape}")
    values = derivatives - system.known_term(trajectory.states)
    T = trajectory.states.shape[0]
    return ObservationSet(trajectory.states, values, np.full(T, experiment), np.arange(T), noise)
