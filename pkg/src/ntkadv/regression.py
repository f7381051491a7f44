"""Spectral eigendecomposition and the closed-form kernel-regression predictor.

The converged predictor is f_inf(x) = Theta(x, X)^T Theta(X, X)^{-1} Y; at
finite training time t under gradient flow with learning rate `lr`,

    f_t(x) = Theta(x, X)^T V diag((1 - exp(-lr * lam_i * t)) / lam_i) V^T Y,

with the lam -> 0 limit lr * t keeping the map continuous. One factorization
serves every t and every label column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ntk
from .errors import NumericalError, ParameterError

# Eigenvalues below EIG_FLOOR_REL * lambda_max indicate a system the jitter
# failed to regularize.
EIG_FLOOR_REL = 1e-12

INF_TIME = math.inf


@dataclass(frozen=True)
class EigenSystem:
    """Descending eigenvalues and orthonormal eigenvectors of a symmetric matrix.

    Sign convention: in each eigenvector the entry of largest absolute value is
    positive (ties broken by lowest index), making the decomposition
    deterministic for simple spectra.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        vec = np.asarray(self.eigenvectors, dtype=np.float64)
        if lam.ndim != 1 or vec.shape != (lam.size, lam.size):
            raise ParameterError("eigen system shapes inconsistent")
        if np.any(np.diff(lam) > 0):
            raise ParameterError("eigenvalues must be sorted descending")
        for a in (lam, vec):
            a.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", vec)

    @property
    def n(self) -> int:
        return self.eigenvalues.size


def eigendecompose(g: ntk.GramMatrix) -> EigenSystem:
    """Full symmetric eigendecomposition with the fixed sign convention."""
    values = g.values
    if not np.all(np.isfinite(values)):
        raise ParameterError("Gram matrix contains non-finite entries")
    try:
        lam, vec = np.linalg.eigh(values)
    except np.linalg.LinAlgError as exc:
        diag = np.diag(values)
        raise NumericalError(
            "eigensolver failed to converge "
            f"(n={g.n}, diag range [{diag.min():.3e}, {diag.max():.3e}])"
        ) from exc
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vec = vec[:, order].copy()
    for j in range(vec.shape[1]):
        pivot = np.argmax(np.abs(vec[:, j]))
        if vec[pivot, j] < 0:
            vec[:, j] = -vec[:, j]
    return EigenSystem(lam, vec)


class Predictor:
    """Kernel-regression predictor bound to a training set and a factorization.

    `labels` is the label matrix Y: shape (n,) for signed-binary tasks, (n, k)
    one-hot otherwise. `retained` restricts the spectrum to a subset of
    eigen-indices (pseudo-inverse on that subspace); None keeps all of them.
    Instances are immutable after construction and safe to share; the spectral
    coefficient vector for each requested time is cached.
    """

    def __init__(self, kernel: ntk.KernelModel, train_inputs: np.ndarray,
                 labels: np.ndarray, gram_eigen: EigenSystem,
                 learning_rate: float = 1.0,
                 retained: np.ndarray | None = None,
                 gram: ntk.GramMatrix | None = None):
        if learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        train_inputs = np.asarray(train_inputs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if labels.shape[0] != train_inputs.shape[0]:
            raise ParameterError("labels misaligned with training inputs")
        if gram_eigen.n != train_inputs.shape[0]:
            raise ParameterError("eigen system misaligned with training inputs")
        self.kernel = kernel
        self.train_inputs = train_inputs
        self.labels = labels
        self.gram_eigen = gram_eigen
        self.gram = gram
        self.learning_rate = float(learning_rate)
        if retained is not None:
            retained = np.unique(np.asarray(retained, dtype=np.int64))
            if retained.size == 0 or retained.min() < 0 or \
                    retained.max() >= gram_eigen.n:
                raise ParameterError("retained indices out of range")
        self.retained = retained
        self._coeff_cache: dict[float, np.ndarray] = {}

    # -- construction helpers -------------------------------------------------

    @classmethod
    def fit(cls, kernel: ntk.KernelModel, train_inputs: np.ndarray,
            labels: np.ndarray, learning_rate: float = 1.0,
            jitter_scale: float = ntk.DEFAULT_JITTER_SCALE) -> "Predictor":
        g = ntk.gram(kernel, train_inputs, jitter_scale)
        return cls(kernel, train_inputs, labels, eigendecompose(g),
                   learning_rate, gram=g)

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def num_outputs(self) -> int:
        return 1 if self.labels.ndim == 1 else self.labels.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.labels.ndim == 1

    def with_labels(self, labels: np.ndarray) -> "Predictor":
        return Predictor(self.kernel, self.train_inputs, labels,
                         self.gram_eigen, self.learning_rate, self.retained,
                         self.gram)

    def with_retained(self, retained: np.ndarray) -> "Predictor":
        return Predictor(self.kernel, self.train_inputs, self.labels,
                         self.gram_eigen, self.learning_rate, retained,
                         self.gram)

    # -- spectral coefficients -------------------------------------------------

    def _time_filter(self, lam: np.ndarray, t: float) -> np.ndarray:
        """h_t(lam): (1 - exp(-lr lam t)) / lam, continuous at lam -> 0."""
        lam_max = self.gram_eigen.eigenvalues[0]
        if lam_max <= 0:
            raise NumericalError("Gram spectrum nonpositive; cannot invert")
        if t == INF_TIME:
            floor = EIG_FLOOR_REL * lam_max
            if np.any(lam < floor):
                raise NumericalError(
                    f"eigenvalues below {floor:.3e} despite jitter; "
                    "increase jitter_scale")
            return 1.0 / lam
        arg = self.learning_rate * lam * t
        small = np.abs(arg) < 1e-12
        h = np.empty_like(lam)
        h[small] = self.learning_rate * t
        h[~small] = -np.expm1(-arg[~small]) / lam[~small]
        return h

    def coefficients(self, t: float) -> np.ndarray:
        """Theta^{-1}(I - exp(-lr Theta t)) Y, shape matching the labels."""
        key = float(t)
        cached = self._coeff_cache.get(key)
        if cached is not None:
            return cached
        lam = self.gram_eigen.eigenvalues
        vec = self.gram_eigen.eigenvectors
        if self.retained is not None:
            lam = lam[self.retained]
            vec = vec[:, self.retained]
        h = self._time_filter(lam, t)
        coeff = vec @ _scale_rows(vec.T @ self.labels, h)
        self._coeff_cache[key] = coeff
        return coeff


def _scale_rows(a: np.ndarray, s: np.ndarray) -> np.ndarray:
    return a * (s[:, None] if a.ndim > 1 else s)


def predict_at_time(p: Predictor, x: np.ndarray, t: float) -> np.ndarray | float:
    """f_t(x); scalar for binary labels, length-k vector otherwise."""
    if t != INF_TIME and t < 0:
        raise ParameterError("time must be nonnegative")
    kx = ntk.kernel_cross(p.kernel, x, p.train_inputs)
    out = kx @ p.coefficients(t)
    return float(out) if p.is_binary else out


def predict_infinite_time(p: Predictor, x: np.ndarray) -> np.ndarray | float:
    """Converged prediction f_inf(x) = Theta(x, X)^T Theta^{-1} Y."""
    return predict_at_time(p, x, INF_TIME)


def predict_batch(p: Predictor, X: np.ndarray, t: float = INF_TIME) -> np.ndarray:
    """f_t over the rows of X: (n_eval,) binary or (n_eval, k)."""
    if t != INF_TIME and t < 0:
        raise ParameterError("time must be nonnegative")
    X = np.asarray(X, dtype=np.float64)
    cross = np.vstack([ntk.kernel_cross(p.kernel, row, p.train_inputs)
                       for row in X])
    return cross @ p.coefficients(t)


def prediction_input_gradient(p: Predictor, x: np.ndarray,
                              t: float = INF_TIME) -> np.ndarray:
    """Input gradient of f_t at x: (d,) for binary labels, (d, k) otherwise."""
    if t != INF_TIME and t < 0:
        raise ParameterError("time must be nonnegative")
    jac = ntk.cross_gradient(p.kernel, x, p.train_inputs)  # (n, d)
    return jac.T @ p.coefficients(t)


def solve_gram_direct(g: ntk.GramMatrix, y: np.ndarray) -> np.ndarray:
    """Theta^{-1} Y by direct linear solve; independent of the spectral path."""
    try:
        return np.linalg.solve(g.values, y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("direct Gram solve failed (singular matrix); "
                             f"n={g.n}") from exc
