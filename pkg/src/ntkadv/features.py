"""Rank-one spectral features of the converged kernel predictor.

The Gram eigendecomposition Theta(X, X) = sum_i lam_i v_i v_i^T splits the
converged predictor into feature functions

    f_i(x) = lam_i^{-1} Theta(x, X)^T v_i v_i^T Y,

which sum back to f_inf. Each feature acts as a classifier in its own right;
its usefulness is clean hold-out accuracy and its robustness is hold-out
accuracy under the feature's own one-step or iterated attack. An example only
counts as robust if it is also correct unattacked (the zero perturbation lies
inside the ball, so worst-case accuracy can never exceed clean accuracy).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import attacks, ntk, regression
from .attacks import AttackConfig, DifferentiableClassifier, pgd_attack
from .datasets import Dataset
from .errors import NumericalError, ParameterError
from .regression import INF_TIME, Predictor

DENOMINATOR_FLOOR = 1e-12


@dataclass(frozen=True)
class FeatureFunction:
    """One spectral component; `index` is the 1-based eigenvalue rank."""

    index: int
    eigenvalue: float
    projection: np.ndarray  # v_i v_i^T Y, shape (n,) or (n, k)
    parent: Predictor

    def __post_init__(self):
        if not 1 <= self.index <= self.parent.n:
            raise ParameterError("feature index out of range")


@dataclass(frozen=True)
class FeatureScore:
    index: int
    eigenvalue: float
    usefulness: float
    robustness: float
    useful_flag: bool
    epsilon: float

    def __post_init__(self):
        if self.robustness > self.usefulness + 1e-12:
            raise ParameterError(
                "robustness cannot exceed usefulness (attacks include delta=0)")


def spectral_features(p: Predictor) -> list[FeatureFunction]:
    """All n features of a predictor, ordered by descending eigenvalue."""
    vecs = p.gram_eigen.eigenvectors
    lams = p.gram_eigen.eigenvalues
    out = []
    for i in range(p.n):
        v = vecs[:, i]
        proj = np.outer(v, v @ p.labels) if p.labels.ndim > 1 \
            else v * (v @ p.labels)
        out.append(FeatureFunction(i + 1, float(lams[i]), proj, p))
    return out


def _checked_eigenvalue(f: FeatureFunction) -> float:
    lam_max = f.parent.gram_eigen.eigenvalues[0]
    if f.eigenvalue < regression.EIG_FLOOR_REL * lam_max:
        raise NumericalError(
            f"feature {f.index}: eigenvalue {f.eigenvalue:.3e} below the "
            "invertibility floor")
    return f.eigenvalue


def feature_eval(f: FeatureFunction, x: np.ndarray) -> np.ndarray | float:
    """f_i(x); scalar for binary labels, length-k vector otherwise."""
    lam = _checked_eigenvalue(f)
    kx = ntk.kernel_cross(f.parent.kernel, x, f.parent.train_inputs)
    out = kx @ f.projection / lam
    return float(out) if f.projection.ndim == 1 else out


def feature_gradient_image(f: FeatureFunction, x: np.ndarray,
                           class_index: int | None = None) -> np.ndarray:
    """grad_x f_i(x) as a length-d vector; multiclass features need the output
    coordinate (by convention the true class of x)."""
    lam = _checked_eigenvalue(f)
    jac = ntk.cross_gradient(f.parent.kernel, x, f.parent.train_inputs)
    grad = jac.T @ f.projection / lam
    if f.projection.ndim == 1:
        return grad
    if class_index is None:
        raise ParameterError("multiclass feature gradients need class_index")
    return grad[:, class_index]


def feature_classifier(f: FeatureFunction) -> DifferentiableClassifier:
    num = 2 if f.projection.ndim == 1 else f.projection.shape[1]
    lam = _checked_eigenvalue(f)

    def logits(x):
        kx = ntk.kernel_cross(f.parent.kernel, x, f.parent.train_inputs)
        out = kx @ f.projection / lam
        return float(out) if f.projection.ndim == 1 else out

    def jacobian(x):
        jac = ntk.cross_gradient(f.parent.kernel, x, f.parent.train_inputs)
        return jac.T @ f.projection / lam

    return DifferentiableClassifier(logits, jacobian, num)


def gradient_decomposition_coeffs(pred: Predictor, x: np.ndarray,
                                  y: int) -> np.ndarray:
    """alpha_i = (sigma(f_inf(x)) - yhat) / (sigma(f_i(x)) - yhat), the exact
    weights decomposing the cross-entropy input gradient over the features."""
    if not pred.is_binary:
        raise ParameterError("gradient decomposition is for binary predictors")
    yhat = (y + 1) / 2
    kx = ntk.kernel_cross(pred.kernel, x, pred.train_inputs)
    vec = pred.gram_eigen.eigenvectors
    lam = pred.gram_eigen.eigenvalues
    feature_vals = (kx @ vec) * (vec.T @ pred.labels) / lam
    f_inf = float(feature_vals.sum())
    denom = attacks.sigmoid(feature_vals) - yhat
    tiny = np.flatnonzero(np.abs(denom) < DENOMINATOR_FLOOR)
    if tiny.size:
        raise NumericalError(
            f"degenerate sigmoid residual at feature indices "
            f"{(tiny + 1).tolist()}")
    return (attacks.sigmoid(f_inf) - yhat) / denom


def score_features(pred: Predictor, val: Dataset, epsilon: float,
                   attack_steps: int = 1, step_size: float | None = None,
                   clamp_box: tuple[float, float] | None = None,
                   features: list[FeatureFunction] | None = None
                   ) -> list[FeatureScore]:
    """Usefulness/robustness triple per feature on a hold-out set.

    attack_steps == 1 runs the one-step attack on each feature; larger values
    run PGD with the given step size. epsilon == 0 makes robustness equal
    usefulness by construction.
    """
    if val.n == 0:
        raise ParameterError("validation set must be nonempty")
    if epsilon < 0:
        raise ParameterError("epsilon must be nonnegative")
    if features is None:
        features = spectral_features(pred)
    majority = np.bincount(val.labels, minlength=val.num_classes).max() / val.n
    cfg = AttackConfig(epsilon, attack_steps,
                       step_size if attack_steps > 1 else None, clamp_box)
    scores = []
    for f in features:
        clf = feature_classifier(f)
        clean_ok = np.zeros(val.n, dtype=bool)
        robust_ok = np.zeros(val.n, dtype=bool)
        for j, (x, label) in enumerate(zip(val.inputs, val.labels)):
            clean_ok[j] = clf.predict_class(x) == label
            if clean_ok[j]:
                delta = pgd_attack(clf, x, int(label), cfg).delta
                robust_ok[j] = clf.predict_class(x + delta) == label
        usefulness = float(clean_ok.mean())
        scores.append(FeatureScore(f.index, f.eigenvalue, usefulness,
                                   float(robust_ok.mean()),
                                   usefulness > majority, epsilon))
    return scores


def rank_by_robustness(scores: list[FeatureScore]) -> list[int]:
    """1-based feature indices sorted by robustness descending; ties keep the
    larger-eigenvalue (lower index) feature first."""
    order = sorted(scores, key=lambda s: (-s.robustness, s.index))
    return [s.index for s in order]


def filtered_predictor(pred: Predictor, ranking: list[int], r: int) -> Predictor:
    """Keep the r most robust features with their original eigenvalues.

    The filtered Gram sum_{i in top-r} lam_i v_i v_i^T is singular by
    construction; its inverse is the spectral pseudo-inverse on the retained
    subspace, which makes r = n reproduce the full predictor exactly.
    """
    if not 1 <= r <= pred.n:
        raise ParameterError(f"r must lie in [1, {pred.n}], got {r}")
    if len(ranking) < r:
        raise ParameterError("ranking shorter than requested r")
    retained = np.asarray(ranking[:r], dtype=np.int64) - 1
    return pred.with_retained(retained)


def save_feature_scores(scores: list[FeatureScore], path) -> None:
    with open(path, "w") as f:
        f.write("index,eigenvalue,usefulness,robustness,useful_flag\n")
        for s in scores:
            f.write(f"{s.index},{s.eigenvalue!r},{s.usefulness!r},"
                    f"{s.robustness!r},{int(s.useful_flag)}\n")


def save_gradient_image(vec: np.ndarray, csv_path, meta_path,
                        image_shape: tuple[int, int] | None = None) -> None:
    """Write a gradient image as a CSV grid plus a metadata JSON."""
    vec = np.asarray(vec, dtype=np.float64)
    grid = vec.reshape(image_shape) if image_shape is not None else vec[None, :]
    with open(csv_path, "w") as f:
        for row in grid:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {"length": int(vec.size)}
    if image_shape is not None:
        meta["height"], meta["width"] = int(image_shape[0]), int(image_shape[1])
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
