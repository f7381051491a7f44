"""L-inf adversarial perturbations against kernel predictors and finite nets.

One-step attacks move epsilon along the sign of the input loss gradient;
iterated attacks project back onto the epsilon-ball (and optional coordinate
box) after every step. For kernel predictors the loss is sigmoid/softmax
cross-entropy on the regression outputs treated as logits, and the binary
one-step attack collapses to

    x_adv = x - y * eps * sign(grad_x f_t(x)).

The Taylor family works directly on the converged predictor's linearization
f(x + eta) ~ f(x) + eta^T z with z = A^T Theta^{-1} Y, computed here by a
direct linear solve (an independent route from the spectral predictor).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import ntk, regression
from .datasets import Dataset
from .errors import ParameterError
from .regression import INF_TIME, Predictor

BUDGET_SLACK = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    """epsilon: L-inf budget; steps/step_size drive PGD; clamp_box bounds inputs."""

    epsilon: float
    steps: int = 1
    step_size: float | None = None
    clamp_box: tuple[float, float] | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ParameterError("epsilon must be nonnegative")
        if self.steps < 1:
            raise ParameterError("steps must be at least 1")
        if self.steps > 1:
            if self.step_size is None or self.step_size <= 0:
                raise ParameterError("multi-step attacks need step_size > 0")
            if self.step_size > self.epsilon:
                warnings.warn("step_size exceeds epsilon; steps will saturate "
                              "the budget immediately", stacklevel=2)
        if self.clamp_box is not None and self.clamp_box[0] >= self.clamp_box[1]:
            raise ParameterError("clamp_box must satisfy lo < hi")


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    budget: float

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=np.float64)
        if np.max(np.abs(delta), initial=0.0) > self.budget + BUDGET_SLACK:
            raise ParameterError("perturbation exceeds its L-inf budget")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)


def sign(v: np.ndarray) -> np.ndarray:
    """np.sign with the convention sign(0) = 0 (zero-gradient coordinates inert)."""
    return np.sign(v)


def sigmoid(u):
    return 1.0 / (1.0 + np.exp(-np.asarray(u, dtype=np.float64)))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())  # max-logit subtraction for stability
    return e / e.sum()


class DifferentiableClassifier:
    """Anything with logits and an input Jacobian; the common attack surface.

    `logits_fn(x)` returns a scalar (binary, sign decides) or a length-k
    vector (argmax decides); `jacobian_fn(x)` returns the matching (d,) or
    (d, k) input gradient.
    """

    def __init__(self, logits_fn, jacobian_fn, num_classes: int):
        if num_classes < 2:
            raise ParameterError("classifier needs at least 2 classes")
        self.logits_fn = logits_fn
        self.jacobian_fn = jacobian_fn
        self.num_classes = num_classes

    @property
    def binary(self) -> bool:
        return self.num_classes == 2

    def predict_class(self, x: np.ndarray) -> int:
        out = self.logits_fn(x)
        if np.ndim(out) == 0:
            return int(out > 0)
        return int(np.argmax(out))

    def loss(self, x: np.ndarray, label: int) -> float:
        """Cross-entropy with sigmoid (binary) or softmax (multiclass) link."""
        out = self.logits_fn(x)
        if np.ndim(out) == 0:
            y = 2 * label - 1
            return float(np.logaddexp(0.0, -y * out))
        z = np.asarray(out, dtype=np.float64)
        return float(np.logaddexp.reduce(z - z.max()) + z.max() - z[label])

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        out = self.logits_fn(x)
        jac = self.jacobian_fn(x)
        if np.ndim(out) == 0:
            return (sigmoid(out) - label) * jac
        residual = softmax(out)
        residual[label] -= 1.0
        return jac @ residual


def kernel_classifier(p: Predictor, t: float = INF_TIME) -> DifferentiableClassifier:
    """Attack surface of a kernel predictor evaluated at training time t."""
    num = 2 if p.is_binary else p.num_outputs
    return DifferentiableClassifier(
        lambda x: regression.predict_at_time(p, x, t),
        lambda x: regression.prediction_input_gradient(p, x, t),
        num)


def _project(delta, x0, epsilon, clamp_box):
    delta = np.clip(delta, -epsilon, epsilon)
    if clamp_box is not None:
        lo, hi = clamp_box
        delta = np.clip(x0 + delta, lo, hi) - x0
    return delta


def fgsm_kernel_binary(p: Predictor, x: np.ndarray, y: int, t: float,
                       epsilon: float) -> Perturbation:
    """One-step attack on a binary kernel predictor: -y*eps*sign(grad f_t)."""
    if not p.is_binary:
        raise ParameterError("binary attack needs a scalar-output predictor")
    grad = regression.prediction_input_gradient(p, x, t)
    return Perturbation(-y * epsilon * sign(grad), epsilon)


def fgsm_kernel_multiclass(p: Predictor, x: np.ndarray, y: int, t: float,
                           epsilon: float) -> Perturbation:
    """One-step softmax cross-entropy attack; per-class gradients share one
    kernel Jacobian."""
    if p.is_binary:
        raise ParameterError("multiclass attack needs one-hot labels")
    jac = regression.prediction_input_gradient(p, x, t)  # (d, k)
    probs = softmax(regression.predict_at_time(p, x, t))
    bracket = -jac[:, y] + jac @ probs
    return Perturbation(epsilon * sign(bracket), epsilon)


def pgd_attack(clf: DifferentiableClassifier, x: np.ndarray, label: int,
               cfg: AttackConfig) -> Perturbation:
    """Iterated sign-gradient ascent with projection; starts at x itself."""
    x = np.asarray(x, dtype=np.float64)
    alpha = cfg.epsilon if cfg.steps == 1 else cfg.step_size
    delta = np.zeros_like(x)
    for _ in range(cfg.steps):
        g = clf.loss_gradient(x + delta, label)
        delta = _project(delta + alpha * sign(g), x, cfg.epsilon, cfg.clamp_box)
    return Perturbation(delta, cfg.epsilon)


def pgd_kernel(p: Predictor, x: np.ndarray, y: int, t: float,
               cfg: AttackConfig) -> Perturbation:
    """PGD against a kernel predictor; y is ±1 for binary, class index otherwise."""
    label = (y + 1) // 2 if p.is_binary else y
    return pgd_attack(kernel_classifier(p, t), x, label, cfg)


# ---------------------------------------------------------------------------
# Taylor-expansion attacks on the converged predictor
# ---------------------------------------------------------------------------

def _taylor_z(p: Predictor, x: np.ndarray) -> np.ndarray:
    """z = A^T Theta^{-1} Y via direct solve when the Gram is available."""
    jac = ntk.cross_gradient(p.kernel, x, p.train_inputs)
    if p.gram is not None and p.retained is None:
        coeff = regression.solve_gram_direct(p.gram, p.labels)
    else:
        coeff = p.coefficients(INF_TIME)
    return jac.T @ coeff


def taylor_attack_binary(p: Predictor, x: np.ndarray, y: int,
                         epsilon: float) -> Perturbation:
    """eta = -eps*y*sign(A^T Theta^{-1} Y), the linearized optimal attack."""
    if not p.is_binary:
        raise ParameterError("binary attack needs a scalar-output predictor")
    return Perturbation(-epsilon * y * sign(_taylor_z(p, x)), epsilon)


def taylor_attack_max_l1(p: Predictor, x: np.ndarray, y: int,
                         epsilon: float) -> Perturbation:
    """Push toward the competing class maximizing ||z_r - z_y||_1 (ties: lowest
    class index); the linearized margin gain is eps times that norm."""
    if p.is_binary or p.num_outputs < 2:
        raise ParameterError("max-of-l1 attack needs k >= 2 one-hot outputs")
    z = _taylor_z(p, x)  # (d, k)
    diffs = z - z[:, [y]]
    norms = np.abs(diffs).sum(axis=0)
    norms[y] = -np.inf
    r = int(np.argmax(norms))
    return Perturbation(epsilon * sign(diffs[:, r]), epsilon)


def taylor_attack_sum_dz(p: Predictor, x: np.ndarray, y: int,
                         epsilon: float) -> Perturbation:
    """eta = eps*sign(sum_{r != y}(z_r - z_y)): maximally mixes the output."""
    if p.is_binary or p.num_outputs < 2:
        raise ParameterError("sum-of-dz attack needs k >= 2 one-hot outputs")
    z = _taylor_z(p, x)
    total = z.sum(axis=1) - p.num_outputs * z[:, y]
    return Perturbation(epsilon * sign(total), epsilon)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

ATTACK_NAMES = ("fgsm", "pgd", "taylor", "taylor_max_l1", "taylor_sum_dz")


def _as_classifier(model, t: float) -> DifferentiableClassifier:
    if isinstance(model, DifferentiableClassifier):
        return model
    if isinstance(model, Predictor):
        return kernel_classifier(model, t)
    raise ParameterError(f"cannot attack object of type {type(model).__name__}")


def _attack_delta(model, clf, x, label, attack, cfg, t):
    if attack == "fgsm":
        one_step = AttackConfig(cfg.epsilon, 1, None, cfg.clamp_box)
        return pgd_attack(clf, x, label, one_step).delta
    if attack == "pgd":
        return pgd_attack(clf, x, label, cfg).delta
    if not isinstance(model, Predictor):
        raise ParameterError("Taylor attacks need a kernel Predictor")
    y = 2 * label - 1 if model.is_binary else label
    fn = {"taylor": taylor_attack_binary,
          "taylor_max_l1": taylor_attack_max_l1,
          "taylor_sum_dz": taylor_attack_sum_dz}[attack]
    delta = fn(model, x, y, cfg.epsilon).delta
    return _project(delta, x, cfg.epsilon, cfg.clamp_box)


def robust_accuracy(model, ds: Dataset, attack: str, cfg: AttackConfig,
                    t: float = INF_TIME) -> float:
    """Fraction of examples still correctly classified after per-example attack."""
    if attack not in ATTACK_NAMES:
        raise ParameterError(f"unknown attack {attack!r}; "
                             f"choose from {ATTACK_NAMES}")
    if ds.n == 0:
        raise ParameterError("robust accuracy needs a nonempty dataset")
    clf = _as_classifier(model, t)
    correct = 0
    for x, label in zip(ds.inputs, ds.labels):
        delta = _attack_delta(model, clf, x, int(label), attack, cfg, t)
        if clf.predict_class(x + delta) == label:
            correct += 1
    return correct / ds.n


def clean_accuracy(model, ds: Dataset, t: float = INF_TIME) -> float:
    clf = _as_classifier(model, t)
    hits = sum(clf.predict_class(x) == label
               for x, label in zip(ds.inputs, ds.labels))
    return hits / ds.n


def attack_report(model, ds: Dataset, attack: str, cfg: AttackConfig,
                  t: float = INF_TIME) -> list[dict]:
    """Per-example records backing the CSV export."""
    clf = _as_classifier(model, t)
    rows = []
    for i, (x, label) in enumerate(zip(ds.inputs, ds.labels)):
        delta = _attack_delta(model, clf, x, int(label), attack, cfg, t)
        rows.append({
            "example_id": i,
            "clean_pred": clf.predict_class(x),
            "adv_pred": clf.predict_class(x + delta),
            "loss_clean": clf.loss(x, int(label)),
            "loss_adv": clf.loss(x + delta, int(label)),
            "linf_norm": float(np.max(np.abs(delta), initial=0.0)),
        })
    return rows


def save_attack_report(rows: list[dict], path) -> None:
    cols = ["example_id", "clean_pred", "adv_pred", "loss_clean", "loss_adv",
            "linf_norm"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(
                str(row[c]) if isinstance(row[c], int) else repr(float(row[c]))
                for c in cols) + "\n")
