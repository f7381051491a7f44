"""Finite-width nets, standard/adversarial training, and empirical NTKs.

Two trainable architectures share one protocol (forward, weight gradients,
input gradients, exact empirical NTK):

* ``FiniteNet``: f(x) = (1/sqrt(m)) A^T relu(W x), the ±1 head A frozen at
  initialization and W ~ N(0, 0.01^2) trained. Its infinite-width NTK is the
  analytical two-layer kernel, which makes it the vehicle for the
  kernel-to-net transfer experiments.
* ``MLPNet``: a small He-initialized ReLU MLP with every layer trained, used
  for the kernel-dynamics experiments where the NTK is supposed to move.

Training minimizes the mean squared error L = ||f(X) - Y||^2 / (2n) by plain
(full-batch or minibatch) gradient descent; adversarial modes regenerate the
perturbations from the current weights at every step and evaluate the same
loss at the attacked inputs. ``LinearizedNet`` freezes the weight Jacobian at
a chosen point and continues training the resulting linear model, whose
empirical NTK is constant by construction.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .attacks import (
    AttackConfig,
    DifferentiableClassifier,
    kernel_classifier,
    pgd_attack,
)
from .datasets import Dataset, label_matrix
from .errors import DivergenceError, DataFormatError, ParameterError

NET_MAGIC = b"NTKW"
DIVERGENCE_FACTOR = 1e6


class TrainMode(enum.Enum):
    STANDARD = "standard"
    ADV_FGSM = "adv_fgsm"
    ADV_PGD = "adv_pgd"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 100
    mode: TrainMode = TrainMode.STANDARD
    attack: AttackConfig | None = None
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    checkpoint_epochs: tuple[int, ...] = ()
    robust_eval_every: int = 0  # 0 disables robust-accuracy tracking

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be nonnegative")
        if self.epochs < 0:
            raise ParameterError("epochs must be nonnegative")
        if self.mode is not TrainMode.STANDARD and self.attack is None:
            raise ParameterError(f"{self.mode.value} training needs an attack "
                                 "config")
        if self.batch_size is not None and self.batch_size < 1:
            raise ParameterError("batch_size must be positive")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    robust_val_acc: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    checkpoints: dict[int, list[np.ndarray]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


class FiniteNet:
    """Two-layer ReLU net with a frozen ±1 head; only W is trainable."""

    def __init__(self, W: np.ndarray, A: np.ndarray):
        W = np.array(W, dtype=np.float64)
        A = np.asarray(A, dtype=np.float64)
        if W.ndim != 2 or A.ndim != 2 or A.shape[0] != W.shape[0]:
            raise ParameterError("W must be (m, d) and A (m, k)")
        if not np.all(np.abs(A) == 1.0):
            raise ParameterError("head entries must be ±1")
        self.W = W
        self._A = A
        self._A.setflags(write=False)
        self.epochs_trained = 0

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def num_outputs(self) -> int:
        return self._A.shape[1]

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.width)

    @property
    def weights(self) -> list[np.ndarray]:
        return [self.W]

    def set_weights(self, weights: list[np.ndarray]) -> None:
        (w,) = weights
        if w.shape != self.W.shape:
            raise ParameterError("weight shape mismatch")
        self.W = np.array(w, dtype=np.float64)

    def copy(self) -> "FiniteNet":
        out = FiniteNet(self.W.copy(), self._A)
        out.epochs_trained = self.epochs_trained
        return out

    def forward(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.maximum(X @ self.W.T, 0.0) @ self._A * self.scale

    def weight_gradients(self, X: np.ndarray, Y: np.ndarray) -> list[np.ndarray]:
        """Gradient of ||f(X) - Y||^2 / (2n) with respect to W."""
        X = np.atleast_2d(X)
        n = X.shape[0]
        pre = X @ self.W.T
        resid = (np.maximum(pre, 0.0) @ self._A * self.scale - Y) / n
        back = (resid @ self._A.T) * (pre > 0) * self.scale  # (n, m)
        return [back.T @ X]

    def input_jacobian(self, x: np.ndarray) -> np.ndarray:
        """(d, k) Jacobian of the outputs at a single input."""
        mask = (self.W @ x > 0).astype(np.float64)
        return self.W.T @ (mask[:, None] * self._A) * self.scale

    def input_loss_gradient_l2(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Per-example input gradient of the squared-error training loss."""
        X = np.atleast_2d(X)
        pre = X @ self.W.T
        resid = np.maximum(pre, 0.0) @ self._A * self.scale - Y
        return ((resid @ self._A.T) * (pre > 0) * self.scale) @ self.W

    def empirical_ntk(self, X: np.ndarray) -> np.ndarray:
        """Exact Jacobian Gram over W, traced over the k outputs."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        mask = (X @ self.W.T > 0).astype(np.float64)
        return (mask @ mask.T) * (X @ X.T) * (self.num_outputs / self.width)


def init_net(m: int, d: int, k: int, seed: int) -> FiniteNet:
    """W ~ N(0, 0.01^2), head i.i.d. uniform ±1; deterministic per seed."""
    if min(m, d, k) < 1:
        raise ParameterError("width, input dim and outputs must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 0.01, size=(m, d))
    A = (2 * rng.integers(0, 2, size=(m, k)) - 1).astype(np.float64)
    return FiniteNet(W, A)


class MLPNet:
    """ReLU MLP with all layers trainable (standard He parameterization)."""

    def __init__(self, layers: list[np.ndarray]):
        if len(layers) < 2:
            raise ParameterError("MLP needs at least one hidden layer")
        self.layers = [np.array(w, dtype=np.float64) for w in layers]
        for a, b in zip(self.layers, self.layers[1:]):
            if b.shape[1] != a.shape[0]:
                raise ParameterError("layer shapes do not chain")
        self.epochs_trained = 0

    @classmethod
    def create(cls, d: int, hidden: tuple[int, ...], k: int,
               seed: int) -> "MLPNet":
        rng = np.random.default_rng(seed)
        sizes = [d, *hidden]
        layers = [rng.normal(0.0, np.sqrt(2.0 / sizes[i]),
                             size=(sizes[i + 1], sizes[i]))
                  for i in range(len(hidden))]
        layers.append(rng.normal(0.0, np.sqrt(1.0 / sizes[-1]),
                                 size=(k, sizes[-1])))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def num_outputs(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def weights(self) -> list[np.ndarray]:
        return self.layers

    def set_weights(self, weights: list[np.ndarray]) -> None:
        if len(weights) != len(self.layers):
            raise ParameterError("layer count mismatch")
        self.layers = [np.array(w, dtype=np.float64) for w in weights]

    def copy(self) -> "MLPNet":
        out = MLPNet([w.copy() for w in self.layers])
        out.epochs_trained = self.epochs_trained
        return out

    def _forward_full(self, X: np.ndarray):
        """Activations Z_0..Z_H and hidden masks, batch-first."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        acts, masks = [X], []
        for w in self.layers[:-1]:
            pre = acts[-1] @ w.T
            masks.append(pre > 0)
            acts.append(np.maximum(pre, 0.0))
        out = acts[-1] @ self.layers[-1].T
        return acts, masks, out

    def forward(self, X: np.ndarray) -> np.ndarray:
        return self._forward_full(X)[2]

    def _deltas(self, masks, out_grad: np.ndarray) -> list[np.ndarray]:
        """Backprop per-layer hidden gradients for a given (n, k_sel) seed."""
        deltas = [None] * (len(self.layers) - 1)
        down = out_grad  # gradient w.r.t. the final activations' outputs
        for l in range(len(self.layers) - 1, 0, -1):
            down = (down @ self.layers[l]) * masks[l - 1]
            deltas[l - 1] = down
        return deltas

    def weight_gradients(self, X: np.ndarray, Y: np.ndarray) -> list[np.ndarray]:
        acts, masks, out = self._forward_full(X)
        n = acts[0].shape[0]
        resid = (out - Y) / n
        grads = [None] * len(self.layers)
        grads[-1] = resid.T @ acts[-1]
        down = resid
        for l in range(len(self.layers) - 1, 0, -1):
            down = (down @ self.layers[l]) * masks[l - 1]
            grads[l - 1] = down.T @ acts[l - 1]
        return grads

    def input_jacobian(self, x: np.ndarray) -> np.ndarray:
        acts, masks, _ = self._forward_full(x[None, :])
        jac = self.layers[0] * masks[0][0][:, None]  # (m1, d)
        for l in range(1, len(self.layers) - 1):
            jac = (self.layers[l] @ jac) * masks[l][0][:, None]
        return (self.layers[-1] @ jac).T

    def input_loss_gradient_l2(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        acts, masks, out = self._forward_full(X)
        down = out - Y
        for l in range(len(self.layers) - 1, 0, -1):
            down = (down @ self.layers[l]) * masks[l - 1]
        return down @ self.layers[0]

    def empirical_ntk(self, X: np.ndarray) -> np.ndarray:
        """Sum over layers and outputs of activation/backprop Gram products."""
        acts, masks, _ = self._forward_full(X)
        n = acts[0].shape[0]
        theta = np.zeros((n, n))
        act_grams = [Z @ Z.T for Z in acts]
        for o in range(self.num_outputs):
            out_grad = np.zeros((n, self.num_outputs))
            out_grad[:, o] = 1.0
            deltas = self._deltas(masks, out_grad)
            theta += act_grams[-1]  # row o of the output layer
            for l, dl in enumerate(deltas):
                theta += (dl @ dl.T) * act_grams[l]
        return theta


class LinearizedNet:
    """First-order weight expansion of a base net, frozen at linearization.

    The model is g(x; w) = f(x; w0) + J(x; w0)^T (w - w0); its weight Jacobian
    (hence its empirical NTK) no longer depends on w, while forward values,
    training gradients and input gradients all track the current weights.
    """

    def __init__(self, base):
        self._base = base.copy()  # frozen expansion point
        self._current = [w.copy() for w in base.weights]
        self.epochs_trained = base.epochs_trained

    @property
    def base(self):
        return self._base

    @property
    def input_dim(self) -> int:
        return self._base.input_dim

    @property
    def num_outputs(self) -> int:
        return self._base.num_outputs

    @property
    def weights(self) -> list[np.ndarray]:
        return self._current

    def set_weights(self, weights: list[np.ndarray]) -> None:
        self._current = [np.array(w, dtype=np.float64) for w in weights]

    def copy(self) -> "LinearizedNet":
        out = LinearizedNet(self._base)
        out.set_weights(self._current)
        out.epochs_trained = self.epochs_trained
        return out

    def _shifted(self):
        shifted = self._base.copy()
        shifted.set_weights(self._current)
        return shifted

    def forward(self, X: np.ndarray) -> np.ndarray:
        if isinstance(self._base, FiniteNet):
            # Masked forward is exactly linear in W for the frozen-head net.
            X = np.atleast_2d(np.asarray(X, dtype=np.float64))
            mask = (X @ self._base.W.T > 0)
            return ((X @ self._current[0].T) * mask) @ self._base.A \
                * self._base.scale
        return self._mlp_forward(X)

    def _mlp_forward(self, X: np.ndarray) -> np.ndarray:
        base = self._base
        acts, masks, out0 = base._forward_full(X)
        n = acts[0].shape[0]
        out = out0.copy()
        deltas_w = [c - w0 for c, w0 in zip(self._current, base.weights)]
        out += acts[-1] @ deltas_w[-1].T
        for o in range(base.num_outputs):
            out_grad = np.zeros((n, base.num_outputs))
            out_grad[:, o] = 1.0
            deltas = base._deltas(masks, out_grad)
            for l, dl in enumerate(deltas):
                out[:, o] += np.sum(dl * (acts[l] @ deltas_w[l].T), axis=1)
        return out

    def weight_gradients(self, X: np.ndarray, Y: np.ndarray) -> list[np.ndarray]:
        base = self._base
        if isinstance(base, FiniteNet):
            X = np.atleast_2d(X)
            n = X.shape[0]
            resid = (self.forward(X) - Y) / n
            mask = X @ base.W.T > 0
            back = (resid @ base.A.T) * mask * base.scale
            return [back.T @ X]
        acts, masks, _ = base._forward_full(X)
        n = acts[0].shape[0]
        resid = (self._mlp_forward(X) - Y) / n
        grads = [None] * len(base.layers)
        grads[-1] = resid.T @ acts[-1]
        down = resid
        for l in range(len(base.layers) - 1, 0, -1):
            down = (down @ base.layers[l]) * masks[l - 1]
            grads[l - 1] = down.T @ acts[l - 1]
        return grads

    def input_jacobian(self, x: np.ndarray) -> np.ndarray:
        base = self._base
        if isinstance(base, FiniteNet):
            mask = (base.W @ x > 0).astype(np.float64)
            return self._current[0].T @ (mask[:, None] * base.A) * base.scale
        return self._mlp_input_jacobian(x)

    def _mlp_input_jacobian(self, x: np.ndarray) -> np.ndarray:
        base = self._base
        acts, masks, _ = base._forward_full(x[None, :])
        deltas_w = [c - w0 for c, w0 in zip(self._current, base.weights)]
        # P_l = dz_l/dx under frozen activation patterns.
        paths = [np.eye(base.input_dim)]
        for l in range(len(base.layers) - 1):
            paths.append((base.layers[l] * masks[l][0][:, None]) @ paths[-1])
        jac = (base.layers[-1] @ paths[-1]).T  # gradient of f(x; w0)
        jac += (deltas_w[-1] @ paths[-1]).T
        for o in range(base.num_outputs):
            out_grad = np.zeros((1, base.num_outputs))
            out_grad[0, o] = 1.0
            deltas = base._deltas(masks, out_grad)
            for l, dl in enumerate(deltas):
                jac[:, o] += paths[l].T @ (deltas_w[l].T @ dl[0])
        return jac

    def input_loss_gradient_l2(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        resid = self.forward(X) - Y
        return np.vstack([self.input_jacobian(x) @ r
                          for x, r in zip(X, resid)])

    def empirical_ntk(self, X: np.ndarray) -> np.ndarray:
        return self._base.empirical_ntk(X)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def training_targets(net, ds: Dataset) -> np.ndarray:
    """(n, k) regression targets: a ±1 column for binary, one-hot otherwise."""
    Y = label_matrix(ds)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] != net.num_outputs:
        raise ParameterError(f"net has {net.num_outputs} outputs but labels "
                             f"need {Y.shape[1]}")
    return Y


def l2_loss(net, X: np.ndarray, Y: np.ndarray) -> float:
    resid = net.forward(X) - Y
    return float(np.sum(resid * resid)) / (2 * X.shape[0])


def _accuracy(net, ds: Dataset) -> float:
    out = net.forward(ds.inputs)
    pred = (out[:, 0] > 0).astype(int) if net.num_outputs == 1 \
        else np.argmax(out, axis=1)
    return float(np.mean(pred == ds.labels))


def training_attack_delta(net, X: np.ndarray, Y: np.ndarray,
                          cfg: AttackConfig, steps: int) -> np.ndarray:
    """Sign-gradient ascent on the l2 training loss, projected per step."""
    X = np.atleast_2d(X)
    delta = np.zeros_like(X)
    alpha = cfg.epsilon if steps == 1 else cfg.step_size
    for _ in range(steps):
        g = net.input_loss_gradient_l2(X + delta, Y)
        delta = np.clip(delta + alpha * np.sign(g), -cfg.epsilon, cfg.epsilon)
        if cfg.clamp_box is not None:
            lo, hi = cfg.clamp_box
            delta = np.clip(X + delta, lo, hi) - X
    return delta


def _batches(n: int, batch_size: int | None, rng: np.random.Generator):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(net, ds: Dataset, cfg: TrainConfig,
          val: Dataset | None = None) -> TrainTrace:
    """Gradient descent on the (possibly attacked) mean squared error.

    Mutates `net` in place and returns one record per epoch; checkpoints store
    copies of the trainable weights keyed by epochs completed (0 = init).
    """
    Y = training_targets(net, ds)
    rng = np.random.default_rng(cfg.seed)
    trace = TrainTrace()
    if 0 in cfg.checkpoint_epochs:
        trace.checkpoints[0] = [w.copy() for w in net.weights]
    initial_loss = max(l2_loss(net, ds.inputs, Y), 1e-30)
    attack_steps = 0
    if cfg.mode is TrainMode.ADV_FGSM:
        attack_steps = 1
    elif cfg.mode is TrainMode.ADV_PGD:
        attack_steps = cfg.attack.steps
    for epoch in range(1, cfg.epochs + 1):
        epoch_losses = []
        for idx in _batches(ds.n, cfg.batch_size, rng):
            Xb, Yb = ds.inputs[idx], Y[idx]
            if attack_steps:
                delta = training_attack_delta(net, Xb, Yb, cfg.attack,
                                              attack_steps)
                Xb = Xb + delta
            epoch_losses.append(l2_loss(net, Xb, Yb))
            grads = net.weight_gradients(Xb, Yb)
            net.set_weights([w - cfg.learning_rate * g
                             for w, g in zip(net.weights, grads)])
        loss = float(np.mean(epoch_losses))
        if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * initial_loss:
            err = DivergenceError(f"training diverged at epoch {epoch}: "
                                  f"loss {loss:.3e}", epoch=epoch)
            err.trace = trace  # partial results remain usable by the caller
            raise err
        net.epochs_trained += 1
        robust = float("nan")
        if cfg.robust_eval_every and val is not None \
                and epoch % cfg.robust_eval_every == 0 and cfg.attack:
            robust = robust_accuracy_net(net, val, cfg.attack)
        trace.records.append(EpochRecord(
            epoch, loss, _accuracy(net, ds),
            _accuracy(net, val) if val is not None else float("nan"), robust))
        if epoch in cfg.checkpoint_epochs:
            trace.checkpoints[epoch] = [w.copy() for w in net.weights]
    return trace


def linearize_and_continue(net, ds: Dataset, cfg: TrainConfig,
                           val: Dataset | None = None
                           ) -> tuple[LinearizedNet, TrainTrace]:
    """Freeze the weight Jacobian at the net's current state, then keep
    training (and attacking) the resulting linear model."""
    lin = LinearizedNet(net)
    trace = train(lin, ds, cfg, val)
    return lin, trace


# ---------------------------------------------------------------------------
# Transfer measurements
# ---------------------------------------------------------------------------

def centered_prediction(net, net_init, X: np.ndarray) -> np.ndarray:
    """f(x; W) - f(x; W_init) for nets sharing architecture and head."""
    _check_same_architecture(net, net_init)
    return net.forward(X) - net_init.forward(X)


def _check_same_architecture(net, net_init) -> None:
    if type(net) is not type(net_init):
        raise ParameterError("centered prediction needs same net class")
    if isinstance(net, FiniteNet):
        if net.A.shape != net_init.A.shape or not np.array_equal(net.A,
                                                                 net_init.A):
            raise ParameterError("nets do not share the frozen head")
    shapes = [w.shape for w in net.weights]
    if shapes != [w.shape for w in net_init.weights]:
        raise ParameterError("weight shapes differ")


def net_classifier(net, net_init=None) -> DifferentiableClassifier:
    """Attack/evaluation surface; centered when an init net is supplied."""
    if net_init is not None:
        _check_same_architecture(net, net_init)
    k = net.num_outputs

    def logits(x):
        out = net.forward(x[None, :])[0]
        if net_init is not None:
            out = out - net_init.forward(x[None, :])[0]
        return float(out[0]) if k == 1 else out

    def jacobian(x):
        jac = net.input_jacobian(x)
        if net_init is not None:
            jac = jac - net_init.input_jacobian(x)
        return jac[:, 0] if k == 1 else jac

    return DifferentiableClassifier(logits, jacobian, 2 if k == 1 else k)


def robust_accuracy_net(net, ds: Dataset, cfg: AttackConfig,
                        net_init=None) -> float:
    """Accuracy under the net's own cross-entropy FGSM/PGD attack."""
    clf = net_classifier(net, net_init)
    hits = 0
    for x, label in zip(ds.inputs, ds.labels):
        delta = pgd_attack(clf, x, int(label), cfg).delta
        hits += clf.predict_class(x + delta) == label
    return hits / ds.n


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two gradient vectors; NaN when either has zero norm."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return float("nan")
    return float(a @ b / (na * nb))


def gradient_cosine_similarity(net, net_init, pred, ds: Dataset,
                               epoch_to_time: float = 1.0) -> np.ndarray:
    """Per-example cosine between the centered net's input loss gradient and
    the kernel predictor's at t = epoch_to_time * epochs trained.

    Zero-norm gradients yield NaN entries (excluded from any mean).
    """
    if epoch_to_time <= 0:
        raise ParameterError("epoch_to_time must be positive")
    t = epoch_to_time * net.epochs_trained
    net_clf = net_classifier(net, net_init)
    ker_clf = kernel_classifier(pred, t)
    out = np.full(ds.n, np.nan)
    for i, (x, label) in enumerate(zip(ds.inputs, ds.labels)):
        out[i] = cosine_similarity(net_clf.loss_gradient(x, int(label)),
                                   ker_clf.loss_gradient(x, int(label)))
    return out


def empirical_ntk(net, X: np.ndarray) -> np.ndarray:
    """Module-level alias matching the net protocol."""
    return net.empirical_ntk(X)


# ---------------------------------------------------------------------------
# Serialization and trace export
# ---------------------------------------------------------------------------

def save_checkpoint(net: FiniteNet, path) -> None:
    """Binary: magic NTKW, u32 m/d/k, row-major f64 LE W, i8 head."""
    if not isinstance(net, FiniteNet):
        raise ParameterError("checkpoint format is defined for FiniteNet")
    m, d = net.W.shape
    k = net.num_outputs
    with open(path, "wb") as f:
        f.write(NET_MAGIC)
        f.write(struct.pack("<III", m, d, k))
        f.write(net.W.astype("<f8").tobytes())
        f.write(net.A.astype(np.int8).tobytes())


def load_checkpoint(path) -> FiniteNet:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != NET_MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r}")
    m, d, k = struct.unpack("<III", raw[4:16])
    need = 16 + 8 * m * d + m * k
    if len(raw) < need:
        raise DataFormatError(f"{path}: expected {need} bytes, got {len(raw)}")
    W = np.frombuffer(raw[16:16 + 8 * m * d], dtype="<f8").reshape(m, d)
    A = np.frombuffer(raw[16 + 8 * m * d:need], dtype=np.int8).reshape(m, k)
    return FiniteNet(W.copy(), A.astype(np.float64))


def save_trace(trace: TrainTrace, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,loss,train_acc,val_acc,robust_val_acc\n")
        for r in trace.records:
            f.write(f"{r.epoch},{r.loss!r},{r.train_acc!r},{r.val_acc!r},"
                    f"{r.robust_val_acc!r}\n")
